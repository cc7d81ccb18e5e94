#include <catch_amalgamated.hpp>

#include <cmath>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "yofo/rnp.hpp"
#include "yofo/yofo.hpp"

using namespace yofo;

namespace {

Tensor mask_tensor(std::vector<double> v) {
    const size_t n = v.size();
    return Tensor::from({n}, std::move(v));
}

}  // namespace

TEST_CASE("final-layer sparsity loss") {
    auto m = mask_tensor({1, 1, 1, 0, 0, 0, 0, 0, 0, 0});
    CHECK(sparsity_loss_final<double>(nullptr, m, 0.3).item() == Catch::Approx(0.0).margin(1e-15));
    CHECK(sparsity_loss_final<double>(nullptr, m, 0.5).item() == Catch::Approx(0.2).epsilon(1e-12));
    auto ones = mask_tensor(std::vector<double>(8, 1.0));
    CHECK(sparsity_loss_final<double>(nullptr, ones, 1.0).item() == 0.0);
}

TEST_CASE("layer-wise sparsity loss") {
    auto lc = make_length_config(1, 0, 0.1, DecayMode::cliff, 2);  // levels {1.0, 0.1}
    std::vector<Tensor> exact = {mask_tensor({1, 1, 1, 1, 1, 1, 1, 1, 1, 1}),
                                 mask_tensor({1, 0, 0, 0, 0, 0, 0, 0, 0, 0})};
    CHECK(sparsity_loss_layerwise<double>(nullptr, exact, lc).item() ==
          Catch::Approx(0.0).margin(1e-15));

    std::vector<Tensor> off = {mask_tensor({1, 1, 1, 1, 1, 1, 1, 1, 1, 1}),
                               mask_tensor({1, 1, 1, 1, 1, 0, 0, 0, 0, 0})};
    CHECK(sparsity_loss_layerwise<double>(nullptr, off, lc).item() ==
          Catch::Approx(0.2).epsilon(1e-12));

    // permutation of which tokens are kept cannot change the loss
    std::vector<Tensor> perm = {mask_tensor({1, 1, 1, 1, 1, 1, 1, 1, 1, 1}),
                                mask_tensor({0, 0, 1, 0, 1, 1, 0, 1, 1, 0})};
    std::vector<Tensor> perm2 = {mask_tensor({1, 1, 1, 1, 1, 1, 1, 1, 1, 1}),
                                 mask_tensor({1, 1, 0, 1, 0, 0, 1, 0, 0, 1})};
    CHECK(sparsity_loss_layerwise<double>(nullptr, perm, lc).item() ==
          sparsity_loss_layerwise<double>(nullptr, perm2, lc).item());

    auto lc3 = make_length_config(1, 0, 0.1, DecayMode::cliff, 3);
    CHECK_THROWS_AS(sparsity_loss_layerwise<double>(nullptr, exact, lc3), ContractError);
}

TEST_CASE("contiguity loss counts transitions") {
    std::vector<Tensor> ones = {mask_tensor({1, 1, 1, 1})};
    CHECK(contiguity_loss<double>(nullptr, ones).item() == 0.0);
    std::vector<Tensor> alt = {mask_tensor({1, 0, 1, 0})};
    CHECK(contiguity_loss<double>(nullptr, alt).item() == Catch::Approx(1.0).epsilon(1e-12));
    std::vector<Tensor> block = {mask_tensor({1, 1, 0, 0})};
    CHECK(contiguity_loss<double>(nullptr, block).item() ==
          Catch::Approx(1.0 / 3.0).epsilon(1e-12));

    // fragmenting a fixed-size kept set strictly increases the loss
    std::vector<Tensor> contiguous = {mask_tensor({0, 1, 1, 1, 0, 0, 0, 0})};
    std::vector<Tensor> fragmented = {mask_tensor({0, 1, 0, 1, 0, 1, 0, 0})};
    CHECK(contiguity_loss<double>(nullptr, fragmented).item() >
          contiguity_loss<double>(nullptr, contiguous).item());

    std::vector<Tensor> short_mask = {mask_tensor({1})};
    CHECK_THROWS_AS(contiguity_loss<double>(nullptr, short_mask), ShapeError);
}

TEST_CASE("overall loss combines the three terms") {
    auto task = Tensor::scalar(0.5);
    auto sp = Tensor::scalar(0.2);
    auto ct = Tensor::scalar(0.1);
    CHECK(total_loss<double>(nullptr, task, sp, ct, 0.0, 0.0).item() == 0.5);
    CHECK(total_loss<double>(nullptr, task, sp, ct, 1.0, 3.0).item() ==
          Catch::Approx(1.0).epsilon(1e-12));
    // larger beta never lowers the total while the sparsity term is positive
    double prev = 0.0;
    for (double beta : {0.3, 0.7, 1.0, 3.0, 7.0}) {
        const double v = total_loss<double>(nullptr, task, sp, ct, beta, 1.0).item();
        CHECK(v >= prev);
        prev = v;
    }
}

TEST_CASE("omega regularizer") {
    CHECK(omega_regularizer<double>(nullptr, mask_tensor({0, 0, 0, 0})).item() == 0.0);
    CHECK(omega_regularizer<double>(nullptr, mask_tensor({1, 1, 0, 0})).item() ==
          Catch::Approx(3.0).epsilon(1e-12));
    CHECK(omega_regularizer<double>(nullptr, mask_tensor({1, 0, 1, 0})).item() ==
          Catch::Approx(5.0).epsilon(1e-12));
    CHECK_THROWS_AS(omega_regularizer<double>(nullptr, mask_tensor({1})), ShapeError);
}

TEST_CASE("loss formulas match brute-force recomputation on random masks") {
    Rng rng(123);
    for (int trial = 0; trial < 1000; ++trial) {
        const size_t layers = 1 + rng.below(4);
        const size_t len = 2 + rng.below(30);
        std::vector<std::vector<double>> raw(layers);
        std::vector<Tensor> masks;
        for (auto& m : raw) {
            m.resize(len);
            for (auto& v : m) v = rng.bernoulli(0.5) ? rng.uniform() : (rng.bernoulli(0.5) ? 1.0 : 0.0);
            masks.push_back(mask_tensor(std::vector<double>(m)));
        }
        const double target = rng.uniform();
        auto lc = make_length_config(0, 0, target, DecayMode::cliff, layers);

        CHECK(std::abs(sparsity_loss_final<double>(nullptr, masks.back(), target).item() -
                       testsupport::oracle_sparsity_final(raw.back(), target)) < 1e-12);
        CHECK(std::abs(sparsity_loss_layerwise<double>(nullptr, masks, lc).item() -
                       testsupport::oracle_sparsity_layerwise(raw, lc.levels)) < 1e-12);
        CHECK(std::abs(contiguity_loss<double>(nullptr, masks).item() -
                       testsupport::oracle_contiguity(raw)) < 1e-12);
        const double ws = rng.uniform() * 2, wc = rng.uniform() * 2;
        CHECK(std::abs(omega_regularizer<double>(nullptr, masks[0], ws, wc).item() -
                       testsupport::oracle_omega(raw[0], ws, wc)) < 1e-12);
    }
}

TEST_CASE("sparsity and contiguity terms push gradients into gate parameters") {
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.width = 8;
    cfg.ff_width = 16;
    cfg.gate_width = 6;
    cfg.vocab_size = 16;
    cfg.max_len = 8;
    cfg.dropout = 0.0;
    Rng rng(7);
    YofoModelT<double> model;
    model.init(cfg, make_length_config(1, 0, 0.2, DecayMode::cliff, cfg.layers), rng);
    std::vector<int> ids = {0, 3, 5, 7, 2, 9};

    std::vector<Tensor> gate_params;
    for (const auto& g : model.gates) {
        gate_params.push_back(g.w1);
        gate_params.push_back(g.b1);
        gate_params.push_back(g.w2);
        gate_params.push_back(g.b2);
    }
    TrainConfig tc;
    tc.beta = 2.0;
    tc.gamma = 1.5;
    tc.seed = 5;

    auto build = [&](Tape* t) {
        Rng noise(42);
        auto step = yofo_train_forward(t, model, ids, 1, tc, noise, nullptr, false);
        return ops::add(t, step.sparsity, step.contiguity);
    };
    auto res = testsupport::grad_check(gate_params, build);
    CHECK(res.max_rel_err < 1e-4);

    // and the gradients are not identically zero
    for (auto& p : gate_params) p.zero_grad();
    Tape tape;
    auto loss = build(&tape);
    tape.backward(loss);
    double norm = 0.0;
    for (auto& p : gate_params) {
        p.ensure_grad();
        for (double g : p.grad()) norm += g * g;
    }
    CHECK(norm > 1e-12);
}
