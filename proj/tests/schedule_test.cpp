#include <catch_amalgamated.hpp>

#include <cmath>

#include "yofo/rng.hpp"
#include "yofo/schedule.hpp"

using namespace yofo;

TEST_CASE("decay boundary is pinned to the target exactly") {
    for (auto mode : {DecayMode::cliff, DecayMode::linear, DecayMode::exponential,
                      DecayMode::logarithmic}) {
        auto lc = make_length_config(3, 4, 0.2, mode, 12);
        CHECK(lc.levels[3 + 4 - 1] == 0.2);  // l_{k+d} == s, forced
        for (size_t i = 3 + 4; i < 12; ++i) CHECK(lc.levels[i] == 0.2);
        for (size_t i = 0; i < 3; ++i) CHECK(lc.levels[i] == 1.0);
    }
}

TEST_CASE("linear decay hand values") {
    auto lc = make_length_config(3, 3, 0.1, DecayMode::linear, 6);
    CHECK(lc.levels[3] == Catch::Approx(0.7).epsilon(1e-12));  // l_4
    CHECK(lc.levels[4] == Catch::Approx(0.4).epsilon(1e-12));  // l_5
    CHECK(lc.levels[5] == 0.1);                                // l_6, boundary forced
}

TEST_CASE("logarithmic decay matches its closed form") {
    auto lc = make_length_config(0, 2, 0.1, DecayMode::logarithmic, 2);
    const double expect = std::log((std::exp(0.1) * 1.0 + std::exp(1.0) * 1.0) / 2.0);
    CHECK(std::abs(lc.levels[0] - expect) < 1e-12);
    CHECK(lc.levels[0] == Catch::Approx(0.648).margin(2e-3));
    CHECK(lc.levels[1] == 0.1);
}

TEST_CASE("exponential decay hand value") {
    auto lc = make_length_config(0, 2, 0.25, DecayMode::exponential, 2);
    CHECK(lc.levels[0] == Catch::Approx(0.5).epsilon(1e-12));  // 0.25^(1/2)
    CHECK(lc.levels[1] == 0.25);
}

TEST_CASE("cliff drops straight to the target after the gathering layers") {
    auto lc = make_length_config(2, 0, 0.15, DecayMode::cliff, 4);
    CHECK(lc.levels == std::vector<double>{1.0, 1.0, 0.15, 0.15});
    // k == N degenerates to no sparsity control at all
    auto full = make_length_config(4, 0, 0.15, DecayMode::cliff, 4);
    CHECK(full.levels == std::vector<double>{1.0, 1.0, 1.0, 1.0});
}

TEST_CASE("levels are monotone non-increasing for every mode and valid shape") {
    Rng rng(99);
    for (int trial = 0; trial < 400; ++trial) {
        const size_t n = 1 + rng.below(12);
        const size_t k = rng.below(n + 1);
        const size_t d = rng.below(n - k + 1);
        const double s = rng.uniform();
        for (auto mode : {DecayMode::cliff, DecayMode::linear, DecayMode::exponential,
                          DecayMode::logarithmic}) {
            auto lc = make_length_config(k, d, s, mode, n);
            REQUIRE(lc.levels.size() == n);
            for (size_t i = 0; i < n; ++i) {
                if (i + 1 <= k) CHECK(lc.levels[i] == 1.0);
                if (i + 1 >= k + d && (mode == DecayMode::cliff ? i + 1 > k : true)) {
                    if (i + 1 > k) CHECK(lc.levels[i] == s);
                }
                if (i > 0) CHECK(lc.levels[i] <= lc.levels[i - 1] + 1e-12);
            }
        }
    }
}

TEST_CASE("length configuration rejects out-of-range parameters") {
    CHECK_THROWS_AS(make_length_config(5, 0, 0.5, DecayMode::cliff, 4), ConfigError);
    CHECK_THROWS_AS(make_length_config(2, 3, 0.5, DecayMode::cliff, 4), ConfigError);
    CHECK_THROWS_AS(make_length_config(1, 1, -0.1, DecayMode::cliff, 4), ConfigError);
    CHECK_THROWS_AS(make_length_config(1, 1, 1.1, DecayMode::cliff, 4), ConfigError);
    CHECK_THROWS_AS(decay_mode_from("triangular"), ConfigError);
}
