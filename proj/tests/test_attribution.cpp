#include "bmmal/attribution.h"
#include "bmmal/error.h"

#include "helpers.h"
#include "oracles.h"

#include <doctest.h>

#include <cmath>

using namespace bmmal;

namespace {

// Outcome table indexed by mask: none, m1, m2, both.
OutcomeFn table(const std::array<double, 4>& v) {
    return [v](std::uint32_t s) { return v[s]; };
}

} // namespace

TEST_CASE("model_outcome masking") {
    Rng rng(1);
    auto m = testing::random_model(rng, {4, 3, 0, 0, 5}, Fusion::Concat);
    auto s = testing::random_sample(rng, 4, 3);
    auto fwd = forward(m, s);
    CHECK(model_outcome(m, s, kMaskBoth, fwd.pseudo_label) == fwd.p_mm[fwd.pseudo_label]);

    auto zero_bias = m;
    zero_bias.head_mm.bias.setZero();
    CHECK(model_outcome(zero_bias, s, kMaskNone, 2) == doctest::Approx(0.2).epsilon(1e-12));

    // Modality-2 block of the fused head zeroed: masking m2 changes nothing.
    auto null_m2 = m;
    null_m2.head_mm.weight.rightCols(3).setZero();
    for (unsigned mask : {kMaskNone, kMaskM1})
        CHECK(model_outcome(null_m2, s, mask | kMaskM2, 1) == model_outcome(null_m2, s, mask, 1));

    CHECK_THROWS_AS(model_outcome(m, s, kMaskBoth, 5), ConfigError);
}

TEST_CASE("shapley_exact reference values") {
    const std::array<double, 4> v{0.25, 0.7, 0.5, 0.9};
    auto phi = shapley_exact(table(v), 2);
    auto ref = oracle::shapley_by_permutation(table(v), 2);
    CHECK(phi[0] == doctest::Approx(ref[0]).epsilon(1e-15));
    CHECK(phi[1] == doctest::Approx(ref[1]).epsilon(1e-15));
    CHECK(phi[0] == doctest::Approx(0.425).epsilon(1e-12));
    CHECK(phi[1] == doctest::Approx(0.225).epsilon(1e-12));

    auto sym = shapley_exact(table({0.0, 0.5, 0.5, 1.0}), 2);
    CHECK(sym[0] == doctest::Approx(0.5));
    CHECK(sym[1] == doctest::Approx(0.5));

    CHECK_THROWS_AS(shapley_exact(table(v), 0), ConfigError);
    CHECK_THROWS_AS(shapley_exact([](std::uint32_t) { return 0.0; }, 21), ConfigError);
}

TEST_CASE("shapley_exact matches the permutation oracle and satisfies the axioms") {
    Rng rng(99);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int players : {1, 2, 3, 4, 5}) {
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<double> values(1u << players);
            for (auto& x : values) x = u(rng);
            OutcomeFn f = [&](std::uint32_t s) { return values[s]; };
            auto phi = shapley_exact(f, players);
            auto ref = oracle::shapley_by_permutation(f, players);
            double sum = 0.0;
            for (int i = 0; i < players; ++i) {
                CHECK(std::abs(phi[static_cast<std::size_t>(i)] - ref[static_cast<std::size_t>(i)]) <= 1e-12);
                sum += phi[static_cast<std::size_t>(i)];
            }
            // Efficiency.
            CHECK(std::abs(sum - (values.back() - values.front())) <= 1e-9);

            // Symmetry: swapping players 0 and 1 in the game swaps their values.
            if (players >= 2) {
                OutcomeFn swapped = [&](std::uint32_t s) {
                    const std::uint32_t b0 = s & 1u, b1 = (s >> 1) & 1u;
                    return values[(s & ~3u) | (b0 << 1) | b1];
                };
                auto sw = shapley_exact(swapped, players);
                CHECK(std::abs(sw[0] - phi[1]) <= 1e-12);
                CHECK(std::abs(sw[1] - phi[0]) <= 1e-12);
            }

            // Null player: the last player never changes the value.
            OutcomeFn with_null = [&](std::uint32_t s) { return values[s & ~(1u << (players - 1))]; };
            CHECK(shapley_exact(with_null, players).back() == 0.0);
        }
    }
}

TEST_CASE("shapley_two equals the exact enumeration on model outcomes") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        auto m = testing::random_model(rng, {4, 6, trial % 3 == 0 ? 5 : 0, 0, 3}, Fusion::Concat);
        auto s = testing::random_sample(rng, 4, 6);
        auto fwd = forward(m, s);
        auto two = shapley_two(m, s);
        auto exact = shapley_exact([&](std::uint32_t mask) { return model_outcome(m, s, mask, fwd.pseudo_label); }, 2);
        CHECK(std::abs(two[0] - exact[0]) <= 1e-12);
        CHECK(std::abs(two[1] - exact[1]) <= 1e-12);
    }
    CHECK(shapley_two(std::array<double, 4>{0.25, 0.7, 0.5, 0.9})[0] == doctest::Approx(0.425));

    auto m = testing::random_model(rng, {4, 6, 0, 0, 3}, Fusion::Concat);
    m.head_mm.weight.rightCols(6).setZero();
    CHECK(shapley_two(m, testing::random_sample(rng, 4, 6))[1] == 0.0);
}

TEST_CASE("contribution, dominance and modulation weights") {
    const std::array<double, 2> phi{0.425, 0.225};
    auto c = contribution(phi);
    CHECK_FALSE(c.degenerate);
    CHECK(c.values[0] == doctest::Approx(0.425 / 0.65).epsilon(1e-12));
    CHECK(c.values[0] == doctest::Approx(0.6538).epsilon(1e-4));
    CHECK(c.values[1] == doctest::Approx(0.3462).epsilon(1e-4));

    auto opposite = contribution(std::array<double, 2>{-0.3, 0.3});
    CHECK(opposite.values[0] == 0.5);
    CHECK(opposite.values[1] == 0.5);

    auto zero = contribution(std::array<double, 2>{0.0, 0.0});
    CHECK(zero.degenerate);
    CHECK(zero.values[0] == 0.5);

    CHECK(dominance(std::array<double, 2>{0.5, 0.5}) == 0.0);
    CHECK(dominance(std::array<double, 3>{1.0, 0.0, 0.0}) == 2.0);
    const double rho = dominance(c.values);
    CHECK(rho == doctest::Approx(0.2 / 0.65).epsilon(1e-12));
    CHECK(rho == doctest::Approx(0.3077).epsilon(1e-4));
    CHECK(rho == std::abs(c.values[0] - c.values[1]));

    auto w_bal = modulation_weights({0.5, 0.5});
    CHECK(w_bal[0] == 1.0);
    CHECK(w_bal[1] == 1.0);
    auto w_full = modulation_weights({1.0, 0.0});
    CHECK(w_full[0] == 1.0);
    CHECK(w_full[1] == 0.0);
    auto w = modulation_weights({c.values[0], c.values[1]});
    CHECK(w[0] == 1.0);
    CHECK(w[1] == doctest::Approx(1.0 - 0.2 / 0.65).epsilon(1e-12));
    CHECK(w[1] == doctest::Approx(0.6923).epsilon(1e-4));
    auto w_swap = modulation_weights({c.values[1], c.values[0]});
    CHECK(w_swap[0] == w[1]);
    CHECK(w_swap[1] == 1.0);
}

TEST_CASE("attribution invariants on random models") {
    Rng rng(55);
    for (int trial = 0; trial < 500; ++trial) {
        auto m = testing::random_model(rng, {3, 5, 0, 0, 4}, Fusion::Concat);
        auto a = attribute(m, testing::random_sample(rng, 3, 5));
        CHECK(std::abs(a.contribution[0] + a.contribution[1] - 1.0) <= 1e-9);
        CHECK(a.contribution[0] >= 0.0);
        CHECK(a.contribution[1] >= 0.0);
        CHECK(a.rho >= 0.0);
        CHECK(a.rho <= 1.0);
        CHECK(a.weights[static_cast<std::size_t>(a.dominant())] == 1.0);
        CHECK(a.weights[static_cast<std::size_t>(1 - a.dominant())] == doctest::Approx(1.0 - a.rho));
    }
}
