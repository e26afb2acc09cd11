#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "gkam/series.hpp"

using namespace gkam;

namespace {

FourierTaylorSeries random_series(std::mt19937_64& rng, int n, int K, int dI,
                                  int terms = 6, double scale = 1.0) {
    FourierTaylorSeries f(n, K, dI);
    std::uniform_int_distribution<int> kd(-K, K);
    std::uniform_int_distribution<int> md(0, dI);
    std::uniform_real_distribution<double> cd(-scale, scale);
    for (int t = 0; t < terms; ++t) {
        std::vector<int> k(n), m(n, 0);
        int korder;
        do {
            for (int i = 0; i < n; ++i) k[i] = kd(rng);
            korder = multi_index_order(k);
        } while (korder > K);
        if (dI > 0) {
            int total = md(rng);
            for (int i = 0; i < n && total > 0; ++i) {
                std::uniform_int_distribution<int> part(0, total);
                m[i] = part(rng);
                total -= m[i];
            }
        }
        f.add_term(k, m, cd(rng), cd(rng));
    }
    return f;
}

// Numeric oracle for the directional average: composite Simpson over t.
double numeric_average(const FourierTaylorSeries& f, std::span<const double> v, long long q,
                       const TorusPoint& p) {
    const int N = 2048;
    double acc = 0.0;
    for (int i = 0; i <= N; ++i) {
        double t = static_cast<double>(i) / N;
        std::vector<double> th(p.theta);
        for (std::size_t d = 0; d < th.size(); ++d) th[d] += t * q * v[d];
        double w = (i == 0 || i == N) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
        acc += w * f.evaluate(TorusPoint(th, p.I));
    }
    return acc / (3.0 * N);
}

}  // namespace

TEST_CASE("add_scale identities") {
    std::mt19937_64 rng(11);
    auto f = random_series(rng, 2, 4, 1);
    auto g = random_series(rng, 2, 4, 1);

    auto same = add_scale(f, g, 1.0, 0.0);
    for (const auto& [key, amp] : f.terms()) {
        auto a = same.amplitude(key.k, key.m);
        CHECK(a.c == doctest::Approx(amp.c).epsilon(1e-15));
        CHECK(a.s == doctest::Approx(amp.s).epsilon(1e-15));
    }

    auto zero = add_scale(f, f, 1.0, -1.0);
    CHECK(zero.coefficient_mass() == 0.0);

    std::vector<int> k{1, 0}, m{0, 0};
    auto c1 = FourierTaylorSeries::mode(2, k, 1.0, 0.0);
    auto doubled = add_scale(c1, c1, 1.0, 1.0);
    CHECK(doubled.amplitude(k, m).c == doctest::Approx(2.0));
    CHECK(doubled.term_count() == 1);
}

TEST_CASE("add_scale dimension mismatch is structural") {
    auto f = FourierTaylorSeries::constant(2, 1.0);
    auto g = FourierTaylorSeries::constant(3, 1.0);
    CHECK_THROWS_AS(add_scale(f, g, 1.0, 1.0), structural_error);
}

TEST_CASE("multiply: unit, product-to-sum, and pointwise agreement") {
    std::vector<int> k{1, 0}, zero{0, 0}, k2{2, 0};
    auto cosx = FourierTaylorSeries::mode(2, k, 1.0, 0.0);
    auto one = FourierTaylorSeries::constant(2, 1.0);

    auto same = multiply(cosx, one);
    CHECK(same.amplitude(k, zero).c == doctest::Approx(1.0));
    CHECK(same.term_count() == 1);

    auto sq = multiply(cosx, cosx);
    CHECK(sq.amplitude(zero, zero).c == doctest::Approx(0.5));
    CHECK(sq.amplitude(k2, zero).c == doctest::Approx(0.5));
    CHECK(sq.amplitude(k2, zero).s == doctest::Approx(0.0));

    // (B(theta).I) * C(theta) against brute-force pointwise evaluation.
    std::mt19937_64 rng(5);
    auto B = random_series(rng, 2, 3, 1);
    auto C = random_series(rng, 2, 3, 0);
    auto prod = multiply(B, C);
    CHECK(prod.action_degree() == 1);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    for (int trial = 0; trial < 40; ++trial) {
        TorusPoint p({ud(rng), ud(rng)}, {2.0 * ud(rng) - 1.0, 2.0 * ud(rng) - 1.0});
        CHECK(prod.evaluate(p) ==
              doctest::Approx(B.evaluate(p) * C.evaluate(p)).epsilon(1e-12));
    }
}

TEST_CASE("multiply agrees with pointwise evaluation when K_out is not truncating") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    for (int trial = 0; trial < 25; ++trial) {
        auto f = random_series(rng, 2, 4, 1);
        auto g = random_series(rng, 2, 3, 1);
        auto h = multiply(f, g, f.truncation() + g.truncation(), 2);
        for (int pt = 0; pt < 8; ++pt) {
            TorusPoint p({ud(rng), ud(rng)}, {ud(rng), ud(rng)});
            double want = f.evaluate(p) * g.evaluate(p);
            CHECK(h.evaluate(p) == doctest::Approx(want).epsilon(1e-10));
        }
    }
}

TEST_CASE("multiply records discarded mass under truncation") {
    std::vector<int> k{1, 0};
    auto cosx = FourierTaylorSeries::mode(2, k, 1.0, 0.0);
    auto trunc = multiply(cosx, cosx, 1, 0);  // drops the (2,0) harmonic
    CHECK(trunc.discarded_mass() > 0.0);
    CHECK(trunc.amplitude(k, {0, 0}).c == doctest::Approx(0.0));
}

TEST_CASE("multiply action degree guard") {
    auto f = FourierTaylorSeries::linear_action(2, std::vector<double>{1.0, 0.0});
    auto q = multiply(f, f);  // degree 2: fine
    CHECK(q.action_degree() == 2);
    CHECK_THROWS_AS(multiply(q, f), structural_error);
    auto capped = multiply(q, f, 2, 2);  // explicit truncation allowed
    CHECK(capped.coefficient_mass() == 0.0);
    CHECK(capped.discarded_mass() > 0.0);
}

TEST_CASE("partial derivatives") {
    auto c = FourierTaylorSeries::constant(2, 3.0);
    CHECK(partial_derivative(c, Var::angle, 0).coefficient_mass() == 0.0);

    std::vector<int> k{1, 0}, zero{0, 0};
    auto cosx = FourierTaylorSeries::mode(2, k, 1.0, 0.0);
    auto d = partial_derivative(cosx, Var::angle, 0);
    CHECK(d.amplitude(k, zero).s == doctest::Approx(-two_pi));
    CHECK(d.amplitude(k, zero).c == doctest::Approx(0.0));

    // d/dI_1 of B(theta) . I recovers B_1.
    std::mt19937_64 rng(3);
    auto B0 = random_series(rng, 2, 3, 0);
    std::vector<int> m1{1, 0};
    FourierTaylorSeries BdotI(2, 3, 1);
    for (const auto& [key, amp] : B0.terms()) BdotI.add_term(key.k, m1, amp.c, amp.s);
    auto rec = partial_derivative(BdotI, Var::action, 0);
    for (const auto& [key, amp] : B0.terms()) {
        auto a = rec.amplitude(key.k, zero);
        CHECK(a.c == doctest::Approx(amp.c));
        CHECK(a.s == doctest::Approx(amp.s));
    }
}

TEST_CASE("poisson bracket: antisymmetry, convention, Leibniz") {
    std::mt19937_64 rng(17);
    auto f = random_series(rng, 2, 3, 1);
    auto self = poisson_bracket(f, f);
    CHECK(self.coefficient_mass() <= 1e-14);

    // {cos(2 pi theta_1), e + v . I} = -2 pi v_1 sin(2 pi theta_1)
    std::vector<int> k{1, 0}, zero{0, 0};
    auto cosx = FourierTaylorSeries::mode(2, k, 1.0, 0.0);
    std::vector<double> v{0.7, -0.4};
    auto N = add_scale(FourierTaylorSeries::constant(2, 2.5),
                       FourierTaylorSeries::linear_action(2, v), 1.0, 1.0);
    auto br = poisson_bracket(cosx, N);
    CHECK(br.amplitude(k, zero).s == doctest::Approx(-two_pi * 0.7));
    CHECK(br.amplitude(k, zero).c == doctest::Approx(0.0));

    // action-independent pair commutes
    auto A = random_series(rng, 2, 3, 0);
    auto B = random_series(rng, 2, 3, 0);
    CHECK(poisson_bracket(A, B).coefficient_mass() <= 1e-14);

    // Leibniz {f, g h} = {f, g} h + g {f, h} with truncation-commensurate degrees
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        auto ff = random_series(rng, 2, 2, 1, 5);
        auto gg = random_series(rng, 2, 2, 1, 5);
        auto hh = random_series(rng, 2, 2, 0, 5);
        auto lhs = poisson_bracket(ff, multiply(gg, hh));
        auto rhs = add_scale(multiply(poisson_bracket(ff, gg), hh),
                             multiply(gg, poisson_bracket(ff, hh)), 1.0, 1.0);
        double scale = std::max(1.0, rhs.coefficient_mass());
        for (int pt = 0; pt < 6; ++pt) {
            TorusPoint p({ud(rng), ud(rng)}, {ud(rng) - 0.5, ud(rng) - 0.5});
            CHECK(std::abs(lhs.evaluate(p) - rhs.evaluate(p)) <= 1e-10 * scale);
        }
    }
}

TEST_CASE("average_along: projection onto resonant modes") {
    auto c = FourierTaylorSeries::constant(2, 4.2);
    std::vector<double> v{1.0, 1.0};
    auto avc = average_along(c, v, 1);
    CHECK(avc.amplitude({0, 0}, {0, 0}).c == doctest::Approx(4.2));

    std::vector<int> k{1, 0};
    auto cosx = FourierTaylorSeries::mode(2, k, 1.0, 0.0);
    CHECK(average_along(cosx, v, 1).coefficient_mass() == 0.0);

    std::vector<int> kd{1, -1};
    auto diag = FourierTaylorSeries::mode(2, kd, 1.0, 0.0);
    auto avd = average_along(diag, v, 1);
    CHECK(avd.amplitude(kd, {0, 0}).c == doctest::Approx(1.0));

    // numeric-integral oracle at sample points
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    auto f = random_series(rng, 2, 3, 0);
    std::vector<double> vr{1.0, 2.0 / 3.0};
    auto av = average_along(f, vr, 3);
    for (int pt = 0; pt < 5; ++pt) {
        TorusPoint p({ud(rng), ud(rng)}, {0.0, 0.0});
        CHECK(av.evaluate(p) == doctest::Approx(numeric_average(f, vr, 3, p)).epsilon(1e-9));
    }

    // projection: applying twice equals applying once, exactly
    auto twice = average_along(av, vr, 3);
    CHECK(twice.term_count() == av.term_count());
    for (const auto& [key, amp] : av.terms()) {
        auto a = twice.amplitude(key.k, key.m);
        CHECK(a.c == amp.c);
        CHECK(a.s == amp.s);
    }

    auto bad = std::vector<double>{1.0, 0.123456};
    CHECK_THROWS_AS(average_along(f, bad, 2), structural_error);
}

TEST_CASE("full_average keeps only the zero mode") {
    std::vector<int> k{1, 0};
    auto f = add_scale(FourierTaylorSeries::constant(2, 3.0),
                       FourierTaylorSeries::mode(2, k, 1.0, 0.0), 1.0, 1.0);
    auto av = full_average(f);
    CHECK(av.term_count() == 1);
    CHECK(av.amplitude({0, 0}, {0, 0}).c == doctest::Approx(3.0));

    // e + omega . I + B . I with zero-mean B
    std::vector<double> omega{1.0, 0.5};
    FourierTaylorSeries H(2, 2, 1);
    H.add_term({0, 0}, {0, 0}, 1.5, 0.0);
    H.add_term({0, 0}, {1, 0}, omega[0], 0.0);
    H.add_term({0, 0}, {0, 1}, omega[1], 0.0);
    H.add_term({1, 1}, {1, 0}, 0.3, 0.1);  // oscillating B part
    auto avH = full_average(H);
    CHECK(avH.amplitude({0, 0}, {0, 0}).c == doctest::Approx(1.5));
    CHECK(avH.amplitude({0, 0}, {1, 0}).c == doctest::Approx(1.0));
    CHECK(avH.amplitude({1, 1}, {1, 0}).c == doctest::Approx(0.0));
}

TEST_CASE("iterated averaging along a unimodular pair equals the full average") {
    // golden-mean convergents 1/1 and 1/2: q1 v1 = (1,1), q2 v2 = (2,1),
    // determinant 1*1 - 1*2 = -1.
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        auto f = random_series(rng, 2, 5, 2, 10);
        std::vector<double> v1{1.0, 1.0}, v2{1.0, 0.5};
        auto it = average_along(average_along(f, v1, 1), v2, 2);
        auto full = full_average(f);
        CHECK(it.term_count() == full.term_count());
        for (const auto& [key, amp] : full.terms()) {
            auto a = it.amplitude(key.k, key.m);
            CHECK(a.c == amp.c);  // exact: projections only drop terms
            CHECK(a.s == amp.s);
        }
    }
}

TEST_CASE("evaluate basics") {
    auto c = FourierTaylorSeries::constant(2, -2.5);
    CHECK(c.evaluate(TorusPoint::angles({0.3, 0.9})) == doctest::Approx(-2.5));

    std::vector<int> k{1, 0};
    auto cosx = FourierTaylorSeries::mode(2, k, 1.0, 0.0);
    CHECK(cosx.evaluate(TorusPoint::angles({0.25, 0.0})) == doctest::Approx(0.0).epsilon(1e-12));

    std::vector<double> omega{1.0, 0.5};
    auto lin = FourierTaylorSeries::linear_action(2, omega);
    CHECK(lin.evaluate(TorusPoint({0.0, 0.0}, {1.0, 2.0})) == doctest::Approx(2.0));
}

TEST_CASE("grid_refit: band-limited exactness and aliasing report") {
    AngleGrid grid({16, 16});
    auto samples = grid.sample([](std::span<const double> th) {
        return std::cos(two_pi * th[0]);
    });
    auto fit = grid_refit(grid, samples, 4);
    CHECK(fit.alias_residual <= 1e-12);
    CHECK(fit.series.amplitude({1, 0}, {0, 0}).c == doctest::Approx(1.0).epsilon(1e-12));
    double spurious = fit.series.coefficient_mass() - 1.0;
    CHECK(std::abs(spurious) <= 1e-12);

    auto const_samples = grid.sample([](std::span<const double>) { return 7.0; });
    auto cfit = grid_refit(grid, const_samples, 4);
    CHECK(cfit.series.term_count() == 1);
    CHECK(cfit.series.amplitude({0, 0}, {0, 0}).c == doctest::Approx(7.0));

    auto high = grid.sample([](std::span<const double> th) {
        return std::cos(6.0 * two_pi * th[0]);
    });
    auto hfit = grid_refit(grid, high, 4);
    CHECK(hfit.alias_residual > 0.1);

    CHECK_THROWS_AS(grid_refit(AngleGrid({8, 8}), std::vector<double>(64, 0.0), 4),
                    precondition_error);
}

TEST_CASE("grid_refit with action jets") {
    AngleGrid grid({12, 12});
    std::map<std::vector<int>, std::vector<double>> jets;
    jets[{0, 0}] = grid.sample([](std::span<const double> th) {
        return 1.0 + std::cos(two_pi * th[0]);
    });
    jets[{1, 0}] = grid.sample([](std::span<const double> th) {
        return std::sin(two_pi * th[1]);
    });
    jets[{0, 2}] = grid.sample([](std::span<const double>) { return 0.5; });
    auto fit = grid_refit_jets(grid, jets, 3);
    CHECK(fit.alias_residual <= 1e-12);
    CHECK(fit.series.action_degree() == 2);
    CHECK(fit.series.amplitude({0, 0}, {0, 0}).c == doctest::Approx(1.0));
    CHECK(fit.series.amplitude({1, 0}, {0, 0}).c == doctest::Approx(1.0));
    CHECK(fit.series.amplitude({0, 1}, {1, 0}).s == doctest::Approx(1.0));
    CHECK(fit.series.amplitude({0, 0}, {0, 2}).c == doctest::Approx(0.5));
}

TEST_CASE("series canonicalization folds mirrored modes") {
    FourierTaylorSeries f(2, 3, 0);
    f.add_term({-1, 1}, {0, 0}, 2.0, 0.5);
    auto a = f.amplitude({1, -1}, {0, 0});
    CHECK(a.c == doctest::Approx(2.0));
    CHECK(a.s == doctest::Approx(-0.5));
    auto b = f.amplitude({-1, 1}, {0, 0});
    CHECK(b.c == doctest::Approx(2.0));
    CHECK(b.s == doctest::Approx(0.5));
}
