#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "gkam/kam.hpp"

using namespace gkam;

namespace {

const double golden = (std::sqrt(5.0) - 1.0) / 2.0;

HamiltonianSampler linear_sampler(int n) {
    HamiltonianSampler s;
    s.value = [](std::span<const double>, std::span<const double>) { return 0.0; };
    s.grad_I = [n](std::span<const double>, std::span<const double> omega) {
        return std::vector<double>(omega.begin(), omega.end());
    };
    s.hess_I = [n](std::span<const double>, std::span<const double>) {
        return std::vector<double>(static_cast<std::size_t>(n * n), 0.0);
    };
    return s;
}

HamiltonianSampler quadratic_sampler(int n) {
    // H = |omega + I|^2 / 2 expanded at I = 0
    HamiltonianSampler s;
    s.value = [](std::span<const double>, std::span<const double> omega) {
        double e = 0.0;
        for (double w : omega) e += 0.5 * w * w;
        return e;
    };
    s.grad_I = [](std::span<const double>, std::span<const double> omega) {
        return std::vector<double>(omega.begin(), omega.end());
    };
    s.hess_I = [n](std::span<const double>, std::span<const double>) {
        std::vector<double> h(static_cast<std::size_t>(n * n), 0.0);
        for (int i = 0; i < n; ++i) h[static_cast<std::size_t>(i * n + i)] = 1.0;
        return h;
    };
    return s;
}

}  // namespace

TEST_CASE("ParamGrid barycentric interpolation reproduces polynomials") {
    ParamGrid grid({1.0, golden}, 0.01, 3);
    CHECK(grid.node_count() == 16);
    // degree-3 polynomial in both variables is interpolated exactly
    auto f = [](double x, double y) {
        return 1.0 + 2.0 * x - y + 0.5 * x * x * y + x * y * y - 0.25 * y * y * y;
    };
    std::vector<double> vals;
    for (const auto& node : grid.nodes()) vals.push_back(f(node[0], node[1]));
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ud(-0.01, 0.01);
    for (int t = 0; t < 25; ++t) {
        std::vector<double> p{1.0 + ud(rng), golden + ud(rng)};
        CHECK(grid.interpolate(vals, p) == doctest::Approx(f(p[0], p[1])).epsilon(1e-12));
    }
    // node hit
    CHECK(grid.interpolate(vals, grid.nodes()[5]) ==
          doctest::Approx(f(grid.nodes()[5][0], grid.nodes()[5][1])));
}

TEST_CASE("decompose: integrable normal forms") {
    GevreyParams p(1.0, 0.05);
    std::vector<double> omega0{1.0, golden};

    auto lin = decompose(linear_sampler(2), omega0, 0.5, 0.01, 4, p);
    for (const auto& nd : lin.nodes) {
        CHECK(nd.e == doctest::Approx(0.0));
        CHECK(nd.A.coefficient_mass() == 0.0);
        for (const auto& b : nd.B) CHECK(b.coefficient_mass() <= 1e-13);
        for (const auto& m : nd.M) CHECK(m.coefficient_mass() <= 1e-13);
    }

    auto quad = decompose(quadratic_sampler(2), omega0, 0.5, 0.01, 4, p);
    for (int idx = 0; idx < quad.grid.node_count(); ++idx) {
        const auto& nd = quad.nodes[static_cast<std::size_t>(idx)];
        const auto& om = quad.grid.nodes()[static_cast<std::size_t>(idx)];
        CHECK(nd.e == doctest::Approx(0.5 * (om[0] * om[0] + om[1] * om[1])).epsilon(1e-12));
        for (const auto& b : nd.B) CHECK(b.coefficient_mass() <= 1e-12);
        std::vector<int> z{0, 0};
        CHECK(nd.M[static_cast<std::size_t>(sym_index(2, 0, 0))].amplitude(z, z).c ==
              doctest::Approx(0.5));
        CHECK(nd.M[static_cast<std::size_t>(sym_index(2, 1, 1))].amplitude(z, z).c ==
              doctest::Approx(0.5));
        CHECK(nd.M[static_cast<std::size_t>(sym_index(2, 0, 1))].coefficient_mass() <= 1e-13);
    }

    // H = omega . I + eps cos(2 pi theta_1): A picks the perturbation, e = 0
    double eps = 1e-3;
    HamiltonianSampler pert = linear_sampler(2);
    pert.value = [eps](std::span<const double> th, std::span<const double>) {
        return eps * std::cos(two_pi * th[0]);
    };
    auto dec = decompose(pert, omega0, 0.5, 0.01, 4, p);
    for (const auto& nd : dec.nodes) {
        CHECK(nd.e == doctest::Approx(0.0).epsilon(1e-14));
        CHECK(nd.A.amplitude({1, 0}, {0, 0}).c == doctest::Approx(eps).epsilon(1e-12));
        // zero angle average at every node
        CHECK(full_average(nd.A).coefficient_mass() <= 1e-16);
    }

    // reconstruction matches the sampled values
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    for (int idx : {0, 5, 11}) {
        auto H = dec.assemble(idx);
        const auto& om = dec.grid.nodes()[static_cast<std::size_t>(idx)];
        for (int t = 0; t < 10; ++t) {
            std::vector<double> th{ud(rng), ud(rng)};
            std::vector<double> I{0.3 * (ud(rng) - 0.5), 0.3 * (ud(rng) - 0.5)};
            double direct = om[0] * I[0] + om[1] * I[1] + eps * std::cos(two_pi * th[0]);
            CHECK(H.evaluate(TorusPoint(th, I)) == doctest::Approx(direct).epsilon(1e-10));
        }
    }
}

TEST_CASE("cohomological solve: exact mode formula and integral oracle") {
    FrequencyProfile prof({1.0, golden}, 100);

    RationalVector v;  // v = (1, 1), q = 1
    v.q = 1;
    v.p = {1};

    // resonant-only input: nothing to remove
    std::vector<int> kd{1, -1};
    auto res_only = FourierTaylorSeries::mode(2, kd, 0.7, -0.2);
    CHECK(cohomological_solve(res_only, v).coefficient_mass() == 0.0);

    // cos(2 pi theta_1): C = sin(2 pi theta_1) / (2 pi)
    std::vector<int> k{1, 0}, z{0, 0};
    auto A = FourierTaylorSeries::mode(2, k, 1.0, 0.0);
    auto C = cohomological_solve(A, v);
    CHECK(C.amplitude(k, z).s == doctest::Approx(1.0 / two_pi).epsilon(1e-14));
    CHECK(C.amplitude(k, z).c == doctest::Approx(0.0));
    CHECK(cohomological_residual(C, A, v) <= 1e-12);

    // brute-force oracle: C(theta) = q int_0^1 (A - [A]_v)(theta + t q v) t dt
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> kgen(-3, 3);
    std::uniform_real_distribution<double> cd(-1.0, 1.0);
    RationalVector v2;  // v = (1, 2/3), q = 3
    v2.q = 3;
    v2.p = {2};
    auto vd = v2.value();
    for (int trial = 0; trial < 5; ++trial) {
        FourierTaylorSeries Ar(2, 6, 0);
        for (int t = 0; t < 8; ++t) {
            std::vector<int> kk{kgen(rng), kgen(rng)};
            Ar.add_term(kk, z, cd(rng), cd(rng));
        }
        auto Cr = cohomological_solve(Ar, v2);
        CHECK(cohomological_residual(Cr, Ar, v2) <= 1e-10);
        auto osc = add_scale(Ar, average_along_integer(Ar, v2.integer_vector_ll()), 1.0, -1.0);
        for (int pt = 0; pt < 6; ++pt) {
            std::vector<double> th{cd(rng), cd(rng)};
            // composite Simpson in t
            const int N = 4096;
            double acc = 0.0;
            for (int s = 0; s <= N; ++s) {
                double t = static_cast<double>(s) / N;
                std::vector<double> shifted{th[0] + t * 3.0 * vd[0], th[1] + t * 3.0 * vd[1]};
                double w = (s == 0 || s == N) ? 1.0 : (s % 2 == 1 ? 4.0 : 2.0);
                acc += w * osc.evaluate_at_zero_action(shifted) * t;
            }
            double oracle = 3.0 * acc / (3.0 * N);
            CHECK(Cr.evaluate_at_zero_action(th) == doctest::Approx(oracle).epsilon(1e-10));
        }
        // norm bound |C| <= q |A|
        GevreyParams gp(1.0, 0.1);
        CHECK(gevrey_norm(Cr, gp) <= 3.0 * gevrey_norm(Ar, gp) * (1 + 1e-12));
    }
}

TEST_CASE("flow_map: drift-only, identity, symplecticity") {
    GevreyParams p(1.0, 0.05);
    std::vector<int> k{1, 0};
    auto C = FourierTaylorSeries::mode(2, k, 1e-3, 0.0);
    std::vector<FourierTaylorSeries> D(2, FourierTaylorSeries(2, 1, 0));

    FlowOptions opt;
    auto flow = flow_map(C, D, 0.7, p, 0.02, opt);
    for (const auto& e : flow.map.E) CHECK(e.coefficient_mass() <= 1e-15);
    for (const auto& f : flow.map.F) CHECK(f.coefficient_mass() <= 1e-15);
    // G = -t grad C
    auto g_expect = partial_derivative(C, Var::angle, 0);
    CHECK(flow.map.G[0].amplitude(k, {0, 0}).s ==
          doctest::Approx(-0.7 * g_expect.amplitude(k, {0, 0}).s).epsilon(1e-12));
    CHECK(flow.map.G[1].coefficient_mass() <= 1e-15);
    CHECK(flow.picard_residual <= 1e-12);

    auto id = flow_map(FourierTaylorSeries(2, 1, 0), D, 1.0, p, 0.02, opt);
    for (const auto& e : id.map.E) CHECK(e.coefficient_mass() == 0.0);
    for (const auto& g : id.map.G) CHECK(g.coefficient_mass() == 0.0);

    // a mixed flow is symplectic to 1e-8 at 100 sample points (truncation
    // room for the interaction harmonics: K = 8)
    auto lift = [](FourierTaylorSeries f) {
        return add_scale(f, FourierTaylorSeries(2, 8, 0), 1.0, 0.0);
    };
    std::vector<FourierTaylorSeries> D2;
    D2.push_back(lift(FourierTaylorSeries::mode(2, k, 2e-3, 1e-3)));
    std::vector<int> k2{0, 1};
    D2.push_back(lift(FourierTaylorSeries::mode(2, k2, -1e-3, 5e-4)));
    auto flow2 = flow_map(lift(C), D2, 1.0, p, 0.1, opt);
    CHECK(symplectic_deviation(flow2.map, 100, 7) <= 1e-8);
    CHECK(flow2.picard_residual <= 1e-10);
}

TEST_CASE("flow_map smallness gate") {
    GevreyParams p(1.0, 0.05);
    std::vector<int> k{1, 0};
    auto C = FourierTaylorSeries(2, 1, 0);
    std::vector<FourierTaylorSeries> D;
    D.push_back(FourierTaylorSeries::mode(2, k, 10.0, 0.0));  // way over sigma^alpha
    D.push_back(FourierTaylorSeries(2, 1, 0));
    FlowOptions opt;
    CHECK_THROWS_AS(flow_map(C, D, 1.0, p, 0.01, opt), precondition_error);
    opt.enforce_smallness = false;
    auto fl = flow_map(C, D, 0.01, p, 0.01, opt);
    CHECK(fl.smallness_ratio > 1.0);
}

TEST_CASE("kam_step: trivial input gives the identity step") {
    GevreyParams p(1.0, 0.05);
    std::vector<double> omega0{1.0, golden};
    FrequencyProfile prof(omega0, 400);
    auto env = Envelope::from_profile(prof);

    auto H = decompose(quadratic_sampler(2), omega0, 0.5, 1e-3, 5, p, 2);
    KamConstants constants;
    constants.enforce = false;  // exercising the step machinery itself
    KamOptions opt;
    opt.grid_N = 14;
    auto step = kam_step(H, prof, env, 89.0, 0.01, 0.05, 1e-10, 1e-5, constants, opt);

    CHECK(step.diag.eps_before == 0.0);
    CHECK(step.diag.eps_after <= 1e-15);
    CHECK(step.diag.mu_after <= 1e-12);
    CHECK(step.diag.omega_shift <= 1e-12);  // phi = Id
    for (const auto& T : step.transform.per_node) {
        for (const auto& e : T.E) CHECK(e.coefficient_mass() <= 1e-14);
        for (const auto& g : T.G) CHECK(g.coefficient_mass() <= 1e-14);
    }
    // e is preserved at the new nodes: e+(y) = |varphi(y)|^2/2 = |y|^2/2
    for (int idx = 0; idx < step.next.grid.node_count(); ++idx) {
        const auto& y = step.next.grid.nodes()[static_cast<std::size_t>(idx)];
        CHECK(step.next.nodes[static_cast<std::size_t>(idx)].e ==
              doctest::Approx(0.5 * (y[0] * y[0] + y[1] * y[1])).epsilon(1e-10));
    }
}

TEST_CASE("kam_step: constant B becomes a pure frequency shift") {
    GevreyParams p(1.0, 0.05);
    std::vector<double> omega0{1.0, golden};
    FrequencyProfile prof(omega0, 400);
    auto env = Envelope::from_profile(prof);

    std::vector<double> b{2e-4, -1e-4};
    HamiltonianSampler s = linear_sampler(2);
    s.grad_I = [b](std::span<const double>, std::span<const double> omega) {
        return std::vector<double>{omega[0] + b[0], omega[1] + b[1]};
    };
    auto H = decompose(s, omega0, 0.5, 1e-2, 5, p, 2);
    KamConstants constants;
    constants.enforce = false;
    KamOptions opt;
    opt.grid_N = 14;
    auto step = kam_step(H, prof, env, 89.0, 0.01, 0.05, 0.0, 3e-4, constants, opt);

    CHECK(step.diag.mu_after <= 1e-12);  // B+ vanishes in one step
    for (std::size_t idx = 0; idx < step.transform.varphi_at_new_nodes.size(); ++idx) {
        const auto& y = step.next.grid.nodes()[idx];
        const auto& om = step.transform.varphi_at_new_nodes[idx];
        CHECK(om[0] == doctest::Approx(y[0] - b[0]).epsilon(1e-12));
        CHECK(om[1] == doctest::Approx(y[1] - b[1]).epsilon(1e-12));
    }
    for (const auto& T : step.transform.per_node) {
        for (const auto& e : T.E) CHECK(e.coefficient_mass() <= 1e-14);
        for (const auto& g : T.G) CHECK(g.coefficient_mass() <= 1e-14);
    }
}

TEST_CASE("kam_step: single-mode perturbation contracts below eps/16") {
    GevreyParams p(1.0, 0.05);
    std::vector<double> omega0{1.0, golden};
    FrequencyProfile prof(omega0, 400);
    auto env = Envelope::from_profile(prof);

    double eps = 1e-8;
    HamiltonianSampler s = linear_sampler(2);
    s.value = [eps](std::span<const double> th, std::span<const double>) {
        return eps * std::cos(two_pi * th[0]);
    };
    auto H = decompose(s, omega0, 0.5, 1e-3, 6, p, 2);
    double eps_meas = H.eps_measured();
    KamConstants constants;
    constants.enforce = false;
    KamOptions opt;
    opt.grid_N = 16;
    auto step = kam_step(H, prof, env, 89.0, 0.01, 0.05, eps_meas, std::sqrt(eps_meas),
                         constants, opt);

    CHECK(step.diag.eps_after <= eps_meas / 16.0);
    CHECK(step.diag.eps_target_met);
    CHECK(step.diag.max_symplectic_dev <= 1e-8);
    CHECK(step.diag.cohomological_residual <= 1e-10 * eps);

    // one-step normal-form oracle: the new Hamiltonian at (theta, I) must
    // equal the old one evaluated through the transformation
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    for (int idx : {0, 4, 8}) {
        const auto& y = step.next.grid.nodes()[static_cast<std::size_t>(idx)];
        const auto& om = step.transform.varphi_at_new_nodes[static_cast<std::size_t>(idx)];
        const auto& T = step.transform.per_node[static_cast<std::size_t>(idx)];
        auto Hplus = step.next.assemble(idx);
        NodeData old_at = H.at(om);
        std::vector<double> th(2), I(2), thp(2), Ip(2);
        for (int t = 0; t < 12; ++t) {
            th = {ud(rng), ud(rng)};
            I = {1e-4 * (ud(rng) - 0.5), 1e-4 * (ud(rng) - 0.5)};
            apply_transform(T, th, I, thp, Ip);
            double orig = old_at.e + om[0] * Ip[0] + om[1] * Ip[1] +
                          old_at.A.evaluate_at_zero_action(thp);
            for (int i = 0; i < 2; ++i)
                orig += old_at.B[static_cast<std::size_t>(i)].evaluate_at_zero_action(thp) * Ip[static_cast<std::size_t>(i)];
            double transformed = Hplus.evaluate(TorusPoint(th, I));
            CHECK(transformed == doctest::Approx(orig).epsilon(1e-9));
        }
    }
}

TEST_CASE("kam_step enforces its preconditions by name") {
    GevreyParams p(1.0, 0.05);
    std::vector<double> omega0{1.0, golden};
    FrequencyProfile prof(omega0, 200);
    auto env = Envelope::from_profile(prof);
    auto H = decompose(quadratic_sampler(2), omega0, 0.5, 0.3, 5, p, 2);
    KamConstants constants;  // enforce = true
    KamOptions opt;
    opt.grid_N = 14;
    // oversized h violates h <= c / Delta(Q)
    CHECK_THROWS_WITH_AS(
        kam_step(H, prof, env, 89.0, 0.01, 0.05, 1e-6, 1e-3, constants, opt),
        doctest::Contains("h <= c/(Q Psi(Q))"), precondition_error);
}

TEST_CASE("schedule identities and series bounds") {
    FrequencyProfile prof({1.0, golden}, 400);
    auto env = Envelope::from_profile(prof);
    double eps = 1e-6, mu = 1e-3, r = 0.5, h = 0.01, s = 0.05, alpha = 1.0, C = 2.0;
    KamSchedule sched(eps, mu, r, h, s, alpha, C, 10, &env);

    // sum of delta_i is r/2 (1 - 2^-N)
    double acc = 0.0;
    for (int i = 0; i < 30; ++i) acc += sched.delta_i(i);
    CHECK(acc == doctest::Approx(r / 2.0 * (1.0 - std::pow(2.0, -30.0))).epsilon(1e-12));

    // Delta doubling and Delta(Q_i) = Delta_i
    for (int i = 0; i < 12; ++i) {
        CHECK(sched.Delta_i(i) == doctest::Approx(std::pow(2.0, i) * env.delta(10.0)));
        CHECK(env.delta(sched.Q_i(i)) == doctest::Approx(sched.Delta_i(i)).epsilon(1e-10));
    }

    // convergent series against their closed-form bounds
    double s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0;
    for (int i = 0; i < 40; ++i) {
        double Qi = sched.Q_i(i);
        double PsiQi = env.psi(Qi);
        double sig_a = std::pow(sched.sigma_i(i), -alpha);
        s1 += sig_a * sched.mu_i(i);
        s2 += sched.mu_i(i);
        s3 += sig_a * PsiQi * sched.mu_i(i);
        s4 += PsiQi * sched.mu_i(i);
        s5 += sig_a * PsiQi * sched.eps_i(i);
    }
    double Q0 = 10.0, PsiQ0 = env.psi(Q0);
    CHECK(s1 <= 2.0 * Q0 * mu);
    CHECK(s2 <= 2.0 * mu);
    CHECK(s3 <= 2.0 * Q0 * PsiQ0 * mu);
    CHECK(s4 <= 2.0 * PsiQ0 * mu);
    CHECK(s5 <= 2.0 * Q0 * PsiQ0 * eps);

    // width budget: sum sigma_i stays below s/2 when Q0 is selected properly
    auto q0 = select_Q0(env, 2, alpha, s, C);
    KamSchedule tight(eps, mu, r, h, s, alpha, C, q0.Q0, &env);
    double sig_sum = 0.0;
    for (int i = 0; i < 60; ++i) sig_sum += tight.sigma_i(i);
    CHECK(sig_sum <= s / 2.0 * (1 + 1e-9));
}

TEST_CASE("vector-field preset: single-mode B conjugacy with exact structural zeros") {
    std::vector<double> omega0{1.0, golden};
    FrequencyProfile prof(omega0, 400);
    auto env = Envelope::from_profile(prof);

    int K = 6, n = 2;
    double mu = 1e-4;
    ParamHamiltonian H{.n = n,
                       .K = K,
                       .r = 0.5,
                       .h = 5e-3,
                       .gevrey = GevreyParams(1.0, 0.05),
                       .omega0 = omega0,
                       .grid = ParamGrid(omega0, 5e-3, 2),
                       .nodes = {},
                       .vector_field_preset = true};
    std::vector<int> k{1, 0};
    for (int idx = 0; idx < H.grid.node_count(); ++idx) {
        NodeData nd(n, K);
        nd.B[0] = FourierTaylorSeries::mode(n, k, mu, 0.0);
        nd.B[0] = add_scale(nd.B[0], FourierTaylorSeries(n, K, 0), 1.0, 0.0);
        H.nodes.push_back(std::move(nd));
    }

    KamConfig config;
    config.alpha = 1.0;
    config.s = 0.05;
    config.K = K;
    config.max_steps = 12;
    config.residual_floor = 1e-13;
    config.node_degree = 2;
    config.constants.enforce = false;
    config.options.grid_N = 16;

    auto result = kam_iterate(H, prof, env, config);
    CHECK(result.converged);
    CHECK(result.residual_A == 0.0);
    CHECK(result.residual_B <= 1e-13);
    // structural zeros: G* vanishes coefficientwise, A stays zero at every step
    for (const auto& g : result.embedding.G) CHECK(g.coefficient_mass() == 0.0);
    for (const auto& d : result.history) CHECK(d.eps_after == 0.0);
    CHECK(result.composition_check <= 1e-9);

    // conjugacy check: flow of omega* + B against the conjugated linear flow
    std::vector<FourierTaylorSeries> B{FourierTaylorSeries::mode(n, k, mu, 0.0),
                                       FourierTaylorSeries(n, 1, 0)};
    auto inv = invariance_residual_vector_field(result, omega0, B, 50.0, 1e-3, 8, 11);
    CHECK(inv.dynamical_max_dev <= 1e-7);
}

TEST_CASE("kam_iterate: quadratic example converges with invariant torus") {
    std::vector<double> omega0{1.0, golden};
    FrequencyProfile prof(omega0, 400);
    auto env = Envelope::from_profile(prof);

    double eps = 1e-7;
    HamiltonianSampler s = quadratic_sampler(2);
    s.value = [eps](std::span<const double> th, std::span<const double> omega) {
        double e = 0.0;
        for (double w : omega) e += 0.5 * w * w;
        return e + eps * (std::cos(two_pi * th[0]) + std::cos(two_pi * (th[0] + th[1])));
    };
    auto H = decompose(s, omega0, 0.5, 2e-3, 8, GevreyParams(1.0, 0.04), 2);

    KamConfig config;
    config.alpha = 1.0;
    config.s = 0.04;
    config.K = 8;
    config.max_steps = 10;
    config.residual_floor = 1e-13;
    config.node_degree = 2;
    config.constants.enforce = false;
    config.options.grid_N = 20;

    auto result = kam_iterate(H, prof, env, config);
    CHECK(result.converged);
    CHECK(result.residual_A <= 1e-13);
    CHECK(result.residual_B <= 1e-13);
    CHECK(result.omega_shift <= 10.0 * std::sqrt(eps));
    CHECK(result.composition_check <= 1e-9);
    for (const auto& d : result.history) CHECK(d.max_symplectic_dev <= 1e-8);

    auto grad_f = [](std::span<const double> q) {
        double s1 = std::sin(two_pi * q[0]);
        double s12 = std::sin(two_pi * (q[0] + q[1]));
        return std::vector<double>{-two_pi * (s1 + s12), -two_pi * s12};
    };
    std::vector<double> lambda{1.0, 1.0};
    auto inv = invariance_residual(result, omega0, lambda, grad_f, eps, result.omega_star, 50.0,
                                   1e-3, 8, 13);
    CHECK(inv.dynamical_max_dev <= 1e-6);
}
