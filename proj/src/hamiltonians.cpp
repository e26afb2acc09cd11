#include "gkam/hamiltonians.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gkam {

namespace {

// Solves the small linear system A x = b (n <= 3) by Gaussian elimination.
std::vector<double> solve_linear(std::vector<double> A, std::vector<double> b) {
    const int n = static_cast<int>(b.size());
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(A[static_cast<std::size_t>(r * n + col)]) >
                std::abs(A[static_cast<std::size_t>(piv * n + col)]))
                piv = r;
        if (std::abs(A[static_cast<std::size_t>(piv * n + col)]) < 1e-300)
            throw precondition_error("expand_at_action: singular Hessian in Newton step");
        if (piv != col) {
            for (int c = 0; c < n; ++c)
                std::swap(A[static_cast<std::size_t>(piv * n + c)], A[static_cast<std::size_t>(col * n + c)]);
            std::swap(b[static_cast<std::size_t>(piv)], b[static_cast<std::size_t>(col)]);
        }
        double d = A[static_cast<std::size_t>(col * n + col)];
        for (int r = col + 1; r < n; ++r) {
            double f = A[static_cast<std::size_t>(r * n + col)] / d;
            if (f == 0.0) continue;
            for (int c = col; c < n; ++c)
                A[static_cast<std::size_t>(r * n + c)] -= f * A[static_cast<std::size_t>(col * n + c)];
            b[static_cast<std::size_t>(r)] -= f * b[static_cast<std::size_t>(col)];
        }
    }
    std::vector<double> x(static_cast<std::size_t>(n));
    for (int r = n - 1; r >= 0; --r) {
        double acc = b[static_cast<std::size_t>(r)];
        for (int c = r + 1; c < n; ++c)
            acc -= A[static_cast<std::size_t>(r * n + c)] * x[static_cast<std::size_t>(c)];
        x[static_cast<std::size_t>(r)] = acc / A[static_cast<std::size_t>(r * n + r)];
    }
    return x;
}

double det_small(const std::vector<double>& m, int n) {
    if (n == 1) return m[0];
    if (n == 2) return m[0] * m[3] - m[1] * m[2];
    if (n == 3)
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    // Laplace expansion is enough at these sizes (bordered 4x4 at most)
    double acc = 0.0;
    for (int c = 0; c < n; ++c) {
        std::vector<double> minor;
        for (int r = 1; r < n; ++r)
            for (int cc = 0; cc < n; ++cc)
                if (cc != c) minor.push_back(m[static_cast<std::size_t>(r * n + cc)]);
        acc += (c % 2 == 0 ? 1.0 : -1.0) * m[static_cast<std::size_t>(c)] * det_small(minor, n - 1);
    }
    return acc;
}

int l1_norm(std::span<const int> k) {
    int s = 0;
    for (int v : k) s += std::abs(v);
    return s;
}

}  // namespace

IntegrableSpec IntegrableSpec::quadratic(int n) {
    IntegrableSpec s;
    s.n = n;
    s.h = [](std::span<const double> p) {
        double e = 0.0;
        for (double x : p) e += 0.5 * x * x;
        return e;
    };
    s.grad_h = [](std::span<const double> p) { return std::vector<double>(p.begin(), p.end()); };
    s.hess_h = [n](std::span<const double>) {
        std::vector<double> hs(static_cast<std::size_t>(n * n), 0.0);
        for (int i = 0; i < n; ++i) hs[static_cast<std::size_t>(i * n + i)] = 1.0;
        return hs;
    };
    return s;
}

IntegrableSpec IntegrableSpec::diagonal(std::vector<double> lambda) {
    IntegrableSpec s;
    const int n = static_cast<int>(lambda.size());
    s.n = n;
    s.h = [lambda](std::span<const double> p) {
        double e = 0.0;
        for (std::size_t i = 0; i < lambda.size(); ++i) e += 0.5 * lambda[i] * p[i] * p[i];
        return e;
    };
    s.grad_h = [lambda](std::span<const double> p) {
        std::vector<double> g(lambda.size());
        for (std::size_t i = 0; i < lambda.size(); ++i) g[i] = lambda[i] * p[i];
        return g;
    };
    s.hess_h = [lambda, n](std::span<const double>) {
        std::vector<double> hs(static_cast<std::size_t>(n * n), 0.0);
        for (int i = 0; i < n; ++i) hs[static_cast<std::size_t>(i * n + i)] = lambda[static_cast<std::size_t>(i)];
        return hs;
    };
    return s;
}

IntegrableSpec IntegrableSpec::quartic(int n, double beta) {
    IntegrableSpec s;
    s.n = n;
    s.h = [beta](std::span<const double> p) {
        double e = 0.0;
        for (double x : p) e += 0.5 * x * x + 0.25 * beta * x * x * x * x;
        return e;
    };
    s.grad_h = [beta](std::span<const double> p) {
        std::vector<double> g(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) g[i] = p[i] + beta * p[i] * p[i] * p[i];
        return g;
    };
    s.hess_h = [beta, n](std::span<const double> p) {
        std::vector<double> hs(static_cast<std::size_t>(n * n), 0.0);
        for (int i = 0; i < n; ++i)
            hs[static_cast<std::size_t>(i * n + i)] =
                1.0 + 3.0 * beta * p[static_cast<std::size_t>(i)] * p[static_cast<std::size_t>(i)];
        return hs;
    };
    return s;
}

bool IntegrableSpec::nondegenerate_at(std::span<const double> p0) const {
    return std::abs(det_small(hess_h(p0), n)) > 1e-10;
}

std::vector<double> IntegrableSpec::bordered_hessian(std::span<const double> p0) const {
    auto hs = hess_h(p0);
    auto g = grad_h(p0);
    const int m = n + 1;
    std::vector<double> out(static_cast<std::size_t>(m * m), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(i * m + j)] = hs[static_cast<std::size_t>(i * n + j)];
    for (int i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(i * m + n)] = g[static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(n * m + i)] = g[static_cast<std::size_t>(i)];
    }
    return out;
}

double IntegrableSpec::bordered_det(std::span<const double> p0) const {
    return det_small(bordered_hessian(p0), n + 1);
}

PerturbationSpec PerturbationSpec::angle_only(FourierTaylorSeries series) {
    if (series.action_degree() != 0)
        throw structural_error("angle_only: series must be action-independent");
    PerturbationSpec out;
    const int n = series.dimension();
    auto shared = std::make_shared<FourierTaylorSeries>(std::move(series));
    out.f = [shared](std::span<const double> q, std::span<const double>) {
        return shared->evaluate_at_zero_action(q);
    };
    out.grad_p = [n](std::span<const double>, std::span<const double>) {
        return std::vector<double>(static_cast<std::size_t>(n), 0.0);
    };
    out.hess_p = [n](std::span<const double>, std::span<const double>) {
        return std::vector<double>(static_cast<std::size_t>(n * n), 0.0);
    };
    return out;
}

ExpandResult expand_at_action(const IntegrableSpec& spec, const PerturbationSpec& f,
                              double epsilon, std::vector<double> omega0, double r, double h,
                              int K, const GevreyParams& gevrey, int node_degree) {
    const int n = spec.n;

    // Newton inversion of grad h on the window.
    auto action_of = [&spec, n](std::span<const double> omega) {
        std::vector<double> p(omega.begin(), omega.end());
        for (int it = 0; it < 60; ++it) {
            auto g = spec.grad_h(p);
            double res = 0.0;
            for (int i = 0; i < n; ++i) {
                g[static_cast<std::size_t>(i)] -= omega[static_cast<std::size_t>(i)];
                res = std::max(res, std::abs(g[static_cast<std::size_t>(i)]));
            }
            if (res <= 1e-14) return p;
            auto step = solve_linear(spec.hess_h(p), g);
            for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] -= step[static_cast<std::size_t>(i)];
        }
        auto g = spec.grad_h(p);
        double res = 0.0;
        for (int i = 0; i < n; ++i)
            res = std::max(res, std::abs(g[static_cast<std::size_t>(i)] - omega[static_cast<std::size_t>(i)]));
        if (res > 1e-10)
            throw precondition_error("expand_at_action: Newton inversion of grad h failed");
        return p;
    };

    HamiltonianSampler sampler;
    sampler.value = [&spec, &f, epsilon, action_of](std::span<const double> th,
                                                    std::span<const double> omega) {
        auto p = action_of(omega);
        return spec.h(p) + epsilon * f.f(th, p);
    };
    sampler.grad_I = [&f, epsilon, action_of](std::span<const double> th,
                                              std::span<const double> omega) {
        auto p = action_of(omega);
        auto g = f.grad_p(th, p);
        std::vector<double> out(omega.begin(), omega.end());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += epsilon * g[i];
        return out;
    };
    sampler.hess_I = [&spec, &f, epsilon, action_of](std::span<const double> th,
                                                     std::span<const double> omega) {
        auto p = action_of(omega);
        auto hs = spec.hess_h(p);
        auto hf = f.hess_p(th, p);
        for (std::size_t i = 0; i < hs.size(); ++i) hs[i] += epsilon * hf[i];
        return hs;
    };

    ExpandResult out{.H = decompose(sampler, std::move(omega0), r, h, K, gevrey, node_degree),
                     .epsilon_ham = 0.0,
                     .mu_wired = 0.0,
                     .eta_ham = 0.0};
    out.epsilon_ham = out.H.eps_measured();
    out.mu_wired = std::sqrt(out.epsilon_ham);
    out.eta_ham = out.H.eta_measured();
    return out;
}

ParamHamiltonian vector_field_embed(std::span<const FourierTaylorSeries> B,
                                    std::vector<double> omega0, double r, double h, int K,
                                    const GevreyParams& gevrey, int node_degree) {
    const int n = static_cast<int>(omega0.size());
    if (static_cast<int>(B.size()) != n)
        throw structural_error("vector_field_embed: B must have n components");
    ParamHamiltonian H{.n = n,
                       .K = K,
                       .r = r,
                       .h = h,
                       .gevrey = gevrey,
                       .omega0 = omega0,
                       .grid = ParamGrid(omega0, h, node_degree),
                       .nodes = {},
                       .vector_field_preset = true};
    for (int idx = 0; idx < H.grid.node_count(); ++idx) {
        NodeData nd(n, K);
        for (int i = 0; i < n; ++i)
            nd.B[static_cast<std::size_t>(i)] =
                add_scale(B[static_cast<std::size_t>(i)], FourierTaylorSeries(n, K, 0), 1.0, 0.0);
        H.nodes.push_back(std::move(nd));
    }
    return H;
}

void BessiSpec::validate() const {
    if (!(alpha >= 1.0)) throw structural_error("bessi: alpha must be >= 1");
    if (!(s > 0.0)) throw structural_error("bessi: s must be > 0");
    if (!(epsilon > 0.0 && epsilon <= 1.0)) throw structural_error("bessi: epsilon in (0, 1]");
    if (!(mu >= 0.0 && mu <= 1.0)) throw structural_error("bessi: mu in [0, 1]");
    if (k.size() != k_tilde.size()) throw structural_error("bessi: k / k_tilde size mismatch");
    long long dot = 0;
    for (std::size_t i = 0; i < k.size(); ++i)
        dot += static_cast<long long>(k[i]) * k_tilde[i];
    if (dot != 0) throw structural_error("bessi: k_tilde must be orthogonal to k");
    if (l1_norm(k_tilde) > l1_norm(k))
        throw structural_error("bessi: |k_tilde| must not exceed |k|");
}

double BessiSpec::nu() const {
    return std::exp(-s * alpha * std::pow(4.0 * l1_norm(k), 1.0 / alpha));
}

double BessiSpec::nu_tilde() const {
    return std::exp(-s * alpha * std::pow(4.0 * l1_norm(k_tilde), 1.0 / alpha));
}

BessiResult bessi_hamiltonian(const BessiSpec& spec) {
    spec.validate();
    const int n = static_cast<int>(spec.k.size());
    BessiResult out;
    out.nu = spec.nu();
    out.nu_tilde = spec.nu_tilde();

    // eps nu (1 - cos(k.theta)) (1 + mu nut cos(kt.theta)) expands into the
    // constant, kt, k and k +- kt cosine modes.
    const double a = spec.epsilon * out.nu;
    const double b = spec.mu * out.nu_tilde;
    int Kt = l1_norm(spec.k) + l1_norm(spec.k_tilde);
    FourierTaylorSeries F(n, Kt, 0);
    std::vector<int> z(static_cast<std::size_t>(n), 0);
    F.add_term(z, z, a, 0.0);
    if (b != 0.0) F.add_term(spec.k_tilde, z, a * b, 0.0);
    F.add_term(spec.k, z, -a, 0.0);
    if (b != 0.0) {
        std::vector<int> plus(static_cast<std::size_t>(n)), minus(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            plus[static_cast<std::size_t>(i)] = spec.k[static_cast<std::size_t>(i)] + spec.k_tilde[static_cast<std::size_t>(i)];
            minus[static_cast<std::size_t>(i)] = spec.k[static_cast<std::size_t>(i)] - spec.k_tilde[static_cast<std::size_t>(i)];
        }
        F.add_term(plus, z, -0.5 * a * b, 0.0);
        F.add_term(minus, z, -0.5 * a * b, 0.0);
    }
    out.F = std::move(F);
    out.norm = norm_trig_poly_2pi(out.F, GevreyParams(spec.alpha, spec.s)).value;
    out.ratio = out.norm / spec.epsilon;
    return out;
}

std::vector<ResonanceWitness> condition_C_alpha(std::span<const double> omega, double alpha,
                                                double s0, int horizon) {
    if (!(alpha >= 1.0)) throw structural_error("condition_C_alpha: alpha must be >= 1");
    if (s0 < 0.0) throw structural_error("condition_C_alpha: s0 must be >= 0");
    std::vector<ResonanceWitness> out;
    const int n = static_cast<int>(omega.size());
    // canonical half-lattice scan, shell by shell
    std::vector<int> k(static_cast<std::size_t>(n), 0);
    for (int size = 1; size <= horizon; ++size) {
        // restrict to the exact shell by requiring the full budget spent
        std::function<void(int, int, bool)> shell = [&](int pos, int remaining, bool lead) {
            if (pos == n - 1) {
                if (!lead && remaining == 0) return;
                if (!lead) {
                    k[static_cast<std::size_t>(pos)] = remaining;
                    double dot = 0.0;
                    for (int i = 0; i < n; ++i) dot += k[static_cast<std::size_t>(i)] * omega[static_cast<std::size_t>(i)];
                    double a = std::abs(dot);
                    double bound = std::exp(-s0 * alpha * std::pow(4.0 * size, 1.0 / alpha));
                    if (a > 0.0 && a <= bound) out.push_back({k, a, bound});
                    return;
                }
                for (int sign = -1; sign <= 1; sign += 2) {
                    if (remaining == 0 && sign < 0) continue;
                    k[static_cast<std::size_t>(pos)] = sign * remaining;
                    double dot = 0.0;
                    for (int i = 0; i < n; ++i) dot += k[static_cast<std::size_t>(i)] * omega[static_cast<std::size_t>(i)];
                    double a = std::abs(dot);
                    double bound = std::exp(-s0 * alpha * std::pow(4.0 * size, 1.0 / alpha));
                    if (a > 0.0 && a <= bound) out.push_back({k, a, bound});
                    if (remaining == 0) break;
                }
                return;
            }
            for (int mag = 0; mag <= remaining; ++mag) {
                if (mag == 0) {
                    k[static_cast<std::size_t>(pos)] = 0;
                    shell(pos + 1, remaining, lead);
                } else if (!lead) {
                    k[static_cast<std::size_t>(pos)] = mag;
                    shell(pos + 1, remaining - mag, true);
                } else {
                    for (int sign = -1; sign <= 1; sign += 2) {
                        k[static_cast<std::size_t>(pos)] = sign * mag;
                        shell(pos + 1, remaining - mag, true);
                    }
                }
            }
        };
        shell(0, size, false);
    }
    return out;
}

}  // namespace gkam
