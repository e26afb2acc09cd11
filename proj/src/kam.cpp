#include "gkam/kam.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

namespace gkam {

namespace {

void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min(threads, count));
    if (threads == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::mutex mu;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                int i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

// Fast multi-series evaluation at one angle point via per-dimension power
// tables of cis(2 pi theta_d). Every series must have modes within +-K.
class PointEval {
public:
    PointEval(int n, int K, std::span<const double> theta) : n_(n), K_(K) {
        tables_.resize(static_cast<std::size_t>(n));
        for (int d = 0; d < n; ++d) {
            auto& tab = tables_[static_cast<std::size_t>(d)];
            tab.resize(static_cast<std::size_t>(2 * K + 1));
            std::complex<double> unit(std::cos(two_pi * theta[d]), std::sin(two_pi * theta[d]));
            tab[static_cast<std::size_t>(K)] = 1.0;
            for (int k = 1; k <= K; ++k) {
                tab[static_cast<std::size_t>(K + k)] = tab[static_cast<std::size_t>(K + k - 1)] * unit;
                tab[static_cast<std::size_t>(K - k)] = std::conj(tab[static_cast<std::size_t>(K + k)]);
            }
        }
    }

    double eval(const FourierTaylorSeries& f) const {
        double total = 0.0;
        for (const auto& [key, amp] : f.terms()) {
            std::complex<double> ph = tables_[0][static_cast<std::size_t>(K_ + key.k[0])];
            for (int d = 1; d < n_; ++d)
                ph *= tables_[static_cast<std::size_t>(d)][static_cast<std::size_t>(K_ + key.k[d])];
            total += amp.c * ph.real() + amp.s * ph.imag();
        }
        return total;
    }

private:
    int n_, K_;
    std::vector<std::vector<std::complex<double>>> tables_;
};

std::vector<double> chebyshev_axis(int degree) {
    int m = degree + 1;
    std::vector<double> x(static_cast<std::size_t>(m));
    for (int t = 0; t < m; ++t)
        x[static_cast<std::size_t>(t)] = std::cos(M_PI * (2.0 * t + 1.0) / (2.0 * m));
    return x;
}

}  // namespace

ParamGrid::ParamGrid(std::vector<double> center, double half_width, int degree)
    : center_(std::move(center)), half_(half_width), degree_(degree) {
    if (degree_ < 1) throw structural_error("ParamGrid: degree must be >= 1");
    if (!(half_ > 0.0)) throw structural_error("ParamGrid: half width must be > 0");
    axis_ = chebyshev_axis(degree_);
    int m = degree_ + 1;
    weights_.resize(static_cast<std::size_t>(m));
    for (int t = 0; t < m; ++t)
        weights_[static_cast<std::size_t>(t)] =
            (t % 2 == 0 ? 1.0 : -1.0) * std::sin(M_PI * (2.0 * t + 1.0) / (2.0 * m));

    const int n = dimension();
    int count = 1;
    for (int d = 0; d < n; ++d) count *= m;
    nodes_.reserve(static_cast<std::size_t>(count));
    for (int flat = 0; flat < count; ++flat) {
        std::vector<double> node(static_cast<std::size_t>(n));
        int rem = flat;
        for (int d = n - 1; d >= 0; --d) {
            node[static_cast<std::size_t>(d)] =
                center_[static_cast<std::size_t>(d)] + half_ * axis_[static_cast<std::size_t>(rem % m)];
            rem /= m;
        }
        nodes_.push_back(std::move(node));
    }
}

double ParamGrid::interpolate(std::span<const double> node_values,
                              std::span<const double> point) const {
    const int n = dimension();
    const int m = degree_ + 1;
    if (static_cast<int>(node_values.size()) != node_count())
        throw structural_error("ParamGrid::interpolate: value count mismatch");

    // reduce one axis at a time (last axis varies fastest)
    std::vector<double> work(node_values.begin(), node_values.end());
    for (int d = n - 1; d >= 0; --d) {
        double x = (point[static_cast<std::size_t>(d)] - center_[static_cast<std::size_t>(d)]) / half_;
        // barycentric weights at x
        double num_cache = 0.0, den = 0.0;
        std::vector<double> coef(static_cast<std::size_t>(m));
        int exact = -1;
        for (int t = 0; t < m; ++t) {
            double dx = x - axis_[static_cast<std::size_t>(t)];
            if (std::abs(dx) < 1e-300) {
                exact = t;
                break;
            }
            coef[static_cast<std::size_t>(t)] = weights_[static_cast<std::size_t>(t)] / dx;
            den += coef[static_cast<std::size_t>(t)];
        }
        (void)num_cache;
        std::size_t blocks = work.size() / static_cast<std::size_t>(m);
        std::vector<double> reduced(blocks);
        for (std::size_t b = 0; b < blocks; ++b) {
            if (exact >= 0) {
                reduced[b] = work[b * static_cast<std::size_t>(m) + static_cast<std::size_t>(exact)];
            } else {
                double acc = 0.0;
                for (int t = 0; t < m; ++t)
                    acc += coef[static_cast<std::size_t>(t)] *
                           work[b * static_cast<std::size_t>(m) + static_cast<std::size_t>(t)];
                reduced[b] = acc / den;
            }
        }
        work.swap(reduced);
    }
    return work[0];
}

int sym_index(int n, int i, int j) {
    if (i > j) std::swap(i, j);
    // row-major upper triangle
    return i * n - i * (i - 1) / 2 + (j - i);
}

NodeData::NodeData(int n, int K) : A(n, K, 0) {
    B.assign(static_cast<std::size_t>(n), FourierTaylorSeries(n, K, 0));
    M.assign(static_cast<std::size_t>(n * (n + 1) / 2), FourierTaylorSeries(n, K, 0));
}

NodeData ParamHamiltonian::at(std::span<const double> omega) const {
    NodeData out(n, K);
    const int count = grid.node_count();
    std::vector<double> vals(static_cast<std::size_t>(count));

    for (int idx = 0; idx < count; ++idx) vals[static_cast<std::size_t>(idx)] = nodes[static_cast<std::size_t>(idx)].e;
    out.e = grid.interpolate(vals, omega);

    auto interp_series = [&](const std::function<const FourierTaylorSeries&(const NodeData&)>& pick)
        -> FourierTaylorSeries {
        // union of term keys across nodes
        std::map<TermKey, int> keys;
        for (const auto& nd : nodes)
            for (const auto& [key, amp] : pick(nd).terms()) keys.emplace(key, 0);
        FourierTaylorSeries s(n, K, 0);
        for (const auto& [key, unused] : keys) {
            for (int idx = 0; idx < count; ++idx)
                vals[static_cast<std::size_t>(idx)] =
                    pick(nodes[static_cast<std::size_t>(idx)]).amplitude(key.k, key.m).c;
            double c = grid.interpolate(vals, omega);
            for (int idx = 0; idx < count; ++idx)
                vals[static_cast<std::size_t>(idx)] =
                    pick(nodes[static_cast<std::size_t>(idx)]).amplitude(key.k, key.m).s;
            double sv = grid.interpolate(vals, omega);
            s.add_term(key.k, key.m, c, sv);
        }
        return s;
    };

    out.A = interp_series([](const NodeData& nd) -> const FourierTaylorSeries& { return nd.A; });
    for (int i = 0; i < n; ++i)
        out.B[static_cast<std::size_t>(i)] = interp_series(
            [i](const NodeData& nd) -> const FourierTaylorSeries& { return nd.B[static_cast<std::size_t>(i)]; });
    for (std::size_t mi = 0; mi < out.M.size(); ++mi)
        out.M[mi] = interp_series(
            [mi](const NodeData& nd) -> const FourierTaylorSeries& { return nd.M[mi]; });
    return out;
}

FourierTaylorSeries ParamHamiltonian::assemble(int node_index) const {
    const NodeData& nd = nodes.at(static_cast<std::size_t>(node_index));
    const auto& omega = grid.nodes()[static_cast<std::size_t>(node_index)];
    FourierTaylorSeries H(n, K, 2);
    std::vector<int> z(static_cast<std::size_t>(n), 0);
    H.add_term(z, z, nd.e, 0.0);
    for (const auto& [key, amp] : nd.A.terms()) H.add_term(key.k, z, amp.c, amp.s);
    for (int i = 0; i < n; ++i) {
        std::vector<int> m(static_cast<std::size_t>(n), 0);
        m[static_cast<std::size_t>(i)] = 1;
        H.add_term(z, m, omega[static_cast<std::size_t>(i)], 0.0);
        for (const auto& [key, amp] : nd.B[static_cast<std::size_t>(i)].terms())
            H.add_term(key.k, m, amp.c, amp.s);
    }
    for (int i = 0; i < n; ++i) {
        for (int j = i; j < n; ++j) {
            std::vector<int> m(static_cast<std::size_t>(n), 0);
            m[static_cast<std::size_t>(i)] += 1;
            m[static_cast<std::size_t>(j)] += 1;
            double factor = (i == j) ? 1.0 : 2.0;
            for (const auto& [key, amp] : nd.M[static_cast<std::size_t>(sym_index(n, i, j))].terms())
                H.add_term(key.k, m, factor * amp.c, factor * amp.s);
        }
    }
    return H;
}

double ParamHamiltonian::eps_measured() const {
    double m = 0.0;
    for (const auto& nd : nodes) m = std::max(m, gevrey_norm(nd.A, gevrey));
    return m;
}

double ParamHamiltonian::mu_measured() const {
    double m = 0.0;
    for (const auto& nd : nodes) m = std::max(m, norm_vector(nd.B, gevrey).value);
    return m;
}

double ParamHamiltonian::eta_measured() const {
    double m = 0.0;
    for (const auto& nd : nodes) {
        std::vector<FourierTaylorSeries> hess;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                hess.push_back(add_scale(nd.M[static_cast<std::size_t>(sym_index(n, i, j))],
                                         nd.M[static_cast<std::size_t>(sym_index(n, i, j))], 1.0, 1.0));
        m = std::max(m, norm_vector(hess, gevrey).value);
    }
    return m;
}

ParamHamiltonian decompose(const HamiltonianSampler& H, std::vector<double> omega0, double r,
                           double h, int K, const GevreyParams& gevrey, int node_degree,
                           int grid_N, double alias_budget) {
    const int n = static_cast<int>(omega0.size());
    if (grid_N == 0) grid_N = 2 * K + 4;
    ParamHamiltonian out{.n = n,
                         .K = K,
                         .r = r,
                         .h = h,
                         .gevrey = gevrey,
                         .omega0 = omega0,
                         .grid = ParamGrid(omega0, h, node_degree),
                         .nodes = {},
                         .vector_field_preset = false};
    AngleGrid grid(std::vector<int>(static_cast<std::size_t>(n), grid_N));
    for (const auto& omega : out.grid.nodes()) {
        NodeData nd(n, K);
        auto vals = grid.sample([&](std::span<const double> th) { return H.value(th, omega); });
        RefitResult v = grid_refit(grid, vals, K);
        if (v.alias_residual > alias_budget)
            throw precondition_error("decompose: aliasing residual above budget");
        nd.e = v.series.amplitude(std::vector<int>(static_cast<std::size_t>(n), 0),
                                  std::vector<int>(static_cast<std::size_t>(n), 0)).c;
        nd.A = add_scale(v.series, FourierTaylorSeries::constant(n, nd.e), 1.0, -1.0);

        std::vector<std::vector<double>> grad_samples(static_cast<std::size_t>(n));
        for (auto& gs : grad_samples) gs.resize(grid.point_count());
        std::vector<std::vector<double>> hess_samples(static_cast<std::size_t>(n * n));
        for (auto& hs : hess_samples) hs.resize(grid.point_count());
        std::vector<double> th(static_cast<std::size_t>(n));
        for (std::size_t pt = 0; pt < grid.point_count(); ++pt) {
            grid.point_into(pt, th);
            auto g = H.grad_I(th, omega);
            auto hess = H.hess_I(th, omega);
            for (int i = 0; i < n; ++i) grad_samples[static_cast<std::size_t>(i)][pt] = g[static_cast<std::size_t>(i)];
            for (int ij = 0; ij < n * n; ++ij) hess_samples[static_cast<std::size_t>(ij)][pt] = hess[static_cast<std::size_t>(ij)];
        }
        for (int i = 0; i < n; ++i) {
            RefitResult gfit = grid_refit(grid, grad_samples[static_cast<std::size_t>(i)], K);
            if (gfit.alias_residual > alias_budget)
                throw precondition_error("decompose: gradient aliasing above budget");
            nd.B[static_cast<std::size_t>(i)] =
                add_scale(gfit.series, FourierTaylorSeries::constant(n, omega[static_cast<std::size_t>(i)]), 1.0, -1.0);
        }
        for (int i = 0; i < n; ++i) {
            for (int j = i; j < n; ++j) {
                RefitResult hfit = grid_refit(grid, hess_samples[static_cast<std::size_t>(i * n + j)], K);
                if (hfit.alias_residual > alias_budget)
                    throw precondition_error("decompose: hessian aliasing above budget");
                nd.M[static_cast<std::size_t>(sym_index(n, i, j))] =
                    add_scale(hfit.series, hfit.series, 0.5, 0.0);
            }
        }
        out.nodes.push_back(std::move(nd));
    }
    return out;
}

TransformSeries TransformSeries::identity(int n, int K) {
    TransformSeries t;
    t.E.assign(static_cast<std::size_t>(n), FourierTaylorSeries(n, K, 0));
    t.F.assign(static_cast<std::size_t>(n * n), FourierTaylorSeries(n, K, 0));
    t.G.assign(static_cast<std::size_t>(n), FourierTaylorSeries(n, K, 0));
    return t;
}

void apply_transform(const TransformSeries& T, std::span<const double> theta_in,
                     std::span<const double> I_in, std::span<double> theta_out,
                     std::span<double> I_out) {
    const int n = static_cast<int>(theta_in.size());
    for (int i = 0; i < n; ++i) {
        theta_out[static_cast<std::size_t>(i)] =
            theta_in[static_cast<std::size_t>(i)] + T.E[static_cast<std::size_t>(i)].evaluate_at_zero_action(theta_in);
        double acc = I_in[static_cast<std::size_t>(i)] + T.G[static_cast<std::size_t>(i)].evaluate_at_zero_action(theta_in);
        for (int j = 0; j < n; ++j)
            acc += T.F[static_cast<std::size_t>(i * n + j)].evaluate_at_zero_action(theta_in) * I_in[static_cast<std::size_t>(j)];
        I_out[static_cast<std::size_t>(i)] = acc;
    }
}

FourierTaylorSeries cohomological_solve(const FourierTaylorSeries& A, const RationalVector& v) {
    const int n = A.dimension();
    if (v.dimension() != n) throw structural_error("cohomological_solve: dimension mismatch");
    auto vd = v.value();
    auto qv = v.integer_vector();
    FourierTaylorSeries C(n, A.truncation(), 0);
    for (const auto& [key, amp] : A.terms()) {
        BigInt dot_int = 0;
        for (int i = 0; i < n; ++i) dot_int += BigInt(key.k[i]) * qv[static_cast<std::size_t>(i)];
        if (dot_int == 0) continue;  // resonant part stays in the average
        double kv = 0.0;
        for (int i = 0; i < n; ++i) kv += key.k[i] * vd[static_cast<std::size_t>(i)];
        double denom = two_pi * kv;
        C.add_term(key.k, key.m, -amp.s / denom, amp.c / denom);
    }
    return C;
}

double cohomological_residual(const FourierTaylorSeries& C, const FourierTaylorSeries& A,
                              const RationalVector& v) {
    const int n = A.dimension();
    auto vd = v.value();
    auto N = add_scale(FourierTaylorSeries::constant(n, 1.0),
                       FourierTaylorSeries::linear_action(n, vd), 1.0, 1.0);
    auto lhs = poisson_bracket(C, N);
    auto avg = average_along_integer(A, v.integer_vector_ll());
    auto rhs = add_scale(A, avg, 1.0, -1.0);
    auto diff = add_scale(lhs, rhs, 1.0, -1.0);
    return diff.max_amplitude();
}

FlowResult flow_map(const FourierTaylorSeries& C, std::span<const FourierTaylorSeries> D,
                    double t, const GevreyParams& gevrey, double sigma, const FlowOptions& opt) {
    const int n = C.dimension();
    const int K = C.truncation();
    FlowResult out;

    double nd = norm_vector(D, gevrey).value;
    out.smallness_ratio = nd / std::pow(sigma, gevrey.alpha);
    if (opt.enforce_smallness && out.smallness_ratio > opt.smallness_constant) {
        std::ostringstream os;
        os << "flow_map: |D| smallness violated (ratio " << out.smallness_ratio << ")";
        throw precondition_error(os.str());
    }

    // dC[a] = d_a C, dD[a*n + c] = d_a D_c
    std::vector<FourierTaylorSeries> dC, dD;
    for (int a = 0; a < n; ++a) dC.push_back(partial_derivative(C, Var::angle, a));
    for (int a = 0; a < n; ++a)
        for (int c = 0; c < n; ++c)
            dD.push_back(partial_derivative(D[static_cast<std::size_t>(c)], Var::angle, a));

    int N = opt.grid_N > 0 ? opt.grid_N : 2 * K + 4;
    AngleGrid grid(std::vector<int>(static_cast<std::size_t>(n), N));
    const std::size_t P = grid.point_count();
    const int steps = std::max(1, static_cast<int>(std::ceil(std::abs(t) * opt.ode_steps)));
    const double dt = t / steps;

    // state per point: theta(n), F(n*n), G(n)
    const int sdim = n + n * n + n;
    std::vector<double> state(P * static_cast<std::size_t>(sdim));
    std::vector<double> theta0(P * static_cast<std::size_t>(n));
    std::vector<double> th(static_cast<std::size_t>(n));
    for (std::size_t pt = 0; pt < P; ++pt) {
        grid.point_into(pt, th);
        for (int i = 0; i < n; ++i) {
            state[pt * static_cast<std::size_t>(sdim) + static_cast<std::size_t>(i)] = th[static_cast<std::size_t>(i)];
            theta0[pt * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)] = th[static_cast<std::size_t>(i)];
        }
    }

    // Simpson accumulation of D along the trajectory for the defect of the
    // angle-flow fixed point E = int D(theta + E).
    std::vector<double> quad(P * static_cast<std::size_t>(n), 0.0);

    std::vector<double> k1(static_cast<std::size_t>(sdim)), k2(static_cast<std::size_t>(sdim)),
        k3(static_cast<std::size_t>(sdim)), k4(static_cast<std::size_t>(sdim)), tmp(static_cast<std::size_t>(sdim));
    std::vector<double> Dval(static_cast<std::size_t>(n)), dDval(static_cast<std::size_t>(n * n)),
        dCval(static_cast<std::size_t>(n));

    auto rhs = [&](const double* s, double* ds) {
        PointEval ev(n, K, std::span<const double>(s, static_cast<std::size_t>(n)));
        for (int i = 0; i < n; ++i) Dval[static_cast<std::size_t>(i)] = ev.eval(D[static_cast<std::size_t>(i)]);
        for (int a = 0; a < n; ++a) dCval[static_cast<std::size_t>(a)] = ev.eval(dC[static_cast<std::size_t>(a)]);
        for (int ac = 0; ac < n * n; ++ac) dDval[static_cast<std::size_t>(ac)] = ev.eval(dD[static_cast<std::size_t>(ac)]);
        const double* F = s + n;
        const double* G = s + n + n * n;
        for (int i = 0; i < n; ++i) ds[i] = Dval[static_cast<std::size_t>(i)];
        // dF_{ab} = -sum_c d_a D_c (delta_{cb} + F_{cb})
        for (int a = 0; a < n; ++a) {
            for (int b = 0; b < n; ++b) {
                double acc = dDval[static_cast<std::size_t>(a * n + b)];
                for (int c = 0; c < n; ++c)
                    acc += dDval[static_cast<std::size_t>(a * n + c)] * F[c * n + b];
                ds[n + a * n + b] = -acc;
            }
        }
        // dG_a = -d_a C - sum_c d_a D_c G_c
        for (int a = 0; a < n; ++a) {
            double acc = dCval[static_cast<std::size_t>(a)];
            for (int c = 0; c < n; ++c) acc += dDval[static_cast<std::size_t>(a * n + c)] * G[c];
            ds[n + n * n + a] = -acc;
        }
    };

    for (std::size_t pt = 0; pt < P; ++pt) {
        double* s = state.data() + pt * static_cast<std::size_t>(sdim);
        double* qacc = quad.data() + pt * static_cast<std::size_t>(n);
        for (int step = 0; step < steps; ++step) {
            rhs(s, k1.data());
            // Simpson weights over the uniform substeps (composite; endpoints
            // get weight 1, interior alternate 4/2). k1 holds D(theta_step).
            double w = (step == 0) ? 1.0 : (step % 2 == 1 ? 4.0 : 2.0);
            for (int i = 0; i < n; ++i) qacc[static_cast<std::size_t>(i)] += w * k1[static_cast<std::size_t>(i)];
            for (int i = 0; i < sdim; ++i) tmp[static_cast<std::size_t>(i)] = s[i] + 0.5 * dt * k1[static_cast<std::size_t>(i)];
            rhs(tmp.data(), k2.data());
            for (int i = 0; i < sdim; ++i) tmp[static_cast<std::size_t>(i)] = s[i] + 0.5 * dt * k2[static_cast<std::size_t>(i)];
            rhs(tmp.data(), k3.data());
            for (int i = 0; i < sdim; ++i) tmp[static_cast<std::size_t>(i)] = s[i] + dt * k3[static_cast<std::size_t>(i)];
            rhs(tmp.data(), k4.data());
            for (int i = 0; i < sdim; ++i)
                s[i] += dt / 6.0 * (k1[static_cast<std::size_t>(i)] + 2.0 * k2[static_cast<std::size_t>(i)] +
                                    2.0 * k3[static_cast<std::size_t>(i)] + k4[static_cast<std::size_t>(i)]);
        }
        // final endpoint of the Simpson rule
        rhs(s, k1.data());
        for (int i = 0; i < n; ++i) qacc[static_cast<std::size_t>(i)] += k1[static_cast<std::size_t>(i)];
    }

    // refits
    out.map.E.clear();
    out.map.F.clear();
    out.map.G.clear();
    std::vector<double> samples(P);
    auto refit_component = [&](int offset, bool relative_theta, int comp) {
        for (std::size_t pt = 0; pt < P; ++pt) {
            double v = state[pt * static_cast<std::size_t>(sdim) + static_cast<std::size_t>(offset)];
            if (relative_theta) v -= theta0[pt * static_cast<std::size_t>(n) + static_cast<std::size_t>(comp)];
            samples[pt] = v;
        }
        RefitResult fit = grid_refit(grid, samples, K);
        out.alias_residual = std::max(out.alias_residual, fit.alias_residual);
        return std::move(fit.series);
    };
    for (int i = 0; i < n; ++i) out.map.E.push_back(refit_component(i, true, i));
    for (int ab = 0; ab < n * n; ++ab) out.map.F.push_back(refit_component(n + ab, false, 0));
    for (int i = 0; i < n; ++i) out.map.G.push_back(refit_component(n + n * n + i, false, 0));

    // Picard defect: E(theta0) - int_0^t D(traj) dt, Simpson over substeps.
    if (steps % 2 == 0) {
        for (std::size_t pt = 0; pt < P; ++pt) {
            for (int i = 0; i < n; ++i) {
                double integral = quad[pt * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)] * dt / 3.0;
                double e_val = state[pt * static_cast<std::size_t>(sdim) + static_cast<std::size_t>(i)] -
                               theta0[pt * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)];
                out.picard_residual = std::max(out.picard_residual, std::abs(e_val - integral));
            }
        }
    }
    return out;
}

double symplectic_deviation(const TransformSeries& T, int samples, std::uint64_t seed) {
    const int n = static_cast<int>(T.E.size());
    std::vector<std::vector<FourierTaylorSeries>> dE(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            dE[static_cast<std::size_t>(i)].push_back(partial_derivative(T.E[static_cast<std::size_t>(i)], Var::angle, j));

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    double worst = 0.0;
    std::vector<double> th(static_cast<std::size_t>(n));
    for (int s = 0; s < samples; ++s) {
        for (auto& x : th) x = ud(rng);
        // block triangular Jacobian: det = det(Id + grad E) det(Id + F)
        std::vector<double> J1(static_cast<std::size_t>(n * n)), J2(static_cast<std::size_t>(n * n));
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                J1[static_cast<std::size_t>(i * n + j)] =
                    (i == j ? 1.0 : 0.0) + dE[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].evaluate_at_zero_action(th);
                J2[static_cast<std::size_t>(i * n + j)] =
                    (i == j ? 1.0 : 0.0) + T.F[static_cast<std::size_t>(i * n + j)].evaluate_at_zero_action(th);
            }
        }
        auto det = [n](const std::vector<double>& m) {
            if (n == 1) return m[0];
            if (n == 2) return m[0] * m[3] - m[1] * m[2];
            return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                   m[2] * (m[3] * m[7] - m[4] * m[6]);
        };
        worst = std::max(worst, std::abs(det(J1) * det(J2) - 1.0));
    }
    return worst;
}

namespace {

// Composition T_out after T_in on an angle grid, refit at K:
//   E(theta) = E_in + E_out(theta + E_in)
//   F(theta) = F_out(theta') + F_in + F_out(theta') F_in
//   G(theta) = G_in + F_out(theta') G_in + G_out(theta')
struct ComposeResult {
    TransformSeries map;
    double alias = 0.0;
};

ComposeResult compose_transforms(const TransformSeries& outer, const TransformSeries& inner,
                                 int n, int K, int grid_N) {
    AngleGrid grid(std::vector<int>(static_cast<std::size_t>(n), grid_N));
    const std::size_t P = grid.point_count();
    std::vector<std::vector<double>> sE(static_cast<std::size_t>(n), std::vector<double>(P));
    std::vector<std::vector<double>> sF(static_cast<std::size_t>(n * n), std::vector<double>(P));
    std::vector<std::vector<double>> sG(static_cast<std::size_t>(n), std::vector<double>(P));

    std::vector<double> th(static_cast<std::size_t>(n)), thp(static_cast<std::size_t>(n));
    std::vector<double> Ein(static_cast<std::size_t>(n)), Gin(static_cast<std::size_t>(n)),
        Eout(static_cast<std::size_t>(n)), Gout(static_cast<std::size_t>(n));
    std::vector<double> Fin(static_cast<std::size_t>(n * n)), Fout(static_cast<std::size_t>(n * n));
    for (std::size_t pt = 0; pt < P; ++pt) {
        grid.point_into(pt, th);
        PointEval ev_in(n, K, th);
        for (int i = 0; i < n; ++i) Ein[static_cast<std::size_t>(i)] = ev_in.eval(inner.E[static_cast<std::size_t>(i)]);
        for (int i = 0; i < n; ++i) Gin[static_cast<std::size_t>(i)] = ev_in.eval(inner.G[static_cast<std::size_t>(i)]);
        for (int ab = 0; ab < n * n; ++ab) Fin[static_cast<std::size_t>(ab)] = ev_in.eval(inner.F[static_cast<std::size_t>(ab)]);
        for (int i = 0; i < n; ++i) thp[static_cast<std::size_t>(i)] = th[static_cast<std::size_t>(i)] + Ein[static_cast<std::size_t>(i)];
        PointEval ev_out(n, K, thp);
        for (int i = 0; i < n; ++i) Eout[static_cast<std::size_t>(i)] = ev_out.eval(outer.E[static_cast<std::size_t>(i)]);
        for (int i = 0; i < n; ++i) Gout[static_cast<std::size_t>(i)] = ev_out.eval(outer.G[static_cast<std::size_t>(i)]);
        for (int ab = 0; ab < n * n; ++ab) Fout[static_cast<std::size_t>(ab)] = ev_out.eval(outer.F[static_cast<std::size_t>(ab)]);

        for (int i = 0; i < n; ++i) {
            sE[static_cast<std::size_t>(i)][pt] = Ein[static_cast<std::size_t>(i)] + Eout[static_cast<std::size_t>(i)];
            double g = Gin[static_cast<std::size_t>(i)] + Gout[static_cast<std::size_t>(i)];
            for (int c = 0; c < n; ++c)
                g += Fout[static_cast<std::size_t>(i * n + c)] * Gin[static_cast<std::size_t>(c)];
            sG[static_cast<std::size_t>(i)][pt] = g;
        }
        for (int a = 0; a < n; ++a) {
            for (int b = 0; b < n; ++b) {
                double f = Fout[static_cast<std::size_t>(a * n + b)] + Fin[static_cast<std::size_t>(a * n + b)];
                for (int c = 0; c < n; ++c)
                    f += Fout[static_cast<std::size_t>(a * n + c)] * Fin[static_cast<std::size_t>(c * n + b)];
                sF[static_cast<std::size_t>(a * n + b)][pt] = f;
            }
        }
    }

    ComposeResult out;
    out.map.E.clear();
    for (int i = 0; i < n; ++i) {
        RefitResult fit = grid_refit(grid, sE[static_cast<std::size_t>(i)], K);
        out.alias = std::max(out.alias, fit.alias_residual);
        out.map.E.push_back(std::move(fit.series));
    }
    for (int ab = 0; ab < n * n; ++ab) {
        RefitResult fit = grid_refit(grid, sF[static_cast<std::size_t>(ab)], K);
        out.alias = std::max(out.alias, fit.alias_residual);
        out.map.F.push_back(std::move(fit.series));
    }
    for (int i = 0; i < n; ++i) {
        RefitResult fit = grid_refit(grid, sG[static_cast<std::size_t>(i)], K);
        out.alias = std::max(out.alias, fit.alias_residual);
        out.map.G.push_back(std::move(fit.series));
    }
    return out;
}

bool transform_is_identity(const TransformSeries& T) {
    for (const auto& s : T.E)
        if (s.term_count()) return false;
    for (const auto& s : T.F)
        if (s.term_count()) return false;
    for (const auto& s : T.G)
        if (s.term_count()) return false;
    return true;
}

// Exact-in-I recomposition of H (data at parameter omega) through the
// composed map, decomposed against the target parameter y.
struct RecomposeOut {
    NodeData data;
    double alias = 0.0;
};

RecomposeOut recompose(const NodeData& nd, std::span<const double> omega,
                       std::span<const double> y, const TransformSeries& T, int n, int K,
                       int grid_N, double prune_rel) {
    AngleGrid grid(std::vector<int>(static_cast<std::size_t>(n), grid_N));
    const std::size_t P = grid.point_count();
    std::vector<double> c0(P);
    std::vector<std::vector<double>> lin(static_cast<std::size_t>(n), std::vector<double>(P));
    std::vector<std::vector<double>> quad(static_cast<std::size_t>(n * (n + 1) / 2),
                                          std::vector<double>(P));

    std::vector<double> th(static_cast<std::size_t>(n)), thp(static_cast<std::size_t>(n));
    std::vector<double> Ev(static_cast<std::size_t>(n)), Gv(static_cast<std::size_t>(n)),
        Bv(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n));
    std::vector<double> Fv(static_cast<std::size_t>(n * n)), Mv(static_cast<std::size_t>(n * n)),
        MG(static_cast<std::size_t>(n));
    for (std::size_t pt = 0; pt < P; ++pt) {
        grid.point_into(pt, th);
        PointEval ev(n, K, th);
        for (int i = 0; i < n; ++i) Ev[static_cast<std::size_t>(i)] = ev.eval(T.E[static_cast<std::size_t>(i)]);
        for (int i = 0; i < n; ++i) Gv[static_cast<std::size_t>(i)] = ev.eval(T.G[static_cast<std::size_t>(i)]);
        for (int ab = 0; ab < n * n; ++ab) Fv[static_cast<std::size_t>(ab)] = ev.eval(T.F[static_cast<std::size_t>(ab)]);
        for (int i = 0; i < n; ++i) thp[static_cast<std::size_t>(i)] = th[static_cast<std::size_t>(i)] + Ev[static_cast<std::size_t>(i)];
        PointEval evp(n, K, thp);
        double Av = evp.eval(nd.A);
        for (int i = 0; i < n; ++i) Bv[static_cast<std::size_t>(i)] = evp.eval(nd.B[static_cast<std::size_t>(i)]);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                Mv[static_cast<std::size_t>(i * n + j)] =
                    evp.eval(nd.M[static_cast<std::size_t>(sym_index(n, i, j))]);

        for (int i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += Mv[static_cast<std::size_t>(i * n + j)] * Gv[static_cast<std::size_t>(j)];
            MG[static_cast<std::size_t>(i)] = acc;
        }
        double cval = nd.e + Av;
        for (int i = 0; i < n; ++i)
            cval += (omega[static_cast<std::size_t>(i)] + Bv[static_cast<std::size_t>(i)] + MG[static_cast<std::size_t>(i)]) * Gv[static_cast<std::size_t>(i)];
        c0[pt] = cval;

        // w = omega + B(theta') + 2 M G; lin = (Id + F)^T w
        for (int i = 0; i < n; ++i)
            w[static_cast<std::size_t>(i)] = omega[static_cast<std::size_t>(i)] + Bv[static_cast<std::size_t>(i)] + 2.0 * MG[static_cast<std::size_t>(i)];
        for (int a = 0; a < n; ++a) {
            double acc = w[static_cast<std::size_t>(a)];
            for (int b = 0; b < n; ++b)
                acc += Fv[static_cast<std::size_t>(b * n + a)] * w[static_cast<std::size_t>(b)];
            lin[static_cast<std::size_t>(a)][pt] = acc;
        }
        // quad = (Id + F)^T M (Id + F)
        for (int a = 0; a < n; ++a) {
            for (int b = a; b < n; ++b) {
                double acc = 0.0;
                for (int c = 0; c < n; ++c) {
                    double left = (c == a ? 1.0 : 0.0) + Fv[static_cast<std::size_t>(c * n + a)];
                    for (int d = 0; d < n; ++d) {
                        double right = (d == b ? 1.0 : 0.0) + Fv[static_cast<std::size_t>(d * n + b)];
                        acc += left * Mv[static_cast<std::size_t>(c * n + d)] * right;
                    }
                }
                quad[static_cast<std::size_t>(sym_index(n, a, b))][pt] = acc;
            }
        }
    }

    RecomposeOut out;
    out.data = NodeData(n, K);
    RefitResult cfit = grid_refit(grid, c0, K);
    out.alias = std::max(out.alias, cfit.alias_residual);
    std::vector<int> z(static_cast<std::size_t>(n), 0);
    out.data.e = cfit.series.amplitude(z, z).c;
    out.data.A = add_scale(cfit.series, FourierTaylorSeries::constant(n, out.data.e), 1.0, -1.0);
    for (int i = 0; i < n; ++i) {
        RefitResult lfit = grid_refit(grid, lin[static_cast<std::size_t>(i)], K);
        out.alias = std::max(out.alias, lfit.alias_residual);
        out.data.B[static_cast<std::size_t>(i)] = add_scale(
            lfit.series, FourierTaylorSeries::constant(n, y[static_cast<std::size_t>(i)]), 1.0, -1.0);
    }
    for (std::size_t mi = 0; mi < out.data.M.size(); ++mi) {
        RefitResult mfit = grid_refit(grid, quad[mi], K);
        out.alias = std::max(out.alias, mfit.alias_residual);
        out.data.M[mi] = std::move(mfit.series);
    }
    double scaleA = out.data.A.max_amplitude();
    out.data.A.prune(prune_rel * scaleA);
    for (auto& b : out.data.B) b.prune(prune_rel * b.max_amplitude());
    return out;
}

// Coefficientwise interpolation of per-node transform series at a parameter.
TransformSeries interp_transform(const ParamGrid& grid, const std::vector<TransformSeries>& ts,
                                 std::span<const double> point, int n, int K) {
    TransformSeries out = TransformSeries::identity(n, K);
    std::vector<double> vals(static_cast<std::size_t>(grid.node_count()));
    auto interp_one = [&](const std::function<const FourierTaylorSeries&(const TransformSeries&)>&
                              pick) -> FourierTaylorSeries {
        std::map<TermKey, int> keys;
        for (const auto& t : ts)
            for (const auto& [key, amp] : pick(t).terms()) keys.emplace(key, 0);
        FourierTaylorSeries s(n, K, 0);
        for (const auto& [key, unused] : keys) {
            for (int idx = 0; idx < grid.node_count(); ++idx)
                vals[static_cast<std::size_t>(idx)] =
                    pick(ts[static_cast<std::size_t>(idx)]).amplitude(key.k, key.m).c;
            double c = grid.interpolate(vals, point);
            for (int idx = 0; idx < grid.node_count(); ++idx)
                vals[static_cast<std::size_t>(idx)] =
                    pick(ts[static_cast<std::size_t>(idx)]).amplitude(key.k, key.m).s;
            double sv = grid.interpolate(vals, point);
            s.add_term(key.k, key.m, c, sv);
        }
        return s;
    };
    for (int c = 0; c < n; ++c)
        out.E[static_cast<std::size_t>(c)] =
            interp_one([c](const TransformSeries& t) -> const FourierTaylorSeries& {
                return t.E[static_cast<std::size_t>(c)];
            });
    for (int c = 0; c < n * n; ++c)
        out.F[static_cast<std::size_t>(c)] =
            interp_one([c](const TransformSeries& t) -> const FourierTaylorSeries& {
                return t.F[static_cast<std::size_t>(c)];
            });
    for (int c = 0; c < n; ++c)
        out.G[static_cast<std::size_t>(c)] =
            interp_one([c](const TransformSeries& t) -> const FourierTaylorSeries& {
                return t.G[static_cast<std::size_t>(c)];
            });
    return out;
}

std::vector<double> varphi_eval(const ParamGrid& grid,
                                const std::vector<std::vector<double>>& avgB,
                                std::span<const double> y, double tol, double* residual) {
    const int n = grid.dimension();
    std::vector<double> omega(y.begin(), y.end());
    std::vector<double> vals(static_cast<std::size_t>(grid.node_count()));
    auto bbar = [&](std::span<const double> at, int comp) {
        for (int idx = 0; idx < grid.node_count(); ++idx)
            vals[static_cast<std::size_t>(idx)] = avgB[static_cast<std::size_t>(idx)][static_cast<std::size_t>(comp)];
        return grid.interpolate(vals, at);
    };
    for (int it = 0; it < 200; ++it) {
        double delta = 0.0;
        std::vector<double> next(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            next[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] - bbar(omega, i);
            delta = std::max(delta, std::abs(next[static_cast<std::size_t>(i)] - omega[static_cast<std::size_t>(i)]));
        }
        omega = std::move(next);
        if (delta <= tol) break;
    }
    if (residual) {
        double r = 0.0;
        for (int i = 0; i < n; ++i)
            r = std::max(r, std::abs(omega[static_cast<std::size_t>(i)] + bbar(omega, i) - y[static_cast<std::size_t>(i)]));
        *residual = r;
    }
    return omega;
}

}  // namespace

KamStepResult kam_step(const ParamHamiltonian& H, const FrequencyProfile& profile,
                       const Envelope& env, double Q, double sigma, double delta,
                       double eps_declared, double mu_declared, const KamConstants& constants,
                       const KamOptions& opt) {
    const int n = H.n;
    const int K = H.K;
    const int grid_N = opt.grid_N > 0 ? opt.grid_N : 2 * K + 4;
    KamStepResult out{.next = H, .transform = {}, .diag = {}};
    StepDiagnostics& diag = out.diag;
    diag.Q = Q;
    diag.sigma = sigma;
    diag.delta = delta;
    diag.eps_declared = eps_declared;
    diag.mu_declared = mu_declared;
    diag.eps_before = H.eps_measured();
    diag.mu_before = H.mu_measured();

    // precondition checks with explicit constants
    double eta = H.eta_measured();
    double DeltaQ = env.delta(Q);
    auto check = [&](const std::string& name, double lhs, double rhs) {
        PreconditionCheck c{name, lhs, rhs, rhs > 0 ? lhs / rhs : std::numeric_limits<double>::infinity(),
                            lhs <= rhs};
        diag.preconditions.push_back(c);
        if (!c.pass && constants.enforce) {
            std::ostringstream os;
            os << "kam_step: precondition '" << name << "' violated (lhs " << lhs << ", rhs "
               << rhs << ")";
            throw precondition_error(os.str());
        }
    };
    check("sqrt(eps) <= mu", std::sqrt(eps_declared), mu_declared);
    check("mu <= h/2", mu_declared, H.h / 2.0);
    check("sqrt(eps) <= r", std::sqrt(eps_declared), H.r);
    check("h <= c/(Q Psi(Q))", H.h, constants.c_cond_h / DeltaQ);
    check("r mu <= c delta/(Q Psi(Q))", H.r * mu_declared, constants.c_cond_rmu * delta / DeltaQ);
    check("(1+eta) <= c Q sigma^alpha", 1.0 + eta,
          constants.c_cond_eta * Q * std::pow(sigma, H.gevrey.alpha));

    ApproxBasis basis = simultaneous_approx(profile, Q, env);

    // frequency-map data on the current grid: phi(omega) = omega + [B](omega)
    std::vector<std::vector<double>> avgB(static_cast<std::size_t>(H.grid.node_count()));
    std::vector<int> z(static_cast<std::size_t>(n), 0);
    for (int idx = 0; idx < H.grid.node_count(); ++idx) {
        avgB[static_cast<std::size_t>(idx)].resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            avgB[static_cast<std::size_t>(idx)][static_cast<std::size_t>(i)] =
                H.nodes[static_cast<std::size_t>(idx)].B[static_cast<std::size_t>(i)].amplitude(z, z).c;
    }
    out.transform.avgB_prev_nodes = avgB;

    ParamGrid new_grid(H.omega0, H.h / 2.0, H.grid.degree());
    const int new_count = new_grid.node_count();
    out.transform.per_node.resize(static_cast<std::size_t>(new_count));
    out.transform.varphi_at_new_nodes.resize(static_cast<std::size_t>(new_count));
    std::vector<NodeData> new_nodes(static_cast<std::size_t>(new_count));

    std::mutex diag_mu;
    parallel_for(new_count, opt.threads, [&](int idx) {
        const auto& y = new_grid.nodes()[static_cast<std::size_t>(idx)];
        double inv_res = 0.0;
        auto omega = varphi_eval(H.grid, avgB, y, 1e-13, &inv_res);
        NodeData data = H.at(omega);

        TransformSeries composed = TransformSeries::identity(n, K);
        bool composed_identity = true;
        FourierTaylorSeries A_j = data.A;
        std::vector<FourierTaylorSeries> B_j = data.B;
        double coh_res = 0.0, picard = 0.0, alias = 0.0, sympl = 0.0;
        std::vector<double> smallness;

        for (int j = 0; j < n; ++j) {
            const RationalVector& v = basis.vectors[static_cast<std::size_t>(j)];
            auto qv = v.integer_vector_ll();
            FourierTaylorSeries A_next = average_along_integer(A_j, qv);
            std::vector<FourierTaylorSeries> B_next;
            for (const auto& b : B_j) B_next.push_back(average_along_integer(b, qv));

            FourierTaylorSeries osc_A = add_scale(A_j, A_next, 1.0, -1.0);
            FourierTaylorSeries C = cohomological_solve(osc_A, v);
            if (C.term_count()) coh_res = std::max(coh_res, cohomological_residual(C, A_j, v));
            std::vector<FourierTaylorSeries> D;
            for (int i = 0; i < n; ++i) {
                auto osc_B = add_scale(B_j[static_cast<std::size_t>(i)], B_next[static_cast<std::size_t>(i)], 1.0, -1.0);
                D.push_back(cohomological_solve(osc_B, v));
                double dres = cohomological_residual(D.back(), B_j[static_cast<std::size_t>(i)], v);
                coh_res = std::max(coh_res, dres);
            }

            double stage_s = H.gevrey.s - (j + 1) * sigma / (2.0 * n);
            GevreyParams stage_p(H.gevrey.alpha, std::max(stage_s, 1e-6));
            FlowOptions fopt;
            fopt.ode_steps = opt.ode_steps;
            fopt.grid_N = grid_N;
            fopt.smallness_constant = constants.c_flow_small;
            fopt.enforce_smallness = constants.enforce;
            FlowResult flow = flow_map(C, D, 1.0, stage_p, sigma, fopt);
            smallness.push_back(flow.smallness_ratio);
            picard = std::max(picard, flow.picard_residual);
            alias = std::max(alias, flow.alias_residual);
            sympl = std::max(sympl,
                             symplectic_deviation(flow.map, opt.symplectic_samples, opt.seed + j));

            if (composed_identity) {
                composed = flow.map;
                composed_identity = transform_is_identity(composed);
            } else if (!transform_is_identity(flow.map)) {
                ComposeResult comp = compose_transforms(composed, flow.map, n, K, grid_N);
                alias = std::max(alias, comp.alias);
                composed = std::move(comp.map);
            }
            A_j = std::move(A_next);
            B_j = std::move(B_next);
        }

        sympl = std::max(sympl, symplectic_deviation(composed, opt.symplectic_samples, opt.seed));
        RecomposeOut rec = recompose(data, omega, y, composed, n, K, grid_N, opt.prune_rel);
        alias = std::max(alias, rec.alias);
        if (H.vector_field_preset) {
            // pure B . I inputs stay pure: A and M vanish identically
            rec.data.A = FourierTaylorSeries(n, K, 0);
            rec.data.e = data.e;
            for (auto& m : rec.data.M) m = FourierTaylorSeries(n, K, 0);
        }

        new_nodes[static_cast<std::size_t>(idx)] = std::move(rec.data);
        out.transform.per_node[static_cast<std::size_t>(idx)] = std::move(composed);
        out.transform.varphi_at_new_nodes[static_cast<std::size_t>(idx)] = omega;

        std::lock_guard<std::mutex> lock(diag_mu);
        diag.phi_inverse_residual = std::max(diag.phi_inverse_residual, inv_res);
        diag.cohomological_residual = std::max(diag.cohomological_residual, coh_res);
        diag.flow_picard_residual = std::max(diag.flow_picard_residual, picard);
        diag.max_alias = std::max(diag.max_alias, alias);
        diag.max_symplectic_dev = std::max(diag.max_symplectic_dev, sympl);
        if (diag.stage_smallness.size() < smallness.size())
            diag.stage_smallness.resize(smallness.size(), 0.0);
        for (std::size_t sidx = 0; sidx < smallness.size(); ++sidx)
            diag.stage_smallness[sidx] = std::max(diag.stage_smallness[sidx], smallness[sidx]);
        double shift = 0.0;
        for (int i = 0; i < n; ++i)
            shift += std::abs(omega[static_cast<std::size_t>(i)] - y[static_cast<std::size_t>(i)]);
        diag.omega_shift = std::max(diag.omega_shift, shift);
    });

    out.next.nodes = std::move(new_nodes);
    out.next.grid = new_grid;
    out.next.h = H.h / 2.0;
    out.next.r = H.r - delta;
    out.next.gevrey = GevreyParams(H.gevrey.alpha, H.gevrey.s - sigma);
    out.next.vector_field_preset = H.vector_field_preset;

    diag.eps_after = out.next.eps_measured();
    diag.mu_after = out.next.mu_measured();
    diag.eps_target_met = diag.eps_after <= eps_declared / 16.0;
    diag.mu_target_met = diag.mu_after <= mu_declared / 4.0;
    return out;
}

KamSchedule::KamSchedule(double eps, double mu, double r, double h, double s, double alpha,
                         double C, long long Q0, const Envelope* env)
    : eps_(eps), mu_(mu), r_(r), h_(h), s_(s), alpha_(alpha), C_(C), Q0_(Q0), env_(env) {
    Delta0_ = env_->delta(static_cast<double>(Q0_));
}

double KamSchedule::eps_i(int i) const { return eps_ * std::pow(16.0, -i); }
double KamSchedule::mu_i(int i) const { return mu_ * std::pow(4.0, -i); }
double KamSchedule::delta_i(int i) const { return std::pow(2.0, -i - 2) * r_; }
double KamSchedule::h_i(int i) const { return std::pow(2.0, -i) * h_; }
double KamSchedule::Delta_i(int i) const { return std::pow(2.0, i) * Delta0_; }
double KamSchedule::Q_i(int i) const { return env_->delta_inv(Delta_i(i)); }
double KamSchedule::sigma_i(int i) const { return C_ * std::pow(Q_i(i), -1.0 / alpha_); }

void KamSchedule::ensure_sigma(int i) const {
    while (static_cast<int>(sigma_cache_.size()) <= i)
        sigma_cache_.push_back(sigma_i(static_cast<int>(sigma_cache_.size())));
}

double KamSchedule::s_i(int i) const {
    ensure_sigma(i);
    double s = s_;
    for (int l = 0; l < i; ++l) s -= sigma_cache_[static_cast<std::size_t>(l)];
    return s;
}

double KamSchedule::r_i(int i) const {
    double r = r_;
    for (int l = 0; l < i; ++l) r -= delta_i(l);
    return r;
}

KamResult kam_iterate(const ParamHamiltonian& H0, const FrequencyProfile& profile,
                      const Envelope& env, const KamConfig& config) {
    KamResult result;
    const int n = H0.n;
    const int K = H0.K;
    const int grid_N = config.options.grid_N > 0 ? config.options.grid_N : 2 * K + 4;

    double eps0 = std::max(H0.eps_measured(), 1e-300);
    double mu0 = std::max({H0.mu_measured(), std::sqrt(eps0)});
    double eta0 = H0.eta_measured();
    if (H0.vector_field_preset) eps0 = 0.0;

    double C = std::pow(config.schedule_c6 * (1.0 + eta0), 1.0 / config.alpha);
    long long Q0;
    if (config.Q0_override > 0) {
        Q0 = config.Q0_override;
    } else {
        Q0 = select_Q0(env, n, config.alpha, config.s, C).Q0;
    }
    result.Q0 = Q0;
    result.schedule_C = C;
    KamSchedule sched(eps0, mu0, H0.r, H0.h, config.s, config.alpha, C, Q0, &env);

    ParamHamiltonian H = H0;
    std::vector<TransformSeries> acc(static_cast<std::size_t>(H.grid.node_count()),
                                     TransformSeries::identity(n, K));
    bool acc_identity = true;

    struct ChainRecord {
        ParamGrid in_grid;
        std::vector<std::vector<double>> avgB;
        std::vector<TransformSeries> per_node;  // on out grid
        ParamGrid out_grid;
    };
    std::vector<ChainRecord> chain;

    result.residual_A = H.eps_measured();
    result.residual_B = H.mu_measured();

    int i = 0;
    for (; i < config.max_steps; ++i) {
        if (result.residual_A <= config.residual_floor &&
            result.residual_B <= config.residual_floor) {
            result.converged = true;
            break;
        }
        double Q = sched.Q_i(i);
        double sigma = sched.sigma_i(i);
        double delta = sched.delta_i(i);
        if (H.gevrey.s - sigma <= config.s / 2.0 * 0.5) {
            result.failure = "schedule exhausted the Gevrey width";
            break;
        }
        try {
            KamStepResult step = kam_step(H, profile, env, Q, sigma, delta, sched.eps_i(i),
                                          sched.mu_i(i), config.constants, config.options);
            step.diag.step_index = i;

            // accumulate the transformation on the new grid
            const ParamGrid& old_grid = H.grid;
            const ParamGrid& fresh_grid = step.next.grid;
            std::vector<TransformSeries> acc_next(static_cast<std::size_t>(fresh_grid.node_count()));
            for (int idx = 0; idx < fresh_grid.node_count(); ++idx) {
                const auto& omega_y =
                    step.transform.varphi_at_new_nodes[static_cast<std::size_t>(idx)];
                const TransformSeries& T_step =
                    step.transform.per_node[static_cast<std::size_t>(idx)];
                if (acc_identity) {
                    acc_next[static_cast<std::size_t>(idx)] = T_step;
                } else {
                    TransformSeries outer = interp_transform(old_grid, acc, omega_y, n, K);
                    ComposeResult comp = compose_transforms(outer, T_step, n, K, grid_N);
                    acc_next[static_cast<std::size_t>(idx)] = std::move(comp.map);
                }
            }
            acc = std::move(acc_next);
            acc_identity = false;

            chain.push_back(ChainRecord{old_grid, step.transform.avgB_prev_nodes,
                                        step.transform.per_node, fresh_grid});

            H = std::move(step.next);
            result.residual_A = step.diag.eps_after;
            result.residual_B = step.diag.mu_after;
            result.history.push_back(std::move(step.diag));
        } catch (const precondition_error& err) {
            result.failure = err.what();
            break;
        }
    }
    result.steps_done = static_cast<int>(result.history.size());
    if (!result.converged && result.failure.empty() &&
        result.residual_A <= config.residual_floor && result.residual_B <= config.residual_floor)
        result.converged = true;

    // omega* = varphi_1(varphi_2(... varphi_N(omega0)))
    std::vector<double> omega_chain = H0.omega0;
    for (auto it = chain.rbegin(); it != chain.rend(); ++it)
        omega_chain = varphi_eval(it->in_grid, it->avgB, omega_chain, 1e-13, nullptr);
    result.omega_star = omega_chain;
    result.omega_shift = 0.0;
    for (int c = 0; c < n; ++c)
        result.omega_shift += std::abs(omega_chain[static_cast<std::size_t>(c)] -
                                       H0.omega0[static_cast<std::size_t>(c)]);

    // embedding and final energy at omega0 (the center of every grid)
    {
        std::vector<double> vals(static_cast<std::size_t>(H.grid.node_count()));
        for (int idx = 0; idx < H.grid.node_count(); ++idx)
            vals[static_cast<std::size_t>(idx)] = H.nodes[static_cast<std::size_t>(idx)].e;
        result.e_star = H.grid.interpolate(vals, H0.omega0);

        result.embedding = TransformSeries::identity(n, K);
        if (!acc_identity)
            result.embedding = interp_transform(H.grid, acc, H0.omega0, n, K);
    }

    // Composition law: the accumulated map at omega0 must agree with the
    // sequential application of the per-step transformations along the
    // parameter chain.
    if (!chain.empty()) {
        std::mt19937_64 rng(config.options.seed + 99);
        std::uniform_real_distribution<double> ud(0.0, 1.0);
        std::vector<double> th(static_cast<std::size_t>(n)), I(static_cast<std::size_t>(n));
        std::vector<double> th1(static_cast<std::size_t>(n)), I1(static_cast<std::size_t>(n));
        std::vector<double> th2(static_cast<std::size_t>(n)), I2(static_cast<std::size_t>(n));
        for (int s = 0; s < 8; ++s) {
            for (auto& x : th) x = ud(rng);
            for (auto& x : I) x = 0.1 * H.r * (ud(rng) - 0.5);
            // accumulated route
            apply_transform(result.embedding, th, I, th1, I1);
            // sequential route: innermost transformation first
            std::vector<double> param = H0.omega0;
            std::vector<double> cth = th, cI = I;
            for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
                TransformSeries T = interp_transform(it->out_grid, it->per_node, param, n, K);
                apply_transform(T, cth, cI, th2, I2);
                cth = th2;
                cI = I2;
                param = varphi_eval(it->in_grid, it->avgB, param, 1e-13, nullptr);
            }
            double dev = 0.0;
            for (int c = 0; c < n; ++c) {
                dev = std::max(dev, std::abs(th1[static_cast<std::size_t>(c)] - cth[static_cast<std::size_t>(c)]));
                dev = std::max(dev, std::abs(I1[static_cast<std::size_t>(c)] - cI[static_cast<std::size_t>(c)]));
            }
            result.composition_check = std::max(result.composition_check, dev);
        }
    }
    return result;
}

InvarianceReport invariance_residual(
    const KamResult& result, std::span<const double> omega0, std::span<const double> lambda,
    const std::function<std::vector<double>(std::span<const double>)>& grad_f, double epsilon,
    std::span<const double> p_star, double T, double dt, int trajectories, std::uint64_t seed) {
    const int n = static_cast<int>(omega0.size());
    InvarianceReport rep;
    rep.algebraic_A = result.residual_A;
    rep.algebraic_B = result.residual_B;
    rep.T = T;
    rep.trajectories = trajectories;

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    const auto& emb = result.embedding;

    auto embed = [&](std::span<const double> theta, std::vector<double>& q,
                     std::vector<double>& p) {
        for (int i = 0; i < n; ++i) {
            q[static_cast<std::size_t>(i)] =
                theta[static_cast<std::size_t>(i)] + emb.E[static_cast<std::size_t>(i)].evaluate_at_zero_action(theta);
            p[static_cast<std::size_t>(i)] =
                emb.G[static_cast<std::size_t>(i)].evaluate_at_zero_action(theta) + p_star[static_cast<std::size_t>(i)];
        }
    };

    const int steps = static_cast<int>(std::llround(T / dt));
    const int check_every = std::max(1, steps / 1000);
    std::vector<double> theta0(static_cast<std::size_t>(n)), q(static_cast<std::size_t>(n)),
        p(static_cast<std::size_t>(n)), ref_theta(static_cast<std::size_t>(n)),
        qhat(static_cast<std::size_t>(n)), phat(static_cast<std::size_t>(n));
    for (int traj = 0; traj < trajectories; ++traj) {
        for (auto& x : theta0) x = ud(rng);
        embed(theta0, q, p);
        // leapfrog (kick-drift-kick) for H = sum lambda_i p_i^2/2 + eps f(q)
        auto g = grad_f(q);
        for (int step = 1; step <= steps; ++step) {
            for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] -= 0.5 * dt * epsilon * g[static_cast<std::size_t>(i)];
            for (int i = 0; i < n; ++i)
                q[static_cast<std::size_t>(i)] += dt * lambda[static_cast<std::size_t>(i)] * p[static_cast<std::size_t>(i)];
            g = grad_f(q);
            for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] -= 0.5 * dt * epsilon * g[static_cast<std::size_t>(i)];
            if (step % check_every == 0 || step == steps) {
                double t = step * dt;
                for (int i = 0; i < n; ++i)
                    ref_theta[static_cast<std::size_t>(i)] = theta0[static_cast<std::size_t>(i)] + t * omega0[static_cast<std::size_t>(i)];
                embed(ref_theta, qhat, phat);
                double dev = 0.0;
                for (int i = 0; i < n; ++i) {
                    double dq = q[static_cast<std::size_t>(i)] - qhat[static_cast<std::size_t>(i)];
                    dq -= std::round(dq);  // angular distance
                    dev = std::max({dev, std::abs(dq), std::abs(p[static_cast<std::size_t>(i)] - phat[static_cast<std::size_t>(i)])});
                }
                rep.dynamical_max_dev = std::max(rep.dynamical_max_dev, dev);
            }
        }
    }
    return rep;
}

InvarianceReport invariance_residual_vector_field(
    const KamResult& result, std::span<const double> omega0,
    std::span<const FourierTaylorSeries> B, double T, double dt, int trajectories,
    std::uint64_t seed) {
    const int n = static_cast<int>(omega0.size());
    InvarianceReport rep;
    rep.algebraic_A = result.residual_A;
    rep.algebraic_B = result.residual_B;
    rep.T = T;
    rep.trajectories = trajectories;

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    const auto& emb = result.embedding;

    auto xi = [&](std::span<const double> theta, std::vector<double>& out) {
        for (int i = 0; i < n; ++i)
            out[static_cast<std::size_t>(i)] =
                theta[static_cast<std::size_t>(i)] + emb.E[static_cast<std::size_t>(i)].evaluate_at_zero_action(theta);
    };
    auto field = [&](std::span<const double> x, std::vector<double>& out) {
        for (int i = 0; i < n; ++i)
            out[static_cast<std::size_t>(i)] = result.omega_star[static_cast<std::size_t>(i)] +
                                               B[static_cast<std::size_t>(i)].evaluate_at_zero_action(x);
    };

    const int steps = static_cast<int>(std::llround(T / dt));
    const int check_every = std::max(1, steps / 1000);
    std::vector<double> theta0(static_cast<std::size_t>(n)), x(static_cast<std::size_t>(n)),
        ref(static_cast<std::size_t>(n)), xhat(static_cast<std::size_t>(n));
    std::vector<double> f1(static_cast<std::size_t>(n)), f2(static_cast<std::size_t>(n)),
        f3(static_cast<std::size_t>(n)), f4(static_cast<std::size_t>(n)), tmp(static_cast<std::size_t>(n));
    for (int traj = 0; traj < trajectories; ++traj) {
        for (auto& v : theta0) v = ud(rng);
        xi(theta0, x);
        for (int step = 1; step <= steps; ++step) {
            field(x, f1);
            for (int i = 0; i < n; ++i) tmp[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] + 0.5 * dt * f1[static_cast<std::size_t>(i)];
            field(tmp, f2);
            for (int i = 0; i < n; ++i) tmp[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] + 0.5 * dt * f2[static_cast<std::size_t>(i)];
            field(tmp, f3);
            for (int i = 0; i < n; ++i) tmp[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] + dt * f3[static_cast<std::size_t>(i)];
            field(tmp, f4);
            for (int i = 0; i < n; ++i)
                x[static_cast<std::size_t>(i)] += dt / 6.0 * (f1[static_cast<std::size_t>(i)] + 2 * f2[static_cast<std::size_t>(i)] +
                                                              2 * f3[static_cast<std::size_t>(i)] + f4[static_cast<std::size_t>(i)]);
            if (step % check_every == 0 || step == steps) {
                double t = step * dt;
                for (int i = 0; i < n; ++i)
                    ref[static_cast<std::size_t>(i)] = theta0[static_cast<std::size_t>(i)] + t * omega0[static_cast<std::size_t>(i)];
                xi(ref, xhat);
                double dev = 0.0;
                for (int i = 0; i < n; ++i) {
                    double dx = x[static_cast<std::size_t>(i)] - xhat[static_cast<std::size_t>(i)];
                    dx -= std::round(dx);
                    dev = std::max(dev, std::abs(dx));
                }
                rep.dynamical_max_dev = std::max(rep.dynamical_max_dev, dev);
            }
        }
    }
    return rep;
}

}  // namespace gkam
