#include "gkam/series.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

namespace gkam {

namespace {

void check_dim(int n, std::span<const int> idx, const char* what) {
    if (static_cast<int>(idx.size()) != n)
        throw structural_error(std::string(what) + ": index dimension mismatch");
}

// Canonical representative of {k, -k}: zero vector, or first nonzero > 0.
// Returns true if k had to be negated (sine amplitudes flip).
bool canonicalize(std::vector<int>& k) {
    for (int v : k) {
        if (v > 0) return false;
        if (v < 0) {
            for (int& u : k) u = -u;
            return true;
        }
    }
    return false;  // k == 0
}

double wrap_unit(double x) {
    double y = x - std::floor(x);
    return (y >= 1.0) ? y - 1.0 : y;
}

}  // namespace

int multi_index_order(std::span<const int> idx) {
    int s = 0;
    for (int v : idx) s += std::abs(v);
    return s;
}

TorusPoint::TorusPoint(std::vector<double> th, std::vector<double> act)
    : theta(std::move(th)), I(std::move(act)) {
    if (I.empty()) I.assign(theta.size(), 0.0);
    if (I.size() != theta.size())
        throw structural_error("TorusPoint: theta/I dimension mismatch");
    for (double& t : theta) t = wrap_unit(t);
}

TorusPoint TorusPoint::angles(std::vector<double> th) {
    std::size_t n = th.size();
    return TorusPoint(std::move(th), std::vector<double>(n, 0.0));
}

FourierTaylorSeries::FourierTaylorSeries(int n, int K, int dI) : n_(n), K_(K), dI_(dI) {
    if (n < 1) throw structural_error("series: n must be >= 1");
    if (K < 0 || dI < 0 || dI > 2) throw structural_error("series: bad truncation orders");
}

FourierTaylorSeries FourierTaylorSeries::constant(int n, double value, int K, int dI) {
    FourierTaylorSeries f(n, K, dI);
    std::vector<int> z(n, 0);
    if (value != 0.0) f.add_term(z, z, value, 0.0);
    return f;
}

FourierTaylorSeries FourierTaylorSeries::mode(int n, std::span<const int> k, double c, double s) {
    FourierTaylorSeries f(n, multi_index_order(k), 0);
    std::vector<int> z(n, 0);
    f.add_term(k, z, c, s);
    return f;
}

FourierTaylorSeries FourierTaylorSeries::linear_action(int n, std::span<const double> v, int K) {
    if (static_cast<int>(v.size()) != n) throw structural_error("linear_action: bad v");
    FourierTaylorSeries f(n, K, 1);
    std::vector<int> z(n, 0);
    for (int i = 0; i < n; ++i) {
        if (v[i] == 0.0) continue;
        std::vector<int> m(n, 0);
        m[i] = 1;
        f.add_term(z, m, v[i], 0.0);
    }
    return f;
}

void FourierTaylorSeries::add_term(std::span<const int> k, std::span<const int> m, double c,
                                   double s) {
    check_dim(n_, k, "mode");
    check_dim(n_, m, "action monomial");
    for (int v : m)
        if (v < 0) throw structural_error("action monomial: negative entry");
    if (multi_index_order(k) > K_) throw structural_error("mode outside Fourier truncation");
    if (multi_index_order(m) > dI_) throw structural_error("monomial above action degree");
    if (c == 0.0 && s == 0.0) return;

    TermKey key{std::vector<int>(k.begin(), k.end()), std::vector<int>(m.begin(), m.end())};
    if (canonicalize(key.k)) s = -s;
    bool zero_mode = std::all_of(key.k.begin(), key.k.end(), [](int v) { return v == 0; });
    if (zero_mode) s = 0.0;

    auto [it, inserted] = terms_.try_emplace(key, Amplitude{c, s});
    if (!inserted) {
        it->second.c += c;
        it->second.s += s;
        if (it->second.c == 0.0 && it->second.s == 0.0) terms_.erase(it);
    }
}

Amplitude FourierTaylorSeries::amplitude(std::span<const int> k, std::span<const int> m) const {
    TermKey key{std::vector<int>(k.begin(), k.end()), std::vector<int>(m.begin(), m.end())};
    bool flipped = canonicalize(key.k);
    auto it = terms_.find(key);
    if (it == terms_.end()) return {};
    Amplitude a = it->second;
    if (flipped) a.s = -a.s;
    return a;
}

double FourierTaylorSeries::evaluate(const TorusPoint& p) const {
    if (static_cast<int>(p.theta.size()) != n_)
        throw structural_error("evaluate: point dimension mismatch");
    double total = 0.0;
    for (const auto& [key, amp] : terms_) {
        double phase = 0.0;
        for (int i = 0; i < n_; ++i) phase += key.k[i] * p.theta[i];
        phase *= two_pi;
        double term = amp.c * std::cos(phase) + amp.s * std::sin(phase);
        for (int i = 0; i < n_; ++i) {
            for (int rep = 0; rep < key.m[i]; ++rep) term *= p.I[i];
        }
        total += term;
    }
    return total;
}

double FourierTaylorSeries::evaluate_at_zero_action(std::span<const double> theta) const {
    double total = 0.0;
    for (const auto& [key, amp] : terms_) {
        if (multi_index_order(key.m) != 0) continue;
        double phase = 0.0;
        for (int i = 0; i < n_; ++i) phase += key.k[i] * theta[i];
        phase *= two_pi;
        total += amp.c * std::cos(phase) + amp.s * std::sin(phase);
    }
    return total;
}

double FourierTaylorSeries::coefficient_mass() const {
    double m = 0.0;
    for (const auto& [key, amp] : terms_) m += std::abs(amp.c) + std::abs(amp.s);
    return m;
}

double FourierTaylorSeries::max_amplitude() const {
    double m = 0.0;
    for (const auto& [key, amp] : terms_)
        m = std::max({m, std::abs(amp.c), std::abs(amp.s)});
    return m;
}

void FourierTaylorSeries::prune(double tol) {
    for (auto it = terms_.begin(); it != terms_.end();) {
        if (std::abs(it->second.c) + std::abs(it->second.s) <= tol) {
            discarded_ += std::abs(it->second.c) + std::abs(it->second.s);
            it = terms_.erase(it);
        } else {
            ++it;
        }
    }
}

FourierTaylorSeries add_scale(const FourierTaylorSeries& f, const FourierTaylorSeries& g,
                              double a, double b) {
    if (!f.same_shape(g)) throw structural_error("add_scale: dimension mismatch");
    FourierTaylorSeries out(f.dimension(), std::max(f.truncation(), g.truncation()),
                            std::max(f.action_degree(), g.action_degree()));
    for (const auto& [key, amp] : f.terms()) out.add_term(key, {a * amp.c, a * amp.s});
    for (const auto& [key, amp] : g.terms()) out.add_term(key, {b * amp.c, b * amp.s});
    out.accumulate_discarded(std::abs(a) * f.discarded_mass() + std::abs(b) * g.discarded_mass());
    return out;
}

FourierTaylorSeries multiply(const FourierTaylorSeries& f, const FourierTaylorSeries& g,
                             int K_out, int dI_out) {
    if (!f.same_shape(g)) throw structural_error("multiply: dimension mismatch");
    const int n = f.dimension();
    FourierTaylorSeries out(n, K_out, dI_out);
    double dropped = 0.0;

    // Complex mode convolution: a term (k, c, s) contributes fhat = (c - i s)/2
    // at +k and the conjugate at -k (k = 0 contributes c once).
    std::vector<int> k_sum(n);
    std::vector<int> m_sum(n);
    for (const auto& [kf, af] : f.terms()) {
        bool f_zero = multi_index_order(kf.k) == 0;
        std::complex<double> fh(af.c, -af.s);
        if (!f_zero) fh *= 0.5;
        for (const auto& [kg, ag] : g.terms()) {
            bool g_zero = multi_index_order(kg.k) == 0;
            std::complex<double> gh(ag.c, -ag.s);
            if (!g_zero) gh *= 0.5;

            for (int i = 0; i < n; ++i) m_sum[i] = kf.m[i] + kg.m[i];
            bool m_ok = multi_index_order(m_sum) <= dI_out;

            // For kf, kg both nonzero the pair contributes two real brackets,
            // at kf+kg and kf-kg; each bracket already accounts for its own
            // mirror term, so emitting 2 Re / -2 Im per bracket is exact.
            // When either factor is the zero mode there is a single bracket.
            int sign_choices = (f_zero || g_zero) ? 1 : 2;
            for (int sg = 0; sg < sign_choices; ++sg) {
                std::complex<double> gterm = (sg == 0) ? gh : std::conj(gh);
                for (int i = 0; i < n; ++i)
                    k_sum[i] = kf.k[i] + (sg == 0 ? kg.k[i] : -kg.k[i]);
                std::complex<double> prod = fh * gterm;
                bool out_zero = multi_index_order(k_sum) == 0;
                double c, s;
                if (f_zero && g_zero) {
                    c = prod.real();
                    s = 0.0;
                } else if (out_zero) {
                    // +k and -k contributions of the pair collapse: total is
                    // 2 Re(prod) at the zero mode, emitted once here.
                    c = 2.0 * prod.real();
                    s = 0.0;
                } else {
                    // Emit the +k_sum part; the mirrored part is its conjugate
                    // and is represented by the same canonical term.
                    c = 2.0 * prod.real();
                    s = -2.0 * prod.imag();
                }
                if (!m_ok || multi_index_order(k_sum) > K_out) {
                    dropped += std::abs(c) + std::abs(s);
                    continue;
                }
                out.add_term(k_sum, m_sum, c, s);
            }
        }
    }
    out.accumulate_discarded(dropped + f.discarded_mass() * g.coefficient_mass() +
                             g.discarded_mass() * f.coefficient_mass());
    return out;
}

FourierTaylorSeries multiply(const FourierTaylorSeries& f, const FourierTaylorSeries& g) {
    if (f.action_degree() + g.action_degree() > 2)
        throw structural_error("multiply: combined action degree exceeds 2; "
                               "request truncation explicitly");
    return multiply(f, g, f.truncation() + g.truncation(),
                    f.action_degree() + g.action_degree());
}

FourierTaylorSeries partial_derivative(const FourierTaylorSeries& f, Var which, int index) {
    const int n = f.dimension();
    if (index < 0 || index >= n) throw structural_error("partial_derivative: bad index");
    if (which == Var::angle) {
        FourierTaylorSeries out(n, f.truncation(), f.action_degree());
        for (const auto& [key, amp] : f.terms()) {
            double factor = two_pi * key.k[index];
            if (factor == 0.0) continue;
            // d/dtheta [c cos + s sin] = 2 pi k (-c sin + s cos)
            out.add_term(key.k, key.m, factor * amp.s, -factor * amp.c);
        }
        out.accumulate_discarded(f.discarded_mass() * two_pi * f.truncation());
        return out;
    }
    FourierTaylorSeries out(n, f.truncation(), std::max(0, f.action_degree() - 1));
    for (const auto& [key, amp] : f.terms()) {
        if (key.m[index] == 0) continue;
        std::vector<int> m = key.m;
        double factor = m[index];
        m[index] -= 1;
        out.add_term(key.k, m, factor * amp.c, factor * amp.s);
    }
    out.accumulate_discarded(2.0 * f.discarded_mass());
    return out;
}

FourierTaylorSeries poisson_bracket(const FourierTaylorSeries& f, const FourierTaylorSeries& g) {
    if (!f.same_shape(g)) throw structural_error("poisson_bracket: dimension mismatch");
    const int n = f.dimension();
    const int K_out = f.truncation() + g.truncation();
    const int dI_out = std::min(2, std::max(0, f.action_degree() + g.action_degree() - 1));
    FourierTaylorSeries out(n, K_out, dI_out);
    for (int j = 0; j < n; ++j) {
        auto t1 = multiply(partial_derivative(f, Var::angle, j),
                           partial_derivative(g, Var::action, j), K_out, dI_out);
        auto t2 = multiply(partial_derivative(f, Var::action, j),
                           partial_derivative(g, Var::angle, j), K_out, dI_out);
        out = add_scale(out, add_scale(t1, t2, 1.0, -1.0), 1.0, 1.0);
    }
    return out;
}

FourierTaylorSeries average_along_integer(const FourierTaylorSeries& f,
                                          std::span<const long long> qv) {
    const int n = f.dimension();
    if (static_cast<int>(qv.size()) != n) throw structural_error("average_along: bad direction");
    FourierTaylorSeries out(n, f.truncation(), f.action_degree());
    for (const auto& [key, amp] : f.terms()) {
        long long dot = 0;
        for (int i = 0; i < n; ++i) dot += static_cast<long long>(key.k[i]) * qv[i];
        if (dot == 0) out.add_term(key, amp);
    }
    out.accumulate_discarded(f.discarded_mass());
    return out;
}

FourierTaylorSeries average_along(const FourierTaylorSeries& f, std::span<const double> v,
                                  long long q) {
    const int n = f.dimension();
    if (static_cast<int>(v.size()) != n) throw structural_error("average_along: bad direction");
    if (q < 1) throw structural_error("average_along: denominator must be positive");
    std::vector<long long> qv(n);
    for (int i = 0; i < n; ++i) {
        double x = static_cast<double>(q) * v[i];
        double r = std::round(x);
        if (std::abs(x - r) > 1e-9 * std::max(1.0, std::abs(x)))
            throw structural_error("average_along: qv is not an integer vector");
        qv[i] = static_cast<long long>(r);
    }
    return average_along_integer(f, qv);
}

FourierTaylorSeries full_average(const FourierTaylorSeries& f) {
    FourierTaylorSeries out(f.dimension(), f.truncation(), f.action_degree());
    for (const auto& [key, amp] : f.terms())
        if (multi_index_order(key.k) == 0) out.add_term(key, amp);
    out.accumulate_discarded(f.discarded_mass());
    return out;
}

AngleGrid::AngleGrid(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    if (sizes_.empty()) throw structural_error("AngleGrid: empty sizes");
    count_ = 1;
    for (int s : sizes_) {
        if (s < 1) throw structural_error("AngleGrid: bad size");
        count_ *= static_cast<std::size_t>(s);
    }
}

std::vector<double> AngleGrid::point(std::size_t flat) const {
    std::vector<double> th(dimension());
    point_into(flat, th);
    return th;
}

void AngleGrid::point_into(std::size_t flat, std::span<double> out) const {
    for (int d = dimension() - 1; d >= 0; --d) {
        std::size_t N = static_cast<std::size_t>(sizes_[d]);
        out[d] = static_cast<double>(flat % N) / static_cast<double>(N);
        flat /= N;
    }
}

namespace {

// Enumerates all modes of the canonical half-lattice with |k| <= K.
void enumerate_canonical(int n, int K, std::vector<std::vector<int>>& out) {
    std::vector<int> k(n, 0);
    // Depth-first over the full box, then filter to canonical and |k| <= K.
    std::size_t total = 1;
    for (int i = 0; i < n; ++i) total *= static_cast<std::size_t>(2 * K + 1);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rem = flat;
        int order = 0;
        for (int i = 0; i < n; ++i) {
            k[i] = static_cast<int>(rem % (2 * K + 1)) - K;
            rem /= (2 * K + 1);
            order += std::abs(k[i]);
        }
        if (order > K) continue;
        bool canonical = true;
        for (int v : k) {
            if (v > 0) break;
            if (v < 0) {
                canonical = false;
                break;
            }
        }
        if (canonical) out.push_back(k);
    }
}

}  // namespace

RefitResult grid_refit(const AngleGrid& grid, std::span<const double> samples, int K) {
    const int n = grid.dimension();
    if (samples.size() != grid.point_count())
        throw structural_error("grid_refit: sample count does not match grid");
    for (int s : grid.sizes())
        if (s < 2 * K + 2)
            throw precondition_error("grid_refit: grid too coarse for requested K "
                                     "(need N >= 2K+2)");

    std::vector<std::vector<int>> modes;
    enumerate_canonical(n, K, modes);

    // Per-dimension trig tables: cos/sin(2 pi j / N) for j in [0, N).
    std::vector<std::vector<double>> cos_tab(n), sin_tab(n);
    for (int d = 0; d < n; ++d) {
        int N = grid.sizes()[d];
        cos_tab[d].resize(N);
        sin_tab[d].resize(N);
        for (int j = 0; j < N; ++j) {
            cos_tab[d][j] = std::cos(two_pi * j / N);
            sin_tab[d][j] = std::sin(two_pi * j / N);
        }
    }

    FourierTaylorSeries series(n, K, 0);
    std::vector<int> g(n);
    std::vector<int> zero_m(n, 0);
    const double inv_count = 1.0 / static_cast<double>(grid.point_count());
    const std::size_t count = grid.point_count();

    // Phase of mode k at grid point, via the per-dimension tables.
    auto phase_at = [&](const std::vector<int>& k, std::size_t flat, double& cph, double& sph) {
        std::size_t rem = flat;
        cph = 1.0;
        sph = 0.0;
        for (int d = n - 1; d >= 0; --d) {
            int N = grid.sizes()[d];
            long long gd = static_cast<long long>(rem % static_cast<std::size_t>(N));
            rem /= static_cast<std::size_t>(N);
            long long idx = (static_cast<long long>(k[d]) * gd) % N;
            if (idx < 0) idx += N;
            double cd = cos_tab[d][static_cast<std::size_t>(idx)];
            double sd = sin_tab[d][static_cast<std::size_t>(idx)];
            double nc = cph * cd - sph * sd;
            sph = cph * sd + sph * cd;
            cph = nc;
        }
    };

    double sample_scale = 0.0;
    for (double v : samples) sample_scale = std::max(sample_scale, std::abs(v));
    const double noise_floor = 1e-14 * sample_scale;

    std::vector<double> recon(count, 0.0);
    for (const auto& k : modes) {
        double acc_c = 0.0, acc_s = 0.0;
        bool zero = multi_index_order(k) == 0;
        // Analysis pass.
        std::vector<double> cph_store(count), sph_store(count);
        for (std::size_t flat = 0; flat < count; ++flat) {
            double cph, sph;
            phase_at(k, flat, cph, sph);
            cph_store[flat] = cph;
            sph_store[flat] = sph;
            acc_c += samples[flat] * cph;
            acc_s += samples[flat] * sph;
        }
        double c = (zero ? acc_c : 2.0 * acc_c) * inv_count;
        double s = zero ? 0.0 : 2.0 * acc_s * inv_count;
        if (std::abs(c) <= noise_floor) c = 0.0;
        if (std::abs(s) <= noise_floor) s = 0.0;
        if (c != 0.0 || s != 0.0) series.add_term(k, zero_m, c, s);
        for (std::size_t flat = 0; flat < count; ++flat)
            recon[flat] += c * cph_store[flat] + s * sph_store[flat];
    }

    double resid = 0.0;
    for (std::size_t flat = 0; flat < count; ++flat)
        resid = std::max(resid, std::abs(recon[flat] - samples[flat]));
    series.accumulate_discarded(resid);
    return {std::move(series), resid};
}

RefitResult grid_refit_jets(const AngleGrid& grid,
                            const std::map<std::vector<int>, std::vector<double>>& jets,
                            int K) {
    const int n = grid.dimension();
    int dI = 0;
    for (const auto& [m, samples] : jets) {
        if (static_cast<int>(m.size()) != n) throw structural_error("grid_refit_jets: bad monomial");
        dI = std::max(dI, multi_index_order(m));
    }
    if (dI > 2) throw structural_error("grid_refit_jets: action degree above 2");

    FourierTaylorSeries out(n, K, dI);
    double worst = 0.0;
    for (const auto& [m, samples] : jets) {
        RefitResult part = grid_refit(grid, samples, K);
        worst = std::max(worst, part.alias_residual);
        for (const auto& [key, amp] : part.series.terms()) out.add_term(key.k, m, amp.c, amp.s);
    }
    out.accumulate_discarded(worst);
    return {std::move(out), worst};
}

}  // namespace gkam
