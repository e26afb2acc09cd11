#include "gkam/gevrey.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace gkam {

namespace {

constexpr double neg_inf = -std::numeric_limits<double>::infinity();

double log_sum_exp(std::span<const double> xs) {
    double m = neg_inf;
    for (double x : xs) m = std::max(m, x);
    if (m == neg_inf) return neg_inf;
    double acc = 0.0;
    for (double x : xs)
        if (x != neg_inf) acc += std::exp(x - m);
    return m + std::log(acc);
}

// Collected coefficient masses of one action monomial: l1 mode size -> summed
// amplitude sqrt(c^2+s^2).
struct MonomialMass {
    int order = 0;        // |m|
    double factorial = 1; // m!
    std::map<int, double> amp_by_size;
};

using MassTable = std::map<std::vector<int>, MonomialMass>;

void collect_masses(const FourierTaylorSeries& f, MassTable& table) {
    for (const auto& [key, amp] : f.terms()) {
        auto& entry = table[key.m];
        if (entry.amp_by_size.empty()) {
            entry.order = multi_index_order(key.m);
            entry.factorial = 1.0;
            for (int mi : key.m)
                for (int r = 2; r <= mi; ++r) entry.factorial *= r;
        }
        entry.amp_by_size[multi_index_order(key.k)] += std::hypot(amp.c, amp.s);
    }
}

// log of T_j = sum over sizes of amp * (phase * size)^j; size 0 only feeds j = 0.
double log_theta_jet(const MonomialMass& m, int j, double phase) {
    std::vector<double> parts;
    parts.reserve(m.amp_by_size.size());
    for (const auto& [size, amp] : m.amp_by_size) {
        if (amp <= 0.0) continue;
        if (size == 0) {
            if (j == 0) parts.push_back(std::log(amp));
            continue;
        }
        parts.push_back(std::log(amp) + j * std::log(phase * size));
    }
    return log_sum_exp(parts);
}

// log of the combined order-l jet bound: max over monomials b of
// b! * T^theta_{l - |b|}.
double log_total_jet(const MassTable& table, int l, double phase) {
    double best = neg_inf;
    for (const auto& [m, mass] : table) {
        if (mass.order > l) continue;
        double v = std::log(mass.factorial) + log_theta_jet(mass, l - mass.order, phase);
        best = std::max(best, v);
    }
    return best;
}

struct ScanOutcome {
    double log_value = neg_inf;
    int argmax = 0;
    int scanned = 0;
};

// Scans weighted orders until a geometric ratio bound certifies that no later
// order can exceed the running maximum (the factorial denominator dominates
// for every alpha >= 1, s > 0).
ScanOutcome scan_norm(const MassTable& table, const GevreyParams& p, double phase) {
    int max_size = 0;
    int max_morder = 0;
    for (const auto& [m, mass] : table) {
        max_morder = std::max(max_morder, mass.order);
        for (const auto& [size, amp] : mass.amp_by_size)
            if (amp > 0.0) max_size = std::max(max_size, size);
    }

    const double log_c = std::log(GevreyParams::c);
    const double log_s = std::log(p.s);
    ScanOutcome out;
    constexpr int hard_cap = 20000;
    for (int l = 0; l <= hard_cap; ++l) {
        double log_T = log_total_jet(table, l, phase);
        double log_term = neg_inf;
        if (log_T != neg_inf)
            log_term = log_c + 2.0 * std::log1p(l) + p.alpha * l * log_s + log_T -
                       p.alpha * std::lgamma(l + 1.0);
        out.scanned = l + 1;
        if (log_term > out.log_value) {
            out.log_value = log_term;
            out.argmax = l;
        }
        if (max_size == 0) {
            if (l >= max_morder) break;  // pure action polynomial: jets stop
            continue;
        }
        // T_{l+1} <= (phase * max_size) T_l, hence
        // term_{l+1} <= term_l * rho_l with the factor below.
        double log_rho = 2.0 * (std::log(l + 2.0) - std::log1p(l)) + p.alpha * log_s +
                         std::log(phase * max_size) - p.alpha * std::log1p(l);
        if (log_rho < 0.0 && log_term + log_rho < out.log_value) break;
    }
    return out;
}

void enumerate_orders(int n, int total, std::vector<int>& cur, int pos,
                      const std::function<void(const std::vector<int>&)>& fn) {
    if (pos == n - 1) {
        cur[pos] = total;
        fn(cur);
        return;
    }
    for (int v = 0; v <= total; ++v) {
        cur[pos] = v;
        enumerate_orders(n, total - v, cur, pos + 1, fn);
    }
}

// Extracts the dI = 0 coefficient series of one action monomial.
FourierTaylorSeries monomial_part(const FourierTaylorSeries& f, const std::vector<int>& m) {
    FourierTaylorSeries out(f.dimension(), f.truncation(), 0);
    std::vector<int> zero(f.dimension(), 0);
    for (const auto& [key, amp] : f.terms())
        if (key.m == m) out.add_term(key.k, zero, amp.c, amp.s);
    return out;
}

double grid_sup_abs(const FourierTaylorSeries& f) {
    int points = std::max(8, 4 * f.truncation() + 4);
    AngleGrid grid(std::vector<int>(f.dimension(), points));
    double best = 0.0;
    std::vector<double> th(f.dimension());
    for (std::size_t i = 0; i < grid.point_count(); ++i) {
        grid.point_into(i, th);
        best = std::max(best, std::abs(f.evaluate_at_zero_action(th)));
    }
    return best;
}

// Empirical theta-sup route for low orders; falls back to the analytic terms
// above the cap so the reported value stays a norm-shaped quantity.
double grid_route(const std::vector<const FourierTaylorSeries*>& comps, const MassTable& table,
                  const GevreyParams& p, double phase, int scanned) {
    if (comps.empty()) return 0.0;
    const int n = comps.front()->dimension();
    const int cap = std::min(6, scanned - 1);
    const double phase_ratio = phase / two_pi;  // derivatives carry 2 pi per order

    double best = 0.0;
    for (int l = 0; l <= cap; ++l) {
        double jet = 0.0;  // max over kappa with |kappa| = l of summed component sup
        for (int btot = 0; btot <= std::min(l, 2); ++btot) {
            std::vector<int> b(n, 0);
            enumerate_orders(n, btot, b, 0, [&](const std::vector<int>& bm) {
                double bfac = 1.0;
                for (int bi : bm)
                    for (int r = 2; r <= bi; ++r) bfac *= r;
                std::vector<int> a(n, 0);
                enumerate_orders(n, l - btot, a, 0, [&](const std::vector<int>& am) {
                    double summed = 0.0;
                    for (const auto* comp : comps) {
                        FourierTaylorSeries d = monomial_part(*comp, bm);
                        for (int i = 0; i < n; ++i)
                            for (int rep = 0; rep < am[i]; ++rep)
                                d = partial_derivative(d, Var::angle, i);
                        summed += grid_sup_abs(d);
                    }
                    // partial_derivative applies the unit-torus 2 pi factor;
                    // rescale to the requested phase convention.
                    double adj = std::pow(phase_ratio, l - btot);
                    jet = std::max(jet, bfac * summed * adj);
                });
            });
        }
        double term = GevreyParams::c * (l + 1.0) * (l + 1.0) *
                      std::pow(p.s, p.alpha * l) * jet / std::pow(std::tgamma(l + 1.0), p.alpha);
        best = std::max(best, term);
    }
    // Analytic terms beyond the cap.
    const double log_c = std::log(GevreyParams::c);
    for (int l = cap + 1; l < scanned; ++l) {
        double log_T = log_total_jet(table, l, phase);
        if (log_T == neg_inf) continue;
        double log_term = log_c + 2.0 * std::log1p(l) + p.alpha * l * std::log(p.s) + log_T -
                          p.alpha * std::lgamma(l + 1.0);
        best = std::max(best, std::exp(log_term));
    }
    return best;
}

NormResult norm_impl(const std::vector<const FourierTaylorSeries*>& comps, const GevreyParams& p,
                     double phase) {
    for (const auto* f : comps)
        if (f->truncation() > 100000)
            throw unsupported_error("norm: unbounded mode set");
    MassTable table;
    for (const auto* f : comps) collect_masses(*f, table);
    ScanOutcome scan = scan_norm(table, p, phase);
    NormResult r;
    r.value = (scan.log_value == neg_inf) ? 0.0 : std::exp(scan.log_value);
    r.argmax_order = scan.argmax;
    r.scanned_orders = scan.scanned;
    r.grid_sup = grid_route(comps, table, p, phase, scan.scanned);
    return r;
}

}  // namespace

GevreyParams::GevreyParams(double a, double width) : alpha(a), s(width) {
    if (!(a >= 1.0)) throw structural_error("GevreyParams: alpha must be >= 1");
    if (!(width > 0.0)) throw structural_error("GevreyParams: s must be > 0");
}

NormResult norm_trig_poly(const FourierTaylorSeries& f, const GevreyParams& p,
                          double phase_factor) {
    return norm_impl({&f}, p, phase_factor);
}

double gevrey_norm(const FourierTaylorSeries& f, const GevreyParams& p) {
    MassTable table;
    collect_masses(f, table);
    ScanOutcome scan = scan_norm(table, p, two_pi);
    return (scan.log_value == neg_inf) ? 0.0 : std::exp(scan.log_value);
}

NormResult norm_vector(std::span<const FourierTaylorSeries> components, const GevreyParams& p,
                       double phase_factor) {
    std::vector<const FourierTaylorSeries*> ptrs;
    for (const auto& c : components) ptrs.push_back(&c);
    if (ptrs.empty()) return {};
    return norm_impl(ptrs, p, phase_factor);
}

NormResult norm_trig_poly_2pi(const FourierTaylorSeries& f, const GevreyParams& p) {
    // 2 pi-periodic convention == unit-torus norm at width s (2 pi)^(-1/alpha).
    GevreyParams q(p.alpha, p.s * std::pow(two_pi, -1.0 / p.alpha));
    return norm_impl({&f}, q, two_pi);
}

MajorantSeries majorant(const GevreyParams& p, int L, MajorantKind kind) {
    if (L < 0) throw structural_error("majorant: L must be >= 0");
    MajorantSeries out;
    out.L = L;
    out.coeffs.resize(L + 1);
    out.log_coeffs.resize(L + 1);
    const double log_c = std::log(GevreyParams::c);
    const double log_s = std::log(p.s);
    for (int l = 0; l <= L; ++l) {
        double lg;
        switch (kind) {
            case MajorantKind::M:
                lg = -log_c + p.alpha * std::lgamma(l + 1.0) - 2.0 * std::log1p(l) -
                     p.alpha * l * log_s;
                break;
            case MajorantKind::Mbar:
                if (l == 0) {
                    lg = neg_inf;
                } else {
                    lg = -log_c + p.alpha * std::lgamma(l + 1.0) - 2.0 * std::log1p(l) -
                         p.alpha * l * log_s;
                }
                break;
            case MajorantKind::Mtilde:
                lg = -log_c + (p.alpha - 1.0) * std::lgamma(l + 2.0) + std::lgamma(l + 1.0) -
                     2.0 * std::log(l + 2.0) - p.alpha * l * log_s;
                break;
            default:
                throw structural_error("majorant: bad kind");
        }
        out.log_coeffs[l] = lg;
        out.coeffs[l] = (lg == neg_inf) ? 0.0 : std::exp(lg);
    }
    return out;
}

MajorizationResult check_majorization(std::span<const double> jet, const MajorantSeries& F) {
    MajorizationResult r;
    for (std::size_t l = 0; l < jet.size(); ++l) {
        if (static_cast<int>(l) > F.L)
            throw structural_error("check_majorization: jet order beyond majorant truncation");
        double v = std::abs(jet[l]);
        double lb = F.log_coeff(static_cast<int>(l));
        bool ok;
        if (v == 0.0)
            ok = true;
        else if (lb == neg_inf)
            ok = false;
        else
            ok = std::log(v) <= lb + 1e-12;
        if (!ok) {
            r.holds = false;
            r.first_violation = static_cast<int>(l);
            return r;
        }
    }
    return r;
}

LemmaReport verify_lemma_product(const GevreyParams& p, int L, bool keep_trajectory) {
    if (L < 1) throw structural_error("verify_lemma_product: L must be >= 1");
    LemmaReport rep;
    const double a1 = p.alpha - 1.0;
    for (int l = 0; l <= L; ++l) {
        double sum = 0.0;
        const double lg_l = std::lgamma(l + 1.0);
        for (int j = 0; j <= l; ++j) {
            double lg = a1 * (std::lgamma(j + 1.0) + std::lgamma(l - j + 1.0) - lg_l) +
                        2.0 * std::log1p(l) - 2.0 * std::log1p(j) - 2.0 * std::log1p(l - j);
            sum += std::exp(lg);
        }
        double ratio = sum / GevreyParams::c;
        if (keep_trajectory) rep.ratios.push_back(ratio);
        if (ratio > rep.max_ratio) {
            rep.max_ratio = ratio;
            rep.argmax_l = l;
        }
    }
    rep.pass = rep.max_ratio <= 1.0;
    return rep;
}

LemmaCompReport verify_lemma_comp(const GevreyParams& p, int L, bool keep_trajectory) {
    if (L < 1) throw structural_error("verify_lemma_comp: L must be >= 1");
    LemmaCompReport rep;
    const double a1 = p.alpha - 1.0;

    for (int l = 0; l <= L; ++l) {
        double sum = 0.0;
        const double lg_l1 = std::lgamma(l + 2.0);
        for (int j = 0; j <= l; ++j) {
            double lg = a1 * (std::lgamma(j + 2.0) + std::lgamma(l - j + 2.0) - lg_l1) +
                        2.0 * std::log(l + 2.0) - 2.0 * std::log(j + 2.0) -
                        2.0 * std::log(l - j + 2.0);
            sum += std::exp(lg);
        }
        double ratio = sum / GevreyParams::c;
        if (keep_trajectory) rep.squared.ratios.push_back(ratio);
        if (ratio > rep.squared.max_ratio) {
            rep.squared.max_ratio = ratio;
            rep.squared.argmax_l = l;
        }
    }
    rep.squared.pass = rep.squared.max_ratio <= 1.0;

    // Order-by-order coefficients of Mtilde * Mbar against Mbar, in the
    // X^l / l! convention: (FG)_l = sum_j C(l,j) F_j G_{l-j}.
    MajorantSeries mt = majorant(p, L, MajorantKind::Mtilde);
    MajorantSeries mb = majorant(p, L, MajorantKind::Mbar);
    for (int l = 1; l <= L; ++l) {
        std::vector<double> parts;
        for (int j = 0; j <= l - 1; ++j) {
            double log_binom = std::lgamma(l + 1.0) - std::lgamma(j + 1.0) -
                               std::lgamma(l - j + 1.0);
            double lg = log_binom + mt.log_coeff(j) + mb.log_coeff(l - j) - mb.log_coeff(l);
            parts.push_back(lg);
        }
        double ratio = std::exp(log_sum_exp(parts));
        if (keep_trajectory) rep.mixed.ratios.push_back(ratio);
        if (ratio > rep.mixed.max_ratio) {
            rep.mixed.max_ratio = ratio;
            rep.mixed.argmax_l = l;
        }
    }
    rep.mixed.pass = rep.mixed.max_ratio <= 1.0;
    rep.pass = rep.squared.pass && rep.mixed.pass;
    return rep;
}

EstimatesReport verify_estimates(const FourierTaylorSeries& f, const FourierTaylorSeries& g,
                                 std::span<const FourierTaylorSeries> u, const GevreyParams& p,
                                 double sigma, int comp_grid) {
    if (!(sigma > 0.0 && sigma < p.s))
        throw structural_error("verify_estimates: need 0 < sigma < s");
    const int n = f.dimension();
    EstimatesReport rep;
    GevreyParams narrow(p.alpha, p.s - sigma);
    const double nf = gevrey_norm(f, p);
    const double ng = gevrey_norm(g, p);
    const double sig_a = std::pow(sigma, p.alpha);

    for (int j = 0; j < n; ++j) {
        InequalityReport r;
        r.inequality = "derivative[" + std::to_string(j) + "]";
        r.lhs = gevrey_norm(partial_derivative(f, Var::angle, j), narrow);
        r.rhs = nf / sig_a;
        r.margin = r.rhs - r.lhs;
        r.pass = r.margin >= -1e-12 * std::max(1.0, r.rhs);
        rep.derivative.push_back(r);
    }

    {
        InequalityReport r;
        r.inequality = "product";
        auto h = multiply(f, g, f.truncation() + g.truncation(),
                          std::min(2, f.action_degree() + g.action_degree()));
        r.lhs = gevrey_norm(h, p);
        r.rhs = nf * ng;
        r.margin = r.rhs - r.lhs;
        r.pass = r.margin >= -1e-12 * std::max(1.0, r.rhs);
        rep.product = r;
    }

    {
        InequalityReport r;
        r.inequality = "composition";
        if (static_cast<int>(u.size()) != n)
            throw structural_error("verify_estimates: u must have n components");
        double nu = norm_vector(u, narrow).value;
        if (nu > sig_a) {
            r.skipped = true;
            r.note = "precondition |u| <= sigma^alpha violated; check skipped";
            r.pass = true;
        } else {
            int Ku = 0;
            for (const auto& ui : u) Ku = std::max(Ku, ui.truncation());
            int K_comp = f.truncation() + 2 * Ku + 4;
            int N = comp_grid > 0 ? comp_grid : 2 * K_comp + 4;
            AngleGrid grid(std::vector<int>(n, N));
            std::vector<double> shifted(n);
            auto samples = grid.sample([&](std::span<const double> th) {
                for (int i = 0; i < n; ++i) shifted[i] = th[i] + u[i].evaluate_at_zero_action(th);
                return f.evaluate_at_zero_action(shifted);
            });
            RefitResult fit = grid_refit(grid, samples, K_comp);
            r.lhs = gevrey_norm(fit.series, narrow);
            r.rhs = nf;
            // Truncation allowance: the alias residual weighted as a worst
            // retained-order coefficient.
            FourierTaylorSeries badge(n, K_comp, 0);
            if (fit.alias_residual > 0.0) {
                std::vector<int> k(n, 0), m(n, 0);
                k[0] = K_comp;
                badge.add_term(k, m, fit.alias_residual, 0.0);
                r.budget = gevrey_norm(badge, narrow);
            }
            r.margin = r.rhs + r.budget - r.lhs;
            r.pass = r.margin >= -1e-10 * std::max(1.0, r.rhs);
        }
        rep.composition = r;
    }

    rep.all_pass = rep.product.pass && rep.composition.pass;
    for (const auto& d : rep.derivative) rep.all_pass = rep.all_pass && d.pass;
    return rep;
}

}  // namespace gkam
