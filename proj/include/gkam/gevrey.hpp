#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gkam/series.hpp"

namespace gkam {

/// Parameters of the weighted-derivative norm
///
///   |f| = c * sup_kappa (|kappa|+1)^2 s^(alpha |kappa|) |d^kappa f| / |kappa|!^alpha
///
/// with the fixed normalizing constant c = 4 pi^2 / 3 (it makes the norm an
/// algebra norm).
struct GevreyParams {
    double alpha = 1.0;
    double s = 1.0;

    GevreyParams(double a, double width);
    static constexpr double c = 13.159472534785811;  // 4 pi^2 / 3
};

/// Norm of a truncated series, computed two ways:
///  - value: certified upper route. Per total derivative order l the sup of
///    the derivative is bounded by the coefficient sum T_l = sum_k amp_k
///    (2 pi |k|)^l (amp = sqrt(c^2 + s^2), |k| the l1 mode size), and the
///    scan over l terminates once a geometric ratio bound certifies the tail
///    cannot exceed the running maximum. This route is exact for constants
///    and single-direction modes and inherits the triangle, scaling, product
///    and derivative inequalities of the true norm.
///  - grid_sup: sharper empirical value with the theta-sup taken on a grid
///    of >= 4K + 4 points per dimension (first few orders only).
/// argmax_order is the order attaining the certified sup.
struct NormResult {
    double value = 0.0;
    double grid_sup = 0.0;
    int argmax_order = 0;
    int scanned_orders = 0;
};

/// Gevrey norm of a trigonometric-polynomial series (dI <= 2 allowed; action
/// derivatives are the 2-jet at I = 0, so for dI = 0 inputs this is the exact
/// norm and otherwise the exact norm of the truncated jet). phase_factor is
/// the radians-per-mode-integer convention: 2 pi on the unit torus (default).
NormResult norm_trig_poly(const FourierTaylorSeries& f, const GevreyParams& p,
                          double phase_factor = two_pi);
double gevrey_norm(const FourierTaylorSeries& f, const GevreyParams& p);

/// Norm of a vector-valued series (components measured jointly: the l1 sum
/// over components enters each derivative order before the sup over orders).
NormResult norm_vector(std::span<const FourierTaylorSeries> components, const GevreyParams& p,
                       double phase_factor = two_pi);

/// Norm in the 2 pi-periodic angle convention (mode integers kept, each
/// angle derivative contributing |k| instead of 2 pi |k|); realized as the
/// unit-torus norm at the rescaled width s (2 pi)^(-1/alpha).
NormResult norm_trig_poly_2pi(const FourierTaylorSeries& f, const GevreyParams& p);

/// Formal power series F(X) = sum_l F_l X^l / l! with F_l >= 0. Holds the
/// three majorant families:
///   M:      F_l = c^-1 l!^alpha / ((l+1)^2 s^(alpha l))
///   Mbar:   M with the constant term removed
///   Mtilde: F_l = c^-1 (l+1)!^(alpha-1) l! / ((l+2)^2 s^(alpha l))
/// Coefficients are kept both directly (may overflow to inf for large l) and
/// in log form (always finite), the latter used for order-by-order checks.
struct MajorantSeries {
    std::vector<double> coeffs;
    std::vector<double> log_coeffs;
    int L = 0;

    double coeff(int l) const { return coeffs.at(static_cast<std::size_t>(l)); }
    double log_coeff(int l) const { return log_coeffs.at(static_cast<std::size_t>(l)); }
};

enum class MajorantKind { M, Mbar, Mtilde };

MajorantSeries majorant(const GevreyParams& p, int L, MajorantKind kind);

struct MajorizationResult {
    bool holds = true;
    std::optional<int> first_violation;
};

/// Checks |jet_l| <= F_l for every supplied order.
MajorizationResult check_majorization(std::span<const double> jet, const MajorantSeries& F);

/// Verification report of a single inequality: lhs <= rhs + budget.
struct InequalityReport {
    std::string inequality;
    double lhs = 0.0;
    double rhs = 0.0;
    double margin = 0.0;  // rhs + budget - lhs
    double budget = 0.0;
    bool pass = false;
    bool skipped = false;
    std::string note;
};

/// Coefficient inequality behind the product estimate:
///   sum_{j<=l} (j!)^(a-1)((l-j)!)^(a-1) / ((j+1)^2 (l-j+1)^2)
///     <= c (l!)^(a-1) / (l+1)^2        for all l <= L.
/// Ratios are evaluated in log space; the report carries the max ratio.
struct LemmaReport {
    double max_ratio = 0.0;
    int argmax_l = 0;
    bool pass = false;
    std::vector<double> ratios;  // per l (kept when keep_trajectory)
};

LemmaReport verify_lemma_product(const GevreyParams& p, int L, bool keep_trajectory = false);

/// Same for the composition coefficients ((j+1)!-shifted variant), together
/// with the order-by-order check Mtilde * Mbar << Mbar.
struct LemmaCompReport {
    LemmaReport squared;       // Mtilde^2 << Mtilde coefficients
    LemmaReport mixed;         // Mtilde * Mbar << Mbar coefficients
    bool pass = false;
};

LemmaCompReport verify_lemma_comp(const GevreyParams& p, int L, bool keep_trajectory = false);

/// Checks the derivative, product and near-identity composition estimates on
/// concrete inputs. u is the perturbation of the composition g = Id + u,
/// supplied per component; the composition is realized by sampling
/// f(theta + u(theta)) on a grid and refitting, and the discarded mass enters
/// the budget. Requires 0 < sigma < s.
struct EstimatesReport {
    std::vector<InequalityReport> derivative;  // one per angle direction
    InequalityReport product;
    InequalityReport composition;
    bool all_pass = false;
};

EstimatesReport verify_estimates(const FourierTaylorSeries& f, const FourierTaylorSeries& g,
                                 std::span<const FourierTaylorSeries> u, const GevreyParams& p,
                                 double sigma, int comp_grid = 0);

}  // namespace gkam
