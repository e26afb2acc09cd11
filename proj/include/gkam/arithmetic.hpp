#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "gkam/series.hpp"

namespace gkam {

using BigInt = boost::multiprecision::cpp_int;
using BigRational = boost::multiprecision::cpp_rational;

/// Normalizes omega to the form (1, obar) with obar in [-1,1]^(n-1):
/// components are reordered so the largest modulus leads, then rescaled.
std::vector<double> normalize_frequency(std::vector<double> omega);

struct PsiValue {
    double value = 0.0;     // max over 0 < |k| <= Q of 1/|k.omega|
    bool resonant = false;  // some k.omega vanished within 1e-14 |k|
    std::vector<int> witness;  // resonant mode or the attaining mode
};

/// Brute-force small-denominator function over the l1 ball of Z^n.
PsiValue psi_of(std::span<const double> omega, double Q);

/// Power-law tail model Psi(Q) ~= exp(b) Q^tau fitted on the sampled table.
struct TailModel {
    double tau = 0.0;
    double b = 0.0;       // ln of the multiplicative constant
    double from_Q = 0.0;  // model applies for Q >= from_Q
    double max_log_residual = 0.0;  // fit quality over the fitted range
    bool valid = false;
};

/// Frequency vector with its sampled small-denominator table. The table is
/// built incrementally shell by shell, so psi is available at every integer
/// Q up to the horizon.
class FrequencyProfile {
public:
    FrequencyProfile(std::vector<double> omega, int horizon);

    /// n = 2 profile carrying an exact rational second component, so that
    /// resonance detection and continued fractions are not limited by double
    /// precision (constructed examples).
    static FrequencyProfile with_exact(const BigRational& nu, int horizon);

    const std::vector<double>& omega() const { return omega_; }
    int dimension() const { return static_cast<int>(omega_.size()); }
    int horizon() const { return horizon_; }
    bool resonant() const { return resonant_; }
    const std::vector<int>& resonant_mode() const { return resonant_mode_; }
    const std::optional<BigRational>& exact_nu() const { return exact_nu_; }

    /// Psi_omega at real Q in [1, horizon]; the table value at floor(Q).
    double psi(double Q) const;
    const std::vector<double>& psi_table() const { return table_; }

    TailModel fit_tail() const;

private:
    std::vector<double> omega_;
    std::optional<BigRational> exact_nu_;
    int horizon_;
    bool resonant_ = false;
    std::vector<int> resonant_mode_;
    std::vector<double> table_;  // index Q-1 -> Psi(Q), Q = 1..horizon generated lazily
    void build_table();
};

/// Continuous non-decreasing envelope Psi with
/// Psi_omega(Q) <= Psi(Q) <= Psi_omega(Q+1): piecewise linear through the
/// points (Q, Psi_omega(Q+1)), extended past the sampled horizon by the
/// fitted power-law tail. Delta(Q) = Q Psi(Q) is continuous and increasing;
/// its inverse is computed by monotone bisection to 1e-12 relative.
class Envelope {
public:
    static Envelope from_profile(const FrequencyProfile& profile);
    /// Synthetic Diophantine-type envelope Psi(Q) = Q^tau / gamma_hat.
    static Envelope power_law(double tau, double gamma_hat);
    /// Synthetic stub from an arbitrary increasing function; tail exponent
    /// fitted numerically from large-Q samples.
    static Envelope from_function(std::function<double(double)> psi, double tail_tau);

    double psi(double Q) const;
    double delta(double Q) const { return Q * psi(Q); }
    double delta_inv(double x) const;
    const TailModel& tail() const { return tail_; }
    double sampled_to() const { return sampled_to_; }  // exact table below this Q

private:
    std::vector<double> knots_;  // Psi at integer Q = 1.. (table route)
    std::function<double(double)> fn_;  // synthetic route
    TailModel tail_;
    double sampled_to_ = 0.0;
};

enum class Verdict { holds, fails, inconclusive };
enum class ClassifyMethod { series_Q, dyadic, cf, integral_A };

std::string to_string(Verdict v);
std::string to_string(ClassifyMethod m);

struct ArithReport {
    double alpha = 1.0;
    ClassifyMethod method = ClassifyMethod::series_Q;
    Verdict br_alpha = Verdict::inconclusive;
    double br_partial_sum = 0.0;
    std::vector<double> br_trajectory;  // partial sums over growing horizons
    Verdict a_alpha = Verdict::inconclusive;
    double a_alpha_integral = 0.0;  // sampled part of the integral criterion
    double b_alpha_limsup = 0.0;    // horizon-bounded estimate, never a verdict
    double tau_fit = 0.0;
    std::string tail_note;  // the explicit tail model backing any verdict
};

/// Convergence analysis of the sampled profile against the arithmetic
/// condition at exponent alpha. A "holds" verdict is only issued when a
/// certified tail model applies (power-law envelope bound for the series and
/// dyadic methods, geometric term-ratio decay for the continued-fraction
/// method); otherwise the verdict is inconclusive with the partial-sum
/// trajectory reported.
ArithReport classify(const FrequencyProfile& profile, double alpha, ClassifyMethod method);

struct Convergent {
    BigInt p;
    BigInt q;
    double error;  // |q nu - p|
};

struct CFResult {
    std::vector<BigInt> quotients;
    std::vector<Convergent> convergents;
    bool truncated_by_precision = false;  // double route ran out of accuracy
    bool rational_input = false;          // expansion terminated exactly
};

/// Continued-fraction convergents of nu (double route). Stops early, with a
/// flag, when the remainder falls below working precision.
CFResult cf_convergents(double nu, int count);
/// Exact route for constructed rationals (Liouville sums).
CFResult cf_convergents_exact(const BigRational& nu, int count);

/// Small-denominator function of omega = (1, nu) recovered from convergents:
/// max over convergents inside the l1 mode ball |p| + q <= Q of 1/|q nu - p|
/// (and the trivial mode (1,0)). Matches the brute-force psi exactly.
double psi_from_convergents(const CFResult& cf, double Q);

/// Aligned-range comparison of the series and dyadic criteria partial sums:
/// for every L with 2^(L+1) - 1 <= horizon,
///   (alpha/2) f3(L)  <=  f2(2^(L+1) - 1)  <=  2^(1/alpha) (1+alpha) f3(L+1).
struct DyadicComparison {
    std::vector<double> f2;        // at block-end horizons
    std::vector<double> f3_lower;  // f3 through l = L
    std::vector<double> f3_upper;  // f3 through l = L+1
    bool pass = true;
};

DyadicComparison compare_series_dyadic(const FrequencyProfile& profile, double alpha);

struct Q0Result {
    long long Q0 = 0;
    double lhs = 0.0;        // value of the selection functional at Q0
    double quad_part = 0.0;  // quadrature over the sampled envelope range
    double tail_part = 0.0;  // closed-form power-law tail contribution
    double bound = 0.0;      // s / (2C)
    TailModel tail;
};

/// Smallest integer Q0 >= n + 2 with
///   Q0^(-1/alpha) + (ln 2)^(-1) Int_{Delta(Q0)}^inf dx / (x Delta^-1(x)^(1/alpha))
///     <= s / (2 C).
/// The integral is adaptive quadrature on the envelope plus the fitted
/// power-law tail. Throws precondition_error (carrying the achieved bound in
/// the message) when unsatisfiable within the search horizon.
Q0Result select_Q0(const Envelope& env, int n, double alpha, double s, double C,
                   long long search_max = 2'000'000);

/// The tail integral alone: Int_{Delta(Q0)}^inf dx / (x Delta^-1(x)^(1/alpha)).
double br_tail_integral(const Envelope& env, double alpha, double Q0);

/// nu = sum_{j=1..terms} base^(-j!), kept exactly and as a double.
struct LiouvilleNumber {
    int base;
    int terms;
    BigRational exact;
    double approx;
};

LiouvilleNumber liouville_sum(int base, int terms = 4);

}  // namespace gkam
