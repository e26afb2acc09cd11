#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gkam {

inline constexpr double two_pi = 6.283185307179586476925286766559;

/// Raised when operands have incompatible shapes (dimension, degree).
struct structural_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Raised when a documented precondition fails (grid too coarse, ...).
struct precondition_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised for inputs the toolkit deliberately does not handle.
struct unsupported_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int multi_index_order(std::span<const int> idx);

/// Point on the unit torus times action space. Angles are reduced mod 1
/// componentwise on construction.
struct TorusPoint {
    std::vector<double> theta;
    std::vector<double> I;

    TorusPoint(std::vector<double> th, std::vector<double> act);
    static TorusPoint angles(std::vector<double> th);
};

/// Term index of a Fourier-Taylor series: Fourier mode k (stored in the
/// canonical half-lattice: k = 0 or first nonzero entry positive) and an
/// action monomial m with non-negative entries.
struct TermKey {
    std::vector<int> k;
    std::vector<int> m;

    bool operator<(const TermKey& o) const {
        if (k != o.k) return k < o.k;
        return m < o.m;
    }
    bool operator==(const TermKey& o) const { return k == o.k && m == o.m; }
};

/// cos/sin amplitude pair of one term. For k = 0 the sine part is zero.
struct Amplitude {
    double c = 0.0;
    double s = 0.0;
};

/// Truncated real Fourier-Taylor series on T^n x R^n:
///
///   f(theta, I) = sum over (k, m) of
///       [c cos(2 pi k.theta) + s sin(2 pi k.theta)] * I^m
///
/// with |k| <= K (l1) and |m| <= dI <= 2. Storage is sparse; values are
/// immutable in spirit: all operations below return new series. Operations
/// that drop terms (Fourier truncation, action-degree cap) accumulate the
/// dropped l1 coefficient mass in discarded_mass so callers can bound the
/// truncation error.
class FourierTaylorSeries {
public:
    FourierTaylorSeries(int n, int K, int dI);

    static FourierTaylorSeries constant(int n, double value, int K = 0, int dI = 0);
    /// Single Fourier mode: c cos(2 pi k.theta) + s sin(2 pi k.theta).
    static FourierTaylorSeries mode(int n, std::span<const int> k, double c, double s);
    /// Linear action form v . I.
    static FourierTaylorSeries linear_action(int n, std::span<const double> v, int K = 0);

    int dimension() const { return n_; }
    int truncation() const { return K_; }
    int action_degree() const { return dI_; }
    double discarded_mass() const { return discarded_; }
    const std::map<TermKey, Amplitude>& terms() const { return terms_; }
    std::size_t term_count() const { return terms_.size(); }

    /// Adds c cos + s sin at mode k, monomial m. Non-canonical k is folded
    /// onto its canonical representative (sine flips sign). Terms outside
    /// the K/dI box are rejected.
    void add_term(std::span<const int> k, std::span<const int> m, double c, double s);
    void add_term(const TermKey& key, const Amplitude& a) { add_term(key.k, key.m, a.c, a.s); }
    void add_term(std::initializer_list<int> k, std::initializer_list<int> m, double c, double s) {
        add_term(std::span<const int>(k.begin(), k.size()),
                 std::span<const int>(m.begin(), m.size()), c, s);
    }

    Amplitude amplitude(std::span<const int> k, std::span<const int> m) const;
    Amplitude amplitude(std::initializer_list<int> k, std::initializer_list<int> m) const {
        return amplitude(std::span<const int>(k.begin(), k.size()),
                         std::span<const int>(m.begin(), m.size()));
    }
    Amplitude amplitude(std::span<const int> k, std::initializer_list<int> m) const {
        return amplitude(k, std::span<const int>(m.begin(), m.size()));
    }
    Amplitude amplitude(std::initializer_list<int> k, std::span<const int> m) const {
        return amplitude(std::span<const int>(k.begin(), k.size()), m);
    }

    double evaluate(const TorusPoint& p) const;
    /// Pure-angle evaluation; valid only for dI == 0 terms (action monomials
    /// are skipped as if I = 0 except the constant monomial).
    double evaluate_at_zero_action(std::span<const double> theta) const;

    /// l1 mass of all coefficients (|c| + |s| summed over terms).
    double coefficient_mass() const;
    /// Max |c|,|s| over terms.
    double max_amplitude() const;

    void accumulate_discarded(double mass) { discarded_ += mass; }
    /// Drops terms with |c|+|s| <= tol (recorded in discarded_mass).
    void prune(double tol);

    bool same_shape(const FourierTaylorSeries& o) const {
        return n_ == o.n_;
    }

private:
    int n_;
    int K_;
    int dI_;
    double discarded_ = 0.0;
    std::map<TermKey, Amplitude> terms_;
};

FourierTaylorSeries add_scale(const FourierTaylorSeries& f, const FourierTaylorSeries& g,
                              double a, double b);

/// Product with explicit output truncation. Combined action degree above
/// dI_out is dropped and recorded; same for Fourier modes above K_out.
FourierTaylorSeries multiply(const FourierTaylorSeries& f, const FourierTaylorSeries& g,
                             int K_out, int dI_out);
/// Product at K_out = Kf + Kg; fails if the combined action degree exceeds 2.
FourierTaylorSeries multiply(const FourierTaylorSeries& f, const FourierTaylorSeries& g);

enum class Var { angle, action };

/// Exact derivative of the truncated series. Angle derivatives carry the
/// unit-torus phase factor 2 pi.
FourierTaylorSeries partial_derivative(const FourierTaylorSeries& f, Var which, int index);

/// {f, g} = grad_theta f . grad_I g - grad_I f . grad_theta g, with the
/// result action degree capped at 2. The sign is fixed so that
/// {C, e + v.I} = v . grad_theta C.
FourierTaylorSeries poisson_bracket(const FourierTaylorSeries& f, const FourierTaylorSeries& g);

/// Average along the periodic flow of the rational direction v with
/// denominator q (qv integral): retains exactly the modes with k.(qv) = 0.
FourierTaylorSeries average_along(const FourierTaylorSeries& f, std::span<const double> v, long long q);
FourierTaylorSeries average_along_integer(const FourierTaylorSeries& f, std::span<const long long> qv);

/// Torus average: retains the k = 0 modes only.
FourierTaylorSeries full_average(const FourierTaylorSeries& f);

/// Regular product grid on the unit torus, sizes N_1 x ... x N_n,
/// theta_g = (g_1/N_1, ..., g_n/N_n), row-major flattening.
class AngleGrid {
public:
    AngleGrid(std::vector<int> sizes);

    int dimension() const { return static_cast<int>(sizes_.size()); }
    const std::vector<int>& sizes() const { return sizes_; }
    std::size_t point_count() const { return count_; }
    std::vector<double> point(std::size_t flat) const;
    void point_into(std::size_t flat, std::span<double> out) const;

    /// Samples a callable f(theta) over the grid, row-major.
    template <class F>
    std::vector<double> sample(F&& f) const {
        std::vector<double> out(count_);
        std::vector<double> th(dimension());
        for (std::size_t i = 0; i < count_; ++i) {
            point_into(i, th);
            out[i] = f(std::span<const double>(th));
        }
        return out;
    }

private:
    std::vector<int> sizes_;
    std::size_t count_;
};

struct RefitResult {
    FourierTaylorSeries series;
    /// Max over grid points of |series(theta_g) - sample_g|; nonzero when
    /// the sampled function has content outside |k| <= K.
    double alias_residual = 0.0;
};

/// Discrete Fourier analysis of grid samples, truncated to |k| <= K.
/// Requires N_i >= 2K + 2 in every direction.
RefitResult grid_refit(const AngleGrid& grid, std::span<const double> samples, int K);

/// Assembles a dI <= 2 series from per-monomial angle samples: jets[m] holds
/// the grid samples of the coefficient function of the monomial I^m.
RefitResult grid_refit_jets(const AngleGrid& grid,
                            const std::map<std::vector<int>, std::vector<double>>& jets,
                            int K);

}  // namespace gkam
