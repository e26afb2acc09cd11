#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gkam/gevrey.hpp"
#include "gkam/rational.hpp"
#include "gkam/series.hpp"

namespace gkam {

/// Tensor-product Chebyshev nodes on the box {|omega_i - center_i| <= half}
/// (the parameter ball is realized as a box; the balls shrink by half each
/// step so the containment chain is preserved). Values sampled on the nodes
/// interpolate by barycentric tensor interpolation.
class ParamGrid {
public:
    ParamGrid(std::vector<double> center, double half_width, int degree);

    int dimension() const { return static_cast<int>(center_.size()); }
    int degree() const { return degree_; }
    double half_width() const { return half_; }
    const std::vector<double>& center() const { return center_; }
    int node_count() const { return static_cast<int>(nodes_.size()); }
    const std::vector<std::vector<double>>& nodes() const { return nodes_; }

    double interpolate(std::span<const double> node_values, std::span<const double> point) const;

private:
    std::vector<double> center_;
    double half_;
    int degree_;
    std::vector<double> axis_;     // 1-d Chebyshev points in [-1, 1]
    std::vector<double> weights_;  // barycentric weights
    std::vector<std::vector<double>> nodes_;
};

/// Decomposition of the Hamiltonian at one parameter node:
///   H(theta, I) = e + omega . I + A(theta) + B(theta) . I + M(theta) I . I
/// A has zero angle average (the average lives in e); M is symmetric, stored
/// as its upper triangle (i <= j) row by row.
struct NodeData {
    double e = 0.0;
    FourierTaylorSeries A;
    std::vector<FourierTaylorSeries> B;  // n components, dI = 0
    std::vector<FourierTaylorSeries> M;  // n (n + 1) / 2 entries, dI = 0

    NodeData() : A(1, 0, 0) {}
    explicit NodeData(int n, int K);
};

int sym_index(int n, int i, int j);

/// Parameter-dependent Hamiltonian on the node grid.
struct ParamHamiltonian {
    int n = 2;
    int K = 8;
    double r = 1.0;
    double h = 0.1;
    GevreyParams gevrey{1.0, 1.0};
    std::vector<double> omega0;
    ParamGrid grid;
    std::vector<NodeData> nodes;
    bool vector_field_preset = false;  // A = M = 0 maintained exactly

    NodeData at(std::span<const double> omega) const;
    /// Assembles the full series e + omega.I + A + B.I + M I.I at one node.
    FourierTaylorSeries assemble(int node_index) const;

    double eps_measured() const;  // max over nodes of |A|
    double mu_measured() const;   // max over nodes of |B| (joint vector norm)
    double eta_measured() const;  // max over nodes of |hess_I| = |2M|
};

/// Sampling interface for decompose: jets in I at I = 0 as functions of
/// (theta, omega).
struct HamiltonianSampler {
    std::function<double(std::span<const double>, std::span<const double>)> value;
    std::function<std::vector<double>(std::span<const double>, std::span<const double>)> grad_I;
    std::function<std::vector<double>(std::span<const double>, std::span<const double>)> hess_I;
};

/// Builds the (e, A, B, M) node decomposition of a sampled Hamiltonian:
/// e = [H(.,0,omega)], A the oscillating part, B = grad_I H(.,0,omega) -
/// omega, M = hess_I / 2. Fails when the refit aliasing exceeds the budget.
ParamHamiltonian decompose(const HamiltonianSampler& H, std::vector<double> omega0, double r,
                           double h, int K, const GevreyParams& gevrey, int node_degree = 3,
                           int grid_N = 0, double alias_budget = 1e-8);

/// Symplectic near-identity map (theta, I) -> (theta + E, I + F I + G).
struct TransformSeries {
    std::vector<FourierTaylorSeries> E;  // n
    std::vector<FourierTaylorSeries> F;  // n*n row-major
    std::vector<FourierTaylorSeries> G;  // n

    static TransformSeries identity(int n, int K);
    bool is_identity_shape() const { return !E.empty(); }
};

/// Pointwise application at a torus point.
void apply_transform(const TransformSeries& T, std::span<const double> theta_in,
                     std::span<const double> I_in, std::span<double> theta_out,
                     std::span<double> I_out);

/// Solution of {C, e + v.I} = A - [A]_v mode by mode: the k mode of C is the
/// k mode of A divided by 2 pi i k.v (cos/sin amplitudes rotated), zero on
/// the resonant modes k.(qv) = 0.
FourierTaylorSeries cohomological_solve(const FourierTaylorSeries& A, const RationalVector& v);

/// Max coefficient residual of the defining bracket identity
/// {C, e + v.I} - (A - [A]_v).
double cohomological_residual(const FourierTaylorSeries& C, const FourierTaylorSeries& A,
                              const RationalVector& v);

struct FlowOptions {
    int ode_steps = 64;     // fixed RK4 steps for t in [0, 1] (step <= 1/64)
    int grid_N = 0;         // refit grid per dimension (0: 2K + 4)
    double smallness_constant = 1.0;  // |D| <= c sigma^alpha gate
    bool enforce_smallness = true;
};

struct FlowResult {
    TransformSeries map;
    double picard_residual = 0.0;   // fixed-point defect of the angle flow
    double alias_residual = 0.0;    // worst refit aliasing
    double smallness_ratio = 0.0;   // |D| / sigma^alpha
};

/// Time-t map of the Hamiltonian X = C(theta) + D(theta) . I: the angle flow
/// integrated by fixed-step RK4, F and G by the affine variational equations
/// along the same trajectories, all refit to series.
FlowResult flow_map(const FourierTaylorSeries& C, std::span<const FourierTaylorSeries> D,
                    double t, const GevreyParams& gevrey, double sigma,
                    const FlowOptions& opt = {});

/// det of the Jacobian of (theta, I) -> (theta+E, I+FI+G) minus one, maxed
/// over sample points (block-triangular: det(Id + grad E) det(Id + F)).
double symplectic_deviation(const TransformSeries& T, int samples, std::uint64_t seed);

struct PreconditionCheck {
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;
    double ratio = 0.0;  // lhs / rhs: pass when <= 1
    bool pass = false;
};

/// Explicit constants replacing the qualitative smallness relations; all
/// default to 1 and may be loosened knowingly (every check still reports its
/// measured ratio).
struct KamConstants {
    double c_cond_h = 1.0;      // h <= c / Delta(Q)
    double c_cond_rmu = 1.0;    // r mu <= c delta / Delta(Q)
    double c_cond_eta = 1.0;    // (1 + eta) <= c Q sigma^alpha
    double c_flow_small = 1.0;  // |D_j| <= c sigma^alpha
    bool enforce = true;        // throw on violation (false: record and go on)
};

struct StepDiagnostics {
    int step_index = 0;
    double Q = 0.0, sigma = 0.0, delta = 0.0;
    double eps_declared = 0.0, mu_declared = 0.0;
    double eps_before = 0.0, mu_before = 0.0;
    double eps_after = 0.0, mu_after = 0.0;
    bool eps_target_met = false, mu_target_met = false;
    std::vector<PreconditionCheck> preconditions;
    std::vector<double> stage_smallness;  // per averaging stage
    double cohomological_residual = 0.0;
    double flow_picard_residual = 0.0;
    double max_alias = 0.0;
    double max_symplectic_dev = 0.0;     // stage flows and the composed map
    double phi_inverse_residual = 0.0;   // max |phi(varphi(y)) - y| over nodes
    double omega_shift = 0.0;            // max |varphi(y) - y| over nodes
};

struct StepTransformation {
    /// Composed per-node coordinate maps, indexed like the *next* grid: the
    /// transform stored at new node y was built at the parameter varphi(y).
    std::vector<TransformSeries> per_node;
    /// Angle-average of B on the previous grid (the frequency map data
    /// phi(omega) = omega + avgB(omega)).
    std::vector<std::vector<double>> avgB_prev_nodes;
    /// varphi(y) for every node y of the next grid.
    std::vector<std::vector<double>> varphi_at_new_nodes;
};

struct KamOptions {
    int grid_N = 0;    // angle grid (0: 2K + 4)
    int ode_steps = 64;
    int threads = 0;   // 0: hardware
    double prune_rel = 1e-14;  // relative coefficient floor after refits
    std::uint64_t seed = 2024;
    int symplectic_samples = 100;
};

struct KamStepResult {
    ParamHamiltonian next;
    StepTransformation transform;
    StepDiagnostics diag;
};

/// One normal-form step at parameter Q: n successive averaging stages along
/// the unimodular approximation basis, flow composition, exact-in-I
/// recomposition on the angle grid, frequency-map inversion and re-centering
/// of the parameter nodes on the halved ball.
KamStepResult kam_step(const ParamHamiltonian& H, const FrequencyProfile& profile,
                       const Envelope& env, double Q, double sigma, double delta,
                       double eps_declared, double mu_declared, const KamConstants& constants,
                       const KamOptions& opt);

/// The geometric step schedule: eps_i = 16^-i eps, mu_i = 4^-i mu,
/// delta_i = 2^-i-2 r, h_i = 2^-i h, Delta_i = 2^i Delta(Q0),
/// Q_i = Delta^-1(Delta_i), sigma_i = C Q_i^(-1/alpha), s/r by recursion.
class KamSchedule {
public:
    KamSchedule(double eps, double mu, double r, double h, double s, double alpha, double C,
                long long Q0, const Envelope* env);

    double eps_i(int i) const;
    double mu_i(int i) const;
    double delta_i(int i) const;
    double h_i(int i) const;
    double Delta_i(int i) const;
    double Q_i(int i) const;
    double sigma_i(int i) const;
    double s_i(int i) const;  // s_0 = s, s_{i+1} = s_i - sigma_i
    double r_i(int i) const;
    long long Q0() const { return Q0_; }
    double C() const { return C_; }

private:
    double eps_, mu_, r_, h_, s_, alpha_, C_;
    long long Q0_;
    const Envelope* env_;
    double Delta0_;
    mutable std::vector<double> sigma_cache_;
    void ensure_sigma(int i) const;
};

struct KamConfig {
    double alpha = 1.0;
    double s = 0.1;
    int K = 8;
    int max_steps = 20;
    double residual_floor = 1e-12;
    int node_degree = 3;
    double schedule_c6 = 1.0;   // C = (c6 (1 + eta))^(1/alpha)
    long long Q0_override = 0;  // 0: select via the schedule condition
    KamConstants constants;
    KamOptions options;
};

struct KamResult {
    bool converged = false;
    int steps_done = 0;
    std::vector<double> omega_star;
    double e_star = 0.0;
    double residual_A = 0.0;
    double residual_B = 0.0;
    double omega_shift = 0.0;  // |omega_star - omega0|_1
    TransformSeries embedding; // accumulated (E*, F*, G*) at omega0
    std::vector<StepDiagnostics> history;
    std::string failure;       // set when a precondition broke mid-run
    long long Q0 = 0;
    double schedule_C = 0.0;
    /// Max deviation, on sample points, between the accumulated map and the
    /// sequential application of the per-step transformations.
    double composition_check = 0.0;
};

/// Iterates kam_step on the schedule until both measured residual norms fall
/// below the floor or max_steps is reached. The per-step transformations are
/// accumulated through the inductive composition formulas; omega_star is the
/// limit of the inverse frequency-map chain at omega0.
KamResult kam_iterate(const ParamHamiltonian& H0, const FrequencyProfile& profile,
                      const Envelope& env, const KamConfig& config);

struct InvarianceReport {
    double algebraic_A = 0.0;
    double algebraic_B = 0.0;
    double dynamical_max_dev = 0.0;
    double T = 0.0;
    int trajectories = 0;
};

/// Dynamical invariance check for separable originals
/// H(q, p) = sum lambda_i p_i^2 / 2 + epsilon f(q): leapfrog integration from
/// embedded points against the rotated embedding Theta(theta0 + t omega0).
InvarianceReport invariance_residual(
    const KamResult& result, std::span<const double> omega0, std::span<const double> lambda,
    const std::function<std::vector<double>(std::span<const double>)>& grad_f, double epsilon,
    std::span<const double> p_star, double T, double dt, int trajectories, std::uint64_t seed);

/// Vector-field variant: integrates theta' = omega_star + B(theta) against
/// the conjugated linear flow.
InvarianceReport invariance_residual_vector_field(
    const KamResult& result, std::span<const double> omega0,
    std::span<const FourierTaylorSeries> B, double T, double dt, int trajectories,
    std::uint64_t seed);

}  // namespace gkam
