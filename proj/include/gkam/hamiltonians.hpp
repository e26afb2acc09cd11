#pragma once

#include <functional>
#include <vector>

#include "gkam/kam.hpp"

namespace gkam {

/// Closed-form integrable Hamiltonian with derivative callbacks.
struct IntegrableSpec {
    int n = 2;
    std::function<double(std::span<const double>)> h;
    std::function<std::vector<double>(std::span<const double>)> grad_h;
    std::function<std::vector<double>(std::span<const double>)> hess_h;  // row-major n*n

    /// |p|^2 / 2
    static IntegrableSpec quadratic(int n);
    /// p . diag(lambda) p / 2
    static IntegrableSpec diagonal(std::vector<double> lambda);
    /// |p|^2 / 2 + beta sum p_i^4 / 4 (non-quadratic nondegeneracy example)
    static IntegrableSpec quartic(int n, double beta);

    bool nondegenerate_at(std::span<const double> p0) const;
    /// Bordered Hessian [[hess, grad^T], [grad, 0]], row-major (n+1)^2, and
    /// its determinant (iso-energetic nondegeneracy indicator, reported only).
    std::vector<double> bordered_hessian(std::span<const double> p0) const;
    double bordered_det(std::span<const double> p0) const;
};

/// Perturbation f(q, p) with action jets to order 2.
struct PerturbationSpec {
    std::function<double(std::span<const double>, std::span<const double>)> f;
    std::function<std::vector<double>(std::span<const double>, std::span<const double>)> grad_p;
    std::function<std::vector<double>(std::span<const double>, std::span<const double>)> hess_p;

    /// p-independent trigonometric perturbation.
    static PerturbationSpec angle_only(FourierTaylorSeries series);
};

struct ExpandResult {
    ParamHamiltonian H;
    double epsilon_ham = 0.0;  // measured |A| over the nodes
    double mu_wired = 0.0;     // sqrt(epsilon_ham), the classical reduction choice
    double eta_ham = 0.0;      // measured |hess_I|
};

/// Frequency-parameter expansion of h + epsilon f around the action with
/// grad h = omega: per node the action p(omega) is found by Newton inversion
/// of grad h, then e(omega) = h(p), A = epsilon f(., p), B = epsilon
/// grad_p f, M = (hess h + epsilon hess_p f) / 2.
ExpandResult expand_at_action(const IntegrableSpec& spec, const PerturbationSpec& f,
                              double epsilon, std::vector<double> omega0, double r, double h,
                              int K, const GevreyParams& gevrey, int node_degree = 3);

/// H(theta, I, omega) = omega . I + B(theta) . I with A = M = e = 0 and the
/// solver preset flag raised (the schedule then runs on mu alone).
ParamHamiltonian vector_field_embed(std::span<const FourierTaylorSeries> B,
                                    std::vector<double> omega0, double r, double h, int K,
                                    const GevreyParams& gevrey, int node_degree = 3);

/// Two-frequency trigonometric destruction family on the 2 pi-periodic
/// torus; internally rescaled to the unit torus with the mode integers kept.
struct BessiSpec {
    double alpha = 1.0;
    double s = 0.5;
    double epsilon = 1.0;  // in (0, 1]
    double mu = 1.0;       // in (0, 1]
    std::vector<int> k;
    std::vector<int> k_tilde;

    void validate() const;  // k_tilde . k = 0, |k_tilde| <= |k|, ranges
    double nu() const;        // exp(-s alpha (4 |k|)^(1/alpha))
    double nu_tilde() const;  // same with k_tilde
};

struct BessiResult {
    FourierTaylorSeries F{1, 0, 0};  // the perturbation (unit-torus modes)
    double nu = 0.0;
    double nu_tilde = 0.0;
    double norm = 0.0;   // Gevrey norm in the 2 pi-torus convention
    double ratio = 0.0;  // norm / epsilon
};

/// F = epsilon nu (1 - cos(k.theta)) (1 + mu nu_tilde cos(k_tilde.theta)),
/// expanded into its four (or two, when mu = 0) cosine modes, with the norm
/// compared against the claimed uniform multiple of epsilon.
BessiResult bessi_hamiltonian(const BessiSpec& spec);

struct ResonanceWitness {
    std::vector<int> k;
    double dot = 0.0;    // |k . omega|
    double bound = 0.0;  // exp(-s0 alpha (4 |k|)^(1/alpha))
};

/// Scans 0 < |k| <= horizon for modes with 0 < |k.omega| <= bound. Absence
/// of witnesses at a horizon is not a verdict.
std::vector<ResonanceWitness> condition_C_alpha(std::span<const double> omega, double alpha,
                                                double s0, int horizon);

}  // namespace gkam
