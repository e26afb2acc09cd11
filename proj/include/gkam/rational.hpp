#pragma once

#include <vector>

#include "gkam/arithmetic.hpp"

namespace gkam {

/// Rational approximation vector v = (1, p/q): q v is the integer vector
/// (q, p_1, ..., p_{n-1}). Denominators are kept exact (big integers) so
/// unimodularity is never a floating-point statement.
struct RationalVector {
    BigInt q;
    std::vector<BigInt> p;  // n - 1 numerators

    int dimension() const { return static_cast<int>(p.size()) + 1; }
    std::vector<double> value() const;           // (1, p/q) as doubles
    std::vector<BigInt> integer_vector() const;  // q v
    /// q v as long long; throws when any entry exceeds 64 bits.
    std::vector<long long> integer_vector_ll() const;
    /// l1 distance |omega - v|.
    double error(std::span<const double> omega) const;
};

/// n rational vectors whose integer multiples form a Z-basis of Z^n.
struct ApproxBasis {
    std::vector<RationalVector> vectors;
    double Q = 0.0;
    BigInt det;                   // determinant of the rows q_j v_j
    std::vector<double> quality;  // |omega - v_j| q_j Q per vector
};

struct BasisReport {
    BigInt det;
    bool unimodular = false;
    std::vector<double> quality;      // |omega - v_j| q_j Q
    std::vector<double> q_psi_ratio;  // q_j / Psi(Q)
    double max_quality = 0.0;
};

struct ApproxOptions {
    double denominator_budget = 64.0;  // search cap as a multiple of Psi(Q)
    int candidate_pool = 48;           // best-approximant pool for n = 3
};

/// Simultaneous rational approximation of omega at parameter Q: n vectors
/// v_j = (1, p_j / q_j) with q_1 v_1, ..., q_n v_n a Z-basis of Z^n and the
/// measured constants reported in quality. n = 2 takes two consecutive
/// continued-fraction convergents (unimodular by the classical determinant
/// identity); n = 3 runs a bounded best-approximant search completed to a
/// unimodular triple by integer linear algebra.
ApproxBasis simultaneous_approx(const FrequencyProfile& profile, double Q,
                                const Envelope& env, const ApproxOptions& opt = {});

BasisReport verify_basis(const ApproxBasis& basis, std::span<const double> omega,
                         const Envelope& env);

/// Completes a primitive integer vector to a unimodular integer matrix whose
/// first row is the given vector (n = 3). Throws when gcd(w) != 1.
std::array<std::vector<BigInt>, 3> unimodular_complete3(const std::vector<BigInt>& w);

BigInt det3(const std::array<std::vector<BigInt>, 3>& rows);

}  // namespace gkam
