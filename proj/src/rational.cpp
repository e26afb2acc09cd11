#include "gkam/rational.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace gkam {

namespace {

using boost::multiprecision::abs;
using boost::multiprecision::gcd;

BigInt det2(const BigInt& a, const BigInt& b, const BigInt& c, const BigInt& d) {
    return a * d - b * c;
}

long long to_ll(const BigInt& v) {
    if (v > std::numeric_limits<long long>::max() || v < std::numeric_limits<long long>::min())
        throw precondition_error("integer vector exceeds 64-bit range");
    return static_cast<long long>(v);
}

}  // namespace

std::vector<double> RationalVector::value() const {
    std::vector<double> v(dimension());
    v[0] = 1.0;
    double qd = static_cast<double>(q);
    for (std::size_t i = 0; i < p.size(); ++i) v[i + 1] = static_cast<double>(p[i]) / qd;
    return v;
}

std::vector<BigInt> RationalVector::integer_vector() const {
    std::vector<BigInt> v;
    v.push_back(q);
    for (const auto& pi : p) v.push_back(pi);
    return v;
}

std::vector<long long> RationalVector::integer_vector_ll() const {
    std::vector<long long> v;
    v.push_back(to_ll(q));
    for (const auto& pi : p) v.push_back(to_ll(pi));
    return v;
}

double RationalVector::error(std::span<const double> omega) const {
    if (static_cast<int>(omega.size()) != dimension())
        throw structural_error("RationalVector::error: dimension mismatch");
    double qd = static_cast<double>(q);
    double e = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        e += std::abs(omega[i + 1] - static_cast<double>(p[i]) / qd);
    return e;
}

BigInt det3(const std::array<std::vector<BigInt>, 3>& r) {
    return r[0][0] * det2(r[1][1], r[1][2], r[2][1], r[2][2]) -
           r[0][1] * det2(r[1][0], r[1][2], r[2][0], r[2][2]) +
           r[0][2] * det2(r[1][0], r[1][1], r[2][0], r[2][1]);
}

std::array<std::vector<BigInt>, 3> unimodular_complete3(const std::vector<BigInt>& w) {
    if (w.size() != 3) throw structural_error("unimodular_complete3: need a 3-vector");
    BigInt g01 = gcd(abs(w[0]), abs(w[1]));
    // extended gcd for a w0 + b w1 = g01
    auto ext_gcd = [](BigInt a, BigInt b, BigInt& x, BigInt& y) {
        BigInt x0 = 1, y0 = 0, x1 = 0, y1 = 1;
        while (b != 0) {
            BigInt t = a / b;
            BigInt r = a - t * b;
            a = b;
            b = r;
            BigInt nx = x0 - t * x1, ny = y0 - t * y1;
            x0 = x1;
            y0 = y1;
            x1 = nx;
            y1 = ny;
        }
        x = x0;
        y = y0;
        return a;
    };

    std::array<std::vector<BigInt>, 3> rows;
    rows[0] = w;
    if (g01 == 0) {
        // w = (0, 0, w2): need |w2| = 1
        if (abs(w[2]) != 1) throw structural_error("unimodular_complete3: vector not primitive");
        rows[1] = {1, 0, 0};
        rows[2] = {0, 1, 0};
        if (det3(rows) < 0) std::swap(rows[1], rows[2]);
        return rows;
    }
    BigInt a, b;
    BigInt g = ext_gcd(w[0], w[1], a, b);  // a w0 + b w1 = g01
    BigInt c, d;
    BigInt e = ext_gcd(g, w[2], c, d);  // c g01 + d w2 = gcd(w)
    if (abs(e) != 1) throw structural_error("unimodular_complete3: vector not primitive");
    // classical two-step completion; determinant is +-1 by construction
    rows[1] = {-b, a, 0};
    rows[2] = {-d * (w[0] / g), -d * (w[1] / g), c};
    BigInt dd = det3(rows);
    if (abs(dd) != 1) throw structural_error("unimodular_complete3: internal failure");
    return rows;
}

namespace {

struct Candidate {
    RationalVector v;
    double err;      // |omega - v|_1
    double quality;  // err * q * Q
};

ApproxBasis basis_n2(const FrequencyProfile& profile, double Q) {
    const double nu = profile.omega()[1];
    // enough convergents to pass the l1 ball of radius Q
    CFResult cf = profile.exact_nu() ? cf_convergents_exact(*profile.exact_nu(), 80)
                                     : cf_convergents(std::abs(nu), 80);
    const bool negate = nu < 0.0;
    int K = -1;
    for (std::size_t j = 0; j < cf.convergents.size(); ++j) {
        BigInt size = abs(cf.convergents[j].p) + cf.convergents[j].q;
        if (size <= BigInt(static_cast<long long>(std::floor(Q))))
            K = static_cast<int>(j);
        else
            break;
    }
    if (K < 0 || K + 1 >= static_cast<int>(cf.convergents.size()))
        throw precondition_error("simultaneous_approx: not enough convergents at this Q "
                                 "(rational or near-rational input)");
    ApproxBasis basis;
    basis.Q = Q;
    for (int j = K; j <= K + 1; ++j) {
        RationalVector v;
        v.q = cf.convergents[static_cast<std::size_t>(j)].q;
        BigInt p = cf.convergents[static_cast<std::size_t>(j)].p;
        v.p = {negate ? BigInt(-p) : p};
        basis.vectors.push_back(std::move(v));
    }
    const auto& v0 = basis.vectors[0];
    const auto& v1 = basis.vectors[1];
    basis.det = det2(v0.q, v0.p[0], v1.q, v1.p[0]);
    for (const auto& v : basis.vectors)
        basis.quality.push_back(v.error(profile.omega()) * static_cast<double>(v.q) * Q);
    return basis;
}

ApproxBasis basis_n3(const FrequencyProfile& profile, double Q, const Envelope& env,
                     const ApproxOptions& opt) {
    const auto& omega = profile.omega();
    double psiQ = env.psi(std::min(Q, env.sampled_to() > 0 ? env.sampled_to() : Q));
    long long q_max = static_cast<long long>(std::min(1e7, opt.denominator_budget * psiQ));

    std::vector<Candidate> pool;
    for (long long q = 1; q <= q_max; ++q) {
        RationalVector v;
        v.q = q;
        v.p.resize(2);
        for (int i = 0; i < 2; ++i)
            v.p[i] = static_cast<long long>(std::llround(q * omega[i + 1]));
        double err = v.error(omega);
        Candidate cand{std::move(v), err, err * static_cast<double>(q) * Q};
        pool.push_back(std::move(cand));
    }
    std::sort(pool.begin(), pool.end(),
              [](const Candidate& a, const Candidate& b) { return a.quality < b.quality; });
    if (pool.size() > static_cast<std::size_t>(opt.candidate_pool))
        pool.resize(static_cast<std::size_t>(opt.candidate_pool));

    // best unimodular triple from the pool
    const std::size_t P = pool.size();
    double best_maxq = std::numeric_limits<double>::infinity();
    std::array<std::size_t, 3> best{};
    bool found = false;
    for (std::size_t i = 0; i < P; ++i) {
        for (std::size_t j = i + 1; j < P; ++j) {
            for (std::size_t k = j + 1; k < P; ++k) {
                std::array<std::vector<BigInt>, 3> rows{pool[i].v.integer_vector(),
                                                        pool[j].v.integer_vector(),
                                                        pool[k].v.integer_vector()};
                if (abs(det3(rows)) != 1) continue;
                double mq = std::max({pool[i].quality, pool[j].quality, pool[k].quality});
                if (mq < best_maxq) {
                    best_maxq = mq;
                    best = {i, j, k};
                    found = true;
                }
            }
        }
    }

    ApproxBasis basis;
    basis.Q = Q;
    if (found) {
        for (std::size_t idx : best) basis.vectors.push_back(pool[idx].v);
    } else {
        // Hermite-style completion from the best primitive candidate, rows
        // improved by integer shifts toward the omega ray.
        if (pool.empty()) throw precondition_error("simultaneous_approx: empty candidate pool");
        std::vector<BigInt> w = pool[0].v.integer_vector();
        BigInt g = gcd(gcd(abs(w[0]), abs(w[1])), abs(w[2]));
        for (auto& x : w) x /= g;
        auto rows = unimodular_complete3(w);
        auto ray_err = [&](const std::vector<BigInt>& u) {
            double u0 = static_cast<double>(u[0]);
            double e = 0.0;
            for (int i = 1; i < 3; ++i)
                e += std::abs(static_cast<double>(u[i]) - u0 * omega[static_cast<std::size_t>(i)]);
            return e;  // = q |omega - v|, the numerator of the quality
        };
        for (int r = 1; r < 3; ++r) {
            // shift u <- u + m w to bring u near the ray and make u0 positive
            auto& u = rows[static_cast<std::size_t>(r)];
            double best_err = std::numeric_limits<double>::infinity();
            BigInt best_m = 0;
            double u0 = static_cast<double>(u[0]);
            double w0 = static_cast<double>(w[0]);
            long long m_center = w0 != 0.0 ? static_cast<long long>(std::llround(-u0 / w0)) : 0;
            for (long long m = m_center - 512; m <= m_center + 512; ++m) {
                std::vector<BigInt> trial = u;
                for (int i = 0; i < 3; ++i) trial[static_cast<std::size_t>(i)] += m * w[static_cast<std::size_t>(i)];
                if (trial[0] < 1) continue;
                double e = ray_err(trial);
                if (e < best_err) {
                    best_err = e;
                    best_m = m;
                }
            }
            for (int i = 0; i < 3; ++i) u[static_cast<std::size_t>(i)] += best_m * w[static_cast<std::size_t>(i)];
            if (u[0] < 1)
                throw precondition_error("simultaneous_approx: completion left a non-positive "
                                         "denominator");
        }
        for (const auto& row : rows) {
            RationalVector v;
            v.q = row[0];
            v.p = {row[1], row[2]};
            basis.vectors.push_back(std::move(v));
        }
    }

    std::array<std::vector<BigInt>, 3> rows{basis.vectors[0].integer_vector(),
                                            basis.vectors[1].integer_vector(),
                                            basis.vectors[2].integer_vector()};
    basis.det = det3(rows);
    for (const auto& v : basis.vectors)
        basis.quality.push_back(v.error(omega) * static_cast<double>(v.q) * Q);
    if (abs(basis.det) != 1) {
        std::ostringstream os;
        os << "simultaneous_approx: no unimodular basis within the denominator budget"
           << " (best qualities:";
        for (double qv : basis.quality) os << " " << qv;
        os << ")";
        throw precondition_error(os.str());
    }
    return basis;
}

}  // namespace

ApproxBasis simultaneous_approx(const FrequencyProfile& profile, double Q, const Envelope& env,
                                const ApproxOptions& opt) {
    if (profile.resonant())
        throw precondition_error("simultaneous_approx: resonant frequency rejected");
    if (Q < profile.dimension() + 2)
        throw structural_error("simultaneous_approx: Q must be >= n + 2");
    switch (profile.dimension()) {
        case 2: return basis_n2(profile, Q);
        case 3: return basis_n3(profile, Q, env, opt);
        default:
            throw unsupported_error("simultaneous_approx: n > 3 not supported at desk scale");
    }
}

BasisReport verify_basis(const ApproxBasis& basis, std::span<const double> omega,
                         const Envelope& env) {
    BasisReport rep;
    const int n = static_cast<int>(omega.size());
    if (static_cast<int>(basis.vectors.size()) != n)
        throw structural_error("verify_basis: wrong vector count");
    if (n == 2) {
        rep.det = det2(basis.vectors[0].q, basis.vectors[0].p[0], basis.vectors[1].q,
                       basis.vectors[1].p[0]);
    } else if (n == 3) {
        std::array<std::vector<BigInt>, 3> rows{basis.vectors[0].integer_vector(),
                                                basis.vectors[1].integer_vector(),
                                                basis.vectors[2].integer_vector()};
        rep.det = det3(rows);
    } else {
        throw unsupported_error("verify_basis: n > 3 not supported");
    }
    rep.unimodular = abs(rep.det) == 1;
    double psiQ = env.psi(basis.Q);
    for (const auto& v : basis.vectors) {
        double quality = v.error(omega) * static_cast<double>(v.q) * basis.Q;
        rep.quality.push_back(quality);
        rep.max_quality = std::max(rep.max_quality, quality);
        rep.q_psi_ratio.push_back(static_cast<double>(v.q) / psiQ);
    }
    return rep;
}

}  // namespace gkam
