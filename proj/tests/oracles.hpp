#pragma once

// Brute-force reference implementations of the contrastive objectives,
// written as straight-line 64-bit arithmetic with plain exponential ratios
// (no log-space evaluation). These exist only to cross-check the library and
// must stay independent of it.

#include <cmath>
#include <stdexcept>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major list of vectors

inline double dot(const Vec& a, const Vec& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double cosine(const Vec& a, const Vec& b, double tau) {
    return dot(a, b) / (tau * norm(a) * norm(b));
}

// g(c, z) = exp(c^T W z) with W given as rows over c-dims.
inline double pair_score(const Vec& c, const Mat& w, const Vec& z) {
    double s = 0;
    for (size_t i = 0; i < c.size(); ++i) s += c[i] * dot(w[i], z);
    return std::exp(s);
}

// Both cross-forecasting directions, direct ratio form.
inline double tc_loss(const Mat& ctx_s, const Mat& ctx_w, const Mat& zk_s, const Mat& zk_w, const Mat& w) {
    const size_t B = ctx_s.size();
    double ls = 0, lw = 0;
    for (size_t i = 0; i < B; ++i) {
        double den_s = 0, den_w = 0;
        for (size_t j = 0; j < B; ++j) {
            den_s += pair_score(ctx_w[i], w, zk_s[j]);
            den_w += pair_score(ctx_s[i], w, zk_w[j]);
        }
        ls += -std::log(pair_score(ctx_w[i], w, zk_s[i]) / den_s);
        lw += -std::log(pair_score(ctx_s[i], w, zk_w[i]) / den_w);
    }
    return 0.5 * (ls / double(B) + lw / double(B));
}

inline double ell(const Mat& set, size_t i, size_t j, double mu, double tau) {
    double den = 0;
    for (size_t k = 0; k < set.size(); ++k)
        if (k != i) den += std::exp(cosine(set[i], set[k], tau));
    return -std::log(std::exp(mu * cosine(set[i], set[j], tau)) / den);
}

// One projection set: mean over elements of the four pair terms (each
// element's terms averaged, not summed).
inline double sicc_set(const Mat& k_left, const Mat& k_aug, const Mat& k_right, const Vec& lambdas,
                       double tau) {
    const size_t B = k_left.size();
    Mat set;
    for (const auto& v : k_left) set.push_back(v);
    for (const auto& v : k_aug) set.push_back(v);
    for (const auto& v : k_right) set.push_back(v);
    double total = 0;
    for (size_t i = 0; i < B; ++i) {
        const double li = lambdas[i];
        double terms = ell(set, i, B + i, 1.0 - li, tau) + ell(set, B + i, i, 1.0 - li, tau) +
                       ell(set, B + i, 2 * B + i, li, tau) + ell(set, 2 * B + i, B + i, li, tau);
        total += terms / 4.0;
    }
    return total / double(B);
}

inline double sicc_loss(const Mat& k_l, const Mat& k_s, const Mat& k_w, const Mat& k_r, const Vec& lambdas,
                        double tau) {
    return 0.5 * (sicc_set(k_l, k_s, k_r, lambdas, tau) + sicc_set(k_l, k_w, k_r, lambdas, tau));
}

}  // namespace oracle
