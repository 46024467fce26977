#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "xit/graph.hpp"
#include "xit/tensor.hpp"

namespace xit::losses {

// ---- graph builders (the trainable path) ----

// Cross-forecasting InfoNCE: each view's context predicts the other view's
// final embedding through the bilinear map W. Both directions averaged.
template <typename S>
typename Graph<S>::NodeRef tc_loss(Graph<S>& g, typename Graph<S>::NodeRef ctx_s,
                                   typename Graph<S>::NodeRef ctx_w, typename Graph<S>::NodeRef zk_s,
                                   typename Graph<S>::NodeRef zk_w, typename Graph<S>::NodeRef w) {
    auto logits_s = g.matmul(g.matmul(ctx_w, w), g.transpose(zk_s));  // rows: weak ctx, cols: strong z^K
    auto logits_w = g.matmul(g.matmul(ctx_s, w), g.transpose(zk_w));
    return g.add_scaled(g.info_nce_diag(logits_s), S(0.5), g.info_nce_diag(logits_w), S(0.5));
}

// One projection set: rows [left originals | augmented mixed | right originals],
// cosine similarities scaled by 1/tau, soft-weighted pair terms.
template <typename S>
typename Graph<S>::NodeRef sicc_set_loss(Graph<S>& g, typename Graph<S>::NodeRef k_left,
                                         typename Graph<S>::NodeRef k_aug, typename Graph<S>::NodeRef k_right,
                                         const std::vector<double>& lambdas, double tau) {
    if (tau <= 0) throw std::invalid_argument("sicc: tau must be > 0");
    auto stacked = g.concat_rows({k_left, k_aug, k_right});
    auto normed = g.l2_normalize_rows(stacked);
    auto sims = g.scale(g.matmul(normed, g.transpose(normed)), S(1.0 / tau));
    return g.soft_contrast_terms(sims, lambdas);
}

template <typename S>
typename Graph<S>::NodeRef sicc_loss(Graph<S>& g, typename Graph<S>::NodeRef k_left,
                                     typename Graph<S>::NodeRef k_strong, typename Graph<S>::NodeRef k_weak,
                                     typename Graph<S>::NodeRef k_right, const std::vector<double>& lambdas,
                                     double tau) {
    auto ls = sicc_set_loss(g, k_left, k_strong, k_right, lambdas, tau);
    auto lw = sicc_set_loss(g, k_left, k_weak, k_right, lambdas, tau);
    return g.add_scaled(ls, S(0.5), lw, S(0.5));
}

template <typename S>
typename Graph<S>::NodeRef total_loss(Graph<S>& g, typename Graph<S>::NodeRef l_tc,
                                      typename Graph<S>::NodeRef l_sicc, double beta) {
    if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("total_loss: beta must be in [0,1]");
    return g.add_scaled(l_tc, S(beta), l_sicc, S(1.0 - beta));
}

// ---- value-level API ----

// All fields are (B, dim) matrices; lambda[i] is the right-neighbour weight
// used when mixing element i.
struct ContrastViews {
    TensorD ctx_s, ctx_w;       // contexts of the strong / weak view
    TensorD zk_s, zk_w;         // final embedding vectors of each view
    TensorD k_l, k_s, k_w, k_r; // projections: left originals, strong, weak, right originals
    std::vector<double> lambdas;

    int64_t batch() const { return ctx_s.dim(0); }
};

inline double cosine_sim(const std::vector<double>& u, const std::vector<double>& v, double tau) {
    if (tau <= 0) throw std::invalid_argument("cosine_sim: tau must be > 0");
    if (u.size() != v.size()) throw std::invalid_argument("cosine_sim: dimension mismatch");
    double uu = 0, vv = 0, uv = 0;
    for (size_t i = 0; i < u.size(); ++i) {
        uu += u[i] * u[i];
        vv += v[i] * v[i];
        uv += u[i] * v[i];
    }
    if (uu == 0.0 || vv == 0.0) throw std::invalid_argument("cosine_sim: zero vector");
    return uv / (tau * std::sqrt(uu) * std::sqrt(vv));
}

// -log( exp(mu * sim(set[i], set[j])) / sum_{k != i} exp(sim(set[i], set[k])) ),
// log-sum-exp stabilized. Only the numerator similarity is scaled by mu.
inline double ell(const std::vector<std::vector<double>>& set, size_t i, size_t j, double mu, double tau) {
    if (i == j) throw std::invalid_argument("ell: i and j must differ");
    if (i >= set.size() || j >= set.size()) throw std::out_of_range("ell: index out of range");
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> sims(set.size());
    for (size_t k = 0; k < set.size(); ++k) {
        if (k == i) continue;
        sims[k] = cosine_sim(set[i], set[k], tau);
        mx = std::max(mx, sims[k]);
    }
    double z = 0;
    for (size_t k = 0; k < set.size(); ++k)
        if (k != i) z += std::exp(sims[k] - mx);
    return -mu * cosine_sim(set[i], set[j], tau) + mx + std::log(z);
}

namespace detail {
inline Graph<double>::NodeRef leaf(Graph<double>& g, const TensorD& t) { return g.leaf(t, false); }
}

inline double tc_loss_value(const ContrastViews& v, const TensorD& w) {
    Graph<double> g;
    auto loss = tc_loss(g, detail::leaf(g, v.ctx_s), detail::leaf(g, v.ctx_w), detail::leaf(g, v.zk_s),
                        detail::leaf(g, v.zk_w), detail::leaf(g, w));
    return loss->value[0];
}

inline double sicc_loss_value(const ContrastViews& v, double tau) {
    Graph<double> g;
    auto loss = sicc_loss(g, detail::leaf(g, v.k_l), detail::leaf(g, v.k_s), detail::leaf(g, v.k_w),
                          detail::leaf(g, v.k_r), v.lambdas, tau);
    return loss->value[0];
}

inline double total_loss_value(double l_tc, double l_sicc, double beta) {
    if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("total_loss: beta must be in [0,1]");
    if (!std::isfinite(l_tc) || !std::isfinite(l_sicc)) throw std::invalid_argument("total_loss: non-finite input");
    return beta * l_tc + (1.0 - beta) * l_sicc;
}

// -log softmax(logits)[label]
inline double cross_entropy_from_logits(const std::vector<double>& logits, int label) {
    if (label < 0 || static_cast<size_t>(label) >= logits.size())
        throw std::out_of_range("cross_entropy: invalid label");
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double z = 0;
    for (double v : logits) z += std::exp(v - mx);
    return mx + std::log(z) - logits[static_cast<size_t>(label)];
}

}  // namespace xit::losses
