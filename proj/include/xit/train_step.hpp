#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "xit/augment.hpp"
#include "xit/data.hpp"
#include "xit/graph.hpp"
#include "xit/losses.hpp"
#include "xit/mixup.hpp"
#include "xit/model.hpp"

namespace xit::train {

enum class Ablation { full, xd_sicc, xd_tc, tc_only };

inline const char* to_string(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::xd_sicc: return "xd_sicc";
        case Ablation::xd_tc: return "xd_tc";
        case Ablation::tc_only: return "tc_only";
    }
    return "full";
}

inline Ablation ablation_from_string(const std::string& s) {
    if (s == "full") return Ablation::full;
    if (s == "xd_sicc") return Ablation::xd_sicc;
    if (s == "xd_tc") return Ablation::xd_tc;
    if (s == "tc_only") return Ablation::tc_only;
    throw std::invalid_argument("unknown ablation '" + s + "' (expected full|xd_sicc|xd_tc|tc_only)");
}

inline bool uses_mixup(Ablation a) { return a != Ablation::tc_only; }
inline bool uses_tc(Ablation a) { return a != Ablation::xd_sicc; }
inline bool uses_sicc(Ablation a) { return a == Ablation::full || a == Ablation::xd_sicc; }

// One step's worth of already-augmented network inputs.
template <typename S>
struct StepInputs {
    Tensor<S> originals;          // (B, 1, T); encoded only when SICC is active
    Tensor<S> strong;             // (B, 1, T)
    Tensor<S> weak;               // (B, 1, T)
    std::vector<double> lambdas;  // size B under mixup, empty otherwise
};

// Draw order is fixed: batch indices, then all lambdas, then per-element
// strong augmentations, then per-element weak augmentations. tc_only skips
// the lambda draws entirely.
template <typename S>
StepInputs<S> make_step_inputs(const data::Collection& collection, int batch_size, Ablation ablation,
                               double mixup_alpha, const augment::AugmentConfig& aug_cfg, Rng& rng) {
    const auto batch = data::sample_batch(collection, batch_size, rng);
    const int64_t B = batch_size;
    const int64_t T = collection.target_length;

    std::vector<data::TimeSeries> originals;
    originals.reserve(batch.size());
    for (const auto& item : batch) originals.push_back(*item.series);

    StepInputs<S> out;
    std::vector<data::TimeSeries> base;
    if (uses_mixup(ablation)) {
        std::vector<double> lambdas;
        lambdas.reserve(batch.size());
        for (int i = 0; i < batch_size; ++i) lambdas.push_back(mixup::sample_lambda(mixup_alpha, rng));
        auto mixed = mixup::xd_mixup_batch(originals, std::move(lambdas));
        out.lambdas = mixed.lambdas;
        base = std::move(mixed.mixed);
    } else {
        base = originals;
    }

    std::vector<data::TimeSeries> strong, weak;
    strong.reserve(base.size());
    weak.reserve(base.size());
    for (const auto& s : base) strong.push_back(augment::strong_augment(s, aug_cfg, rng));
    for (const auto& s : base) weak.push_back(augment::weak_augment(s, aug_cfg, rng));

    auto fill = [&](const std::vector<data::TimeSeries>& src) {
        Tensor<S> t({B, 1, T});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t l = 0; l < T; ++l)
                t.at(b, 0, l) = S(src[static_cast<size_t>(b)].values[static_cast<size_t>(l)]);
        return t;
    };
    out.originals = fill(originals);
    out.strong = fill(strong);
    out.weak = fill(weak);
    return out;
}

template <typename S>
struct StepGraph {
    typename Graph<S>::NodeRef total = nullptr;
    typename Graph<S>::NodeRef tc = nullptr;    // null when ablated away
    typename Graph<S>::NodeRef sicc = nullptr;  // null when ablated away
};

// Full forward pass of one pretraining step. Batch-norm statistics are taken
// per forward call, in the fixed order originals / strong / weak; the same
// order applies to the projector.
template <typename S>
StepGraph<S> build_pretrain_graph(Graph<S>& g, model::XitModel<S>& m, model::ParamBinding<S>& p,
                                  const StepInputs<S>& in, Ablation ablation, double beta, double tau,
                                  const model::ForwardMode& mode) {
    const int64_t B = in.strong.dim(0);
    const int64_t K = m.config().encoder.output_positions();
    StepGraph<S> out;

    typename Graph<S>::NodeRef k_left = nullptr, k_right = nullptr;
    if (uses_sicc(ablation)) {
        if (static_cast<int64_t>(in.lambdas.size()) != B)
            throw std::invalid_argument("pretrain step: SICC needs one lambda per element");
        auto z_orig = m.encode(g, p, g.leaf(in.originals), mode);
        auto c_orig = m.summarize(g, p, g.time_tokens(z_orig, K - 1), B, K - 1, mode);
        auto k_orig = m.project(g, p, c_orig, mode);
        k_left = k_orig;
        k_right = g.rotate_rows_up(k_orig);
    }

    auto z_s = m.encode(g, p, g.leaf(in.strong), mode);
    auto c_s = m.summarize(g, p, g.time_tokens(z_s, K - 1), B, K - 1, mode);
    auto z_w = m.encode(g, p, g.leaf(in.weak), mode);
    auto c_w = m.summarize(g, p, g.time_tokens(z_w, K - 1), B, K - 1, mode);

    if (uses_tc(ablation))
        out.tc = losses::tc_loss(g, c_s, c_w, g.last_step(z_s), g.last_step(z_w), m.bilinear_weight(p));
    if (uses_sicc(ablation)) {
        auto k_s = m.project(g, p, c_s, mode);
        auto k_w = m.project(g, p, c_w, mode);
        out.sicc = losses::sicc_loss(g, k_left, k_s, k_w, k_right, in.lambdas, tau);
    }

    if (out.tc && out.sicc)
        out.total = losses::total_loss(g, out.tc, out.sicc, beta);
    else if (out.tc)
        out.total = out.tc;  // a lone loss keeps full weight
    else
        out.total = out.sicc;
    return out;
}

}  // namespace xit::train
