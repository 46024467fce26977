#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "xit/augment.hpp"
#include "xit/data.hpp"
#include "xit/model.hpp"
#include "xit/train_step.hpp"

namespace xit::train {

// ---- optimization primitives ----

template <typename S>
struct AdamState {
    std::vector<Tensor<S>> m, v;  // aligned with the trainable entries, store order
    int64_t t = 0;

    AdamState() = default;
    explicit AdamState(const model::ParamStore<S>& store) {
        for (const auto& e : store.entries())
            if (e.trainable) {
                m.push_back(Tensor<S>::zeros_like(e.value));
                v.push_back(Tensor<S>::zeros_like(e.value));
            }
    }
};

// Gradients for every trainable entry, in store order; zeros for parameters
// that never joined the tape.
template <typename S>
std::vector<Tensor<S>> collect_gradients(const model::ParamStore<S>& store, model::ParamBinding<S>& bind) {
    std::vector<Tensor<S>> grads;
    for (const auto& e : store.entries())
        if (e.trainable) grads.push_back(bind.gradient(e.name));
    return grads;
}

template <typename S>
double global_grad_norm(const std::vector<Tensor<S>>& grads) {
    double sq = 0;
    for (const auto& g : grads)
        for (int64_t i = 0; i < g.size(); ++i) sq += double(g[i]) * double(g[i]);
    return std::sqrt(sq);
}

// Scale all gradients so the global L2 norm is at most max_norm. Returns the
// pre-clip norm.
template <typename S>
double clip_gradients(std::vector<Tensor<S>>& grads, double max_norm) {
    const double norm = global_grad_norm(grads);
    if (!std::isfinite(norm)) throw std::runtime_error("clip_gradients: non-finite gradient norm");
    if (norm > max_norm && norm > 0) {
        const S scale = S(max_norm / norm);
        for (auto& g : grads)
            for (int64_t i = 0; i < g.size(); ++i) g[i] *= scale;
    }
    return norm;
}

// Adam with classic L2 weight decay folded into the gradient and
// bias-corrected moments. The update itself runs in double.
template <typename S>
void adam_step(model::ParamStore<S>& store, const std::vector<Tensor<S>>& grads, AdamState<S>& state,
               double lr, double weight_decay, double beta1, double beta2, double eps = 1e-8) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(beta2, double(state.t));
    size_t gi = 0;
    for (auto& e : store.entries()) {
        if (!e.trainable) continue;
        const Tensor<S>& grad = grads.at(gi);
        Tensor<S>& m = state.m.at(gi);
        Tensor<S>& v = state.v.at(gi);
        if (!grad.same_shape(e.value)) throw std::invalid_argument("adam_step: gradient shape mismatch for " + e.name);
        for (int64_t i = 0; i < grad.size(); ++i) {
            const double g0 = double(grad[i]);
            if (!std::isfinite(g0)) throw std::runtime_error("adam_step: non-finite gradient in " + e.name);
            const double g = g0 + weight_decay * double(e.value[i]);
            const double mi = beta1 * double(m[i]) + (1.0 - beta1) * g;
            const double vi = beta2 * double(v[i]) + (1.0 - beta2) * g * g;
            m[i] = S(mi);
            v[i] = S(vi);
            e.value[i] = S(double(e.value[i]) - lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
        }
        ++gi;
    }
}

// Patience counted in epochs over a maximized metric; stopping is blocked
// below min_steps and forced at max_steps.
class EarlyStopper {
public:
    EarlyStopper(int patience_epochs, int64_t min_steps, int64_t max_steps)
        : patience_(patience_epochs), min_steps_(min_steps), max_steps_(max_steps) {
        if (min_steps > max_steps) throw std::invalid_argument("early stopping: min_steps > max_steps");
        if (patience_epochs < 1) throw std::invalid_argument("early stopping: patience must be >= 1");
    }

    // Returns true when training should stop after this epoch.
    bool record_epoch(double metric, int64_t steps_taken) {
        ++epoch_;
        if (metric > best_) {
            best_ = metric;
            best_epoch_ = epoch_;
            stale_ = 0;
            improved_ = true;
        } else {
            ++stale_;
            improved_ = false;
        }
        return stale_ >= patience_ && steps_taken >= min_steps_;
    }

    bool hit_step_cap(int64_t steps_taken) const { return steps_taken >= max_steps_; }
    bool last_improved() const { return improved_; }
    double best_metric() const { return best_; }
    int best_epoch() const { return best_epoch_; }

private:
    int patience_;
    int64_t min_steps_, max_steps_;
    int epoch_ = 0, best_epoch_ = 0, stale_ = 0;
    double best_ = -std::numeric_limits<double>::infinity();
    bool improved_ = false;
};

// ---- run configuration ----

struct PretrainConfig {
    int batch_size = 64;
    double learning_rate = 1e-4;
    double weight_decay = 3e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double grad_clip_norm = 1.0;
    int64_t steps = 1000;
    uint64_t seed = 42;
    Ablation ablation = Ablation::full;

    void validate() const {
        if (batch_size < 2) throw std::invalid_argument("pretrain: batch_size must be >= 2");
        if (learning_rate <= 0) throw std::invalid_argument("pretrain: learning_rate must be > 0");
        if (weight_decay < 0) throw std::invalid_argument("pretrain: weight_decay must be >= 0");
        if (grad_clip_norm <= 0) throw std::invalid_argument("pretrain: grad_clip_norm must be > 0");
        if (steps < 1) throw std::invalid_argument("pretrain: steps must be >= 1");
    }
};

struct PretrainOptions {
    PretrainConfig train;
    augment::AugmentConfig augment;
    double mixup_alpha = 0.2;
    double loss_beta = 0.25;
    double loss_tau = 0.2;
    std::string telemetry_path;  // when set, rows are appended there as steps finish
};

struct FinetuneConfig {
    int batch_size = 64;
    double learning_rate = 1.4e-4;
    double weight_decay = 1.6e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double grad_clip_norm = 1.0;
    int patience_epochs = 4;
    int64_t min_steps = 40;
    int64_t max_steps = 2000;
    double validation_fraction = 0.2;
    uint64_t seed = 42;

    void validate() const {
        if (batch_size < 1) throw std::invalid_argument("finetune: batch_size must be >= 1");
        if (learning_rate <= 0) throw std::invalid_argument("finetune: learning_rate must be > 0");
        if (min_steps > max_steps) throw std::invalid_argument("finetune: min_steps > max_steps");
        if (validation_fraction <= 0 || validation_fraction >= 1)
            throw std::invalid_argument("finetune: validation_fraction must be in (0,1)");
    }
};

// ---- checkpointing ----

struct Checkpoint {
    model::ModelConfig model_config;
    model::ParamStore<float> params;  // weights and batch-norm buffers
    std::vector<Tensor<float>> adam_m, adam_v;
    int64_t adam_t = 0;
    int64_t step = 0;
    uint64_t seed = 0;
    std::string rng_state;
    std::string run_config_json = "{}";
};

// Directory layout: manifest.json plus one raw little-endian float32 blob per
// tensor. Round-trips byte-exactly.
void save_checkpoint(const std::string& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& dir);

// ---- training loops ----

struct TelemetryRow {
    int64_t step = 0;
    double l_tc = 0, l_sicc = 0, l_total = 0;
    bool has_tc = false, has_sicc = false;
};

void write_telemetry_csv(const std::string& path, const std::vector<TelemetryRow>& rows);

struct PretrainResult {
    std::vector<TelemetryRow> telemetry;
    Checkpoint checkpoint;
};

// Runs the self-supervised phase. With resume set, picks up parameters,
// optimizer moments and the RNG stream where the earlier run stopped;
// otherwise initializes the model from the seed.
PretrainResult pretrain(const data::Collection& collection, model::XitModel<float>& m,
                        const PretrainOptions& opts, const Checkpoint* resume = nullptr);

// Frozen-encoder features: prepad to the encoder length, run in eval mode,
// flatten to (N, K*Z).
Tensor<float> featurize(model::XitModel<float>& m, const std::vector<data::TimeSeries>& series);

struct FinetuneResult {
    model::Classifier<float> classifier;  // best validation-AUROC snapshot
    std::vector<double> val_auroc_history;
    int64_t steps_taken = 0;
    int best_epoch = 0;
    double best_val_auroc = 0;
};

// Linear probing: the encoder stays untouched, only the classifier head
// trains, with early stopping on validation AUROC.
FinetuneResult finetune(model::XitModel<float>& encoder, const data::Dataset& train_data,
                        const FinetuneConfig& cfg);

}  // namespace xit::train
