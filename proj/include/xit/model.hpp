#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "xit/graph.hpp"
#include "xit/rng.hpp"
#include "xit/tensor.hpp"

namespace xit::model {

// Three conv blocks, each one halving the time axis through the max pool:
//   block: conv(k, length-preserving) -> batch norm -> (+ shortcut) -> relu -> maxpool(stride)
// so the embedding count is K = floor(floor(floor(T/s)/s)/s) with s = pool_stride.
// T = 600 with the defaults gives K = 75.
struct EncoderConfig {
    int64_t in_length = 600;
    std::array<int64_t, 3> channels = {32, 64, 64};  // last entry is the embedding width Z
    std::array<int64_t, 3> kernel_sizes = {8, 5, 3};
    int64_t pool_stride = 2;

    int64_t embedding_dim() const { return channels[2]; }

    int64_t output_positions() const {
        int64_t k = in_length;
        for (int i = 0; i < 3; ++i) k /= pool_stride;
        return k;
    }

    void validate() const {
        if (in_length < 1) throw std::invalid_argument("encoder: in_length must be >= 1");
        if (pool_stride < 1) throw std::invalid_argument("encoder: pool_stride must be >= 1");
        for (int64_t c : channels)
            if (c < 1) throw std::invalid_argument("encoder: channels must be >= 1");
        for (int64_t k : kernel_sizes)
            if (k < 1) throw std::invalid_argument("encoder: kernel sizes must be >= 1");
        if (output_positions() < 2)
            throw std::invalid_argument("encoder: input length " + std::to_string(in_length) +
                                        " yields fewer than 2 output positions");
    }
};

struct SummarizerConfig {
    int64_t token_dim = 64;  // C; the projector halves it twice
    int64_t heads = 4;
    int64_t layers = 4;
    int64_t ffn_hidden = 64;
    double dropout = 0.10;
    // no positional encoding: the summarizer treats its tokens as a set

    void validate() const {
        if (token_dim < 4 || token_dim % 4 != 0)
            throw std::invalid_argument("summarizer: token_dim must be a positive multiple of 4");
        if (heads < 1 || token_dim % heads != 0)
            throw std::invalid_argument("summarizer: heads must divide token_dim");
        if (layers < 1) throw std::invalid_argument("summarizer: layers must be >= 1");
        if (ffn_hidden < 1) throw std::invalid_argument("summarizer: ffn_hidden must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("summarizer: dropout must be in [0,1)");
    }
};

struct ModelConfig {
    EncoderConfig encoder;
    SummarizerConfig summarizer;

    void validate() const {
        encoder.validate();
        summarizer.validate();
    }
};

// Named tensor registry. Registration order is the initialization and
// checkpoint order, which keeps runs reproducible.
template <typename S>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<S> value;
        bool trainable = true;
    };

    Tensor<S>& add(const std::string& name, std::vector<int64_t> shape, bool trainable) {
        if (index_.count(name)) throw std::invalid_argument("param store: duplicate name " + name);
        index_[name] = entries_.size();
        entries_.push_back({name, Tensor<S>(std::move(shape)), trainable});
        return entries_.back().value;
    }

    Tensor<S>& get(const std::string& name) { return entry(name).value; }

    Entry& entry(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("param store: unknown name " + name);
        return entries_[it->second];
    }
    const Entry& entry(const std::string& name) const {
        return const_cast<ParamStore*>(this)->entry(name);
    }
    const Tensor<S>& get(const std::string& name) const {
        return const_cast<ParamStore*>(this)->get(name);
    }
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    bool all_finite() const {
        for (const auto& e : entries_)
            if (!e.value.all_finite()) return false;
        return true;
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename S>
void init_uniform(Tensor<S>& t, int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = S((2.0 * rng.uniform() - 1.0) * bound);
}

// Per-graph leaf nodes for store entries, created on demand so off-path
// parameters never enter the tape.
template <typename S>
class ParamBinding {
public:
    using NodeRef = typename Graph<S>::NodeRef;

    ParamBinding(Graph<S>& g, ParamStore<S>& store) : g_(g), store_(store) {}

    NodeRef operator()(const std::string& name) {
        auto it = nodes_.find(name);
        if (it != nodes_.end()) return it->second;
        const auto& entry = store_.entry(name);
        NodeRef n = g_.leaf(entry.value, entry.trainable, "param");
        nodes_[name] = n;
        return n;
    }

    // Gradient of an entry after backward; zeros when the entry never joined
    // the graph or was untouched.
    Tensor<S> gradient(const std::string& name) const {
        auto it = nodes_.find(name);
        if (it == nodes_.end() || it->second->grad.empty())
            return Tensor<S>::zeros_like(store_.get(name));
        return it->second->grad;
    }

    ParamStore<S>& store() { return store_; }

private:
    Graph<S>& g_;
    ParamStore<S>& store_;
    std::unordered_map<std::string, NodeRef> nodes_;
};

// Forward-pass mode switches shared by all builders.
struct ForwardMode {
    bool train = false;
    bool update_running_stats = false;  // only meaningful when train
    Rng* dropout_rng = nullptr;         // required when train and dropout > 0
};

// The learnable stack: residual conv encoder, transformer summarizer with a
// learned summary token, two-layer projector, and the bilinear pair scorer.
template <typename S>
class XitModel {
public:
    using NodeRef = typename Graph<S>::NodeRef;

    explicit XitModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        register_params();
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<S>& params() { return params_; }
    const ParamStore<S>& params() const { return params_; }

    void init(Rng& rng) {
        for (auto& e : params_.entries()) {
            if (e.name.find(".bn.") != std::string::npos || e.name.find(".ln") != std::string::npos) {
                const bool is_scale = e.name.ends_with("gamma") || e.name.ends_with("running_var");
                e.value.fill(is_scale ? S(1) : S(0));
            } else {
                init_uniform(e.value, fan_in_.at(e.name), rng);
            }
        }
    }

    // (B, 1, T) -> (B, Z, K)
    NodeRef encode(Graph<S>& g, ParamBinding<S>& p, NodeRef x, const ForwardMode& mode) {
        const auto& ec = cfg_.encoder;
        if (x->value.rank() != 3 || x->value.dim(1) != 1 || x->value.dim(2) != ec.in_length)
            throw std::invalid_argument("encode: expected (B,1," + std::to_string(ec.in_length) + "), got " +
                                        Tensor<S>::shape_str(x->value.shape()));
        NodeRef h = x;
        int64_t cin = 1;
        for (int i = 0; i < 3; ++i) {
            const std::string base = "encoder.block" + std::to_string(i + 1);
            NodeRef conv = g.conv1d(h, p(base + ".conv.weight"), p(base + ".conv.bias"));
            typename Graph<S>::BatchNormState st;
            st.running_mean = &params_.get(base + ".bn.running_mean");
            st.running_var = &params_.get(base + ".bn.running_var");
            st.train = mode.train;
            st.update_running = mode.train && mode.update_running_stats;
            NodeRef bn = g.batchnorm_channels(conv, p(base + ".bn.gamma"), p(base + ".bn.beta"), st);
            NodeRef shortcut = cin == cfg_.encoder.channels[static_cast<size_t>(i)]
                                   ? h
                                   : g.conv1d(h, p(base + ".shortcut.weight"), nullptr);
            h = g.maxpool1d(g.relu(g.add(bn, shortcut)), ec.pool_stride);
            cin = ec.channels[static_cast<size_t>(i)];
        }
        return h;
    }

    // Token rows (B*n_tokens, Z) -> contexts (B, C). A learned summary token is
    // prepended to every block and read out after the transformer stack.
    NodeRef summarize(Graph<S>& g, ParamBinding<S>& p, NodeRef tokens, int64_t B, int64_t n_tokens,
                      const ForwardMode& mode) {
        if (n_tokens < 1) throw std::invalid_argument("summarize: needs at least one token");
        const auto& sc = cfg_.summarizer;
        if (mode.train && sc.dropout > 0 && !mode.dropout_rng)
            throw std::invalid_argument("summarize: train mode with dropout needs an rng");
        NodeRef x = g.linear(tokens, p("summarizer.token_proj.weight"), p("summarizer.token_proj.bias"));
        x = g.prepend_token_per_block(x, p("summarizer.summary_token"), B, n_tokens);
        const int64_t N = n_tokens + 1;
        for (int64_t l = 0; l < sc.layers; ++l) {
            const std::string base = "summarizer.layer" + std::to_string(l + 1);
            NodeRef a = g.layernorm_rows(x, p(base + ".ln1.gamma"), p(base + ".ln1.beta"));
            NodeRef q = g.linear_nobias(a, p(base + ".attn.wq"));
            NodeRef k = g.linear_nobias(a, p(base + ".attn.wk"));
            NodeRef v = g.linear_nobias(a, p(base + ".attn.wv"));
            NodeRef att = g.attention(q, k, v, B, N, sc.heads);
            att = g.linear(att, p(base + ".attn.wo.weight"), p(base + ".attn.wo.bias"));
            x = g.add(x, att);
            NodeRef f = g.layernorm_rows(x, p(base + ".ln2.gamma"), p(base + ".ln2.beta"));
            f = g.relu(g.linear(f, p(base + ".ffn.w1.weight"), p(base + ".ffn.w1.bias")));
            if (mode.train && sc.dropout > 0) f = g.dropout(f, sc.dropout, *mode.dropout_rng);
            f = g.linear(f, p(base + ".ffn.w2.weight"), p(base + ".ffn.w2.bias"));
            if (mode.train && sc.dropout > 0) f = g.dropout(f, sc.dropout, *mode.dropout_rng);
            x = g.add(x, f);
        }
        return g.first_row_per_block(x, B, N);
    }

    // Contexts (B, C) -> projections (B, C/4): linear to C/2, batch norm, relu,
    // linear to C/4.
    NodeRef project(Graph<S>& g, ParamBinding<S>& p, NodeRef c, const ForwardMode& mode) {
        NodeRef h = g.linear(c, p("projector.fc1.weight"), p("projector.fc1.bias"));
        typename Graph<S>::BatchNormState st;
        st.running_mean = &params_.get("projector.bn.running_mean");
        st.running_var = &params_.get("projector.bn.running_var");
        st.train = mode.train;
        st.update_running = mode.train && mode.update_running_stats;
        h = g.relu(g.batchnorm_features(h, p("projector.bn.gamma"), p("projector.bn.beta"), st));
        return g.linear(h, p("projector.fc2.weight"), p("projector.fc2.bias"));
    }

    NodeRef bilinear_weight(ParamBinding<S>& p) { return p("tc.bilinear_w"); }

private:
    void register_params() {
        const auto& ec = cfg_.encoder;
        const auto& sc = cfg_.summarizer;
        int64_t cin = 1;
        for (int i = 0; i < 3; ++i) {
            const int64_t cout = ec.channels[static_cast<size_t>(i)];
            const int64_t k = ec.kernel_sizes[static_cast<size_t>(i)];
            const std::string base = "encoder.block" + std::to_string(i + 1);
            add_param(base + ".conv.weight", {cout, cin, k}, cin * k);
            add_param(base + ".conv.bias", {cout}, cin * k);
            add_param(base + ".bn.gamma", {cout}, 1);
            add_param(base + ".bn.beta", {cout}, 1);
            params_.add(base + ".bn.running_mean", {cout}, false);
            params_.add(base + ".bn.running_var", {cout}, false);
            if (cin != cout) add_param(base + ".shortcut.weight", {cout, cin, 1}, cin);
            cin = cout;
        }
        const int64_t Z = ec.embedding_dim();
        const int64_t C = sc.token_dim;
        add_param("summarizer.token_proj.weight", {C, Z}, Z);
        add_param("summarizer.token_proj.bias", {C}, Z);
        add_param("summarizer.summary_token", {1, C}, C);
        for (int64_t l = 0; l < sc.layers; ++l) {
            const std::string base = "summarizer.layer" + std::to_string(l + 1);
            add_param(base + ".ln1.gamma", {C}, 1);
            add_param(base + ".ln1.beta", {C}, 1);
            add_param(base + ".attn.wq", {C, C}, C);
            add_param(base + ".attn.wk", {C, C}, C);
            add_param(base + ".attn.wv", {C, C}, C);
            add_param(base + ".attn.wo.weight", {C, C}, C);
            add_param(base + ".attn.wo.bias", {C}, C);
            add_param(base + ".ln2.gamma", {C}, 1);
            add_param(base + ".ln2.beta", {C}, 1);
            add_param(base + ".ffn.w1.weight", {sc.ffn_hidden, C}, C);
            add_param(base + ".ffn.w1.bias", {sc.ffn_hidden}, C);
            add_param(base + ".ffn.w2.weight", {C, sc.ffn_hidden}, sc.ffn_hidden);
            add_param(base + ".ffn.w2.bias", {C}, sc.ffn_hidden);
        }
        add_param("projector.fc1.weight", {C / 2, C}, C);
        add_param("projector.fc1.bias", {C / 2}, C);
        add_param("projector.bn.gamma", {C / 2}, 1);
        add_param("projector.bn.beta", {C / 2}, 1);
        params_.add("projector.bn.running_mean", {C / 2}, false);
        params_.add("projector.bn.running_var", {C / 2}, false);
        add_param("projector.fc2.weight", {C / 4, C / 2}, C / 2);
        add_param("projector.fc2.bias", {C / 4}, C / 2);
        add_param("tc.bilinear_w", {C, Z}, Z);
    }

    void add_param(const std::string& name, std::vector<int64_t> shape, int64_t fan_in) {
        params_.add(name, std::move(shape), true);
        fan_in_[name] = fan_in;
    }

    ModelConfig cfg_;
    ParamStore<S> params_;
    std::unordered_map<std::string, int64_t> fan_in_;
};

// Linear probe head trained during finetuning; the encoder never changes.
template <typename S>
class Classifier {
public:
    Classifier(int64_t input_dim, int64_t num_classes) : input_dim_(input_dim), num_classes_(num_classes) {
        if (input_dim < 1 || num_classes < 2) throw std::invalid_argument("classifier: bad dimensions");
        params_.add("classifier.weight", {num_classes, input_dim}, true);
        params_.add("classifier.bias", {num_classes}, true);
    }

    void init(Rng& rng) {
        init_uniform(params_.get("classifier.weight"), input_dim_, rng);
        init_uniform(params_.get("classifier.bias"), input_dim_, rng);
    }

    ParamStore<S>& params() { return params_; }
    const ParamStore<S>& params() const { return params_; }
    int64_t input_dim() const { return input_dim_; }
    int64_t num_classes() const { return num_classes_; }

    typename Graph<S>::NodeRef logits(Graph<S>& g, ParamBinding<S>& p, typename Graph<S>::NodeRef flat) {
        return g.linear(flat, p("classifier.weight"), p("classifier.bias"));
    }

private:
    int64_t input_dim_;
    int64_t num_classes_;
    ParamStore<S> params_;
};

// ---- value-level helpers (no tape kept) ----

// exp(c^T W z); TC itself works on the log scale, this is the raw pair score.
template <typename S>
double bilinear_score(const Tensor<S>& w, const Tensor<S>& c, const Tensor<S>& z) {
    if (w.rank() != 2 || w.dim(0) != c.size() || w.dim(1) != z.size())
        throw std::invalid_argument("bilinear_score: shape mismatch");
    double acc = 0;
    for (int64_t i = 0; i < c.size(); ++i) {
        double row = 0;
        for (int64_t j = 0; j < z.size(); ++j) row += double(w.at(i, j)) * double(z[j]);
        acc += double(c[i]) * row;
    }
    return std::exp(acc);
}

// softmax(W x + b) row-wise for (N, D) inputs.
template <typename S>
Tensor<double> classify_probs(const Tensor<S>& weight, const Tensor<S>& bias, const Tensor<S>& flat) {
    const int64_t N = flat.dim(0), D = flat.dim(1), C = weight.dim(0);
    if (weight.dim(1) != D || bias.size() != C) throw std::invalid_argument("classify: shape mismatch");
    Tensor<double> out({N, C});
    for (int64_t i = 0; i < N; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t c = 0; c < C; ++c) {
            double acc = double(bias[c]);
            for (int64_t d = 0; d < D; ++d) acc += double(weight.at(c, d)) * double(flat.at(i, d));
            out.at(i, c) = acc;
            mx = std::max(mx, acc);
        }
        double z = 0;
        for (int64_t c = 0; c < C; ++c) z += std::exp(out.at(i, c) - mx);
        for (int64_t c = 0; c < C; ++c) out.at(i, c) = std::exp(out.at(i, c) - mx) / z;
    }
    return out;
}

}  // namespace xit::model
