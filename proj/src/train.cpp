#include "xit/train.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "xit/eval.hpp"

namespace xit::train {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- checkpoint io ----

namespace {

constexpr int kFormatVersion = 1;

json encoder_to_json(const model::EncoderConfig& c) {
    return {{"in_length", c.in_length},
            {"channels", c.channels},
            {"kernel_sizes", c.kernel_sizes},
            {"pool_stride", c.pool_stride}};
}

json summarizer_to_json(const model::SummarizerConfig& c) {
    return {{"token_dim", c.token_dim},
            {"heads", c.heads},
            {"layers", c.layers},
            {"ffn_hidden", c.ffn_hidden},
            {"dropout", c.dropout}};
}

model::ModelConfig model_config_from_json(const json& j) {
    model::ModelConfig cfg;
    const auto& e = j.at("encoder");
    cfg.encoder.in_length = e.at("in_length").get<int64_t>();
    const auto ch = e.at("channels").get<std::vector<int64_t>>();
    const auto ks = e.at("kernel_sizes").get<std::vector<int64_t>>();
    if (ch.size() != 3 || ks.size() != 3) throw std::runtime_error("checkpoint: malformed encoder config");
    std::copy(ch.begin(), ch.end(), cfg.encoder.channels.begin());
    std::copy(ks.begin(), ks.end(), cfg.encoder.kernel_sizes.begin());
    cfg.encoder.pool_stride = e.at("pool_stride").get<int64_t>();
    const auto& s = j.at("summarizer");
    cfg.summarizer.token_dim = s.at("token_dim").get<int64_t>();
    cfg.summarizer.heads = s.at("heads").get<int64_t>();
    cfg.summarizer.layers = s.at("layers").get<int64_t>();
    cfg.summarizer.ffn_hidden = s.at("ffn_hidden").get<int64_t>();
    cfg.summarizer.dropout = s.at("dropout").get<double>();
    return cfg;
}

void write_tensor_file(const fs::path& path, const Tensor<float>& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
}

void read_tensor_file(const fs::path& path, const std::string& name, Tensor<float>& t) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("checkpoint: missing tensor file for '" + name + "': " + path.string());
    const auto bytes = static_cast<int64_t>(in.tellg());
    if (bytes != t.size() * static_cast<int64_t>(sizeof(float)))
        throw std::runtime_error("checkpoint: tensor '" + name + "' has " + std::to_string(bytes) +
                                 " bytes, expected " + std::to_string(t.size() * sizeof(float)));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(t.data()), bytes);
    if (!in) throw std::runtime_error("checkpoint: short read on tensor '" + name + "'");
}

}  // namespace

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt) {
    fs::create_directories(dir);
    json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["step"] = ckpt.step;
    manifest["seed"] = ckpt.seed;
    manifest["rng_state"] = ckpt.rng_state;
    manifest["adam_t"] = ckpt.adam_t;
    manifest["model"] = {{"encoder", encoder_to_json(ckpt.model_config.encoder)},
                         {"summarizer", summarizer_to_json(ckpt.model_config.summarizer)}};
    manifest["run_config"] = json::parse(ckpt.run_config_json.empty() ? "{}" : ckpt.run_config_json);

    json tensors = json::array();
    int file_index = 0;
    auto add = [&](const std::string& name, const std::string& kind, const Tensor<float>& t) {
        char file[32];
        std::snprintf(file, sizeof(file), "t%04d.bin", file_index++);
        tensors.push_back({{"name", name}, {"kind", kind}, {"shape", t.shape()}, {"dtype", "f32"}, {"file", file}});
        write_tensor_file(fs::path(dir) / file, t);
    };
    size_t gi = 0;
    for (const auto& e : ckpt.params.entries()) add(e.name, e.trainable ? "param" : "buffer", e.value);
    for (const auto& e : ckpt.params.entries())
        if (e.trainable) {
            add(e.name, "adam_m", ckpt.adam_m.at(gi));
            add(e.name, "adam_v", ckpt.adam_v.at(gi));
            ++gi;
        }
    manifest["tensors"] = tensors;

    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw std::runtime_error("checkpoint: cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& dir) {
    const fs::path manifest_path = fs::path(dir) / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + manifest_path.string());
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("checkpoint: bad manifest: " + std::string(e.what()));
    }
    if (manifest.at("format_version").get<int>() != kFormatVersion)
        throw std::runtime_error("checkpoint: unsupported format version " +
                                 manifest.at("format_version").dump());

    Checkpoint ckpt;
    ckpt.model_config = model_config_from_json(manifest.at("model"));
    ckpt.step = manifest.at("step").get<int64_t>();
    ckpt.seed = manifest.at("seed").get<uint64_t>();
    ckpt.rng_state = manifest.at("rng_state").get<std::string>();
    ckpt.adam_t = manifest.at("adam_t").get<int64_t>();
    ckpt.run_config_json = manifest.at("run_config").dump();

    // canonical store layout comes from the model itself
    model::XitModel<float> proto(ckpt.model_config);
    ckpt.params = proto.params();

    std::map<std::string, Tensor<float>> m_map, v_map;
    for (const auto& t : manifest.at("tensors")) {
        const auto name = t.at("name").get<std::string>();
        const auto kind = t.at("kind").get<std::string>();
        const auto shape = t.at("shape").get<std::vector<int64_t>>();
        if (t.at("dtype").get<std::string>() != "f32")
            throw std::runtime_error("checkpoint: tensor '" + name + "' has unsupported dtype");
        Tensor<float> tensor(shape);
        read_tensor_file(fs::path(dir) / t.at("file").get<std::string>(), name, tensor);
        if (kind == "param" || kind == "buffer") {
            if (!ckpt.params.has(name)) throw std::runtime_error("checkpoint: unknown tensor '" + name + "'");
            auto& entry = ckpt.params.entry(name);
            if (!entry.value.same_shape(tensor))
                throw std::runtime_error("checkpoint: shape mismatch for tensor '" + name + "'");
            entry.value = std::move(tensor);
        } else if (kind == "adam_m") {
            m_map[name] = std::move(tensor);
        } else if (kind == "adam_v") {
            v_map[name] = std::move(tensor);
        } else {
            throw std::runtime_error("checkpoint: unknown tensor kind '" + kind + "'");
        }
    }
    for (const auto& e : ckpt.params.entries())
        if (e.trainable) {
            auto mi = m_map.find(e.name);
            auto vi = v_map.find(e.name);
            if (mi == m_map.end() || vi == v_map.end())
                throw std::runtime_error("checkpoint: missing optimizer state for '" + e.name + "'");
            ckpt.adam_m.push_back(std::move(mi->second));
            ckpt.adam_v.push_back(std::move(vi->second));
        }
    return ckpt;
}

// ---- telemetry ----

namespace {

void write_telemetry_row(std::ostream& out, const TelemetryRow& r) {
    out << r.step << ",";
    if (r.has_tc) out << r.l_tc;
    out << ",";
    if (r.has_sicc) out << r.l_sicc;
    out << "," << r.l_total << "\n";
}

}  // namespace

void write_telemetry_csv(const std::string& path, const std::vector<TelemetryRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write telemetry csv: " + path);
    out << "step,l_tc,l_sicc,l_total\n";
    for (const auto& r : rows) write_telemetry_row(out, r);
}

// ---- pretraining ----

PretrainResult pretrain(const data::Collection& collection, model::XitModel<float>& m,
                        const PretrainOptions& opts, const Checkpoint* resume) {
    opts.train.validate();
    opts.augment.validate();
    if (opts.loss_beta < 0 || opts.loss_beta > 1) throw std::invalid_argument("pretrain: beta must be in [0,1]");
    if (opts.loss_tau <= 0) throw std::invalid_argument("pretrain: tau must be > 0");
    if (collection.datasets.empty()) throw std::invalid_argument("pretrain: empty collection");
    if (collection.target_length != m.config().encoder.in_length)
        throw std::invalid_argument("pretrain: encoder expects length " +
                                    std::to_string(m.config().encoder.in_length) + " but collection pads to " +
                                    std::to_string(collection.target_length));

    Rng rng(opts.train.seed);
    AdamState<float> adam(m.params());
    int64_t start_step = 0;
    if (resume) {
        m.params() = resume->params;
        adam.m = resume->adam_m;
        adam.v = resume->adam_v;
        adam.t = resume->adam_t;
        start_step = resume->step;
        rng.load_state(resume->rng_state);
    } else {
        m.init(rng);
    }

    PretrainResult result;
    std::ofstream telemetry;
    if (!opts.telemetry_path.empty()) {
        const bool fresh = !fs::exists(opts.telemetry_path) || fs::file_size(opts.telemetry_path) == 0;
        telemetry.open(opts.telemetry_path, std::ios::app);
        if (!telemetry) throw std::runtime_error("cannot open telemetry csv: " + opts.telemetry_path);
        if (fresh) telemetry << "step,l_tc,l_sicc,l_total\n";
    }
    for (int64_t step = start_step + 1; step <= opts.train.steps; ++step) {
        try {
            auto inputs = make_step_inputs<float>(collection, opts.train.batch_size, opts.train.ablation,
                                                  opts.mixup_alpha, opts.augment, rng);
            Graph<float> g;
            model::ParamBinding<float> bind(g, m.params());
            model::ForwardMode mode;
            mode.train = true;
            mode.update_running_stats = true;
            mode.dropout_rng = &rng;
            auto sg = build_pretrain_graph(g, m, bind, inputs, opts.train.ablation, opts.loss_beta,
                                           opts.loss_tau, mode);
            g.backward(sg.total);
            auto grads = collect_gradients(m.params(), bind);
            clip_gradients(grads, opts.train.grad_clip_norm);
            adam_step(m.params(), grads, adam, opts.train.learning_rate, opts.train.weight_decay,
                      opts.train.adam_beta1, opts.train.adam_beta2);

            TelemetryRow row;
            row.step = step;
            row.l_total = sg.total->value[0];
            if (sg.tc) {
                row.has_tc = true;
                row.l_tc = sg.tc->value[0];
            }
            if (sg.sicc) {
                row.has_sicc = true;
                row.l_sicc = sg.sicc->value[0];
            }
            if (telemetry.is_open()) {
                write_telemetry_row(telemetry, row);
                telemetry.flush();
            }
            result.telemetry.push_back(row);
        } catch (const std::runtime_error& e) {
            throw std::runtime_error("pretraining failed at step " + std::to_string(step) + ": " + e.what());
        }
    }

    result.checkpoint.model_config = m.config();
    result.checkpoint.params = m.params();
    result.checkpoint.adam_m = adam.m;
    result.checkpoint.adam_v = adam.v;
    result.checkpoint.adam_t = adam.t;
    result.checkpoint.step = opts.train.steps;
    result.checkpoint.seed = opts.train.seed;
    result.checkpoint.rng_state = rng.save_state();
    return result;
}

// ---- finetuning ----

Tensor<float> featurize(model::XitModel<float>& m, const std::vector<data::TimeSeries>& series) {
    const int64_t T = m.config().encoder.in_length;
    const int64_t K = m.config().encoder.output_positions();
    const int64_t Z = m.config().encoder.embedding_dim();
    const int64_t N = static_cast<int64_t>(series.size());
    if (N == 0) throw std::invalid_argument("featurize: empty input");
    for (const auto& s : series)
        if (s.length() > T)
            throw std::invalid_argument("featurize: encoder expects length " + std::to_string(T) +
                                        ", found series of length " + std::to_string(s.length()));

    Tensor<float> features({N, K * Z});
    const int64_t chunk = 256;
    for (int64_t begin = 0; begin < N; begin += chunk) {
        const int64_t count = std::min(chunk, N - begin);
        Tensor<float> x({count, 1, T});
        for (int64_t i = 0; i < count; ++i) {
            const auto padded = data::prepad(series[static_cast<size_t>(begin + i)], T);
            for (int64_t l = 0; l < T; ++l) x.at(i, 0, l) = padded.values[static_cast<size_t>(l)];
        }
        Graph<float> g;
        model::ParamBinding<float> bind(g, m.params());
        model::ForwardMode mode;  // eval: running statistics, no dropout
        auto z = m.encode(g, bind, g.leaf(x), mode);
        auto flat = g.flatten_time_major(z);
        for (int64_t i = 0; i < count; ++i)
            for (int64_t j = 0; j < K * Z; ++j) features.at(begin + i, j) = flat->value.at(i, j);
    }
    return features;
}

namespace {

eval::PredictionSet predict(const model::Classifier<float>& cls, const Tensor<float>& features,
                            const std::vector<int>& labels) {
    eval::PredictionSet out;
    out.scores = model::classify_probs(cls.params().get("classifier.weight"),
                                       cls.params().get("classifier.bias"), features);
    out.labels = labels;
    return out;
}

Tensor<float> take_rows(const Tensor<float>& src, const std::vector<int64_t>& rows) {
    Tensor<float> out({static_cast<int64_t>(rows.size()), src.dim(1)});
    for (size_t i = 0; i < rows.size(); ++i)
        for (int64_t j = 0; j < src.dim(1); ++j) out.at(static_cast<int64_t>(i), j) = src.at(rows[i], j);
    return out;
}

}  // namespace

FinetuneResult finetune(model::XitModel<float>& encoder, const data::Dataset& train_data,
                        const FinetuneConfig& cfg) {
    cfg.validate();
    if (train_data.series.empty()) throw std::invalid_argument("finetune: empty dataset");
    if (train_data.num_classes < 2) throw std::invalid_argument("finetune: needs at least two classes");
    const int64_t T = encoder.config().encoder.in_length;
    if (train_data.max_length() > T)
        throw std::invalid_argument("finetune: encoder expects length " + std::to_string(T) +
                                    " but dataset '" + train_data.name + "' has series of length " +
                                    std::to_string(train_data.max_length()));

    Rng rng(cfg.seed);

    // Frozen encoder: featurize once, in eval mode.
    const Tensor<float> features = featurize(encoder, train_data.series);
    std::vector<int> labels(train_data.series.size());
    for (size_t i = 0; i < labels.size(); ++i) labels[i] = train_data.series[i].label;

    // Stratified validation split.
    std::vector<std::vector<int64_t>> by_class(static_cast<size_t>(train_data.num_classes));
    for (int64_t i = 0; i < static_cast<int64_t>(labels.size()); ++i)
        by_class[static_cast<size_t>(labels[static_cast<size_t>(i)])].push_back(i);
    std::vector<int64_t> train_idx, val_idx;
    for (auto& idx : by_class) {
        rng.shuffle(idx);
        const int64_t n = static_cast<int64_t>(idx.size());
        const int64_t n_val = n >= 2 ? std::max<int64_t>(1, std::llround(cfg.validation_fraction * double(n))) : 0;
        for (int64_t i = 0; i < n; ++i) (i < n_val ? val_idx : train_idx).push_back(idx[static_cast<size_t>(i)]);
    }
    if (train_idx.empty()) throw std::invalid_argument("finetune: no training samples left after the split");
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    {
        std::set<int> val_classes;
        for (int64_t i : val_idx) val_classes.insert(labels[static_cast<size_t>(i)]);
        if (val_classes.size() < 2)
            throw std::invalid_argument("finetune: validation split has fewer than two classes");
    }

    const Tensor<float> val_features = take_rows(features, val_idx);
    std::vector<int> val_labels;
    for (int64_t i : val_idx) val_labels.push_back(labels[static_cast<size_t>(i)]);

    model::Classifier<float> cls(features.dim(1), train_data.num_classes);
    cls.init(rng);
    AdamState<float> adam(cls.params());
    EarlyStopper stopper(cfg.patience_epochs, cfg.min_steps, cfg.max_steps);

    FinetuneResult result{model::Classifier<float>(features.dim(1), train_data.num_classes), {}, 0, 0, 0};
    result.classifier.params() = cls.params();

    int64_t steps = 0;
    bool done = false;
    while (!done) {
        rng.shuffle(train_idx);
        for (size_t begin = 0; begin < train_idx.size(); begin += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(train_idx.size(), begin + static_cast<size_t>(cfg.batch_size));
            std::vector<int64_t> batch(train_idx.begin() + static_cast<std::ptrdiff_t>(begin),
                                       train_idx.begin() + static_cast<std::ptrdiff_t>(end));
            Tensor<float> bx = take_rows(features, batch);
            std::vector<int> by;
            for (int64_t i : batch) by.push_back(labels[static_cast<size_t>(i)]);

            Graph<float> g;
            model::ParamBinding<float> bind(g, cls.params());
            auto logits = cls.logits(g, bind, g.leaf(bx));
            auto loss = g.softmax_xent_mean(logits, by);
            g.backward(loss);
            auto grads = collect_gradients(cls.params(), bind);
            clip_gradients(grads, cfg.grad_clip_norm);
            adam_step(cls.params(), grads, adam, cfg.learning_rate, cfg.weight_decay, cfg.adam_beta1,
                      cfg.adam_beta2);
            ++steps;
            if (stopper.hit_step_cap(steps)) break;
        }

        const double val_auroc = eval::auroc(predict(cls, val_features, val_labels));
        result.val_auroc_history.push_back(val_auroc);
        const bool stop_patience = stopper.record_epoch(val_auroc, steps);
        // ties refresh the snapshot: among equally good epochs keep the most trained one
        if (val_auroc >= result.best_val_auroc || result.best_epoch == 0) {
            result.classifier.params() = cls.params();
            result.best_epoch = static_cast<int>(result.val_auroc_history.size());
            result.best_val_auroc = val_auroc;
        }
        done = stop_patience || stopper.hit_step_cap(steps);
    }
    result.steps_taken = steps;
    return result;
}

}  // namespace xit::train
