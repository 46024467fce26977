#include "xit/config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace xit::config {

using nlohmann::json;

void RunConfig::validate() const {
    augment.validate();
    if (mixup_alpha <= 0) throw ConfigError("config: mixup.alpha must be > 0");
    if (loss_beta < 0 || loss_beta > 1) throw ConfigError("config: loss.beta must be in [0,1]");
    if (loss_tau <= 0) throw ConfigError("config: loss.tau must be > 0");
    try {
        train.validate();
        finetune.validate();
        // the encoder length is resolved from the data later; check the rest
        for (int64_t c : model.encoder.channels)
            if (c < 1) throw std::invalid_argument("encoder: channels must be >= 1");
        for (int64_t k : model.encoder.kernel_sizes)
            if (k < 1) throw std::invalid_argument("encoder: kernel sizes must be >= 1");
        if (model.encoder.pool_stride < 1) throw std::invalid_argument("encoder: pool_stride must be >= 1");
        model.summarizer.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

RunConfig default_config() { return RunConfig{}; }

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& prefix) {
    for (const auto& [key, _] : j.items())
        if (!known.count(key))
            throw ConfigError("config: unknown key '" + (prefix.empty() ? key : prefix + "." + key) + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config: bad value for key '") + key + "'");
    }
}

RunConfig from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config: root must be a JSON object");
    reject_unknown(doc, {"data", "augment", "mixup", "model", "loss", "train", "finetune", "output_dir", "seed"},
                   "");
    RunConfig cfg;
    read(doc, "seed", cfg.seed);
    cfg.train.seed = cfg.seed;
    cfg.finetune.seed = cfg.seed;
    read(doc, "output_dir", cfg.output_dir);

    if (doc.contains("data")) {
        const auto& d = doc.at("data");
        reject_unknown(d, {"manifest", "max_length"}, "data");
        read(d, "manifest", cfg.manifest_path);
        read(d, "max_length", cfg.max_length);
    }
    if (doc.contains("augment")) {
        const auto& a = doc.at("augment");
        reject_unknown(a, {"weak_scale_sigma", "strong_max_segments", "strong_jitter_sigma"}, "augment");
        read(a, "weak_scale_sigma", cfg.augment.weak_scale_sigma);
        read(a, "strong_max_segments", cfg.augment.strong_max_segments);
        read(a, "strong_jitter_sigma", cfg.augment.strong_jitter_sigma);
    }
    if (doc.contains("mixup")) {
        const auto& m = doc.at("mixup");
        reject_unknown(m, {"alpha"}, "mixup");
        read(m, "alpha", cfg.mixup_alpha);
    }
    if (doc.contains("model")) {
        const auto& m = doc.at("model");
        reject_unknown(m, {"channels", "kernel_sizes", "pool_stride", "token_dim", "heads", "layers",
                           "ffn_hidden", "dropout"},
                       "model");
        if (m.contains("channels")) {
            const auto v = m.at("channels").get<std::vector<int64_t>>();
            if (v.size() != 3) throw ConfigError("config: model.channels must have exactly 3 entries");
            std::copy(v.begin(), v.end(), cfg.model.encoder.channels.begin());
        }
        if (m.contains("kernel_sizes")) {
            const auto v = m.at("kernel_sizes").get<std::vector<int64_t>>();
            if (v.size() != 3) throw ConfigError("config: model.kernel_sizes must have exactly 3 entries");
            std::copy(v.begin(), v.end(), cfg.model.encoder.kernel_sizes.begin());
        }
        read(m, "pool_stride", cfg.model.encoder.pool_stride);
        read(m, "token_dim", cfg.model.summarizer.token_dim);
        read(m, "heads", cfg.model.summarizer.heads);
        read(m, "layers", cfg.model.summarizer.layers);
        read(m, "ffn_hidden", cfg.model.summarizer.ffn_hidden);
        read(m, "dropout", cfg.model.summarizer.dropout);
    }
    if (doc.contains("loss")) {
        const auto& l = doc.at("loss");
        reject_unknown(l, {"beta", "tau"}, "loss");
        read(l, "beta", cfg.loss_beta);
        read(l, "tau", cfg.loss_tau);
    }
    if (doc.contains("train")) {
        const auto& t = doc.at("train");
        reject_unknown(t, {"batch_size", "learning_rate", "weight_decay", "adam_beta1", "adam_beta2",
                           "grad_clip_norm", "steps", "seed", "ablation"},
                       "train");
        read(t, "batch_size", cfg.train.batch_size);
        read(t, "learning_rate", cfg.train.learning_rate);
        read(t, "weight_decay", cfg.train.weight_decay);
        read(t, "adam_beta1", cfg.train.adam_beta1);
        read(t, "adam_beta2", cfg.train.adam_beta2);
        read(t, "grad_clip_norm", cfg.train.grad_clip_norm);
        read(t, "steps", cfg.train.steps);
        read(t, "seed", cfg.train.seed);
        if (t.contains("ablation")) {
            try {
                cfg.train.ablation = train::ablation_from_string(t.at("ablation").get<std::string>());
            } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("config: ") + e.what());
            }
        }
    }
    if (doc.contains("finetune")) {
        const auto& f = doc.at("finetune");
        reject_unknown(f, {"batch_size", "learning_rate", "weight_decay", "patience_epochs", "min_steps",
                           "max_steps", "validation_fraction", "seed"},
                       "finetune");
        read(f, "batch_size", cfg.finetune.batch_size);
        read(f, "learning_rate", cfg.finetune.learning_rate);
        read(f, "weight_decay", cfg.finetune.weight_decay);
        read(f, "patience_epochs", cfg.finetune.patience_epochs);
        read(f, "min_steps", cfg.finetune.min_steps);
        read(f, "max_steps", cfg.finetune.max_steps);
        read(f, "validation_fraction", cfg.finetune.validation_fraction);
        read(f, "seed", cfg.finetune.seed);
    }
    cfg.validate();
    return cfg;
}

}  // namespace

RunConfig parse_config_text(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return from_json(doc);
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_text(text);
}

std::string dump_config(const RunConfig& cfg) {
    json doc;
    doc["seed"] = cfg.seed;
    doc["output_dir"] = cfg.output_dir;
    doc["data"] = {{"manifest", cfg.manifest_path}, {"max_length", cfg.max_length}};
    doc["augment"] = {{"weak_scale_sigma", cfg.augment.weak_scale_sigma},
                      {"strong_max_segments", cfg.augment.strong_max_segments},
                      {"strong_jitter_sigma", cfg.augment.strong_jitter_sigma}};
    doc["mixup"] = {{"alpha", cfg.mixup_alpha}};
    doc["model"] = {{"channels", cfg.model.encoder.channels},
                    {"kernel_sizes", cfg.model.encoder.kernel_sizes},
                    {"pool_stride", cfg.model.encoder.pool_stride},
                    {"token_dim", cfg.model.summarizer.token_dim},
                    {"heads", cfg.model.summarizer.heads},
                    {"layers", cfg.model.summarizer.layers},
                    {"ffn_hidden", cfg.model.summarizer.ffn_hidden},
                    {"dropout", cfg.model.summarizer.dropout}};
    doc["loss"] = {{"beta", cfg.loss_beta}, {"tau", cfg.loss_tau}};
    doc["train"] = {{"batch_size", cfg.train.batch_size},
                    {"learning_rate", cfg.train.learning_rate},
                    {"weight_decay", cfg.train.weight_decay},
                    {"adam_beta1", cfg.train.adam_beta1},
                    {"adam_beta2", cfg.train.adam_beta2},
                    {"grad_clip_norm", cfg.train.grad_clip_norm},
                    {"steps", cfg.train.steps},
                    {"seed", cfg.train.seed},
                    {"ablation", train::to_string(cfg.train.ablation)}};
    doc["finetune"] = {{"batch_size", cfg.finetune.batch_size},
                       {"learning_rate", cfg.finetune.learning_rate},
                       {"weight_decay", cfg.finetune.weight_decay},
                       {"patience_epochs", cfg.finetune.patience_epochs},
                       {"min_steps", cfg.finetune.min_steps},
                       {"max_steps", cfg.finetune.max_steps},
                       {"validation_fraction", cfg.finetune.validation_fraction},
                       {"seed", cfg.finetune.seed}};
    return doc.dump(2) + "\n";
}

void apply_override(RunConfig& cfg, const std::string& dotted_key, const std::string& value) {
    json doc;
    try {
        doc = json::parse(dump_config(cfg));
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    json* node = &doc;
    std::string rest = dotted_key;
    while (true) {
        const auto pos = rest.find('.');
        const std::string head = rest.substr(0, pos);
        if (!node->contains(head)) throw ConfigError("config: unknown key '" + dotted_key + "'");
        if (pos == std::string::npos) {
            json parsed;
            try {
                parsed = json::parse(value);
            } catch (const json::parse_error&) {
                parsed = value;  // plain strings need no quoting
            }
            (*node)[head] = parsed;
            break;
        }
        node = &(*node)[head];
        rest = rest.substr(pos + 1);
    }
    RunConfig next = parse_config_text(doc.dump());
    if (dotted_key == "seed") {
        next.train.seed = next.seed;
        next.finetune.seed = next.seed;
    }
    cfg = next;
}

}  // namespace xit::config
