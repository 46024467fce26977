#include "xit.h"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "json.hpp"
#include "xit/config.hpp"
#include "xit/data.hpp"
#include "xit/eval.hpp"
#include "xit/model.hpp"
#include "xit/synth.hpp"
#include "xit/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

struct xit_config {
    xit::config::RunConfig cfg;
};

struct xit_checkpoint {
    xit::train::Checkpoint ckpt;
};

namespace {

thread_local std::string g_last_error = "ok";

xit_status fail(xit_status code, const std::string& msg) {
    g_last_error = msg;
    return code;
}

// Failures after configuration and input loading succeeded.
struct RuntimeFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename Fn>
auto run_phase(Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const RuntimeFailure&) {
        throw;
    } catch (const std::exception& e) {
        throw RuntimeFailure(e.what());
    }
}

fs::path resolve_output_dir(const char* out_dir, const std::string& config_default) {
    fs::path p = out_dir ? fs::path(out_dir) : fs::path(config_default);
    if (p.is_relative()) {
        if (const char* root = std::getenv("XIT_OUTPUT_ROOT")) p = fs::path(root) / p;
    }
    return p;
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::string float_repr(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

xit::model::ModelConfig model_config_for_length(const xit::config::RunConfig& cfg, int64_t length) {
    xit::model::ModelConfig mc = cfg.model;
    mc.encoder.in_length = length;
    mc.validate();
    return mc;
}

json metrics_json(const xit::eval::PredictionSet& preds) {
    return {{"accuracy", xit::eval::accuracy(preds)},
            {"macro_f1", xit::eval::macro_f1(preds)},
            {"auroc", xit::eval::auroc(preds)}};
}

}  // namespace

extern "C" {

const char* xit_version(void) { return "0.1.0"; }

const char* xit_last_error(void) { return g_last_error.c_str(); }

void xit_string_free(char* s) { std::free(s); }

xit_status xit_config_default(xit_config** out) {
    if (!out) return fail(XIT_ERR_CONFIG, "xit_config_default: null output pointer");
    *out = new xit_config{xit::config::default_config()};
    return XIT_OK;
}

xit_status xit_config_load(const char* path, xit_config** out) {
    if (!path || !out) return fail(XIT_ERR_CONFIG, "xit_config_load: null argument");
    try {
        *out = new xit_config{xit::config::load_config_file(path)};
        return XIT_OK;
    } catch (const std::exception& e) {
        return fail(XIT_ERR_CONFIG, e.what());
    }
}

xit_status xit_config_set(xit_config* cfg, const char* dotted_key, const char* value) {
    if (!cfg || !dotted_key || !value) return fail(XIT_ERR_CONFIG, "xit_config_set: null argument");
    try {
        xit::config::apply_override(cfg->cfg, dotted_key, value);
        return XIT_OK;
    } catch (const std::exception& e) {
        return fail(XIT_ERR_CONFIG, e.what());
    }
}

xit_status xit_config_dump(const xit_config* cfg, char** json_out) {
    if (!cfg || !json_out) return fail(XIT_ERR_CONFIG, "xit_config_dump: null argument");
    const std::string text = xit::config::dump_config(cfg->cfg);
    *json_out = static_cast<char*>(std::malloc(text.size() + 1));
    std::memcpy(*json_out, text.c_str(), text.size() + 1);
    return XIT_OK;
}

void xit_config_free(xit_config* cfg) { delete cfg; }

xit_status xit_checkpoint_open(const char* dir, xit_checkpoint** out) {
    if (!dir || !out) return fail(XIT_ERR_CONFIG, "xit_checkpoint_open: null argument");
    try {
        *out = new xit_checkpoint{xit::train::load_checkpoint(dir)};
        return XIT_OK;
    } catch (const std::exception& e) {
        return fail(XIT_ERR_CONFIG, e.what());
    }
}

void xit_checkpoint_free(xit_checkpoint* ckpt) { delete ckpt; }

xit_status xit_pretrain(const xit_config* cfg, const char* out_dir) {
    if (!cfg) return fail(XIT_ERR_CONFIG, "xit_pretrain: null config");
    try {
        if (cfg->cfg.manifest_path.empty())
            throw xit::config::ConfigError("config: data.manifest is not set");
        xit::data::CollectionOptions copts;
        copts.max_length = cfg->cfg.max_length;
        auto collection = xit::data::load_collection_manifest(cfg->cfg.manifest_path, copts);
        auto model_cfg = model_config_for_length(cfg->cfg, collection.target_length);
        const fs::path out = resolve_output_dir(out_dir, cfg->cfg.output_dir);
        fs::create_directories(out);

        std::error_code ec;
        fs::remove(out / "telemetry.csv", ec);  // fresh run, fresh log
        auto result = run_phase([&] {
            xit::model::XitModel<float> m(model_cfg);
            xit::train::PretrainOptions opts;
            opts.train = cfg->cfg.train;
            opts.augment = cfg->cfg.augment;
            opts.mixup_alpha = cfg->cfg.mixup_alpha;
            opts.loss_beta = cfg->cfg.loss_beta;
            opts.loss_tau = cfg->cfg.loss_tau;
            opts.telemetry_path = (out / "telemetry.csv").string();
            return xit::train::pretrain(collection, m, opts);
        });

        result.checkpoint.run_config_json = xit::config::dump_config(cfg->cfg);
        xit::train::save_checkpoint((out / "checkpoint").string(), result.checkpoint);
        write_text_file(out / "config.json", xit::config::dump_config(cfg->cfg));
        return XIT_OK;
    } catch (const RuntimeFailure& e) {
        return fail(XIT_ERR_RUNTIME, e.what());
    } catch (const std::exception& e) {
        return fail(XIT_ERR_CONFIG, e.what());
    }
}

xit_status xit_finetune(const xit_config* cfg, const xit_checkpoint* ckpt, const char* dataset_path,
                        const char* test_dataset_path, const char* out_dir) {
    if (!cfg || !dataset_path) return fail(XIT_ERR_CONFIG, "xit_finetune: null argument");
    try {
        auto train_ds = xit::data::load_dataset(dataset_path);
        std::optional<xit::data::Dataset> test_ds;
        if (test_dataset_path) {
            test_ds = xit::data::load_dataset(test_dataset_path);
            if (test_ds->num_classes != train_ds.num_classes)
                throw xit::config::ConfigError(
                    "finetune: class count mismatch between train (" + std::to_string(train_ds.num_classes) +
                    ") and test (" + std::to_string(test_ds->num_classes) + ") datasets");
        }

        xit::model::ModelConfig model_cfg;
        if (ckpt) {
            model_cfg = ckpt->ckpt.model_config;
            const int64_t need = std::max(train_ds.max_length(),
                                          test_ds ? test_ds->max_length() : int64_t(0));
            if (need > model_cfg.encoder.in_length)
                throw xit::config::ConfigError(
                    "finetune: checkpoint encoder expects length " +
                    std::to_string(model_cfg.encoder.in_length) + " but the dataset has series of length " +
                    std::to_string(need));
        } else {
            const int64_t need = std::max(train_ds.max_length(),
                                          test_ds ? test_ds->max_length() : int64_t(0));
            model_cfg = model_config_for_length(cfg->cfg, need);
        }

        const fs::path out = resolve_output_dir(out_dir, cfg->cfg.output_dir);
        fs::create_directories(out);

        json report = run_phase([&] {
            xit::model::XitModel<float> m(model_cfg);
            if (ckpt) {
                m.params() = ckpt->ckpt.params;
            } else {
                xit::Rng init_rng(cfg->cfg.finetune.seed);
                m.init(init_rng);
            }
            auto result = xit::train::finetune(m, train_ds, cfg->cfg.finetune);

            const auto& eval_ds = test_ds ? *test_ds : train_ds;
            auto features = xit::train::featurize(m, eval_ds.series);
            xit::eval::PredictionSet preds;
            preds.scores = xit::model::classify_probs(result.classifier.params().get("classifier.weight"),
                                                      result.classifier.params().get("classifier.bias"),
                                                      features);
            for (const auto& s : eval_ds.series) preds.labels.push_back(s.label);

            // classifier tensors: weight rows then bias, raw little-endian f32
            const auto& w = result.classifier.params().get("classifier.weight");
            const auto& b = result.classifier.params().get("classifier.bias");
            std::ofstream cls(out / "classifier.bin", std::ios::binary);
            cls.write(reinterpret_cast<const char*>(w.data()),
                      static_cast<std::streamsize>(w.size() * sizeof(float)));
            cls.write(reinterpret_cast<const char*>(b.data()),
                      static_cast<std::streamsize>(b.size() * sizeof(float)));

            json rep;
            rep["dataset"] = train_ds.name;
            rep["random_init"] = ckpt == nullptr;
            rep["evaluated_on"] = test_ds ? "test" : "train";
            rep["metrics"] = metrics_json(preds);
            rep["best_epoch"] = result.best_epoch;
            rep["best_val_auroc"] = result.best_val_auroc;
            rep["steps"] = result.steps_taken;
            rep["classifier"] = {{"file", "classifier.bin"},
                                 {"classes", w.shape()[0]},
                                 {"input_dim", w.shape()[1]}};
            return rep;
        });

        write_text_file(out / "report.json", report.dump(2) + "\n");
        return XIT_OK;
    } catch (const RuntimeFailure& e) {
        return fail(XIT_ERR_RUNTIME, e.what());
    } catch (const std::exception& e) {
        return fail(XIT_ERR_CONFIG, e.what());
    }
}

xit_status xit_embed(const xit_checkpoint* ckpt, const char* dataset_path, const char* out_csv,
                     double* dbi_out) {
    if (!ckpt || !dataset_path || !out_csv) return fail(XIT_ERR_CONFIG, "xit_embed: null argument");
    try {
        auto dataset = xit::data::load_dataset(dataset_path);
        if (dataset.max_length() > ckpt->ckpt.model_config.encoder.in_length)
            throw xit::config::ConfigError(
                "embed: checkpoint encoder expects length " +
                std::to_string(ckpt->ckpt.model_config.encoder.in_length) +
                " but the dataset has series of length " + std::to_string(dataset.max_length()));

        const double dbi_value = run_phase([&] {
            xit::model::XitModel<float> m(ckpt->ckpt.model_config);
            m.params() = ckpt->ckpt.params;
            auto features = xit::train::featurize(m, dataset.series);

            xit::Tensor<double> dfeat({features.dim(0), features.dim(1)});
            for (int64_t i = 0; i < features.size(); ++i) dfeat[i] = features[i];
            auto pca = xit::eval::pca2(dfeat);

            xit::eval::EmbeddingSet eset;
            eset.vectors = dfeat;
            for (const auto& s : dataset.series) eset.groups.push_back(s.label);
            const double dbi = xit::eval::dbi(eset);

            std::ofstream out(out_csv);
            if (!out) throw std::runtime_error("cannot write embeddings csv: " + std::string(out_csv));
            out << "index,label,pc1,pc2";
            for (int64_t j = 0; j < features.dim(1); ++j) out << ",e" << j;
            out << "\n";
            for (int64_t i = 0; i < features.dim(0); ++i) {
                out << i << "," << dataset.series[static_cast<size_t>(i)].label;
                char buf[40];
                std::snprintf(buf, sizeof(buf), "%.17g", pca.coords.at(i, 0));
                out << "," << buf;
                std::snprintf(buf, sizeof(buf), "%.17g", pca.coords.at(i, 1));
                out << "," << buf;
                for (int64_t j = 0; j < features.dim(1); ++j)
                    out << "," << float_repr(features.at(i, j));
                out << "\n";
            }
            return dbi;
        });

        if (dbi_out) *dbi_out = dbi_value;
        return XIT_OK;
    } catch (const RuntimeFailure& e) {
        return fail(XIT_ERR_RUNTIME, e.what());
    } catch (const std::exception& e) {
        return fail(XIT_ERR_CONFIG, e.what());
    }
}

xit_status xit_eval_reports(const char* reports_dir, const char* metric, const char* out_csv) {
    if (!reports_dir || !out_csv) return fail(XIT_ERR_CONFIG, "xit_eval_reports: null argument");
    const std::string metric_key = metric ? metric : "macro_f1";
    if (metric_key != "macro_f1" && metric_key != "auroc" && metric_key != "accuracy")
        return fail(XIT_ERR_CONFIG, "xit_eval_reports: metric must be macro_f1, auroc or accuracy");
    try {
        std::map<std::string, std::map<std::string, double>> scores;  // method -> dataset -> score
        std::set<std::string> datasets;
        if (!fs::is_directory(reports_dir))
            throw xit::config::ConfigError("eval: reports directory not found: " + std::string(reports_dir));
        for (const auto& method_dir : fs::directory_iterator(reports_dir)) {
            if (!method_dir.is_directory()) continue;
            const std::string method = method_dir.path().filename().string();
            for (const auto& file : fs::directory_iterator(method_dir.path())) {
                if (file.path().extension() != ".json") continue;
                std::ifstream in(file.path());
                json rep;
                try {
                    rep = json::parse(in);
                } catch (const json::parse_error& e) {
                    throw xit::config::ConfigError("eval: bad report " + file.path().string() + ": " + e.what());
                }
                const std::string dataset = file.path().stem().string();
                scores[method][dataset] = rep.at("metrics").at(metric_key).get<double>();
                datasets.insert(dataset);
            }
        }
        if (scores.empty()) throw xit::config::ConfigError("eval: no reports found under " + std::string(reports_dir));

        std::string missing;
        for (const auto& [method, per_ds] : scores)
            for (const auto& ds : datasets)
                if (!per_ds.count(ds)) missing += " " + method + "/" + ds;
        if (!missing.empty()) throw xit::config::ConfigError("eval: missing report cells:" + missing);

        xit::Tensor<double> matrix({static_cast<int64_t>(scores.size()), static_cast<int64_t>(datasets.size())});
        std::vector<std::string> methods;
        int64_t mi = 0;
        for (const auto& [method, per_ds] : scores) {
            methods.push_back(method);
            int64_t di = 0;
            for (const auto& ds : datasets) matrix.at(mi, di++) = per_ds.at(ds);
            ++mi;
        }
        const auto ranks = xit::eval::rank_methods(matrix);

        std::ofstream out(out_csv);
        if (!out) throw std::runtime_error("cannot write rank table: " + std::string(out_csv));
        out << "method,mean_rank,datasets,metric\n";
        for (size_t i = 0; i < methods.size(); ++i)
            out << methods[i] << "," << float_repr(ranks[i]) << "," << datasets.size() << "," << metric_key
                << "\n";
        return XIT_OK;
    } catch (const std::exception& e) {
        return fail(XIT_ERR_CONFIG, e.what());
    }
}

xit_status xit_synth(const char* spec_json_path, const char* out_dir) {
    if (!spec_json_path || !out_dir) return fail(XIT_ERR_CONFIG, "xit_synth: null argument");
    try {
        std::ifstream in(spec_json_path);
        if (!in) throw xit::config::ConfigError("synth: cannot open spec file: " + std::string(spec_json_path));
        json doc;
        try {
            doc = json::parse(in);
        } catch (const json::parse_error& e) {
            throw xit::config::ConfigError("synth: " + std::string(e.what()));
        }
        if (!doc.is_object() || !doc.contains("datasets") || !doc["datasets"].is_array())
            throw xit::config::ConfigError("synth: spec must be {\"datasets\": [...]}");

        fs::create_directories(out_dir);
        json manifest;
        manifest["datasets"] = json::array();
        for (const auto& entry : doc["datasets"]) {
            for (const auto& [key, _] : entry.items())
                if (key != "family" && key != "classes" && key != "samples_per_class" && key != "length" &&
                    key != "noise_sigma" && key != "seed")
                    throw xit::config::ConfigError("synth: unknown spec key '" + key + "'");
            xit::synth::SynthSpec spec;
            if (entry.contains("family"))
                spec.family = xit::synth::family_from_string(entry.at("family").get<std::string>());
            if (entry.contains("classes")) spec.classes = entry.at("classes").get<int>();
            if (entry.contains("samples_per_class"))
                spec.samples_per_class = entry.at("samples_per_class").get<int>();
            if (entry.contains("length")) spec.length = entry.at("length").get<int64_t>();
            if (entry.contains("noise_sigma")) spec.noise_sigma = entry.at("noise_sigma").get<double>();
            if (entry.contains("seed")) spec.seed = entry.at("seed").get<uint64_t>();
            spec.validate();

            auto dataset = xit::synth::generate(spec);
            const std::string file = dataset.name + ".tsv";
            xit::synth::write_tsv(dataset, (fs::path(out_dir) / file).string());
            manifest["datasets"].push_back(
                {{"path", file}, {"domain", dataset.domain}, {"name", dataset.name}});
        }
        write_text_file(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");
        return XIT_OK;
    } catch (const std::exception& e) {
        return fail(XIT_ERR_CONFIG, e.what());
    }
}

}  // extern "C"
