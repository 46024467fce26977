#pragma once

#include <stdexcept>
#include <string>

#include "xit/augment.hpp"
#include "xit/model.hpp"
#include "xit/train.hpp"

namespace xit::config {

// Raised for malformed or contradictory configuration; the C API and CLI map
// it to the config/IO exit code.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One JSON document with a section per module. Every key has a default;
// unknown keys are rejected with their full path.
struct RunConfig {
    std::string manifest_path;  // data.manifest
    int64_t max_length = 0;     // data.max_length, 0 disables the filter

    augment::AugmentConfig augment;
    double mixup_alpha = 0.2;
    model::ModelConfig model;  // encoder.in_length is resolved from the data at run time
    double loss_beta = 0.25;
    double loss_tau = 0.2;
    train::PretrainConfig train;
    train::FinetuneConfig finetune;

    std::string output_dir = "runs/default";
    uint64_t seed = 42;

    void validate() const;
};

RunConfig default_config();

// Defaults overlaid with the file's contents. The top-level seed feeds
// train.seed and finetune.seed unless those are set explicitly.
RunConfig load_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& json_text);

// Full effective config, suitable for byte-for-byte reruns.
std::string dump_config(const RunConfig& cfg);

// Dotted-path override, e.g. ("train.steps", "500") or ("seed", "7");
// setting "seed" reseeds the train and finetune sections as well.
void apply_override(RunConfig& cfg, const std::string& dotted_key, const std::string& value);

}  // namespace xit::config
