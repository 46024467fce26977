#pragma once

#include <string>
#include <vector>

#include "xit/data.hpp"
#include "xit/model.hpp"
#include "xit/train.hpp"

namespace xit::synth {

enum class Family { sine_freq, square_duty, sawtooth_slope, ar_noise };

const char* to_string(Family f);
Family family_from_string(const std::string& s);

// Class-parameterized signal generator; balanced classes, deterministic per
// seed. Families differ in which waveform property encodes the class: sine
// frequency, square-wave duty cycle, sawtooth slope, or AR(1) feedback.
struct SynthSpec {
    Family family = Family::sine_freq;
    int classes = 2;
    int samples_per_class = 100;
    int64_t length = 128;
    double noise_sigma = 0.05;
    uint64_t seed = 0;

    void validate() const;
};

data::Dataset generate(const SynthSpec& spec);

// One series per row, label first: the loader's table format.
void write_tsv(const data::Dataset& dataset, const std::string& path);

struct TransferArm {
    double macro_f1 = 0;
    double accuracy = 0;
    double auroc = 0;
};

struct TransferOptions {
    train::PretrainOptions pretrain;
    train::FinetuneConfig finetune;
    model::ModelConfig model;          // encoder in_length is overwritten from the data
    int test_samples_per_class = 50;
    uint64_t test_seed_offset = 9001;  // target test split = target spec with shifted seed
};

struct TransferResult {
    double surplus = 0;  // pretrained macro F1 minus random-init macro F1
    TransferArm pretrained;
    TransferArm random_init;
};

// Pretrain on the source specs, then linear-probe the target twice from the
// same finetune seed: once from the learned encoder, once from a fresh
// random one. Metrics come from a held-out test set drawn from the target
// spec with a shifted seed.
TransferResult transfer_surplus(const std::vector<SynthSpec>& sources, const SynthSpec& target,
                                const TransferOptions& opts);

}  // namespace xit::synth
