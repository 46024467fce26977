#include "xit/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "xit/eval.hpp"

namespace xit::synth {

const char* to_string(Family f) {
    switch (f) {
        case Family::sine_freq: return "sine-freq";
        case Family::square_duty: return "square-duty";
        case Family::sawtooth_slope: return "sawtooth-slope";
        case Family::ar_noise: return "ar-noise";
    }
    return "sine-freq";
}

Family family_from_string(const std::string& s) {
    if (s == "sine-freq") return Family::sine_freq;
    if (s == "square-duty") return Family::square_duty;
    if (s == "sawtooth-slope") return Family::sawtooth_slope;
    if (s == "ar-noise") return Family::ar_noise;
    throw std::invalid_argument("unknown synthetic family '" + s +
                                "' (expected sine-freq|square-duty|sawtooth-slope|ar-noise)");
}

void SynthSpec::validate() const {
    if (classes < 2) throw std::invalid_argument("synth: classes must be >= 2");
    if (samples_per_class < 1) throw std::invalid_argument("synth: samples_per_class must be >= 1");
    if (length < 2) throw std::invalid_argument("synth: length must be >= 2");
    if (noise_sigma < 0) throw std::invalid_argument("synth: noise_sigma must be >= 0");
}

namespace {

double frac(double x) { return x - std::floor(x); }

}  // namespace

data::Dataset generate(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    data::Dataset out;
    out.name = std::string(to_string(spec.family)) + "-c" + std::to_string(spec.classes) + "-s" +
               std::to_string(spec.seed);
    out.domain = to_string(spec.family);
    out.num_classes = spec.classes;

    const double T = static_cast<double>(spec.length);
    for (int c = 0; c < spec.classes; ++c) {
        for (int s = 0; s < spec.samples_per_class; ++s) {
            data::TimeSeries ts;
            ts.label = c;
            ts.values.reserve(static_cast<size_t>(spec.length));
            const double phase = rng.uniform() * 0.03 * T;  // slight onset jitter
            switch (spec.family) {
                case Family::sine_freq: {
                    const double f = 2.0 + 3.0 * c;  // cycles per window
                    for (int64_t t = 0; t < spec.length; ++t)
                        ts.values.push_back(static_cast<float>(
                            std::sin(2.0 * M_PI * f * (t + phase) / T) + spec.noise_sigma * rng.normal()));
                    break;
                }
                case Family::square_duty: {
                    const double duty = double(c + 1) / double(spec.classes + 1);
                    for (int64_t t = 0; t < spec.length; ++t) {
                        const double v = frac(4.0 * (t + phase) / T) < duty ? 1.0 : -1.0;
                        ts.values.push_back(static_cast<float>(v + spec.noise_sigma * rng.normal()));
                    }
                    break;
                }
                case Family::sawtooth_slope: {
                    const double slope = (c % 2 == 0 ? 1.0 : -1.0) * (1.0 + 0.5 * (c / 2));
                    for (int64_t t = 0; t < spec.length; ++t) {
                        const double v = slope * (2.0 * frac(3.0 * (t + phase) / T) - 1.0);
                        ts.values.push_back(static_cast<float>(v + spec.noise_sigma * rng.normal()));
                    }
                    break;
                }
                case Family::ar_noise: {
                    const double rho = spec.classes == 1 ? 0.0 : -0.8 + 1.6 * c / double(spec.classes - 1);
                    double x = 0.0;
                    for (int64_t t = 0; t < spec.length; ++t) {
                        x = rho * x + 0.3 * rng.normal();
                        ts.values.push_back(static_cast<float>(x + spec.noise_sigma * rng.normal()));
                    }
                    break;
                }
            }
            out.series.push_back(std::move(ts));
        }
    }
    return out;
}

void write_tsv(const data::Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write dataset file: " + path);
    char buf[40];
    for (const auto& s : dataset.series) {
        out << s.label;
        for (float v : s.values) {
            std::snprintf(buf, sizeof(buf), "%.9g", double(v));  // exact float round trip
            out << '\t' << buf;
        }
        out << '\n';
    }
}

namespace {

TransferArm probe_arm(model::XitModel<float>& encoder, const data::Dataset& train_data,
                      const data::Dataset& test_data, const train::FinetuneConfig& cfg) {
    auto result = train::finetune(encoder, train_data, cfg);
    auto features = train::featurize(encoder, test_data.series);
    eval::PredictionSet preds;
    preds.scores = model::classify_probs(result.classifier.params().get("classifier.weight"),
                                         result.classifier.params().get("classifier.bias"), features);
    for (const auto& s : test_data.series) preds.labels.push_back(s.label);
    TransferArm arm;
    arm.macro_f1 = eval::macro_f1(preds);
    arm.accuracy = eval::accuracy(preds);
    arm.auroc = eval::auroc(preds);
    return arm;
}

}  // namespace

TransferResult transfer_surplus(const std::vector<SynthSpec>& sources, const SynthSpec& target,
                                const TransferOptions& opts) {
    if (sources.empty()) throw std::invalid_argument("transfer_surplus: no source specs");
    for (const auto& s : sources)
        if (s.family == target.family && s.seed == target.seed)
            throw std::invalid_argument("transfer_surplus: target spec must be disjoint from the sources");

    std::vector<data::Dataset> source_data;
    for (const auto& s : sources) source_data.push_back(generate(s));
    auto collection = data::build_collection(std::move(source_data));

    model::ModelConfig model_cfg = opts.model;
    model_cfg.encoder.in_length = collection.target_length;

    model::XitModel<float> pretrained(model_cfg);
    (void)train::pretrain(collection, pretrained, opts.pretrain);

    auto target_train = generate(target);
    SynthSpec test_spec = target;
    test_spec.seed = target.seed + opts.test_seed_offset;
    test_spec.samples_per_class = opts.test_samples_per_class;
    auto target_test = generate(test_spec);
    if (target_train.max_length() > model_cfg.encoder.in_length)
        throw std::invalid_argument("transfer_surplus: target series longer than the pretrained encoder");

    TransferResult result;
    result.pretrained = probe_arm(pretrained, target_train, target_test, opts.finetune);

    model::XitModel<float> random_init(model_cfg);
    Rng init_rng(opts.finetune.seed);
    random_init.init(init_rng);
    result.random_init = probe_arm(random_init, target_train, target_test, opts.finetune);

    result.surplus = result.pretrained.macro_f1 - result.random_init.macro_f1;
    return result;
}

}  // namespace xit::synth
