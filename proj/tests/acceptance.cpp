// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Tolerances and protocol sizes are pinned here, in code.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "model_grad_check.hpp"
#include "oracles.hpp"
#include "xit/data.hpp"
#include "xit/eval.hpp"
#include "xit/losses.hpp"
#include "xit/mixup.hpp"
#include "xit/synth.hpp"
#include "xit/train.hpp"

using namespace xit;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int g_failures = 0;

void criterion(int id, const std::string& name, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
        outcome = fn();
    } catch (const std::exception& e) {
        outcome = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!outcome.pass) ++g_failures;
    std::printf("[%s] criterion %d: %s (%.1fs) %s\n", outcome.pass ? "PASS" : "FAIL", id, name.c_str(),
                secs, outcome.detail.c_str());
    std::fflush(stdout);
}

oracle::Mat to_mat(const TensorD& t) {
    oracle::Mat m(static_cast<size_t>(t.dim(0)), oracle::Vec(static_cast<size_t>(t.dim(1))));
    for (int64_t i = 0; i < t.dim(0); ++i)
        for (int64_t j = 0; j < t.dim(1); ++j) m[static_cast<size_t>(i)][static_cast<size_t>(j)] = t.at(i, j);
    return m;
}

TensorD randn(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    TensorD t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

double rel_err(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// ---- criterion 1 ----

Outcome loss_oracle_equivalence() {
    Rng rng(4201);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int64_t B = 1 + rng.uniform_int(3);
        const int64_t C = 2 + 2 * rng.uniform_int(2);
        const int64_t Z = 2 + 2 * rng.uniform_int(2);
        const int64_t P = 2 + 2 * rng.uniform_int(2);

        losses::ContrastViews v;
        v.ctx_s = randn({B, C}, rng);
        v.ctx_w = randn({B, C}, rng);
        v.zk_s = randn({B, Z}, rng);
        v.zk_w = randn({B, Z}, rng);
        v.k_l = randn({B, P}, rng);
        v.k_s = randn({B, P}, rng);
        v.k_w = randn({B, P}, rng);
        v.k_r = randn({B, P}, rng);
        for (int64_t i = 0; i < B; ++i) v.lambdas.push_back(rng.uniform());
        const TensorD w = randn({C, Z}, rng, 0.5);

        const double tc = losses::tc_loss_value(v, w);
        const double tc_ref = oracle::tc_loss(to_mat(v.ctx_s), to_mat(v.ctx_w), to_mat(v.zk_s),
                                              to_mat(v.zk_w), to_mat(w));
        const double sicc = losses::sicc_loss_value(v, 0.2);
        const double sicc_ref = oracle::sicc_loss(to_mat(v.k_l), to_mat(v.k_s), to_mat(v.k_w),
                                                  to_mat(v.k_r), v.lambdas, 0.2);
        worst = std::max({worst, rel_err(tc, tc_ref, 1e-9), rel_err(sicc, sicc_ref, 1e-9)});
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "max relative error %.3g over 100 instances (limit 1e-6)", worst);
    return {worst <= 1e-6, buf};
}

// ---- criterion 2 ----

Outcome gradient_checks() {
    model::XitModel<double> m(testsupport::tiny_model_config(32, 8, 8));
    // seed fixes an evaluation point where no probe straddles a relu/pool
    // kink, so central differences measure the actual derivative
    Rng rng(47);
    m.init(rng);
    auto inputs = testsupport::random_step_inputs(3, 32, rng, /*with_lambdas=*/false);
    for (int i = 0; i < 3; ++i) inputs.lambdas.push_back(mixup::sample_lambda(0.2, rng));
    auto report = testsupport::check_total_loss_gradients(m, inputs, train::Ablation::full,
                                                          /*beta=*/0.25, /*tau=*/0.2,
                                                          /*probes_per_tensor=*/20, /*step=*/1e-4, rng);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%lld probes, max relative error %.3g in %s (limit 1e-4)",
                  static_cast<long long>(report.checked), report.max_rel_err, report.worst_tensor.c_str());
    return {report.max_rel_err <= 1e-4, buf};
}

// ---- criterion 3 ----

Outcome closed_form_cases() {
    Rng rng(4203);
    losses::ContrastViews tc1;
    tc1.ctx_s = randn({1, 3}, rng);
    tc1.ctx_w = randn({1, 3}, rng);
    tc1.zk_s = randn({1, 4}, rng);
    tc1.zk_w = randn({1, 4}, rng);
    const double tc = losses::tc_loss_value(tc1, randn({3, 4}, rng));

    losses::ContrastViews s1;
    TensorD kappa({1, 3});
    kappa.at(0, 0) = 0.2, kappa.at(0, 1) = -0.4, kappa.at(0, 2) = 0.7;
    s1.k_l = s1.k_s = s1.k_w = s1.k_r = kappa;
    s1.lambdas = {0.5};
    const double sicc = losses::sicc_loss_value(s1, 0.2);
    const double sicc_want = 2.5 + std::log(2.0);

    const double cs = losses::cosine_sim({0.3, -1.2, 0.4}, {0.3, -1.2, 0.4}, 0.2);

    const bool pass = std::abs(tc) <= 1e-9 && std::abs(sicc - sicc_want) <= 1e-9 && std::abs(cs - 5.0) <= 1e-9;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "TC(B=1)=%.2g, SICC=%.12f (want %.12f), cos=%.12f", tc, sicc, sicc_want,
                  cs);
    return {pass, buf};
}

// ---- criterion 4 ----

Outcome mixup_and_sampler_statistics() {
    Rng rng(4204);
    const int draws = 100000;
    double sum = 0, sq = 0;
    for (int i = 0; i < draws; ++i) {
        const double l = mixup::sample_lambda(0.2, rng);
        sum += l;
        sq += l * l;
    }
    const double mean = sum / draws;
    const double var = sq / draws - mean * mean;
    const bool beta_ok = std::abs(mean - 0.5) <= 0.005 && std::abs(var - 0.178571428571) <= 0.005;

    std::vector<data::Dataset> ds(3);
    const char* domains[3] = {"A", "A", "B"};
    const int sizes[3] = {10, 30, 20};
    for (int i = 0; i < 3; ++i) {
        ds[static_cast<size_t>(i)].name = "d" + std::to_string(i);
        ds[static_cast<size_t>(i)].domain = domains[i];
        ds[static_cast<size_t>(i)].num_classes = 1;
        for (int s = 0; s < sizes[i]; ++s) {
            data::TimeSeries t;
            t.label = 0;
            t.values = {1.0f, 2.0f};
            ds[static_cast<size_t>(i)].series.push_back(t);
        }
    }
    auto col = data::build_collection(std::move(ds));
    const double expect[3] = {0.125, 0.375, 0.5};
    std::vector<int64_t> counts(3, 0);
    for (int i = 0; i < draws / 100; ++i)
        for (const auto& item : data::sample_batch(col, 100, rng))
            counts[static_cast<size_t>(item.dataset_index)]++;
    double worst_freq = 0;
    for (int i = 0; i < 3; ++i)
        worst_freq = std::max(worst_freq, std::abs(double(counts[static_cast<size_t>(i)]) / draws - expect[i]));

    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "beta mean %.4f (want 0.5 +-0.005), var %.5f (want 0.17857 +-0.005), "
                  "max sampler deviation %.4f (limit 0.01)",
                  mean, var, worst_freq);
    return {beta_ok && worst_freq <= 0.01, buf};
}

// ---- criterion 5 ----

model::ModelConfig mech_model_config() {
    model::ModelConfig cfg;
    cfg.encoder.in_length = 32;
    cfg.encoder.channels = {4, 4, 8};
    cfg.summarizer.token_dim = 8;
    cfg.summarizer.heads = 2;
    cfg.summarizer.layers = 1;
    cfg.summarizer.ffn_hidden = 8;
    return cfg;
}

data::Collection mech_collection() {
    synth::SynthSpec a, b;
    a.family = synth::Family::sine_freq;
    a.samples_per_class = 10;
    a.length = 32;
    a.seed = 71;
    b.family = synth::Family::square_duty;
    b.samples_per_class = 10;
    b.length = 32;
    b.seed = 72;
    std::vector<data::Dataset> ds = {synth::generate(a), synth::generate(b)};
    return data::build_collection(std::move(ds));
}

Outcome algorithm_mechanics() {
    std::string detail;

    // (a) bit-identical checkpoints from a fixed seed
    auto collection = mech_collection();
    train::PretrainOptions opts;
    opts.train.batch_size = 6;
    opts.train.steps = 12;
    opts.train.seed = 2024;
    model::XitModel<float> m1(mech_model_config()), m2(mech_model_config());
    auto r1 = train::pretrain(collection, m1, opts);
    auto r2 = train::pretrain(collection, m2, opts);
    bool identical = r1.checkpoint.rng_state == r2.checkpoint.rng_state;
    for (size_t i = 0; identical && i < r1.checkpoint.params.entries().size(); ++i) {
        const auto& ea = r1.checkpoint.params.entries()[i];
        const auto& eb = r2.checkpoint.params.entries()[i];
        for (int64_t j = 0; j < ea.value.size(); ++j)
            if (ea.value[j] != eb.value[j]) {
                identical = false;
                break;
            }
    }
    detail += identical ? "checkpoints bit-identical" : "checkpoint mismatch";

    // (b) post-clip global norm <= 1.0 on live gradients
    bool clip_ok = true;
    {
        Rng rng(55);
        model::XitModel<float> m(mech_model_config());
        m.init(rng);
        train::AdamState<float> adam(m.params());
        for (int step = 0; step < 5; ++step) {
            auto inputs = train::make_step_inputs<float>(collection, 6, train::Ablation::full, 0.2,
                                                         augment::AugmentConfig{}, rng);
            Graph<float> g;
            model::ParamBinding<float> bind(g, m.params());
            model::ForwardMode mode;
            mode.train = true;
            mode.update_running_stats = true;
            mode.dropout_rng = &rng;
            auto sg = train::build_pretrain_graph(g, m, bind, inputs, train::Ablation::full, 0.25, 0.2, mode);
            g.backward(sg.total);
            auto grads = train::collect_gradients(m.params(), bind);
            train::clip_gradients(grads, 1.0);
            if (train::global_grad_norm(grads) > 1.0 + 1e-6) clip_ok = false;
            train::adam_step(m.params(), grads, adam, 1e-3, 3e-4, 0.9, 0.999);
        }
    }
    detail += clip_ok ? "; post-clip norm <= 1" : "; clip violated";

    // (c) frozen encoder through finetuning
    synth::SynthSpec probe_spec;
    probe_spec.family = synth::Family::sawtooth_slope;
    probe_spec.samples_per_class = 12;
    probe_spec.length = 32;
    probe_spec.seed = 73;
    auto probe_data = synth::generate(probe_spec);
    const auto before = m1.params();
    train::FinetuneConfig fcfg;  // stated values: patience 4, min 40, max 2000
    auto ft = train::finetune(m1, probe_data, fcfg);
    bool frozen = true;
    for (size_t i = 0; i < before.entries().size(); ++i) {
        const auto& ea = before.entries()[i];
        const auto& eb = m1.params().entries()[i];
        for (int64_t j = 0; j < ea.value.size(); ++j)
            if (ea.value[j] != eb.value[j]) {
                frozen = false;
                break;
            }
    }
    detail += frozen ? "; encoder frozen" : "; encoder changed";

    // (d) early stopping: patience rule, min floor, max cap
    train::EarlyStopper stopper(4, 0, 100000);
    const double hist[6] = {0.60, 0.61, 0.61, 0.61, 0.61, 0.61};
    bool stop_rule = true;
    for (int i = 0; i < 6; ++i) {
        const bool stop = stopper.record_epoch(hist[i], i + 1);
        if (stop != (i == 5)) stop_rule = false;
    }
    data::Dataset flat;
    flat.name = "flat";
    flat.num_classes = 2;
    for (int i = 0; i < 8; ++i) {
        data::TimeSeries s;
        s.values.assign(32, 1.0f);
        s.label = i % 2;
        flat.series.push_back(s);
    }
    model::XitModel<float> frozen_model(mech_model_config());
    Rng init_rng(7);
    frozen_model.init(init_rng);
    auto flat_ft = train::finetune(frozen_model, flat, fcfg);  // 1 step/epoch, metric never improves
    const bool bounds_ok = flat_ft.steps_taken == 40 && ft.steps_taken >= 40 && ft.steps_taken <= 2000 &&
                           train::EarlyStopper(4, 40, 2000).hit_step_cap(2000);
    detail += stop_rule && bounds_ok ? "; early stopping obeys 4/40/2000" : "; early stopping violated";

    return {identical && clip_ok && frozen && stop_rule && bounds_ok, detail};
}

// ---- criteria 6 and 7: shared protocol ----

// Pretrain on three families at desk scale, linear-probe a held-out fourth
// family with 40 labels, score macro F1 on 200 held-out test samples.
synth::TransferOptions protocol_options(uint64_t seed, train::Ablation ablation) {
    synth::TransferOptions opts;
    opts.model.encoder.channels = {16, 32, 32};
    opts.model.summarizer.token_dim = 32;
    opts.model.summarizer.heads = 4;
    opts.model.summarizer.layers = 2;
    opts.model.summarizer.ffn_hidden = 32;
    opts.model.summarizer.dropout = 0.1;
    opts.pretrain.train.batch_size = 16;
    opts.pretrain.train.steps = 300;  // well under the 2000-step ceiling
    opts.pretrain.train.learning_rate = 1e-3;
    opts.pretrain.train.seed = seed;
    opts.pretrain.train.ablation = ablation;
    opts.finetune.seed = seed;
    opts.test_samples_per_class = 100;
    return opts;
}

std::vector<synth::SynthSpec> protocol_sources() {
    std::vector<synth::SynthSpec> sources(3);
    sources[0].family = synth::Family::sine_freq;
    sources[0].classes = 4;
    sources[0].samples_per_class = 50;
    sources[0].seed = 101;
    sources[1].family = synth::Family::square_duty;
    sources[1].classes = 2;
    sources[1].samples_per_class = 100;
    sources[1].seed = 102;
    sources[2].family = synth::Family::sawtooth_slope;
    sources[2].classes = 4;
    sources[2].samples_per_class = 50;
    sources[2].seed = 103;
    for (auto& s : sources) {
        s.length = 128;
        s.noise_sigma = 0.05;
    }
    return sources;
}

synth::SynthSpec protocol_target() {
    synth::SynthSpec target;  // held-out family, 2 x 20 = 40 labeled samples
    target.family = synth::Family::ar_noise;
    target.classes = 2;
    target.samples_per_class = 20;
    target.length = 128;
    target.noise_sigma = 0.1;
    target.seed = 104;
    return target;
}

constexpr uint64_t kProtocolSeeds[3] = {1, 2, 3};

double median3(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[1];
}

std::vector<double> g_full_f1;  // pretrained-arm scores shared with criterion 7

Outcome transfer_surplus_analog() {
    const auto sources = protocol_sources();
    const auto target = protocol_target();
    std::vector<double> surpluses;
    std::string per_seed;
    const auto t0 = std::chrono::steady_clock::now();
    for (uint64_t seed : kProtocolSeeds) {
        auto r = synth::transfer_surplus(sources, target, protocol_options(seed, train::Ablation::full));
        surpluses.push_back(r.surplus);
        g_full_f1.push_back(r.pretrained.macro_f1);
        char buf[96];
        std::snprintf(buf, sizeof(buf), " seed %llu: %+.1f pts (pre %.3f, rand %.3f)",
                      (unsigned long long)seed, 100 * r.surplus, r.pretrained.macro_f1,
                      r.random_init.macro_f1);
        per_seed += buf;
    }
    const double med = median3(surpluses);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[256];
    std::snprintf(buf, sizeof(buf), "median surplus %+.1f points (need >= +5);%s; %.0fs (limit 900s)",
                  100 * med, per_seed.c_str(), secs);
    return {med >= 0.05 && secs < 900.0, buf};
}

Outcome ablation_ordering() {
    const auto sources = protocol_sources();
    const auto target = protocol_target();
    std::vector<std::pair<std::string, double>> rows;
    rows.emplace_back("full", g_full_f1.empty() ? 0.0 : median3(g_full_f1));
    for (train::Ablation abl : {train::Ablation::xd_sicc, train::Ablation::xd_tc, train::Ablation::tc_only}) {
        std::vector<double> f1;
        for (uint64_t seed : kProtocolSeeds) {
            auto r = synth::transfer_surplus(sources, target, protocol_options(seed, abl));
            f1.push_back(r.pretrained.macro_f1);
        }
        rows.emplace_back(train::to_string(abl), median3(f1));
    }
    std::string table;
    for (const auto& [name, f1] : rows) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), " %s=%.3f", name.c_str(), f1);
        table += buf;
    }
    const double full = rows[0].second;
    const double tc_only = rows[3].second;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "median macro F1 per configuration:%s; asserting full >= tc_only",
                  table.c_str());
    return {full >= tc_only, buf};
}

// ---- criterion 8 ----

Outcome metric_oracles() {
    eval::PredictionSet auroc_case;
    auroc_case.scores = Tensor<double>({4, 2});
    const double pos[4] = {0.9, 0.8, 0.7, 0.1};
    const int lab[4] = {1, 0, 1, 0};
    for (int i = 0; i < 4; ++i) {
        auroc_case.scores.at(i, 1) = pos[i];
        auroc_case.scores.at(i, 0) = 1 - pos[i];
        auroc_case.labels.push_back(lab[i]);
    }
    const double auc = eval::auroc(auroc_case);

    eval::PredictionSet f1_case;
    f1_case.scores = Tensor<double>({4, 2});
    for (int i = 0; i < 4; ++i) f1_case.scores.at(i, 0) = 1.0;  // predict class 0 everywhere
    f1_case.labels = {0, 0, 1, 1};
    const double f1 = eval::macro_f1(f1_case);

    eval::EmbeddingSet geom;
    geom.vectors = Tensor<double>({4, 2});
    geom.vectors.at(0, 0) = 0, geom.vectors.at(0, 1) = 0;
    geom.vectors.at(1, 0) = 0, geom.vectors.at(1, 1) = 2;
    geom.vectors.at(2, 0) = 10, geom.vectors.at(2, 1) = 0;
    geom.vectors.at(3, 0) = 10, geom.vectors.at(3, 1) = 2;
    geom.groups = {0, 0, 1, 1};
    const double dbi = eval::dbi(geom);

    Tensor<double> ties({3, 1});
    ties.at(0, 0) = 36.3, ties.at(1, 0) = 36.3, ties.at(2, 0) = 20.0;
    const auto ranks = eval::rank_methods(ties);

    const bool pass = std::abs(auc - 0.75) <= 1e-9 && std::abs(f1 - 1.0 / 3.0) <= 1e-9 &&
                      std::abs(dbi - 0.2) <= 1e-9 && std::abs(ranks[0] - 1.5) <= 1e-9 &&
                      std::abs(ranks[1] - 1.5) <= 1e-9 && std::abs(ranks[2] - 3.0) <= 1e-9;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "auroc=%.4f f1=%.4f dbi=%.4f ranks=[%.1f,%.1f,%.1f]", auc, f1, dbi,
                  ranks[0], ranks[1], ranks[2]);
    return {pass, buf};
}

}  // namespace

int main() {
    criterion(1, "loss-oracle equivalence", loss_oracle_equivalence);
    criterion(2, "gradient checks against central differences", gradient_checks);
    criterion(3, "closed-form loss cases", closed_form_cases);
    criterion(4, "mixup and sampler statistics", mixup_and_sampler_statistics);
    criterion(5, "training-loop mechanics", algorithm_mechanics);
    criterion(6, "desk-scale transfer surplus", transfer_surplus_analog);
    criterion(7, "ablation ordering", ablation_ordering);
    criterion(8, "metric oracles", metric_oracles);
    if (g_failures > 0) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all acceptance criteria passed\n");
    return 0;
}
