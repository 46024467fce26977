#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "model_grad_check.hpp"
#include "xit/eval.hpp"
#include "xit/train.hpp"

using namespace xit;
using namespace xit::train;
namespace fs = std::filesystem;

namespace {

model::ModelConfig small_config(int64_t T = 32) {
    model::ModelConfig cfg;
    cfg.encoder.in_length = T;
    cfg.encoder.channels = {4, 4, 8};
    cfg.encoder.kernel_sizes = {8, 5, 3};
    cfg.summarizer.token_dim = 8;
    cfg.summarizer.heads = 2;
    cfg.summarizer.layers = 1;
    cfg.summarizer.ffn_hidden = 8;
    cfg.summarizer.dropout = 0.1;
    return cfg;
}

// Two easily distinguishable signal families at length 32.
data::Collection tiny_collection(int per_class = 12) {
    Rng rng(77);
    std::vector<data::Dataset> ds(2);
    ds[0].name = "waves";
    ds[0].domain = "A";
    ds[1].name = "steps";
    ds[1].domain = "B";
    for (int i = 0; i < per_class; ++i) {
        data::TimeSeries a, b;
        const double f = 2.0 + rng.uniform();
        for (int t = 0; t < 32; ++t) {
            a.values.push_back(static_cast<float>(std::sin(2 * M_PI * f * t / 32.0) + 0.05 * rng.normal()));
            b.values.push_back(static_cast<float>((t % 16 < 8 ? 1.0 : -1.0) + 0.05 * rng.normal()));
        }
        a.label = 0;
        b.label = 0;
        ds[0].series.push_back(a);
        ds[1].series.push_back(b);
    }
    ds[0].num_classes = 1;
    ds[1].num_classes = 1;
    return data::build_collection(std::move(ds));
}

data::Dataset labeled_two_class(int per_class, int T = 32, uint64_t seed = 5) {
    Rng rng(seed);
    data::Dataset d;
    d.name = "probe";
    d.num_classes = 2;
    for (int i = 0; i < per_class; ++i) {
        data::TimeSeries a, b;
        for (int t = 0; t < T; ++t) {
            a.values.push_back(static_cast<float>(std::sin(2 * M_PI * 3.0 * t / T) + 0.05 * rng.normal()));
            b.values.push_back(static_cast<float>(0.8 * (t % 8 < 4 ? 1.0 : -1.0) + 0.05 * rng.normal()));
        }
        a.label = 0;
        b.label = 1;
        d.series.push_back(a);
        d.series.push_back(b);
    }
    return d;
}

PretrainOptions quick_options(int64_t steps, Ablation ablation = Ablation::full, uint64_t seed = 9) {
    PretrainOptions opts;
    opts.train.batch_size = 6;
    opts.train.steps = steps;
    opts.train.seed = seed;
    opts.train.ablation = ablation;
    opts.train.learning_rate = 1e-3;
    return opts;
}

bool params_identical(const model::ParamStore<float>& a, const model::ParamStore<float>& b) {
    if (a.entries().size() != b.entries().size()) return false;
    for (size_t i = 0; i < a.entries().size(); ++i) {
        const auto& ea = a.entries()[i];
        const auto& eb = b.entries()[i];
        if (ea.name != eb.name || !ea.value.same_shape(eb.value)) return false;
        for (int64_t j = 0; j < ea.value.size(); ++j)
            if (ea.value[j] != eb.value[j]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("adam matches a scalar oracle") {
    model::ParamStore<float> store;
    store.add("p", {1}, true);
    store.get("p")[0] = 1.0f;
    AdamState<float> state(store);
    std::vector<Tensor<float>> grads = {Tensor<float>({1})};  // grad = 0

    const double lr = 0.1, wd = 0.5, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    adam_step(store, grads, state, lr, wd, b1, b2, eps);

    // plain scalar re-derivation
    double p = 1.0, m = 0.0, v = 0.0;
    const double g = 0.0 + wd * p;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    p -= lr * (m / (1 - b1)) / (std::sqrt(v / (1 - b2)) + eps);

    CHECK(store.get("p")[0] == doctest::Approx(p).epsilon(1e-7));
    CHECK(store.get("p")[0] == doctest::Approx(0.9).epsilon(1e-4));
}

TEST_CASE("adam first step moves by -lr in the gradient sign") {
    model::ParamStore<float> store;
    store.add("p", {3}, true);
    AdamState<float> state(store);
    std::vector<Tensor<float>> grads = {Tensor<float>({3})};
    grads[0][0] = 0.3f;
    grads[0][1] = -4000.0f;
    grads[0][2] = 1e-3f;
    adam_step(store, grads, state, 0.01, 0.0, 0.9, 0.999);
    CHECK(store.get("p")[0] == doctest::Approx(-0.01).epsilon(1e-4));
    CHECK(store.get("p")[1] == doctest::Approx(0.01).epsilon(1e-4));
    CHECK(store.get("p")[2] == doctest::Approx(-0.01).epsilon(1e-4));
}

TEST_CASE("adam rejects non-finite gradients") {
    model::ParamStore<float> store;
    store.add("p", {1}, true);
    AdamState<float> state(store);
    std::vector<Tensor<float>> grads = {Tensor<float>({1})};
    grads[0][0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(adam_step(store, grads, state, 0.1, 0, 0.9, 0.999), std::runtime_error);
}

TEST_CASE("gradient clipping") {
    std::vector<Tensor<float>> grads = {Tensor<float>({2}), Tensor<float>({1})};
    grads[0][0] = 1.2f;
    grads[0][1] = -1.2f;
    grads[1][0] = 0.8f;
    const double norm = global_grad_norm(grads);
    auto halved = grads;
    const double pre = clip_gradients(halved, norm / 2.0);
    CHECK(pre == doctest::Approx(norm));
    for (size_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < grads[i].size(); ++j)
            CHECK(halved[i][j] == doctest::Approx(grads[i][j] / 2.0f));

    auto untouched = grads;
    clip_gradients(untouched, norm * 2.0);
    for (size_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < grads[i].size(); ++j) CHECK(untouched[i][j] == grads[i][j]);

    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Tensor<float>> g = {Tensor<float>({5})};
        for (int64_t i = 0; i < 5; ++i) g[0][i] = static_cast<float>(rng.normal() * 10);
        clip_gradients(g, 1.0);
        CHECK(global_grad_norm(g) <= 1.0 + 1e-6);
    }
}

TEST_CASE("early stopping follows the documented patience rule") {
    EarlyStopper stopper(4, 0, 100000);
    const std::vector<double> history = {0.60, 0.61, 0.61, 0.61, 0.61, 0.61};
    std::vector<bool> stops;
    for (size_t i = 0; i < history.size(); ++i) stops.push_back(stopper.record_epoch(history[i], int64_t(i + 1)));
    CHECK(stops == std::vector<bool>{false, false, false, false, false, true});
    CHECK(stopper.best_epoch() == 2);
    CHECK(stopper.best_metric() == 0.61);
}

TEST_CASE("early stopping never fires below min_steps") {
    EarlyStopper stopper(2, 40, 2000);
    CHECK_FALSE(stopper.record_epoch(0.5, 10));
    CHECK_FALSE(stopper.record_epoch(0.5, 20));  // patience reached but too early
    CHECK_FALSE(stopper.record_epoch(0.5, 39));
    CHECK(stopper.record_epoch(0.5, 40));
    CHECK(EarlyStopper(4, 0, 2000).hit_step_cap(2000));
}

TEST_CASE("pretraining is deterministic and loss decreases on learnable data") {
    auto collection = tiny_collection();
    model::XitModel<float> m1(small_config()), m2(small_config());
    auto r1 = pretrain(collection, m1, quick_options(50));
    auto r2 = pretrain(collection, m2, quick_options(50));

    REQUIRE(r1.telemetry.size() == 50);
    for (size_t i = 0; i < 50; ++i) {
        CHECK(r1.telemetry[i].l_total == r2.telemetry[i].l_total);
        CHECK(r1.telemetry[i].has_tc);
        CHECK(r1.telemetry[i].has_sicc);
    }
    CHECK(params_identical(r1.checkpoint.params, r2.checkpoint.params));

    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) {
        first += r1.telemetry[static_cast<size_t>(i)].l_total;
        last += r1.telemetry[static_cast<size_t>(40 + i)].l_total;
    }
    CHECK(last / 10.0 < first / 10.0);
}

TEST_CASE("divergence aborts with the failing step number") {
    auto collection = tiny_collection();
    model::XitModel<float> m(small_config());
    PretrainOptions opts = quick_options(50);
    opts.train.learning_rate = 1e18;  // guaranteed blow-up
    try {
        (void)pretrain(collection, m, opts);
        FAIL("expected divergence");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("step") != std::string::npos);
    }
}

TEST_CASE("ablation switches mask exactly the advertised losses") {
    CHECK(uses_tc(Ablation::full));
    CHECK(uses_sicc(Ablation::full));
    CHECK(uses_mixup(Ablation::full));
    CHECK_FALSE(uses_tc(Ablation::xd_sicc));
    CHECK(uses_sicc(Ablation::xd_sicc));
    CHECK(uses_tc(Ablation::xd_tc));
    CHECK_FALSE(uses_sicc(Ablation::xd_tc));
    CHECK(uses_mixup(Ablation::xd_tc));
    CHECK(uses_tc(Ablation::tc_only));
    CHECK_FALSE(uses_sicc(Ablation::tc_only));
    CHECK_FALSE(uses_mixup(Ablation::tc_only));
    CHECK(ablation_from_string("xd_sicc") == Ablation::xd_sicc);
    CHECK_THROWS_AS((void)ablation_from_string("bogus"), std::invalid_argument);

    auto collection = tiny_collection();
    model::XitModel<float> m(small_config());
    auto r = pretrain(collection, m, quick_options(3, Ablation::xd_tc));
    for (const auto& row : r.telemetry) {
        CHECK(row.has_tc);
        CHECK_FALSE(row.has_sicc);
        CHECK(row.l_total == row.l_tc);
    }
}

TEST_CASE("tc_only consumes no lambda draws from the stream") {
    auto collection = tiny_collection();
    augment::AugmentConfig aug;

    Rng via_step(123);
    auto inputs = make_step_inputs<float>(collection, 4, Ablation::tc_only, 0.2, aug, via_step);
    CHECK(inputs.lambdas.empty());

    // replay by hand: batch draw, then augmentations, with no lambda in between
    Rng manual(123);
    auto batch = data::sample_batch(collection, 4, manual);
    std::vector<data::TimeSeries> strong, weak;
    for (const auto& item : batch) strong.push_back(augment::strong_augment(*item.series, aug, manual));
    for (const auto& item : batch) weak.push_back(augment::weak_augment(*item.series, aug, manual));
    for (int64_t b = 0; b < 4; ++b)
        for (int64_t l = 0; l < collection.target_length; ++l) {
            CHECK(inputs.strong.at(b, 0, l) == strong[static_cast<size_t>(b)].values[static_cast<size_t>(l)]);
            CHECK(inputs.weak.at(b, 0, l) == weak[static_cast<size_t>(b)].values[static_cast<size_t>(l)]);
        }
}

TEST_CASE("checkpoints round-trip byte-exactly") {
    auto collection = tiny_collection();
    model::XitModel<float> m(small_config());
    auto result = pretrain(collection, m, quick_options(4));

    const auto dir1 = fs::temp_directory_path() / "xit_ckpt_a";
    const auto dir2 = fs::temp_directory_path() / "xit_ckpt_b";
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    save_checkpoint(dir1.string(), result.checkpoint);
    auto loaded = load_checkpoint(dir1.string());
    save_checkpoint(dir2.string(), loaded);

    for (const auto& entry : fs::directory_iterator(dir1)) {
        std::ifstream a(entry.path(), std::ios::binary);
        std::ifstream b(dir2 / entry.path().filename(), std::ios::binary);
        REQUIRE(b.good());
        std::string ca((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
        std::string cb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
        CHECK(ca == cb);
    }
    CHECK(params_identical(loaded.params, result.checkpoint.params));
    CHECK(loaded.step == result.checkpoint.step);
    CHECK(loaded.rng_state == result.checkpoint.rng_state);
}

TEST_CASE("checkpoint loading reports truncation and version mismatches") {
    auto collection = tiny_collection();
    model::XitModel<float> m(small_config());
    auto result = pretrain(collection, m, quick_options(2));
    const auto dir = fs::temp_directory_path() / "xit_ckpt_broken";
    fs::remove_all(dir);
    save_checkpoint(dir.string(), result.checkpoint);

    // truncate the first tensor file
    fs::resize_file(dir / "t0000.bin", 3);
    try {
        (void)load_checkpoint(dir.string());
        FAIL("expected truncation error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("encoder.block1.conv.weight") != std::string::npos);
    }

    save_checkpoint(dir.string(), result.checkpoint);
    auto manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const auto pos = text.find("\"format_version\": 1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 19, "\"format_version\": 9");
    std::ofstream(manifest_path) << text;
    CHECK_THROWS_WITH_AS((void)load_checkpoint(dir.string()), doctest::Contains("version"),
                         std::runtime_error);
}

TEST_CASE("resumed pretraining reproduces the unbroken run") {
    auto collection = tiny_collection();
    model::XitModel<float> full_model(small_config());
    auto full = pretrain(collection, full_model, quick_options(10));

    model::XitModel<float> part_model(small_config());
    auto part = pretrain(collection, part_model, quick_options(5));
    const auto dir = fs::temp_directory_path() / "xit_ckpt_resume";
    fs::remove_all(dir);
    save_checkpoint(dir.string(), part.checkpoint);
    auto restored = load_checkpoint(dir.string());

    model::XitModel<float> resumed_model(small_config());
    auto resumed = pretrain(collection, resumed_model, quick_options(10), &restored);

    REQUIRE(resumed.telemetry.size() == 5);  // steps 6..10
    for (size_t i = 0; i < 5; ++i) {
        CHECK(resumed.telemetry[i].step == full.telemetry[i + 5].step);
        CHECK(resumed.telemetry[i].l_total == full.telemetry[i + 5].l_total);
    }
    CHECK(params_identical(resumed.checkpoint.params, full.checkpoint.params));
}

TEST_CASE("finetuning never touches the encoder") {
    model::XitModel<float> m(small_config());
    Rng rng(21);
    m.init(rng);
    const auto before = m.params();

    auto dataset = labeled_two_class(12);
    FinetuneConfig cfg;
    cfg.batch_size = 8;
    cfg.max_steps = 60;
    cfg.min_steps = 10;
    auto result = finetune(m, dataset, cfg);
    CHECK(params_identical(before, m.params()));
    CHECK(result.steps_taken <= 60);
    CHECK(!result.val_auroc_history.empty());
}

TEST_CASE("finetuning fits a separable problem to perfect training accuracy") {
    model::XitModel<float> m(small_config());
    Rng rng(22);
    m.init(rng);
    auto dataset = labeled_two_class(20);
    FinetuneConfig cfg;
    cfg.batch_size = 16;
    cfg.learning_rate = 5e-3;  // probe converges quickly on separable features
    cfg.max_steps = 2000;
    auto result = finetune(m, dataset, cfg);

    auto features = featurize(m, dataset.series);
    std::vector<int> labels;
    for (const auto& s : dataset.series) labels.push_back(s.label);
    eval::PredictionSet preds;
    preds.scores = model::classify_probs(result.classifier.params().get("classifier.weight"),
                                         result.classifier.params().get("classifier.bias"), features);
    preds.labels = labels;
    CHECK(eval::accuracy(preds) == doctest::Approx(1.0));
}

TEST_CASE("finetuning respects the step floor when the metric is flat") {
    model::XitModel<float> m(small_config());
    Rng rng(23);
    m.init(rng);
    // all-identical features: AUROC stays at 0.5 forever
    data::Dataset d;
    d.name = "flat";
    d.num_classes = 2;
    for (int i = 0; i < 8; ++i) {
        data::TimeSeries s;
        s.values.assign(32, 1.0f);
        s.label = i % 2;
        d.series.push_back(s);
    }
    FinetuneConfig cfg;
    cfg.batch_size = 64;
    auto result = finetune(m, d, cfg);
    CHECK(result.steps_taken >= 40);
    CHECK(result.steps_taken <= 2000);
    for (double a : result.val_auroc_history) CHECK(a == doctest::Approx(0.5));
}

TEST_CASE("finetuning validates dataset length against the encoder") {
    model::XitModel<float> m(small_config());
    Rng rng(24);
    m.init(rng);
    auto dataset = labeled_two_class(6, 64);  // longer than the encoder's 32
    FinetuneConfig cfg;
    try {
        (void)finetune(m, dataset, cfg);
        FAIL("expected length mismatch error");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("32") != std::string::npos);
        CHECK(msg.find("64") != std::string::npos);
    }
}

TEST_CASE("telemetry csv leaves ablated columns empty") {
    std::vector<TelemetryRow> rows(2);
    rows[0] = {1, 0.5, 0.0, 0.5, true, false};
    rows[1] = {2, 0.4, 0.0, 0.4, true, false};
    const auto path = (fs::temp_directory_path() / "xit_telemetry.csv").string();
    write_telemetry_csv(path, rows);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "step,l_tc,l_sicc,l_total");
    std::getline(in, line);
    CHECK(line == "1,0.5,,0.5");
}

TEST_CASE("post-clip gradient norm stays within the limit during pretraining") {
    // run a couple of real steps manually to observe the clipped norms
    auto collection = tiny_collection();
    model::XitModel<float> m(small_config());
    Rng rng(31);
    m.init(rng);
    AdamState<float> adam(m.params());
    PretrainOptions opts = quick_options(1);
    for (int step = 0; step < 3; ++step) {
        auto inputs = make_step_inputs<float>(collection, 6, Ablation::full, 0.2, opts.augment, rng);
        Graph<float> g;
        model::ParamBinding<float> bind(g, m.params());
        model::ForwardMode mode;
        mode.train = true;
        mode.update_running_stats = true;
        mode.dropout_rng = &rng;
        auto sg = build_pretrain_graph(g, m, bind, inputs, Ablation::full, 0.25, 0.2, mode);
        g.backward(sg.total);
        auto grads = collect_gradients(m.params(), bind);
        clip_gradients(grads, 1.0);
        CHECK(global_grad_norm(grads) <= 1.0 + 1e-6);
        adam_step(m.params(), grads, adam, 1e-3, 3e-4, 0.9, 0.999);
    }
}
