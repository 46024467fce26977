#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "xit/mixup.hpp"

using namespace xit::mixup;
using xit::Rng;
using xit::data::TimeSeries;

namespace {

TimeSeries series(std::vector<float> v) {
    TimeSeries s;
    s.values = std::move(v);
    return s;
}

}  // namespace

TEST_CASE("lambda sampling moments match Beta(0.2, 0.2)") {
    Rng rng(1);
    const int n = 100000;
    double sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
        const double l = sample_lambda(0.2, rng);
        REQUIRE(l >= 0.0);
        REQUIRE(l <= 1.0);
        sum += l;
        sq += l * l;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean - 0.5) < 0.005);
    // Var(Beta(a,a)) = a^2 / ((2a)^2 (2a+1)) = 1 / (4 (2a+1)) = 0.178571 at a = 0.2
    CHECK(std::abs(var - 0.17857142857) < 0.005);
    CHECK_THROWS_AS((void)sample_lambda(0.0, rng), std::invalid_argument);
    CHECK_THROWS_AS((void)sample_lambda(-1.0, rng), std::invalid_argument);
}

TEST_CASE("lambda at alpha=1 is uniform (Kolmogorov-Smirnov)") {
    Rng rng(2);
    const int n = 100000;
    std::vector<double> draws(n);
    for (double& d : draws) d = sample_lambda(1.0, rng);
    std::sort(draws.begin(), draws.end());
    double ks = 0;
    for (int i = 0; i < n; ++i) {
        const double cdf = draws[static_cast<size_t>(i)];
        ks = std::max(ks, std::abs(cdf - (i + 1.0) / n));
        ks = std::max(ks, std::abs(cdf - i / double(n)));
    }
    CHECK(ks < 1.95 / std::sqrt(double(n)));  // ~ p = 0.001 critical value
}

TEST_CASE("mixing endpoints recover the originals exactly") {
    auto batch = std::vector<TimeSeries>{series({1, 2, 3}), series({4, 5, 6})};
    auto zero = xd_mixup_batch(batch, {0.0, 0.0});
    CHECK(zero.mixed[0].values == batch[0].values);
    CHECK(zero.mixed[1].values == batch[1].values);
    auto one = xd_mixup_batch(batch, {1.0, 1.0});
    CHECK(one.mixed[0].values == batch[1].values);
    CHECK(one.mixed[1].values == batch[0].values);  // ring wraps
}

TEST_CASE("midpoint mixing with the ring pair") {
    auto mixed = xd_mixup_batch({series({0, 0}), series({2, 4})}, {0.5, 0.5});
    CHECK(mixed.mixed[0].values == std::vector<float>{1, 2});
    CHECK(mixed.mixed[1].values == std::vector<float>{1, 2});
    CHECK(mixed.size() == 2);
    CHECK(MixedBatch::left_index(1) == 1);
    CHECK(MixedBatch::right_index(1, 2) == 0);
}

TEST_CASE("mixing stays inside the pointwise interval") {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const int B = 2 + static_cast<int>(rng.uniform_int(5));
        const int T = 1 + static_cast<int>(rng.uniform_int(16));
        std::vector<TimeSeries> batch;
        std::vector<double> lambdas;
        for (int i = 0; i < B; ++i) {
            TimeSeries s;
            for (int t = 0; t < T; ++t) s.values.push_back(static_cast<float>(rng.normal()));
            batch.push_back(std::move(s));
            lambdas.push_back(rng.uniform());
        }
        auto mb = xd_mixup_batch(batch, lambdas);
        REQUIRE(mb.size() == B);
        for (int i = 0; i < B; ++i) {
            const auto& left = batch[static_cast<size_t>(i)].values;
            const auto& right = batch[static_cast<size_t>((i + 1) % B)].values;
            for (int t = 0; t < T; ++t) {
                const float lo = std::min(left[t], right[t]);
                const float hi = std::max(left[t], right[t]);
                CHECK(mb.mixed[static_cast<size_t>(i)].values[t] >= lo - 1e-6f);
                CHECK(mb.mixed[static_cast<size_t>(i)].values[t] <= hi + 1e-6f);
            }
        }
    }
}

TEST_CASE("mixing commutes with power-of-two scaling") {
    Rng rng(4);
    std::vector<TimeSeries> batch, doubled;
    std::vector<double> lambdas;
    for (int i = 0; i < 4; ++i) {
        TimeSeries s, s2;
        for (int t = 0; t < 8; ++t) {
            const float v = static_cast<float>(rng.normal());
            s.values.push_back(v);
            s2.values.push_back(2.0f * v);
        }
        batch.push_back(std::move(s));
        doubled.push_back(std::move(s2));
        lambdas.push_back(rng.uniform());
    }
    auto a = xd_mixup_batch(doubled, lambdas);
    auto b = xd_mixup_batch(batch, lambdas);
    for (int i = 0; i < 4; ++i)
        for (int t = 0; t < 8; ++t)
            CHECK(a.mixed[static_cast<size_t>(i)].values[t] ==
                  2.0f * b.mixed[static_cast<size_t>(i)].values[t]);
}

TEST_CASE("mixing validates its inputs") {
    CHECK_THROWS_AS((void)xd_mixup_batch({series({1})}, {0.5}), std::invalid_argument);
    CHECK_THROWS_AS((void)xd_mixup_batch({series({1}), series({1, 2})}, {0.5, 0.5}), std::invalid_argument);
    CHECK_THROWS_AS((void)xd_mixup_batch({series({1}), series({2})}, {0.5}), std::invalid_argument);
    CHECK_THROWS_AS((void)xd_mixup_batch({series({1}), series({2})}, {0.5, 1.5}), std::invalid_argument);
}

TEST_CASE("originals pass through unchanged") {
    auto batch = std::vector<TimeSeries>{series({1, 2}), series({3, 4}), series({5, 6})};
    auto mb = xd_mixup_batch(batch, {0.25, 0.5, 0.75});
    REQUIRE(mb.originals.size() == 3);
    for (size_t i = 0; i < 3; ++i) CHECK(mb.originals[i].values == batch[i].values);
    CHECK(mb.lambdas == std::vector<double>{0.25, 0.5, 0.75});
}
