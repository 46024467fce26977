#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "xit/rng.hpp"

using xit::Rng;

TEST_CASE("identical seeds give identical streams") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.uniform() == b.uniform());
        CHECK(a.normal() == b.normal());
        CHECK(a.uniform_int(17) == b.uniform_int(17));
    }
}

TEST_CASE("state round-trips mid-stream") {
    Rng a(7);
    for (int i = 0; i < 10; ++i) a.gamma(0.3);
    const std::string state = a.save_state();
    Rng b;
    b.load_state(state);
    for (int i = 0; i < 50; ++i) {
        CHECK(a.uniform() == b.uniform());
        CHECK(a.beta(0.2, 0.2) == b.beta(0.2, 0.2));
    }
    CHECK_THROWS(b.load_state("definitely not an engine state x"));
}

TEST_CASE("normal moments") {
    Rng rng(3);
    const int n = 100000;
    double sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal(2.0, 0.5);
        sum += v;
        sq += v * v;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(mean == doctest::Approx(2.0).epsilon(0.01));
    CHECK(var == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("gamma moments cover shapes below and above one") {
    Rng rng(4);
    for (double shape : {0.2, 1.7}) {
        const int n = 200000;
        double sum = 0, sq = 0;
        for (int i = 0; i < n; ++i) {
            const double v = rng.gamma(shape);
            sum += v;
            sq += v * v;
        }
        const double mean = sum / n;
        const double var = sq / n - mean * mean;
        CHECK(mean == doctest::Approx(shape).epsilon(0.03));
        CHECK(var == doctest::Approx(shape).epsilon(0.06));
    }
    CHECK_THROWS_AS(rng.gamma(0.0), std::invalid_argument);
}

TEST_CASE("uniform_int stays in range and is roughly uniform") {
    Rng rng(5);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) {
        const int64_t v = rng.uniform_int(7);
        REQUIRE(v >= 0);
        REQUIRE(v < 7);
        counts[static_cast<size_t>(v)]++;
    }
    for (int c : counts) CHECK(std::abs(c - 10000) < 500);
    CHECK(rng.uniform_int(1) == 0);
    CHECK_THROWS_AS(rng.uniform_int(0), std::invalid_argument);
}

TEST_CASE("shuffle produces a permutation") {
    Rng rng(6);
    std::vector<int> v = {0, 1, 2, 3, 4, 5, 6, 7};
    auto w = v;
    rng.shuffle(w);
    std::sort(w.begin(), w.end());
    CHECK(w == v);
}
