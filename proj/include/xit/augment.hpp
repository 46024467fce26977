#pragma once

#include <algorithm>
#include <set>
#include <stdexcept>
#include <vector>

#include "xit/data.hpp"
#include "xit/rng.hpp"

namespace xit::augment {

struct AugmentConfig {
    double weak_scale_sigma = 0.1;  // std of the per-series scale factor around 1
    int strong_max_segments = 5;
    double strong_jitter_sigma = 0.05;

    void validate() const {
        if (weak_scale_sigma < 0) throw std::invalid_argument("augment: weak_scale_sigma must be >= 0");
        if (strong_max_segments < 1) throw std::invalid_argument("augment: strong_max_segments must be >= 1");
        if (strong_jitter_sigma < 0) throw std::invalid_argument("augment: strong_jitter_sigma must be >= 0");
    }
};

// Magnitude scaling: one factor s ~ Normal(1, sigma^2) for the whole series.
inline data::TimeSeries weak_augment(const data::TimeSeries& x, const AugmentConfig& cfg, Rng& rng) {
    const double s = rng.normal(1.0, cfg.weak_scale_sigma);
    data::TimeSeries out = x;
    for (float& v : out.values) v = static_cast<float>(s * v);
    return out;
}

// Permutation-and-jitter: split into m ~ U{1..max_segments} contiguous
// segments at distinct interior points, permute the segments uniformly, then
// add i.i.d. Normal(0, jitter^2) noise. Draw order is fixed (segmentation,
// permutation, jitter) so runs with equal seeds and different jitter levels
// share the same rearrangement.
inline data::TimeSeries strong_augment(const data::TimeSeries& x, const AugmentConfig& cfg, Rng& rng) {
    const int64_t n = x.length();
    const int64_t max_segments = std::min<int64_t>(cfg.strong_max_segments, n);
    const int64_t m = 1 + rng.uniform_int(max_segments);

    std::set<int64_t> cuts;
    while (static_cast<int64_t>(cuts.size()) < m - 1)
        cuts.insert(1 + rng.uniform_int(n - 1));  // interior positions 1..n-1

    std::vector<std::pair<int64_t, int64_t>> segments;  // [begin, end)
    int64_t begin = 0;
    for (int64_t cut : cuts) {
        segments.emplace_back(begin, cut);
        begin = cut;
    }
    segments.emplace_back(begin, n);
    rng.shuffle(segments);

    data::TimeSeries out;
    out.label = x.label;
    out.values.reserve(static_cast<size_t>(n));
    for (const auto& [b, e] : segments)
        out.values.insert(out.values.end(), x.values.begin() + b, x.values.begin() + e);
    for (float& v : out.values) v = static_cast<float>(v + rng.normal(0.0, cfg.strong_jitter_sigma));
    return out;
}

}  // namespace xit::augment
