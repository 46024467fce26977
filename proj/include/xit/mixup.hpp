#pragma once

#include <stdexcept>
#include <vector>

#include "xit/data.hpp"
#include "xit/rng.hpp"

namespace xit::mixup {

// Mini-batch after ring-paired interpolation: element i mixes batch[i] (left)
// with batch[(i+1) mod B] (right). lambda is the weight of the right
// neighbour, so lambda near 0 keeps the mixed series close to its left
// original. The symmetric Beta makes this orientation choice immaterial in
// distribution.
struct MixedBatch {
    std::vector<data::TimeSeries> originals;
    std::vector<data::TimeSeries> mixed;
    std::vector<double> lambdas;

    int size() const { return static_cast<int>(mixed.size()); }
    static int left_index(int i) { return i; }
    static int right_index(int i, int batch) { return (i + 1) % batch; }
};

inline double sample_lambda(double alpha, Rng& rng) {
    if (alpha <= 0.0) throw std::invalid_argument("sample_lambda: alpha must be > 0");
    return rng.beta(alpha, alpha);
}

inline MixedBatch xd_mixup_batch(std::vector<data::TimeSeries> batch, std::vector<double> lambdas) {
    const int B = static_cast<int>(batch.size());
    if (B < 2) throw std::invalid_argument("xd_mixup_batch: batch size must be >= 2");
    if (static_cast<int>(lambdas.size()) != B)
        throw std::invalid_argument("xd_mixup_batch: lambda count mismatch");
    const int64_t len = batch.front().length();
    for (const auto& s : batch)
        if (s.length() != len) throw std::invalid_argument("xd_mixup_batch: series length mismatch");
    for (double l : lambdas)
        if (!(l >= 0.0 && l <= 1.0)) throw std::invalid_argument("xd_mixup_batch: lambda outside [0,1]");

    MixedBatch out;
    out.mixed.resize(static_cast<size_t>(B));
    for (int i = 0; i < B; ++i) {
        const auto& left = batch[static_cast<size_t>(i)];
        const auto& right = batch[static_cast<size_t>((i + 1) % B)];
        const double lam = lambdas[static_cast<size_t>(i)];
        data::TimeSeries mixed;
        mixed.values.resize(static_cast<size_t>(len));
        for (int64_t t = 0; t < len; ++t)
            mixed.values[static_cast<size_t>(t)] = static_cast<float>(
                (1.0 - lam) * left.values[static_cast<size_t>(t)] + lam * right.values[static_cast<size_t>(t)]);
        out.mixed[static_cast<size_t>(i)] = std::move(mixed);
    }
    out.originals = std::move(batch);
    out.lambdas = std::move(lambdas);
    return out;
}

}  // namespace xit::mixup
