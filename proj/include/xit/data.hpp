#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xit/rng.hpp"

namespace xit::data {

struct TimeSeries {
    std::vector<float> values;
    int label = -1;  // -1 when unlabeled

    int64_t length() const { return static_cast<int64_t>(values.size()); }
};

struct Dataset {
    std::string name;
    std::string domain = "Unknown";
    std::string split = "train";
    std::vector<TimeSeries> series;
    int num_classes = 0;

    int64_t size() const { return static_cast<int64_t>(series.size()); }
    int64_t max_length() const;
};

// Multi-dataset pretraining pool. Series are padded to target_length and each
// dataset carries its domain-balanced sampling probability.
struct Collection {
    std::vector<Dataset> datasets;
    int64_t target_length = 0;
    std::vector<double> sampling_weights;
};

struct CollectionOptions {
    // Exclude datasets whose longest series exceeds this; 0 disables the filter.
    int64_t max_length = 0;
};

struct BatchItem {
    int dataset_index = 0;
    int series_index = 0;
    const TimeSeries* series = nullptr;
};

// Plain-text table, one series per row: label first, then samples, separated
// by tabs, commas or spaces. Labels are remapped to contiguous 0-based ids in
// ascending order of the original values. Ragged rows are allowed.
Dataset load_dataset(const std::string& path);

// Prepend zeros up to target_len. Truncation is not a thing; shorter targets
// are an error.
TimeSeries prepad(const TimeSeries& series, int64_t target_len);

// Variate 0 of a multivariate recording, unchanged.
TimeSeries first_variate(const std::vector<std::vector<float>>& variates);

// target_length = longest series over all kept datasets;
// weight(dataset in domain g) = (1/#domains) * size / (total size within g).
Collection build_collection(std::vector<Dataset> datasets, const CollectionOptions& opts = {});

// JSON manifest: {"datasets": [{"path": ..., "domain": ..., "name"?, "split"?}]}.
// Relative paths resolve against the manifest's directory.
Collection load_collection_manifest(const std::string& path, const CollectionOptions& opts = {});

// Each slot draws a dataset by sampling weight, then a series uniformly within
// it. Needs B >= 2 (downstream interpolation pairs batch neighbours).
std::vector<BatchItem> sample_batch(const Collection& collection, int batch_size, Rng& rng);

}  // namespace xit::data
