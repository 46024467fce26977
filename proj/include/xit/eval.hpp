#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "xit/tensor.hpp"

namespace xit::eval {

struct PredictionSet {
    Tensor<double> scores;   // (N, num_classes), rows sum to 1
    std::vector<int> labels; // N entries in [0, num_classes)
};

struct EmbeddingSet {
    Tensor<double> vectors;  // (N, D)
    std::vector<int> groups; // dataset or class identity per row
};

// Fraction of argmax hits (ties resolve to the lowest class index).
double accuracy(const PredictionSet& preds);

// Unweighted mean of per-class F1 over all score columns; a class with an
// empty confusion row and column contributes 0.
double macro_f1(const PredictionSet& preds);

// Macro one-vs-rest AUROC with midrank tie handling; needs at least two
// distinct labels.
double auroc(const PredictionSet& preds);

// Davies-Bouldin index with Euclidean geometry. Coincident centroids are an
// error rather than a silent infinity.
double dbi(const EmbeddingSet& embeds);

struct Pca2Result {
    Tensor<double> coords;                          // (N, 2)
    std::array<double, 2> captured_variance{};      // top-2 covariance eigenvalues (divisor N-1)
    std::vector<double> component1, component2;     // unit right singular vectors
};

// Center, project onto the top-2 principal directions. Component signs are
// fixed so each component's largest-magnitude loading is positive.
Pca2Result pca2(const Tensor<double>& vectors);

// scores is (methods x datasets); per dataset methods are ranked by
// descending score with midrank ties, then ranks are averaged per method.
std::vector<double> rank_methods(const Tensor<double>& per_dataset_scores);

}  // namespace xit::eval
