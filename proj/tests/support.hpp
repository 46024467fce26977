#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "xit/graph.hpp"
#include "xit/tensor.hpp"

namespace testsupport {

using xit::Graph;
using xit::TensorD;

inline double rel_err(double a, double b, double floor = 1e-3) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central finite differences against the tape. `build` must be a pure
// function of the leaf values (re-seeded internally if it uses randomness).
using BuildFn = std::function<Graph<double>::NodeRef(Graph<double>&, const std::vector<Graph<double>::NodeRef>&)>;

inline void check_gradients(std::vector<TensorD> inputs, const BuildFn& build, double step = 1e-5,
                            double tol = 1e-6) {
    std::vector<TensorD> analytic;
    {
        Graph<double> g;
        std::vector<Graph<double>::NodeRef> leaves;
        for (const auto& t : inputs) leaves.push_back(g.leaf(t, true));
        auto root = build(g, leaves);
        REQUIRE(root->value.size() == 1);
        g.backward(root);
        for (auto* l : leaves)
            analytic.push_back(l->grad.empty() ? TensorD::zeros_like(l->value) : l->grad);
    }
    auto eval = [&](const std::vector<TensorD>& vals) {
        Graph<double> g;
        std::vector<Graph<double>::NodeRef> leaves;
        for (const auto& t : vals) leaves.push_back(g.leaf(t, false));
        return build(g, leaves)->value[0];
    };
    for (size_t i = 0; i < inputs.size(); ++i) {
        for (int64_t c = 0; c < inputs[i].size(); ++c) {
            auto perturbed = inputs;
            perturbed[i][c] += step;
            const double fp = eval(perturbed);
            perturbed[i][c] -= 2 * step;
            const double fm = eval(perturbed);
            const double fd = (fp - fm) / (2 * step);
            INFO("input ", i, " coord ", c, " analytic=", analytic[i][c], " fd=", fd);
            CHECK(rel_err(analytic[i][c], fd) < tol);
        }
    }
}

inline TensorD random_tensor(std::vector<int64_t> shape, xit::Rng& rng, double scale = 1.0) {
    TensorD t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

}  // namespace testsupport
