#include "xit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

namespace xit::eval {

namespace {

void validate(const PredictionSet& preds) {
    if (preds.scores.rank() != 2 || preds.scores.dim(0) < 1)
        throw std::invalid_argument("predictions: empty or malformed score matrix");
    if (static_cast<int64_t>(preds.labels.size()) != preds.scores.dim(0))
        throw std::invalid_argument("predictions: label count mismatch");
    for (int y : preds.labels)
        if (y < 0 || y >= preds.scores.dim(1)) throw std::invalid_argument("predictions: label out of range");
}

int argmax_row(const Tensor<double>& scores, int64_t i) {
    int best = 0;
    for (int64_t c = 1; c < scores.dim(1); ++c)
        if (scores.at(i, c) > scores.at(i, best)) best = static_cast<int>(c);
    return best;
}

// Midranks (1-based) of v in ascending order.
std::vector<double> midranks(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double mid = (double(i + 1) + double(j + 1)) / 2.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = mid;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double accuracy(const PredictionSet& preds) {
    validate(preds);
    const int64_t n = preds.scores.dim(0);
    int64_t hits = 0;
    for (int64_t i = 0; i < n; ++i)
        if (argmax_row(preds.scores, i) == preds.labels[static_cast<size_t>(i)]) ++hits;
    return double(hits) / double(n);
}

double macro_f1(const PredictionSet& preds) {
    validate(preds);
    const int64_t n = preds.scores.dim(0);
    const int64_t classes = preds.scores.dim(1);
    std::vector<int64_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
    for (int64_t i = 0; i < n; ++i) {
        const int pred = argmax_row(preds.scores, i);
        const int truth = preds.labels[static_cast<size_t>(i)];
        if (pred == truth)
            ++tp[pred];
        else {
            ++fp[pred];
            ++fn[truth];
        }
    }
    double sum = 0;
    for (int64_t c = 0; c < classes; ++c) {
        const int64_t denom = 2 * tp[c] + fp[c] + fn[c];
        sum += denom == 0 ? 0.0 : 2.0 * double(tp[c]) / double(denom);
    }
    return sum / double(classes);
}

double auroc(const PredictionSet& preds) {
    validate(preds);
    const int64_t n = preds.scores.dim(0);
    std::set<int> present(preds.labels.begin(), preds.labels.end());
    if (present.size() < 2) throw std::invalid_argument("auroc: needs at least two classes in the labels");

    double sum = 0;
    int64_t counted = 0;
    for (int c : present) {
        std::vector<double> scores(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) scores[static_cast<size_t>(i)] = preds.scores.at(i, c);
        const auto ranks = midranks(scores);
        int64_t pos = 0;
        double rank_sum = 0;
        for (int64_t i = 0; i < n; ++i)
            if (preds.labels[static_cast<size_t>(i)] == c) {
                ++pos;
                rank_sum += ranks[static_cast<size_t>(i)];
            }
        const int64_t neg = n - pos;
        sum += (rank_sum - double(pos) * double(pos + 1) / 2.0) / (double(pos) * double(neg));
        ++counted;
    }
    return sum / double(counted);
}

double dbi(const EmbeddingSet& embeds) {
    if (embeds.vectors.rank() != 2) throw std::invalid_argument("dbi: expects an (N, D) matrix");
    const int64_t n = embeds.vectors.dim(0), d = embeds.vectors.dim(1);
    if (static_cast<int64_t>(embeds.groups.size()) != n) throw std::invalid_argument("dbi: group count mismatch");

    std::map<int, std::vector<int64_t>> members;
    for (int64_t i = 0; i < n; ++i) members[embeds.groups[static_cast<size_t>(i)]].push_back(i);
    if (members.size() < 2) throw std::invalid_argument("dbi: needs at least two groups");

    const size_t k = members.size();
    std::vector<std::vector<double>> centroid(k, std::vector<double>(static_cast<size_t>(d), 0.0));
    std::vector<double> scatter(k, 0.0);
    size_t gi = 0;
    for (const auto& [_, idx] : members) {
        for (int64_t i : idx)
            for (int64_t j = 0; j < d; ++j) centroid[gi][static_cast<size_t>(j)] += embeds.vectors.at(i, j);
        for (auto& v : centroid[gi]) v /= double(idx.size());
        for (int64_t i : idx) {
            double sq = 0;
            for (int64_t j = 0; j < d; ++j) {
                const double diff = embeds.vectors.at(i, j) - centroid[gi][static_cast<size_t>(j)];
                sq += diff * diff;
            }
            scatter[gi] += std::sqrt(sq);
        }
        scatter[gi] /= double(idx.size());
        ++gi;
    }

    double total = 0;
    for (size_t a = 0; a < k; ++a) {
        double worst = 0;
        for (size_t b = 0; b < k; ++b) {
            if (a == b) continue;
            double sq = 0;
            for (size_t j = 0; j < centroid[a].size(); ++j) {
                const double diff = centroid[a][j] - centroid[b][j];
                sq += diff * diff;
            }
            const double dist = std::sqrt(sq);
            if (!(dist > 0.0))
                throw std::invalid_argument("dbi: coincident centroids for two groups");
            worst = std::max(worst, (scatter[a] + scatter[b]) / dist);
        }
        total += worst;
    }
    return total / double(k);
}

namespace {

// Top-2 eigenpairs of a symmetric PSD matrix via orthogonal subspace
// iteration with a final 2x2 Rayleigh-Ritz rotation.
struct Top2 {
    std::vector<double> v1, v2;
    double l1 = 0, l2 = 0;
};

Top2 top2_symmetric(const std::vector<std::vector<double>>& m) {
    const size_t dim = m.size();
    auto matvec = [&](const std::vector<double>& x) {
        std::vector<double> y(dim, 0.0);
        for (size_t i = 0; i < dim; ++i) {
            double acc = 0;
            for (size_t j = 0; j < dim; ++j) acc += m[i][j] * x[j];
            y[i] = acc;
        }
        return y;
    };
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0;
        for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
    };
    auto normalize = [&](std::vector<double>& v) {
        const double nv = std::sqrt(dot(v, v));
        if (nv > 0)
            for (double& x : v) x /= nv;
        return nv;
    };

    // Deterministic start: basis vectors at the two largest diagonal entries.
    size_t i1 = 0, i2 = dim > 1 ? 1 : 0;
    for (size_t i = 0; i < dim; ++i)
        if (m[i][i] > m[i1][i1]) i1 = i;
    for (size_t i = 0; i < dim; ++i)
        if (i != i1 && (i2 == i1 || m[i][i] > m[i2][i2])) i2 = i;
    std::vector<double> u1(dim, 0.0), u2(dim, 0.0);
    u1[i1] = 1.0;
    u2[i2] = 1.0;

    double prev = -1;
    for (int iter = 0; iter < 1000; ++iter) {
        u1 = matvec(u1);
        u2 = matvec(u2);
        if (normalize(u1) == 0.0) {
            u1.assign(dim, 0.0);
            u1[i1] = 1.0;
        }
        const double proj = dot(u1, u2);
        for (size_t i = 0; i < dim; ++i) u2[i] -= proj * u1[i];
        if (normalize(u2) == 0.0) {  // rank-1 data: complete with any orthogonal direction
            u2.assign(dim, 0.0);
            size_t pick = 0;
            for (size_t i = 0; i < dim; ++i)
                if (std::abs(u1[i]) < std::abs(u1[pick])) pick = i;
            u2[pick] = 1.0;
            const double p2 = dot(u1, u2);
            for (size_t i = 0; i < dim; ++i) u2[i] -= p2 * u1[i];
            normalize(u2);
        }
        const double r1 = dot(u1, matvec(u1));
        if (iter > 4 && std::abs(r1 - prev) <= 1e-15 * std::max(1.0, std::abs(r1))) break;
        prev = r1;
    }

    // Rayleigh-Ritz on span{u1, u2}
    const auto mu1 = matvec(u1);
    const auto mu2 = matvec(u2);
    const double t11 = dot(u1, mu1), t12 = dot(u1, mu2), t22 = dot(u2, mu2);
    const double tr = t11 + t22;
    const double det = t11 * t22 - t12 * t12;
    const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
    Top2 out;
    out.l1 = tr / 2.0 + disc;
    out.l2 = tr / 2.0 - disc;
    double c = 1.0, s = 0.0;
    if (std::abs(t12) > 1e-300) {
        const double theta = 0.5 * std::atan2(2.0 * t12, t11 - t22);
        c = std::cos(theta);
        s = std::sin(theta);
        // pick the rotation ordering eigenvalues descending
        const double e1 = c * c * t11 + 2 * c * s * t12 + s * s * t22;
        if (e1 < out.l1 - 1e-12 * std::abs(out.l1)) {
            const double tc = c;
            c = -s;
            s = tc;
        }
    } else if (t22 > t11) {
        c = 0.0;
        s = 1.0;
    }
    out.v1.resize(dim);
    out.v2.resize(dim);
    for (size_t i = 0; i < dim; ++i) {
        out.v1[i] = c * u1[i] + s * u2[i];
        out.v2[i] = -s * u1[i] + c * u2[i];
    }
    return out;
}

void fix_sign(std::vector<double>& v) {
    size_t imax = 0;
    for (size_t i = 0; i < v.size(); ++i)
        if (std::abs(v[i]) > std::abs(v[imax])) imax = i;
    if (v[imax] < 0)
        for (double& x : v) x = -x;
}

}  // namespace

Pca2Result pca2(const Tensor<double>& vectors) {
    if (vectors.rank() != 2) throw std::invalid_argument("pca2: expects an (N, D) matrix");
    const int64_t n = vectors.dim(0), d = vectors.dim(1);
    if (n < 2 || d < 2) throw std::invalid_argument("pca2: needs N >= 2 and D >= 2");

    Tensor<double> centered({n, d});
    for (int64_t j = 0; j < d; ++j) {
        double mu = 0;
        for (int64_t i = 0; i < n; ++i) mu += vectors.at(i, j);
        mu /= double(n);
        for (int64_t i = 0; i < n; ++i) centered.at(i, j) = vectors.at(i, j) - mu;
    }
    double total_var = 0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) total_var += centered.at(i, j) * centered.at(i, j);
    total_var /= double(n - 1);
    if (total_var == 0.0) throw std::invalid_argument("pca2: zero-variance data");

    std::vector<double> v1, v2;
    double l1, l2;
    if (d <= n) {
        std::vector<std::vector<double>> cov(static_cast<size_t>(d), std::vector<double>(static_cast<size_t>(d), 0.0));
        for (int64_t i = 0; i < n; ++i)
            for (int64_t a = 0; a < d; ++a) {
                const double xa = centered.at(i, a);
                if (xa == 0.0) continue;
                for (int64_t b = 0; b < d; ++b) cov[static_cast<size_t>(a)][static_cast<size_t>(b)] += xa * centered.at(i, b);
            }
        for (auto& row : cov)
            for (double& x : row) x /= double(n - 1);
        auto top = top2_symmetric(cov);
        v1 = std::move(top.v1);
        v2 = std::move(top.v2);
        l1 = top.l1;
        l2 = top.l2;
    } else {
        std::vector<std::vector<double>> gram(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(n), 0.0));
        for (int64_t a = 0; a < n; ++a)
            for (int64_t b = a; b < n; ++b) {
                double acc = 0;
                for (int64_t j = 0; j < d; ++j) acc += centered.at(a, j) * centered.at(b, j);
                gram[static_cast<size_t>(a)][static_cast<size_t>(b)] = acc / double(n - 1);
                gram[static_cast<size_t>(b)][static_cast<size_t>(a)] = gram[static_cast<size_t>(a)][static_cast<size_t>(b)];
            }
        auto top = top2_symmetric(gram);
        l1 = top.l1;
        l2 = top.l2;
        auto lift = [&](const std::vector<double>& u) {
            std::vector<double> v(static_cast<size_t>(d), 0.0);
            for (int64_t i = 0; i < n; ++i) {
                const double ui = u[static_cast<size_t>(i)];
                if (ui == 0.0) continue;
                for (int64_t j = 0; j < d; ++j) v[static_cast<size_t>(j)] += ui * centered.at(i, j);
            }
            double nv = 0;
            for (double x : v) nv += x * x;
            nv = std::sqrt(nv);
            if (nv > 0)
                for (double& x : v) x /= nv;
            return v;
        };
        v1 = lift(top.v1);
        v2 = lift(top.v2);
        // re-orthogonalize after the lift (guards the degenerate-eigenvalue case)
        double proj = 0;
        for (size_t i = 0; i < v1.size(); ++i) proj += v1[i] * v2[i];
        double nv = 0;
        for (size_t i = 0; i < v2.size(); ++i) {
            v2[i] -= proj * v1[i];
            nv += v2[i] * v2[i];
        }
        nv = std::sqrt(nv);
        if (nv > 0)
            for (double& x : v2) x /= nv;
    }

    fix_sign(v1);
    fix_sign(v2);

    Pca2Result result;
    result.coords = Tensor<double>({n, 2});
    for (int64_t i = 0; i < n; ++i) {
        double c1 = 0, c2 = 0;
        for (int64_t j = 0; j < d; ++j) {
            c1 += centered.at(i, j) * v1[static_cast<size_t>(j)];
            c2 += centered.at(i, j) * v2[static_cast<size_t>(j)];
        }
        result.coords.at(i, 0) = c1;
        result.coords.at(i, 1) = c2;
    }
    result.captured_variance = {l1, l2};
    result.component1 = std::move(v1);
    result.component2 = std::move(v2);
    return result;
}

std::vector<double> rank_methods(const Tensor<double>& per_dataset_scores) {
    if (per_dataset_scores.rank() != 2) throw std::invalid_argument("rank_methods: expects (methods, datasets)");
    const int64_t m = per_dataset_scores.dim(0), n = per_dataset_scores.dim(1);
    for (int64_t i = 0; i < per_dataset_scores.size(); ++i)
        if (!std::isfinite(per_dataset_scores[i]))
            throw std::invalid_argument("rank_methods: missing or non-finite score entry");
    std::vector<double> mean_rank(static_cast<size_t>(m), 0.0);
    for (int64_t j = 0; j < n; ++j) {
        std::vector<double> neg(static_cast<size_t>(m));
        for (int64_t i = 0; i < m; ++i) neg[static_cast<size_t>(i)] = -per_dataset_scores.at(i, j);
        const auto ranks = midranks(neg);  // descending score = ascending negated score
        for (int64_t i = 0; i < m; ++i) mean_rank[static_cast<size_t>(i)] += ranks[static_cast<size_t>(i)];
    }
    for (double& r : mean_rank) r /= double(n);
    return mean_rank;
}

}  // namespace xit::eval
