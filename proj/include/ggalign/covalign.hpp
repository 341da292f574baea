#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ggalign/errors.hpp"
#include "ggalign/logging.hpp"
#include "ggalign/nodes.hpp"
#include "ggalign/params.hpp"
#include "ggalign/rng.hpp"
#include "ggalign/tensor.hpp"

namespace ggalign {

// Shared-weight attention refinement; the same parameters must be applied to
// both domains by the caller.
inline NodeSet shared_attention(const NodeSet& nodes, const AttentionParams& attn) {
    NodeSet out = nodes;
    out.embeddings = self_attention_residual(nodes.embeddings, attn);
    return out;
}

// Sample covariance over the node axis, (M-1) denominator. Differentiable.
inline Tensor covariance(const Tensor& embeddings) {
    if (embeddings.ndim() != 2) throw ShapeError("covariance: expected a 2-D tensor");
    std::size_t m = embeddings.rows();
    if (m < 2) throw DegenerateInputError("covariance: need at least 2 rows");
    Tensor centered = sub_rowvec(embeddings, mean_rows(embeddings));
    return scale(matmul(transpose(centered), centered), 1.0 / double(m - 1));
}

// Streaming per-element statistics over the concatenated source/target
// covariance pairs. Each accumulated graph contributes two covariance samples
// per element; the per-graph population variance of that pair feeds Xi.
// All plain values — statistics never carry gradient.
struct CovarianceStats {
    std::size_t dim = 0;
    std::size_t graphs = 0;             // N
    std::size_t samples = 0;            // 2N
    std::vector<double> mean;           // running mu per element (Welford)
    std::vector<double> m2;             // running sum of squared deviations
    std::vector<double> sigma_sum;      // sum over graphs of sigma_i^2
    bool finalized = false;
    std::vector<double> xi;             // set by stats_finalize

    CovarianceStats() = default;
    explicit CovarianceStats(std::size_t dim_)
        : dim(dim_), mean(dim_ * dim_, 0.0), m2(dim_ * dim_, 0.0),
          sigma_sum(dim_ * dim_, 0.0) {}
};

inline void stats_accumulate(CovarianceStats& stats, const Tensor& emb_s,
                             const Tensor& emb_t) {
    if (stats.finalized) throw StateError("stats_accumulate: statistics already finalized");
    Tensor cov_s = covariance(emb_s);
    Tensor cov_t = covariance(emb_t);
    if (stats.dim == 0) {
        stats = CovarianceStats(cov_s.rows());
    }
    if (cov_s.rows() != stats.dim || cov_t.rows() != stats.dim)
        throw ShapeError("stats_accumulate: covariance dimension mismatch");

    std::size_t n = stats.dim * stats.dim;
    for (std::size_t e = 0; e < n; ++e) {
        double a = cov_s.values()[e], b = cov_t.values()[e];
        // population variance of the two-sample pair {a, b}
        double half_diff = 0.5 * (a - b);
        stats.sigma_sum[e] += half_diff * half_diff;
        // Welford over the flattened 2N-sample stream
        double count = double(stats.samples);
        for (double x : {a, b}) {
            count += 1.0;
            double delta = x - stats.mean[e];
            stats.mean[e] += delta / count;
            stats.m2[e] += delta * (x - stats.mean[e]);
        }
    }
    stats.graphs += 1;
    stats.samples += 2;
}

// Xi = (1/N) sum_i sigma_i^2
inline std::vector<double> stats_finalize(CovarianceStats& stats) {
    if (stats.graphs == 0) throw StateError("stats_finalize: no graphs accumulated");
    if (stats.finalized) return stats.xi;
    stats.xi.resize(stats.dim * stats.dim);
    for (std::size_t e = 0; e < stats.xi.size(); ++e)
        stats.xi[e] = stats.sigma_sum[e] / double(stats.graphs);
    stats.finalized = true;
    return stats.xi;
}

// ---------------------------------------------------------------------------
// 1-D k-means with k-means++ seeding
// ---------------------------------------------------------------------------

struct KMeansResult {
    std::vector<double> centroids;   // ascending
    std::vector<int> assignments;    // cluster index per point (into centroids)
    double wcss = 0.0;
};

namespace detail {

inline double lloyd_1d(const std::vector<double>& x, std::vector<double>& centers,
                       std::vector<int>& assign, int max_iter) {
    std::size_t n = x.size(), k = centers.size();
    assign.assign(n, 0);
    for (int it = 0; it < max_iter; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                double d = (x[i] - centers[c]) * (x[i] - centers[c]);
                if (d < bd) { bd = d; best = int(c); }
            }
            if (assign[i] != best) { assign[i] = best; changed = true; }
        }
        std::vector<double> sum(k, 0.0);
        std::vector<std::size_t> cnt(k, 0);
        for (std::size_t i = 0; i < n; ++i) { sum[assign[i]] += x[i]; ++cnt[assign[i]]; }
        for (std::size_t c = 0; c < k; ++c)
            if (cnt[c] > 0) centers[c] = sum[c] / double(cnt[c]);
        if (!changed && it > 0) break;
    }
    double wcss = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        wcss += (x[i] - centers[assign[i]]) * (x[i] - centers[assign[i]]);
    return wcss;
}

inline std::vector<double> kmeanspp_init(const std::vector<double>& x, std::size_t k,
                                         std::mt19937_64& rng) {
    std::vector<double> centers;
    std::uniform_int_distribution<std::size_t> di(0, x.size() - 1);
    centers.push_back(x[di(rng)]);
    std::vector<double> d2(x.size());
    while (centers.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double bd = std::numeric_limits<double>::infinity();
            for (double c : centers) bd = std::min(bd, (x[i] - c) * (x[i] - c));
            d2[i] = bd;
            total += bd;
        }
        if (total == 0.0) {
            centers.push_back(x[di(rng)]);
            continue;
        }
        std::uniform_real_distribution<double> du(0.0, total);
        double r = du(rng);
        std::size_t pick = 0;
        for (; pick + 1 < x.size(); ++pick) {
            r -= d2[pick];
            if (r <= 0.0) break;
        }
        centers.push_back(x[pick]);
    }
    return centers;
}

}  // namespace detail

// Scalar k-means, k-means++ seeded, multiple restarts, best WCSS kept.
// Deterministic in `seed`. Clusters are reported in ascending centroid order.
inline KMeansResult kmeans_1d(const std::vector<double>& x, std::size_t k,
                              std::uint64_t seed, int restarts = 32,
                              int max_iter = 100) {
    if (x.empty() || k == 0 || k > x.size())
        throw DegenerateInputError("kmeans_1d: bad k or empty input");
    auto rng = make_rng(mix_seed(seed, 0x13EA25u));
    KMeansResult best;
    best.wcss = std::numeric_limits<double>::infinity();
    for (int r = 0; r < restarts; ++r) {
        std::vector<double> centers = detail::kmeanspp_init(x, k, rng);
        std::vector<int> assign;
        double wcss = detail::lloyd_1d(x, centers, assign, max_iter);
        if (wcss < best.wcss) {
            best.wcss = wcss;
            best.centroids = centers;
            best.assignments = assign;
        }
    }
    // reorder clusters ascending by centroid
    std::vector<std::size_t> order(best.centroids.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return best.centroids[a] < best.centroids[b];
    });
    std::vector<int> rank(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = int(i);
    std::vector<double> sorted_centers(order.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        sorted_centers[i] = best.centroids[order[i]];
    best.centroids = std::move(sorted_centers);
    for (int& a : best.assignments) a = rank[a];
    return best;
}

// Strictly upper-triangular binary mask selecting domain-specific covariance
// elements: the members of the high-variance clusters G_high = {c_{m+1}..c_k}.
struct StyleMask {
    std::size_t dim = 0;
    std::vector<double> mask;         // {dim, dim}, entries in {0,1}, i<j only
    std::vector<double> centroids;    // ascending
    std::vector<int> assignments;     // per upper-tri element, row-major order
    std::size_t k = 0;
    std::size_t m = 0;

    double density() const {
        if (dim == 0) return 0.0;
        double ones = 0.0;
        for (double v : mask) ones += v;
        std::size_t upper = dim * (dim - 1) / 2;
        return upper == 0 ? 0.0 : ones / double(upper);
    }
};

inline StyleMask build_mask(const std::vector<double>& xi, std::size_t dim,
                            std::size_t k, std::size_t m, std::uint64_t seed) {
    if (xi.size() != dim * dim) throw ShapeError("build_mask: Xi size mismatch");
    if (k < 1 || m >= k) throw ConfigError("build_mask: require 1 <= m < k");

    std::vector<double> upper;
    std::vector<std::pair<std::size_t, std::size_t>> pos;
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = i + 1; j < dim; ++j) {
            upper.push_back(xi[i * dim + j]);
            pos.emplace_back(i, j);
        }
    if (upper.empty()) throw DegenerateInputError("build_mask: matrix has no strict upper triangle");

    std::set<double> distinct(upper.begin(), upper.end());
    std::size_t keff = k;
    if (distinct.size() < k) {
        keff = distinct.size();
        log_warning("build_mask: only " + std::to_string(keff) +
                    " distinct values; clamping k from " + std::to_string(k));
        if (m >= keff) {
            log_warning("build_mask: clamping m to k-1");
        }
    }
    std::size_t meff = std::min(m, keff - 1);

    KMeansResult km = kmeans_1d(upper, keff, seed);

    StyleMask out;
    out.dim = dim;
    out.mask.assign(dim * dim, 0.0);
    out.centroids = km.centroids;
    out.assignments = km.assignments;
    out.k = keff;
    out.m = meff;
    for (std::size_t e = 0; e < upper.size(); ++e)
        if (std::size_t(km.assignments[e]) >= meff)
            out.mask[pos[e].first * dim + pos[e].second] = 1.0;
    return out;
}

// L_NA: mean over the two domains of || covariance(emb) ⊙ A~ ||_1.
inline Tensor na_loss(const Tensor& emb_s, const Tensor& emb_t, const StyleMask& mask) {
    if (mask.dim == 0) throw StateError("na_loss: mask not built");
    if (emb_s.cols() != mask.dim || emb_t.cols() != mask.dim)
        throw ShapeError("na_loss: embedding width does not match mask");
    Tensor l_s = sum(abs_elem(mul_mask(covariance(emb_s), mask.mask)));
    Tensor l_t = sum(abs_elem(mul_mask(covariance(emb_t), mask.mask)));
    return scale(add(l_s, l_t), 0.5);
}

}  // namespace ggalign
