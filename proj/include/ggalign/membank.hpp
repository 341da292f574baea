#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <vector>

#include "ggalign/errors.hpp"
#include "ggalign/nodes.hpp"
#include "ggalign/rng.hpp"
#include "ggalign/tensor.hpp"

namespace ggalign {

// Per-category prototype store with exponential moving average updates.
// Prototypes live outside the tape: updates and hallucinations never carry
// gradient.
struct MemoryBank {
    std::size_t categories = 0;  // C+1 rows (background included)
    std::size_t dim = 0;
    std::vector<double> prototypes;  // {categories, dim}, row-major
    std::vector<char> seen;
    double momentum = 0.9;  // eta

    MemoryBank() = default;

    MemoryBank(std::size_t categories_, std::size_t dim_, double eta = 0.9)
        : categories(categories_), dim(dim_),
          prototypes(categories_ * dim_, 0.0), seen(categories_, 0), momentum(eta) {
        if (eta <= 0.0 || eta >= 1.0) throw ConfigError("bank momentum must lie in (0,1)");
    }

    const double* prototype(std::size_t c) const { return prototypes.data() + c * dim; }
    double* prototype(std::size_t c) { return prototypes.data() + c * dim; }
};

// EMA update from the batch means of each category present in `nodes`.
// Hallucinated nodes are skipped so the bank never feeds on its own output.
inline void bank_update(MemoryBank& bank, const NodeSet& nodes) {
    if (nodes.size() == 0) return;
    if (nodes.dim() != bank.dim) throw ShapeError("bank_update: embedding width mismatch");
    std::vector<std::vector<double>> sums(bank.categories,
                                          std::vector<double>(bank.dim, 0.0));
    std::vector<std::size_t> counts(bank.categories, 0);
    const auto& emb = nodes.embeddings.values();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes.hallucinated[i]) continue;
        int c = nodes.labels[i];
        if (c < 0 || std::size_t(c) >= bank.categories)
            throw ShapeError("bank_update: label out of range");
        for (std::size_t j = 0; j < bank.dim; ++j)
            sums[c][j] += emb[i * bank.dim + j];
        ++counts[c];
    }
    for (std::size_t c = 0; c < bank.categories; ++c) {
        if (counts[c] == 0) continue;
        double inv = 1.0 / double(counts[c]);
        double* p = bank.prototype(c);
        if (bank.seen[c]) {
            for (std::size_t j = 0; j < bank.dim; ++j)
                p[j] = bank.momentum * p[j] + (1.0 - bank.momentum) * sums[c][j] * inv;
        } else {
            for (std::size_t j = 0; j < bank.dim; ++j) p[j] = sums[c][j] * inv;
            bank.seen[c] = 1;
        }
    }
}

// Categories the bank has seen that do not occur in the batch.
inline std::set<int> missing_categories(const MemoryBank& bank, const NodeSet& nodes) {
    std::set<int> present(nodes.labels.begin(), nodes.labels.end());
    std::set<int> missing;
    for (std::size_t c = 0; c < bank.categories; ++c)
        if (bank.seen[c] && !present.count(int(c))) missing.insert(int(c));
    return missing;
}

inline double prototype_rms(const MemoryBank& bank, std::size_t c) {
    double s = 0.0;
    const double* p = bank.prototype(c);
    for (std::size_t j = 0; j < bank.dim; ++j) s += p[j] * p[j];
    return std::sqrt(s / double(bank.dim));
}

// Hallucination nodes for the given missing categories: per_cat samples of
// prototype[c] + N(0, sigma^2 I), labeled c and flagged hallucinated.
// noise_sigma < 0 selects the per-category default 0.01 * RMS(prototype).
inline NodeSet hallucinate(const MemoryBank& bank, const std::set<int>& missing,
                           std::size_t per_cat, double noise_sigma, Domain domain,
                           std::uint64_t seed) {
    for (int c : missing)
        if (c < 0 || std::size_t(c) >= bank.categories || !bank.seen[c])
            throw StateError("hallucinate: category " + std::to_string(c) + " never seen");
    NodeSet out;
    out.domain = domain;
    if (missing.empty()) return out;

    auto rng = make_rng(mix_seed(seed, 0xDE17Au));
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> emb;
    for (int c : missing) {
        double sigma = noise_sigma >= 0.0 ? noise_sigma
                                          : 0.01 * prototype_rms(bank, std::size_t(c));
        const double* p = bank.prototype(std::size_t(c));
        for (std::size_t i = 0; i < per_cat; ++i) {
            for (std::size_t j = 0; j < bank.dim; ++j)
                emb.push_back(p[j] + sigma * nd(rng));
            out.labels.push_back(c);
        }
    }
    out.embeddings = Tensor({out.labels.size(), bank.dim}, std::move(emb));
    out.hallucinated.assign(out.labels.size(), 1);
    out.weights.assign(out.labels.size(), 1.0);
    return out;
}

}  // namespace ggalign
