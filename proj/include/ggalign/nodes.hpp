#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ggalign/errors.hpp"
#include "ggalign/tensor.hpp"

namespace ggalign {

enum class Domain { source, target };

inline const char* domain_name(Domain d) {
    return d == Domain::source ? "source" : "target";
}

// A batch of semantic nodes: one embedding row per node, with per-node
// category label, hallucination flag and confidence weight.
struct NodeSet {
    Tensor embeddings;  // {M, D_g}
    std::vector<int> labels;
    Domain domain = Domain::source;
    std::vector<char> hallucinated;   // 1 iff generated from a bank prototype
    std::vector<double> weights;      // in [0,1], default 1
    // Filled only for mixed-domain sets (post message passing); empty means
    // every node belongs to `domain`.
    std::vector<Domain> domain_per_node;

    NodeSet() = default;

    NodeSet(Tensor emb, std::vector<int> lab, Domain dom)
        : embeddings(std::move(emb)), labels(std::move(lab)), domain(dom) {
        hallucinated.assign(labels.size(), 0);
        weights.assign(labels.size(), 1.0);
        validate();
    }

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return embeddings.defined() ? embeddings.cols() : 0; }

    void validate() const {
        if (!embeddings.defined()) {
            if (!labels.empty()) throw ShapeError("NodeSet: labels without embeddings");
            return;
        }
        if (embeddings.ndim() != 2 || embeddings.rows() != labels.size())
            throw ShapeError("NodeSet: embedding row count does not match label count");
        if (hallucinated.size() != labels.size() || weights.size() != labels.size())
            throw ShapeError("NodeSet: per-node metadata length mismatch");
    }
};

}  // namespace ggalign
