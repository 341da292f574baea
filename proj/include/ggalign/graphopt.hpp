#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "ggalign/errors.hpp"
#include "ggalign/nodes.hpp"
#include "ggalign/params.hpp"
#include "ggalign/tensor.hpp"

namespace ggalign {

// Attention message passing + layer norm + node classifier head.
struct GraphOptParams {
    AttentionParams attn;
    Tensor ln_gain;  // {D_g}
    Tensor ln_bias;  // {D_g}
    Tensor cls_w;    // {D_g, C+1}
    Tensor cls_b;    // {C+1}
    double ln_eps = 1e-5;

    static GraphOptParams glorot(std::size_t dim, std::size_t num_logits,
                                 std::mt19937_64& rng) {
        GraphOptParams p;
        p.attn = AttentionParams::glorot(dim, rng);
        p.ln_gain = Tensor::full({dim}, 1.0, true);
        p.ln_bias = Tensor::zeros({dim}, true);
        p.cls_w = Tensor::randn({dim, num_logits}, rng,
                                std::sqrt(2.0 / double(dim + num_logits)), true);
        p.cls_b = Tensor::zeros({num_logits}, true);
        return p;
    }

    std::vector<Tensor> parameters() const {
        auto v = attn.parameters();
        v.insert(v.end(), {ln_gain, ln_bias, cls_w, cls_b});
        return v;
    }
};

namespace detail {

inline NodeSet concat_metadata(const NodeSet& e_s, const NodeSet& e_t, Tensor emb) {
    NodeSet out;
    out.embeddings = std::move(emb);
    out.labels = e_s.labels;
    out.labels.insert(out.labels.end(), e_t.labels.begin(), e_t.labels.end());
    out.hallucinated = e_s.hallucinated;
    out.hallucinated.insert(out.hallucinated.end(), e_t.hallucinated.begin(),
                            e_t.hallucinated.end());
    out.weights = e_s.weights;
    out.weights.insert(out.weights.end(), e_t.weights.begin(), e_t.weights.end());
    out.domain = e_s.domain;
    out.domain_per_node.reserve(e_s.size() + e_t.size());
    out.domain_per_node.insert(out.domain_per_node.end(), e_s.size(), e_s.domain);
    out.domain_per_node.insert(out.domain_per_node.end(), e_t.size(), e_t.domain);
    return out;
}

}  // namespace detail

// Plain concatenation of two node sets without information exchange.
inline NodeSet concat_node_sets(const NodeSet& e_s, const NodeSet& e_t) {
    if (e_s.dim() != e_t.dim())
        throw ShapeError("concat_node_sets: embedding widths differ");
    return detail::concat_metadata(e_s, e_t,
                                   concat_rows(e_s.embeddings, e_t.embeddings));
}

// Concatenation followed by the same layer norm as message_pass but without
// the attention mixing; the controlled "no message passing" ablation, so the
// comparison isolates the cross-node information exchange itself.
inline NodeSet concat_layer_norm(const NodeSet& e_s, const NodeSet& e_t,
                                 const GraphOptParams& params) {
    if (e_s.dim() != e_t.dim())
        throw ShapeError("concat_layer_norm: embedding widths differ");
    Tensor joined = concat_rows(e_s.embeddings, e_t.embeddings);
    Tensor normed = layer_norm(joined, params.ln_gain, params.ln_bias, params.ln_eps);
    return detail::concat_metadata(e_s, e_t, normed);
}

// E = layer_norm(self_attention([E_s ; E_t]) + [E_s ; E_t]); labels, domains
// and weights are carried through in concatenation order.
inline NodeSet message_pass(const NodeSet& e_s, const NodeSet& e_t,
                            const GraphOptParams& params) {
    if (e_s.dim() != e_t.dim())
        throw ShapeError("message_pass: embedding widths differ");
    Tensor joined = concat_rows(e_s.embeddings, e_t.embeddings);
    Tensor mixed = self_attention_residual(joined, params.attn);
    Tensor normed = layer_norm(mixed, params.ln_gain, params.ln_bias, params.ln_eps);
    return detail::concat_metadata(e_s, e_t, normed);
}

inline Tensor classify(const NodeSet& nodes, const GraphOptParams& params) {
    return add_rowvec(matmul(nodes.embeddings, params.cls_w), params.cls_b);
}

// Per-node confidence = softmax probability of the node's own label.
// Computed on plain values; the selection carries no gradient.
inline std::vector<double> label_confidence(const Tensor& logits,
                                            const std::vector<int>& labels) {
    std::size_t m = logits.rows(), k = logits.cols();
    if (labels.size() != m) throw ShapeError("label_confidence: label count mismatch");
    std::vector<double> conf(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* l = logits.values().data() + i * k;
        double mx = *std::max_element(l, l + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(l[j] - mx);
        conf[i] = std::exp(l[labels[i]] - mx) / z;
    }
    return conf;
}

// The floor(p*M) lowest-confidence nodes get weight 0, the rest 1.
// Ties break by node index ascending.
inline void ood_downweight(NodeSet& nodes, const Tensor& logits, double p) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("ood degree p must lie in [0,1)");
    std::size_t m = nodes.size();
    nodes.weights.assign(m, 1.0);
    std::size_t drop = std::size_t(p * double(m));
    if (drop == 0) return;
    std::vector<double> conf = label_confidence(logits, nodes.labels);
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return conf[a] < conf[b];
    });
    for (std::size_t i = 0; i < drop; ++i) nodes.weights[order[i]] = 0.0;
}

// Weighted node classification cross entropy, normalized by the weight sum.
inline Tensor node_loss(const NodeSet& nodes, const Tensor& logits) {
    return weighted_cross_entropy(logits, nodes.labels, nodes.weights);
}

}  // namespace ggalign
