#pragma once

#include <vector>

#include "ggalign/errors.hpp"
#include "ggalign/nodes.hpp"
#include "ggalign/params.hpp"
#include "ggalign/tensor.hpp"

namespace ggalign {

// Pooled implicit embeddings of one domain: anchor / negative / positive.
struct ImplicitTriple {
    Tensor e_ini;  // from V^raw
    Tensor e_neg;  // from reconstructed V
    Tensor e_pos;  // from enhanced V*
};

// V* = [raw ; hallucinated]; labels and flags carried through.
inline NodeSet enhance_with_hallucinations(const NodeSet& raw, const NodeSet& delta_miss) {
    if (delta_miss.size() == 0) return raw;
    if (raw.dim() != delta_miss.dim())
        throw ShapeError("enhance_with_hallucinations: embedding widths differ");
    NodeSet out;
    out.domain = raw.domain;
    out.embeddings = concat_rows(raw.embeddings, delta_miss.embeddings);
    out.labels = raw.labels;
    out.labels.insert(out.labels.end(), delta_miss.labels.begin(), delta_miss.labels.end());
    out.hallucinated = raw.hallucinated;
    out.hallucinated.insert(out.hallucinated.end(), delta_miss.hallucinated.begin(),
                            delta_miss.hallucinated.end());
    out.weights = raw.weights;
    out.weights.insert(out.weights.end(), delta_miss.weights.begin(),
                       delta_miss.weights.end());
    return out;
}

// Self-attention over all of V* (raw + hallucinated), residual added, then
// restricted to the raw rows: the reconstructed node features V.
inline NodeSet reconstruct_nodes(const NodeSet& v_star, const AttentionParams& attn) {
    Tensor mixed = self_attention_residual(v_star.embeddings, attn);
    // enhance_with_hallucinations puts raw nodes first
    std::size_t n_raw = 0;
    while (n_raw < v_star.size() && !v_star.hallucinated[n_raw]) ++n_raw;
    for (std::size_t i = n_raw; i < v_star.size(); ++i)
        if (!v_star.hallucinated[i])
            throw ShapeError("reconstruct_nodes: raw nodes must precede hallucinated ones");
    NodeSet out;
    out.domain = v_star.domain;
    out.embeddings = slice_rows(mixed, 0, n_raw);
    out.labels.assign(v_star.labels.begin(), v_star.labels.begin() + long(n_raw));
    out.hallucinated.assign(n_raw, 0);
    out.weights.assign(v_star.weights.begin(), v_star.weights.begin() + long(n_raw));
    return out;
}

namespace detail {

// Reshape a length-D vector into a 1 x D matrix on the tape.
inline Tensor as_row_matrix(const Tensor& v) {
    std::size_t d = v.numel();
    return make_node({1, d}, v.values(), {v},
        [d](TensorImpl* self) {
            auto& g = self->parents[0]->grad;
            for (std::size_t j = 0; j < d; ++j) g[j] += self->grad[j];
        }, "as_row_matrix");
}

}  // namespace detail

// Mean-pool each node set, push the pooled vector through the shared
// projection head. e_pos of the source domain is wrapped in a stop-gradient.
inline ImplicitTriple implicit_project(const NodeSet& v_raw, const NodeSet& v,
                                       const NodeSet& v_star, const MLPParams& proj) {
    auto head = [&proj](const NodeSet& ns) {
        if (ns.size() == 0) throw DegenerateInputError("implicit_project: empty node set");
        Tensor pooled = detail::as_row_matrix(mean_rows(ns.embeddings));  // {1, D_g}
        return row(mlp_forward(proj, pooled), 0);                         // {D_e}
    };
    ImplicitTriple t;
    t.e_ini = head(v_raw);
    t.e_neg = head(v);
    t.e_pos = head(v_star);
    if (v_star.domain == Domain::source) t.e_pos = stop_grad(t.e_pos);
    return t;
}

// Contrastive distribution loss. Numerator pairs the anchors with their
// positives in both domains; the denominator runs over all ordered pairs of
// the four embeddings {e_pos_s, e_ini_t, e_neg_s, e_neg_t}.
inline Tensor cnc_loss(const ImplicitTriple& s, const ImplicitTriple& t,
                       double temperature) {
    if (temperature <= 0.0) throw ConfigError("cnc temperature must be positive");
    double inv_tau = 1.0 / temperature;

    Tensor aligned = scale(add(cosine_similarity(s.e_ini, s.e_pos),
                               cosine_similarity(t.e_ini, t.e_pos)), inv_tau);

    std::vector<Tensor> z = {s.e_pos, t.e_ini, s.e_neg, t.e_neg};
    Tensor denom;
    for (std::size_t i = 0; i < z.size(); ++i)
        for (std::size_t k = 0; k < z.size(); ++k) {
            if (k == i) continue;
            Tensor term = exp_elem(scale(cosine_similarity(z[i], z[k]), inv_tau));
            denom = denom.defined() ? add(denom, term) : term;
        }
    return sub(log_elem(denom), aligned);  // -log(exp(aligned)/denom)
}

}  // namespace ggalign
