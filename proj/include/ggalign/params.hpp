#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "ggalign/tensor.hpp"

namespace ggalign {

// Two-layer perceptron: affine -> ReLU -> affine.
struct MLPParams {
    Tensor w1;  // {in, hidden}
    Tensor b1;  // {hidden}
    Tensor w2;  // {hidden, out}
    Tensor b2;  // {out}

    static MLPParams glorot(std::size_t in, std::size_t hidden, std::size_t out,
                            std::mt19937_64& rng) {
        MLPParams p;
        p.w1 = Tensor::randn({in, hidden}, rng, std::sqrt(2.0 / double(in + hidden)), true);
        p.b1 = Tensor::zeros({hidden}, true);
        p.w2 = Tensor::randn({hidden, out}, rng, std::sqrt(2.0 / double(hidden + out)), true);
        p.b2 = Tensor::zeros({out}, true);
        return p;
    }

    std::size_t in_dim() const { return w1.rows(); }
    std::size_t out_dim() const { return w2.cols(); }

    std::vector<Tensor> parameters() const { return {w1, b1, w2, b2}; }
};

inline Tensor mlp_forward(const MLPParams& p, const Tensor& x) {
    if (x.ndim() != 2 || x.cols() != p.w1.rows())
        throw ShapeError("mlp_forward: input width does not match first layer");
    Tensor h = relu(add_rowvec(matmul(x, p.w1), p.b1));
    return add_rowvec(matmul(h, p.w2), p.b2);
}

// Single-head scaled dot-product self-attention projections, all D -> D.
struct AttentionParams {
    Tensor wq;
    Tensor wk;
    Tensor wv;

    static AttentionParams glorot(std::size_t dim, std::mt19937_64& rng) {
        AttentionParams p;
        double s = std::sqrt(1.0 / double(dim));
        p.wq = Tensor::randn({dim, dim}, rng, s, true);
        p.wk = Tensor::randn({dim, dim}, rng, s, true);
        p.wv = Tensor::randn({dim, dim}, rng, s, true);
        return p;
    }

    std::size_t dim() const { return wq.rows(); }

    std::vector<Tensor> parameters() const { return {wq, wk, wv}; }
};

// Attention weights over all rows of x (softmax over keys, scale 1/sqrt(D)).
inline Tensor attention_weights(const Tensor& x, const AttentionParams& p) {
    if (x.ndim() != 2 || x.cols() != p.wq.rows())
        throw ShapeError("attention: embedding width does not match projections");
    Tensor q = matmul(x, p.wq);
    Tensor k = matmul(x, p.wk);
    Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(double(x.cols())));
    return softmax(scores);
}

// softmax(QK^T / sqrt(D)) V + x
inline Tensor self_attention_residual(const Tensor& x, const AttentionParams& p) {
    Tensor a = attention_weights(x, p);
    Tensor v = matmul(x, p.wv);
    return add(matmul(a, v), x);
}

}  // namespace ggalign
