#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "ggalign/graphopt.hpp"
#include "grad_check.hpp"

using namespace ggalign;
using Catch::Approx;

namespace {

NodeSet make_nodes(std::vector<double> emb, std::vector<int> labels, Domain dom) {
    std::size_t m = labels.size();
    std::size_t d = emb.size() / m;
    return NodeSet(Tensor({m, d}, std::move(emb)), std::move(labels), dom);
}

// independent layer_norm on plain doubles
std::vector<double> plain_layer_norm(const std::vector<double>& x, std::size_t m,
                                     std::size_t d, double eps) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < m; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += x[i * d + j];
        mean /= double(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double c = x[i * d + j] - mean;
            var += c * c;
        }
        var /= double(d);
        for (std::size_t j = 0; j < d; ++j)
            out[i * d + j] = (x[i * d + j] - mean) / std::sqrt(var + eps);
    }
    return out;
}

GraphOptParams null_attention_params(std::size_t d, std::size_t logits,
                                     std::mt19937_64& rng) {
    GraphOptParams p = GraphOptParams::glorot(d, logits, rng);
    p.attn.wv = Tensor::zeros({d, d}, true);
    return p;
}

}  // namespace

TEST_CASE("message_pass with a zero value projection reduces to layer norm") {
    std::mt19937_64 rng(3);
    GraphOptParams p = null_attention_params(3, 3, rng);
    NodeSet s = make_nodes({1, 2, 3}, {0}, Domain::source);
    NodeSet t = make_nodes({6, 5, 4, 0, 1, 5}, {1, 2}, Domain::target);
    NodeSet out = message_pass(s, t, p);

    REQUIRE(out.size() == 3);
    CHECK(out.labels == std::vector<int>{0, 1, 2});
    CHECK(out.domain_per_node[0] == Domain::source);
    CHECK(out.domain_per_node[1] == Domain::target);
    CHECK(out.domain_per_node[2] == Domain::target);

    std::vector<double> joined = {1, 2, 3, 6, 5, 4, 0, 1, 5};
    auto want = plain_layer_norm(joined, 3, 3, p.ln_eps);
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(out.embeddings.values()[i] == Approx(want[i]).margin(1e-12));
}

TEST_CASE("concat_layer_norm equals message_pass with the mixing disabled") {
    std::mt19937_64 rng(11);
    GraphOptParams p = null_attention_params(3, 3, rng);
    NodeSet s = make_nodes({1, 2, 3}, {0}, Domain::source);
    NodeSet t = make_nodes({6, 5, 4, 0, 1, 5}, {1, 2}, Domain::target);

    // With a zero value projection the attention contributes nothing, so the
    // ablation must coincide with message_pass exactly.
    NodeSet mixed = message_pass(s, t, p);
    NodeSet plain = concat_layer_norm(s, t, p);
    REQUIRE(plain.size() == mixed.size());
    CHECK(plain.labels == mixed.labels);
    CHECK(plain.domain_per_node == mixed.domain_per_node);
    for (std::size_t i = 0; i < plain.embeddings.values().size(); ++i)
        CHECK(plain.embeddings.values()[i] ==
              Approx(mixed.embeddings.values()[i]).margin(1e-12));

    // With a non-trivial value projection they must differ: the ablation
    // removes only the cross-node exchange, never the normalization.
    GraphOptParams q = GraphOptParams::glorot(3, 3, rng);
    NodeSet mixed2 = message_pass(s, t, q);
    NodeSet plain2 = concat_layer_norm(s, t, q);
    double diff = 0.0;
    for (std::size_t i = 0; i < plain2.embeddings.values().size(); ++i)
        diff += std::abs(plain2.embeddings.values()[i] -
                         mixed2.embeddings.values()[i]);
    CHECK(diff > 1e-6);
}

TEST_CASE("message_pass is equivariant under node permutation") {
    std::mt19937_64 rng(5);
    GraphOptParams p = GraphOptParams::glorot(4, 4, rng);
    NodeSet s = make_nodes({1, 2, 3, 4, 5, 6, 7, 8}, {0, 1}, Domain::source);
    NodeSet t = make_nodes({0, 2, 0, 2, 9, 9, 1, 1}, {2, 0}, Domain::target);
    NodeSet base = message_pass(s, t, p);

    // swap the two source rows; outputs should swap too
    NodeSet s2 = make_nodes({5, 6, 7, 8, 1, 2, 3, 4}, {1, 0}, Domain::source);
    NodeSet swapped = message_pass(s2, t, p);
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(swapped.embeddings.at(0, j) == Approx(base.embeddings.at(1, j)).margin(1e-12));
        CHECK(swapped.embeddings.at(1, j) == Approx(base.embeddings.at(0, j)).margin(1e-12));
        CHECK(swapped.embeddings.at(2, j) == Approx(base.embeddings.at(2, j)).margin(1e-12));
    }
}

TEST_CASE("message_pass two-node direct oracle") {
    // d = 2, two nodes, diagonal projections: small enough to evaluate by hand
    GraphOptParams p;
    p.attn.wq = Tensor({2, 2}, {2.0, 0.0, 0.0, 1.0}, true);
    p.attn.wk = Tensor({2, 2}, {0.5, 0.0, 0.0, 1.0}, true);
    p.attn.wv = Tensor({2, 2}, {3.0, 0.0, 0.0, -1.0}, true);
    p.ln_gain = Tensor({2}, {2.0, 2.0}, true);
    p.ln_bias = Tensor({2}, {0.25, 0.25}, true);
    p.cls_w = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0}, true);
    p.cls_b = Tensor::zeros({2}, true);
    NodeSet s = make_nodes({1.0, 0.5}, {0}, Domain::source);
    NodeSet t = make_nodes({2.0, -1.0}, {1}, Domain::target);
    NodeSet out = message_pass(s, t, p);

    // plain-double attention + residual
    double x[2][2] = {{1.0, 0.5}, {2.0, -1.0}};
    double q[2][2], k[2][2], v[2][2];
    for (int i = 0; i < 2; ++i) {
        q[i][0] = 2.0 * x[i][0]; q[i][1] = 1.0 * x[i][1];
        k[i][0] = 0.5 * x[i][0]; k[i][1] = 1.0 * x[i][1];
        v[i][0] = 3.0 * x[i][0]; v[i][1] = -1.0 * x[i][1];
    }
    double mixed[2][2];
    for (int i = 0; i < 2; ++i) {
        double s0 = (q[i][0] * k[0][0] + q[i][1] * k[0][1]) / std::sqrt(2.0);
        double s1 = (q[i][0] * k[1][0] + q[i][1] * k[1][1]) / std::sqrt(2.0);
        double mx = std::max(s0, s1);
        double e0 = std::exp(s0 - mx), e1 = std::exp(s1 - mx);
        double z = e0 + e1;
        for (int j = 0; j < 2; ++j)
            mixed[i][j] = (e0 * v[0][j] + e1 * v[1][j]) / z + x[i][j];
    }
    std::vector<double> flat = {mixed[0][0], mixed[0][1], mixed[1][0], mixed[1][1]};
    auto normed = plain_layer_norm(flat, 2, 2, p.ln_eps);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            CHECK(out.embeddings.at(i, j) ==
                  Approx(2.0 * normed[i * 2 + j] + 0.25).margin(1e-9));
}

TEST_CASE("classify applies the affine head") {
    std::mt19937_64 rng(7);
    GraphOptParams p = GraphOptParams::glorot(2, 3, rng);
    p.cls_w = Tensor({2, 3}, {1, 0, 2, 0, 1, 3}, true);
    p.cls_b = Tensor({3}, {0.5, -0.5, 0.0}, true);
    NodeSet n = make_nodes({1, 2, 3, 4}, {0, 1}, Domain::source);
    Tensor logits = classify(n, p);
    CHECK(logits.at(0, 0) == Approx(1.5));
    CHECK(logits.at(0, 1) == Approx(1.5));
    CHECK(logits.at(0, 2) == Approx(8.0));
    CHECK(logits.at(1, 0) == Approx(3.5));
    CHECK(logits.at(1, 1) == Approx(3.5));
    CHECK(logits.at(1, 2) == Approx(18.0));
}

TEST_CASE("label_confidence matches direct softmax lookup") {
    Tensor logits({2, 3}, {0.0, std::log(2.0), std::log(5.0),
                           1.0, 1.0, 1.0});
    auto conf = label_confidence(logits, {2, 0});
    CHECK(conf[0] == Approx(5.0 / 8.0));
    CHECK(conf[1] == Approx(1.0 / 3.0));
}

TEST_CASE("node_loss on uniform logits equals ln(classes)") {
    NodeSet n = make_nodes({0, 0, 0, 0}, {0, 3}, Domain::source);
    Tensor logits = Tensor::zeros({2, 4}, true);
    CHECK(node_loss(n, logits).item() == Approx(std::log(4.0)));
}

TEST_CASE("node_loss vanishes for confident correct logits") {
    NodeSet n = make_nodes({0, 0}, {1, 0}, Domain::source);
    Tensor logits({2, 2}, {-30.0, 30.0, 30.0, -30.0}, true);
    CHECK(node_loss(n, logits).item() < 1e-8);
}

TEST_CASE("node_loss direct formula and weighting") {
    NodeSet n = make_nodes({0, 0}, {0, 1}, Domain::source);
    Tensor logits({2, 2}, {1.0, 0.0, 0.5, 2.0}, true);
    auto ce = [&](std::size_t i) {
        const double* l = logits.values().data() + i * 2;
        double z = std::exp(l[0]) + std::exp(l[1]);
        return std::log(z) - l[n.labels[i]];
    };
    CHECK(node_loss(n, logits).item() == Approx(0.5 * (ce(0) + ce(1))).epsilon(1e-12));

    n.weights = {3.0, 1.0};
    CHECK(node_loss(n, logits).item() ==
          Approx((3.0 * ce(0) + 1.0 * ce(1)) / 4.0).epsilon(1e-12));

    n.weights = {0.0, 0.0};
    CHECK_THROWS_AS(node_loss(n, logits), DegenerateInputError);
}

TEST_CASE("node_loss is invariant to per-row logit shifts") {
    std::mt19937_64 rng(11);
    NodeSet n = make_nodes(std::vector<double>(12, 0.0), {0, 1, 2, 0}, Domain::source);
    Tensor logits = Tensor::randn({4, 3}, rng, 1.0, true);
    double base = node_loss(n, logits).item();
    std::vector<double> shifted = logits.values();
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) shifted[i * 3 + j] += double(i) * 7.5 - 3.0;
    Tensor logits2({4, 3}, shifted, true);
    CHECK(node_loss(n, logits2).item() == Approx(base).margin(1e-10));
}

TEST_CASE("ood_downweight drops exactly floor(p*M) lowest-confidence nodes") {
    std::size_t m = 100;
    std::vector<int> labels(m, 0);
    NodeSet n = make_nodes(std::vector<double>(m, 0.0), labels, Domain::source);
    // logit margin for class 0 decreases with index: node m-1 least confident
    std::vector<double> lv(m * 2);
    for (std::size_t i = 0; i < m; ++i) {
        lv[i * 2 + 0] = double(m - i) * 0.1;
        lv[i * 2 + 1] = 0.0;
    }
    Tensor logits({m, 2}, lv);

    ood_downweight(n, logits, 0.0);
    for (double w : n.weights) CHECK(w == 1.0);

    ood_downweight(n, logits, 0.05);
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < m; ++i) {
        if (n.weights[i] == 0.0) {
            ++dropped;
            CHECK(i >= 95);  // the five least confident are the tail
        }
    }
    CHECK(dropped == 5);
}

TEST_CASE("ood_downweight selection only depends on confidence order") {
    std::mt19937_64 rng(13);
    std::size_t m = 40;
    std::vector<int> labels(m);
    for (std::size_t i = 0; i < m; ++i) labels[i] = int(i % 3);
    NodeSet a = make_nodes(std::vector<double>(m * 2, 0.0), labels, Domain::target);
    NodeSet b = a;
    Tensor logits = Tensor::randn({m, 3}, rng);
    // softmax confidence is invariant to a per-row shift, so the same nodes drop
    std::vector<double> shifted = logits.values();
    for (double& v : shifted) v += 11.0;
    Tensor logits2({m, 3}, shifted);
    ood_downweight(a, logits, 0.2);
    ood_downweight(b, logits2, 0.2);
    CHECK(a.weights == b.weights);
    CHECK_THROWS_AS(ood_downweight(a, logits, 1.0), ConfigError);
}

TEST_CASE("ood_downweight ties break by ascending node index") {
    NodeSet n = make_nodes(std::vector<double>(8, 0.0), {0, 0, 0, 0}, Domain::source);
    Tensor logits = Tensor::zeros({4, 2});  // all confidences equal
    ood_downweight(n, logits, 0.5);
    CHECK(n.weights == std::vector<double>{0.0, 0.0, 1.0, 1.0});
}

TEST_CASE("message_pass + node_loss gradients match finite differences") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        GraphOptParams p = GraphOptParams::glorot(3, 4, rng);
        Tensor es = Tensor::randn({3, 3}, rng, 1.0, true);
        Tensor et = Tensor::randn({2, 3}, rng, 1.0, true);
        NodeSet s(es, {0, 1, 2}, Domain::source);
        NodeSet t(et, {1, 3}, Domain::target);
        auto forward = [&] {
            NodeSet combined = message_pass(s, t, p);
            return node_loss(combined, classify(combined, p));
        };
        std::vector<Tensor> leaves = {es, et, p.attn.wq, p.attn.wk, p.attn.wv,
                                      p.ln_gain, p.ln_bias, p.cls_w, p.cls_b};
        auto res = ggtest::grad_check(forward, leaves);
        CHECK(res.max_rel_err < 2e-4);
    }
}
