#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "ggalign/membank.hpp"
#include "ggalign/refine.hpp"
#include "grad_check.hpp"

using namespace ggalign;
using Catch::Approx;

namespace {

NodeSet make_nodes(std::vector<double> emb, std::vector<int> labels, Domain dom) {
    std::size_t m = labels.size();
    std::size_t d = emb.size() / m;
    return NodeSet(Tensor({m, d}, std::move(emb)), std::move(labels), dom);
}

double cos_plain(const std::vector<double>& u, const std::vector<double>& v) {
    double d = 0, nu = 0, nv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        d += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    return d / (std::sqrt(nu) * std::sqrt(nv));
}

// Independent evaluator: enumerates all 12 ordered denominator pairs.
double cnc_brute_force(const std::vector<double>& ini_s, const std::vector<double>& pos_s,
                       const std::vector<double>& neg_s, const std::vector<double>& ini_t,
                       const std::vector<double>& pos_t, const std::vector<double>& neg_t,
                       double tau) {
    double num = std::exp((cos_plain(ini_s, pos_s) + cos_plain(ini_t, pos_t)) / tau);
    std::vector<std::vector<double>> z = {pos_s, ini_t, neg_s, neg_t};
    double den = 0.0;
    for (int i = 0; i < 4; ++i)
        for (int k = 0; k < 4; ++k)
            if (k != i) den += std::exp(cos_plain(z[i], z[k]) / tau);
    return -std::log(num / den);
}

ImplicitTriple triple_of(Tensor ini, Tensor neg, Tensor pos) {
    ImplicitTriple t;
    t.e_ini = ini;
    t.e_neg = neg;
    t.e_pos = pos;
    return t;
}

}  // namespace

TEST_CASE("enhance_with_hallucinations preserves and concatenates") {
    NodeSet raw = make_nodes({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, {0, 1, 0, 2, 1},
                             Domain::source);
    NodeSet empty;
    NodeSet same = enhance_with_hallucinations(raw, empty);
    CHECK(same.size() == raw.size());
    CHECK(same.embeddings.values() == raw.embeddings.values());

    NodeSet delta = make_nodes({9, 9, 8, 8, 7, 7}, {3, 3, 3}, Domain::source);
    delta.hallucinated.assign(3, 1);
    NodeSet v_star = enhance_with_hallucinations(raw, delta);
    CHECK(v_star.size() == 8);
    std::multiset<int> want(raw.labels.begin(), raw.labels.end());
    want.insert(delta.labels.begin(), delta.labels.end());
    std::multiset<int> got(v_star.labels.begin(), v_star.labels.end());
    CHECK(got == want);

    NodeSet wrong = make_nodes({1, 2, 3}, {0}, Domain::source);
    CHECK_THROWS_AS(enhance_with_hallucinations(raw, wrong), ShapeError);
}

TEST_CASE("reconstruct single node with identity projections doubles the embedding") {
    NodeSet one = make_nodes({1.5, -2.0, 0.5}, {0}, Domain::source);
    AttentionParams attn;
    attn.wq = Tensor::identity(3, true);
    attn.wk = Tensor::identity(3, true);
    attn.wv = Tensor::identity(3, true);
    NodeSet v = reconstruct_nodes(one, attn);
    REQUIRE(v.size() == 1);
    CHECK(v.embeddings.at(0, 0) == Approx(3.0));
    CHECK(v.embeddings.at(0, 1) == Approx(-4.0));
    CHECK(v.embeddings.at(0, 2) == Approx(1.0));
}

TEST_CASE("zero value projection reduces reconstruction to the residual") {
    std::mt19937_64 rng(3);
    NodeSet nodes = make_nodes({1, 2, 3, 4, 5, 6}, {0, 1}, Domain::target);
    AttentionParams attn = AttentionParams::glorot(3, rng);
    attn.wv = Tensor::zeros({3, 3}, true);
    NodeSet v = reconstruct_nodes(nodes, attn);
    CHECK(v.embeddings.values() == nodes.embeddings.values());
}

TEST_CASE("two-node attention matches direct formula evaluation") {
    // hand-set projections
    std::vector<double> x = {1.0, 0.5, -0.5, 2.0};  // 2 x 2
    std::vector<double> wq = {0.3, -0.1, 0.2, 0.4};
    std::vector<double> wk = {0.1, 0.2, -0.3, 0.5};
    std::vector<double> wv = {0.7, 0.0, 0.1, -0.6};
    NodeSet nodes = make_nodes(x, {0, 1}, Domain::source);
    AttentionParams attn;
    attn.wq = Tensor({2, 2}, wq, true);
    attn.wk = Tensor({2, 2}, wk, true);
    attn.wv = Tensor({2, 2}, wv, true);

    auto mm2 = [](const std::vector<double>& a, const std::vector<double>& b) {
        std::vector<double> c(4, 0.0);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                for (int k = 0; k < 2; ++k) c[i * 2 + j] += a[i * 2 + k] * b[k * 2 + j];
        return c;
    };
    auto q = mm2(x, wq), k = mm2(x, wk), v = mm2(x, wv);
    double scale_f = 1.0 / std::sqrt(2.0);
    std::vector<double> expect(4);
    for (int i = 0; i < 2; ++i) {
        double s0 = (q[i * 2] * k[0] + q[i * 2 + 1] * k[1]) * scale_f;
        double s1 = (q[i * 2] * k[2] + q[i * 2 + 1] * k[3]) * scale_f;
        double mx = std::max(s0, s1);
        double w0 = std::exp(s0 - mx), w1 = std::exp(s1 - mx);
        double z = w0 + w1;
        w0 /= z;
        w1 /= z;
        for (int j = 0; j < 2; ++j)
            expect[i * 2 + j] = w0 * v[j] + w1 * v[2 + j] + x[i * 2 + j];
    }

    NodeSet out = reconstruct_nodes(nodes, attn);
    for (int i = 0; i < 4; ++i)
        CHECK(std::abs(out.embeddings.values()[i] - expect[i]) < 1e-10);
}

TEST_CASE("attention weight rows sum to one") {
    std::mt19937_64 rng(9);
    Tensor x = Tensor::randn({6, 4}, rng);
    AttentionParams attn = AttentionParams::glorot(4, rng);
    Tensor w = attention_weights(x, attn);
    for (std::size_t i = 0; i < 6; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 6; ++j) s += w.at(i, j);
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("implicit_project identities and stop-gradient contract") {
    std::mt19937_64 rng(5);
    MLPParams head = MLPParams::glorot(4, 6, 3, rng);
    NodeSet ns = make_nodes({1, 2, 3, 4, 5, 6, 7, 8}, {0, 1}, Domain::target);

    ImplicitTriple t = implicit_project(ns, ns, ns, head);
    CHECK(t.e_ini.values() == t.e_neg.values());
    CHECK(t.e_ini.values() == t.e_pos.values());

    NodeSet single = make_nodes({1, 2, 3, 4}, {0}, Domain::target);
    ImplicitTriple ts = implicit_project(single, single, single, head);
    // mean of one node is that node
    Tensor direct = mlp_forward(head, single.embeddings);
    for (std::size_t j = 0; j < 3; ++j)
        CHECK(ts.e_ini.values()[j] == Approx(direct.at(0, j)).margin(1e-12));

    // source positives are stop-gradded, anchors are not
    NodeSet src = make_nodes({1, 2, 3, 4, 5, 6, 7, 8}, {0, 1}, Domain::source);
    Tensor leaf = src.embeddings;
    ImplicitTriple tsrc = implicit_project(src, src, src, head);
    sum(tsrc.e_pos).backward();
    for (double g : leaf.grad()) CHECK(g == 0.0);
    sum(tsrc.e_ini).backward();
    bool any = false;
    for (double g : leaf.grad()) any = any || g != 0.0;
    CHECK(any);

    NodeSet empty;
    CHECK_THROWS_AS(implicit_project(empty, empty, empty, head), DegenerateInputError);
}

TEST_CASE("cnc_loss closed form for identical unit embeddings") {
    double tau = 0.06;
    Tensor e({3}, {1.0, 0.0, 0.0});
    ImplicitTriple s = triple_of(e, e, e);
    ImplicitTriple t = triple_of(e, e, e);
    double loss = cnc_loss(s, t, tau).item();
    CHECK(loss == Approx(std::log(12.0) - 1.0 / tau).epsilon(0).margin(1e-9));
}

TEST_CASE("cnc_loss matches brute-force pair enumeration") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        auto rv = [&rng] {
            std::normal_distribution<double> nd;
            std::vector<double> v(5);
            for (double& x : v) x = nd(rng);
            return v;
        };
        auto ini_s = rv(), pos_s = rv(), neg_s = rv();
        auto ini_t = rv(), pos_t = rv(), neg_t = rv();
        ImplicitTriple s = triple_of(Tensor({5}, ini_s), Tensor({5}, neg_s), Tensor({5}, pos_s));
        ImplicitTriple t = triple_of(Tensor({5}, ini_t), Tensor({5}, neg_t), Tensor({5}, pos_t));
        double got = cnc_loss(s, t, 0.06).item();
        double want = cnc_brute_force(ini_s, pos_s, neg_s, ini_t, pos_t, neg_t, 0.06);
        CHECK(std::abs(got - want) < 1e-10);
    }
}

TEST_CASE("cnc_loss is invariant to positive rescaling of a single embedding") {
    std::mt19937_64 rng(33);
    Tensor ini_s = Tensor::randn({4}, rng), pos_s = Tensor::randn({4}, rng);
    Tensor neg_s = Tensor::randn({4}, rng), ini_t = Tensor::randn({4}, rng);
    Tensor pos_t = Tensor::randn({4}, rng), neg_t = Tensor::randn({4}, rng);
    double base = cnc_loss(triple_of(ini_s, neg_s, pos_s),
                           triple_of(ini_t, neg_t, pos_t), 0.06).item();
    for (double c : {0.5, 2.0, 10.0}) {
        double scaled = cnc_loss(triple_of(scale(ini_s, c), neg_s, pos_s),
                                 triple_of(ini_t, neg_t, pos_t), 0.06).item();
        CHECK(std::abs(scaled - base) < 1e-9);
        scaled = cnc_loss(triple_of(ini_s, scale(neg_s, c), pos_s),
                          triple_of(ini_t, neg_t, pos_t), 0.06).item();
        CHECK(std::abs(scaled - base) < 1e-9);
    }
}

TEST_CASE("moving the source anchor toward its positive decreases the loss") {
    std::mt19937_64 rng(35);
    for (int trial = 0; trial < 10; ++trial) {
        auto unit = [&rng] {
            Tensor v = Tensor::randn({6}, rng);
            double n = 0;
            for (double x : v.values()) n += x * x;
            n = std::sqrt(n);
            for (double& x : v.values()) x /= n;
            return v;
        };
        Tensor ini0 = unit(), pos_s = unit(), neg_s = unit();
        Tensor ini_t = unit(), pos_t = unit(), neg_t = unit();
        double prev = 1e300;
        for (double t = 0.0; t <= 0.91; t += 0.1) {
            Tensor ini = add(scale(ini0, 1.0 - t), scale(pos_s, t));
            double l = cnc_loss(triple_of(ini, neg_s, pos_s),
                                triple_of(ini_t, neg_t, pos_t), 0.06).item();
            CHECK(l <= prev + 1e-12);
            prev = l;
        }
    }
}

TEST_CASE("cnc_loss gradients match finite differences") {
    std::mt19937_64 rng(39);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor ini_s = Tensor::randn({4}, rng, 1.0, true);
        Tensor pos_s = Tensor::randn({4}, rng, 1.0, true);
        Tensor neg_s = Tensor::randn({4}, rng, 1.0, true);
        Tensor ini_t = Tensor::randn({4}, rng, 1.0, true);
        Tensor pos_t = Tensor::randn({4}, rng, 1.0, true);
        Tensor neg_t = Tensor::randn({4}, rng, 1.0, true);
        auto res = ggtest::grad_check(
            [&] {
                return cnc_loss(triple_of(ini_s, neg_s, pos_s),
                                triple_of(ini_t, neg_t, pos_t), 0.06);
            },
            {ini_s, pos_s, neg_s, ini_t, pos_t, neg_t}, 1e-4, 1e-6);
        CHECK(res.max_rel_err < 1e-4);
    }
}
