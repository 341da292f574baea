#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ggalign/config.hpp"
#include "ggalign/covalign.hpp"
#include "ggalign/errors.hpp"
#include "ggalign/graphopt.hpp"
#include "ggalign/logging.hpp"
#include "ggalign/membank.hpp"
#include "ggalign/nodes.hpp"
#include "ggalign/refine.hpp"
#include "ggalign/rng.hpp"
#include "ggalign/synth.hpp"
#include "ggalign/tensor.hpp"

namespace ggalign {

struct LossBreakdown {
    double l_cnc = 0.0;
    double l_na = 0.0;
    double l_node = 0.0;
    double l_ga = 0.0;
    double l_det = 0.0;
    double total = 0.0;
};

struct MetricsRecord {
    std::size_t epoch = 0;
    double acc_source = 0.0;
    double acc_target = 0.0;
    LossBreakdown losses;
    double mask_density = 0.0;
    double wall_seconds = 0.0;
};

// Out-of-scope detector terms enter the composite objective through these
// hooks; both default to constant zero.
struct LossHooks {
    std::function<double(const NodeSet&, Domain)> l_ga;
    std::function<double(const NodeSet&, Domain)> l_det;
};

struct Model {
    TrainConfig cfg;
    MLPParams proj;            // feat_dim -> graph_dim
    AttentionParams refine_attn;
    MLPParams implicit_head;   // graph_dim -> implicit_dim
    AttentionParams cov_attn;  // shared across domains
    GraphOptParams graph;
    MemoryBank bank_s;
    MemoryBank bank_t;
    CovarianceStats stats;
    StyleMask mask;            // dim == 0 until built at epoch n
    std::size_t epochs_done = 0;

    static Model init(const TrainConfig& cfg) {
        cfg.validate();
        Model m;
        m.cfg = cfg;
        auto rng = make_rng(mix_seed(cfg.seed, 0x1417u));
        std::size_t d = cfg.synth.feat_dim, dg = cfg.synth.graph_dim;
        std::size_t de = cfg.implicit_dim, c1 = cfg.synth.classes + 1;
        m.proj = MLPParams::glorot(d, dg, dg, rng);
        m.refine_attn = AttentionParams::glorot(dg, rng);
        m.implicit_head = MLPParams::glorot(dg, dg, de, rng);
        m.cov_attn = AttentionParams::glorot(dg, rng);
        m.graph = GraphOptParams::glorot(dg, c1, rng);
        m.bank_s = MemoryBank(c1, dg, cfg.eta);
        m.bank_t = MemoryBank(c1, dg, cfg.eta);
        m.stats = CovarianceStats(dg);
        return m;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> v = proj.parameters();
        auto app = [&v](const std::vector<Tensor>& w) { v.insert(v.end(), w.begin(), w.end()); };
        app(refine_attn.parameters());
        app(implicit_head.parameters());
        app(cov_attn.parameters());
        app(graph.parameters());
        return v;
    }
};

// ---------------------------------------------------------------------------
// Composite objective (weighted sum of the five loss terms)
// ---------------------------------------------------------------------------

struct CompositeLoss {
    Tensor total;  // scalar tape node
    LossBreakdown values;
};

inline CompositeLoss composite_loss(const Tensor& l_cnc, const Tensor& l_na,
                                    const Tensor& l_node, double l_ga, double l_det,
                                    const TrainConfig& cfg) {
    auto check = [](double v, const char* name) {
        if (!std::isfinite(v))
            throw NumericError(std::string("composite_loss: ") + name + " is non-finite");
    };
    CompositeLoss out;
    out.values.l_cnc = l_cnc.item();
    out.values.l_na = l_na.item();
    out.values.l_node = l_node.item();
    out.values.l_ga = l_ga;
    out.values.l_det = l_det;
    check(out.values.l_cnc, "l_cnc");
    check(out.values.l_na, "l_na");
    check(out.values.l_node, "l_node");
    check(l_ga, "l_ga");
    check(l_det, "l_det");
    Tensor t = add(add(scale(l_cnc, cfg.lambda1), scale(l_na, cfg.lambda2)), l_node);
    out.total = add_const(t, l_ga + l_det);
    out.values.total = out.total.item();
    return out;
}

// ---------------------------------------------------------------------------
// SGD with classical momentum and L2 weight decay:
//   v <- mu*v + g + wd*theta;  theta <- theta - lr*v
// ---------------------------------------------------------------------------

struct SGDState {
    std::vector<std::vector<double>> velocity;
};

// Scales all gradients so their global L2 norm is at most `max_norm`.
inline void clip_gradients(std::vector<Tensor>& params, double max_norm) {
    if (max_norm <= 0.0) return;
    double sq = 0.0;
    for (const auto& p : params)
        for (double g : p.grad()) sq += g * g;
    double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    double s = max_norm / norm;
    for (auto& p : params)
        for (double& g : p.grad()) g *= s;
}

inline void sgd_step(std::vector<Tensor>& params, SGDState& state,
                     const TrainConfig& cfg) {
    if (state.velocity.empty()) {
        state.velocity.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i)
            state.velocity[i].assign(params[i].numel(), 0.0);
    }
    if (state.velocity.size() != params.size())
        throw ShapeError("sgd_step: optimizer state does not match parameter list");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& theta = params[i].values();
        const auto& g = params[i].grad();
        auto& v = state.velocity[i];
        if (g.size() != theta.size() || v.size() != theta.size())
            throw ShapeError("sgd_step: gradient shape mismatch");
        for (std::size_t j = 0; j < theta.size(); ++j) {
            v[j] = cfg.momentum * v[j] + g[j] + cfg.weight_decay * theta[j];
            theta[j] -= cfg.lr * v[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Forward pipeline shared by training and evaluation
// ---------------------------------------------------------------------------

struct ForwardResult {
    NodeSet nodes_s, nodes_t;        // projected raw nodes (V^raw)
    NodeSet v_s, v_t;                // reconstructed nodes (V)
    NodeSet et_s, et_t;              // shared-attention refined nodes (E~)
    NodeSet combined;                // after message passing (E)
    Tensor logits;
    ImplicitTriple trip_s, trip_t;
    std::vector<int> true_s, true_t; // generator ground truth per node
};

namespace detail {

inline std::vector<int> lookup_true_labels(const RawNodeSet& raw, const FeatureMap& fm) {
    std::vector<int> out;
    out.reserve(raw.size());
    for (const auto& [r, c] : raw.pixel_origins)
        out.push_back(fm.true_labels[r * fm.width + c]);
    return out;
}

}  // namespace detail

// One full forward pass over a freshly generated batch. When `update_banks`
// is true the memory banks take an EMA step before hallucination.
inline ForwardResult forward_batch(Model& model, std::uint64_t batch_seed,
                                   bool update_banks) {
    const TrainConfig& cfg = model.cfg;
    DomainPair pair = generate_domain_pair(cfg.synth, batch_seed);

    std::size_t fg = cfg.synth.per_box * cfg.synth.num_boxes;
    std::size_t bg = cfg.synth.background == 0 ? fg : cfg.synth.background;
    RawNodeSet raw_s = sample_source_nodes(pair.source, pair.boxes, cfg.synth.per_box,
                                           bg, cfg.synth.classes,
                                           mix_seed(batch_seed, 1));
    RawNodeSet raw_t = sample_target_nodes(pair.target, pair.scores, cfg.synth.tau,
                                           0, mix_seed(batch_seed, 2));

    ForwardResult fr;
    fr.true_s = detail::lookup_true_labels(raw_s, pair.source);
    fr.true_t = detail::lookup_true_labels(raw_t, pair.target);
    fr.nodes_s = project_nodes(raw_s, model.proj);
    fr.nodes_t = project_nodes(raw_t, model.proj);

    if (update_banks) {
        bank_update(model.bank_s, fr.nodes_s);
        bank_update(model.bank_t, fr.nodes_t);
    }

    auto refine_domain = [&](const NodeSet& nodes, MemoryBank& bank,
                             NodeSet& v_out, ImplicitTriple& trip,
                             std::uint64_t tag) {
        NodeSet delta = hallucinate(bank, missing_categories(bank, nodes),
                                    cfg.per_cat, cfg.sigma_h, nodes.domain,
                                    mix_seed(batch_seed, tag));
        NodeSet v_star = enhance_with_hallucinations(nodes, delta);
        v_out = reconstruct_nodes(v_star, model.refine_attn);
        trip = implicit_project(nodes, v_out, v_star, model.implicit_head);
    };
    refine_domain(fr.nodes_s, model.bank_s, fr.v_s, fr.trip_s, 3);
    refine_domain(fr.nodes_t, model.bank_t, fr.v_t, fr.trip_t, 4);

    fr.et_s = shared_attention(fr.v_s, model.cov_attn);
    fr.et_t = shared_attention(fr.v_t, model.cov_attn);

    fr.combined = cfg.ablate_message_pass
                      ? concat_layer_norm(fr.et_s, fr.et_t, model.graph)
                      : message_pass(fr.et_s, fr.et_t, model.graph);
    fr.logits = classify(fr.combined, model.graph);
    return fr;
}

inline double node_accuracy(const Tensor& logits, const std::vector<int>& truth,
                            std::size_t offset) {
    std::size_t k = logits.cols();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double* l = logits.values().data() + (offset + i) * k;
        std::size_t arg = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (l[j] > l[arg]) arg = j;
        if (int(arg) == truth[i]) ++correct;
    }
    return truth.empty() ? 0.0 : double(correct) / double(truth.size());
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainResult {
    Model model;
    std::vector<MetricsRecord> metrics;
    std::size_t mask_builds = 0;
};

// Optional per-step audit sink for OOD down-weighting:
// (epoch, step, node index, domain, label, confidence, weight)
using OodAuditSink = std::function<void(std::size_t, std::size_t, std::size_t, Domain,
                                        int, double, double)>;

inline TrainResult train(const TrainConfig& cfg, const LossHooks& hooks = {},
                         const OodAuditSink& ood_audit = nullptr) {
    cfg.validate();
    TrainResult result;
    result.model = Model::init(cfg);
    Model& model = result.model;
    std::vector<Tensor> params = model.parameters();
    SGDState opt;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        LossBreakdown sums;
        double acc_s = 0.0, acc_t = 0.0;

        if (epoch == cfg.stats_epochs && model.mask.dim == 0) {
            stats_finalize(model.stats);
            model.mask = build_mask(model.stats.xi, model.stats.dim, cfg.k, cfg.m,
                                    mix_seed(cfg.seed, 0x3A5Cu));
            result.mask_builds += 1;
            log_info("mask built at epoch " + std::to_string(epoch) +
                     ", density " + std::to_string(model.mask.density()));
        }

        for (std::size_t step = 0; step < cfg.steps_per_epoch; ++step) {
            std::uint64_t batch_seed = mix_seed(cfg.seed, epoch + 1, step + 1);
            ForwardResult fr;
            try {
                fr = forward_batch(model, batch_seed, true);
            } catch (const Error& e) {
                throw Error("epoch " + std::to_string(epoch) + " step " +
                            std::to_string(step) + ": " + e.what());
            }

            Tensor l_cnc = cnc_loss(fr.trip_s, fr.trip_t, cfg.tau_c);

            Tensor l_na;
            if (epoch < cfg.stats_epochs) {
                stats_accumulate(model.stats, fr.et_s.embeddings, fr.et_t.embeddings);
                l_na = Tensor::scalar(0.0);
            } else {
                l_na = na_loss(fr.et_s.embeddings, fr.et_t.embeddings, model.mask);
            }

            ood_downweight(fr.combined, fr.logits, cfg.p);
            if (cfg.source_only_node_loss)
                for (std::size_t i = 0; i < fr.combined.size(); ++i)
                    if (fr.combined.domain_per_node[i] == Domain::target)
                        fr.combined.weights[i] = 0.0;
            if (ood_audit) {
                std::vector<double> conf = label_confidence(fr.logits, fr.combined.labels);
                for (std::size_t i = 0; i < fr.combined.size(); ++i)
                    ood_audit(epoch, step, i, fr.combined.domain_per_node[i],
                              fr.combined.labels[i], conf[i], fr.combined.weights[i]);
            }
            Tensor l_node = node_loss(fr.combined, fr.logits);

            double l_ga = hooks.l_ga ? hooks.l_ga(fr.combined, Domain::source) : 0.0;
            double l_det = hooks.l_det ? hooks.l_det(fr.combined, Domain::source) : 0.0;
            CompositeLoss loss = composite_loss(l_cnc, l_na, l_node, l_ga, l_det, cfg);

            for (auto& p : params) p.zero_grad();
            loss.total.backward();
            clip_gradients(params, cfg.clip_norm);
            sgd_step(params, opt, cfg);

            sums.l_cnc += loss.values.l_cnc;
            sums.l_na += loss.values.l_na;
            sums.l_node += loss.values.l_node;
            sums.l_ga += loss.values.l_ga;
            sums.l_det += loss.values.l_det;
            sums.total += loss.values.total;
            acc_s += node_accuracy(fr.logits, fr.true_s, 0);
            acc_t += node_accuracy(fr.logits, fr.true_t, fr.true_s.size());
        }

        double inv = 1.0 / double(cfg.steps_per_epoch);
        MetricsRecord rec;
        rec.epoch = epoch;
        rec.losses = {sums.l_cnc * inv, sums.l_na * inv, sums.l_node * inv,
                      sums.l_ga * inv, sums.l_det * inv, sums.total * inv};
        rec.acc_source = acc_s * inv;
        rec.acc_target = acc_t * inv;
        rec.mask_density = model.mask.dim == 0 ? 0.0 : model.mask.density();
        rec.wall_seconds = std::chrono::duration<double>(
                               std::chrono::steady_clock::now() - t0).count();
        result.metrics.push_back(rec);
        model.epochs_done = epoch + 1;
    }
    return result;
}

// Forward-only accuracy on freshly generated batches; no state mutation.
inline MetricsRecord evaluate(const Model& model, std::size_t num_batches = 5,
                              std::uint64_t seed_tag = 0xEAA1u) {
    Model scratch = model;  // banks/stats copied; forward pass leaves them untouched
    MetricsRecord rec;
    rec.epoch = model.epochs_done;
    for (std::size_t b = 0; b < num_batches; ++b) {
        std::uint64_t s = mix_seed(model.cfg.seed, seed_tag, b + 1);
        ForwardResult fr = forward_batch(scratch, s, false);
        rec.acc_source += node_accuracy(fr.logits, fr.true_s, 0);
        rec.acc_target += node_accuracy(fr.logits, fr.true_t, fr.true_s.size());
    }
    rec.acc_source /= double(num_batches);
    rec.acc_target /= double(num_batches);
    rec.mask_density = model.mask.dim == 0 ? 0.0 : model.mask.density();
    return rec;
}

}  // namespace ggalign
