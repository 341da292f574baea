#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "ggalign/errors.hpp"
#include "ggalign/logging.hpp"
#include "ggalign/nodes.hpp"
#include "ggalign/params.hpp"
#include "ggalign/rng.hpp"
#include "ggalign/tensor.hpp"

namespace ggalign {

// Desk-scale stand-in for backbone features: class-conditional Gaussians on a
// pixel grid, with the target domain produced by a fixed channel-wise affine
// style shift plus a rank-one style noise direction.
struct SynthConfig {
    std::size_t classes = 8;       // C foreground categories; label C = background
    std::size_t feat_dim = 16;     // D, visual feature width
    std::size_t graph_dim = 32;    // D_g, graphical-space width after projection
    std::size_t height = 20;
    std::size_t width = 20;
    std::size_t num_boxes = 8;
    std::size_t box_size = 3;      // boxes are box_size x box_size
    double mean_sep = 3.0;         // scale of class-mean separation
    double feat_noise = 0.6;       // within-class feature stddev
    double style_gamma = 1.5;      // per-channel scale applied to target features
    double style_beta = 0.5;       // per-channel offset applied to target features
    double style_noise = 1.0;      // stddev of rank-one target-only style component
    double label_noise = 0.1;      // rho, pseudo-score corruption rate
    double tau = 0.6;              // foreground/background segmentation threshold
    std::size_t per_box = 4;       // source foreground samples per box
    std::size_t background = 0;    // background samples; 0 = match foreground count
    std::uint64_t seed = 1;

    void validate() const {
        if (classes < 2) throw ConfigError("classes must be >= 2");
        if (feat_dim < 4) throw ConfigError("feat_dim must be >= 4");
        if (tau <= 0.0 || tau >= 1.0) throw ConfigError("tau must lie in (0,1)");
        if (per_box < 1) throw ConfigError("per_box must be >= 1");
        if (mean_sep == 0.0 && label_noise > 0.0)
            throw ConfigError("mean_sep 0 with label_noise > 0 is unlearnable");
        if (height * width < num_boxes * box_size * box_size)
            throw ConfigError("grid too small for the requested boxes");
    }
};

struct FeatureMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    Tensor values;                 // {H*W, D}, pixel-major
    Domain domain_tag = Domain::source;
    std::vector<int> true_labels;  // generator ground truth per pixel (C = background)

    std::size_t pixels() const { return height * width; }
};

struct GroundTruthBox {
    std::size_t x0, y0, x1, y1;  // half-open, 0 <= x0 < x1 <= W
    int category;

    std::size_t area() const { return (x1 - x0) * (y1 - y0); }
};

struct ScoreMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t classes = 0;
    std::vector<double> values;  // {H*W, C}, entries in [0,1]
};

struct RawNodeSet {
    Tensor embeddings;  // {M, D}, plain leaf (no grad)
    std::vector<int> labels;
    Domain domain_tag = Domain::source;
    std::vector<std::pair<std::size_t, std::size_t>> pixel_origins;  // (row, col)

    std::size_t size() const { return labels.size(); }
};

struct DomainPair {
    FeatureMap source;
    std::vector<GroundTruthBox> boxes;
    FeatureMap target;
    ScoreMap scores;
};

namespace detail {

// Class means are a function of the config seed only, so every batch of a run
// sees the same classes.
inline std::vector<std::vector<double>> class_means(const SynthConfig& cfg) {
    auto rng = make_rng(mix_seed(cfg.seed, 0xC1A55u));
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<std::vector<double>> mu(cfg.classes, std::vector<double>(cfg.feat_dim));
    double s = cfg.mean_sep / std::sqrt(double(cfg.feat_dim));
    for (auto& m : mu)
        for (double& x : m) x = s * nd(rng);
    return mu;
}

// Fixed unit direction for the target-only style component.
inline std::vector<double> style_direction(const SynthConfig& cfg) {
    auto rng = make_rng(mix_seed(cfg.seed, 0x57u));
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> u(cfg.feat_dim);
    double n = 0.0;
    for (double& x : u) { x = nd(rng); n += x * x; }
    n = std::sqrt(n);
    for (double& x : u) x /= n;
    return u;
}

inline std::vector<GroundTruthBox> place_boxes(const SynthConfig& cfg,
                                               std::mt19937_64& rng) {
    std::vector<GroundTruthBox> boxes;
    std::uniform_int_distribution<std::size_t> dy(0, cfg.height - cfg.box_size);
    std::uniform_int_distribution<std::size_t> dx(0, cfg.width - cfg.box_size);
    std::uniform_int_distribution<int> dc(0, int(cfg.classes) - 1);
    for (std::size_t b = 0; b < cfg.num_boxes; ++b) {
        // Rejection sample to keep boxes disjoint; give up after a bounded
        // number of tries and accept the overlap.
        GroundTruthBox box{};
        for (int attempt = 0; attempt < 64; ++attempt) {
            std::size_t y = dy(rng), x = dx(rng);
            box = {x, y, x + cfg.box_size, y + cfg.box_size, dc(rng)};
            bool overlaps = false;
            for (const auto& other : boxes)
                if (box.x0 < other.x1 && other.x0 < box.x1 &&
                    box.y0 < other.y1 && other.y0 < box.y1) { overlaps = true; break; }
            if (!overlaps) break;
        }
        boxes.push_back(box);
    }
    return boxes;
}

}  // namespace detail

// Deterministic in (cfg, seed): identical calls yield bit-identical maps.
inline DomainPair generate_domain_pair(const SynthConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    auto mu = detail::class_means(cfg);
    auto style_u = detail::style_direction(cfg);
    std::size_t hw = cfg.height * cfg.width, d = cfg.feat_dim;

    DomainPair out;
    std::normal_distribution<double> nd(0.0, 1.0);

    for (int which = 0; which < 2; ++which) {
        Domain dom = which == 0 ? Domain::source : Domain::target;
        auto rng = make_rng(mix_seed(seed, 0xB0B0u + which));
        auto boxes = detail::place_boxes(cfg, rng);

        FeatureMap fm;
        fm.height = cfg.height;
        fm.width = cfg.width;
        fm.channels = d;
        fm.domain_tag = dom;
        fm.true_labels.assign(hw, int(cfg.classes));
        for (const auto& b : boxes)
            for (std::size_t y = b.y0; y < b.y1; ++y)
                for (std::size_t x = b.x0; x < b.x1; ++x)
                    fm.true_labels[y * cfg.width + x] = b.category;

        std::vector<double> vals(hw * d);
        for (std::size_t p = 0; p < hw; ++p) {
            int c = fm.true_labels[p];
            const double* m = c < int(cfg.classes) ? mu[c].data() : nullptr;
            double eps = dom == Domain::target ? cfg.style_noise * nd(rng) : 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                double v = (m ? m[j] : 0.0) + cfg.feat_noise * nd(rng);
                if (dom == Domain::target)
                    v = cfg.style_gamma * v + cfg.style_beta + eps * style_u[j];
                vals[p * d + j] = v;
            }
        }
        fm.values = Tensor({hw, d}, std::move(vals));

        if (dom == Domain::source) {
            out.source = std::move(fm);
            out.boxes = std::move(boxes);
        } else {
            // Pseudo scores: class posterior of an affine-recalibrated source
            // model (class-conditional Gaussians at gamma*mu_c + beta plus a
            // background class at beta, shared isotropic noise gamma*sigma)
            // evaluated on the target features. The detector is calibrated to
            // the channel-wise style statistics but blind to the rank-one
            // style component, so pseudo-label corruption concentrates along
            // the style direction and grows with its strength. With
            // probability rho the top foreground score is swapped with a
            // random other class. Confidences are capped at 0.95.
            auto srng = make_rng(mix_seed(seed, 0x5C0Eu));
            std::uniform_real_distribution<double> u01(0.0, 1.0);
            const double sig_t = cfg.style_gamma * cfg.feat_noise;
            const double inv2s2 = 1.0 / (2.0 * sig_t * sig_t);
            ScoreMap sm;
            sm.height = cfg.height;
            sm.width = cfg.width;
            sm.classes = cfg.classes;
            sm.values.assign(hw * cfg.classes, 0.0);
            std::vector<double> logit(cfg.classes + 1);
            for (std::size_t p = 0; p < hw; ++p) {
                const double* x = fm.values.values().data() + p * d;
                for (std::size_t c2 = 0; c2 <= cfg.classes; ++c2) {
                    double d2 = 0.0;
                    const double* m2 = c2 < cfg.classes ? mu[c2].data() : nullptr;
                    for (std::size_t j = 0; j < d; ++j) {
                        double mean_j = cfg.style_gamma * (m2 ? m2[j] : 0.0) +
                                        cfg.style_beta;
                        double diff = x[j] - mean_j;
                        d2 += diff * diff;
                    }
                    logit[c2] = -d2 * inv2s2;
                }
                double mx = *std::max_element(logit.begin(), logit.end());
                double z = 0.0;
                for (double l : logit) z += std::exp(l - mx);
                double* s = sm.values.data() + p * cfg.classes;
                for (std::size_t c2 = 0; c2 < cfg.classes; ++c2)
                    s[c2] = std::exp(logit[c2] - mx) / z;

                double flip = u01(srng);
                double pick = u01(srng);
                if (cfg.label_noise > 0.0 && flip < cfg.label_noise &&
                    cfg.classes > 1) {
                    std::size_t arg = 0;
                    for (std::size_t c2 = 1; c2 < cfg.classes; ++c2)
                        if (s[c2] > s[arg]) arg = c2;
                    std::size_t other =
                        (arg + 1 + std::size_t(pick * double(cfg.classes - 1))) %
                        cfg.classes;
                    std::swap(s[arg], s[other]);
                }
                double top = *std::max_element(s, s + cfg.classes);
                if (top > 0.95)
                    for (std::size_t c2 = 0; c2 < cfg.classes; ++c2)
                        s[c2] *= 0.95 / top;
            }
            out.target = std::move(fm);
            out.scores = std::move(sm);
        }
    }
    return out;
}

// Uniform sampling without replacement inside each ground-truth box, plus
// uniformly drawn background pixels outside all boxes. Background nodes carry
// label num_classes (the reserved id C).
inline RawNodeSet sample_source_nodes(const FeatureMap& fm,
                                      const std::vector<GroundTruthBox>& boxes,
                                      std::size_t per_box, std::size_t background,
                                      std::size_t num_classes, std::uint64_t seed) {
    if (per_box < 1) throw ConfigError("per_box must be >= 1");
    auto rng = make_rng(mix_seed(seed, 0xF06u));
    std::size_t d = fm.channels;
    RawNodeSet out;
    out.domain_tag = fm.domain_tag;
    std::vector<double> emb;

    std::vector<char> in_box(fm.pixels(), 0);
    for (const auto& b : boxes)
        for (std::size_t y = b.y0; y < b.y1; ++y)
            for (std::size_t x = b.x0; x < b.x1; ++x)
                in_box[y * fm.width + x] = 1;

    auto push_pixel = [&](std::size_t p, int label) {
        out.labels.push_back(label);
        out.pixel_origins.emplace_back(p / fm.width, p % fm.width);
        const double* v = fm.values.values().data() + p * d;
        emb.insert(emb.end(), v, v + d);
    };

    for (const auto& b : boxes) {
        std::vector<std::size_t> pix;
        for (std::size_t y = b.y0; y < b.y1; ++y)
            for (std::size_t x = b.x0; x < b.x1; ++x)
                pix.push_back(y * fm.width + x);
        if (pix.size() >= per_box) {
            std::shuffle(pix.begin(), pix.end(), rng);
            for (std::size_t i = 0; i < per_box; ++i) push_pixel(pix[i], b.category);
        } else {
            log_warning("box smaller than per_box; sampling with replacement");
            std::uniform_int_distribution<std::size_t> di(0, pix.size() - 1);
            for (std::size_t i = 0; i < per_box; ++i) push_pixel(pix[di(rng)], b.category);
        }
    }

    if (background > 0) {
        std::vector<std::size_t> outside;
        for (std::size_t p = 0; p < fm.pixels(); ++p)
            if (!in_box[p]) outside.push_back(p);
        std::shuffle(outside.begin(), outside.end(), rng);
        std::size_t take = std::min(background, outside.size());
        for (std::size_t i = 0; i < take; ++i)
            push_pixel(outside[i], int(num_classes));
    }

    if (out.labels.empty()) throw DegenerateInputError("sample_source_nodes: no nodes sampled");
    out.embeddings = Tensor({out.labels.size(), d}, std::move(emb));
    return out;
}

// Pixels with max-class pseudo score strictly above tau become foreground
// nodes carrying the argmax pseudo-label; a seeded uniform subsample of the
// remaining pixels becomes background (label C). Equality with tau goes to
// background.
inline RawNodeSet sample_target_nodes(const FeatureMap& fm, const ScoreMap& scores,
                                      double tau, std::size_t background_limit = 0,
                                      std::uint64_t seed = 0) {
    if (tau <= 0.0 || tau >= 1.0) throw ConfigError("tau must lie in (0,1)");
    std::size_t d = fm.channels, c = scores.classes;
    RawNodeSet out;
    out.domain_tag = fm.domain_tag;
    std::vector<double> emb;
    std::vector<std::size_t> below;

    auto push_pixel = [&](std::size_t p, int label) {
        out.labels.push_back(label);
        out.pixel_origins.emplace_back(p / fm.width, p % fm.width);
        const double* v = fm.values.values().data() + p * d;
        emb.insert(emb.end(), v, v + d);
    };

    for (std::size_t p = 0; p < fm.pixels(); ++p) {
        const double* s = scores.values.data() + p * c;
        std::size_t arg = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (s[j] > s[arg]) arg = j;
        if (s[arg] > tau)
            push_pixel(p, int(arg));
        else
            below.push_back(p);
    }
    std::size_t foreground = out.labels.size();
    if (foreground == 0)
        throw DegenerateInputError(
            "sample_target_nodes: no pixel exceeds tau; lower tau or regenerate data");

    std::size_t want = background_limit == 0 ? foreground : background_limit;
    auto rng = make_rng(mix_seed(seed, 0xB6u));
    std::shuffle(below.begin(), below.end(), rng);
    for (std::size_t i = 0; i < std::min(want, below.size()); ++i)
        push_pixel(below[i], int(c));

    out.embeddings = Tensor({out.labels.size(), d}, std::move(emb));
    return out;
}

// Nonlinear projection from visual space D into graphical space D_g.
inline NodeSet project_nodes(const RawNodeSet& raw, const MLPParams& mlp) {
    if (raw.embeddings.cols() != mlp.in_dim())
        throw ShapeError("project_nodes: MLP input width does not match features");
    return NodeSet(mlp_forward(mlp, raw.embeddings), raw.labels, raw.domain_tag);
}

}  // namespace ggalign
