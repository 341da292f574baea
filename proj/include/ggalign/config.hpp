#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ggalign/errors.hpp"
#include "ggalign/synth.hpp"

namespace ggalign {

// Full run configuration: synthetic data parameters plus training
// hyperparameters. File format is flat `key = value` lines, `#` comments.
struct TrainConfig {
    SynthConfig synth;

    double lambda1 = 0.1;
    double lambda2 = 0.1;
    double lr = 0.0025;
    double momentum = 0.99;
    double weight_decay = 1e-4;
    std::size_t epochs = 40;
    std::size_t steps_per_epoch = 50;
    std::size_t stats_epochs = 30;  // n: epochs of covariance statistics gathering
    std::size_t k = 4;              // k-means clusters on Xi
    std::size_t m = 1;              // clusters excluded from G_high
    double p = 0.03;                // OOD down-weighting degree
    double tau_c = 0.06;            // contrastive temperature
    double eta = 0.9;               // bank momentum
    std::size_t per_cat = 4;        // hallucination nodes per missing category
    double sigma_h = -1.0;          // hallucination noise; <0 = 0.01*RMS(prototype)
    std::size_t implicit_dim = 16;  // D_e
    double clip_norm = 0.5;         // global gradient-norm clip; <= 0 disables
    std::uint64_t seed = 1;

    // Ablation switches for studies/harnesses; deliberately not part of the
    // file schema. `ablate_message_pass` replaces attention message passing
    // with plain concatenation; `source_only_node_loss` drops target nodes
    // from the classification loss (the "source-only" baseline).
    bool ablate_message_pass = false;
    bool source_only_node_loss = false;

    void validate() const {
        synth.validate();
        if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("lambda weights must be >= 0");
        if (stats_epochs >= epochs)
            throw ConfigError("stats_epochs (n) must be smaller than epochs");
        if (k < 2 || m < 1 || m >= k) throw ConfigError("require 1 <= m < k and k >= 2");
        if (p < 0.0 || p >= 1.0) throw ConfigError("p must lie in [0,1)");
        if (tau_c <= 0.0) throw ConfigError("tau_c must be positive");
        if (eta <= 0.0 || eta >= 1.0) throw ConfigError("eta must lie in (0,1)");
        if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
    }

    // Returns false for unknown keys so callers can report the line.
    bool apply(const std::string& key, const std::string& value);

    static const std::vector<std::string>& known_keys();
};

namespace detail {

inline double parse_double(const std::string& v) {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw ConfigError("malformed number '" + v + "'");
    return d;
}

inline std::uint64_t parse_uint(const std::string& v) {
    std::size_t pos = 0;
    unsigned long long u = std::stoull(v, &pos);
    if (pos != v.size()) throw ConfigError("malformed integer '" + v + "'");
    return u;
}

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

inline bool TrainConfig::apply(const std::string& key, const std::string& value) {
    using detail::parse_double;
    using detail::parse_uint;
    if (key == "classes") synth.classes = parse_uint(value);
    else if (key == "feat_dim") synth.feat_dim = parse_uint(value);
    else if (key == "graph_dim") synth.graph_dim = parse_uint(value);
    else if (key == "height") synth.height = parse_uint(value);
    else if (key == "width") synth.width = parse_uint(value);
    else if (key == "num_boxes") synth.num_boxes = parse_uint(value);
    else if (key == "box_size") synth.box_size = parse_uint(value);
    else if (key == "mean_sep") synth.mean_sep = parse_double(value);
    else if (key == "feat_noise") synth.feat_noise = parse_double(value);
    else if (key == "style_gamma") synth.style_gamma = parse_double(value);
    else if (key == "style_beta") synth.style_beta = parse_double(value);
    else if (key == "style_noise") synth.style_noise = parse_double(value);
    else if (key == "label_noise") synth.label_noise = parse_double(value);
    else if (key == "tau") synth.tau = parse_double(value);
    else if (key == "per_box") synth.per_box = parse_uint(value);
    else if (key == "background") synth.background = parse_uint(value);
    else if (key == "lambda1") lambda1 = parse_double(value);
    else if (key == "lambda2") lambda2 = parse_double(value);
    else if (key == "lr") lr = parse_double(value);
    else if (key == "momentum") momentum = parse_double(value);
    else if (key == "weight_decay") weight_decay = parse_double(value);
    else if (key == "epochs") epochs = parse_uint(value);
    else if (key == "steps_per_epoch") steps_per_epoch = parse_uint(value);
    else if (key == "stats_epochs") stats_epochs = parse_uint(value);
    else if (key == "k") k = parse_uint(value);
    else if (key == "m") m = parse_uint(value);
    else if (key == "p") p = parse_double(value);
    else if (key == "tau_c") tau_c = parse_double(value);
    else if (key == "eta") eta = parse_double(value);
    else if (key == "per_cat") per_cat = parse_uint(value);
    else if (key == "sigma_h") sigma_h = parse_double(value);
    else if (key == "implicit_dim") implicit_dim = parse_uint(value);
    else if (key == "clip_norm") clip_norm = parse_double(value);
    else if (key == "seed") { seed = parse_uint(value); synth.seed = seed; }
    else return false;
    return true;
}

inline const std::vector<std::string>& TrainConfig::known_keys() {
    static const std::vector<std::string> keys = {
        "classes", "feat_dim", "graph_dim", "height", "width", "num_boxes",
        "box_size", "mean_sep", "feat_noise", "style_gamma", "style_beta",
        "style_noise", "label_noise", "tau", "per_box", "background",
        "lambda1", "lambda2", "lr", "momentum", "weight_decay", "epochs",
        "steps_per_epoch", "stats_epochs", "k", "m", "p", "tau_c", "eta",
        "per_cat", "sigma_h", "implicit_dim", "clip_norm", "seed"};
    return keys;
}

inline TrainConfig parse_config(std::istream& in) {
    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = detail::trim(line);
        if (s.empty() || s[0] == '#') continue;
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected 'key = value'", lineno);
        std::string key = detail::trim(s.substr(0, eq));
        std::string value = detail::trim(s.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("empty key or value", lineno);
        try {
            if (!cfg.apply(key, value))
                throw ConfigError("unknown key '" + key + "'", lineno);
        } catch (const ConfigError& e) {
            if (e.line_number > 0) throw;
            throw ConfigError(e.what(), lineno);
        } catch (const std::exception& e) {
            throw ConfigError(std::string(e.what()) + " for key '" + key + "'", lineno);
        }
    }
    return cfg;
}

inline TrainConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    return parse_config(f);
}

inline std::string dump_config(const TrainConfig& c) {
    std::ostringstream o;
    o.precision(17);
    o << "classes = " << c.synth.classes << "\n"
      << "feat_dim = " << c.synth.feat_dim << "\n"
      << "graph_dim = " << c.synth.graph_dim << "\n"
      << "height = " << c.synth.height << "\n"
      << "width = " << c.synth.width << "\n"
      << "num_boxes = " << c.synth.num_boxes << "\n"
      << "box_size = " << c.synth.box_size << "\n"
      << "mean_sep = " << c.synth.mean_sep << "\n"
      << "feat_noise = " << c.synth.feat_noise << "\n"
      << "style_gamma = " << c.synth.style_gamma << "\n"
      << "style_beta = " << c.synth.style_beta << "\n"
      << "style_noise = " << c.synth.style_noise << "\n"
      << "label_noise = " << c.synth.label_noise << "\n"
      << "tau = " << c.synth.tau << "\n"
      << "per_box = " << c.synth.per_box << "\n"
      << "background = " << c.synth.background << "\n"
      << "lambda1 = " << c.lambda1 << "\n"
      << "lambda2 = " << c.lambda2 << "\n"
      << "lr = " << c.lr << "\n"
      << "momentum = " << c.momentum << "\n"
      << "weight_decay = " << c.weight_decay << "\n"
      << "epochs = " << c.epochs << "\n"
      << "steps_per_epoch = " << c.steps_per_epoch << "\n"
      << "stats_epochs = " << c.stats_epochs << "\n"
      << "k = " << c.k << "\n"
      << "m = " << c.m << "\n"
      << "p = " << c.p << "\n"
      << "tau_c = " << c.tau_c << "\n"
      << "eta = " << c.eta << "\n"
      << "per_cat = " << c.per_cat << "\n"
      << "sigma_h = " << c.sigma_h << "\n"
      << "implicit_dim = " << c.implicit_dim << "\n"
      << "clip_norm = " << c.clip_norm << "\n"
      << "seed = " << c.seed << "\n";
    return o.str();
}

}  // namespace ggalign
