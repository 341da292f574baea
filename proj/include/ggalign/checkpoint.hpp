#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ggalign/config.hpp"
#include "ggalign/errors.hpp"
#include "ggalign/trainer.hpp"

namespace ggalign {

inline constexpr int kCheckpointVersion = 1;

namespace detail {

using nlohmann::json;

inline json tensor_to_json(const Tensor& t) {
    return json{{"shape", t.shape()}, {"data", t.values()}};
}

inline Tensor tensor_from_json(const json& j, bool requires_grad) {
    Shape shape = j.at("shape").get<Shape>();
    std::vector<double> data = j.at("data").get<std::vector<double>>();
    return Tensor(std::move(shape), std::move(data), requires_grad);
}

inline json mlp_to_json(const MLPParams& p) {
    return json{{"w1", tensor_to_json(p.w1)}, {"b1", tensor_to_json(p.b1)},
                {"w2", tensor_to_json(p.w2)}, {"b2", tensor_to_json(p.b2)}};
}

inline MLPParams mlp_from_json(const json& j) {
    MLPParams p;
    p.w1 = tensor_from_json(j.at("w1"), true);
    p.b1 = tensor_from_json(j.at("b1"), true);
    p.w2 = tensor_from_json(j.at("w2"), true);
    p.b2 = tensor_from_json(j.at("b2"), true);
    return p;
}

inline json attn_to_json(const AttentionParams& p) {
    return json{{"wq", tensor_to_json(p.wq)}, {"wk", tensor_to_json(p.wk)},
                {"wv", tensor_to_json(p.wv)}};
}

inline AttentionParams attn_from_json(const json& j) {
    AttentionParams p;
    p.wq = tensor_from_json(j.at("wq"), true);
    p.wk = tensor_from_json(j.at("wk"), true);
    p.wv = tensor_from_json(j.at("wv"), true);
    return p;
}

inline json bank_to_json(const MemoryBank& b) {
    return json{{"categories", b.categories}, {"dim", b.dim},
                {"prototypes", b.prototypes},
                {"seen", std::vector<int>(b.seen.begin(), b.seen.end())},
                {"momentum", b.momentum}};
}

inline MemoryBank bank_from_json(const json& j) {
    MemoryBank b(j.at("categories").get<std::size_t>(), j.at("dim").get<std::size_t>(),
                 j.at("momentum").get<double>());
    b.prototypes = j.at("prototypes").get<std::vector<double>>();
    auto seen = j.at("seen").get<std::vector<int>>();
    b.seen.assign(seen.begin(), seen.end());
    return b;
}

}  // namespace detail

inline void save_checkpoint(const Model& model, const std::string& path) {
    using detail::json;
    json j;
    j["version"] = kCheckpointVersion;
    j["config"] = dump_config(model.cfg);
    j["epochs_done"] = model.epochs_done;
    j["proj"] = detail::mlp_to_json(model.proj);
    j["refine_attn"] = detail::attn_to_json(model.refine_attn);
    j["implicit_head"] = detail::mlp_to_json(model.implicit_head);
    j["cov_attn"] = detail::attn_to_json(model.cov_attn);
    j["graph"] = {{"attn", detail::attn_to_json(model.graph.attn)},
                  {"ln_gain", detail::tensor_to_json(model.graph.ln_gain)},
                  {"ln_bias", detail::tensor_to_json(model.graph.ln_bias)},
                  {"cls_w", detail::tensor_to_json(model.graph.cls_w)},
                  {"cls_b", detail::tensor_to_json(model.graph.cls_b)},
                  {"ln_eps", model.graph.ln_eps}};
    j["bank_s"] = detail::bank_to_json(model.bank_s);
    j["bank_t"] = detail::bank_to_json(model.bank_t);
    j["stats"] = {{"dim", model.stats.dim}, {"graphs", model.stats.graphs},
                  {"samples", model.stats.samples}, {"mean", model.stats.mean},
                  {"m2", model.stats.m2}, {"sigma_sum", model.stats.sigma_sum},
                  {"finalized", model.stats.finalized}, {"xi", model.stats.xi}};
    j["mask"] = {{"dim", model.mask.dim}, {"mask", model.mask.mask},
                 {"centroids", model.mask.centroids},
                 {"assignments", model.mask.assignments},
                 {"k", model.mask.k}, {"m", model.mask.m}};
    std::ofstream f(path);
    if (!f) throw Error("cannot open checkpoint for writing: " + path);
    f << j.dump(2) << "\n";
}

inline Model load_checkpoint(const std::string& path) {
    using detail::json;
    std::ifstream f(path);
    if (!f) throw Error("cannot open checkpoint: " + path);
    json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw Error("malformed checkpoint " + path + ": " + e.what());
    }
    if (!j.contains("version") || j.at("version").get<int>() != kCheckpointVersion)
        throw StateError("checkpoint version mismatch (expected " +
                         std::to_string(kCheckpointVersion) + ")");
    Model m;
    std::istringstream cfg_in(j.at("config").get<std::string>());
    m.cfg = parse_config(cfg_in);
    m.epochs_done = j.at("epochs_done").get<std::size_t>();
    m.proj = detail::mlp_from_json(j.at("proj"));
    m.refine_attn = detail::attn_from_json(j.at("refine_attn"));
    m.implicit_head = detail::mlp_from_json(j.at("implicit_head"));
    m.cov_attn = detail::attn_from_json(j.at("cov_attn"));
    const auto& g = j.at("graph");
    m.graph.attn = detail::attn_from_json(g.at("attn"));
    m.graph.ln_gain = detail::tensor_from_json(g.at("ln_gain"), true);
    m.graph.ln_bias = detail::tensor_from_json(g.at("ln_bias"), true);
    m.graph.cls_w = detail::tensor_from_json(g.at("cls_w"), true);
    m.graph.cls_b = detail::tensor_from_json(g.at("cls_b"), true);
    m.graph.ln_eps = g.at("ln_eps").get<double>();
    m.bank_s = detail::bank_from_json(j.at("bank_s"));
    m.bank_t = detail::bank_from_json(j.at("bank_t"));
    const auto& s = j.at("stats");
    m.stats.dim = s.at("dim").get<std::size_t>();
    m.stats.graphs = s.at("graphs").get<std::size_t>();
    m.stats.samples = s.at("samples").get<std::size_t>();
    m.stats.mean = s.at("mean").get<std::vector<double>>();
    m.stats.m2 = s.at("m2").get<std::vector<double>>();
    m.stats.sigma_sum = s.at("sigma_sum").get<std::vector<double>>();
    m.stats.finalized = s.at("finalized").get<bool>();
    m.stats.xi = s.at("xi").get<std::vector<double>>();
    const auto& mk = j.at("mask");
    m.mask.dim = mk.at("dim").get<std::size_t>();
    m.mask.mask = mk.at("mask").get<std::vector<double>>();
    m.mask.centroids = mk.at("centroids").get<std::vector<double>>();
    m.mask.assignments = mk.at("assignments").get<std::vector<int>>();
    m.mask.k = mk.at("k").get<std::size_t>();
    m.mask.m = mk.at("m").get<std::size_t>();
    return m;
}

}  // namespace ggalign
