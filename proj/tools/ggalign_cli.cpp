// Command-line front end: train / sweep / eval / dump.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ggalign/ggalign.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "1.0.0";

// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::uint64_t fnv1a_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    std::uint64_t h = 14695981039346656037ULL;
    char c;
    while (f.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

fs::path resolve_out_dir(const std::string& out_dir) {
    fs::path p(out_dir);
    const char* root = std::getenv("GGALIGN_OUT_ROOT");
    if (root && *root && p.is_relative()) p = fs::path(root) / p;
    return p;
}

std::string iso_timestamp() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

void write_metrics_csv(const std::vector<ggalign::MetricsRecord>& metrics,
                       const fs::path& path) {
    std::ofstream f(path);
    f.precision(17);
    f << "epoch,l_cnc,l_na,l_node,l_ga,l_det,total,acc_source,acc_target,mask_density\n";
    for (const auto& r : metrics)
        f << r.epoch << ',' << r.losses.l_cnc << ',' << r.losses.l_na << ','
          << r.losses.l_node << ',' << r.losses.l_ga << ',' << r.losses.l_det << ','
          << r.losses.total << ',' << r.acc_source << ',' << r.acc_target << ','
          << r.mask_density << '\n';
}

json metrics_to_json(const ggalign::MetricsRecord& r) {
    return json{{"epoch", r.epoch},
                {"acc_source", r.acc_source},
                {"acc_target", r.acc_target},
                {"l_cnc", r.losses.l_cnc},
                {"l_na", r.losses.l_na},
                {"l_node", r.losses.l_node},
                {"l_ga", r.losses.l_ga},
                {"l_det", r.losses.l_det},
                {"total", r.losses.total},
                {"mask_density", r.mask_density}};
}

struct RunArtifacts {
    fs::path metrics_csv;
    fs::path summary_json;
    fs::path checkpoint_json;
    fs::path manifest_json;
};

struct RunOutcome {
    ggalign::MetricsRecord final_eval;   // held-out forward-only accuracy
    ggalign::MetricsRecord last_epoch;   // training losses of the final epoch
};

// One full training run into `dir`.
RunOutcome run_training(const ggalign::TrainConfig& cfg, const fs::path& dir,
                        bool ood_audit_enabled, RunArtifacts& out) {
    fs::create_directories(dir);
    std::string started = iso_timestamp();

    std::ofstream audit;
    ggalign::OodAuditSink sink;
    fs::path audit_path = dir / "ood_audit.csv";
    if (ood_audit_enabled) {
        audit.open(audit_path);
        audit << "epoch,step,node,domain,label,confidence,weight\n";
        audit.precision(17);
        sink = [&audit](std::size_t epoch, std::size_t step, std::size_t node,
                        ggalign::Domain dom, int label, double conf, double w) {
            audit << epoch << ',' << step << ',' << node << ','
                  << ggalign::domain_name(dom) << ',' << label << ',' << conf << ','
                  << w << '\n';
        };
    }

    ggalign::TrainResult result = ggalign::train(cfg, {}, sink);
    ggalign::MetricsRecord final_eval = ggalign::evaluate(result.model);

    out.metrics_csv = dir / "metrics.csv";
    out.summary_json = dir / "summary.json";
    out.checkpoint_json = dir / "checkpoint.json";
    out.manifest_json = dir / "manifest.json";

    write_metrics_csv(result.metrics, out.metrics_csv);
    ggalign::save_checkpoint(result.model, out.checkpoint_json.string());

    json summary;
    summary["final_eval"] = metrics_to_json(final_eval);
    summary["epochs"] = result.metrics.size();
    summary["mask_builds"] = result.mask_builds;
    summary["last_epoch"] = result.metrics.empty()
                                ? json(nullptr)
                                : metrics_to_json(result.metrics.back());
    {
        std::ofstream f(out.summary_json);
        f << summary.dump(2) << "\n";
    }

    json manifest;
    manifest["tool_version"] = kToolVersion;
    manifest["seed"] = cfg.seed;
    manifest["config"] = ggalign::dump_config(cfg);
    manifest["started"] = started;
    manifest["finished"] = iso_timestamp();
    manifest["artifacts"] = json::array({out.metrics_csv.filename().string(),
                                         out.summary_json.filename().string(),
                                         out.checkpoint_json.filename().string()});
    if (ood_audit_enabled)
        manifest["artifacts"].push_back(audit_path.filename().string());
    {
        std::ofstream f(out.manifest_json);
        f << manifest.dump(2) << "\n";
    }
    RunOutcome outcome;
    outcome.final_eval = final_eval;
    if (!result.metrics.empty()) outcome.last_epoch = result.metrics.back();
    return outcome;
}

struct SweepAxis {
    std::string key;
    std::vector<std::string> values;
};

SweepAxis parse_sweep_param(const std::string& spec) {
    std::size_t eq = spec.find('=');
    if (eq == std::string::npos)
        throw ggalign::ConfigError("--param expects key=v1,v2,... got '" + spec + "'");
    SweepAxis axis;
    axis.key = spec.substr(0, eq);
    std::stringstream ss(spec.substr(eq + 1));
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) axis.values.push_back(item);
    if (axis.values.empty())
        throw ggalign::ConfigError("--param " + axis.key + ": empty value list");
    const auto& known = ggalign::TrainConfig::known_keys();
    if (std::find(known.begin(), known.end(), axis.key) == known.end())
        throw ggalign::ConfigError("unknown sweep parameter '" + axis.key + "'");
    return axis;
}

int cmd_dump(const std::string& checkpoint_path, const std::string& what,
             const std::string& out_path) {
    ggalign::Model model = ggalign::load_checkpoint(checkpoint_path);
    std::ostringstream csv;
    csv.precision(17);
    if (what == "bank") {
        // source-domain bank: C+1 rows of D_g comma-separated values
        const auto& b = model.bank_s;
        for (std::size_t c = 0; c < b.categories; ++c) {
            for (std::size_t j = 0; j < b.dim; ++j)
                csv << (j ? "," : "") << b.prototype(c)[j];
            csv << "\n";
        }
    } else if (what == "xi") {
        if (!model.stats.finalized) {
            std::cerr << "statistics not finalized\n";
            return kExitRuntime;
        }
        csv << "row,col,value\n";
        for (std::size_t i = 0; i < model.stats.dim; ++i)
            for (std::size_t j = 0; j < model.stats.dim; ++j)
                csv << i << ',' << j << ',' << model.stats.xi[i * model.stats.dim + j]
                    << "\n";
    } else if (what == "mask") {
        if (model.mask.dim == 0) {
            std::cerr << "mask not built\n";
            return kExitRuntime;
        }
        csv << "row,col,value\n";
        for (std::size_t i = 0; i < model.mask.dim; ++i)
            for (std::size_t j = 0; j < model.mask.dim; ++j)
                csv << i << ',' << j << ',' << model.mask.mask[i * model.mask.dim + j]
                    << "\n";
    } else {
        std::cerr << "unknown --what '" << what << "' (expected bank|mask|xi)\n";
        return kExitUsage;
    }
    if (out_path.empty() || out_path == "-") {
        std::cout << csv.str();
    } else {
        std::ofstream f(out_path);
        if (!f) {
            std::cerr << "cannot open " << out_path << " for writing\n";
            return kExitRuntime;
        }
        f << csv.str();
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-domain graph alignment trainer on synthetic two-domain data"};
    app.require_subcommand(1);

    bool quiet = false, verbose = false;
    app.add_flag("--quiet", quiet, "suppress warnings and progress");
    app.add_flag("--verbose", verbose, "verbose progress output");

    std::string config_path, out_dir = "run", checkpoint_path, what = "bank";
    std::string dump_out;
    std::uint64_t seed_override = 0;
    bool have_seed = false, ood_audit = false;
    std::vector<std::string> sweep_params;
    std::size_t eval_batches = 5;

    auto* train_cmd = app.add_subcommand("train", "run a full training job");
    train_cmd->add_option("config", config_path, "config file")->required();
    train_cmd->add_option("--seed", seed_override, "override the config seed")
        ->each([&have_seed](const std::string&) { have_seed = true; });
    train_cmd->add_option("--out-dir", out_dir, "output directory");
    train_cmd->add_flag("--ood-audit", ood_audit, "write per-step OOD audit CSV");

    auto* sweep_cmd = app.add_subcommand("sweep", "Cartesian parameter sweep");
    sweep_cmd->add_option("config", config_path, "base config file")->required();
    sweep_cmd->add_option("--param", sweep_params, "key=v1,v2,... (repeatable)")
        ->required();
    sweep_cmd->add_option("--out-dir", out_dir, "output directory");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("checkpoint", checkpoint_path, "checkpoint file")->required();
    eval_cmd->add_option("--batches", eval_batches, "number of evaluation batches");

    auto* dump_cmd = app.add_subcommand("dump", "dump checkpoint state as CSV");
    dump_cmd->add_option("checkpoint", checkpoint_path, "checkpoint file")->required();
    dump_cmd->add_option("--what", what, "bank|mask|xi")->required();
    dump_cmd->add_option("--out", dump_out, "output CSV path (default stdout)");

    CLI11_PARSE(app, argc, argv);

    ggalign::log_level() = quiet ? 0 : (verbose ? 2 : 1);

    try {
        if (*train_cmd) {
            ggalign::TrainConfig cfg = ggalign::load_config(config_path);
            if (have_seed) {
                cfg.seed = seed_override;
                cfg.synth.seed = seed_override;
            }
            cfg.validate();
            RunArtifacts artifacts;
            RunOutcome outcome =
                run_training(cfg, resolve_out_dir(out_dir), ood_audit, artifacts);
            if (!quiet)
                std::cout << "final acc_source=" << outcome.final_eval.acc_source
                          << " acc_target=" << outcome.final_eval.acc_target << "\n";
            return 0;
        }

        if (*sweep_cmd) {
            ggalign::TrainConfig base = ggalign::load_config(config_path);
            std::vector<SweepAxis> axes;
            for (const auto& s : sweep_params) axes.push_back(parse_sweep_param(s));

            fs::path root = resolve_out_dir(out_dir);
            fs::create_directories(root);
            std::ofstream agg(root / "sweep.csv");
            agg.precision(17);
            for (const auto& a : axes) agg << a.key << ',';
            agg << "acc_source,acc_target,l_cnc,l_na,l_node,total,mask_density,"
                   "metrics_checksum\n";

            std::vector<std::size_t> idx(axes.size(), 0);
            bool done = false;
            while (!done) {
                ggalign::TrainConfig cfg = base;
                std::string cell_name = "cell";
                for (std::size_t a = 0; a < axes.size(); ++a) {
                    const std::string& v = axes[a].values[idx[a]];
                    if (!cfg.apply(axes[a].key, v))
                        throw ggalign::ConfigError("unknown sweep parameter '" +
                                                   axes[a].key + "'");
                    cell_name += "_" + axes[a].key + "=" + v;
                }
                cfg.validate();
                RunArtifacts artifacts;
                RunOutcome outcome = run_training(cfg, root / cell_name, false, artifacts);
                for (std::size_t a = 0; a < axes.size(); ++a)
                    agg << axes[a].values[idx[a]] << ',';
                const auto& last = outcome.last_epoch;
                agg << outcome.final_eval.acc_source << ','
                    << outcome.final_eval.acc_target << ','
                    << last.losses.l_cnc << ',' << last.losses.l_na << ','
                    << last.losses.l_node << ',' << last.losses.total << ','
                    << last.mask_density << ','
                    << std::hex << fnv1a_file(artifacts.metrics_csv) << std::dec << "\n";

                // advance the Cartesian index
                std::size_t a = 0;
                for (; a < axes.size(); ++a) {
                    if (++idx[a] < axes[a].values.size()) break;
                    idx[a] = 0;
                }
                done = axes.empty() || a == axes.size();
            }
            return 0;
        }

        if (*eval_cmd) {
            ggalign::Model model = ggalign::load_checkpoint(checkpoint_path);
            ggalign::MetricsRecord rec = ggalign::evaluate(model, eval_batches);
            std::cout << metrics_to_json(rec).dump(2) << "\n";
            return 0;
        }

        if (*dump_cmd) return cmd_dump(checkpoint_path, what, dump_out);
    } catch (const ggalign::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
