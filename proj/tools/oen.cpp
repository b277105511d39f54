// oen: synthetic-benchmark training and evaluation for orthogonal ensembles.
// Subcommands: gen / train / eval / report. All randomness flows from one
// --seed per command; outputs are written atomically and re-runs with the
// same inputs are byte-identical (manifest wall-clock field aside).

#include <chrono>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "oen/checkpoint.hpp"
#include "oen/config.hpp"
#include "oen/fileio.hpp"
#include "oen/manifest.hpp"
#include "oen/metrics.hpp"
#include "oen/synth.hpp"
#include "oen/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitTraining = 4;
constexpr int kExitEval = 5;

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// "dice.1", "brier", "stratified_brier.1", "prediction_variance"
std::map<std::string, double> flatten_metrics(const nlohmann::json& metrics) {
    std::map<std::string, double> out;
    for (const auto& [key, value] : metrics.items()) {
        if (value.is_number()) {
            out[key] = value.get<double>();
        } else if (value.is_object()) {
            for (const auto& [sub, v] : value.items()) {
                if (v.is_number()) out[key + "." + sub] = v.get<double>();
            }
        }
    }
    return out;
}

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;  // population
    int n = 0;
};

std::map<std::string, Aggregate> aggregate_rows(const std::vector<std::map<std::string, double>>& rows) {
    std::map<std::string, std::vector<double>> columns;
    for (const auto& row : rows) {
        for (const auto& [key, v] : row) columns[key].push_back(v);
    }
    std::map<std::string, Aggregate> out;
    for (const auto& [key, vals] : columns) {
        Aggregate a;
        a.n = static_cast<int>(vals.size());
        for (double v : vals) a.mean += v;
        a.mean /= vals.size();
        for (double v : vals) a.stddev += (v - a.mean) * (v - a.mean);
        a.stddev = std::sqrt(a.stddev / vals.size());
        out[key] = a;
    }
    return out;
}

int cmd_gen(const std::string& config_path, const std::string& out_path, std::uint64_t* seed_override) {
    const Clock::time_point t0 = Clock::now();
    oen::RunConfig cfg;
    try {
        cfg = oen::load_run_config(config_path);
    } catch (const std::exception& ex) {
        std::cerr << "gen: " << ex.what() << "\n";
        return kExitConfig;
    }
    if (seed_override != nullptr) cfg.gen.seed = *seed_override;
    try {
        const oen::SynthDataset ds = oen::generate(cfg.gen);
        oen::save_dataset(ds, out_path);
        oen::ManifestInfo info;
        info.command = "gen";
        info.config_snapshot = oen::run_config_to_json(cfg);
        info.inputs = {config_path};
        info.outputs = {out_path};
        info.seed = cfg.gen.seed;
        info.wall_ms = elapsed_ms(t0);
        oen::write_manifest(out_path + ".manifest.json", info);
    } catch (const std::exception& ex) {
        std::cerr << "gen: " << ex.what() << "\n";
        return kExitData;
    }
    std::cout << "gen: wrote " << out_path << "\n";
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_path, const std::string& mode_name_arg,
              int n_members, const std::string& out_path, std::uint64_t* seed_override, int* jobs_override) {
    const Clock::time_point t0 = Clock::now();
    oen::RunConfig cfg;
    try {
        cfg = oen::load_run_config(config_path);
        cfg.train.mode = oen::mode_from_name(mode_name_arg);
        if (seed_override != nullptr) cfg.train.seed = *seed_override;
        if (jobs_override != nullptr) cfg.train.jobs = *jobs_override;
        cfg.train.validate();
        if (n_members < 1) throw oen::ConfigError("train: --members must be >= 1");
    } catch (const std::exception& ex) {
        std::cerr << "train: " << ex.what() << "\n";
        return kExitConfig;
    }

    oen::SynthDataset ds;
    try {
        ds = oen::load_dataset(data_path);
    } catch (const std::exception& ex) {
        std::cerr << "train: " << ex.what() << "\n";
        return kExitData;
    }
    if (ds.params.channels != cfg.arch.in_channels || ds.params.num_classes != cfg.arch.num_classes) {
        std::cerr << "train: dataset (" << ds.params.channels << " channels, " << ds.params.num_classes
                  << " classes) does not match arch (" << cfg.arch.in_channels << ", " << cfg.arch.num_classes
                  << ")\n";
        return kExitConfig;
    }
    if (cfg.train.patch_size > ds.params.height || cfg.train.patch_size > ds.params.width) {
        std::cerr << "train: patch_size " << cfg.train.patch_size << " exceeds dataset extents "
                  << ds.params.height << "x" << ds.params.width << "\n";
        return kExitConfig;
    }

    try {
        const oen::BuildResult result = oen::build_ensemble(cfg.train, cfg.arch, ds, n_members);

        oen::save_ensemble(result.ensemble, out_path);

        std::ostringstream log;
        for (std::size_t m = 0; m < result.logs.size(); ++m) {
            for (const oen::EpochRecord& r : result.logs[m].epochs) {
                nlohmann::json line{{"member", m},          {"epoch", r.epoch},
                                    {"lr", r.lr},           {"seg_loss", r.seg_loss_mean},
                                    {"self_orth", r.self_orth_start},
                                    {"inter_orth", r.inter_orth_start},
                                    {"penalty", r.penalty_start}};
                log << line.dump() << "\n";
            }
        }
        oen::atomic_write_file(out_path + ".log.jsonl", log.str());

        nlohmann::json members = nlohmann::json::array();
        for (std::size_t m = 0; m < result.ensemble.members.size(); ++m) {
            std::ostringstream hash;
            hash << std::hex << oen::weight_hash(result.ensemble.members[m]);
            members.push_back({{"index", result.ensemble.meta[m].index},
                               {"seed", result.ensemble.meta[m].seed},
                               {"lambda", result.ensemble.meta[m].lambda},
                               {"weight_hash", hash.str()}});
        }
        oen::ManifestInfo info;
        info.command = "train";
        info.config_snapshot = oen::run_config_to_json(cfg);
        info.inputs = {config_path, data_path};
        info.outputs = {out_path, out_path + ".log.jsonl"};
        info.seed = cfg.train.seed;
        info.wall_ms = elapsed_ms(t0);
        info.extra = {{"mode", oen::mode_name(cfg.train.mode)}, {"members", members}};
        oen::write_manifest(out_path + ".manifest.json", info);
    } catch (const oen::TrainingError& ex) {
        std::cerr << "train: " << ex.what() << "\n";
        return kExitTraining;
    } catch (const std::exception& ex) {
        std::cerr << "train: " << ex.what() << "\n";
        return kExitTraining;
    }
    std::cout << "train: wrote " << out_path << " (" << n_members << " members, mode " << mode_name_arg << ")\n";
    return kExitOk;
}

int cmd_eval(const std::string& ensemble_path, const std::string& data_path, std::vector<int> sizes, int repeats,
             std::uint64_t seed, const std::string& out_path, const std::string& split, int patch_size, int stride,
             bool per_image, bool variance_foreground_only) {
    const Clock::time_point t0 = Clock::now();
    oen::Ensemble ens;
    oen::SynthDataset ds;
    try {
        ens = oen::load_ensemble(ensemble_path);
        ds = oen::load_dataset(data_path);
    } catch (const std::exception& ex) {
        std::cerr << "eval: " << ex.what() << "\n";
        return kExitData;
    }

    const int pool = static_cast<int>(ens.members.size());
    for (int s : sizes) {
        if (s < 1 || s > pool) {
            std::cerr << "eval: subset size " << s << " exceeds pool size " << pool << "\n";
            return kExitEval;
        }
    }

    try {
        oen::EvalOptions opts;
        opts.patch_size = patch_size;
        opts.stride = stride;
        opts.variance_foreground_only = variance_foreground_only;

        // stitched maps of every pool member, reused across subsets
        const std::vector<int>& indices = ds.split(split);
        if (indices.empty()) throw std::invalid_argument("eval: split '" + split + "' is empty");
        std::vector<std::vector<oen::ProbMap>> pool_maps;  // [image][member]
        std::vector<const oen::LabelMap*> targets;
        for (int idx : indices) {
            std::vector<oen::ProbMap> maps;
            maps.reserve(static_cast<std::size_t>(pool));
            for (const oen::SegNet& net : ens.members) {
                maps.push_back(oen::stitched_probmap(net, ds.images[static_cast<std::size_t>(idx)], patch_size,
                                                     stride));
            }
            pool_maps.push_back(std::move(maps));
            targets.push_back(&ds.masks[static_cast<std::size_t>(idx)]);
        }

        const std::string mode = ens.meta.empty() ? "unknown" : oen::mode_name(ens.meta.front().mode);
        std::ostringstream out;
        for (int size : sizes) {
            const std::vector<std::vector<int>> subsets =
                oen::draw_member_subsets(pool, size, repeats, oen::Rng::mix(seed, static_cast<std::uint64_t>(size)));
            std::vector<std::map<std::string, double>> rows;
            for (std::size_t rep = 0; rep < subsets.size(); ++rep) {
                std::vector<std::vector<oen::ProbMap>> subset_maps;
                subset_maps.reserve(pool_maps.size());
                for (const auto& image_maps : pool_maps) {
                    std::vector<oen::ProbMap> maps;
                    maps.reserve(subsets[rep].size());
                    for (int m : subsets[rep]) maps.push_back(image_maps[static_cast<std::size_t>(m)]);
                    subset_maps.push_back(std::move(maps));
                }
                oen::MetricsReport report = oen::evaluate_from_member_maps(subset_maps, targets, opts);
                report.split = split;

                nlohmann::json rec{{"type", "subensemble"},
                                   {"mode", mode},
                                   {"size", size},
                                   {"repeat", rep},
                                   {"members", subsets[rep]},
                                   {"metrics", oen::image_metrics_to_json(report.aggregate)}};
                if (per_image) rec["report"] = oen::report_to_json(report);
                out << rec.dump() << "\n";
                rows.push_back(flatten_metrics(oen::image_metrics_to_json(report.aggregate)));
            }
            nlohmann::json mean, stddev;
            for (const auto& [key, agg] : aggregate_rows(rows)) {
                mean[key] = agg.mean;
                stddev[key] = agg.stddev;
            }
            out << nlohmann::json{{"type", "aggregate"},
                                  {"mode", mode},
                                  {"size", size},
                                  {"repeats", static_cast<int>(subsets.size())},
                                  {"mean", mean},
                                  {"std", stddev}}
                       .dump()
                << "\n";
        }
        oen::atomic_write_file(out_path, out.str());

        oen::ManifestInfo info;
        info.command = "eval";
        info.config_snapshot = {{"sizes", sizes},   {"repeats", repeats}, {"split", split},
                                {"patch", patch_size}, {"stride", stride}};
        info.inputs = {ensemble_path, data_path};
        info.outputs = {out_path};
        info.seed = seed;
        info.wall_ms = elapsed_ms(t0);
        oen::write_manifest(out_path + ".manifest.json", info);
    } catch (const std::exception& ex) {
        std::cerr << "eval: " << ex.what() << "\n";
        return kExitEval;
    }
    std::cout << "eval: wrote " << out_path << "\n";
    return kExitOk;
}

int cmd_report(const std::vector<std::string>& eval_paths, const std::string& out_path) {
    const Clock::time_point t0 = Clock::now();
    struct Key {
        std::string mode;
        int size;
        bool operator<(const Key& o) const { return mode != o.mode ? mode < o.mode : size < o.size; }
    };
    std::map<Key, std::vector<std::map<std::string, double>>> groups;
    try {
        for (const std::string& path : eval_paths) {
            std::istringstream in(oen::read_file_bytes(path));
            std::string line;
            int line_no = 0;
            bool any = false;
            while (std::getline(in, line)) {
                ++line_no;
                if (line.empty()) continue;
                nlohmann::json rec;
                try {
                    rec = nlohmann::json::parse(line);
                } catch (const nlohmann::json::exception& ex) {
                    throw std::runtime_error("report: " + path + " line " + std::to_string(line_no) + ": " +
                                             ex.what());
                }
                if (!rec.contains("type")) {
                    throw std::runtime_error("report: " + path + " line " + std::to_string(line_no) +
                                             ": missing field 'type'");
                }
                if (rec["type"] != "subensemble") continue;
                if (!rec.contains("mode") || !rec.contains("size") || !rec.contains("metrics")) {
                    throw std::runtime_error("report: " + path + " line " + std::to_string(line_no) +
                                             ": subensemble record missing mode/size/metrics");
                }
                groups[{rec["mode"].get<std::string>(), rec["size"].get<int>()}].push_back(
                    flatten_metrics(rec["metrics"]));
                any = true;
            }
            if (!any) throw std::runtime_error("report: " + path + ": no subensemble records");
        }

        std::ostringstream jsonl, table;
        table << "mode        size  metric                    mean        std         n\n";
        table << "---------------------------------------------------------------------\n";
        for (const auto& [key, rows] : groups) {
            for (const auto& [metric, agg] : aggregate_rows(rows)) {
                jsonl << nlohmann::json{{"mode", key.mode}, {"size", key.size},   {"metric", metric},
                                        {"mean", agg.mean}, {"std", agg.stddev},  {"n", agg.n}}
                             .dump()
                      << "\n";
                std::ostringstream row;
                row.setf(std::ios::left);
                row.width(12);
                row << key.mode;
                row.width(6);
                row << key.size;
                row.width(26);
                row << metric;
                row.setf(std::ios::fixed);
                row.precision(6);
                row << agg.mean << "  " << agg.stddev << "  " << agg.n;
                table << row.str() << "\n";
            }
        }
        oen::atomic_write_file(out_path + ".jsonl", jsonl.str());
        oen::atomic_write_file(out_path + ".txt", table.str());
        std::cout << table.str();

        oen::ManifestInfo info;
        info.command = "report";
        info.inputs = eval_paths;
        info.outputs = {out_path + ".jsonl", out_path + ".txt"};
        info.wall_ms = elapsed_ms(t0);
        oen::write_manifest(out_path + ".manifest.json", info);
    } catch (const std::exception& ex) {
        std::cerr << ex.what() << "\n";
        return kExitEval;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"orthogonal ensemble networks: synthetic segmentation benchmark"};
    app.footer(
        "Exit codes: 0 ok, 2 config error, 3 data/generation error, 4 training error,\n"
        "            5 evaluation/report error.");
    app.require_subcommand(1);

    std::string config_path, data_path, out_path, ensemble_path, mode, split = "test";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int members = 1, repeats = 10, patch = 16, stride = 8, jobs = 0;
    std::vector<int> sizes{1, 3, 5};
    std::vector<std::string> eval_paths;
    bool per_image = false, variance_fg = false;

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    gen->add_option("--config", config_path, "run config (JSON)")->required();
    gen->add_option("--out", out_path, "output dataset container")->required();
    gen->add_option("--seed", seed, "override gen.seed")->each([&](const std::string&) { seed_set = true; });

    CLI::App* train = app.add_subcommand("train", "train an ensemble sequentially");
    train->add_option("--config", config_path, "run config (JSON)")->required();
    train->add_option("--data", data_path, "dataset container")->required();
    train->add_option("--mode", mode, "random | self_orth | inter_orth")->required();
    train->add_option("--members", members, "ensemble size")->required();
    train->add_option("--out", out_path, "output ensemble container")->required();
    train->add_option("--seed", seed, "override train.seed")->each([&](const std::string&) { seed_set = true; });
    train->add_option("--jobs", jobs, "parallel member training (random/self_orth)");

    CLI::App* eval = app.add_subcommand("eval", "evaluate seeded member subsets of a trained pool");
    eval->add_option("--ensemble", ensemble_path, "ensemble container")->required();
    eval->add_option("--data", data_path, "dataset container")->required();
    eval->add_option("--sizes", sizes, "subset sizes (default 1 3 5)");
    eval->add_option("--repeats", repeats, "seeded subset draws per size");
    eval->add_option("--seed", seed, "subset draw seed")->required();
    eval->add_option("--out", out_path, "output metrics records (JSONL)")->required();
    eval->add_option("--split", split, "dataset split (default test)");
    eval->add_option("--patch", patch, "sliding-window patch size");
    eval->add_option("--stride", stride, "sliding-window stride");
    eval->add_flag("--per-image", per_image, "include per-image metrics in each record");
    eval->add_flag("--variance-foreground-only", variance_fg, "restrict prediction variance to lesion pixels");

    CLI::App* report = app.add_subcommand("report", "merge eval outputs into a comparison table");
    report->add_option("inputs", eval_paths, "eval JSONL files")->required();
    report->add_option("--out", out_path, "output base path (.txt and .jsonl)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_gen(config_path, out_path, seed_set ? &seed : nullptr);
        if (train->parsed()) {
            return cmd_train(config_path, data_path, mode, members, out_path, seed_set ? &seed : nullptr,
                             jobs > 0 ? &jobs : nullptr);
        }
        if (eval->parsed()) {
            return cmd_eval(ensemble_path, data_path, sizes, repeats, seed, out_path, split, patch, stride,
                            per_image, variance_fg);
        }
        if (report->parsed()) return cmd_report(eval_paths, out_path);
    } catch (const std::exception& ex) {
        std::cerr << "oen: " << ex.what() << "\n";
        return 1;
    }
    return kExitConfig;
}
