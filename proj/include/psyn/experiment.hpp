#pragma once

#include <atomic>
#include <cmath>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "psyn/checkpoint.hpp"
#include "psyn/dataset.hpp"
#include "psyn/sim.hpp"
#include "psyn/speedup.hpp"

namespace psyn {

constexpr const char* kVersion = "psyn 0.1.0";
constexpr int kExitOk = 0;
constexpr int kExitDivergence = 2;
constexpr int kExitConfig = 64;

struct DatasetSpec {
    TaskKind task = TaskKind::linreg;
    int64_t n = 0;
    int64_t d = 0;
    double noise = 0.0;
    double cond = 1.0;
    double cv_fraction = 0.1;
};

struct ModelSpec {
    std::optional<ModelKind> kind;  // default follows the dataset task
    std::vector<int> hidden = {8};  // mlp hidden layer widths
};

// One parsed experiment file: a base cell plus optional sweep axes.
struct ExperimentConfig {
    DatasetSpec dataset;
    ModelSpec model;
    StrategyConfig strategy;
    std::vector<double> compute_time = {1.0};  // scalar broadcasts to all workers
    double exchange_cost = 0.0;
    int minibatch = 1;
    int epochs_max = 1;
    int warmup_epochs = 1;
    bool reshuffle = true;
    uint64_t seed = 42;
    std::vector<StrategyKind> sweep_strategy;
    std::vector<int> sweep_n_workers;
    std::vector<int> sweep_sync_period;
    std::vector<int> sweep_minibatch;
    std::string source_text;

    bool has_sweep() const {
        return !sweep_strategy.empty() || !sweep_n_workers.empty() ||
               !sweep_sync_period.empty() || !sweep_minibatch.empty();
    }
};

namespace detail {

inline std::string trim(std::string_view s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

}  // namespace detail

namespace detail {

inline void apply_config_key(ExperimentConfig& cfg, const std::string& key,
                             const std::string& val) {
    if (key == "dataset.task") cfg.dataset.task = task_from_string(val);
    else if (key == "dataset.n") cfg.dataset.n = parse_int(val);
    else if (key == "dataset.d") cfg.dataset.d = parse_int(val);
    else if (key == "dataset.noise") cfg.dataset.noise = parse_double(val);
    else if (key == "dataset.cond") cfg.dataset.cond = parse_double(val);
    else if (key == "dataset.cv_fraction") cfg.dataset.cv_fraction = parse_double(val);
    else if (key == "model.kind") cfg.model.kind = model_kind_from_string(val);
    else if (key == "model.hidden") {
        cfg.model.hidden.clear();
        for (auto& p : split_list(val))
            cfg.model.hidden.push_back(static_cast<int>(parse_int(p)));
        if (cfg.model.hidden.empty()) throw ConfigError("model.hidden: empty list");
    } else if (key == "strategy.kind") cfg.strategy.kind = strategy_from_string(val);
    else if (key == "strategy.n_workers")
        cfg.strategy.n_workers = static_cast<int>(parse_int(val));
    else if (key == "strategy.sync_period")
        cfg.strategy.sync_period = static_cast<int>(parse_int(val));
    else if (key == "strategy.lr") cfg.strategy.lr = parse_double(val);
    else if (key == "strategy.block_momentum") cfg.strategy.block_momentum = parse_double(val);
    else if (key == "strategy.block_lr") cfg.strategy.block_lr = parse_double(val);
    else if (key == "strategy.c_constant") cfg.strategy.c_constant = parse_double(val);
    else if (key == "strategy.elastic_alpha") cfg.strategy.elastic_alpha = parse_double(val);
    else if (key == "strategy.elastic_lambda") cfg.strategy.elastic_lambda = parse_double(val);
    else if (key == "sim.minibatch") cfg.minibatch = static_cast<int>(parse_int(val));
    else if (key == "sim.compute_time") {
        cfg.compute_time.clear();
        for (auto& p : split_list(val)) cfg.compute_time.push_back(parse_double(p));
        if (cfg.compute_time.empty()) throw ConfigError("sim.compute_time: empty list");
    } else if (key == "sim.exchange_cost") cfg.exchange_cost = parse_double(val);
    else if (key == "sim.epochs_max") cfg.epochs_max = static_cast<int>(parse_int(val));
    else if (key == "sim.warmup_epochs") cfg.warmup_epochs = static_cast<int>(parse_int(val));
    else if (key == "sim.reshuffle") cfg.reshuffle = parse_bool(key, val);
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(parse_int(val));
    else if (key == "sweep.strategy") {
        for (auto& p : split_list(val)) cfg.sweep_strategy.push_back(strategy_from_string(p));
    } else if (key == "sweep.n_workers") {
        for (auto& p : split_list(val))
            cfg.sweep_n_workers.push_back(static_cast<int>(parse_int(p)));
    } else if (key == "sweep.sync_period") {
        for (auto& p : split_list(val))
            cfg.sweep_sync_period.push_back(static_cast<int>(parse_int(p)));
    } else if (key == "sweep.minibatch") {
        for (auto& p : split_list(val))
            cfg.sweep_minibatch.push_back(static_cast<int>(parse_int(p)));
    } else {
        throw ConfigError("unknown config key: " + key);
    }
}

}  // namespace detail

// Flat `key = value` text with dotted sections and '#' comments. Unknown and
// duplicate keys are errors so typos never pass silently.
inline ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    cfg.source_text = text;
    std::set<std::string> seen;
    std::set<std::string> required = {"dataset.task", "dataset.n",     "dataset.d",
                                      "strategy.kind", "strategy.lr",  "sim.minibatch",
                                      "sim.epochs_max"};
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string s = detail::trim(line);
        if (s.empty() || s[0] == '#') continue;
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        std::string key = detail::trim(s.substr(0, eq));
        std::string val = detail::trim(s.substr(eq + 1));
        if (key.empty() || val.empty())
            throw ConfigError("line " + std::to_string(line_no) + ": empty key or value");
        if (!seen.insert(key).second) throw ConfigError("duplicate key: " + key);

        try {
            detail::apply_config_key(cfg, key, val);
        } catch (const ConfigError& e) {
            // every message names the offending key
            if (std::string(e.what()).find(key) == std::string::npos)
                throw ConfigError(key + ": " + e.what());
            throw;
        }
        required.erase(key);
    }
    if (!required.empty()) throw ConfigError("missing config key: " + *required.begin());
    if (cfg.dataset.n < 1 || cfg.dataset.d < 1)
        throw ConfigError("dataset.n and dataset.d must be >= 1");
    if (cfg.warmup_epochs < 0) throw ConfigError("sim.warmup_epochs must be >= 0");
    return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

// One resolved sweep cell.
struct Cell {
    StrategyKind kind;
    int n_workers;
    int sync_period;
    int minibatch;

    std::string name() const {
        return std::string(to_string(kind)) + "_w" + std::to_string(n_workers) + "_t" +
               std::to_string(sync_period) + "_mb" + std::to_string(minibatch);
    }
};

inline std::vector<Cell> resolve_cells(const ExperimentConfig& cfg) {
    auto strategies = cfg.sweep_strategy.empty()
                          ? std::vector<StrategyKind>{cfg.strategy.kind}
                          : cfg.sweep_strategy;
    auto workers = cfg.sweep_n_workers.empty() ? std::vector<int>{cfg.strategy.n_workers}
                                               : cfg.sweep_n_workers;
    auto periods = cfg.sweep_sync_period.empty() ? std::vector<int>{cfg.strategy.sync_period}
                                                 : cfg.sweep_sync_period;
    auto minibatches =
        cfg.sweep_minibatch.empty() ? std::vector<int>{cfg.minibatch} : cfg.sweep_minibatch;
    std::vector<Cell> cells;
    for (auto s : strategies)
        for (int w : workers)
            for (int p : periods)
                for (int mb : minibatches) cells.push_back({s, w, p, mb});
    return cells;
}

inline SimConfig make_sim_config(const ExperimentConfig& cfg, const Cell& cell) {
    SimConfig sim;
    sim.strategy = cfg.strategy;
    sim.strategy.kind = cell.kind;
    sim.strategy.n_workers = cell.n_workers;
    sim.strategy.sync_period = cell.sync_period;
    sim.minibatch = cell.minibatch;
    if (cfg.compute_time.size() == 1)
        sim.compute_time_per_minibatch.assign(cell.n_workers, cfg.compute_time[0]);
    else if (static_cast<int>(cfg.compute_time.size()) == cell.n_workers)
        sim.compute_time_per_minibatch = cfg.compute_time;
    else
        throw ConfigError("sim.compute_time: give one value or one per worker (" +
                          std::to_string(cell.n_workers) + ")");
    sim.exchange_cost = cfg.exchange_cost;
    sim.epochs_max = cfg.epochs_max;
    sim.seed = cfg.seed;
    sim.reshuffle = cfg.reshuffle;
    sim.strategy.validate();
    return sim;
}

inline Model initial_model(const ExperimentConfig& cfg) {
    ModelKind kind = cfg.model.kind.value_or(
        cfg.dataset.task == TaskKind::linreg    ? ModelKind::linear_regression
        : cfg.dataset.task == TaskKind::logreg  ? ModelKind::logistic_regression
                                                : ModelKind::mlp);
    std::vector<int> dims;
    dims.push_back(static_cast<int>(cfg.dataset.d));
    if (kind == ModelKind::mlp)
        dims.insert(dims.end(), cfg.model.hidden.begin(), cfg.model.hidden.end());
    dims.push_back(1);
    Model m = make_model(kind, dims);
    if (kind == ModelKind::mlp) {
        Rng rng(cfg.seed, streams::model_init);
        init_glorot(m, rng);
    }
    return m;
}

// dataset -> cv split -> warm start -> simulate; the shared pipeline behind
// `run` and every sweep cell.
inline RunResult execute_cell(const ExperimentConfig& cfg, const Cell& cell) {
    Dataset full = make_synthetic(cfg.dataset.task, cfg.dataset.n, cfg.dataset.d,
                                  cfg.dataset.noise, cfg.dataset.cond, cfg.seed);
    auto [train, cv] = cv_split(full, cfg.dataset.cv_fraction, cfg.seed);
    SimConfig sim = make_sim_config(cfg, cell);
    sim.validate(train);
    Model init = initial_model(cfg);
    Model model0 =
        warm_start(init, train, cfg.warmup_epochs, cfg.strategy.lr, cell.minibatch, cfg.seed);
    return run_simulation(sim, model0, train, cv);
}

namespace detail {

inline uint64_t hash_file(const std::filesystem::path& p) {
    auto bytes = read_file_bytes(p.string());
    return fnv1a64(bytes.data(), bytes.size());
}

inline double unix_now() {
    return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

inline nlohmann::json dataset_json(const DatasetSpec& d) {
    return {{"task", to_string(d.task)}, {"n", d.n},         {"d", d.d},
            {"noise", d.noise},          {"cond", d.cond},   {"cv_fraction", d.cv_fraction}};
}

}  // namespace detail

// Write curve/trace/checkpoint plus a checksummed manifest into `dir`.
inline void write_run_artifacts(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                                const Cell& cell, const RunResult& res, double wall_start) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "config.cfg", std::ios::binary);
        out << cfg.source_text;
    }
    {
        std::ofstream out(dir / "curve.csv", std::ios::binary);
        write_curve_csv(out, res.learning_curve);
    }
    {
        std::ofstream out(dir / "trace.tsv", std::ios::binary);
        write_trace_tsv(out, res.trace);
    }
    save_checkpoint((dir / "final.ckpt").string(), res.final_model());

    nlohmann::json manifest;
    manifest["version"] = kVersion;
    manifest["config_hash"] = hex64(fnv1a64(cfg.source_text));
    manifest["status"] = res.diverged ? "divergence" : "converged";
    manifest["strategy"] = to_string(cell.kind);
    manifest["n_workers"] = cell.n_workers;
    manifest["sync_period"] = cell.sync_period;
    manifest["minibatch"] = cell.minibatch;
    manifest["seed"] = cfg.seed;
    manifest["dataset"] = detail::dataset_json(cfg.dataset);
    manifest["model"] = {{"kind", to_string(res.model_kind)}, {"layer_dims", res.layer_dims}};
    manifest["epochs"] = res.epochs_run;
    manifest["stopped_by_schedule"] = res.stopped_by_schedule;
    // divergent runs can carry infinite losses, which JSON cannot represent
    manifest["final_train_loss"] = std::isfinite(res.final_train_loss())
                                       ? nlohmann::json(res.final_train_loss())
                                       : nlohmann::json();
    manifest["final_cv_loss"] = std::isfinite(res.final_cv_loss())
                                    ? nlohmann::json(res.final_cv_loss())
                                    : nlohmann::json();
    manifest["simulated_wall_clock"] = res.simulated_wall_clock;
    manifest["wall_start_unix"] = wall_start;
    manifest["wall_end_unix"] = detail::unix_now();
    nlohmann::json artifacts;
    for (const char* name : {"config.cfg", "curve.csv", "trace.tsv", "final.ckpt"})
        artifacts[name] = hex64(detail::hash_file(dir / name));
    manifest["artifacts"] = artifacts;
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << manifest.dump(2) << '\n';
}

// Load a run's manifest and re-checksum every artifact it references.
inline nlohmann::json verify_manifest(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::path mp = dir / "manifest.json";
    if (!fs::exists(mp)) throw IoError("no manifest in " + dir.string());
    nlohmann::json manifest = nlohmann::json::parse(detail::read_file_bytes(mp.string()));
    for (auto& [name, hash] : manifest.at("artifacts").items()) {
        fs::path p = dir / name;
        if (!fs::exists(p)) throw IoError(dir.string() + ": missing artifact " + name);
        if (hex64(detail::hash_file(p)) != hash.get<std::string>())
            throw IoError(dir.string() + ": checksum mismatch for " + name);
    }
    return manifest;
}

struct RunStatus {
    std::filesystem::path dir;
    bool diverged = false;
};

// The `run` verb: one cell, one directory.
inline RunStatus run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
    if (cfg.has_sweep())
        throw ConfigError("config declares sweep axes; use the sweep command");
    double wall_start = detail::unix_now();
    Cell cell{cfg.strategy.kind, cfg.strategy.n_workers, cfg.strategy.sync_period,
              cfg.minibatch};
    RunResult res = execute_cell(cfg, cell);
    write_run_artifacts(dir, cfg, cell, res, wall_start);
    return {dir, res.diverged};
}

struct ComparisonRow {
    std::string run;
    std::string strategy;
    int n_workers = 1;
    int sync_period = 1;
    int minibatch = 1;
    int epochs = 0;
    double final_train_loss = 0.0;
    double final_cv_loss = 0.0;
    bool diverged = false;
    std::optional<double> speedup;
};

// Comparison table over finished runs sharing one dataset/model spec.
// Speedup is per-epoch simulated time against the first single-worker run.
inline std::vector<ComparisonRow> compare_runs(const std::vector<std::filesystem::path>& dirs) {
    if (dirs.empty()) throw ConfigError("compare: no run directories given");
    std::vector<nlohmann::json> manifests;
    for (const auto& d : dirs) manifests.push_back(verify_manifest(d));
    for (size_t i = 1; i < manifests.size(); ++i) {
        if (manifests[i].at("dataset") != manifests[0].at("dataset") ||
            manifests[i].at("model") != manifests[0].at("model"))
            throw ConfigError("compare: " + dirs[i].string() +
                              " was produced on a different dataset/model spec");
    }
    std::optional<double> ref_epoch_time;
    for (const auto& m : manifests) {
        if (m.at("n_workers").get<int>() == 1 && m.at("epochs").get<int>() > 0) {
            ref_epoch_time = m.at("simulated_wall_clock").get<double>() /
                             m.at("epochs").get<int>();
            break;
        }
    }
    std::vector<ComparisonRow> rows;
    for (size_t i = 0; i < manifests.size(); ++i) {
        const auto& m = manifests[i];
        ComparisonRow r;
        r.run = dirs[i].filename().string();
        r.strategy = m.at("strategy").get<std::string>();
        r.n_workers = m.at("n_workers").get<int>();
        r.sync_period = m.at("sync_period").get<int>();
        r.minibatch = m.at("minibatch").get<int>();
        r.epochs = m.at("epochs").get<int>();
        const auto& train_loss = m.at("final_train_loss");
        const auto& cv_loss = m.at("final_cv_loss");
        r.final_train_loss = train_loss.is_number()
                                 ? train_loss.get<double>()
                                 : std::numeric_limits<double>::infinity();
        r.final_cv_loss = cv_loss.is_number() ? cv_loss.get<double>()
                                              : std::numeric_limits<double>::infinity();
        r.diverged = m.at("status").get<std::string>() == "divergence";
        if (ref_epoch_time && r.epochs > 0) {
            double epoch_time = m.at("simulated_wall_clock").get<double>() / r.epochs;
            if (epoch_time > 0.0) r.speedup = *ref_epoch_time / epoch_time;
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

inline void write_comparison_csv(std::ostream& out, const std::vector<ComparisonRow>& rows) {
    out << "run,strategy,n_workers,sync_period,minibatch,epochs,final_train_loss,final_cv_loss,"
           "speedup\n";
    for (const auto& r : rows) {
        out << r.run << ',' << r.strategy << ',' << r.n_workers << ',' << r.sync_period << ','
            << r.minibatch << ',' << r.epochs << ',';
        if (r.diverged)
            out << "divergence,divergence,";
        else
            out << format_double(r.final_train_loss) << ',' << format_double(r.final_cv_loss)
                << ',';
        if (r.speedup) out << format_double(*r.speedup);
        out << '\n';
    }
}

// The `sweep` verb: one run directory per cell plus a summary table; cells
// share nothing and may run on several threads.
inline std::vector<std::filesystem::path> run_sweep(const ExperimentConfig& cfg,
                                                    const std::filesystem::path& root,
                                                    int jobs = 1) {
    namespace fs = std::filesystem;
    auto cells = resolve_cells(cfg);
    fs::create_directories(root);
    std::vector<fs::path> dirs(cells.size());
    std::atomic<size_t> next{0};
    std::vector<std::string> errors(cells.size());
    auto work = [&]() {
        for (size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1)) {
            try {
                double wall_start = detail::unix_now();
                RunResult res = execute_cell(cfg, cells[i]);
                dirs[i] = root / cells[i].name();
                write_run_artifacts(dirs[i], cfg, cells[i], res, wall_start);
            } catch (const std::exception& e) {
                errors[i] = cells[i].name() + ": " + e.what();
            }
        }
    };
    jobs = std::max(1, jobs);
    if (jobs == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    for (const auto& e : errors)
        if (!e.empty()) throw ConfigError("sweep cell failed: " + e);
    auto rows = compare_runs(dirs);
    std::ofstream out(root / "summary.csv", std::ios::binary);
    write_comparison_csv(out, rows);
    return dirs;
}

// Long-format learning-curve series for external plotting.
inline void reproduce_figures(const std::vector<std::filesystem::path>& dirs,
                              std::ostream& out, std::ostream& warnings = std::cerr) {
    out << "strategy,n_workers,epoch,cv_loss\n";
    for (const auto& dir : dirs) {
        nlohmann::json manifest;
        std::string curve;
        try {
            manifest = verify_manifest(dir);
            curve = detail::read_file_bytes((dir / "curve.csv").string());
        } catch (const std::exception& e) {
            warnings << "warning: skipping " << dir.string() << ": " << e.what() << '\n';
            continue;
        }
        std::istringstream in(curve);
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto fields = detail::split_list(line);
            if (fields.size() < 5) continue;
            out << manifest.at("strategy").get<std::string>() << ','
                << manifest.at("n_workers").get<int>() << ',' << fields[0] << ',' << fields[2]
                << '\n';
        }
    }
}

// Observation tables land as CSV rows `n_workers,sync_period,minibatch,speedup`.
inline std::vector<SpeedupObservation> read_observations_csv(std::istream& in) {
    std::vector<SpeedupObservation> obs;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        std::string s = detail::trim(line);
        if (s.empty() || s[0] == '#') continue;
        if (first && s.find("n_workers") != std::string::npos) {
            first = false;
            continue;
        }
        first = false;
        auto fields = detail::split_list(s);
        if (fields.size() != 4)
            throw ConfigError("observations: expected 4 fields, got '" + s + "'");
        SpeedupObservation o;
        o.n_workers = static_cast<int>(parse_int(fields[0]));
        o.sync_period = static_cast<int>(parse_int(fields[1]));
        o.minibatch = static_cast<int>(parse_int(fields[2]));
        o.measured_speedup = parse_double(fields[3]);
        obs.push_back(o);
    }
    if (obs.empty()) throw ConfigError("observations: no rows");
    return obs;
}

inline void write_fit_report_csv(std::ostream& out, std::span<const SpeedupObservation> obs,
                                 const SpeedupFit& fit, FitStructure structure) {
    out << "type,name,n_workers,sync_period,minibatch,measured,predicted,residual\n";
    out << "param,utilization" << (fit.utilization_fixed ? ":fixed" : "") << ",,,,,"
        << format_double(fit.utilization) << ",\n";
    for (const auto& [group, ratio] : fit.ratio) {
        out << "param,ratio" << (structure == FitStructure::shared_ratio
                                     ? std::string(":shared")
                                     : ":tau" + std::to_string(group))
            << ",,,,," << format_double(ratio) << ",\n";
    }
    out << "param,rss,,,,," << format_double(fit.rss) << ",\n";
    for (size_t i = 0; i < obs.size(); ++i) {
        out << (fit.superlinear[i] ? "obs,superlinear," : "obs,,") << obs[i].n_workers << ','
            << obs[i].sync_period << ',' << obs[i].minibatch << ','
            << format_double(obs[i].measured_speedup) << ',' << format_double(fit.predicted[i])
            << ',' << format_double(fit.residual[i]) << '\n';
    }
}

}  // namespace psyn
