// Command-line front end: run / sweep / compare / fit-speedup /
// reproduce-figures over psyn experiment configs.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "psyn/psyn.hpp"

namespace fs = std::filesystem;

namespace {

fs::path output_root(const std::string& out_flag) {
    if (!out_flag.empty()) return out_flag;
    if (const char* env = std::getenv("PSYN_OUT"); env && *env) return env;
    return "runs";
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw psyn::IoError("cannot write " + path);
    return f;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"psyn: deterministic data-parallel SGD laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_flag, obs_path, structure = "shared";
    std::optional<uint64_t> seed_override;
    std::optional<double> fix_utilization;
    int jobs = 1;
    std::vector<std::string> dirs;

    auto* run = app.add_subcommand("run", "execute one experiment config");
    run->add_option("--config", config_path, "experiment config file")->required();
    run->add_option("--out", out_flag, "output directory (default $PSYN_OUT or ./runs)");
    run->add_option("--seed", seed_override, "override the config seed");

    auto* sweep = app.add_subcommand("sweep", "run every cell of the config's sweep axes");
    sweep->add_option("--config", config_path, "experiment config file")->required();
    sweep->add_option("--out", out_flag, "output root (default $PSYN_OUT or ./runs)");
    sweep->add_option("--seed", seed_override, "override the config seed");
    sweep->add_option("--jobs", jobs, "parallel sweep cells")->check(CLI::PositiveNumber);

    auto* compare = app.add_subcommand("compare", "tabulate finished runs");
    compare->add_option("dirs", dirs, "run directories")->required()->expected(-1);
    compare->add_option("--out", out_flag, "write the CSV here instead of stdout");

    auto* fit = app.add_subcommand("fit-speedup", "fit the speedup model to a measurement table");
    fit->add_option("--csv", obs_path, "observations CSV (n_workers,sync_period,minibatch,speedup)")
        ->required();
    fit->add_option("--structure", structure, "shared | per-period")
        ->check(CLI::IsMember({"shared", "per-period"}));
    fit->add_option("--fix-utilization", fix_utilization, "pin the utilization factor");
    fit->add_option("--out", out_flag, "write the report here instead of stdout");

    auto* figures = app.add_subcommand("reproduce-figures",
                                       "emit long-format learning-curve CSV from runs");
    figures->add_option("dirs", dirs, "run directories")->required()->expected(-1);
    figures->add_option("--out", out_flag, "write the CSV here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return psyn::kExitConfig;
    }

    try {
        if (run->parsed()) {
            auto cfg = psyn::parse_config_file(config_path);
            if (seed_override) cfg.seed = *seed_override;
            fs::path dir = out_flag.empty()
                               ? output_root("") / fs::path(config_path).stem()
                               : fs::path(out_flag);
            auto status = psyn::run_experiment(cfg, dir);
            std::cout << status.dir.string() << '\n';
            return status.diverged ? psyn::kExitDivergence : psyn::kExitOk;
        }
        if (sweep->parsed()) {
            auto cfg = psyn::parse_config_file(config_path);
            if (seed_override) cfg.seed = *seed_override;
            fs::path root = out_flag.empty()
                                ? output_root("") / fs::path(config_path).stem()
                                : fs::path(out_flag);
            auto cell_dirs = psyn::run_sweep(cfg, root, jobs);
            for (const auto& d : cell_dirs) std::cout << d.string() << '\n';
            return psyn::kExitOk;
        }
        if (compare->parsed()) {
            std::vector<fs::path> paths(dirs.begin(), dirs.end());
            auto rows = psyn::compare_runs(paths);
            if (out_flag.empty()) {
                psyn::write_comparison_csv(std::cout, rows);
            } else {
                auto f = open_out(out_flag);
                psyn::write_comparison_csv(f, rows);
            }
            return psyn::kExitOk;
        }
        if (fit->parsed()) {
            std::ifstream in(obs_path);
            if (!in) throw psyn::ConfigError("cannot open observations: " + obs_path);
            auto obs = psyn::read_observations_csv(in);
            auto fs_kind = structure == "shared" ? psyn::FitStructure::shared_ratio
                                                 : psyn::FitStructure::per_period_ratio;
            auto fitted = psyn::fit_model(obs, fs_kind, fix_utilization);
            if (out_flag.empty()) {
                psyn::write_fit_report_csv(std::cout, obs, fitted, fs_kind);
            } else {
                auto f = open_out(out_flag);
                psyn::write_fit_report_csv(f, obs, fitted, fs_kind);
            }
            return psyn::kExitOk;
        }
        if (figures->parsed()) {
            std::vector<fs::path> paths(dirs.begin(), dirs.end());
            if (out_flag.empty()) {
                psyn::reproduce_figures(paths, std::cout);
            } else {
                auto f = open_out(out_flag);
                psyn::reproduce_figures(paths, f);
            }
            return psyn::kExitOk;
        }
    } catch (const psyn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return psyn::kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return psyn::kExitConfig;
    } catch (const psyn::IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return psyn::kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return psyn::kExitOk;
}
