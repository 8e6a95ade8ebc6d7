#pragma once

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "drnn/bounds.hpp"
#include "drnn/config.hpp"
#include "drnn/errors.hpp"
#include "drnn/experiments.hpp"
#include "drnn/io.hpp"
#include "drnn/ntk.hpp"
#include "drnn/teacher.hpp"
#include "drnn/training.hpp"
#include "drnn/version.hpp"

namespace drnn {

enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitConfig = 2 };

inline constexpr const char* kOutputDirEnv = "DRNN_OUTPUT_DIR";

/// Flags that override the config file. Unset flags leave it untouched.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> threads, m, n, T, d, t, points;
    std::optional<double> alpha, eta, delta, epsilon;
    std::optional<long> tau;
    std::optional<std::int64_t> mcSamples, nSamples;
    std::optional<std::string> variant, mode;
    std::optional<double> rhoW, rhoU, rhoC;

    void apply(RunConfig& cfg) const {
        if (seed) cfg.seed = *seed;
        if (threads) cfg.threads = *threads;
        if (m) cfg.m = *m;
        if (n) cfg.n = *n;
        if (T) cfg.T = *T;
        if (d) cfg.d = *d;
        if (alpha) cfg.alpha = *alpha;
        if (delta) cfg.delta = *delta;
        if (epsilon) cfg.epsilon = *epsilon;
        if (mcSamples) cfg.mcSamples = *mcSamples;
        if (tau) cfg.train.tau = *tau;
        if (eta) cfg.train.eta = *eta;
        if (variant) cfg.train.variant = variant_from_string(*variant);
        if (mode) cfg.kernel.mode = gram_mode_from_string(*mode);
        if (nSamples) cfg.kernel.nSamples = *nSamples;
        if (t) cfg.kernel.t = *t;
        if (points) cfg.kernel.points = *points;
        if (rhoW || rhoU || rhoC) {
            ProjectionRadii r = cfg.effective_radii().value_or(ProjectionRadii{});
            if (rhoW) r.rhoW = *rhoW;
            if (rhoU) r.rhoU = *rhoU;
            if (rhoC) r.rhoC = *rhoC;
            cfg.radii = r;
            cfg.radiiFromNu = false;
        }
    }
};

namespace detail {

inline void print_paths(std::ostream& out, const fs::path& dir, const json& manifest) {
    for (const auto& o : manifest.at("outputs")) out << (dir / o.at("file").get<std::string>()).string() << '\n';
    out << (dir / "manifest.json").string() << '\n';
}

inline Dataset dataset_for(const RunConfig& cfg, const std::string& datasetDir) {
    if (!datasetDir.empty()) return load_dataset(datasetDir);
    return make_dataset(cfg.teacher(), cfg.n, cfg.d, cfg.T, cfg.input_seed(), cfg.threads);
}

inline int cmd_train(const RunConfig& cfg, const std::string& datasetDir, const fs::path& dir, std::ostream& out) {
    const Dataset ds = dataset_for(cfg, datasetDir);
    TrainOptions opt;
    opt.variant = cfg.train.variant;
    opt.init = {cfg.m, ds.dim(), cfg.alpha, cfg.init_seed()};
    opt.tau = cfg.train.tau;
    opt.act = cfg.act();
    opt.threads = cfg.threads;
    opt.historyStride = cfg.train.historyStride;
    opt.sgdSeed = cfg.sgd_seed();
    if (opt.variant != Variant::gd) {
        opt.radii = cfg.effective_radii();
        if (!opt.radii) throw ConfigError(std::string("train --variant ") + to_string(opt.variant) +
                                          ": missing field 'radii'");
    }
    opt.eta = cfg.train.eta.value_or(opt.tau > 0 ? step_size_schedule(ds.length(), opt.tau) : 0.0);
    std::optional<Theorem48Plan> plan;
    if (opt.variant == Variant::gd && cfg.train.exitMonitor) {
        plan = theorem48_plan(cfg.bound_inputs(opt.tau), cfg.epsilon);
        opt.exitThresholds = ProjectionRadii{plan->lambdaW, plan->lambdaU, plan->lambdaC};
    }
    const TrainReport rep = run_training(opt, ds);

    ExperimentResult res;
    res.name = "train";
    json report = rep.to_json();
    report["variant"] = to_string(opt.variant);
    report["eta"] = opt.eta;
    report["tau"] = opt.tau;
    report["dataset"] = ds.meta;
    if (plan) {
        report["exitThresholds"] = {plan->lambdaW, plan->lambdaU, plan->lambdaC};
        const double tau0 = theorem48_tau0(cfg.bound_inputs(opt.tau), cfg.epsilon, opt.eta > 0 ? opt.eta : 1.0);
        report["tau0"] = tau0;
        for (const auto& e : rep.exitEvents)
            if (static_cast<double>(e.step) <= tau0)
                res.checks.push_back({"no_exit_before_tau0", "WARN",
                                      "component " + e.component + " crossed at step " + std::to_string(e.step)});
    }
    res.files.push_back({"report.json", report.dump(2) + "\n"});
    res.files.push_back({"risk.csv", rep.history_csv()});
    res.summary = {{"minRisk", rep.minRisk}, {"avgIterateRisk", rep.avgIterateRisk}, {"finalRisk", rep.finalRisk}};
    const json manifest = write_experiment(res, cfg, dir);
    print_paths(out, dir, manifest);
    return kExitOk;
}

inline int cmd_bounds(const RunConfig& cfg, const std::string& format, const std::string& file, std::ostream& out) {
    if (!cfg.effective_radii()) throw ConfigError("bounds: missing field 'radii'");
    const BoundReport rep = bound_report(cfg.bound_inputs(cfg.train.tau));
    const std::string text = format == "json" ? rep.to_json().dump(2) + "\n" : rep.to_text();
    if (file.empty()) {
        out << text;
    } else {
        write_file(file, text);
        out << file << '\n';
    }
    return kExitOk;
}

inline int cmd_kernel(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
    const auto points = draw_inputs(cfg.kernel.points, cfg.d, cfg.T, cfg.probe_seed());
    GramOptions opt;
    opt.mode = cfg.kernel.mode;
    opt.init = {cfg.m, cfg.d, cfg.alpha, cfg.init_seed()};
    opt.alpha = cfg.alpha;
    opt.nSamples = cfg.kernel.nSamples;
    opt.seed = cfg.kernel_seed();
    opt.act = cfg.act();
    opt.t = cfg.kernel.t;
    opt.threads = cfg.threads;
    const GramResult g = kernel_gram(points, opt);
    ExperimentResult res;
    res.name = "kernel";
    res.files.push_back({"gram.csv", matrix_csv(g.value)});
    if (opt.mode == GramMode::mc) res.files.push_back({"gram_stderr.csv", matrix_csv(g.stdErr)});
    res.files.push_back({"gram.json", gram_sidecar(opt, cfg.kernel.points).dump(2) + "\n"});
    const json manifest = write_experiment(res, cfg, dir);
    print_paths(out, dir, manifest);
    return kExitOk;
}

inline int cmd_sweep(const std::string& name, const RunConfig& cfg, bool skipExisting, const fs::path& dir,
                     std::ostream& out) {
    if (name != "width" && name != "iterations" && name != "memory" && name != "sgd")
        throw ConfigError("unknown sweep '" + name + "' (expected width, iterations, memory or sgd)");
    if (skipExisting && experiment_up_to_date(name, cfg, dir)) {
        out << "up to date: " << (dir / "manifest.json").string() << '\n';
        return kExitOk;
    }
    const ExperimentResult res = run_sweep(name, cfg);
    const json manifest = write_experiment(res, cfg, dir);
    print_paths(out, dir, manifest);
    for (const auto& c : res.checks)
        if (c.status != "PASS") out << c.status << ' ' << c.name << ": " << c.detail << '\n';
    return res.failed() ? kExitRuntime : kExitOk;
}

inline int cmd_dataset_generate(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
    const Dataset ds = make_dataset(cfg.teacher(), cfg.n, cfg.d, cfg.T, cfg.input_seed(), cfg.threads);
    save_dataset(ds, dir);
    out << (dir / "dataset.csv").string() << '\n' << (dir / "dataset.json").string() << '\n';
    return kExitOk;
}

inline int cmd_dataset_inspect(const fs::path& dir, std::ostream& out) {
    const Dataset ds = load_dataset(dir);
    double maxLabel = 0.0;
    for (const auto& y : ds.labels) maxLabel = std::max(maxLabel, y.cwiseAbs().maxCoeff());
    json j = {{"n", ds.size()}, {"d", ds.dim()}, {"T", ds.length()}, {"maxAbsLabel", maxLabel}, {"meta", ds.meta}};
    out << j.dump(2) << '\n';
    return kExitOk;
}

}  // namespace detail

/// Entry point of the drnn tool. Returns 0 on success, 1 on runtime
/// failure (including a violated hard check), 2 on configuration errors.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Diagonal RNN training, kernel and bound toolkit", "drnn"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", std::string("drnn ") + kVersion);

    std::string configPath, fromManifest, outputDir;
    int verbose = 0;
    Overrides ov;
    app.add_option("-c,--config", configPath, "JSON config file; unknown keys are an error");
    app.add_option("--from-manifest", fromManifest, "Reuse the config recorded in an experiment manifest");
    app.add_option("-o,--output-dir", outputDir,
                   std::string("Output root (default: $") + kOutputDirEnv + " or ./drnn-out)");
    app.add_flag("-v,--verbose", verbose, "Echo the effective config to stderr");
    app.add_option("--seed", ov.seed, "Master seed");
    app.add_option("--threads", ov.threads, "Worker threads; outputs do not depend on it")->check(CLI::PositiveNumber);
    app.add_option("--m", ov.m, "Width (even)");
    app.add_option("--n", ov.n, "Dataset size");
    app.add_option("--T", ov.T, "Sequence length");
    app.add_option("--d", ov.d, "Input dimension");
    app.add_option("--alpha", ov.alpha, "Recurrent initialization scale");
    app.add_option("--delta", ov.delta, "Failure probability in the bounds");
    app.add_option("--epsilon", ov.epsilon, "Target error of the projection-free plan");
    app.add_option("--mc-samples", ov.mcSamples, "Teacher Monte-Carlo samples");
    app.add_option("--rho-w", ov.rhoW, "Projection radius for w");
    app.add_option("--rho-u", ov.rhoU, "Projection radius for u");
    app.add_option("--rho-c", ov.rhoC, "Projection radius for c");

    auto* train = app.add_subcommand("train", "Train from a symmetric initialization");
    std::string datasetDir;
    train->add_option("--variant", ov.variant, "gd, projected-gd or projected-sgd");
    train->add_option("--tau", ov.tau, "Number of steps");
    train->add_option("--eta", ov.eta, "Step size (default 1/(T sqrt(tau)))");
    train->add_option("--dataset", datasetDir, "Load a saved dataset instead of generating one");

    auto* bounds = app.add_subcommand("bounds", "Print the bound report");
    std::string boundsFormat = "text", boundsFile;
    bounds->add_option("--tau", ov.tau, "Number of steps in the convergence bound");
    bounds->add_option("--format", boundsFormat, "text or json")->check(CLI::IsMember({"text", "json"}));
    bounds->add_option("--out", boundsFile, "Write to this file instead of stdout");

    auto* kernel = app.add_subcommand("kernel", "Kernel Gram matrix over random inputs");
    kernel->add_option("--mode", ov.mode, "empirical or mc");
    kernel->add_option("--n-samples", ov.nSamples, "Monte-Carlo samples in mc mode");
    kernel->add_option("--t", ov.t, "Time index in [1, T]");
    kernel->add_option("--points", ov.points, "Number of input sequences");

    auto* sweep = app.add_subcommand("sweep", "Run an experiment sweep");
    std::string sweepName;
    bool skipExisting = false;
    sweep->add_option("name", sweepName, "width, iterations, memory or sgd")->required();
    sweep->add_flag("--skip-existing", skipExisting, "Skip when the manifest and output digests already match");

    auto* dataset = app.add_subcommand("dataset", "Generate or inspect a teacher-labelled dataset");
    dataset->require_subcommand(1);
    auto* generate = dataset->add_subcommand("generate", "Write dataset.json and dataset.csv");
    auto* inspect = dataset->add_subcommand("inspect", "Summarize a saved dataset");
    std::string inspectDir;
    inspect->add_option("dir", inspectDir, "Dataset directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        if (app.get_subcommands().empty()) {
            out << app.help("", CLI::AppFormatMode::All);
            return kExitOk;
        }
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        RunConfig cfg;
        if (!configPath.empty() && !fromManifest.empty())
            throw ConfigError("--config and --from-manifest are mutually exclusive");
        if (!configPath.empty()) cfg = load_config(configPath);
        if (!fromManifest.empty()) {
            json manifest;
            try {
                manifest = json::parse(read_file(fromManifest));
            } catch (const json::exception& e) {
                throw ConfigError(fromManifest + ": " + e.what());
            }
            if (!manifest.contains("config")) throw ConfigError(fromManifest + ": missing field 'config'");
            cfg = config_from_json(manifest.at("config"));
        }
        ov.apply(cfg);
        cfg.validate();
        if (verbose) err << cfg.to_json().dump(2) << '\n';

        fs::path root = outputDir;
        if (root.empty()) {
            const char* env = std::getenv(kOutputDirEnv);
            root = env && *env ? fs::path(env) : fs::path("drnn-out");
        }
        if (*train) return detail::cmd_train(cfg, datasetDir, root / "train", out);
        if (*bounds) return detail::cmd_bounds(cfg, boundsFormat, boundsFile, out);
        if (*kernel) return detail::cmd_kernel(cfg, root / "kernel", out);
        if (*sweep) return detail::cmd_sweep(sweepName, cfg, skipExisting, root / ("sweep-" + sweepName), out);
        if (*generate) return detail::cmd_dataset_generate(cfg, root / "dataset", out);
        if (*inspect) return detail::cmd_dataset_inspect(inspectDir, out);
        return kExitConfig;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const json::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace drnn
