#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "drnn/activation.hpp"
#include "drnn/bounds.hpp"
#include "drnn/errors.hpp"
#include "drnn/io.hpp"
#include "drnn/ntk.hpp"
#include "drnn/random.hpp"
#include "drnn/teacher.hpp"
#include "drnn/training.hpp"

namespace drnn {

namespace detail {

/// Reads one JSON object, remembering which keys were consumed so that
/// leftovers (typos) can be reported.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

    template <typename T>
    T get(const std::string& key, T fallback) {
        used_.insert(key);
        if (!has(key)) return fallback;
        return convert<T>(key);
    }

    template <typename T>
    T require(const std::string& key) {
        used_.insert(key);
        if (!has(key)) throw ConfigError(path_ + ": missing field '" + key + "'");
        return convert<T>(key);
    }

    const json& raw(const std::string& key) {
        used_.insert(key);
        return j_.at(key);
    }

    std::string path(const std::string& key) const { return path_ + "." + key; }

    void finish() const {
        for (const auto& [key, _] : j_.items())
            if (!used_.count(key)) throw ConfigError(path_ + ": unknown key '" + key + "'");
    }

private:
    template <typename T>
    T convert(const std::string& key) const {
        try {
            return j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(path_ + ": field '" + key + "' has the wrong type");
        }
    }

    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

}  // namespace detail

struct TrainSection {
    Variant variant = Variant::projected_gd;
    long tau = 256;
    /// Empty: eta = 1/(T sqrt(tau)).
    std::optional<double> eta;
    long historyStride = 1;
    /// Log crossings of the projection-free lambda thresholds (gd only).
    bool exitMonitor = true;
};

struct KernelSection {
    GramMode mode = GramMode::empirical;
    int t = 1;
    int points = 5;
    std::int64_t nSamples = 1'000'000;
};

struct WidthSweep {
    std::vector<int> widths = {64, 128, 256, 512, 1024, 2048, 4096};
    int probes = 16;
    int replicates = 4;
    int kernelPairs = 5;
    std::int64_t kernelSamples = 1'000'000;
    long trainSteps = 64;
};

struct IterationSweep {
    std::vector<long> taus = {16, 64, 256, 1024};
    int runs = 20;
};

struct MemorySweep {
    std::vector<double> alphas = {0.5, 1.5};
    std::vector<int> lengths = {2, 4, 6, 8, 10, 12, 14, 16, 18, 20};
    /// Inputs are multiplied by this factor so the pre-activations stay in
    /// the near-linear range where I_t = sigma'(0) = sigma_1.
    double inputScale = 1e-6;
    int width = 64;
    int probes = 8;
    long trainSteps = 16;
    std::int64_t mcSamples = 10'000;
};

struct SgdSweep {
    long tau = 64;
    int seeds = 8;
    long stride = 1;
};

/// Effective configuration shared by every subcommand.
struct RunConfig {
    std::uint64_t seed = 1;
    int threads = 1;
    std::string activation = "tanh";
    int d = 3;
    int T = 6;
    int n = 32;
    int m = 4096;
    double alpha = 0.3;
    double delta = 0.05;
    double epsilon = 0.1;
    /// Projection radii; `radiiFromNu` sets them to the teacher budget.
    std::optional<ProjectionRadii> radii;
    bool radiiFromNu = false;
    json teacherMap;  // null: reference constant map
    std::int64_t mcSamples = 1'000'000;
    std::optional<std::uint64_t> teacherSeed;
    TrainSection train;
    KernelSection kernel;
    WidthSweep width;
    IterationSweep iterations;
    MemorySweep memory;
    SgdSweep sgd;

    Activation act() const { return activation_by_name(activation); }

    std::uint64_t input_seed() const { return derive_seed(seed, 1); }
    std::uint64_t init_seed() const { return derive_seed(seed, 2); }
    std::uint64_t teacher_seed() const { return teacherSeed.value_or(derive_seed(seed, 3)); }
    std::uint64_t sgd_seed() const { return derive_seed(seed, 4); }
    std::uint64_t probe_seed() const { return derive_seed(seed, 5); }
    std::uint64_t kernel_seed() const { return derive_seed(seed, 6); }

    TeacherSpec teacher() const;
    std::optional<ProjectionRadii> effective_radii() const;
    BoundInputs bound_inputs(long tau) const;
    void validate() const;
    json to_json() const;
};

/// Reference transport map: v_w = 0.5, v_u = (1,...,1)/sqrt(d), v_c = 0.5,
/// so nu = (0.5, 1, 0.5).
inline json reference_map_json(int d) {
    return {{"kind", "constant"},
            {"vW", 0.5},
            {"vU", std::vector<double>(d, 1.0 / std::sqrt(static_cast<double>(d)))},
            {"vC", 0.5}};
}

inline TeacherSpec RunConfig::teacher() const {
    TeacherSpec spec;
    spec.map = map_from_json(teacherMap.is_null() ? reference_map_json(d) : teacherMap, d);
    spec.alpha = alpha;
    spec.act = act();
    spec.mcSamples = mcSamples;
    spec.seed = teacher_seed();
    spec.validate();
    return spec;
}

inline std::optional<ProjectionRadii> RunConfig::effective_radii() const {
    if (radiiFromNu) {
        const TeacherSpec spec = teacher();
        return ProjectionRadii{spec.map.nuW, spec.map.nuU, spec.map.nuC};
    }
    return radii;
}

inline BoundInputs RunConfig::bound_inputs(long tau) const {
    BoundInputs in = BoundInputs::for_activation(act());
    const TeacherSpec spec = teacher();
    in.alpha = alpha;
    in.rho = effective_radii().value_or(ProjectionRadii{});
    in.nu = {spec.map.nuW, spec.map.nuU, spec.map.nuC};
    in.m = m;
    in.d = d;
    in.T = T;
    in.n = n;
    in.delta = delta;
    in.tau = std::max(1L, tau);
    in.epsilon = epsilon;
    return in;
}

inline void RunConfig::validate() const {
    (void)act();
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (d < 1 || T < 1 || n < 1) throw ConfigError("d, T and n must be >= 1");
    if (m < 2 || m % 2) throw ConfigError("m must be a positive even integer");
    if (!(alpha >= 0) || !std::isfinite(alpha)) throw ConfigError("alpha must be finite and >= 0");
    if (!(delta > 0 && delta < 1)) throw ConfigError("delta must lie in (0, 1)");
    if (!(epsilon > 0)) throw ConfigError("epsilon must be > 0");
    if (radii) radii->validate();
    if (mcSamples < 1) throw ConfigError("teacher.mcSamples must be >= 1");
    (void)teacher();
    if (train.tau < 0) throw ConfigError("train.tau must be >= 0");
    if (train.eta && !(*train.eta >= 0)) throw ConfigError("train.eta must be >= 0");
    if (train.historyStride < 1) throw ConfigError("train.historyStride must be >= 1");
    if (kernel.t < 1 || kernel.t > T) throw ConfigError("kernel.t must lie in [1, T]");
    if (kernel.points < 1 || kernel.nSamples < 2) throw ConfigError("kernel.points >= 1 and kernel.nSamples >= 2");
    for (int w : width.widths)
        if (w < 2 || w % 2) throw ConfigError("sweeps.width.widths must be positive even integers");
    if (width.probes < 1 || width.replicates < 1 || width.kernelPairs < 0 || width.kernelSamples < 2 ||
        width.trainSteps < 0 || 2 * width.kernelPairs > width.probes)
        throw ConfigError("sweeps.width: invalid sizes (kernelPairs uses 2 probes each)");
    for (long tau : iterations.taus)
        if (tau < 1) throw ConfigError("sweeps.iterations.taus must be >= 1");
    if (iterations.runs < 1) throw ConfigError("sweeps.iterations.runs must be >= 1");
    for (double a : memory.alphas)
        if (!(a >= 0)) throw ConfigError("sweeps.memory.alphas must be >= 0");
    for (int len : memory.lengths)
        if (len < 1) throw ConfigError("sweeps.memory.lengths must be >= 1");
    if (!(memory.inputScale > 0 && memory.inputScale <= 1)) throw ConfigError("sweeps.memory.inputScale must lie in (0, 1]");
    if (memory.width < 2 || memory.width % 2 || memory.probes < 1 || memory.trainSteps < 0 || memory.mcSamples < 1)
        throw ConfigError("sweeps.memory: invalid sizes");
    if (sgd.tau < 1 || sgd.seeds < 2 || sgd.stride < 1) throw ConfigError("sweeps.sgd: tau >= 1, seeds >= 2, stride >= 1");
}

inline json RunConfig::to_json() const {
    json j = {{"seed", seed},
              {"threads", threads},
              {"activation", activation},
              {"d", d},
              {"T", T},
              {"n", n},
              {"m", m},
              {"alpha", alpha},
              {"delta", delta},
              {"epsilon", epsilon}};
    if (radiiFromNu)
        j["radii"] = "nu";
    else if (radii)
        j["radii"] = {{"rhoW", radii->rhoW}, {"rhoU", radii->rhoU}, {"rhoC", radii->rhoC}};
    j["teacher"] = {{"map", teacherMap.is_null() ? reference_map_json(d) : teacherMap},
                    {"mcSamples", mcSamples},
                    {"seed", teacher_seed()}};
    j["train"] = {{"variant", to_string(train.variant)},
                  {"tau", train.tau},
                  {"historyStride", train.historyStride},
                  {"exitMonitor", train.exitMonitor}};
    if (train.eta) j["train"]["eta"] = *train.eta;
    j["kernel"] = {{"mode", kernel.mode == GramMode::empirical ? "empirical" : "mc"},
                   {"t", kernel.t},
                   {"points", kernel.points},
                   {"nSamples", kernel.nSamples}};
    j["sweeps"] = {{"width",
                    {{"widths", width.widths},
                     {"probes", width.probes},
                     {"replicates", width.replicates},
                     {"kernelPairs", width.kernelPairs},
                     {"kernelSamples", width.kernelSamples},
                     {"trainSteps", width.trainSteps}}},
                   {"iterations", {{"taus", iterations.taus}, {"runs", iterations.runs}}},
                   {"memory",
                    {{"alphas", memory.alphas},
                     {"lengths", memory.lengths},
                     {"inputScale", memory.inputScale},
                     {"width", memory.width},
                     {"probes", memory.probes},
                     {"trainSteps", memory.trainSteps},
                     {"mcSamples", memory.mcSamples}}},
                   {"sgd", {{"tau", sgd.tau}, {"seeds", sgd.seeds}, {"stride", sgd.stride}}}};
    j["derivedSeeds"] = {{"inputs", input_seed()},
                         {"init", init_seed()},
                         {"sgd", sgd_seed()},
                         {"probes", probe_seed()},
                         {"kernel", kernel_seed()}};
    return j;
}

inline GramMode gram_mode_from_string(const std::string& s) {
    if (s == "empirical") return GramMode::empirical;
    if (s == "mc") return GramMode::mc;
    throw ConfigError("unknown kernel mode '" + s + "' (expected empirical or mc)");
}

/// Parses a config object on top of `base`. Unknown keys anywhere are errors.
inline RunConfig config_from_json(const json& j, RunConfig cfg = {}) {
    using detail::ObjectReader;
    ObjectReader r(j, "config");
    cfg.seed = r.get<std::uint64_t>("seed", cfg.seed);
    cfg.threads = r.get<int>("threads", cfg.threads);
    cfg.activation = r.get<std::string>("activation", cfg.activation);
    cfg.d = r.get<int>("d", cfg.d);
    cfg.T = r.get<int>("T", cfg.T);
    cfg.n = r.get<int>("n", cfg.n);
    cfg.m = r.get<int>("m", cfg.m);
    cfg.alpha = r.get<double>("alpha", cfg.alpha);
    cfg.delta = r.get<double>("delta", cfg.delta);
    cfg.epsilon = r.get<double>("epsilon", cfg.epsilon);
    if (r.has("radii")) {
        const json& rj = r.raw("radii");
        if (rj.is_string()) {
            if (rj.get<std::string>() != "nu") throw ConfigError("config.radii: expected an object or \"nu\"");
            cfg.radiiFromNu = true;
            cfg.radii.reset();
        } else {
            ObjectReader rr(rj, r.path("radii"));
            cfg.radii = ProjectionRadii{rr.require<double>("rhoW"), rr.require<double>("rhoU"),
                                        rr.require<double>("rhoC")};
            cfg.radiiFromNu = false;
            rr.finish();
        }
    } else {
        r.get<json>("radii", json());
    }
    if (r.has("teacher")) {
        ObjectReader t(r.raw("teacher"), r.path("teacher"));
        if (t.has("map")) cfg.teacherMap = t.raw("map");
        cfg.mcSamples = t.get<std::int64_t>("mcSamples", cfg.mcSamples);
        if (t.has("seed")) cfg.teacherSeed = t.get<std::uint64_t>("seed", 0);
        t.finish();
    } else {
        r.get<json>("teacher", json());
    }
    if (r.has("train")) {
        ObjectReader t(r.raw("train"), r.path("train"));
        if (t.has("variant")) cfg.train.variant = variant_from_string(t.get<std::string>("variant", ""));
        cfg.train.tau = t.get<long>("tau", cfg.train.tau);
        if (t.has("eta")) cfg.train.eta = t.get<double>("eta", 0.0);
        cfg.train.historyStride = t.get<long>("historyStride", cfg.train.historyStride);
        cfg.train.exitMonitor = t.get<bool>("exitMonitor", cfg.train.exitMonitor);
        t.finish();
    } else {
        r.get<json>("train", json());
    }
    if (r.has("kernel")) {
        ObjectReader k(r.raw("kernel"), r.path("kernel"));
        if (k.has("mode")) cfg.kernel.mode = gram_mode_from_string(k.get<std::string>("mode", ""));
        cfg.kernel.t = k.get<int>("t", cfg.kernel.t);
        cfg.kernel.points = k.get<int>("points", cfg.kernel.points);
        cfg.kernel.nSamples = k.get<std::int64_t>("nSamples", cfg.kernel.nSamples);
        k.finish();
    } else {
        r.get<json>("kernel", json());
    }
    if (r.has("sweeps")) {
        ObjectReader s(r.raw("sweeps"), r.path("sweeps"));
        if (s.has("width")) {
            ObjectReader w(s.raw("width"), s.path("width"));
            cfg.width.widths = w.get<std::vector<int>>("widths", cfg.width.widths);
            cfg.width.probes = w.get<int>("probes", cfg.width.probes);
            cfg.width.replicates = w.get<int>("replicates", cfg.width.replicates);
            cfg.width.kernelPairs = w.get<int>("kernelPairs", cfg.width.kernelPairs);
            cfg.width.kernelSamples = w.get<std::int64_t>("kernelSamples", cfg.width.kernelSamples);
            cfg.width.trainSteps = w.get<long>("trainSteps", cfg.width.trainSteps);
            w.finish();
        } else {
            s.get<json>("width", json());
        }
        if (s.has("iterations")) {
            ObjectReader it(s.raw("iterations"), s.path("iterations"));
            cfg.iterations.taus = it.get<std::vector<long>>("taus", cfg.iterations.taus);
            cfg.iterations.runs = it.get<int>("runs", cfg.iterations.runs);
            it.finish();
        } else {
            s.get<json>("iterations", json());
        }
        if (s.has("memory")) {
            ObjectReader mm(s.raw("memory"), s.path("memory"));
            cfg.memory.alphas = mm.get<std::vector<double>>("alphas", cfg.memory.alphas);
            cfg.memory.lengths = mm.get<std::vector<int>>("lengths", cfg.memory.lengths);
            cfg.memory.inputScale = mm.get<double>("inputScale", cfg.memory.inputScale);
            cfg.memory.width = mm.get<int>("width", cfg.memory.width);
            cfg.memory.probes = mm.get<int>("probes", cfg.memory.probes);
            cfg.memory.trainSteps = mm.get<long>("trainSteps", cfg.memory.trainSteps);
            cfg.memory.mcSamples = mm.get<std::int64_t>("mcSamples", cfg.memory.mcSamples);
            mm.finish();
        } else {
            s.get<json>("memory", json());
        }
        if (s.has("sgd")) {
            ObjectReader g(s.raw("sgd"), s.path("sgd"));
            cfg.sgd.tau = g.get<long>("tau", cfg.sgd.tau);
            cfg.sgd.seeds = g.get<int>("seeds", cfg.sgd.seeds);
            cfg.sgd.stride = g.get<long>("stride", cfg.sgd.stride);
            g.finish();
        } else {
            s.get<json>("sgd", json());
        }
        s.finish();
    } else {
        r.get<json>("sweeps", json());
    }
    // Echoed-only section of an effective config; ignored on input.
    r.get<json>("derivedSeeds", json());
    r.finish();
    return cfg;
}

inline RunConfig load_config(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    } catch (const std::runtime_error& e) {
        throw ConfigError(e.what());
    }
    return config_from_json(j);
}

}  // namespace drnn
