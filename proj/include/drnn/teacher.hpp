#pragma once

// Targets from the infinite-width function class. A transport map
// v = (v_w, v_u, v_c) defines
//
//   F~_t(X; v) = E[ v_w(w0) dh_t/dw + v_u(u0) . dh_t/du + v_c(c0) h_t ],
//
// with (w0, u0, c0) ~ Rad(alpha) x N(0, I_d) x Rad(1) and h the single-neuron
// recursion. Unrolling dh_t/dw and dh_t/du gives the sum over lags
// k < t of w0^k (...) prod I terms. For an odd activation h_t and dh_t/dw are
// odd in u0 while dh_t/du is even, so only the even part of v_u contributes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "drnn/activation.hpp"
#include "drnn/errors.hpp"
#include "drnn/init.hpp"
#include "drnn/io.hpp"
#include "drnn/montecarlo.hpp"
#include "drnn/rnn.hpp"

namespace drnn {

using json = nlohmann::json;

/// Transport map with certified sup-norm budget (nuW, nuU, nuC).
/// `descriptor` is the JSON form the map was built from; it is what gets
/// written to manifests and read back by map_from_json.
struct TransportMap {
    std::function<double(double)> vW;
    std::function<void(std::span<const double> u, std::span<double> out)> vU;
    std::function<double(double)> vC;
    double nuW = 0.0;
    double nuU = 0.0;
    double nuC = 0.0;
    json descriptor;

    double nu_norm() const { return std::sqrt(nuW * nuW + nuU * nuU + nuC * nuC); }
};

/// v_w = aW, v_u = aU, v_c = aC for all arguments.
inline TransportMap constant_map(double aW, const Vector& aU, double aC) {
    TransportMap map;
    map.vW = [aW](double) { return aW; };
    map.vU = [aU](std::span<const double> u, std::span<double> out) {
        if (static_cast<Eigen::Index>(u.size()) != aU.size()) throw ConfigError("constant map: v_u dimension != d");
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = aU(static_cast<Eigen::Index>(k));
    };
    map.vC = [aC](double) { return aC; };
    map.nuW = std::abs(aW);
    map.nuU = aU.norm();
    map.nuC = std::abs(aC);
    map.descriptor = {{"kind", "constant"},
                      {"vW", aW},
                      {"vU", std::vector<double>(aU.data(), aU.data() + aU.size())},
                      {"vC", aC}};
    return map;
}

/// v_w(w) = nuW clamp(w, -1, 1), v_u(u) = nuU u / max(1, ||u||),
/// v_c(c) = nuC clamp(c, -1, 1). For odd activations every term is odd in
/// u0 or independent of it, so the resulting teacher is identically zero in
/// expectation; Monte-Carlo estimates are pure noise around 0.
inline TransportMap coordinate_map(double nuW, double nuU, double nuC) {
    TransportMap map;
    map.vW = [nuW](double w) { return nuW * std::clamp(w, -1.0, 1.0); };
    map.vU = [nuU](std::span<const double> u, std::span<double> out) {
        double sq = 0.0;
        for (double x : u) sq += x * x;
        const double scale = nuU / std::max(1.0, std::sqrt(sq));
        for (std::size_t k = 0; k < u.size(); ++k) out[k] = scale * u[k];
    };
    map.vC = [nuC](double c) { return nuC * std::clamp(c, -1.0, 1.0); };
    map.nuW = nuW;
    map.nuU = nuU;
    map.nuC = nuC;
    map.descriptor = {{"kind", "coordinate"}, {"nuW", nuW}, {"nuU", nuU}, {"nuC", nuC}};
    return map;
}

/// Inverse of TransportMap::descriptor.
inline TransportMap map_from_json(const json& j, int d) {
    if (!j.is_object() || !j.contains("kind")) throw ConfigError("teacher map: missing field 'kind'");
    const std::string kind = j.at("kind").get<std::string>();
    auto number = [&](const char* key) {
        if (!j.contains(key) || !j.at(key).is_number()) throw ConfigError(std::string("teacher map: missing field '") + key + "'");
        return j.at(key).get<double>();
    };
    if (kind == "constant") {
        if (!j.contains("vU") || !j.at("vU").is_array()) throw ConfigError("teacher map: missing field 'vU'");
        const auto vu = j.at("vU").get<std::vector<double>>();
        if (static_cast<int>(vu.size()) != d)
            throw ConfigError("teacher map: vU has " + std::to_string(vu.size()) + " entries, expected d = " +
                              std::to_string(d));
        for (const auto& [key, _] : j.items())
            if (key != "kind" && key != "vW" && key != "vU" && key != "vC")
                throw ConfigError("teacher map: unknown key '" + key + "'");
        return constant_map(number("vW"), Eigen::Map<const Vector>(vu.data(), d), number("vC"));
    }
    if (kind == "coordinate") {
        for (const auto& [key, _] : j.items())
            if (key != "kind" && key != "nuW" && key != "nuU" && key != "nuC")
                throw ConfigError("teacher map: unknown key '" + key + "'");
        const double w = number("nuW"), u = number("nuU"), c = number("nuC");
        if (w < 0 || u < 0 || c < 0) throw ConfigError("teacher map: budgets must be >= 0");
        return coordinate_map(w, u, c);
    }
    throw ConfigError("teacher map: unknown kind '" + kind + "' (expected constant or coordinate)");
}

struct TeacherSpec {
    TransportMap map;
    double alpha = 0.0;
    Activation act = tanh_activation();
    std::int64_t mcSamples = 1'000'000;
    std::uint64_t seed = 0;

    void validate() const {
        if (mcSamples < 1) throw ConfigError("teacher: mcSamples must be >= 1");
        if (!(alpha >= 0.0)) throw ConfigError("teacher: alpha must be >= 0");
        if (!map.vW || !map.vU || !map.vC) throw ConfigError("teacher: transport map is incomplete");
    }

    json to_json() const {
        return {{"map", map.descriptor},
                {"nu", {map.nuW, map.nuU, map.nuC}},
                {"alpha", alpha},
                {"activation", act.name},
                {"mcSamples", mcSamples},
                {"seed", seed}};
    }
};

/// Monte-Carlo estimates of F~_1..F~_T at x. All inputs evaluated with the
/// same spec share the same draws, so labels are one fixed random function.
inline std::vector<McEstimate> teacher_estimate_all(const TeacherSpec& spec, const InputSequence& x, int threads = 1) {
    spec.validate();
    const int d = x.dim();
    const int T = x.length();
    return mc_average(spec.mcSamples, T, spec.seed, StreamTag::teacher_mc, threads,
                      [&, d](Stream& s, std::span<double> out) {
                          thread_local std::vector<double> buf;
                          buf.resize(3 * static_cast<std::size_t>(d));
                          double* u0 = buf.data();
                          double* vu = u0 + d;
                          double* du = vu + d;
                          const double c0 = rademacher(s);
                          const double w0 = spec.alpha * rademacher(s);
                          std::normal_distribution<double> normal(0.0, 1.0);
                          for (int k = 0; k < d; ++k) u0[k] = normal(s);
                          const double vw = spec.map.vW(w0);
                          spec.map.vU(std::span<const double>(u0, d), std::span<double>(vu, d));
                          const double vc = spec.map.vC(c0);
                          neuron_forward(w0, u0, x, spec.act, du, [&](int t, double h, double dw, const double* g) {
                              double z = vw * dw;
                              for (int k = 0; k < d; ++k) z += vu[k] * g[k];
                              out[t - 1] = z + vc * h;
                          });
                      });
}

/// F~_t(x) as the Monte-Carlo average.
inline double teacher_eval(const TeacherSpec& spec, const InputSequence& x, int t, int threads = 1) {
    detail::require_time(t, x.length());
    return teacher_estimate_all(spec, x, threads)[t - 1].value;
}

/// Phi~_i = Phi_i(0) + (1/sqrt m)(c_i(0) v_w(w_i(0)), c_i(0) v_u(u_i(0)), v_c(c_i(0))).
inline RnnParams transported_params(const TeacherSpec& spec, const RnnParams& params0) {
    spec.validate();
    const int m = params0.width();
    const int d = params0.input_dim();
    for (int i = 0; i < m; ++i)
        if (std::abs(params0.w()(i)) != spec.alpha)
            throw ConfigError("transported_params: |w_i(0)| differs from the teacher's alpha = " +
                              format_double(spec.alpha));
    const double root_m = std::sqrt(static_cast<double>(m));
    RnnParams out = params0;
    ParamMatrix& phi = out.matrix();
    std::vector<double> u(d), vu(d);
    for (int i = 0; i < m; ++i) {
        const double c0 = params0.c()(i);
        for (int k = 0; k < d; ++k) u[k] = params0.matrix()(i, 1 + k);
        spec.map.vU(u, vu);
        phi(i, 0) += c0 * spec.map.vW(params0.w()(i)) / root_m;
        for (int k = 0; k < d; ++k) phi(i, 1 + k) += c0 * vu[k] / root_m;
        phi(i, d + 1) += spec.map.vC(c0) / root_m;
    }
    return out;
}

/// Labeled training set: labels[j](t-1) = Y_t^(j).
struct Dataset {
    std::vector<InputSequence> inputs;
    std::vector<Vector> labels;
    json meta = json::object();

    int size() const { return static_cast<int>(inputs.size()); }
    int dim() const { return inputs.empty() ? 0 : inputs.front().dim(); }
    int length() const { return inputs.empty() ? 0 : inputs.front().length(); }

    void validate() const {
        if (inputs.empty()) throw ConfigError("dataset is empty");
        if (labels.size() != inputs.size()) throw ConfigError("dataset: one label vector per input required");
        for (std::size_t j = 0; j < inputs.size(); ++j) {
            if (inputs[j].dim() != dim() || inputs[j].length() != length())
                throw ConfigError("dataset: inputs disagree on d or T");
            if (labels[j].size() != length()) throw ConfigError("dataset: label length != T");
        }
    }
};

/// Inputs from draw_inputs(n, d, T, inputSeed); labels from the teacher with
/// its own fixed Monte-Carlo seed.
inline Dataset make_dataset(const TeacherSpec& spec, int n, int d, int T, std::uint64_t inputSeed, int threads = 1) {
    Dataset ds;
    ds.inputs = draw_inputs(n, d, T, inputSeed);
    ds.labels.resize(n);
    double worst = 0.0;
    for (int j = 0; j < n; ++j) {
        const auto est = teacher_estimate_all(spec, ds.inputs[j], threads);
        ds.labels[j].resize(T);
        for (int t = 0; t < T; ++t) {
            ds.labels[j](t) = est[t].value;
            worst = std::max(worst, est[t].stdErr);
        }
    }
    ds.meta = {{"n", n},
               {"d", d},
               {"T", T},
               {"inputSeed", inputSeed},
               {"inputDistribution", kInputDistribution},
               {"teacher", spec.to_json()},
               {"labelStdErrMax", worst}};
    return ds;
}

/// Payload CSV: one row per (sample, t) with X_t and the label Y_{t+1}.
inline std::string dataset_payload_csv(const Dataset& ds) {
    ds.validate();
    std::vector<std::string> header{"sample", "t"};
    for (int k = 0; k < ds.dim(); ++k) header.push_back("x" + std::to_string(k));
    header.push_back("y");
    CsvWriter csv(header);
    std::vector<std::string> row(header.size());
    for (int j = 0; j < ds.size(); ++j)
        for (int t = 0; t < ds.length(); ++t) {
            row[0] = std::to_string(j);
            row[1] = std::to_string(t);
            for (int k = 0; k < ds.dim(); ++k) row[2 + k] = format_double(ds.inputs[j](k, t));
            row.back() = format_double(ds.labels[j](t));
            csv.row(row);
        }
    return csv.str();
}

/// Writes <dir>/dataset.json (self-describing manifest) and <dir>/dataset.csv.
/// Values are printed in shortest round-trip form, so reading them back is
/// bit-exact.
inline void save_dataset(const Dataset& ds, const fs::path& dir) {
    const std::string payload = dataset_payload_csv(ds);
    json manifest = ds.meta;
    manifest["format"] = "drnn-dataset";
    manifest["version"] = 1;
    manifest["n"] = ds.size();
    manifest["d"] = ds.dim();
    manifest["T"] = ds.length();
    manifest["payload"] = "dataset.csv";
    manifest["payloadSha256"] = sha256_hex(payload);
    write_file(dir / "dataset.csv", payload);
    write_file(dir / "dataset.json", manifest.dump(2) + "\n");
}

inline Dataset load_dataset(const fs::path& dir) {
    if (!fs::exists(dir / "dataset.json")) throw ConfigError("no dataset.json in " + dir.string());
    json manifest;
    try {
        manifest = json::parse(read_file(dir / "dataset.json"));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("dataset.json: ") + e.what());
    }
    if (manifest.value("format", "") != "drnn-dataset") throw ConfigError("dataset.json: not a dataset manifest");
    const int n = manifest.at("n").get<int>();
    const int d = manifest.at("d").get<int>();
    const int T = manifest.at("T").get<int>();
    const std::string payload = read_file(dir / manifest.at("payload").get<std::string>());
    if (sha256_hex(payload) != manifest.at("payloadSha256").get<std::string>())
        throw ConfigError("dataset payload digest mismatch");
    auto [header, rows] = read_simple_csv(payload);
    if (static_cast<int>(header.size()) != d + 3 || static_cast<long>(rows.size()) != static_cast<long>(n) * T)
        throw ConfigError("dataset payload shape disagrees with the manifest");
    std::vector<Matrix> xs(n, Matrix(d, T));
    Dataset ds;
    ds.labels.assign(n, Vector(T));
    for (const auto& r : rows) {
        if (static_cast<int>(r.size()) != d + 3) throw ConfigError("dataset payload: ragged row");
        const int j = std::stoi(r[0]);
        const int t = std::stoi(r[1]);
        if (j < 0 || j >= n || t < 0 || t >= T) throw ConfigError("dataset payload: index out of range");
        for (int k = 0; k < d; ++k) xs[j](k, t) = parse_double(r[2 + k]);
        ds.labels[j](t) = parse_double(r[2 + d]);
    }
    for (auto& X : xs) ds.inputs.emplace_back(std::move(X));
    ds.meta = manifest;
    for (const char* key : {"format", "version", "payload", "payloadSha256"}) ds.meta.erase(key);
    ds.validate();
    return ds;
}

/// Rebuilds the teacher recorded in a dataset manifest.
inline TeacherSpec teacher_from_json(const json& j, int d) {
    TeacherSpec spec;
    spec.map = map_from_json(j.at("map"), d);
    spec.alpha = j.at("alpha").get<double>();
    spec.act = activation_by_name(j.at("activation").get<std::string>());
    spec.mcSamples = j.at("mcSamples").get<std::int64_t>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.validate();
    return spec;
}

}  // namespace drnn
