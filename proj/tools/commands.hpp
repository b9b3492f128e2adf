// Copyright 2026 The sketchgc Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#pragma once

// Subcommands behind the sketchgc binary. Kept in a header so the test
// suite can drive them in-process.
//
// Configuration is a flat key -> value map. Sources, lowest precedence
// first: built-in defaults, the --config file, command-line flags.

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sketchgc/sketchgc.hpp"

namespace sketchgc::cli {

using Json = nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kSchemaVersion = 1;

/// Every key accepted in a config file or as --key on the command line.
inline const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "seed",       "out",           "suite",        "trials",       "n",
      "m",          "mu",            "sigma",        "nk",           "gj",
      "dim",        "blocks",        "topk_blocks",  "rows",         "lambda",
      "alpha",      "num_clusters",  "bits",         "total_buckets", "refresh_interval",
      "sample_cap", "max_fill",      "problem",      "samples",      "noise",
      "workers",    "iterations",    "eta",          "rho",          "topology",
      "compressor", "target",        "sizes",        "block_size",   "error_feedback"};
  return keys;
}

class RunConfig {
 public:
  void set(const std::string& key, const std::string& value) {
    if (!known_keys().contains(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.contains(key); }

  std::string str(const std::string& key, const std::string& def) const {
    auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
  }

  std::uint64_t u64(const std::string& key, std::uint64_t def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    return parse_u64(key, it->second);
  }

  std::size_t size(const std::string& key, std::size_t def) const {
    return static_cast<std::size_t>(u64(key, def));
  }

  double real(const std::string& key, double def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    const std::string& s = it->second;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
      throw ConfigError("key '" + key + "': expected a number, got '" + s + "'");
    }
    return v;
  }

  std::vector<std::size_t> sizes(const std::string& key, std::vector<std::size_t> def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    std::vector<std::size_t> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(static_cast<std::size_t>(parse_u64(key, trim(item))));
    if (out.empty()) throw ConfigError("key '" + key + "': empty list");
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  static std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
  }

 private:
  static std::uint64_t parse_u64(const std::string& key, const std::string& s) {
    // Accept plain integers and exact powers written like 1e6.
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec == std::errc() && ptr == s.data() + s.size()) return v;
    double d = 0.0;
    auto [p2, e2] = std::from_chars(s.data(), s.data() + s.size(), d);
    if (e2 == std::errc() && p2 == s.data() + s.size() && d >= 0.0 && d <= 9.0e18 &&
        d == std::floor(d)) {
      return static_cast<std::uint64_t>(d);
    }
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + s + "'");
  }

  std::map<std::string, std::string> values_;
};

/// Parses `key = value` lines. `[section]` headers group keys for the reader
/// and are otherwise ignored; `#` starts a comment.
inline void load_config_text(RunConfig& cfg, std::string_view text, const std::string& origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = RunConfig::trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
      }
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = RunConfig::trim(std::string_view(t).substr(0, eq));
    const std::string value = RunConfig::trim(std::string_view(t).substr(eq + 1));
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  load_config_text(cfg, ss.str(), path);
}

/// Where a command writes. Tests capture into strings; the binary writes
/// files next to the --out prefix.
struct Sink {
  std::ostream& table;
  std::map<std::string, std::string> files;  // suffix -> content
};

inline void write_files(const Sink& sink, const std::string& prefix) {
  for (const auto& [suffix, content] : sink.files) {
    const std::string path = prefix + suffix;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << content;
  }
}

namespace detail {

inline std::string fmt(double v, int prec = 6) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
  return buf;
}

inline void row(std::ostream& os, const std::string& name, const std::string& value,
                const std::string& note = {}) {
  os << "  " << name;
  for (std::size_t i = name.size(); i < 34; ++i) os << ' ';
  os << value;
  if (!note.empty()) os << "  " << note;
  os << '\n';
}

inline const char* verdict(bool ok) { return ok ? "PASS" : "FAIL"; }

inline Json moment_json(const MomentReport& r) {
  return Json{{"name", r.name},
              {"trials", r.trials},
              {"theoretical_mean", r.theoretical_mean},
              {"empirical_mean", r.empirical_mean},
              {"mean_se", r.mean_se},
              {"mean_pass", r.mean_pass},
              {"theoretical_variance", r.theoretical_variance},
              {"empirical_variance", r.empirical_variance},
              {"variance_rel_error", r.variance_rel_error},
              {"variance_pass", r.variance_pass}};
}

inline void moment_table(std::ostream& os, const MomentReport& r) {
  row(os, "mean (theory / empirical)", fmt(r.theoretical_mean) + " / " + fmt(r.empirical_mean),
      std::string("SE ") + fmt(r.mean_se, 3) + "  " + verdict(r.mean_pass));
  row(os, "variance (theory / empirical)",
      fmt(r.theoretical_variance) + " / " + fmt(r.empirical_variance),
      "rel err " + fmt(r.variance_rel_error, 3) + "  " + verdict(r.variance_pass));
}

struct SuiteResult {
  Json json;
  bool pass = true;
};

inline SuiteResult suite_cm(const RunConfig& c, std::ostream& os) {
  const auto n = c.size("n", 1024);
  const auto m = c.size("m", 64);
  const double mu = c.real("mu", 0.1);
  const double sigma = c.real("sigma", 0.05);
  const auto trials = c.size("trials", 10'000);
  if (m == 0 || m >= n) throw ConfigError("suite cm: need 1 <= m < n");
  const auto r = mc_cm_moments(n, m, mu, sigma, trials, derive_seed(c.u64("seed", 0), 1));
  os << "count-min sum query, N=" << n << " m=" << m << " trials=" << trials << '\n';
  moment_table(os, r);
  return {moment_json(r), r.pass()};
}

inline SuiteResult suite_exhaustive(const RunConfig& c, std::ostream& os) {
  const auto instances = c.size("trials", 50);
  Rng rng(derive_seed(c.u64("seed", 0), 2));
  double worst = 0.0;
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t n = 1 + rng.below(6);
    const std::size_t m = 1 + rng.below(3);
    Vector g(n);
    for (double& x : g) x = rng.normal();
    for (const auto& e : exhaustive_cm_oracle(g, m)) {
      worst = std::max({worst, std::abs(e.enum_mean - e.formula_mean),
                        std::abs(e.enum_variance - e.formula_variance)});
    }
  }
  const bool ok = worst <= 1e-12;
  os << "exhaustive hash enumeration, " << instances << " instances (N<=6, m<=3)\n";
  row(os, "max |closed form - enumeration|", fmt(worst, 3), verdict(ok));
  return {Json{{"instances", instances}, {"max_abs_error", worst}, {"pass", ok}}, ok};
}

inline SuiteResult suite_cas(const RunConfig& c, std::ostream& os) {
  const auto nk = c.size("nk", 256);
  const auto m = c.size("m", 16);
  const double mu = c.real("mu", 0.2);
  const double sigma = c.real("sigma", 0.1);
  const double gj = c.real("gj", 0.35);
  const auto trials = c.size("trials", 100'000);
  if (m == 0 || m > nk) throw ConfigError("suite cas: need 1 <= m <= nk");
  const auto r = mc_cas_moments(nk, m, mu, sigma, gj, trials, derive_seed(c.u64("seed", 0), 3));
  os << "averaged sketch, N_k=" << nk << " m=" << m << " g(j)=" << fmt(gj)
     << " trials=" << trials << '\n';
  moment_table(os, r.loss);
  row(os, "exact variance (binomial model)", fmt(r.exact.variance),
      "exact/formula " + fmt(r.exact_vs_formula_variance_ratio, 4));
  row(os, "E||g_hat||^2 - ||g||^2", fmt(r.energy_gap_mean), verdict(r.energy_pass));
  row(os, "delta_hat", fmt(r.delta_hat));
  Json j = moment_json(r.loss);
  j["exact_mean"] = r.exact.mean;
  j["exact_variance"] = r.exact.variance;
  j["exact_vs_formula_variance_ratio"] = r.exact_vs_formula_variance_ratio;
  j["energy_gap_mean"] = r.energy_gap_mean;
  j["energy_gap_se"] = r.energy_gap_se;
  j["energy_pass"] = r.energy_pass;
  j["delta_hat"] = r.delta_hat;
  return {j, r.pass()};
}

inline SuiteResult suite_countsketch(const RunConfig& c, std::ostream& os) {
  const auto dim = c.size("dim", 64);
  const auto blocks = c.size("blocks", 8);
  const auto topk = c.size("topk_blocks", 4);
  const auto rows = c.size("rows", 3);
  const double lambda = c.real("lambda", 0.5);
  const auto trials = c.size("trials", 100'000);
  const auto seed = c.u64("seed", 0);
  Rng rng(derive_seed(seed, 4));
  Vector g(dim);
  for (double& x : g) x = rng.normal();
  const auto r = cs_unbiasedness(g, blocks, topk, rows, lambda, trials, derive_seed(seed, 5));
  os << "count-sketch decode error, d=" << dim << " r=" << rows << " lambda=" << fmt(lambda)
     << " trials=" << trials << '\n';
  row(os, "indices tested", std::to_string(r.indices.size()));
  row(os, "max |mean error| / SE", fmt(r.max_abs_z, 4), verdict(r.pass()));
  row(os, "E||decode||^2 vs ||sparse(g)||^2", fmt(r.second_moment) + " vs " + fmt(r.sparse_energy));
  return {Json{{"trials", trials},
               {"indices", r.indices.size()},
               {"max_abs_z", r.max_abs_z},
               {"second_moment", r.second_moment},
               {"sparse_energy", r.sparse_energy},
               {"pass", r.pass()}},
          r.pass()};
}

inline SuiteResult suite_topk(const RunConfig& c, std::ostream& os) {
  const auto dim = c.size("dim", 1024);
  const auto trials = c.size("trials", 1000);
  Rng rng(derive_seed(c.u64("seed", 0), 6));
  Json cases = Json::array();
  bool ok = true;
  os << "block Top-K energy ratio, d=" << dim << " trials=" << trials << '\n';
  std::vector<std::pair<std::size_t, std::size_t>> grid = {{4, 1}, {16, 4}, {32, 8}};
  if (c.has("blocks") || c.has("topk_blocks")) {
    grid = {{c.size("blocks", 16), c.size("topk_blocks", 4)}};
  }
  for (auto [b, k] : grid) {
    if (k < 1 || k > b || b > dim) throw ConfigError("suite topk: need 1 <= topk_blocks <= blocks <= dim");
    double min_ratio = 1.0;
    bool holds = true;
    for (std::size_t t = 0; t < trials; ++t) {
      Vector g(dim);
      for (double& x : g) x = rng.normal();
      const auto d = topk_delta_check(g, b, k);
      min_ratio = std::min(min_ratio, d.ratio);
      holds = holds && d.holds;
    }
    // Equal energy in every block.
    const auto tight = topk_delta_check(Vector(b * 4, 1.0), b, k);
    const bool tight_ok = std::abs(tight.ratio - tight.bound) <= 1e-12;
    ok = ok && holds && tight_ok;
    row(os, "b=" + std::to_string(b) + " K=" + std::to_string(k) + " min ratio",
        fmt(min_ratio) + " >= " + fmt(tight.bound), verdict(holds));
    row(os, "  uniform-energy ratio", fmt(tight.ratio, 17), verdict(tight_ok));
    cases.push_back(Json{{"blocks", b},
                         {"topk_blocks", k},
                         {"min_ratio", min_ratio},
                         {"bound", tight.bound},
                         {"tight_ratio", tight.ratio},
                         {"pass", holds && tight_ok}});
  }
  return {Json{{"cases", cases}, {"pass", ok}}, ok};
}

inline SuiteResult suite_delta(const RunConfig& c, std::ostream& os) {
  const auto dim = c.size("dim", 4096);
  const auto k = c.size("num_clusters", 4);
  const auto trials = c.size("trials", 1000);
  const auto r = cas_delta_estimate(dim, k, trials, derive_seed(c.u64("seed", 0), 7));
  os << "CASQ delta, N=" << dim << " K=" << k << " M=N/16 trials=" << trials << '\n';
  row(os, "delta_hat [95% CI]",
      fmt(r.delta.delta_hat) + " [" + fmt(r.delta.ci_low) + ", " + fmt(r.delta.ci_high) + "]",
      verdict(r.pass()));
  row(os, "max m_k / N_k", fmt(r.max_fill_ratio));
  return {Json{{"trials", r.delta.trials},
               {"delta_hat", r.delta.delta_hat},
               {"se", r.delta.se},
               {"ci_low", r.delta.ci_low},
               {"ci_high", r.delta.ci_high},
               {"max_fill_ratio", r.max_fill_ratio},
               {"pass", r.pass()}},
          r.pass()};
}

inline Json config_json(const RunConfig& c) {
  Json j = Json::object();
  for (const auto& [k, v] : c.values()) {
    if (k != "out") j[k] = v;
  }
  return j;
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace detail

// ---------------------------------------------------------------------------

inline int cmd_verify(const RunConfig& c, Sink& sink) {
  using Suite = detail::SuiteResult (*)(const RunConfig&, std::ostream&);
  static const std::vector<std::pair<std::string, Suite>> suites = {
      {"cm", detail::suite_cm},
      {"exhaustive", detail::suite_exhaustive},
      {"cas", detail::suite_cas},
      {"countsketch", detail::suite_countsketch},
      {"topk", detail::suite_topk},
      {"delta", detail::suite_delta}};
  const std::string which = c.str("suite", "all");
  bool matched = false;
  bool pass = true;
  Json results = Json::object();
  for (const auto& [name, fn] : suites) {
    if (which != "all" && which != name) continue;
    matched = true;
    auto r = fn(c, sink.table);
    sink.table << "  => " << detail::verdict(r.pass) << "\n\n";
    results[name] = std::move(r.json);
    pass = pass && r.pass;
  }
  if (!matched) throw ConfigError("unknown suite '" + which + "'");
  Json out{{"schema_version", kSchemaVersion},
           {"command", "verify"},
           {"config", detail::config_json(c)},
           {"suites", results},
           {"pass", pass}};
  sink.files[".json"] = detail::dump(out);
  return pass ? kExitOk : kExitCheckFailed;
}

inline SimConfig sim_config(const RunConfig& c) {
  SimConfig s;
  s.seed = c.u64("seed", 0);
  s.workers = c.size("workers", 4);
  s.iterations = c.size("iterations", 500);
  s.eta = c.real("eta", 0.0);
  s.rho = c.real("rho", 0.0);
  s.target_grad_norm_sq = c.real("target", 1e-3);
  const auto topo = c.str("topology", "ps");
  if (topo == "ps" || topo == "parameter_server") s.topology = Topology::parameter_server;
  else if (topo == "ring" || topo == "ring_allreduce") s.topology = Topology::ring_allreduce;
  else throw ConfigError("unknown topology '" + topo + "'");

  const auto prob = c.str("problem", "least_squares");
  if (prob == "least_squares") s.problem.kind = ProblemKind::least_squares;
  else if (prob == "logistic") s.problem.kind = ProblemKind::logistic;
  else throw ConfigError("unknown problem '" + prob + "'");
  s.problem.samples = c.size("samples", 1000);
  s.problem.dim = c.size("dim", 200);
  s.problem.noise = c.real("noise", 0.1);

  auto& comp = s.compressor;
  const auto kind = c.str("compressor", "casq");
  if (kind == "identity") comp.kind = CompressorKind::identity;
  else if (kind == "casq") comp.kind = CompressorKind::casq;
  else if (kind == "qsgd") comp.kind = CompressorKind::qsgd;
  else if (kind == "terngrad") comp.kind = CompressorKind::terngrad;
  else if (kind == "sparse") comp.kind = CompressorKind::sparse;
  else throw ConfigError("unknown compressor '" + kind + "'");
  if (c.has("bits") && c.has("num_clusters")) {
    throw ConfigError("set either bits or num_clusters, not both");
  }
  comp.num_clusters = c.has("bits") ? clusters_for_bits(static_cast<unsigned>(c.size("bits", 2)))
                                    : c.size("num_clusters", 4);
  comp.total_buckets = c.size("total_buckets", 0);
  comp.refresh_interval = c.size("refresh_interval", kDefaultRefreshInterval);
  comp.sample_cap = c.size("sample_cap", kDefaultSampleCap);
  comp.max_fill = c.real("max_fill", 1.0);
  comp.num_blocks = c.size("blocks", 16);
  comp.topk_blocks = c.size("topk_blocks", 4);
  comp.rows = c.size("rows", kDefaultSketchRows);
  comp.lambda = c.real("lambda", kDefaultLambda);
  const auto fb = c.str("error_feedback", "auto");
  if (fb == "auto") comp.feedback = Feedback::automatic;
  else if (fb == "on") comp.feedback = Feedback::on;
  else if (fb == "off") comp.feedback = Feedback::off;
  else throw ConfigError("error_feedback must be auto, on or off");
  return s;
}

inline int cmd_train(const RunConfig& c, Sink& sink) {
  const SimConfig s = sim_config(c);
  const ConvergenceReport rep = run_sim(s);
  const bool feasible = rep.eta < 2.0 / (rep.rho + rep.L);
  const auto descent = descent_check(rep, rep.rho);
  const auto errs = error_bound_check(rep);
  const bool descent_ok = all_true(descent);
  const bool error_ok = errs.all();
  const bool bound_ok = feasible && all_true(bound_check(rep));
  const auto& last = rep.records.back();
  BoundTerms terms;
  if (feasible) terms = bound_trace(rep).back();

  auto& os = sink.table;
  os << "training " << c.str("compressor", "casq") << " on " << c.str("problem", "least_squares")
     << ", W=" << rep.workers << " T=" << rep.iterations << '\n';
  detail::row(os, "L / rho / eta", detail::fmt(rep.L) + " / " + detail::fmt(rep.rho) + " / " +
                                       detail::fmt(rep.eta));
  detail::row(os, "f0 - f*", detail::fmt(rep.f0 - rep.fstar));
  detail::row(os, "final ||grad f||^2", detail::fmt(last.grad_norm_sq));
  detail::row(os, "iterations to target",
              rep.iterations_to_target > rep.iterations ? std::string("not reached")
                                                         : std::to_string(rep.iterations_to_target));
  detail::row(os, "delta_hat / sigma^2", detail::fmt(rep.delta_hat) + " / " + detail::fmt(rep.sigma_sq));
  detail::row(os, "a / b", feasible ? detail::fmt(terms.a) + " / " + detail::fmt(terms.b) : "n/a");
  const std::string no_fb = "n/a (error feedback off)";
  detail::row(os, "descent inequality", rep.error_feedback ? detail::verdict(descent_ok) : no_fb);
  detail::row(os, "error-compensation bound",
              !rep.error_feedback ? no_fb : errs.checked ? detail::verdict(error_ok) : "skipped");
  detail::row(os, "convergence bound", feasible ? detail::verdict(bound_ok) : "n/a (eta too large)");
  detail::row(os, "traffic (bytes)", std::to_string((rep.total_bits + 7) / 8));

  Json sigma = Json::array();
  for (double v : rep.sigma_hat) sigma.push_back(v);
  Json summary{{"schema_version", kSchemaVersion},
               {"command", "train"},
               {"config", detail::config_json(c)},
               {"L", rep.L},
               {"rho", rep.rho},
               {"eta", rep.eta},
               {"f0", rep.f0},
               {"fstar", rep.fstar},
               {"delta_hat", rep.delta_hat},
               {"sigma_hat", sigma},
               {"sigma_sq", rep.sigma_sq},
               {"a", feasible ? Json(terms.a) : Json(nullptr)},
               {"b", feasible ? Json(terms.b) : Json(nullptr)},
               {"final_f", last.f},
               {"final_grad_norm_sq", last.grad_norm_sq},
               {"iterations_to_target",
                rep.iterations_to_target > rep.iterations ? Json(nullptr)
                                                          : Json(rep.iterations_to_target)},
               {"error_feedback", rep.error_feedback},
               {"recursion_residual", rep.recursion_residual},
               {"descent_holds", descent_ok},
               {"error_bound_holds", error_ok},
               {"bound_holds", bound_ok},
               {"total_bytes", (rep.total_bits + 7) / 8}};
  sink.files[".csv"] = trace_csv(rep);
  sink.files[".json"] = detail::dump(summary);
  // The descent and residual inequalities describe the feedback loop only.
  const bool checks = s.compressor.kind == CompressorKind::identity || !rep.error_feedback ||
                      (descent_ok && error_ok);
  return checks ? kExitOk : kExitCheckFailed;
}

inline int cmd_bench_comm(const RunConfig& c, Sink& sink) {
  const auto sizes = c.sizes("sizes", {10'000, 100'000, 1'000'000, 10'000'000});
  const auto m = c.size("total_buckets", 4096);
  const double alpha = c.real("alpha", 0.05);
  const double lambda = c.real("lambda", kDefaultLambda);
  const auto rows = c.size("rows", kDefaultSketchRows);
  const auto block_size = c.size("block_size", 256);
  if (block_size == 0) throw ConfigError("block_size must be >= 1");
  auto& os = sink.table;
  os << "payload bits per worker (M=" << m << ", alpha=" << detail::fmt(alpha)
     << ", lambda=" << detail::fmt(lambda) << ", r=" << rows << ")\n";
  os << "  N            dense        two-level    CASQ K=4     CASQ K=8     sparse       coord\n";
  Json table = Json::array();
  for (auto n : sizes) {
    if (n == 0) throw ConfigError("sizes must be >= 1");
    const std::uint64_t dense = 32ULL * n;
    const std::uint64_t two = two_level_bits(n);
    const std::uint64_t cas4 = cas_comm_bits(n, 4, m);
    const std::uint64_t cas8 = cas_comm_bits(n, 8, m);
    const std::size_t blocks = (n + block_size - 1) / block_size;
    const std::uint64_t sparse = sparse_comm_bits(blocks, rows, sketch_columns(n, alpha, lambda, rows));
    const std::uint64_t coord = coordinate_format_bits(
        static_cast<std::size_t>(std::llround(alpha * static_cast<double>(n))));
    char line[160];
    std::snprintf(line, sizeof(line), "  %-12zu %-12llu %-12llu %-12llu %-12llu %-12llu %-12llu\n",
                  n, static_cast<unsigned long long>(dense), static_cast<unsigned long long>(two),
                  static_cast<unsigned long long>(cas4), static_cast<unsigned long long>(cas8),
                  static_cast<unsigned long long>(sparse), static_cast<unsigned long long>(coord));
    os << line;
    table.push_back(Json{{"n", n},
                         {"dense", dense},
                         {"two_level", two},
                         {"casq_k4", cas4},
                         {"casq_k8", cas8},
                         {"sparse_sketch", sparse},
                         {"coordinate", coord},
                         {"casq_k4_reduction", static_cast<double>(dense) / static_cast<double>(cas4)},
                         {"sparse_vs_coordinate", static_cast<double>(sparse) / static_cast<double>(coord)}});
  }
  sink.files[".json"] = detail::dump(Json{{"schema_version", kSchemaVersion},
                                          {"command", "bench-comm"},
                                          {"config", detail::config_json(c)},
                                          {"rows", table}});
  return kExitOk;
}

inline int cmd_topk(const RunConfig& c, Sink& sink) {
  auto r = detail::suite_topk(c, sink.table);
  sink.files[".json"] = detail::dump(Json{{"schema_version", kSchemaVersion},
                                          {"command", "topk"},
                                          {"config", detail::config_json(c)},
                                          {"result", r.json},
                                          {"pass", r.pass}});
  return r.pass ? kExitOk : kExitCheckFailed;
}

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> names = {"verify", "train", "bench-comm", "topk"};
  return names;
}

/// Runs one subcommand. Library errors map onto the exit-code contract.
inline int run_command(const std::string& command, const RunConfig& c, Sink& sink,
                       std::ostream& err) {
  try {
    if (command == "verify") return cmd_verify(c, sink);
    if (command == "train") return cmd_train(c, sink);
    if (command == "bench-comm") return cmd_bench_comm(c, sink);
    if (command == "topk") return cmd_topk(c, sink);
    err << "error: unknown command '" << command << "'\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitCheckFailed;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

}  // namespace sketchgc::cli
