#pragma once

// Run configuration read from TOML.
//
//   seed = 42
//   out = "out"
//   test_years = [2017, 2018, 2019]
//
//   [data]
//   weeks = 45
//   csv = "yields.csv"          # omit for the synthetic benchmark
//
//   [data.synth]
//   n_regions = 60
//   first_year = 2008
//   last_year = 2019
//   noise_sigma = 0.3
//
//   [[models]]
//   name = "ridge"
//   params = { lambda = 100.0 }
//   search = { lambda = { log_uniform = [0.01, 1000.0] } }
//
//   [tune]     folds, budget, in_evaluate
//   [explain]  model, test_year, method, background, budget, instances, top_k, force_plots
//   [select]   model, fractions, weather_only

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "toml.hpp"
#include "yieldbench/models.hpp"

namespace yieldbench {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct SynthConfig {
  int n_regions = 60;
  int first_year = 2008;
  int last_year = 2019;
  double noise_sigma = 0.3;
  std::optional<std::uint64_t> seed;  // defaults to the run seed
};

struct ModelConfig {
  std::string name;
  ParamMap params;
  SearchSpace search;
};

struct TuneConfig {
  int folds = 3;
  std::size_t budget = 50;
  bool in_evaluate = false;  // tune models that have a search space on each split before evaluating
};

struct ExplainConfig {
  std::string model;               // default: first configured model
  std::optional<int> test_year;    // default: last test year
  std::string method = "auto";     // auto | kernel | exact; auto = exact when d <= 13
  std::size_t background = 100;
  std::size_t budget = 0;          // 0 = 2d + 2048
  std::size_t instances = 0;       // 0 = every test-year row
  std::size_t top_k = 15;
  std::size_t force_plots = 2;
};

struct SelectConfig {
  std::string model;  // default: explain model
  std::vector<double> fractions = {1.0, 0.75, 0.5};
  bool weather_only = true;
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::vector<int> test_years;
  int weeks = kDefaultWeeks;
  std::string csv_path;  // empty = synthetic
  SynthConfig synth;
  std::vector<ModelConfig> models;
  TuneConfig tune;
  ExplainConfig explain;
  SelectConfig select;

  const ModelConfig& model(const std::string& name) const {
    for (const auto& m : models)
      if (m.name == name) return m;
    throw ConfigError("config: model \"" + name + "\" is not configured");
  }
  std::string explain_model() const { return explain.model.empty() ? models.front().name : explain.model; }
  std::string select_model() const { return select.model.empty() ? explain_model() : select.model; }
  int explain_year() const { return explain.test_year.value_or(test_years.back()); }
};

namespace cfg {

inline void check_keys(const toml::table& t, const std::string& where, std::initializer_list<std::string_view> allowed) {
  for (const auto& [k, v] : t) {
    bool ok = false;
    for (auto a : allowed) ok = ok || k.str() == a;
    if (!ok) throw ConfigError("config: unknown key \"" + std::string(k.str()) + "\" in " + where);
  }
}

inline double number(const toml::node& n, const std::string& what) {
  if (auto v = n.value<double>()) return *v;
  throw ConfigError("config: " + what + " must be a number");
}

template <class T>
T integer(const toml::node& n, const std::string& what, long long lo) {
  auto v = n.value<long long>();
  if (!v || *v < lo) throw ConfigError("config: " + what + " must be an integer >= " + std::to_string(lo));
  return static_cast<T>(*v);
}

inline std::string string(const toml::node& n, const std::string& what) {
  if (auto v = n.value<std::string>()) return *v;
  throw ConfigError("config: " + what + " must be a string");
}

inline bool boolean(const toml::node& n, const std::string& what) {
  if (auto v = n.value<bool>()) return *v;
  throw ConfigError("config: " + what + " must be true or false");
}

inline const toml::table& table(const toml::node& n, const std::string& what) {
  if (auto t = n.as_table()) return *t;
  throw ConfigError("config: " + what + " must be a table");
}

inline std::vector<double> numbers(const toml::node& n, const std::string& what) {
  auto arr = n.as_array();
  if (!arr) throw ConfigError("config: " + what + " must be an array");
  std::vector<double> out;
  for (const auto& e : *arr) out.push_back(number(e, what));
  return out;
}

inline Domain domain(const toml::node& n, const std::string& what) {
  const auto& t = table(n, what);
  if (t.size() != 1) throw ConfigError("config: " + what + " needs exactly one of grid, uniform, log_uniform, int_uniform");
  auto first = t.begin();
  const auto& [kind, value] = *first;
  auto v = numbers(value, what + "." + std::string(kind.str()));
  Domain d;
  if (kind.str() == "grid") {
    d = Domain::grid(v);
  } else {
    if (v.size() != 2) throw ConfigError("config: " + what + " bounds must be [low, high]");
    if (kind.str() == "uniform")
      d = Domain::uniform(v[0], v[1]);
    else if (kind.str() == "log_uniform")
      d = Domain::log_uniform(v[0], v[1]);
    else if (kind.str() == "int_uniform")
      d = Domain::int_uniform(v[0], v[1]);
    else
      throw ConfigError("config: unknown domain \"" + std::string(kind.str()) + "\" in " + what);
  }
  try {
    d.validate(what);
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return d;
}

}  // namespace cfg

inline RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {}) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config: " << e.description() << " (line " << e.source().begin.line << ")";
    throw ConfigError(msg.str());
  }
  using namespace cfg;
  check_keys(root, "top level", {"seed", "out", "test_years", "data", "models", "tune", "explain", "select"});
  RunConfig c;
  if (auto n = root.get("seed")) c.seed = integer<std::uint64_t>(*n, "seed", 0);
  if (auto n = root.get("out")) c.out_dir = string(*n, "out");
  if (auto n = root.get("test_years"))
    for (double y : numbers(*n, "test_years")) c.test_years.push_back(static_cast<int>(y));
  if (c.test_years.empty()) throw ConfigError("config: test_years must list at least one year");

  if (auto n = root.get("data")) {
    const auto& d = table(*n, "data");
    check_keys(d, "[data]", {"weeks", "csv", "synth"});
    if (auto w = d.get("weeks")) c.weeks = integer<int>(*w, "data.weeks", 1);
    if (auto p = d.get("csv")) {
      std::filesystem::path path = string(*p, "data.csv");
      if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
      c.csv_path = path.string();
    }
    if (auto s = d.get("synth")) {
      const auto& st = table(*s, "data.synth");
      check_keys(st, "[data.synth]", {"n_regions", "first_year", "last_year", "noise_sigma", "seed"});
      if (auto v = st.get("n_regions")) c.synth.n_regions = integer<int>(*v, "data.synth.n_regions", 1);
      if (auto v = st.get("first_year")) c.synth.first_year = integer<int>(*v, "data.synth.first_year", 0);
      if (auto v = st.get("last_year")) c.synth.last_year = integer<int>(*v, "data.synth.last_year", 0);
      if (auto v = st.get("noise_sigma")) c.synth.noise_sigma = number(*v, "data.synth.noise_sigma");
      if (auto v = st.get("seed")) c.synth.seed = integer<std::uint64_t>(*v, "data.synth.seed", 0);
      if (c.synth.last_year < c.synth.first_year) throw ConfigError("config: data.synth.last_year < first_year");
      if (!(c.synth.noise_sigma >= 0)) throw ConfigError("config: data.synth.noise_sigma must be >= 0");
    }
  }

  auto models = root.get("models");
  if (!models || !models->as_array() || models->as_array()->empty())
    throw ConfigError("config: at least one [[models]] entry is required");
  for (const auto& m : *models->as_array()) {
    const auto& mt = table(m, "models entry");
    check_keys(mt, "[[models]]", {"name", "params", "search"});
    ModelConfig mc;
    if (!mt.get("name")) throw ConfigError("config: [[models]] entry without name");
    mc.name = string(*mt.get("name"), "models.name");
    const auto& names = model_names();
    if (std::find(names.begin(), names.end(), mc.name) == names.end())
      throw ConfigError("config: unknown model \"" + mc.name + "\"");
    if (auto p = mt.get("params"))
      for (const auto& [k, v] : table(*p, "models.params"))
        mc.params[std::string(k.str())] = number(v, mc.name + ".params." + std::string(k.str()));
    if (auto s = mt.get("search"))
      for (const auto& [k, v] : table(*s, "models.search"))
        mc.search[std::string(k.str())] = domain(v, mc.name + ".search." + std::string(k.str()));
    try {
      ParamMap all = mc.params;
      for (const auto& [k, d] : mc.search) all[k] = 0.0;
      detail::merged(mc.name, all);
    } catch (const Error& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    for (const auto& other : c.models)
      if (other.name == mc.name) throw ConfigError("config: model \"" + mc.name + "\" listed twice");
    c.models.push_back(std::move(mc));
  }

  if (auto n = root.get("tune")) {
    const auto& t = table(*n, "tune");
    check_keys(t, "[tune]", {"folds", "budget", "in_evaluate"});
    if (auto v = t.get("folds")) c.tune.folds = integer<int>(*v, "tune.folds", 2);
    if (auto v = t.get("budget")) c.tune.budget = integer<std::size_t>(*v, "tune.budget", 1);
    if (auto v = t.get("in_evaluate")) c.tune.in_evaluate = boolean(*v, "tune.in_evaluate");
  }
  if (auto n = root.get("explain")) {
    const auto& t = table(*n, "explain");
    check_keys(t, "[explain]",
               {"model", "test_year", "method", "background", "budget", "instances", "top_k", "force_plots"});
    if (auto v = t.get("model")) c.explain.model = string(*v, "explain.model");
    if (auto v = t.get("test_year")) c.explain.test_year = integer<int>(*v, "explain.test_year", 0);
    if (auto v = t.get("method")) c.explain.method = string(*v, "explain.method");
    if (auto v = t.get("background")) c.explain.background = integer<std::size_t>(*v, "explain.background", 1);
    if (auto v = t.get("budget")) c.explain.budget = integer<std::size_t>(*v, "explain.budget", 0);
    if (auto v = t.get("instances")) c.explain.instances = integer<std::size_t>(*v, "explain.instances", 0);
    if (auto v = t.get("top_k")) c.explain.top_k = integer<std::size_t>(*v, "explain.top_k", 1);
    if (auto v = t.get("force_plots")) c.explain.force_plots = integer<std::size_t>(*v, "explain.force_plots", 0);
    if (c.explain.method != "auto" && c.explain.method != "kernel" && c.explain.method != "exact")
      throw ConfigError("config: explain.method must be auto, kernel or exact");
  }
  if (auto n = root.get("select")) {
    const auto& t = table(*n, "select");
    check_keys(t, "[select]", {"model", "fractions", "weather_only"});
    if (auto v = t.get("model")) c.select.model = string(*v, "select.model");
    if (auto v = t.get("fractions")) c.select.fractions = numbers(*v, "select.fractions");
    if (auto v = t.get("weather_only")) c.select.weather_only = boolean(*v, "select.weather_only");
    for (double p : c.select.fractions)
      if (!(p > 0.0 && p <= 1.0)) throw ConfigError("config: select.fractions must lie in (0, 1]");
  }
  c.model(c.explain_model());
  c.model(c.select_model());
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path());
}

}  // namespace yieldbench
