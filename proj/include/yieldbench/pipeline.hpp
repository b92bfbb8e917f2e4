#pragma once

// End-to-end runs shared by the command-line tool and the acceptance suite:
// temporal hold-out evaluation, hyperparameter search, Shapley explanation and
// Shapley-ranked feature selection.

#include <algorithm>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "yieldbench/config.hpp"
#include "yieldbench/explain.hpp"
#include "yieldbench/models.hpp"
#include "yieldbench/report.hpp"
#include "yieldbench/svg.hpp"

namespace yieldbench {

inline std::uint64_t run_seed(const RunConfig& c) { return c.seed.value_or(1); }

inline SynthSpec synth_spec(const RunConfig& c) {
  SynthSpec s = default_synth_spec(c.weeks, c.synth.seed.value_or(run_seed(c)));
  s.n_regions = c.synth.n_regions;
  s.first_year = c.synth.first_year;
  s.last_year = c.synth.last_year;
  s.noise_sigma = c.synth.noise_sigma;
  return s;
}

inline FeatureTable load_data(const RunConfig& c) {
  if (!c.csv_path.empty()) return load_table(c.csv_path, default_schema(c.weeks));
  return generate_synthetic(synth_spec(c));
}

inline std::string data_label(const RunConfig& c) {
  if (!c.csv_path.empty()) return "csv:" + std::filesystem::path(c.csv_path).filename().string();
  const auto s = synth_spec(c);
  return "synthetic: " + std::to_string(s.n_regions) + " regions, " + std::to_string(s.first_year) + "-" +
         std::to_string(s.last_year) + ", W=" + std::to_string(s.weeks) + ", seed " + std::to_string(s.seed);
}

// Per-(test year, model) seed, independent of which other models are configured.
inline std::uint64_t model_seed(std::uint64_t seed, int test_year, const std::string& model) {
  const auto& names = model_names();
  const auto idx = static_cast<std::uint64_t>(std::find(names.begin(), names.end(), model) - names.begin());
  return derive_seed(derive_seed(seed, static_cast<std::uint64_t>(test_year)), idx);
}

// Training rows are every year before the test year; the scaler is fitted on them only.
struct PreparedSplit {
  int test_year = 0;
  TemporalSplit split;
  ScalerParams scaler;
  Matrix x_train, x_test;
  Vector y_train, y_test;
  std::vector<int> train_years;
};

inline PreparedSplit prepare_split(const FeatureTable& t, int test_year) {
  PreparedSplit p;
  p.test_year = test_year;
  p.split = temporal_split(t, test_year);
  if (p.split.train.empty())
    throw Error("split: no training years before test year " + std::to_string(test_year));
  p.scaler = fit_scaler(t, p.split.train);
  const Matrix z = apply_scaler(t.rows, p.scaler);
  p.x_train = select_rows(z, p.split.train);
  p.x_test = select_rows(z, p.split.test);
  p.y_train = select_rows(t.target, p.split.train);
  p.y_test = select_rows(t.target, p.split.test);
  std::set<int> years;
  for (auto i : p.split.train) years.insert(t.year[i]);
  p.train_years.assign(years.begin(), years.end());
  return p;
}

inline FitPredict make_fit_predict(const std::string& model, const std::vector<FeatureDescriptor>& descriptors) {
  return [model, descriptors](const ParamMap& p, const Matrix& xt, const Vector& yt, const Matrix& xv,
                              std::uint64_t seed) {
    auto m = make_regressor(model, p, ModelContext{descriptors, seed});
    m->fit(xt, yt);
    return m->predict(xv);
  };
}

// Search over a model's configured space on the training rows of one split.
// Fixed params from the config are kept unless the space overrides them.
inline SearchResult tune_model(const RunConfig& c, const ModelConfig& mc, const FeatureTable& t,
                               const PreparedSplit& s, std::uint64_t seed) {
  if (mc.search.empty()) throw ConfigError("tune: model " + mc.name + " has no search space");
  std::vector<int> row_years;
  for (auto i : s.split.train) row_years.push_back(t.year[i]);
  check_no_test_rows(row_years, s.test_year);
  const auto folds = make_folds(s.split.train.size(), c.tune.folds, derive_seed(seed, 0));
  auto base = make_fit_predict(mc.name, t.descriptors);
  const ParamMap fixed = mc.params;
  FitPredict fp = [&](const ParamMap& p, const Matrix& xt, const Vector& yt, const Matrix& xv, std::uint64_t sd) {
    ParamMap all = fixed;
    for (const auto& [k, v] : p) all[k] = v;
    return base(all, xt, yt, xv, sd);
  };
  auto res = search(fp, mc.search, c.tune.budget, s.x_train, s.y_train, folds, derive_seed(seed, 1));
  ParamMap best = fixed;
  for (const auto& [k, v] : res.best.config) best[k] = v;
  res.best.config = best;
  return res;
}

inline ReportRow evaluate_model(const std::string& model, const ParamMap& params, const FeatureTable& t,
                                 const PreparedSplit& s, std::uint64_t seed) {
  auto m = make_regressor(model, params, ModelContext{t.descriptors, seed});
  m->fit(s.x_train, s.y_train);
  const Vector p_train = m->predict(s.x_train);
  const Vector p_test = m->predict(s.x_test);
  ReportRow row;
  row.model = model;
  row.params = detail::merged(model, params);
  row.train_years = s.train_years;
  row.test_year = s.test_year;
  row.n_train = s.split.train.size();
  row.n_test = s.split.test.size();
  row.train = evaluate(p_train, s.y_train);
  row.test = evaluate(p_test, s.y_test);
  const auto truth = to_std(s.y_test), pred = to_std(p_test);
  for (std::size_t i = 0; i < truth.size(); ++i) row.test_residuals.push_back(truth[i] - pred[i]);
  if (row.test_residuals.size() >= 8) row.residual_test = anderson_darling_normality(row.test_residuals);
  row.hex_size = default_hex_size(truth);
  row.hexbin = hexbin(pred, truth, row.hex_size);
  std::vector<std::string> regions;
  for (auto i : s.split.test) regions.push_back(t.region_id[i]);
  row.per_region_error = per_region_error(regions, truth, pred);
  return row;
}

// One row per (test year, model), in config order.
inline EvalReport run_evaluate(const RunConfig& c, const FeatureTable& t) {
  EvalReport r;
  r.seed = run_seed(c);
  r.data = data_label(c);
  for (int year : c.test_years) {
    const auto s = prepare_split(t, year);
    for (const auto& mc : c.models) {
      const auto seed = model_seed(r.seed, year, mc.name);
      ParamMap params = mc.params;
      if (c.tune.in_evaluate && !mc.search.empty()) params = tune_model(c, mc, t, s, seed).best.config;
      r.rows.push_back(evaluate_model(mc.name, params, t, s, seed));
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Explanation

struct ExplainResult {
  std::string model;
  int test_year = 0;
  std::vector<std::string> names;
  std::vector<std::size_t> rows;          // table rows explained
  std::vector<Attribution> attributions;  // in model input (z-scored) space
  Matrix raw_values;                      // unscaled feature values of the explained rows
  ImportanceRanking ranking;              // all features
};

inline ExplainResult explain_fitted(const RunConfig& c, const Regressor& model, const FeatureTable& t,
                                    const PreparedSplit& s, std::uint64_t seed) {
  const ExplainConfig& e = c.explain;
  ExplainResult out;
  out.model = model.name();
  out.test_year = s.test_year;
  out.names = t.feature_names();
  const std::size_t d = t.d();
  const bool exact = e.method == "exact" || (e.method == "auto" && d <= static_cast<std::size_t>(kMaxExactFeatures));

  std::vector<std::size_t> pool(s.split.train.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  const auto bg_idx = sample_background(pool, e.background, derive_seed(seed, 11));
  const Matrix background = select_rows(s.x_train, bg_idx);

  std::vector<std::size_t> local(s.split.test.size());
  std::iota(local.begin(), local.end(), std::size_t{0});
  if (e.instances > 0 && e.instances < local.size()) local = sample_background(local, e.instances, derive_seed(seed, 12));

  const Matrix z = select_rows(s.x_test, local);
  for (std::size_t k = 0; k < local.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    Attribution a = exact ? exact_shapley(model, z.row(row), background)
                          : kernel_shap(model, z.row(row), background,
                                        {e.budget, derive_seed(seed, 100 + local[k]), 0.0});
    a.instance_ref = s.split.test[local[k]];
    out.rows.push_back(a.instance_ref);
    out.attributions.push_back(std::move(a));
  }
  out.raw_values = select_rows(t.rows, out.rows);
  out.ranking = global_importance(out.attributions, z, out.names);
  return out;
}

inline ExplainResult run_explain(const RunConfig& c, const FeatureTable& t) {
  const auto name = c.explain_model();
  const int year = c.explain_year();
  const auto s = prepare_split(t, year);
  const auto seed = model_seed(run_seed(c), year, name);
  auto m = make_regressor(name, c.model(name).params, ModelContext{t.descriptors, seed});
  m->fit(s.x_train, s.y_train);
  return explain_fitted(c, *m, t, s, seed);
}

inline nlohmann::json attribution_line(const ExplainResult& r, std::size_t k, const FeatureTable& t) {
  const auto& a = r.attributions[k];
  std::vector<double> values(static_cast<std::size_t>(r.raw_values.cols()));
  for (std::size_t j = 0; j < values.size(); ++j)
    values[j] = r.raw_values(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j));
  return {{"model", r.model},         {"test_year", r.test_year},
          {"instance_ref", a.instance_ref}, {"region_id", t.region_id[a.instance_ref]},
          {"year", t.year[a.instance_ref]}, {"base_value", a.base_value},
          {"prediction", a.prediction}, {"phi", a.phi},
          {"values", values},         {"budget_used", a.budget_used},
          {"exact", a.exact}};
}

inline nlohmann::json ranking_to_json(const ImportanceRanking& r) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t k = 0; k < r.size(); ++k)
    arr.push_back({{"rank", k + 1}, {"feature", r[k].feature}, {"name", r[k].name},
                   {"mean_abs_phi", r[k].mean_abs_phi}, {"sign", r[k].sign}});
  return arr;
}

inline ImportanceRanking ranking_from_json(const nlohmann::json& arr) {
  ImportanceRanking r;
  for (const auto& e : arr)
    r.push_back({e.at("feature").get<std::size_t>(), e.at("name").get<std::string>(),
                 e.at("mean_abs_phi").get<double>(), e.at("sign").get<int>()});
  if (r.empty()) throw Error("ranking: empty");
  return r;
}

// Keeps the `keep` largest contributions and folds the rest into one positive
// and one negative "other" item.
inline ForcePlotData compact_force_data(const ForcePlotData& f, std::size_t keep) {
  if (f.items.size() <= keep) return f;
  ForcePlotData out{f.base_value, f.output, {f.items.begin(), f.items.begin() + static_cast<std::ptrdiff_t>(keep)}};
  double pos = 0.0, neg = 0.0;
  std::size_t npos = 0, nneg = 0;
  for (std::size_t k = keep; k < f.items.size(); ++k) {
    if (f.items[k].phi > 0) {
      pos += f.items[k].phi;
      ++npos;
    } else if (f.items[k].phi < 0) {
      neg += f.items[k].phi;
      ++nneg;
    }
  }
  if (npos) out.items.push_back({f.items.size(), std::to_string(npos) + " others", 0.0, pos, true});
  if (nneg) out.items.push_back({f.items.size(), std::to_string(nneg) + " others", 0.0, neg, false});
  return out;
}

inline std::string importance_svg(const ImportanceRanking& r, std::size_t top_k, const std::string& model, int year) {
  ImportanceRanking top(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(std::min(top_k, r.size())));
  return emit_svg({PlotKind::importance_bar,
                   "Mean |Shapley value|, top " + std::to_string(top.size()) + " features (" + model + ", " +
                       std::to_string(year) + ")",
                   640, 400, top});
}

inline std::string force_svg(const Attribution& a, std::span<const double> values, std::span<const std::string> names,
                             const std::string& title) {
  return emit_svg({PlotKind::force, title, 760, 240, compact_force_data(force_plot_data(a, values, names), 8)});
}

inline std::string hexbin_svg(const ReportRow& row) {
  return emit_svg({PlotKind::hexbin, "Observed vs predicted, " + row.model + " " + std::to_string(row.test_year), 520,
                   520, HexbinPayload{row.hexbin, row.hex_size}});
}

inline std::string residual_svg(const ReportRow& row) {
  std::string title = "Test residuals, " + row.model + " " + std::to_string(row.test_year);
  if (row.residual_test) title += " (Anderson-Darling " + row.residual_test->band + ")";
  return emit_svg({PlotKind::residual_hist, title, 560, 360, HistogramPayload{row.test_residuals, 20}});
}

// ---------------------------------------------------------------------------
// Feature selection

struct SelectionVariant {
  std::string label;
  std::vector<std::size_t> features;
  MetricSet test;
};

struct SelectionResult {
  std::string model;
  int test_year = 0;
  std::vector<SelectionVariant> variants;
};

// Retrains the model on each feature subset. Networks with a fixed input
// layout keep every column and have the dropped ones set to the training mean.
inline SelectionResult run_select_with_ranking(const RunConfig& c, const FeatureTable& t, const PreparedSplit& s,
                                               const ImportanceRanking& ranking) {
  SelectionResult out;
  out.model = c.select_model();
  out.test_year = s.test_year;
  const auto& mc = c.model(out.model);
  const auto seed = model_seed(run_seed(c), s.test_year, out.model);
  const bool masked = out.model == "cnn";
  std::vector<std::pair<std::string, std::vector<std::size_t>>> subsets;
  for (double p : c.select.fractions) {
    char label[32];
    std::snprintf(label, sizeof label, "top_%g%%", p * 100.0);
    subsets.emplace_back(p == 1.0 ? std::string("full") : std::string(label), select_top_fraction(ranking, p));
  }
  if (c.select.weather_only) subsets.emplace_back("weather", select_group(t.descriptors, FeatureGroup::weather));
  for (auto& [label, keep] : subsets) {
    if (keep.empty()) throw Error("select: subset " + label + " has no features");
    Matrix xt, xv;
    std::vector<FeatureDescriptor> desc = t.descriptors;
    if (masked) {
      xt = mask_columns(s.x_train, keep);
      xv = mask_columns(s.x_test, keep);
    } else {
      xt.resize(s.x_train.rows(), static_cast<Eigen::Index>(keep.size()));
      xv.resize(s.x_test.rows(), static_cast<Eigen::Index>(keep.size()));
      desc.clear();
      for (std::size_t k = 0; k < keep.size(); ++k) {
        xt.col(static_cast<Eigen::Index>(k)) = s.x_train.col(static_cast<Eigen::Index>(keep[k]));
        xv.col(static_cast<Eigen::Index>(k)) = s.x_test.col(static_cast<Eigen::Index>(keep[k]));
        desc.push_back(t.descriptors[keep[k]]);
      }
    }
    auto m = make_regressor(out.model, mc.params, ModelContext{desc, seed});
    m->fit(xt, s.y_train);
    out.variants.push_back({label, keep, evaluate(m->predict(xv), s.y_test)});
  }
  return out;
}

inline nlohmann::json selection_to_json(const SelectionResult& r) {
  nlohmann::json vars = nlohmann::json::array();
  for (const auto& v : r.variants)
    vars.push_back({{"label", v.label}, {"n_features", v.features.size()}, {"features", v.features},
                    {"test", detail::metrics_to_json(v.test)}});
  return {{"schema_version", kReportSchemaVersion}, {"model", r.model}, {"test_year", r.test_year}, {"variants", vars}};
}

inline std::string format_selection_table(const SelectionResult& r) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %10s %9s %9s %9s\n", "subset", "features", "rmse", "mae", "r");
  out << r.model << " test " << r.test_year << '\n' << line;
  for (const auto& v : r.variants) {
    std::snprintf(line, sizeof line, "%-10s %10zu %9.4f %9.4f %9.4f\n", v.label.c_str(), v.features.size(), v.test.rmse,
                  v.test.mae, v.test.sqrt_r2);
    out << line;
  }
  return out.str();
}

}  // namespace yieldbench
