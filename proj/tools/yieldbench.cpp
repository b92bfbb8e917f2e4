// yieldbench <synth|train|tune|evaluate|explain|select|plot> --config <path> [--seed N] [--out DIR]
//
// Exit status: 0 success, 1 usage or configuration error, 2 data or runtime error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "yieldbench/pipeline.hpp"

namespace fs = std::filesystem;
using namespace yieldbench;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("error writing " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct Context {
  RunConfig config;
  fs::path out;
};

void require_seed(const RunConfig& c, const std::string& cmd) {
  if (!c.seed) throw UsageError(cmd + ": a seed is required (pass --seed or set seed in the config)");
}

void write_loss_svg(const fs::path& dir, const Regressor& m) {
  auto* net = dynamic_cast<const NetworkRegressor*>(&m);
  if (!net || net->trained().history.train_loss.empty()) return;
  const auto& h = net->trained().history;
  write_file(dir / ("loss_" + m.name() + ".svg"),
             emit_svg({PlotKind::loss_curve, "Training loss, " + m.name(), 560, 360, LossPayload{h.train_loss, h.val_loss}}));
}

void write_report_svgs(const fs::path& dir, const EvalReport& r) {
  for (const auto& row : r.rows) {
    const auto stem = row.model + "_" + std::to_string(row.test_year);
    write_file(dir / ("hexbin_" + stem + ".svg"), hexbin_svg(row));
    write_file(dir / ("residuals_" + stem + ".svg"), residual_svg(row));
  }
}

void write_force_svgs(const fs::path& dir, const nlohmann::json& lines, const std::vector<std::string>& names,
                      std::size_t count) {
  for (std::size_t k = 0; k < count && k < lines.size(); ++k) {
    const auto& j = lines[k];
    Attribution a;
    a.phi = j.at("phi").get<std::vector<double>>();
    a.base_value = j.at("base_value").get<double>();
    a.prediction = j.at("prediction").get<double>();
    const auto values = j.at("values").get<std::vector<double>>();
    const auto title = "Force plot, " + j.at("model").get<std::string>() + ", region " +
                       j.at("region_id").get<std::string>() + " " + std::to_string(j.at("year").get<int>());
    write_file(dir / ("force_" + std::to_string(k) + ".svg"), force_svg(a, values, names, title));
  }
}

std::vector<std::string> names_from_ranking(const ImportanceRanking& r) {
  std::vector<std::string> names(r.size());
  for (const auto& e : r) names.at(e.feature) = e.name;
  return names;
}

int cmd_synth(const Context& ctx) {
  const auto spec = synth_spec(ctx.config);
  const auto table = generate_synthetic(spec);
  std::ostringstream csv;
  write_table(csv, table);
  write_file(ctx.out / "synthetic.csv", csv.str());
  nlohmann::json terms = nlohmann::json::array();
  for (const auto& t : spec.terms) {
    static const char* kinds[] = {"linear", "product", "hinge_above", "hinge_below"};
    terms.push_back({{"kind", kinds[static_cast<int>(t.kind)]}, {"features", t.features}, {"coef", t.coef},
                     {"center_a", t.center_a}, {"center_b", t.center_b}, {"threshold", t.threshold}});
  }
  nlohmann::json truth = {{"seed", spec.seed},       {"weeks", spec.weeks},         {"n_regions", spec.n_regions},
                          {"first_year", spec.first_year}, {"last_year", spec.last_year}, {"noise_sigma", spec.noise_sigma},
                          {"base_yield", spec.base_yield}, {"terms", terms},           {"null_features", spec.null_features}};
  write_file(ctx.out / "ground_truth.json", truth.dump(2) + "\n");
  std::cout << "wrote " << table.n() << " rows x " << table.d() << " features to " << (ctx.out / "synthetic.csv").string()
            << "\n";
  return 0;
}

int cmd_train(const Context& ctx) {
  require_seed(ctx.config, "train");
  const auto& c = ctx.config;
  const auto table = load_data(c);
  const int year = c.test_years.back();
  const auto s = prepare_split(table, year);
  for (const auto& mc : c.models) {
    ModelArtifact a;
    a.model = make_regressor(mc.name, mc.params, ModelContext{table.descriptors, model_seed(*c.seed, year, mc.name)});
    a.model->fit(s.x_train, s.y_train);
    a.scaler = s.scaler;
    a.feature_names = table.feature_names();
    a.test_year = year;
    write_file(ctx.out / ("model_" + mc.name + ".json"), artifact_to_json(a).dump() + "\n");
    write_loss_svg(ctx.out, *a.model);
    const auto m = evaluate(a.model->predict(s.x_test), s.y_test);
    std::cout << mc.name << ": trained on " << years_label(s.train_years) << ", test " << year << " rmse "
              << format_double(m.rmse) << "\n";
  }
  return 0;
}

int cmd_tune(const Context& ctx) {
  require_seed(ctx.config, "tune");
  const auto& c = ctx.config;
  bool any = false;
  for (const auto& mc : c.models) any = any || !mc.search.empty();
  if (!any) throw ConfigError("tune: no model has a search space");
  const auto table = load_data(c);
  std::ostringstream trials;
  nlohmann::json best = nlohmann::json::object();
  for (int year : c.test_years) {
    const auto s = prepare_split(table, year);
    for (const auto& mc : c.models) {
      if (mc.search.empty()) continue;
      const auto res = tune_model(c, mc, table, s, model_seed(*c.seed, year, mc.name));
      for (const auto& t : res.trials)
        trials << nlohmann::json{{"model", mc.name},          {"test_year", year},
                                 {"index", t.index},          {"config", t.config},
                                 {"fold_rmse", t.fold_rmse},  {"mean_rmse", t.mean_rmse},
                                 {"seed", t.seed},            {"wall_seconds", t.wall_seconds}}
                      .dump()
               << '\n';
      best[mc.name][std::to_string(year)] = {{"params", res.best.config}, {"mean_rmse", res.best.mean_rmse},
                                             {"trial", res.best.index}};
      std::cout << mc.name << " " << year << ": best cv rmse " << format_double(res.best.mean_rmse) << " after "
                << res.trials.size() << " trials\n";
    }
  }
  write_file(ctx.out / "trials.jsonl", trials.str());
  write_file(ctx.out / "best_params.json", best.dump(2) + "\n");
  return 0;
}

int cmd_evaluate(const Context& ctx) {
  const auto table = load_data(ctx.config);
  const auto report = run_evaluate(ctx.config, table);
  write_file(ctx.out / "report.json", report_dump(report));
  const auto text = format_report_table(report);
  write_file(ctx.out / "report.txt", text);
  write_file(ctx.out / "per_region_error.csv", per_region_csv(report));
  write_report_svgs(ctx.out, report);
  std::cout << text;
  return 0;
}

void write_explanation(const Context& ctx, const ExplainResult& r, const FeatureTable& table) {
  const auto& c = ctx.config;
  write_file(ctx.out / "ranking.json", ranking_to_json(r.ranking).dump(2) + "\n");
  write_file(ctx.out / "importance.svg", importance_svg(r.ranking, c.explain.top_k, r.model, r.test_year));
  nlohmann::json lines = nlohmann::json::array();
  std::ostringstream jsonl;
  for (std::size_t k = 0; k < r.attributions.size(); ++k) {
    lines.push_back(attribution_line(r, k, table));
    jsonl << lines.back().dump() << '\n';
  }
  write_file(ctx.out / "attributions.jsonl", jsonl.str());
  write_force_svgs(ctx.out, lines, r.names, c.explain.force_plots);
}

int cmd_explain(const Context& ctx) {
  require_seed(ctx.config, "explain");
  const auto table = load_data(ctx.config);
  const auto r = run_explain(ctx.config, table);
  write_explanation(ctx, r, table);
  double worst = 0.0;
  for (const auto& a : r.attributions) worst = std::max(worst, a.efficiency_gap());
  std::cout << "explained " << r.attributions.size() << " instances of " << r.model << " (" << r.test_year
            << "), max efficiency gap " << worst << "\n";
  for (std::size_t k = 0; k < std::min<std::size_t>(ctx.config.explain.top_k, r.ranking.size()); ++k)
    std::cout << "  " << k + 1 << ". " << r.ranking[k].name << " " << format_double(r.ranking[k].mean_abs_phi)
              << (r.ranking[k].sign > 0 ? " +" : (r.ranking[k].sign < 0 ? " -" : " 0")) << "\n";
  return 0;
}

int cmd_select(const Context& ctx) {
  const auto& c = ctx.config;
  const auto table = load_data(c);
  const auto s = prepare_split(table, c.explain_year());
  const auto name = c.select_model();
  auto m = make_regressor(name, c.model(name).params, ModelContext{table.descriptors, model_seed(run_seed(c), s.test_year, name)});
  m->fit(s.x_train, s.y_train);
  const auto r = explain_fitted(c, *m, table, s, model_seed(run_seed(c), s.test_year, name));
  write_file(ctx.out / "selection_ranking.json", ranking_to_json(r.ranking).dump(2) + "\n");
  const auto sel = run_select_with_ranking(c, table, s, r.ranking);
  write_file(ctx.out / "selection.json", selection_to_json(sel).dump(2) + "\n");
  const auto text = format_selection_table(sel);
  write_file(ctx.out / "selection.txt", text);
  std::cout << text;
  return 0;
}

int cmd_plot(const Context& ctx) {
  const auto& c = ctx.config;
  std::size_t written = 0;
  if (fs::exists(ctx.out / "report.json")) {
    const auto r = report_from_json(nlohmann::json::parse(read_file(ctx.out / "report.json")));
    write_report_svgs(ctx.out, r);
    written += 2 * r.rows.size();
  }
  if (fs::exists(ctx.out / "ranking.json")) {
    const auto ranking = ranking_from_json(nlohmann::json::parse(read_file(ctx.out / "ranking.json")));
    std::string model = c.explain_model();
    int year = c.explain_year();
    nlohmann::json lines = nlohmann::json::array();
    if (fs::exists(ctx.out / "attributions.jsonl")) {
      std::istringstream in(read_file(ctx.out / "attributions.jsonl"));
      for (std::string line; std::getline(in, line);)
        if (!line.empty()) lines.push_back(nlohmann::json::parse(line));
      if (!lines.empty()) {
        model = lines[0].at("model").get<std::string>();
        year = lines[0].at("test_year").get<int>();
      }
    }
    write_file(ctx.out / "importance.svg", importance_svg(ranking, c.explain.top_k, model, year));
    write_force_svgs(ctx.out, lines, names_from_ranking(ranking), c.explain.force_plots);
    written += 1 + std::min(lines.size(), c.explain.force_plots);
  }
  for (const auto& mc : c.models) {
    const auto path = ctx.out / ("model_" + mc.name + ".json");
    if (!fs::exists(path)) continue;
    const auto a = artifact_from_json(nlohmann::json::parse(read_file(path)));
    if (dynamic_cast<const NetworkRegressor*>(a.model.get())) {
      write_loss_svg(ctx.out, *a.model);
      ++written;
    }
  }
  if (written == 0) throw Error("plot: nothing to render in " + ctx.out.string());
  std::cout << "rendered " << written << " plots in " << ctx.out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crop-yield regression benchmark: synthetic data, nine regressors, Shapley explanations"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Context&);
  };
  const Command commands[] = {
      {"synth", "write the synthetic benchmark as CSV", cmd_synth},
      {"train", "fit the configured models and save them", cmd_train},
      {"tune", "cross-validated hyperparameter search", cmd_tune},
      {"evaluate", "temporal hold-out evaluation report", cmd_evaluate},
      {"explain", "Shapley attributions, ranking and plots", cmd_explain},
      {"select", "retrain on Shapley-ranked feature subsets", cmd_select},
      {"plot", "re-render plots from saved outputs", cmd_plot},
  };
  for (const auto& cmd : commands) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config,-c", config_path, "TOML run configuration")->required();
    sub->add_option("--seed,-s", seed, "master seed (overrides the config)");
    sub->add_option("--out,-o", out_dir, "output directory (overrides the config)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const Command* chosen = nullptr;
  for (const auto& cmd : commands)
    if (app.got_subcommand(cmd.name)) chosen = &cmd;

  Context ctx;
  try {
    if (!fs::exists(config_path)) throw ConfigError("config file not found: " + config_path);
    ctx.config = load_config(config_path);
    if (seed) ctx.config.seed = seed;
    if (!out_dir.empty()) ctx.config.out_dir = out_dir;
    ctx.out = ctx.config.out_dir;
    fs::create_directories(ctx.out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.get_subcommand(chosen->name)->help();
    return 1;
  }

  try {
    return chosen->run(ctx);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
