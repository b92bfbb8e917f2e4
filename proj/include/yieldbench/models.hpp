#pragma once

// Uniform fit/predict contract over the nine regressors, hyperparameter
// defaults, and JSON (de)serialization of fitted models and their scalers.

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "yieldbench/common.hpp"
#include "yieldbench/dataio.hpp"
#include "yieldbench/instkern.hpp"
#include "yieldbench/linmod.hpp"
#include "yieldbench/neural.hpp"
#include "yieldbench/trees.hpp"
#include "yieldbench/tuning.hpp"

namespace yieldbench {

using json = nlohmann::json;

inline constexpr int kModelFormatVersion = 1;

inline const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names = {"rf", "gbt", "knn", "lasso", "ridge", "rt", "svr", "dnn", "cnn"};
  return names;
}

// Defaults are desk-scale choices; none of them come from a published table.
inline ParamMap default_params(const std::string& model) {
  if (model == "ridge") return {{"lambda", 100.0}};
  if (model == "lasso") return {{"lambda", 0.1}, {"tol", 1e-8}, {"max_iter", 10000}};
  if (model == "svr") return {{"C", 0.05}, {"epsilon", 0.1}, {"iterations", 2000}, {"step", 0.0}};
  if (model == "knn") return {{"k", 10}};
  if (model == "rt") return {{"min_node_size", 5}, {"max_depth", 8}};
  if (model == "rf")
    return {{"n_trees", 100}, {"min_node_size", 5}, {"max_depth", -1}, {"feature_fraction", 1.0 / 3.0}, {"bootstrap", 1}};
  if (model == "gbt")
    return {{"n_trees", 300}, {"learning_rate", 0.05}, {"max_depth", 3}, {"min_node_size", 5}, {"leaf_l2", 1.0}};
  if (model == "dnn" || model == "cnn") {
    ParamMap p = {{"lr", 1e-3},      {"batch_size", 32},         {"max_epochs", 200},
                  {"patience", 20},  {"validation_fraction", 0.1}};
    if (model == "dnn") {
      p["units_1"] = 64;
      p["units_2"] = 32;
      p["units_3"] = 16;
    } else {
      p["conv1_filters"] = 8;
      p["conv1_kernel"] = 5;
      p["conv2_filters"] = 12;
      p["conv2_kernel"] = 3;
      p["conv3_filters"] = 16;
      p["conv3_kernel"] = 3;
      p["pool"] = 2;
      p["static_units"] = 16;
      p["head_units_1"] = 64;
      p["head_units_2"] = 32;
    }
    return p;
  }
  throw Error("unknown model: " + model);
}

// Context some models need beyond X and y.
struct ModelContext {
  std::vector<FeatureDescriptor> descriptors;
  std::uint64_t seed = 1;
};

class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual std::string name() const = 0;
  virtual void fit(const Matrix& x, const Vector& y) = 0;
  virtual Vector predict(const Matrix& x) const = 0;
  virtual json to_json() const = 0;

  Vector operator()(const Matrix& x) const { return predict(x); }
};

namespace detail {

inline double param(const ParamMap& p, const std::string& key) {
  auto it = p.find(key);
  if (it == p.end()) throw Error("missing hyperparameter: " + key);
  return it->second;
}

inline int iparam(const ParamMap& p, const std::string& key) {
  return static_cast<int>(std::lround(param(p, key)));
}

inline ParamMap merged(const std::string& model, const ParamMap& overrides) {
  ParamMap p = default_params(model);
  for (const auto& [k, v] : overrides) {
    if (!p.contains(k)) throw Error("model " + model + ": unknown hyperparameter \"" + k + "\"");
    p[k] = v;
  }
  return p;
}

inline void require_fitted(bool fitted, const std::string& name) {
  if (!fitted) throw Error(name + ": predict called before fit");
}

inline json tree_to_json(const Tree& t) {
  json arr = json::array();
  for (const auto& n : t.nodes)
    arr.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}, {"value", n.value}});
  return arr;
}

inline Tree tree_from_json(const json& arr) {
  Tree t;
  for (const auto& n : arr)
    t.nodes.push_back({n.at("feature").get<int>(), n.at("threshold").get<double>(), n.at("left").get<int>(),
                       n.at("right").get<int>(), n.at("value").get<double>()});
  if (t.nodes.empty()) throw Error("tree json: no nodes");
  for (const auto& n : t.nodes)
    if (!n.is_leaf() && (n.left <= 0 || n.right <= 0 || n.left >= static_cast<int>(t.nodes.size()) ||
                         n.right >= static_cast<int>(t.nodes.size())))
      throw Error("tree json: child index out of range");
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------

class LinearRegressor final : public Regressor {
 public:
  LinearRegressor(std::string name, ParamMap p) : name_(std::move(name)), p_(std::move(p)) {}

  std::string name() const override { return name_; }

  void fit(const Matrix& x, const Vector& y) override {
    if (name_ == "ridge") {
      model_ = fit_ridge(x, y, detail::param(p_, "lambda"));
    } else if (name_ == "lasso") {
      LassoOptions o;
      o.tol = detail::param(p_, "tol");
      o.max_iter = detail::iparam(p_, "max_iter");
      model_ = fit_lasso(x, y, detail::param(p_, "lambda"), o);
    } else {
      SvrParams s;
      s.c = detail::param(p_, "C");
      s.epsilon = detail::param(p_, "epsilon");
      s.iterations = detail::iparam(p_, "iterations");
      s.step = detail::param(p_, "step");
      model_ = fit_svr(x, y, s);
    }
    fitted_ = true;
  }

  Vector predict(const Matrix& x) const override {
    detail::require_fitted(fitted_, name_);
    return predict_linear(model_, x);
  }

  json to_json() const override {
    return {{"kind", name_},
            {"format_version", kModelFormatVersion},
            {"params", p_},
            {"lambda", model_.lambda},
            {"weights", to_std(model_.weights)},
            {"intercept", model_.intercept},
            {"converged", model_.converged},
            {"iterations", model_.iterations},
            {"scaler_ref", "scaler"}};
  }

  static std::unique_ptr<LinearRegressor> from_json(const json& j) {
    auto r = std::make_unique<LinearRegressor>(j.at("kind").get<std::string>(), j.at("params").get<ParamMap>());
    r->model_.kind = r->name_ == "ridge" ? LinearKind::ridge : r->name_ == "lasso" ? LinearKind::lasso : LinearKind::svr;
    r->model_.lambda = j.at("lambda").get<double>();
    r->model_.weights = to_vector(j.at("weights").get<std::vector<double>>());
    r->model_.intercept = j.at("intercept").get<double>();
    r->model_.converged = j.at("converged").get<bool>();
    r->model_.iterations = j.at("iterations").get<int>();
    r->fitted_ = true;
    return r;
  }

  const LinearModel& model() const { return model_; }

 private:
  std::string name_;
  ParamMap p_;
  LinearModel model_;
  bool fitted_ = false;
};

class KnnRegressor final : public Regressor {
 public:
  explicit KnnRegressor(ParamMap p) : p_(std::move(p)) {}
  std::string name() const override { return "knn"; }

  void fit(const Matrix& x, const Vector& y) override {
    const int k = std::min<int>(detail::iparam(p_, "k"), static_cast<int>(x.rows()));
    model_ = fit_knn(x, y, k);
    fitted_ = true;
  }

  Vector predict(const Matrix& x) const override {
    detail::require_fitted(fitted_, "knn");
    return model_.predict(x);
  }

  json to_json() const override {
    const Matrix& x = model_.train_x();
    // Row-major blob.
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(x.size()));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j) flat.push_back(x(i, j));
    return {{"kind", "knn"},
            {"format_version", kModelFormatVersion},
            {"params", p_},
            {"k", model_.k()},
            {"rows", x.rows()},
            {"cols", x.cols()},
            {"x_blob", encode_doubles(flat)},
            {"y_blob", encode_doubles(to_std(model_.train_y()))}};
  }

  static std::unique_ptr<KnnRegressor> from_json(const json& j) {
    auto r = std::make_unique<KnnRegressor>(j.at("params").get<ParamMap>());
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto flat = decode_doubles(j.at("x_blob").get<std::string>());
    const auto y = decode_doubles(j.at("y_blob").get<std::string>());
    if (static_cast<Eigen::Index>(flat.size()) != rows * cols || static_cast<Eigen::Index>(y.size()) != rows)
      throw Error("knn json: blob sizes do not match rows/cols");
    Matrix x(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index c = 0; c < cols; ++c) x(i, c) = flat[static_cast<std::size_t>(i * cols + c)];
    r->model_ = KnnModel(std::move(x), to_vector(y), j.at("k").get<int>());
    r->fitted_ = true;
    return r;
  }

 private:
  ParamMap p_;
  KnnModel model_;
  bool fitted_ = false;
};

class TreeRegressor final : public Regressor {
 public:
  TreeRegressor(std::string name, ParamMap p, std::uint64_t seed) : name_(std::move(name)), p_(std::move(p)), seed_(seed) {}
  std::string name() const override { return name_; }

  void fit(const Matrix& x, const Vector& y) override {
    if (name_ == "rt") {
      model_.mode = EnsembleMode::single;
      model_.trees = {fit_regression_tree(x, y, detail::iparam(p_, "min_node_size"), detail::iparam(p_, "max_depth"))};
    } else if (name_ == "rf") {
      ForestParams f;
      f.n_trees = detail::iparam(p_, "n_trees");
      f.min_node_size = detail::iparam(p_, "min_node_size");
      f.max_depth = detail::iparam(p_, "max_depth");
      f.feature_fraction = detail::param(p_, "feature_fraction");
      f.bootstrap = detail::param(p_, "bootstrap") != 0.0;
      f.seed = seed_;
      model_ = fit_random_forest(x, y, f);
    } else {
      BoostParams b;
      b.n_trees = detail::iparam(p_, "n_trees");
      b.learning_rate = detail::param(p_, "learning_rate");
      b.max_depth = detail::iparam(p_, "max_depth");
      b.min_node_size = detail::iparam(p_, "min_node_size");
      b.leaf_l2 = detail::param(p_, "leaf_l2");
      model_ = fit_gbt(x, y, b);
    }
    cols_ = x.cols();
    fitted_ = true;
  }

  Vector predict(const Matrix& x) const override {
    detail::require_fitted(fitted_, name_);
    return predict_ensemble(model_, x, cols_);
  }

  json to_json() const override {
    json trees = json::array();
    for (const auto& t : model_.trees) trees.push_back(detail::tree_to_json(t));
    return {{"kind", name_},
            {"format_version", kModelFormatVersion},
            {"params", p_},
            {"seed", seed_},
            {"cols", cols_},
            {"mode", to_string(model_.mode)},
            {"base_score", model_.base_score},
            {"learning_rate", model_.learning_rate},
            {"tree_seeds", model_.tree_seeds},
            {"trees", trees}};
  }

  static std::unique_ptr<TreeRegressor> from_json(const json& j) {
    auto r = std::make_unique<TreeRegressor>(j.at("kind").get<std::string>(), j.at("params").get<ParamMap>(),
                                             j.at("seed").get<std::uint64_t>());
    const auto mode = j.at("mode").get<std::string>();
    r->model_.mode = mode == "single" ? EnsembleMode::single : mode == "bagged" ? EnsembleMode::bagged : EnsembleMode::boosted;
    r->model_.base_score = j.at("base_score").get<double>();
    r->model_.learning_rate = j.at("learning_rate").get<double>();
    r->model_.tree_seeds = j.at("tree_seeds").get<std::vector<std::uint64_t>>();
    for (const auto& t : j.at("trees")) r->model_.trees.push_back(detail::tree_from_json(t));
    r->cols_ = j.at("cols").get<Eigen::Index>();
    r->fitted_ = true;
    return r;
  }

  const EnsembleModel& model() const { return model_; }

 private:
  std::string name_;
  ParamMap p_;
  std::uint64_t seed_;
  EnsembleModel model_;
  Eigen::Index cols_ = 0;
  bool fitted_ = false;
};

namespace detail {

inline json layer_spec_to_json(const nn::LayerSpec& s) {
  return {{"kind", nn::to_string(s.kind)}, {"filters", s.filters}, {"kernel_size", s.kernel_size},
          {"stride", s.stride},            {"window", s.window},   {"units", s.units}};
}

inline nn::LayerSpec layer_spec_from_json(const json& j) {
  auto kind = nn::parse_layer_kind(j.at("kind").get<std::string>());
  if (!kind) throw Error("network json: unknown layer kind");
  return {*kind, j.at("filters").get<int>(), j.at("kernel_size").get<int>(), j.at("stride").get<int>(),
          j.at("window").get<int>(), j.at("units").get<int>()};
}

}  // namespace detail

class NetworkRegressor final : public Regressor {
 public:
  NetworkRegressor(std::string name, ParamMap p, ModelContext ctx)
      : name_(std::move(name)), p_(std::move(p)), ctx_(std::move(ctx)) {}
  std::string name() const override { return name_; }

  nn::TrainConfig train_config() const {
    nn::TrainConfig c;
    c.adam.lr = detail::param(p_, "lr");
    c.batch_size = detail::iparam(p_, "batch_size");
    c.max_epochs = detail::iparam(p_, "max_epochs");
    c.patience = detail::iparam(p_, "patience");
    c.validation_fraction = detail::param(p_, "validation_fraction");
    c.seed = derive_seed(ctx_.seed, 1);
    return c;
  }

  nn::Network build(std::size_t n_features) const {
    if (name_ == "dnn") {
      nn::DenseArchitecture a;
      for (const char* k : {"units_1", "units_2", "units_3"})
        if (int u = detail::iparam(p_, k); u > 0) a.hidden.push_back(u);
      return nn::Network::dense(a, n_features, ctx_.seed);
    }
    const int pool = detail::iparam(p_, "pool");
    nn::CnnArchitecture a;
    a.weather_branch = {nn::LayerSpec::conv(detail::iparam(p_, "conv1_filters"), detail::iparam(p_, "conv1_kernel")),
                        nn::LayerSpec::relu(),
                        nn::LayerSpec::pool(pool, pool),
                        nn::LayerSpec::conv(detail::iparam(p_, "conv2_filters"), detail::iparam(p_, "conv2_kernel")),
                        nn::LayerSpec::relu(),
                        nn::LayerSpec::pool(pool, pool),
                        nn::LayerSpec::conv(detail::iparam(p_, "conv3_filters"), detail::iparam(p_, "conv3_kernel")),
                        nn::LayerSpec::relu(),
                        nn::LayerSpec::flatten()};
    const int su = detail::iparam(p_, "static_units");
    a.static_units = {su, su};
    for (const char* k : {"head_units_1", "head_units_2"})
      if (int u = detail::iparam(p_, k); u > 0) a.head_units.push_back(u);
    if (ctx_.descriptors.size() != n_features) throw Error("cnn: feature descriptors do not match the input columns");
    return nn::Network::cnn(a, nn::layout_from_descriptors(ctx_.descriptors), ctx_.seed);
  }

  void fit(const Matrix& x, const Vector& y) override {
    trained_ = nn::train_network(build(static_cast<std::size_t>(x.cols())), x, y, train_config());
    fitted_ = true;
  }

  Vector predict(const Matrix& x) const override {
    detail::require_fitted(fitted_, name_);
    return trained_.predict(x);
  }

  const nn::TrainedNetwork& trained() const { return trained_; }

  json to_json() const override {
    const auto& net = trained_.net;
    json arch;
    if (net.kind() == nn::Network::Kind::cnn) {
      json branch = json::array();
      for (const auto& s : net.cnn_architecture().weather_branch) branch.push_back(detail::layer_spec_to_json(s));
      arch = {{"weather_branch", branch},
              {"static_units", net.cnn_architecture().static_units},
              {"head_units", net.cnn_architecture().head_units}};
    } else {
      arch = {{"hidden", net.dense_architecture().hidden}};
    }
    const auto& h = trained_.history;
    return {{"kind", name_},
            {"format_version", kModelFormatVersion},
            {"params", p_},
            {"seed", ctx_.seed},
            {"arch", arch},
            {"layout", {{"n_features", net.layout().n_features}, {"weather", net.layout().weather}, {"statics", net.layout().statics}}},
            {"target_mean", trained_.target_mean},
            {"target_scale", trained_.target_scale},
            {"weights",
             {{"branch", net.branch().params()}, {"static", net.static_branch().params()}, {"head", net.head().params()}}},
            {"history",
             {{"train_loss", h.train_loss}, {"val_loss", h.val_loss}, {"best_epoch", h.best_epoch},
              {"early_stopped", h.early_stopped}}}};
  }

  static std::unique_ptr<NetworkRegressor> from_json(const json& j) {
    ModelContext ctx;
    ctx.seed = j.at("seed").get<std::uint64_t>();
    auto r = std::make_unique<NetworkRegressor>(j.at("kind").get<std::string>(), j.at("params").get<ParamMap>(), ctx);
    const auto& arch = j.at("arch");
    const auto& lay = j.at("layout");
    nn::Network net;
    if (r->name_ == "dnn") {
      net = nn::Network::dense({arch.at("hidden").get<std::vector<int>>()}, lay.at("n_features").get<std::size_t>(), ctx.seed);
    } else {
      nn::CnnArchitecture a;
      for (const auto& s : arch.at("weather_branch")) a.weather_branch.push_back(detail::layer_spec_from_json(s));
      a.static_units = arch.at("static_units").get<std::vector<int>>();
      a.head_units = arch.at("head_units").get<std::vector<int>>();
      nn::InputLayout layout;
      layout.n_features = lay.at("n_features").get<std::size_t>();
      layout.weather = lay.at("weather").get<std::vector<std::vector<std::size_t>>>();
      layout.statics = lay.at("statics").get<std::vector<std::size_t>>();
      net = nn::Network::cnn(a, layout, ctx.seed);
    }
    std::vector<double> flat;
    for (const char* k : {"branch", "static", "head"}) {
      auto part = j.at("weights").at(k).get<std::vector<double>>();
      flat.insert(flat.end(), part.begin(), part.end());
    }
    net.set_flat_parameters(flat);
    r->trained_.net = std::move(net);
    r->trained_.target_mean = j.at("target_mean").get<double>();
    r->trained_.target_scale = j.at("target_scale").get<double>();
    const auto& h = j.at("history");
    r->trained_.history.train_loss = h.at("train_loss").get<std::vector<double>>();
    r->trained_.history.val_loss = h.at("val_loss").get<std::vector<double>>();
    r->trained_.history.best_epoch = h.at("best_epoch").get<int>();
    r->trained_.history.early_stopped = h.at("early_stopped").get<bool>();
    r->fitted_ = true;
    return r;
  }

 private:
  std::string name_;
  ParamMap p_;
  ModelContext ctx_;
  nn::TrainedNetwork trained_;
  bool fitted_ = false;
};

inline std::unique_ptr<Regressor> make_regressor(const std::string& model, const ParamMap& overrides,
                                                 const ModelContext& ctx) {
  ParamMap p = detail::merged(model, overrides);
  if (model == "ridge" || model == "lasso" || model == "svr") return std::make_unique<LinearRegressor>(model, p);
  if (model == "knn") return std::make_unique<KnnRegressor>(p);
  if (model == "rt" || model == "rf" || model == "gbt") return std::make_unique<TreeRegressor>(model, p, ctx.seed);
  if (model == "dnn" || model == "cnn") return std::make_unique<NetworkRegressor>(model, p, ctx);
  throw Error("unknown model: " + model);
}

inline std::unique_ptr<Regressor> regressor_from_json(const json& j) {
  if (j.at("format_version").get<int>() != kModelFormatVersion) throw Error("model json: unsupported format_version");
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "ridge" || kind == "lasso" || kind == "svr") return LinearRegressor::from_json(j);
  if (kind == "knn") return KnnRegressor::from_json(j);
  if (kind == "rt" || kind == "rf" || kind == "gbt") return TreeRegressor::from_json(j);
  if (kind == "dnn" || kind == "cnn") return NetworkRegressor::from_json(j);
  throw Error("model json: unknown kind " + kind);
}

// ---------------------------------------------------------------------------
// Model file: fitted model + the scaler its inputs were standardized with.

inline json scaler_to_json(const ScalerParams& s) {
  return {{"mean", s.mean}, {"stddev", s.stddev}, {"constant", s.constant}};
}

inline ScalerParams scaler_from_json(const json& j) {
  ScalerParams s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("stddev").get<std::vector<double>>();
  s.constant = j.at("constant").get<std::vector<bool>>();
  if (s.stddev.size() != s.mean.size() || s.constant.size() != s.mean.size()) throw Error("scaler json: ragged arrays");
  return s;
}

struct ModelArtifact {
  std::unique_ptr<Regressor> model;
  ScalerParams scaler;
  std::vector<std::string> feature_names;
  int test_year = 0;

  Vector predict_raw(const Matrix& unscaled) const { return model->predict(apply_scaler(unscaled, scaler)); }
};

inline json artifact_to_json(const ModelArtifact& a) {
  return {{"schema_version", kModelFormatVersion},
          {"feature_names", a.feature_names},
          {"test_year", a.test_year},
          {"scaler", scaler_to_json(a.scaler)},
          {"model", a.model->to_json()}};
}

inline ModelArtifact artifact_from_json(const json& j) {
  if (j.at("schema_version").get<int>() != kModelFormatVersion) throw Error("model file: unsupported schema_version");
  ModelArtifact a;
  a.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  a.test_year = j.at("test_year").get<int>();
  a.scaler = scaler_from_json(j.at("scaler"));
  a.model = regressor_from_json(j.at("model"));
  return a;
}

}  // namespace yieldbench
