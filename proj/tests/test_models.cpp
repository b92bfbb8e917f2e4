#include <gtest/gtest.h>

#include "yieldbench/models.hpp"

using namespace yieldbench;

namespace {

struct Fixture {
  FeatureTable table;
  Matrix x;
  ScalerParams scaler;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    auto spec = default_synth_spec(20, 5);
    spec.n_regions = 8;
    spec.first_year = 2010;
    spec.last_year = 2014;
    Fixture out;
    out.table = generate_synthetic(spec);
    std::vector<std::size_t> all(out.table.n());
    std::iota(all.begin(), all.end(), std::size_t{0});
    out.scaler = fit_scaler(out.table.rows, all);
    out.x = apply_scaler(out.table.rows, out.scaler);
    return out;
  }();
  return f;
}

ParamMap fast_params(const std::string& model) {
  if (model == "rf") return {{"n_trees", 8}};
  if (model == "gbt") return {{"n_trees", 15}};
  if (model == "svr") return {{"iterations", 200}};
  if (model == "dnn" || model == "cnn") return {{"max_epochs", 3}, {"validation_fraction", 0.0}};
  return {};
}

}  // namespace

TEST(Models, DefaultsExistForEveryModel) {
  EXPECT_EQ(model_names().size(), 9u);
  for (const auto& m : model_names()) EXPECT_FALSE(default_params(m).empty()) << m;
  EXPECT_THROW(default_params("xgboost"), Error);
}

TEST(Models, JsonRoundTripPreservesPredictions) {
  const auto& f = fixture();
  ModelContext ctx{f.table.descriptors, 11};
  for (const auto& name : model_names()) {
    auto m = make_regressor(name, fast_params(name), ctx);
    EXPECT_EQ(m->name(), name);
    m->fit(f.x, f.table.target);
    const Vector before = m->predict(f.x);
    ASSERT_TRUE(before.allFinite()) << name;
    const auto text = m->to_json().dump();
    auto back = regressor_from_json(json::parse(text));
    EXPECT_EQ(back->name(), name);
    EXPECT_EQ(back->predict(f.x), before) << name;
    EXPECT_EQ(back->to_json().dump(), text) << name;
  }
}

TEST(Models, FittingIsDeterministic) {
  const auto& f = fixture();
  ModelContext ctx{f.table.descriptors, 3};
  for (const auto& name : {"rf", "gbt", "cnn"}) {
    auto a = make_regressor(name, fast_params(name), ctx);
    auto b = make_regressor(name, fast_params(name), ctx);
    a->fit(f.x, f.table.target);
    b->fit(f.x, f.table.target);
    EXPECT_EQ(a->predict(f.x), b->predict(f.x)) << name;
  }
}

TEST(Models, KnnCapsNeighbourCount) {
  Matrix x(3, 1);
  x << 0, 1, 2;
  Vector y(3);
  y << 1, 2, 6;
  auto m = make_regressor("knn", {{"k", 50}}, {});
  m->fit(x, y);
  EXPECT_DOUBLE_EQ(m->predict(x)(0), 3.0);
}

TEST(Models, Errors) {
  EXPECT_THROW(make_regressor("ridge", {{"alpha", 1}}, {}), Error);
  EXPECT_THROW(make_regressor("nope", {}, {}), Error);
  auto m = make_regressor("ridge", {}, {});
  EXPECT_THROW(m->predict(Matrix::Zero(1, 2)), Error);
  json bad = {{"kind", "ridge"}, {"format_version", 99}};
  EXPECT_THROW(regressor_from_json(bad), Error);
}

TEST(Models, CnnNeedsMatchingDescriptors) {
  const auto& f = fixture();
  auto m = make_regressor("cnn", fast_params("cnn"), ModelContext{{}, 1});
  EXPECT_THROW(m->fit(f.x, f.table.target), Error);
}

TEST(Artifact, RoundTrip) {
  const auto& f = fixture();
  ModelArtifact a;
  a.model = make_regressor("ridge", {{"lambda", 3.0}}, {});
  a.model->fit(f.x, f.table.target);
  a.scaler = f.scaler;
  a.feature_names = f.table.feature_names();
  a.test_year = 2014;
  const auto j = artifact_to_json(a);
  auto b = artifact_from_json(json::parse(j.dump()));
  EXPECT_EQ(b.test_year, 2014);
  EXPECT_EQ(b.feature_names, a.feature_names);
  EXPECT_EQ(b.scaler.mean, a.scaler.mean);
  EXPECT_EQ(b.predict_raw(f.table.rows), a.predict_raw(f.table.rows));
  EXPECT_EQ(a.predict_raw(f.table.rows), a.model->predict(f.x));

  auto broken = j;
  broken["schema_version"] = 0;
  EXPECT_THROW(artifact_from_json(broken), Error);
}
