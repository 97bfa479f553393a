#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "popbench/models/elastic_net.hpp"
#include "popbench/models/gradient_boosting.hpp"
#include "popbench/models/matrix.hpp"
#include "popbench/models/random_forest.hpp"
#include "popbench/models/tree.hpp"

namespace popbench {

enum class ModelKind { kRandomForest, kGradientBoosting, kElasticNet };

inline std::string model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::kRandomForest: return "random_forest";
    case ModelKind::kGradientBoosting: return "gradient_boosting";
    case ModelKind::kElasticNet: return "elastic_net";
  }
  throw std::logic_error("unreachable model kind");
}

inline ModelKind model_kind_from_name(const std::string& s) {
  if (s == "random_forest") return ModelKind::kRandomForest;
  if (s == "gradient_boosting") return ModelKind::kGradientBoosting;
  if (s == "elastic_net") return ModelKind::kElasticNet;
  throw std::invalid_argument("unknown model kind: " + s);
}

struct ModelSpec {
  ModelKind kind = ModelKind::kRandomForest;
  RandomForestParams rf;
  GradientBoostingParams gbt;
  ElasticNetParams en;

  static ModelSpec random_forest() { return {ModelKind::kRandomForest, {}, {}, {}}; }
  static ModelSpec gradient_boosting() { return {ModelKind::kGradientBoosting, {}, {}, {}}; }
  static ModelSpec elastic_net() { return {ModelKind::kElasticNet, {}, {}, {}}; }
};

inline std::vector<ModelSpec> all_model_specs() {
  return {ModelSpec::random_forest(), ModelSpec::gradient_boosting(), ModelSpec::elastic_net()};
}

struct FittedModel {
  ModelKind kind = ModelKind::kRandomForest;
  ModelSpec spec;
  std::vector<std::string> feature_names;
  ElasticNetModel en;
  RandomForestModel rf;
  GradientBoostingModel gbt;
};

inline FittedModel fit(const ModelSpec& spec, const TrainMatrix& data, std::uint64_t seed,
                       unsigned n_threads = 1) {
  data.validate();
  FittedModel model;
  model.kind = spec.kind;
  model.spec = spec;
  model.feature_names = data.feature_names;
  switch (spec.kind) {
    case ModelKind::kRandomForest:
      model.rf = fit_random_forest(data, spec.rf, seed, n_threads);
      break;
    case ModelKind::kGradientBoosting:
      model.gbt = fit_gradient_boosting(data, spec.gbt, seed);
      break;
    case ModelKind::kElasticNet:
      model.en = fit_elastic_net(data, spec.en, seed);
      break;
  }
  return model;
}

// Raw predictions for a row-major matrix whose columns are realigned to the
// training order by name; negative outputs are legitimate here.
inline std::vector<double> predict(const FittedModel& model, const std::vector<double>& X,
                                   std::size_t m, std::size_t p,
                                   const std::vector<std::string>& feature_names) {
  if (feature_names.size() != p) throw std::invalid_argument("predict: feature name count mismatch");
  if (X.size() != m * p) throw std::invalid_argument("predict: matrix size mismatch");

  std::vector<std::size_t> remap(model.feature_names.size());
  bool identity = feature_names.size() == model.feature_names.size();
  for (std::size_t j = 0; j < model.feature_names.size(); ++j) {
    auto it = std::find(feature_names.begin(), feature_names.end(), model.feature_names[j]);
    if (it == feature_names.end()) {
      throw std::invalid_argument("predict: missing feature '" + model.feature_names[j] + "'");
    }
    remap[j] = static_cast<std::size_t>(it - feature_names.begin());
    identity = identity && remap[j] == j;
  }

  std::vector<double> aligned;
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = X.data() + i * p;
    if (!identity) {
      aligned.resize(model.feature_names.size());
      for (std::size_t j = 0; j < remap.size(); ++j) aligned[j] = row[remap[j]];
      row = aligned.data();
    }
    switch (model.kind) {
      case ModelKind::kRandomForest: out[i] = predict_row(model.rf, row); break;
      case ModelKind::kGradientBoosting: out[i] = predict_row(model.gbt, row); break;
      case ModelKind::kElasticNet: out[i] = predict_row(model.en, row); break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// versioned JSON serialization (audit trail, not a cross-version promise)

namespace detail {

inline nlohmann::json tree_to_json(const Tree& tree) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : tree.nodes) {
    nodes.push_back({{"f", n.feature},
                     {"t", n.threshold},
                     {"l", n.left},
                     {"r", n.right},
                     {"v", n.value}});
  }
  return nodes;
}

inline Tree tree_from_json(const nlohmann::json& nodes) {
  Tree tree;
  for (const auto& jn : nodes) {
    Tree::Node n;
    n.feature = jn.at("f").get<int>();
    n.threshold = jn.at("t").get<double>();
    n.left = jn.at("l").get<int>();
    n.right = jn.at("r").get<int>();
    n.value = jn.at("v").get<double>();
    tree.nodes.push_back(n);
  }
  return tree;
}

}  // namespace detail

inline nlohmann::json model_to_json(const FittedModel& model) {
  nlohmann::json doc;
  doc["version"] = 1;
  doc["kind"] = model_kind_name(model.kind);
  doc["feature_names"] = model.feature_names;
  nlohmann::json hp;
  switch (model.kind) {
    case ModelKind::kRandomForest:
      hp["n_trees"] = model.spec.rf.n_trees;
      hp["min_node_size"] = model.spec.rf.min_node_size;
      hp["bootstrap"] = model.spec.rf.bootstrap;
      if (model.spec.rf.mtry) hp["mtry"] = *model.spec.rf.mtry;
      break;
    case ModelKind::kGradientBoosting:
      hp["rounds"] = model.spec.gbt.rounds;
      hp["learning_rate"] = model.spec.gbt.learning_rate;
      hp["max_depth"] = model.spec.gbt.max_depth;
      hp["row_subsample"] = model.spec.gbt.row_subsample;
      hp["col_subsample"] = model.spec.gbt.col_subsample;
      hp["l2_leaf"] = model.spec.gbt.l2_leaf;
      hp["gamma"] = model.spec.gbt.gamma;
      hp["min_child_weight"] = model.spec.gbt.min_child_weight;
      break;
    case ModelKind::kElasticNet:
      hp["alpha"] = model.spec.en.alpha;
      hp["path_length"] = model.spec.en.path_length;
      hp["path_ratio"] = model.spec.en.path_ratio;
      hp["cv_folds"] = model.spec.en.cv_folds;
      hp["tol"] = model.spec.en.tol;
      hp["max_iter"] = model.spec.en.max_iter;
      break;
  }
  doc["hyperparameters"] = hp;

  nlohmann::json params;
  switch (model.kind) {
    case ModelKind::kRandomForest: {
      nlohmann::json trees = nlohmann::json::array();
      for (const auto& t : model.rf.trees) trees.push_back(detail::tree_to_json(t));
      params["trees"] = std::move(trees);
      break;
    }
    case ModelKind::kGradientBoosting: {
      params["base_score"] = model.gbt.base_score;
      nlohmann::json trees = nlohmann::json::array();
      for (const auto& t : model.gbt.trees) trees.push_back(detail::tree_to_json(t));
      params["trees"] = std::move(trees);
      break;
    }
    case ModelKind::kElasticNet:
      params["intercept"] = model.en.intercept;
      params["coefficients"] = model.en.coefficients;
      params["lambda"] = model.en.lambda;
      break;
  }
  doc["parameters"] = std::move(params);
  return doc;
}

inline FittedModel model_from_json(const nlohmann::json& doc) {
  if (doc.value("version", 0) != 1) throw std::runtime_error("unsupported model document version");
  FittedModel model;
  model.kind = model_kind_from_name(doc.at("kind").get<std::string>());
  model.spec.kind = model.kind;
  model.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
  const auto& hp = doc.at("hyperparameters");
  const auto& params = doc.at("parameters");
  switch (model.kind) {
    case ModelKind::kRandomForest:
      model.spec.rf.n_trees = hp.at("n_trees").get<int>();
      model.spec.rf.min_node_size = hp.at("min_node_size").get<int>();
      model.spec.rf.bootstrap = hp.at("bootstrap").get<bool>();
      if (hp.contains("mtry")) model.spec.rf.mtry = hp.at("mtry").get<int>();
      for (const auto& t : params.at("trees")) model.rf.trees.push_back(detail::tree_from_json(t));
      break;
    case ModelKind::kGradientBoosting:
      model.spec.gbt.rounds = hp.at("rounds").get<int>();
      model.spec.gbt.learning_rate = hp.at("learning_rate").get<double>();
      model.spec.gbt.max_depth = hp.at("max_depth").get<int>();
      model.spec.gbt.row_subsample = hp.at("row_subsample").get<double>();
      model.spec.gbt.col_subsample = hp.at("col_subsample").get<double>();
      model.spec.gbt.l2_leaf = hp.at("l2_leaf").get<double>();
      model.spec.gbt.gamma = hp.at("gamma").get<double>();
      model.spec.gbt.min_child_weight = hp.at("min_child_weight").get<double>();
      model.gbt.base_score = params.at("base_score").get<double>();
      for (const auto& t : params.at("trees")) model.gbt.trees.push_back(detail::tree_from_json(t));
      break;
    case ModelKind::kElasticNet:
      model.spec.en.alpha = hp.at("alpha").get<double>();
      model.spec.en.path_length = hp.at("path_length").get<int>();
      model.spec.en.path_ratio = hp.at("path_ratio").get<double>();
      model.spec.en.cv_folds = hp.at("cv_folds").get<int>();
      model.spec.en.tol = hp.at("tol").get<double>();
      model.spec.en.max_iter = hp.at("max_iter").get<int>();
      model.en.intercept = params.at("intercept").get<double>();
      model.en.coefficients = params.at("coefficients").get<std::vector<double>>();
      model.en.lambda = params.at("lambda").get<double>();
      break;
  }
  return model;
}

}  // namespace popbench
