#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "popbench/models/matrix.hpp"
#include "popbench/models/tree.hpp"
#include "popbench/rng.hpp"
#include "popbench/util.hpp"

namespace popbench {

struct GradientBoostingParams {
  int rounds = 500;
  double learning_rate = 0.05;
  int max_depth = 6;
  double row_subsample = 0.8;
  double col_subsample = 0.8;
  double l2_leaf = 1.0;
  double gamma = 0.0;
  double min_child_weight = 1.0;
};

struct GradientBoostingModel {
  double base_score = 0.0;
  std::vector<Tree> trees;  // leaf values pre-scaled by learning_rate
};

namespace detail {

struct GbtSplit {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

// Exact greedy split maximizing the second-order gain
//   1/2 [G_L^2/(H_L+λ) + G_R^2/(H_R+λ) − G^2/(H+λ)] − γ,
// requiring both children to carry at least min_child_weight hessian mass.
inline GbtSplit gbt_best_split(const TrainMatrix& data, const std::vector<double>& grad,
                               const std::vector<std::size_t>& rows,
                               const std::vector<std::size_t>& features,
                               const GradientBoostingParams& hp) {
  GbtSplit best;
  std::size_t m = rows.size();
  std::vector<std::pair<double, double>> pairs(m);  // (x, g); h == 1 per row
  std::vector<double> sg(m + 1);
  for (std::size_t f : features) {
    for (std::size_t k = 0; k < m; ++k) pairs[k] = {data.x(rows[k], f), grad[rows[k]]};
    std::sort(pairs.begin(), pairs.end());
    sg[0] = 0.0;
    for (std::size_t k = 0; k < m; ++k) sg[k + 1] = sg[k] + pairs[k].second;
    double g_total = sg[m];
    double h_total = static_cast<double>(m);
    double parent_term = g_total * g_total / (h_total + hp.l2_leaf);
    for (std::size_t k = 1; k < m; ++k) {
      if (!(pairs[k - 1].first < pairs[k].first)) continue;
      double hl = static_cast<double>(k), hr = static_cast<double>(m - k);
      if (hl < hp.min_child_weight || hr < hp.min_child_weight) continue;
      double gl = sg[k], gr = g_total - sg[k];
      double gain =
          0.5 * (gl * gl / (hl + hp.l2_leaf) + gr * gr / (hr + hp.l2_leaf) - parent_term) -
          hp.gamma;
      if (gain > 0.0 && (!best.found || gain > best.gain)) {
        best.found = true;
        best.feature = static_cast<int>(f);
        best.threshold = split_threshold(pairs[k - 1].first, pairs[k].first);
        best.gain = gain;
      }
    }
  }
  return best;
}

inline Tree gbt_build_tree(const TrainMatrix& data, const std::vector<double>& grad,
                           const std::vector<std::size_t>& row_sample,
                           const std::vector<std::size_t>& col_sample,
                           const GradientBoostingParams& hp) {
  Tree tree;
  struct Pending {
    int node;
    int depth;
    std::vector<std::size_t> rows;
  };
  std::vector<Pending> stack;
  tree.nodes.push_back({});
  stack.push_back({0, 0, row_sample});

  while (!stack.empty()) {
    Pending item = std::move(stack.back());
    stack.pop_back();
    std::vector<std::size_t>& rows = item.rows;

    auto make_leaf = [&] {
      std::vector<double> gs(rows.size());
      for (std::size_t k = 0; k < rows.size(); ++k) gs[k] = grad[rows[k]];
      double g = stable_sum(gs);
      double h = static_cast<double>(rows.size());
      Tree::Node& n = tree.nodes[static_cast<std::size_t>(item.node)];
      n.feature = -1;
      n.value = hp.learning_rate * (-g / (h + hp.l2_leaf));
    };
    if (item.depth >= hp.max_depth || rows.size() < 2) {
      make_leaf();
      continue;
    }
    GbtSplit split = gbt_best_split(data, grad, rows, col_sample, hp);
    if (!split.found) {
      make_leaf();
      continue;
    }
    std::vector<std::size_t> left_rows, right_rows;
    for (std::size_t r : rows) {
      (data.x(r, static_cast<std::size_t>(split.feature)) <= split.threshold ? left_rows
                                                                             : right_rows)
          .push_back(r);
    }
    int left = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    int right = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    Tree::Node& n = tree.nodes[static_cast<std::size_t>(item.node)];
    n.feature = split.feature;
    n.threshold = split.threshold;
    n.left = left;
    n.right = right;
    stack.push_back({right, item.depth + 1, std::move(right_rows)});
    stack.push_back({left, item.depth + 1, std::move(left_rows)});
  }
  return tree;
}

}  // namespace detail

inline GradientBoostingModel fit_gradient_boosting(const TrainMatrix& data,
                                                   const GradientBoostingParams& hp,
                                                   std::uint64_t seed) {
  data.validate();
  if (hp.rounds < 1) throw std::invalid_argument("gradient boosting: rounds must be >= 1");
  if (!(hp.learning_rate > 0.0)) throw std::invalid_argument("gradient boosting: learning_rate must be positive");
  if (hp.max_depth < 1) throw std::invalid_argument("gradient boosting: max_depth must be >= 1");
  for (double rate : {hp.row_subsample, hp.col_subsample}) {
    if (!(rate > 0.0) || rate > 1.0) {
      throw std::invalid_argument("gradient boosting: subsample rates must lie in (0,1]");
    }
  }

  GradientBoostingModel model;
  model.base_score = stable_sum(data.y) / static_cast<double>(data.n);
  model.trees.reserve(static_cast<std::size_t>(hp.rounds));

  std::vector<double> pred(data.n, model.base_score);
  std::vector<double> grad(data.n);
  std::size_t n_rows = static_cast<std::size_t>(
      std::ceil(hp.row_subsample * static_cast<double>(data.n)));
  n_rows = std::min(std::max<std::size_t>(n_rows, 1), data.n);
  std::size_t n_cols = static_cast<std::size_t>(
      std::ceil(hp.col_subsample * static_cast<double>(data.p)));
  n_cols = std::min(std::max<std::size_t>(n_cols, 1), data.p);

  for (int round = 0; round < hp.rounds; ++round) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(round)));
    for (std::size_t i = 0; i < data.n; ++i) grad[i] = pred[i] - data.y[i];
    std::vector<std::size_t> row_sample = rng.sample_without_replacement(data.n, n_rows);
    std::sort(row_sample.begin(), row_sample.end());
    std::vector<std::size_t> col_sample = rng.sample_without_replacement(data.p, n_cols);
    std::sort(col_sample.begin(), col_sample.end());

    Tree tree = detail::gbt_build_tree(data, grad, row_sample, col_sample, hp);
    for (std::size_t i = 0; i < data.n; ++i) pred[i] += tree.eval(data.row(i));
    model.trees.push_back(std::move(tree));
  }
  return model;
}

inline double predict_row(const GradientBoostingModel& model, const double* row) {
  std::vector<double> vals(model.trees.size());
  for (std::size_t t = 0; t < model.trees.size(); ++t) vals[t] = model.trees[t].eval(row);
  return model.base_score + stable_sum(vals);
}

}  // namespace popbench
