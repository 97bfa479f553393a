#pragma once

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <vector>

#include "popbench/models/matrix.hpp"
#include "popbench/models/tree.hpp"
#include "popbench/rng.hpp"
#include "popbench/util.hpp"

namespace popbench {

struct RandomForestParams {
  int n_trees = 499;
  int min_node_size = 5;
  std::optional<int> mtry;  // default rule: max(1, floor(p/3))
  bool bootstrap = true;    // test harnesses may disable for exact single trees
};

namespace detail {

struct RfSplit {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double score = 0.0;  // SSE_left + SSE_right; lower is better
};

inline RfSplit rf_best_split(const TrainMatrix& data, const std::vector<std::size_t>& rows,
                             const std::vector<std::size_t>& features) {
  RfSplit best;
  std::vector<std::pair<double, double>> pairs(rows.size());
  std::vector<double> sy(rows.size() + 1), syy(rows.size() + 1);
  for (std::size_t f : features) {
    for (std::size_t k = 0; k < rows.size(); ++k) {
      pairs[k] = {data.x(rows[k], f), data.y[rows[k]]};
    }
    std::sort(pairs.begin(), pairs.end());
    sy[0] = syy[0] = 0.0;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      sy[k + 1] = sy[k] + pairs[k].second;
      syy[k + 1] = syy[k] + pairs[k].second * pairs[k].second;
    }
    std::size_t m = pairs.size();
    for (std::size_t k = 1; k < m; ++k) {
      if (!(pairs[k - 1].first < pairs[k].first)) continue;
      double nl = static_cast<double>(k), nr = static_cast<double>(m - k);
      double sse_l = syy[k] - sy[k] * sy[k] / nl;
      double sse_r = (syy[m] - syy[k]) - (sy[m] - sy[k]) * (sy[m] - sy[k]) / nr;
      double score = sse_l + sse_r;
      if (!best.found || score < best.score) {
        best.found = true;
        best.feature = static_cast<int>(f);
        best.threshold = split_threshold(pairs[k - 1].first, pairs[k].first);
        best.score = score;
      }
    }
  }
  return best;
}

inline Tree rf_build_tree(const TrainMatrix& data, const RandomForestParams& hp,
                          std::uint64_t tree_seed) {
  Rng rng(tree_seed);
  std::size_t mtry = hp.mtry ? static_cast<std::size_t>(std::max(*hp.mtry, 1))
                             : std::max<std::size_t>(data.p / 3, 1);
  mtry = std::min(mtry, data.p);

  std::vector<std::size_t> root_rows(data.n);
  if (hp.bootstrap) {
    for (std::size_t i = 0; i < data.n; ++i) root_rows[i] = rng.next_below(data.n);
  } else {
    for (std::size_t i = 0; i < data.n; ++i) root_rows[i] = i;
  }

  Tree tree;
  struct Pending {
    int node;
    std::vector<std::size_t> rows;
  };
  std::vector<Pending> stack;
  tree.nodes.push_back({});
  stack.push_back({0, std::move(root_rows)});

  while (!stack.empty()) {
    Pending item = std::move(stack.back());
    stack.pop_back();
    std::vector<std::size_t>& rows = item.rows;

    bool pure = true;
    for (std::size_t k = 1; k < rows.size() && pure; ++k) {
      pure = data.y[rows[k]] == data.y[rows[0]];
    }
    auto make_leaf = [&] {
      std::vector<double> ys(rows.size());
      for (std::size_t k = 0; k < rows.size(); ++k) ys[k] = data.y[rows[k]];
      Tree::Node& n = tree.nodes[static_cast<std::size_t>(item.node)];
      n.feature = -1;
      n.value = stable_sum(ys) / static_cast<double>(ys.size());
    };
    if (pure || rows.size() < 2 * static_cast<std::size_t>(hp.min_node_size)) {
      make_leaf();
      continue;
    }

    std::vector<std::size_t> features = rng.sample_without_replacement(data.p, mtry);
    std::sort(features.begin(), features.end());
    RfSplit split = rf_best_split(data, rows, features);
    if (!split.found) {  // candidates all constant on this node
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
    stack.push_back({right, std::move(right_rows)});
    stack.push_back({left, std::move(left_rows)});  // processed first: stable RNG order
  }
  return tree;
}

}  // namespace detail

struct RandomForestModel {
  std::vector<Tree> trees;
};

inline RandomForestModel fit_random_forest(const TrainMatrix& data, const RandomForestParams& hp,
                                           std::uint64_t seed, unsigned n_threads = 1) {
  data.validate();
  if (hp.n_trees < 1) throw std::invalid_argument("random forest: n_trees must be >= 1");
  if (hp.min_node_size < 1) throw std::invalid_argument("random forest: min_node_size must be >= 1");
  RandomForestModel model;
  model.trees.resize(static_cast<std::size_t>(hp.n_trees));
  parallel_for(model.trees.size(), n_threads, [&](std::size_t t) {
    model.trees[t] = detail::rf_build_tree(data, hp, derive_seed(seed, static_cast<std::uint64_t>(t)));
  });
  return model;
}

inline double predict_row(const RandomForestModel& model, const double* row) {
  std::vector<double> vals(model.trees.size());
  for (std::size_t t = 0; t < model.trees.size(); ++t) vals[t] = model.trees[t].eval(row);
  return stable_sum(vals) / static_cast<double>(vals.size());
}

}  // namespace popbench
