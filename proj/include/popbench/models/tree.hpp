#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace popbench {

// Binary regression tree over row-major features; internal nodes route rows
// by `x[feature] <= threshold`.
struct Tree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;

    bool is_leaf() const { return feature < 0; }
  };

  std::vector<Node> nodes;

  double eval(const double* row) const {
    if (nodes.empty()) throw std::logic_error("empty tree");
    int at = 0;
    while (!nodes[static_cast<std::size_t>(at)].is_leaf()) {
      const Node& n = nodes[static_cast<std::size_t>(at)];
      at = row[n.feature] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(at)].value;
  }
};

namespace detail {

// Midpoint between consecutive distinct sorted values, nudged down to the
// lower value when rounding collapses it onto the upper — keeps `x <= thr`
// splits from producing an empty child.
inline double split_threshold(double lower, double upper) {
  double mid = lower + (upper - lower) / 2.0;
  return mid < upper ? mid : lower;
}

}  // namespace detail

}  // namespace popbench
