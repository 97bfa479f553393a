#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace popbench {

// Row-major design matrix with share targets.
struct TrainMatrix {
  std::size_t n = 0;
  std::size_t p = 0;
  std::vector<double> X;  // n*p row-major
  std::vector<double> y;
  std::vector<std::string> feature_names;

  double x(std::size_t i, std::size_t j) const { return X[i * p + j]; }
  const double* row(std::size_t i) const { return X.data() + i * p; }

  void validate() const {
    if (n < 2) throw std::invalid_argument("TrainMatrix: need at least 2 rows");
    if (p < 1) throw std::invalid_argument("TrainMatrix: need at least 1 feature");
    if (X.size() != n * p) throw std::invalid_argument("TrainMatrix: X size mismatch");
    if (y.size() != n) throw std::invalid_argument("TrainMatrix: y size mismatch");
    if (feature_names.size() != p) throw std::invalid_argument("TrainMatrix: feature name count mismatch");
    for (double v : X) {
      if (!std::isfinite(v)) throw std::invalid_argument("TrainMatrix: non-finite feature value");
    }
    for (double v : y) {
      if (!std::isfinite(v)) throw std::invalid_argument("TrainMatrix: non-finite target value");
    }
  }
};

}  // namespace popbench
