#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "popbench/models/matrix.hpp"
#include "popbench/rng.hpp"
#include "popbench/util.hpp"

namespace popbench {

struct ElasticNetParams {
  double alpha = 0.5;  // L1 mixing weight
  int path_length = 100;
  double path_ratio = 1e-4;
  int cv_folds = 5;
  double tol = 1e-7;
  int max_iter = 100000;  // coordinate-descent passes per lambda
  std::optional<double> lambda_override;
};

struct ElasticNetModel {
  double intercept = 0.0;
  std::vector<double> coefficients;  // original feature scale
  double lambda = 0.0;               // penalty the coefficients were fit at
};

namespace detail {

struct EnProblem {
  std::size_t n = 0;
  std::vector<std::vector<double>> cols;  // standardized columns
  std::vector<double> col_sq;             // (1/n)Σz² per column
  std::vector<double> y_centered;
  std::vector<double> mean;   // per original column
  std::vector<double> scale;  // 0 marks a constant column (excluded)
  double y_mean = 0.0;
};

inline EnProblem en_standardize(const std::vector<const double*>& rows, std::size_t n,
                                std::size_t p, const std::vector<double>& y) {
  EnProblem prob;
  prob.n = n;
  prob.mean.resize(p);
  prob.scale.resize(p);
  prob.cols.assign(p, {});
  prob.col_sq.assign(p, 0.0);
  double dn = static_cast<double>(n);
  for (std::size_t j = 0; j < p; ++j) {
    std::vector<double> vals(n);
    for (std::size_t i = 0; i < n; ++i) vals[i] = rows[i][j];
    double mu = stable_sum(vals) / dn;
    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) sq[i] = (vals[i] - mu) * (vals[i] - mu);
    double var = stable_sum(sq) / dn;
    prob.mean[j] = mu;
    if (var <= 0.0) {
      prob.scale[j] = 0.0;
      continue;
    }
    double s = std::sqrt(var);
    prob.scale[j] = s;
    std::vector<double>& col = prob.cols[j];
    col.resize(n);
    std::vector<double> zsq(n);
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = (vals[i] - mu) / s;
      zsq[i] = col[i] * col[i];
    }
    prob.col_sq[j] = stable_sum(zsq) / dn;
  }
  prob.y_mean = stable_sum(y) / dn;
  prob.y_centered.resize(n);
  for (std::size_t i = 0; i < n; ++i) prob.y_centered[i] = y[i] - prob.y_mean;
  return prob;
}

inline double soft_threshold(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

// Cyclic coordinate descent with an active-set loop; beta and the residual
// are updated in place (residual = y_centered − Z·beta on entry and exit).
inline void en_descend(const EnProblem& prob, double lambda, double alpha,
                       std::vector<double>& beta, std::vector<double>& residual, double tol,
                       int max_iter) {
  double dn = static_cast<double>(prob.n);
  double l1 = lambda * alpha;
  double l2 = lambda * (1.0 - alpha);
  std::size_t p = prob.cols.size();

  auto update_one = [&](std::size_t j) {
    const std::vector<double>& col = prob.cols[j];
    double dot = 0.0;
    for (std::size_t i = 0; i < prob.n; ++i) dot += col[i] * residual[i];
    double rho = dot / dn + prob.col_sq[j] * beta[j];
    double next = soft_threshold(rho, l1) / (prob.col_sq[j] + l2);
    double delta = next - beta[j];
    if (delta != 0.0) {
      for (std::size_t i = 0; i < prob.n; ++i) residual[i] -= delta * col[i];
      beta[j] = next;
    }
    return std::abs(delta);
  };

  int passes = 0;
  while (passes < max_iter) {
    // full pass
    double max_delta = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      if (prob.scale[j] == 0.0) continue;
      max_delta = std::max(max_delta, update_one(j));
    }
    ++passes;
    if (max_delta < tol) return;
    // active-set passes over the current support
    std::vector<std::size_t> active;
    for (std::size_t j = 0; j < p; ++j) {
      if (prob.scale[j] != 0.0 && beta[j] != 0.0) active.push_back(j);
    }
    while (passes < max_iter) {
      double d = 0.0;
      for (std::size_t j : active) d = std::max(d, update_one(j));
      ++passes;
      if (d < tol) break;
    }
  }
}

inline std::vector<double> en_lambda_path(const EnProblem& prob, const ElasticNetParams& hp) {
  double dn = static_cast<double>(prob.n);
  double lambda_max = 0.0;
  for (std::size_t j = 0; j < prob.cols.size(); ++j) {
    if (prob.scale[j] == 0.0) continue;
    double dot = 0.0;
    for (std::size_t i = 0; i < prob.n; ++i) dot += prob.cols[j][i] * prob.y_centered[i];
    lambda_max = std::max(lambda_max, std::abs(dot) / (dn * hp.alpha));
  }
  std::vector<double> path;
  if (lambda_max <= 0.0) return path;
  int len = std::max(hp.path_length, 2);
  for (int k = 0; k < len; ++k) {
    double t = static_cast<double>(k) / static_cast<double>(len - 1);
    path.push_back(lambda_max * std::pow(hp.path_ratio, t));
  }
  return path;
}

struct EnPathFit {
  std::vector<double> lambdas;
  std::vector<std::vector<double>> betas;  // standardized scale, per lambda
};

inline EnPathFit en_fit_path(const EnProblem& prob, const std::vector<double>& lambdas,
                             const ElasticNetParams& hp) {
  EnPathFit fit;
  fit.lambdas = lambdas;
  std::vector<double> beta(prob.cols.size(), 0.0);
  std::vector<double> residual = prob.y_centered;
  for (double lambda : lambdas) {
    en_descend(prob, lambda, hp.alpha, beta, residual, hp.tol, hp.max_iter);
    fit.betas.push_back(beta);
  }
  return fit;
}

inline ElasticNetModel en_unstandardize(const EnProblem& prob, const std::vector<double>& beta,
                                        double lambda, std::size_t p) {
  ElasticNetModel model;
  model.lambda = lambda;
  model.coefficients.assign(p, 0.0);
  std::vector<double> offsets;
  for (std::size_t j = 0; j < p; ++j) {
    if (prob.scale[j] == 0.0 || beta[j] == 0.0) continue;
    model.coefficients[j] = beta[j] / prob.scale[j];
    offsets.push_back(model.coefficients[j] * prob.mean[j]);
  }
  model.intercept = prob.y_mean - stable_sum(offsets);
  return model;
}

}  // namespace detail

inline ElasticNetModel fit_elastic_net(const TrainMatrix& data, const ElasticNetParams& hp,
                                       std::uint64_t seed) {
  data.validate();
  if (!(hp.alpha > 0.0) || hp.alpha > 1.0) {
    throw std::invalid_argument("elastic net: alpha must lie in (0,1]");
  }
  if (hp.cv_folds < 2) throw std::invalid_argument("elastic net: cv_folds must be >= 2");
  if (!hp.lambda_override && data.n < static_cast<std::size_t>(hp.cv_folds)) {
    throw std::invalid_argument("elastic net: need at least cv_folds rows");
  }

  std::vector<const double*> rows(data.n);
  for (std::size_t i = 0; i < data.n; ++i) rows[i] = data.row(i);
  detail::EnProblem full = detail::en_standardize(rows, data.n, data.p, data.y);
  std::vector<double> path = detail::en_lambda_path(full, hp);
  if (path.empty()) {  // constant y or all-constant X: intercept-only
    ElasticNetModel model;
    model.intercept = full.y_mean;
    model.coefficients.assign(data.p, 0.0);
    return model;
  }

  double chosen = 0.0;
  if (hp.lambda_override) {
    chosen = *hp.lambda_override;
    if (chosen < 0.0) throw std::invalid_argument("elastic net: lambda_override must be >= 0");
    std::vector<double> warm;
    for (double l : path) {
      if (l > chosen) warm.push_back(l);
    }
    warm.push_back(chosen);
    detail::EnPathFit fit = detail::en_fit_path(full, warm, hp);
    return detail::en_unstandardize(full, fit.betas.back(), chosen, data.p);
  }

  // cv_folds-fold assignment from the seed: shuffled indices dealt round-robin
  std::vector<std::size_t> order(data.n);
  for (std::size_t i = 0; i < data.n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, fnv1a("en-cv")));
  rng.shuffle(order);
  std::vector<int> fold_of(data.n);
  for (std::size_t k = 0; k < data.n; ++k) {
    fold_of[order[k]] = static_cast<int>(k % static_cast<std::size_t>(hp.cv_folds));
  }

  std::vector<std::vector<double>> fold_mse(static_cast<std::size_t>(hp.cv_folds),
                                            std::vector<double>(path.size(), 0.0));
  for (int f = 0; f < hp.cv_folds; ++f) {
    std::vector<const double*> train_rows;
    std::vector<double> train_y;
    std::vector<std::size_t> val_idx;
    for (std::size_t i = 0; i < data.n; ++i) {
      if (fold_of[i] == f) {
        val_idx.push_back(i);
      } else {
        train_rows.push_back(data.row(i));
        train_y.push_back(data.y[i]);
      }
    }
    if (train_rows.size() < 2 || val_idx.empty()) {
      throw std::invalid_argument("elastic net: fold " + std::to_string(f) + " is degenerate");
    }
    detail::EnProblem prob = detail::en_standardize(train_rows, train_rows.size(), data.p, train_y);
    detail::EnPathFit fit = detail::en_fit_path(prob, path, hp);
    for (std::size_t k = 0; k < path.size(); ++k) {
      ElasticNetModel m = detail::en_unstandardize(prob, fit.betas[k], path[k], data.p);
      std::vector<double> sq(val_idx.size());
      for (std::size_t v = 0; v < val_idx.size(); ++v) {
        const double* row = data.row(val_idx[v]);
        double pred = m.intercept;
        for (std::size_t j = 0; j < data.p; ++j) pred += m.coefficients[j] * row[j];
        double err = pred - data.y[val_idx[v]];
        sq[v] = err * err;
      }
      fold_mse[static_cast<std::size_t>(f)][k] =
          stable_sum(sq) / static_cast<double>(val_idx.size());
    }
  }

  std::size_t best_k = 0;
  double best_mse = 0.0;
  for (std::size_t k = 0; k < path.size(); ++k) {
    std::vector<double> col(static_cast<std::size_t>(hp.cv_folds));
    for (int f = 0; f < hp.cv_folds; ++f) col[static_cast<std::size_t>(f)] = fold_mse[static_cast<std::size_t>(f)][k];
    double mean_mse = stable_sum(col) / static_cast<double>(hp.cv_folds);
    if (k == 0 || mean_mse < best_mse) {  // ties keep the earlier (larger) lambda
      best_mse = mean_mse;
      best_k = k;
    }
  }
  chosen = path[best_k];

  std::vector<double> warm(path.begin(), path.begin() + static_cast<std::ptrdiff_t>(best_k) + 1);
  detail::EnPathFit fit = detail::en_fit_path(full, warm, hp);
  return detail::en_unstandardize(full, fit.betas.back(), chosen, data.p);
}

inline double predict_row(const ElasticNetModel& model, const double* row) {
  double pred = model.intercept;
  for (std::size_t j = 0; j < model.coefficients.size(); ++j) {
    pred += model.coefficients[j] * row[j];
  }
  return pred;
}

}  // namespace popbench
