#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "popbench/util.hpp"

namespace popbench {

struct EvalConfig {
  double epsilon = 1e-12;  // clamp floor applied to predicted shares
};

struct MetricRecord {
  int iteration = 0;
  std::string country_tag;
  std::string model_kind;
  std::string family;
  double r2 = 0.0;
  double kl = 0.0;
  std::size_t n_val = 0;
  double train_unit_frac = 0.0;
  double train_pop_frac = 0.0;
};

// Coefficient of determination on raw predictions; unbounded below.
inline double r_squared(const std::vector<double>& obs, const std::vector<double>& pred) {
  if (obs.size() != pred.size()) throw std::invalid_argument("r_squared: length mismatch");
  if (obs.size() < 2) throw std::invalid_argument("r_squared: need at least 2 observations");
  double mean = stable_sum(obs) / static_cast<double>(obs.size());
  std::vector<double> res(obs.size()), tot(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    double r = obs[i] - pred[i];
    double t = obs[i] - mean;
    res[i] = r * r;
    tot[i] = t * t;
  }
  double ss_tot = stable_sum(tot);
  if (ss_tot <= 0.0) throw std::invalid_argument("r_squared: observations have zero variance");
  return 1.0 - stable_sum(res) / ss_tot;
}

// Clamps below at epsilon, then scales so the vector sums to target_total.
inline std::vector<double> rescale_predictions(const std::vector<double>& pred_raw,
                                               double target_total,
                                               const EvalConfig& cfg = {}) {
  if (!(target_total > 0.0)) throw std::invalid_argument("rescale_predictions: target_total must be positive");
  if (cfg.epsilon <= 0.0) throw std::invalid_argument("rescale_predictions: epsilon must be positive");
  std::vector<double> clamped(pred_raw.size());
  for (std::size_t i = 0; i < pred_raw.size(); ++i) {
    if (!std::isfinite(pred_raw[i])) {
      throw std::invalid_argument("rescale_predictions: non-finite prediction at index " +
                                  std::to_string(i));
    }
    clamped[i] = std::max(pred_raw[i], cfg.epsilon);
  }
  double total = stable_sum(clamped);
  double scale = target_total / total;
  for (double& v : clamped) v *= scale;
  return clamped;
}

// Σ p·ln(p/q) in nats after normalizing both vectors over the partition;
// zero p-terms contribute nothing.
inline double kl_divergence(const std::vector<double>& obs_shares,
                            const std::vector<double>& pred_shares,
                            const EvalConfig& cfg = {}) {
  (void)cfg;
  if (obs_shares.size() != pred_shares.size()) {
    throw std::invalid_argument("kl_divergence: length mismatch");
  }
  if (obs_shares.empty()) throw std::invalid_argument("kl_divergence: empty input");
  for (std::size_t i = 0; i < obs_shares.size(); ++i) {
    if (obs_shares[i] < 0.0) {
      throw std::invalid_argument("kl_divergence: negative observed share at index " +
                                  std::to_string(i));
    }
    if (!(pred_shares[i] > 0.0)) {
      throw std::invalid_argument("kl_divergence: non-positive predicted share at index " +
                                  std::to_string(i));
    }
  }
  double p_total = stable_sum(obs_shares);
  double q_total = stable_sum(pred_shares);
  if (!(p_total > 0.0)) throw std::invalid_argument("kl_divergence: observed shares sum to zero");
  std::vector<double> terms;
  terms.reserve(obs_shares.size());
  for (std::size_t i = 0; i < obs_shares.size(); ++i) {
    double p = obs_shares[i] / p_total;
    if (p == 0.0) continue;
    double q = pred_shares[i] / q_total;
    terms.push_back(p * std::log(p / q));
  }
  return stable_sum(terms);
}

struct PartitionMetrics {
  double r2 = 0.0;
  double kl = 0.0;
};

// R² on the raw predictions; KL on the mass-preserving rescaled predictions.
inline PartitionMetrics evaluate_partition(const std::vector<double>& obs_shares,
                                           const std::vector<double>& pred_raw,
                                           const EvalConfig& cfg = {}) {
  if (obs_shares.size() != pred_raw.size()) {
    throw std::invalid_argument("evaluate_partition: length mismatch");
  }
  if (obs_shares.empty()) throw std::invalid_argument("evaluate_partition: empty partition");
  PartitionMetrics m;
  m.r2 = r_squared(obs_shares, pred_raw);
  double obs_total = stable_sum(obs_shares);
  std::vector<double> rescaled = rescale_predictions(pred_raw, obs_total, cfg);
  m.kl = kl_divergence(obs_shares, rescaled, cfg);
  return m;
}

}  // namespace popbench
