#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace popbench {

// Linear-interpolated percentile (R type 7): h = (n-1)*p, interpolate between
// the two bracketing order statistics. p in [0, 1].
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile of empty set");
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("percentile p outside [0,1]");
  std::sort(values.begin(), values.end());
  if (values.size() == 1) return values[0];
  double h = (static_cast<double>(values.size()) - 1.0) * p;
  auto lo = static_cast<std::size_t>(h);
  if (lo + 1 >= values.size()) return values.back();
  double frac = h - static_cast<double>(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

inline double median(const std::vector<double>& values) { return percentile(values, 0.5); }

struct SummaryStats {
  double median;
  double q25;
  double q75;
  std::size_t n;
};

inline SummaryStats summarize(const std::vector<double>& values) {
  return {percentile(values, 0.5), percentile(values, 0.25), percentile(values, 0.75),
          values.size()};
}

namespace detail {

// Lanczos log-gamma
inline double log_gamma(double x) {
  static const double g[] = {676.5203681218851,     -1259.1392167224028,
                             771.32342877765313,    -176.61502916214059,
                             12.507343278686905,    -0.13857109526572012,
                             9.9843695780195716e-6, 1.5056327351493116e-7};
  if (x < 0.5) {
    // reflection
    return std::log(M_PI / std::sin(M_PI * x)) - log_gamma(1.0 - x);
  }
  x -= 1.0;
  double a = 0.99999999999980993;
  double t = x + 7.5;
  for (int i = 0; i < 8; ++i) a += g[i] / (x + i + 1);
  return 0.5 * std::log(2.0 * M_PI) + (x + 0.5) * std::log(t) - t + std::log(a);
}

// continued fraction for the regularized incomplete beta
inline double betacf(double a, double b, double x) {
  const int max_iter = 300;
  const double eps = 3e-16;
  const double fpmin = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h;
}

inline double inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double ln_front = log_gamma(a + b) - log_gamma(a) - log_gamma(b) +
                    a * std::log(x) + b * std::log(1.0 - x);
  double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * betacf(a, b, x) / a;
  }
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace detail

// two-sided p-value for a t statistic with df degrees of freedom
inline double t_two_sided_p(double t, double df) {
  if (df <= 0) throw std::invalid_argument("t distribution needs df > 0");
  if (!std::isfinite(t)) return 0.0;
  double x = df / (df + t * t);
  return detail::inc_beta(df / 2.0, 0.5, x);
}

inline double t_cdf(double t, double df) {
  double p = 0.5 * t_two_sided_p(std::abs(t), df);
  return t >= 0 ? 1.0 - p : p;
}

// upper quantile: smallest q with P(T <= q) = prob, prob in (0.5, 1)
inline double t_quantile(double prob, double df) {
  if (prob <= 0.5 || prob >= 1.0) throw std::invalid_argument("t_quantile expects prob in (0.5,1)");
  double lo = 0.0, hi = 1.0;
  while (t_cdf(hi, df) < prob) {
    hi *= 2.0;
    if (hi > 1e12) break;
  }
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    if (t_cdf(mid, df) < prob) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 1e-13 * std::max(1.0, hi)) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace popbench
