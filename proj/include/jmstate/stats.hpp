#pragma once

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <functional>
#include <vector>

#include "jmstate/core.hpp"

namespace jmstate::stats {

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  double df = 0.0;
};

/// P(K > x) for the Kolmogorov distribution.
inline double kolmogorov_sf(double x) {
  if (x < 0.27) return 1.0;
  double acc = 0.0;
  for (int k = 1; k <= 100; ++k) {
    double term = std::exp(-2.0 * k * k * x * x);
    acc += (k % 2 ? 1.0 : -1.0) * term;
    if (term < 1e-18) break;
  }
  return std::clamp(2.0 * acc, 0.0, 1.0);
}

/// One-sample Kolmogorov-Smirnov test against a continuous cdf.
inline TestResult ks_one_sample(std::vector<double> data, const std::function<double(double)>& cdf) {
  if (data.empty()) throw ValidationError("ks_one_sample: empty sample");
  std::sort(data.begin(), data.end());
  const double n = static_cast<double>(data.size());
  double d = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    double f = cdf(data[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  const double en = std::sqrt(n);
  return {d, kolmogorov_sf((en + 0.12 + 0.11 / en) * d), 0.0};
}

/// Two-sample Kolmogorov-Smirnov test.
inline TestResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ValidationError("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double en = std::sqrt(na * nb / (na + nb));
  return {d, kolmogorov_sf((en + 0.12 + 0.11 / en) * d), 0.0};
}

/// Chi-square test that two count vectors share one categorical law.
/// Categories empty in both samples are dropped.
inline TestResult chi2_homogeneity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ValidationError("chi2_homogeneity: count vectors differ in length");
  double na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    na += a[k];
    nb += b[k];
  }
  if (na <= 0.0 || nb <= 0.0) throw ValidationError("chi2_homogeneity: empty sample");
  double stat = 0.0;
  int used = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    double tot = a[k] + b[k];
    if (tot <= 0.0) continue;
    ++used;
    double ea = tot * na / (na + nb), eb = tot * nb / (na + nb);
    stat += (a[k] - ea) * (a[k] - ea) / ea + (b[k] - eb) * (b[k] - eb) / eb;
  }
  const double df = std::max(used - 1, 0);
  if (df == 0) return {0.0, 1.0, 0.0};
  return {stat, boost::math::gamma_q(df / 2.0, stat / 2.0), df};
}

}  // namespace jmstate::stats
