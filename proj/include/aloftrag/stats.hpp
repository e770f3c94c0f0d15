#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "aloftrag/core.hpp"

namespace aloftrag {
namespace stats {

namespace detail {

inline constexpr int kMaxIterations = 300;
inline constexpr double kEpsilon = 1e-15;
inline constexpr double kTiny = 1e-300;

// Continued fraction for the regularized incomplete beta (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < kEpsilon) break;
  }
  return h;
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0) throw ConfigError("incomplete_beta: a, b must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

// Regularized lower incomplete gamma P(a, x): series for x < a+1, continued
// fraction for the complement otherwise.
inline double incomplete_gamma_p(double a, double x) {
  if (a <= 0.0) throw ConfigError("incomplete_gamma_p: a must be positive");
  if (x <= 0.0) return 0.0;
  if (x < a + 1.0) {
    double term = 1.0 / a;
    double sum = term;
    double ap = a;
    for (int n = 0; n < detail::kMaxIterations; ++n) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::fabs(term) < std::fabs(sum) * detail::kEpsilon) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
  }
  // Q(a, x) via Lentz continued fraction, then P = 1 - Q.
  double b = x + 1.0 - a;
  double c = 1.0 / detail::kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= detail::kMaxIterations; ++i) {
    const double an = -static_cast<double>(i) * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < detail::kTiny) d = detail::kTiny;
    c = b + an / c;
    if (std::fabs(c) < detail::kTiny) c = detail::kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < detail::kEpsilon) break;
  }
  const double q = std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
  return 1.0 - q;
}

// Two-tailed p-value for Student's t with df degrees of freedom:
// p = I_{df/(df+t^2)}(df/2, 1/2).
inline double student_t_two_tailed_p(double t, double df) {
  if (df <= 0.0) throw ConfigError("student_t_two_tailed_p: df must be positive");
  if (std::isinf(t)) return 0.0;
  if (t == 0.0) return 1.0;
  return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

// Survival function of the chi-square distribution (upper tail).
inline double chi_square_sf(double x, double df) {
  if (df <= 0.0) throw ConfigError("chi_square_sf: df must be positive");
  if (x <= 0.0) return 1.0;
  return 1.0 - incomplete_gamma_p(df / 2.0, x / 2.0);
}

// Pearson chi-square statistic of observed counts against a uniform null.
inline double chi_square_uniform_stat(const std::vector<long>& observed) {
  if (observed.empty()) throw ConfigError("chi_square_uniform_stat: no bins");
  long total = 0;
  for (long n : observed) total += n;
  const double expected = static_cast<double>(total) / static_cast<double>(observed.size());
  if (expected <= 0.0) throw ConfigError("chi_square_uniform_stat: empty sample");
  double stat = 0.0;
  for (long n : observed) {
    const double diff = static_cast<double>(n) - expected;
    stat += diff * diff / expected;
  }
  return stat;
}

struct PairedTTest {
  double t = 0.0;
  long df = 0;
  double p_two_tailed = 1.0;
};

// Classic paired t-test on differences d = a - b.
// Conventions: identical samples -> t = 0, p = 1; zero-variance nonzero-mean
// differences -> t = +/-inf, p = 0.
inline PairedTTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DataError("paired_t_test: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) throw DataError("paired_t_test: need at least 2 pairs");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = (a[i] - b[i]) - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  PairedTTest result;
  result.df = static_cast<long>(n) - 1;
  if (sd == 0.0) {
    if (mean == 0.0) {
      result.t = 0.0;
      result.p_two_tailed = 1.0;
    } else {
      result.t = mean > 0.0 ? std::numeric_limits<double>::infinity()
                            : -std::numeric_limits<double>::infinity();
      result.p_two_tailed = 0.0;
    }
    return result;
  }
  result.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  result.p_two_tailed = student_t_two_tailed_p(result.t, static_cast<double>(result.df));
  return result;
}

}  // namespace stats
}  // namespace aloftrag
