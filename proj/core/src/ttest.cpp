#include "qilcm/ttest.hpp"

#include <cmath>
#include <limits>
#include <vector>
#include <string>

#include "qilcm/errors.hpp"

namespace qilcm::eval {

namespace {

// Continued fraction for the incomplete beta function (modified Lentz).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw DomainError("incomplete_beta did not converge");
}

double sample_mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double sum_sq_dev(std::span<const double> x, double mean) {
  double s = 0.0;
  for (double v : x) s += (v - mean) * (v - mean);
  return s;
}

TTestResult from_statistic(double num, double denom, double df) {
  TTestResult r;
  r.df = df;
  if (denom == 0.0) {
    if (num == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = num > 0.0 ? std::numeric_limits<double>::infinity()
                      : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
    return r;
  }
  r.t = num / denom;
  r.p = student_t_two_sided_p(r.t, df);
  return r;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (x < 0.0 || x > 1.0) throw DomainError("incomplete_beta x outside [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) -
                          std::lgamma(b) + a * std::log(x) +
                          b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * betacf(a, b, x) / a;
  }
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
  if (df <= 0.0) throw DomainError("t distribution needs df > 0");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

TTestResult t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw DomainError("t_test needs at least 2 observations per sample");
  }
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double ma = sample_mean(a);
  const double mb = sample_mean(b);
  const double df = na + nb - 2.0;
  const double pooled_var = (sum_sq_dev(a, ma) + sum_sq_dev(b, mb)) / df;
  const double denom = std::sqrt(pooled_var * (1.0 / na + 1.0 / nb));
  return from_statistic(ma - mb, denom, df);
}

TTestResult t_test_paired(std::span<const double> a,
                          std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DomainError("paired t_test needs samples of equal size, got " +
                      std::to_string(a.size()) + " and " +
                      std::to_string(b.size()));
  }
  if (a.size() < 2) {
    throw DomainError("t_test needs at least 2 observations per sample");
  }
  const double n = static_cast<double>(a.size());
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double md = sample_mean(d);
  const double sd = std::sqrt(sum_sq_dev(d, md) / (n - 1.0));
  return from_statistic(md, sd / std::sqrt(n), n - 1.0);
}

}  // namespace qilcm::eval
