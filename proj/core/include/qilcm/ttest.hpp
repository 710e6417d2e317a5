#pragma once

#include <span>

namespace qilcm::eval {

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};

/// Two-sample pooled-variance Student's t-test. Zero pooled variance:
/// p = 1 for equal means, p = 0 (t = +-inf) otherwise.
TTestResult t_test(std::span<const double> a, std::span<const double> b);

/// Paired variant on the per-index differences.
TTestResult t_test_paired(std::span<const double> a, std::span<const double> b);

/// Two-sided p-value of Student's t via the regularized incomplete beta
/// function (continued-fraction evaluation).
double student_t_two_sided_p(double t, double df);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

}  // namespace qilcm::eval
