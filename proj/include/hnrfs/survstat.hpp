#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace hnrfs {

/// One patient's follow-up: time in months and whether recurrence was seen.
struct SurvivalRecord {
  double time = 0.0;
  bool event = false;

  /// Throws InvalidArgument unless time is finite and positive.
  static SurvivalRecord make(double time, bool event);
};

/// Product-limit estimate evaluated at the distinct event times.
struct KMCurve {
  std::vector<double> event_times;
  std::vector<double> survival;
  std::vector<std::size_t> at_risk;
  std::vector<std::size_t> events;
  std::vector<double> std_err;  // Greenwood
};

struct LogRankResult {
  double chi_square = 0.0;
  double p_value = 1.0;
  double neg_log2_p = 0.0;
};

KMCurve km_estimate(std::span<const SurvivalRecord> records);

/// Two-sample log-rank test. Throws DegenerateError when the pooled
/// hypergeometric variance is zero.
LogRankResult logrank_test(std::span<const SurvivalRecord> group_a,
                           std::span<const SurvivalRecord> group_b);

/// Harrell's C. A pair (i, j) is comparable when t_i < t_j and i had an
/// event; equal times are never comparable. Tied risks count one half.
/// Throws DegenerateError when no pair is comparable.
double concordance_index(std::span<const SurvivalRecord> records,
                         std::span<const double> risk);

/// Upper tail of the chi-square distribution, Q(dof/2, x/2).
double chi2_sf(double x, int dof);

/// Regularized upper incomplete gamma function Q(a, x).
double regularized_gamma_q(double a, double x);

}  // namespace hnrfs
