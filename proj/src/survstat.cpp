#include "hnrfs/survstat.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "hnrfs/errors.hpp"

namespace hnrfs {

SurvivalRecord SurvivalRecord::make(double time, bool event) {
  if (!std::isfinite(time) || time <= 0.0) {
    throw InvalidArgument("survival time must be finite and > 0, got " + std::to_string(time));
  }
  return SurvivalRecord{time, event};
}

namespace {

void check_records(std::span<const SurvivalRecord> records, const char* what) {
  for (const auto& r : records) {
    if (!std::isfinite(r.time) || r.time <= 0.0) {
      throw InvalidArgument(std::string(what) + ": survival times must be finite and > 0");
    }
  }
}

std::vector<SurvivalRecord> sorted_by_time(std::span<const SurvivalRecord> records) {
  std::vector<SurvivalRecord> out(records.begin(), records.end());
  std::stable_sort(out.begin(), out.end(),
                   [](const SurvivalRecord& a, const SurvivalRecord& b) { return a.time < b.time; });
  return out;
}

}  // namespace

KMCurve km_estimate(std::span<const SurvivalRecord> records) {
  if (records.empty()) throw InvalidArgument("km_estimate: no records");
  check_records(records, "km_estimate");

  const auto sorted = sorted_by_time(records);
  KMCurve curve;
  double surv = 1.0;
  double greenwood = 0.0;
  std::size_t at_risk = sorted.size();
  std::size_t i = 0;
  while (i < sorted.size()) {
    const double t = sorted[i].time;
    std::size_t deaths = 0;
    std::size_t leaving = 0;
    while (i < sorted.size() && sorted[i].time == t) {
      deaths += sorted[i].event ? 1 : 0;
      ++leaving;
      ++i;
    }
    if (deaths > 0) {
      const auto n = static_cast<double>(at_risk);
      const auto d = static_cast<double>(deaths);
      surv *= (n - d) / n;
      if (at_risk > deaths) {
        greenwood += d / (n * (n - d));
      } else {
        greenwood = std::numeric_limits<double>::infinity();
      }
      curve.event_times.push_back(t);
      curve.survival.push_back(surv);
      curve.at_risk.push_back(at_risk);
      curve.events.push_back(deaths);
      // Greenwood is undefined once the curve reaches zero; report 0 there.
      curve.std_err.push_back(surv > 0.0 ? surv * std::sqrt(greenwood) : 0.0);
    }
    at_risk -= leaving;
  }
  return curve;
}

LogRankResult logrank_test(std::span<const SurvivalRecord> group_a,
                           std::span<const SurvivalRecord> group_b) {
  if (group_a.empty() || group_b.empty()) {
    throw InvalidArgument("logrank_test: both groups must be non-empty");
  }
  check_records(group_a, "logrank_test");
  check_records(group_b, "logrank_test");

  struct Tagged {
    double time;
    bool event;
    bool in_a;
  };
  std::vector<Tagged> pooled;
  pooled.reserve(group_a.size() + group_b.size());
  for (const auto& r : group_a) pooled.push_back({r.time, r.event, true});
  for (const auto& r : group_b) pooled.push_back({r.time, r.event, false});
  std::sort(pooled.begin(), pooled.end(),
            [](const Tagged& x, const Tagged& y) { return x.time < y.time; });

  // Sums are accumulated in a fixed (time-ascending) order and depend only on
  // per-time counts, which are symmetric under swapping the groups.
  double n_a = static_cast<double>(group_a.size());
  double n_b = static_cast<double>(group_b.size());
  double o_minus_e = 0.0;
  double variance = 0.0;
  std::size_t i = 0;
  while (i < pooled.size()) {
    const double t = pooled[i].time;
    double d_a = 0.0, d_b = 0.0, c_a = 0.0, c_b = 0.0;
    while (i < pooled.size() && pooled[i].time == t) {
      const auto& p = pooled[i];
      (p.in_a ? c_a : c_b) += 1.0;
      if (p.event) (p.in_a ? d_a : d_b) += 1.0;
      ++i;
    }
    const double d = d_a + d_b;
    const double n = n_a + n_b;
    if (d > 0.0) {
      o_minus_e += d_a - d * n_a / n;
      if (n > 1.0) variance += d * (n_a / n) * (n_b / n) * (n - d) / (n - 1.0);
    }
    n_a -= c_a;
    n_b -= c_b;
  }
  if (!(variance > 0.0)) {
    throw DegenerateError("logrank_test: zero variance (no comparable events)");
  }
  LogRankResult result;
  result.chi_square = o_minus_e * o_minus_e / variance;
  result.p_value = chi2_sf(result.chi_square, 1);
  result.neg_log2_p = -std::log2(result.p_value);
  return result;
}

namespace {

// Fenwick tree over risk ranks, counting how many subjects of each rank have
// been inserted.
class RankCounter {
 public:
  explicit RankCounter(std::size_t n) : tree_(n + 1, 0) {}

  void add(std::size_t rank) {
    for (std::size_t i = rank + 1; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }

  // Number of inserted ranks strictly below `rank`.
  std::size_t below(std::size_t rank) const {
    std::size_t total = 0;
    for (std::size_t i = rank; i > 0; i -= i & (~i + 1)) total += tree_[i];
    return total;
  }

 private:
  std::vector<std::size_t> tree_;
};

}  // namespace

double concordance_index(std::span<const SurvivalRecord> records, std::span<const double> risk) {
  if (records.size() != risk.size()) {
    throw InvalidArgument("concordance_index: records and risk differ in length");
  }
  if (records.size() < 2) throw InvalidArgument("concordance_index: need at least two subjects");
  check_records(records, "concordance_index");
  for (double r : risk) {
    if (!std::isfinite(r)) throw InvalidArgument("concordance_index: non-finite risk score");
  }

  const std::size_t n = records.size();
  // Dense ranks of the risk scores so equal scores share a rank.
  std::vector<double> levels(risk.begin(), risk.end());
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    rank[i] = static_cast<std::size_t>(std::lower_bound(levels.begin(), levels.end(), risk[i]) -
                                       levels.begin());
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return records[a].time > records[b].time; });

  // Walk times from longest to shortest; the tree holds every subject with a
  // strictly longer time than the current block.
  RankCounter later(levels.size());
  std::size_t inserted = 0;
  std::uint64_t concordant = 0, tied = 0, comparable = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    const double t = records[order[i]].time;
    while (j < n && records[order[j]].time == t) ++j;
    for (std::size_t k = i; k < j; ++k) {
      const std::size_t s = order[k];
      if (!records[s].event) continue;
      const std::size_t lower = later.below(rank[s]);
      const std::size_t lower_or_equal = later.below(rank[s] + 1);
      concordant += lower;
      tied += lower_or_equal - lower;
      comparable += inserted;
    }
    for (std::size_t k = i; k < j; ++k) later.add(rank[order[k]]);
    inserted += j - i;
    i = j;
  }
  if (comparable == 0) throw DegenerateError("concordance_index: no comparable pairs");
  return (static_cast<double>(concordant) + 0.5 * static_cast<double>(tied)) /
         static_cast<double>(comparable);
}

namespace {

constexpr int kMaxGammaIterations = 10000;
constexpr double kGammaEps = 1e-16;

// Lower regularized P(a, x) by its power series; valid for any x, fastest
// for x < a + 1.
double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  for (int n = 1; n < kMaxGammaIterations; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::abs(term) < std::abs(sum) * kGammaEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Upper regularized Q(a, x) by the modified Lentz continued fraction.
double gamma_q_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxGammaIterations; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kGammaEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double regularized_gamma_q(double a, double x) {
  if (!(a > 0.0)) throw InvalidArgument("regularized_gamma_q: a must be > 0");
  if (std::isnan(x) || x < 0.0) throw InvalidArgument("regularized_gamma_q: x must be >= 0");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_fraction(a, x);
}

double chi2_sf(double x, int dof) {
  if (dof < 1) throw InvalidArgument("chi2_sf: dof must be >= 1");
  if (std::isnan(x) || x < 0.0) throw InvalidArgument("chi2_sf: x must be >= 0");
  if (x == 0.0) return 1.0;
  const double a = 0.5 * dof;
  const double half_x = 0.5 * x;
  // Switch point expressed on the chi-square scale: x < dof + 1.
  if (x < dof + 1.0) return 1.0 - gamma_p_series(a, half_x);
  return gamma_q_fraction(a, half_x);
}

}  // namespace hnrfs
