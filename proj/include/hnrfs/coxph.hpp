#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hnrfs/errors.hpp"
#include "hnrfs/survstat.hpp"

namespace hnrfs {

enum class TieMethod { breslow, efron };

struct FitOptions {
  TieMethod tie_method = TieMethod::efron;
  double gradient_tolerance = 1e-7;
  int max_iterations = 100;
  /// Added to the Hessian diagonal only when its Cholesky factorization
  /// fails; this is a numerical rescue, not a penalty.
  double ridge_jitter = 1e-8;
  bool standardize = true;

  void validate() const;
};

struct CoxModel {
  std::vector<std::string> feature_names;
  Eigen::VectorXd beta;
  bool converged = false;
  int iterations = 0;
  double final_nlpl = 0.0;
  /// Max-norm of the gradient at the solution, on the fitting scale.
  double gradient_norm = 0.0;
};

template <typename Scalar>
struct CoxDerivatives {
  Scalar value{0};
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> gradient;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> hessian;
};

namespace detail {

void check_cox_inputs(Eigen::Index rows, Eigen::Index cols, std::span<const SurvivalRecord> records,
                      Eigen::Index beta_size);

/// Patients sorted by descending time; blocks of equal time are contiguous.
std::vector<Eigen::Index> descending_time_order(std::span<const SurvivalRecord> records);

/// Shared sweep over risk sets. With `order` == 0 only the likelihood is
/// accumulated, 1 adds the gradient, 2 adds the Hessian.
template <typename Derived, typename Scalar>
CoxDerivatives<Scalar> cox_sweep(const Eigen::MatrixBase<Derived>& X,
                                 std::span<const SurvivalRecord> records,
                                 const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& beta, TieMethod ties,
                                 int order) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  check_cox_inputs(X.rows(), X.cols(), records, beta.size());

  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  const Vec eta = X.template cast<Scalar>() * beta;
  if (!eta.allFinite()) throw OverflowError("cox: non-finite linear predictor");
  const Scalar shift = n > 0 ? eta.maxCoeff() : Scalar(0);
  const Vec w = (eta.array() - shift).exp().matrix();

  CoxDerivatives<Scalar> out;
  if (order >= 1) out.gradient = Vec::Zero(p);
  if (order >= 2) out.hessian = Mat::Zero(p, p);

  const auto idx = descending_time_order(records);
  Scalar s0(0);
  Vec s1 = Vec::Zero(p);
  Mat s2 = Mat::Zero(order >= 2 ? p : 0, order >= 2 ? p : 0);
  Vec t1(p), a1(p);
  Mat t2(order >= 2 ? p : 0, order >= 2 ? p : 0);

  Scalar nlpl(0);
  std::size_t pos = 0;
  while (pos < idx.size()) {
    const double t = records[static_cast<std::size_t>(idx[pos])].time;
    std::size_t end = pos;
    Scalar t0(0);
    t1.setZero();
    if (order >= 2) t2.setZero();
    int deaths = 0;
    for (; end < idx.size() && records[static_cast<std::size_t>(idx[end])].time == t; ++end) {
      const Eigen::Index i = idx[end];
      const auto xi = X.row(i).transpose().template cast<Scalar>();
      s0 += w(i);
      if (order >= 1) s1.noalias() += w(i) * xi;
      if (order >= 2) s2.noalias() += w(i) * xi * xi.transpose();
      if (records[static_cast<std::size_t>(i)].event) {
        ++deaths;
        nlpl -= eta(i) - shift;
        t0 += w(i);
        if (order >= 1) {
          t1.noalias() += w(i) * xi;
          out.gradient.noalias() -= xi;
        }
        if (order >= 2) t2.noalias() += w(i) * xi * xi.transpose();
      }
    }
    for (int l = 0; l < deaths; ++l) {
      const Scalar frac = ties == TieMethod::efron ? Scalar(l) / Scalar(deaths) : Scalar(0);
      const Scalar d0 = s0 - frac * t0;
      if (!(d0 > Scalar(0)) || !std::isfinite(static_cast<double>(d0))) {
        throw OverflowError("cox: risk-set sum under/overflowed; standardize covariates");
      }
      nlpl += std::log(d0);
      if (order >= 1) {
        a1 = (s1 - frac * t1) / d0;
        out.gradient += a1;
        if (order >= 2) out.hessian.noalias() += (s2 - frac * t2) / d0 - a1 * a1.transpose();
      }
    }
    pos = end;
  }
  out.value = nlpl;
  if (!std::isfinite(static_cast<double>(out.value))) {
    throw OverflowError("cox: non-finite partial likelihood");
  }
  if (order >= 2) out.hessian = Scalar(0.5) * (out.hessian + out.hessian.transpose()).eval();
  return out;
}

}  // namespace detail

/// Negative log partial likelihood with Breslow or Efron handling of tied
/// event times. Risk set at t is every subject with time >= t.
template <typename Derived, typename Scalar = typename Derived::Scalar>
Scalar negative_log_partial_likelihood(const Eigen::MatrixBase<Derived>& X,
                                       std::span<const SurvivalRecord> records,
                                       const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& beta,
                                       TieMethod ties = TieMethod::efron) {
  return detail::cox_sweep<Derived, Scalar>(X, records, beta, ties, 0).value;
}

/// Value, analytic gradient and Hessian of the negative log partial
/// likelihood. The Hessian is symmetric positive semidefinite.
template <typename Derived, typename Scalar = typename Derived::Scalar>
CoxDerivatives<Scalar> nlpl_gradient_hessian(const Eigen::MatrixBase<Derived>& X,
                                             std::span<const SurvivalRecord> records,
                                             const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& beta,
                                             TieMethod ties = TieMethod::efron) {
  return detail::cox_sweep<Derived, Scalar>(X, records, beta, ties, 2);
}

/// Newton-Raphson with step halving. Columns are internally standardized
/// when requested and coefficients are reported on the original scale.
/// Non-convergence is reported through CoxModel::converged, not thrown.
CoxModel fit_cox(const Eigen::MatrixXd& X, std::span<const SurvivalRecord> records,
                 const FitOptions& options = {}, std::vector<std::string> feature_names = {});

/// Linear predictor x*beta per row.
Eigen::VectorXd predict_risk(const CoxModel& model, const Eigen::MatrixXd& X);

/// As above, but also checks that the columns carry the model's feature
/// names in the model's order.
Eigen::VectorXd predict_risk(const CoxModel& model, const Eigen::MatrixXd& X,
                             std::span<const std::string> column_names);

}  // namespace hnrfs
