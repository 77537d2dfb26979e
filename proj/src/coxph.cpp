#include "hnrfs/coxph.hpp"

#include <limits>

namespace hnrfs {

void FitOptions::validate() const {
  if (!(gradient_tolerance > 0.0)) throw InvalidArgument("FitOptions: gradient_tolerance must be > 0");
  if (max_iterations < 1) throw InvalidArgument("FitOptions: max_iterations must be >= 1");
  if (!(ridge_jitter >= 0.0)) throw InvalidArgument("FitOptions: ridge_jitter must be >= 0");
}

namespace detail {

void check_cox_inputs(Eigen::Index rows, Eigen::Index cols, std::span<const SurvivalRecord> records,
                      Eigen::Index beta_size) {
  if (static_cast<std::size_t>(rows) != records.size()) {
    throw ShapeError("cox: design has " + std::to_string(rows) + " rows but " +
                     std::to_string(records.size()) + " records");
  }
  if (beta_size != cols) {
    throw ShapeError("cox: beta has " + std::to_string(beta_size) + " entries for " +
                     std::to_string(cols) + " columns");
  }
}

std::vector<Eigen::Index> descending_time_order(std::span<const SurvivalRecord> records) {
  std::vector<Eigen::Index> idx(records.size());
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    return records[static_cast<std::size_t>(a)].time > records[static_cast<std::size_t>(b)].time;
  });
  return idx;
}

}  // namespace detail

namespace {

constexpr int kMaxHalvings = 20;
constexpr double kPivotFloor = 1e-12;

bool factorization_ok(const Eigen::LLT<Eigen::MatrixXd>& llt, double diag_scale) {
  if (llt.info() != Eigen::Success) return false;
  const Eigen::VectorXd pivots = llt.matrixLLT().diagonal();
  return pivots.allFinite() && pivots.array().square().minCoeff() >= kPivotFloor * diag_scale;
}

// Solves H * step = g. Falls back to H + jitter*I (growing tenfold) when the
// plain factorization fails or is numerically singular.
bool newton_direction(const Eigen::MatrixXd& H, const Eigen::VectorXd& g, double ridge_jitter,
                      Eigen::VectorXd& step) {
  const double scale = std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (factorization_ok(llt, scale)) {
    step = llt.solve(g);
    return step.allFinite();
  }
  if (ridge_jitter <= 0.0) return false;
  double jitter = ridge_jitter * scale;
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(H.rows(), H.cols());
  for (int attempt = 0; attempt < 12; ++attempt, jitter *= 10.0) {
    llt.compute(H + jitter * eye);
    if (factorization_ok(llt, scale)) {
      step = llt.solve(g);
      return step.allFinite();
    }
  }
  return false;
}

double safe_value(const Eigen::MatrixXd& Z, std::span<const SurvivalRecord> records,
                  const Eigen::VectorXd& beta, TieMethod ties) {
  try {
    return negative_log_partial_likelihood(Z, records, beta, ties);
  } catch (const OverflowError&) {
    return std::numeric_limits<double>::infinity();
  }
}

}  // namespace

CoxModel fit_cox(const Eigen::MatrixXd& X, std::span<const SurvivalRecord> records,
                 const FitOptions& options, std::vector<std::string> feature_names) {
  options.validate();
  const Eigen::Index p = X.cols();
  detail::check_cox_inputs(X.rows(), p, records, p);
  if (!feature_names.empty() && static_cast<Eigen::Index>(feature_names.size()) != p) {
    throw ShapeError("fit_cox: feature name count does not match columns");
  }
  if (!X.allFinite()) throw InvalidArgument("fit_cox: design contains non-finite values");
  const bool any_event =
      std::any_of(records.begin(), records.end(), [](const SurvivalRecord& r) { return r.event; });
  if (!any_event) throw DegenerateError("fit_cox: no events, partial likelihood is empty");
  if (p == 0) throw DegenerateError("fit_cox: design has no columns");

  const Eigen::RowVectorXd mean = X.colwise().mean();
  const Eigen::RowVectorXd sd =
      ((X.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(X.rows()))
          .sqrt()
          .matrix();
  for (Eigen::Index j = 0; j < p; ++j) {
    if ((X.col(j).array() == X(0, j)).all()) {
      const std::string name = feature_names.empty() ? std::to_string(j) : feature_names[j];
      throw DegenerateError("fit_cox: degenerate design, column '" + name + "' is constant");
    }
  }

  Eigen::MatrixXd Z = X;
  if (options.standardize) Z = (X.rowwise() - mean).array().rowwise() / sd.array();

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  auto current = nlpl_gradient_hessian(Z, records, beta, options.tie_method);
  CoxModel model;
  Eigen::VectorXd step(p);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    if (current.gradient.cwiseAbs().maxCoeff() <= options.gradient_tolerance) break;
    if (!newton_direction(current.hessian, current.gradient, options.ridge_jitter, step)) break;

    double scale = 1.0;
    bool accepted = false;
    Eigen::VectorXd candidate(p);
    const double slack = 1e-14 * std::max(1.0, std::abs(current.value));
    for (int h = 0; h <= kMaxHalvings; ++h, scale *= 0.5) {
      candidate = beta - scale * step;
      if (safe_value(Z, records, candidate, options.tie_method) <= current.value + slack) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    beta = candidate;
    current = nlpl_gradient_hessian(Z, records, beta, options.tie_method);
    model.iterations = iter + 1;
  }

  model.gradient_norm = current.gradient.cwiseAbs().maxCoeff();
  model.converged = model.gradient_norm <= options.gradient_tolerance;
  model.final_nlpl = current.value;
  model.beta = options.standardize ? Eigen::VectorXd(beta.array() / sd.transpose().array()) : beta;
  if (feature_names.empty()) {
    for (Eigen::Index j = 0; j < p; ++j) feature_names.push_back("x" + std::to_string(j));
  }
  model.feature_names = std::move(feature_names);
  return model;
}

Eigen::VectorXd predict_risk(const CoxModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.beta.size()) {
    throw SchemaError("predict_risk: design has " + std::to_string(X.cols()) +
                      " columns, model expects " + std::to_string(model.beta.size()));
  }
  return X * model.beta;
}

Eigen::VectorXd predict_risk(const CoxModel& model, const Eigen::MatrixXd& X,
                             std::span<const std::string> column_names) {
  if (column_names.size() != model.feature_names.size() ||
      !std::equal(column_names.begin(), column_names.end(), model.feature_names.begin())) {
    throw SchemaError("predict_risk: columns do not match the model's features");
  }
  return predict_risk(model, X);
}

}  // namespace hnrfs
