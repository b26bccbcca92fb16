#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace seqrisk::cox {

using ArrayXb = Eigen::Array<bool, Eigen::Dynamic, 1>;
using MatrixXb = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Survival outcomes t_p, e_p together with the ascending-time permutation.
class SurvivalLabelSet {
 public:
  SurvivalLabelSet() = default;
  /// Throws SchemaError on length mismatch or negative / non-finite times.
  SurvivalLabelSet(Eigen::VectorXd times, ArrayXb events);
  SurvivalLabelSet(const std::vector<double>& times, const std::vector<bool>& events);
  SurvivalLabelSet(std::initializer_list<double> times, std::initializer_list<bool> events)
      : SurvivalLabelSet(std::vector<double>(times), std::vector<bool>(events)) {}

  Eigen::Index size() const { return times_.size(); }
  const Eigen::VectorXd& times() const { return times_; }
  const ArrayXb& events() const { return events_; }
  /// Patient indices sorted by ascending time; stable in the input order.
  const std::vector<Eigen::Index>& order() const { return order_; }
  Eigen::Index event_count() const { return events_.count(); }

  SurvivalLabelSet subset(const std::vector<Eigen::Index>& rows) const;

 private:
  Eigen::VectorXd times_;
  ArrayXb events_;
  std::vector<Eigen::Index> order_;
};

/// Sum over events of eta_p - log sum_{t_j >= t_p} exp(eta_j). Breslow ties:
/// every patient with an equal time stays in the risk set.
/// Throws NumericalError with no events or non-finite scores.
double partial_log_likelihood(const Eigen::Ref<const Eigen::VectorXd>& scores,
                              const SurvivalLabelSet& labels);

/// Analytic gradient of partial_log_likelihood with respect to the scores.
Eigen::VectorXd partial_ll_gradient(const Eigen::Ref<const Eigen::VectorXd>& scores,
                                    const SurvivalLabelSet& labels);

/// Value and gradient from one pass over the risk sets.
double partial_log_likelihood(const Eigen::Ref<const Eigen::VectorXd>& scores,
                              const SurvivalLabelSet& labels, Eigen::VectorXd* gradient);

struct LinearCoxModel {
  Eigen::VectorXd beta;            // in standardized feature space
  Eigen::VectorXd feature_means;
  Eigen::VectorXd feature_scales;  // 1 for constant columns

  /// Linear predictor for raw (unstandardized) features, one row per patient.
  Eigen::VectorXd predict(const Eigen::Ref<const Eigen::MatrixXd>& features) const;
};

struct LinearCoxOptions {
  int max_iterations = 2000;
  double gradient_tolerance = 1e-7;  // on the infinity norm
  double initial_step = 1.0;
  /// Throw NumericalError instead of returning an unconverged fit.
  bool require_convergence = false;
};

struct LinearCoxFit {
  LinearCoxModel model;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;  // final infinity norm
  double log_likelihood = 0.0;
};

/// Maximizes the partial likelihood by gradient ascent with backtracking from
/// beta = 0 on internally standardized features.
LinearCoxFit fit_linear_cox(const Eigen::Ref<const Eigen::MatrixXd>& features, const SurvivalLabelSet& labels,
                            const LinearCoxOptions& options = {});

struct BaselineHazard {
  std::vector<double> event_times;       // distinct, ascending
  std::vector<double> cumulative_hazard; // non-decreasing

  /// Step function H0(t); 0 before the first event time.
  double at(double t) const;
};

/// Breslow estimator of the cumulative baseline hazard.
BaselineHazard breslow_baseline(const Eigen::Ref<const Eigen::VectorXd>& scores, const SurvivalLabelSet& labels);

enum class ImputeMethod { mean, knn };

/// Missing-value imputation for the static baselines. Statistics come from the
/// rows passed to fit(); transform() only replaces unobserved entries.
class Imputer {
 public:
  Imputer(ImputeMethod method, int k = 5);

  /// Throws SchemaError listing every column with no observed training value.
  void fit(const Eigen::Ref<const Eigen::MatrixXd>& values, const MatrixXb& observed);
  Eigen::MatrixXd transform(const Eigen::Ref<const Eigen::MatrixXd>& values, const MatrixXb& observed) const;

  ImputeMethod method() const { return method_; }

 private:
  ImputeMethod method_;
  int k_;
  Eigen::VectorXd means_;
  Eigen::MatrixXd train_values_;  // transposed: one training row per column
  MatrixXb train_observed_;
};

/// Convenience: fit on `train_rows` then transform every row.
Eigen::MatrixXd impute(const Eigen::Ref<const Eigen::MatrixXd>& values, const MatrixXb& observed,
                       ImputeMethod method, int k, const std::vector<Eigen::Index>& train_rows);

/// Distance used by KNN imputation: Euclidean over mutually observed
/// coordinates, scaled by sqrt(total / overlap). Infinite without overlap.
double masked_distance(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const ArrayXb>& a_obs,
                       const Eigen::Ref<const Eigen::VectorXd>& b, const Eigen::Ref<const ArrayXb>& b_obs);

}  // namespace seqrisk::cox
