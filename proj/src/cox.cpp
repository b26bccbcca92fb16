#include "seqrisk/cox.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "seqrisk/error.hpp"

namespace seqrisk::cox {

SurvivalLabelSet::SurvivalLabelSet(Eigen::VectorXd times, ArrayXb events)
    : times_(std::move(times)), events_(std::move(events)) {
  if (times_.size() != events_.size()) {
    throw SchemaError("SurvivalLabelSet: times and events differ in length");
  }
  for (Eigen::Index i = 0; i < times_.size(); ++i) {
    if (!std::isfinite(times_[i]) || times_[i] < 0.0) {
      throw SchemaError("SurvivalLabelSet: time " + std::to_string(i) + " must be finite and >= 0");
    }
  }
  order_.resize(static_cast<std::size_t>(times_.size()));
  std::iota(order_.begin(), order_.end(), Eigen::Index{0});
  std::stable_sort(order_.begin(), order_.end(),
                   [this](Eigen::Index a, Eigen::Index b) { return times_[a] < times_[b]; });
}

SurvivalLabelSet::SurvivalLabelSet(const std::vector<double>& times, const std::vector<bool>& events)
    : SurvivalLabelSet(Eigen::Map<const Eigen::VectorXd>(times.data(), static_cast<Eigen::Index>(times.size())),
                       [&] {
                         ArrayXb e(static_cast<Eigen::Index>(events.size()));
                         for (std::size_t i = 0; i < events.size(); ++i) e[static_cast<Eigen::Index>(i)] = events[i];
                         return e;
                       }()) {}

SurvivalLabelSet SurvivalLabelSet::subset(const std::vector<Eigen::Index>& rows) const {
  Eigen::VectorXd t(static_cast<Eigen::Index>(rows.size()));
  ArrayXb e(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    t[static_cast<Eigen::Index>(i)] = times_[rows[i]];
    e[static_cast<Eigen::Index>(i)] = events_[rows[i]];
  }
  return {std::move(t), std::move(e)};
}

double partial_log_likelihood(const Eigen::Ref<const Eigen::VectorXd>& scores, const SurvivalLabelSet& labels,
                              Eigen::VectorXd* gradient) {
  const Eigen::Index n = labels.size();
  if (scores.size() != n) {
    throw SchemaError("partial likelihood: " + std::to_string(scores.size()) + " scores for " +
                      std::to_string(n) + " labels");
  }
  if (labels.event_count() == 0) throw NumericalError("partial likelihood undefined without events");
  if (!scores.allFinite()) throw NumericalError("partial likelihood: non-finite scores");

  const double shift = scores.maxCoeff();
  const Eigen::VectorXd w = (scores.array() - shift).exp().matrix();
  const auto& order = labels.order();
  const auto& t = labels.times();
  const auto& e = labels.events();

  // Groups of tied times, in ascending order: [begin, end) into `order`.
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  for (std::size_t b = 0; b < order.size();) {
    std::size_t end = b + 1;
    while (end < order.size() && t[order[end]] == t[order[b]]) ++end;
    groups.emplace_back(b, end);
    b = end;
  }

  std::vector<double> risk_sum(groups.size());
  std::vector<int> events_in(groups.size(), 0);
  double running = 0.0;
  double ll = 0.0;
  for (std::size_t g = groups.size(); g-- > 0;) {
    const auto [b, end] = groups[g];
    for (std::size_t k = b; k < end; ++k) running += w[order[k]];
    risk_sum[g] = running;
    const double log_risk = shift + std::log(running);
    for (std::size_t k = b; k < end; ++k) {
      if (e[order[k]]) {
        ll += scores[order[k]] - log_risk;
        ++events_in[g];
      }
    }
  }

  if (gradient) {
    gradient->resize(n);
    double cumulative = 0.0;  // sum over event groups at or before t of d_g / S_g
    for (std::size_t g = 0; g < groups.size(); ++g) {
      cumulative += events_in[g] / risk_sum[g];
      const auto [b, end] = groups[g];
      for (std::size_t k = b; k < end; ++k) {
        const auto i = order[k];
        (*gradient)[i] = (e[i] ? 1.0 : 0.0) - w[i] * cumulative;
      }
    }
  }
  return ll;
}

double partial_log_likelihood(const Eigen::Ref<const Eigen::VectorXd>& scores, const SurvivalLabelSet& labels) {
  return partial_log_likelihood(scores, labels, nullptr);
}

Eigen::VectorXd partial_ll_gradient(const Eigen::Ref<const Eigen::VectorXd>& scores, const SurvivalLabelSet& labels) {
  Eigen::VectorXd g;
  partial_log_likelihood(scores, labels, &g);
  return g;
}

Eigen::VectorXd LinearCoxModel::predict(const Eigen::Ref<const Eigen::MatrixXd>& features) const {
  if (features.cols() != beta.size()) {
    throw SchemaError("LinearCoxModel::predict: expected " + std::to_string(beta.size()) + " features, got " +
                      std::to_string(features.cols()));
  }
  const Eigen::MatrixXd standardized =
      (features.rowwise() - feature_means.transpose()).array().rowwise() / feature_scales.transpose().array();
  return standardized * beta;
}

LinearCoxFit fit_linear_cox(const Eigen::Ref<const Eigen::MatrixXd>& features, const SurvivalLabelSet& labels,
                            const LinearCoxOptions& options) {
  const Eigen::Index n = features.rows();
  const Eigen::Index f = features.cols();
  if (n != labels.size()) throw SchemaError("fit_linear_cox: feature rows do not match labels");
  if (!features.allFinite()) throw NumericalError("fit_linear_cox: non-finite features");

  LinearCoxFit fit;
  auto& model = fit.model;
  model.feature_means = features.colwise().mean().transpose();
  model.feature_scales.resize(f);
  for (Eigen::Index j = 0; j < f; ++j) {
    const double var = (features.col(j).array() - model.feature_means[j]).square().sum() /
                       static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
    model.feature_scales[j] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  const Eigen::MatrixXd x =
      (features.rowwise() - model.feature_means.transpose()).array().rowwise() /
      model.feature_scales.transpose().array();

  model.beta = Eigen::VectorXd::Zero(f);
  Eigen::VectorXd score_grad;
  double ll = partial_log_likelihood(x * model.beta, labels, &score_grad);
  Eigen::VectorXd grad = x.transpose() * score_grad;
  double step = options.initial_step;

  int it = 0;
  for (; it < options.max_iterations; ++it) {
    const double gnorm = grad.lpNorm<Eigen::Infinity>();
    if (gnorm < options.gradient_tolerance) {
      fit.converged = true;
      break;
    }
    const double gsq = grad.squaredNorm();
    bool accepted = false;
    while (step > 1e-300) {
      const Eigen::VectorXd candidate = model.beta + step * grad;
      Eigen::VectorXd cand_score_grad;
      const double cand_ll = partial_log_likelihood(x * candidate, labels, &cand_score_grad);
      const Eigen::VectorXd cand_grad = x.transpose() * cand_score_grad;
      // The step may not pass the maximum along the line. The objective is
      // concave, so that alone guarantees ascent; Armijo is then required
      // unless the change is below the rounding level of the likelihood.
      const bool armijo = cand_ll >= ll + 1e-4 * step * gsq;
      const bool flat = std::abs(cand_ll - ll) <= 1e-12 * std::max(1.0, std::abs(ll));
      if (std::isfinite(cand_ll) && (armijo || flat) && grad.dot(cand_grad) >= 0.0) {
        model.beta = candidate;
        ll = cand_ll;
        grad = cand_grad;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no ascent possible at machine precision
    step *= 2.0;
  }

  fit.iterations = it;
  fit.gradient_norm = grad.lpNorm<Eigen::Infinity>();
  fit.converged = fit.gradient_norm < options.gradient_tolerance;
  fit.log_likelihood = ll;
  if (!fit.converged && options.require_convergence) {
    throw NumericalError("fit_linear_cox: no convergence after " + std::to_string(it) +
                         " iterations, gradient inf-norm " + std::to_string(fit.gradient_norm));
  }
  return fit;
}

double BaselineHazard::at(double t) const {
  const auto it = std::upper_bound(event_times.begin(), event_times.end(), t);
  if (it == event_times.begin()) return 0.0;
  return cumulative_hazard[static_cast<std::size_t>(it - event_times.begin()) - 1];
}

BaselineHazard breslow_baseline(const Eigen::Ref<const Eigen::VectorXd>& scores, const SurvivalLabelSet& labels) {
  if (scores.size() != labels.size()) throw SchemaError("breslow_baseline: scores do not match labels");
  if (!scores.allFinite()) throw NumericalError("breslow_baseline: non-finite scores");
  const auto& order = labels.order();
  const auto& t = labels.times();
  const auto& e = labels.events();
  const double shift = scores.size() > 0 ? scores.maxCoeff() : 0.0;

  // Risk sums in descending time, then accumulate increments ascending.
  std::vector<std::pair<double, double>> increments;  // (time, d / S)
  double running = 0.0;
  for (std::size_t b = order.size(); b > 0;) {
    std::size_t begin = b - 1;
    while (begin > 0 && t[order[begin - 1]] == t[order[b - 1]]) --begin;
    int deaths = 0;
    for (std::size_t k = begin; k < b; ++k) {
      running += std::exp(scores[order[k]] - shift);
      deaths += e[order[k]] ? 1 : 0;
    }
    if (deaths > 0) increments.emplace_back(t[order[begin]], deaths / running * std::exp(-shift));
    b = begin;
  }
  BaselineHazard h;
  double cumulative = 0.0;
  for (auto it = increments.rbegin(); it != increments.rend(); ++it) {
    cumulative += it->second;
    h.event_times.push_back(it->first);
    h.cumulative_hazard.push_back(cumulative);
  }
  return h;
}

double masked_distance(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const ArrayXb>& a_obs,
                       const Eigen::Ref<const Eigen::VectorXd>& b, const Eigen::Ref<const ArrayXb>& b_obs) {
  double sum = 0.0;
  Eigen::Index overlap = 0;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    if (a_obs[j] && b_obs[j]) {
      const double d = a[j] - b[j];
      sum += d * d;
      ++overlap;
    }
  }
  if (overlap == 0) return std::numeric_limits<double>::infinity();
  return std::sqrt(sum * static_cast<double>(a.size()) / static_cast<double>(overlap));
}

Imputer::Imputer(ImputeMethod method, int k) : method_(method), k_(k) {
  if (method == ImputeMethod::knn && k < 1) throw ConfigError("KNN imputation needs k >= 1");
}

void Imputer::fit(const Eigen::Ref<const Eigen::MatrixXd>& values, const MatrixXb& observed) {
  if (values.rows() != observed.rows() || values.cols() != observed.cols()) {
    throw SchemaError("Imputer::fit: values and mask shapes differ");
  }
  const Eigen::Index f = values.cols();
  means_.resize(f);
  std::string never_observed;
  int missing_count = 0;
  for (Eigen::Index j = 0; j < f; ++j) {
    double sum = 0.0;
    Eigen::Index cnt = 0;
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      if (observed(i, j)) {
        sum += values(i, j);
        ++cnt;
      }
    }
    if (cnt == 0) {
      if (missing_count++ < 20) never_observed += (never_observed.empty() ? "" : ", ") + std::to_string(j);
      means_[j] = 0.0;
    } else {
      means_[j] = sum / static_cast<double>(cnt);
    }
  }
  if (missing_count > 0) {
    throw SchemaError("imputation: " + std::to_string(missing_count) +
                      " feature(s) never observed in training: " + never_observed +
                      (missing_count > 20 ? ", ..." : ""));
  }
  if (method_ == ImputeMethod::knn) {
    train_values_ = values.transpose();
    train_observed_ = observed.transpose();
  }
}

Eigen::MatrixXd Imputer::transform(const Eigen::Ref<const Eigen::MatrixXd>& values, const MatrixXb& observed) const {
  if (values.cols() != means_.size() || observed.rows() != values.rows() || observed.cols() != values.cols()) {
    throw SchemaError("Imputer::transform: shape does not match the fitted data");
  }
  Eigen::MatrixXd out = values;
  if (method_ == ImputeMethod::mean) {
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      for (Eigen::Index j = 0; j < out.cols(); ++j) {
        if (!observed(i, j)) out(i, j) = means_[j];
      }
    }
    return out;
  }

  const Eigen::Index n_train = train_values_.cols();
  std::vector<std::pair<double, Eigen::Index>> ranked(static_cast<std::size_t>(n_train));
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (observed.row(i).all()) continue;
    const Eigen::VectorXd row = values.row(i).transpose();
    const ArrayXb row_obs = observed.row(i).transpose();
    for (Eigen::Index r = 0; r < n_train; ++r) {
      ranked[static_cast<std::size_t>(r)] = {
          masked_distance(row, row_obs, train_values_.col(r), train_observed_.col(r)), r};
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      if (observed(i, j)) continue;
      double sum = 0.0;
      int used = 0;
      for (const auto& [dist, r] : ranked) {
        if (used == k_ || !std::isfinite(dist)) break;
        if (!train_observed_(j, r)) continue;
        sum += train_values_(j, r);
        ++used;
      }
      out(i, j) = used > 0 ? sum / used : means_[j];
    }
  }
  return out;
}

Eigen::MatrixXd impute(const Eigen::Ref<const Eigen::MatrixXd>& values, const MatrixXb& observed,
                       ImputeMethod method, int k, const std::vector<Eigen::Index>& train_rows) {
  Eigen::MatrixXd tv(static_cast<Eigen::Index>(train_rows.size()), values.cols());
  MatrixXb to(static_cast<Eigen::Index>(train_rows.size()), values.cols());
  for (std::size_t r = 0; r < train_rows.size(); ++r) {
    tv.row(static_cast<Eigen::Index>(r)) = values.row(train_rows[r]);
    to.row(static_cast<Eigen::Index>(r)) = observed.row(train_rows[r]);
  }
  Imputer imputer(method, k);
  imputer.fit(tv, to);
  return imputer.transform(values, observed);
}

}  // namespace seqrisk::cox
