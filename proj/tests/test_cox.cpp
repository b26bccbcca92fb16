#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "seqrisk/cox.hpp"
#include "seqrisk/error.hpp"
#include "test_support.hpp"

using namespace seqrisk;
using namespace seqrisk::cox;

namespace {

double max_rel_gradient_error(const Eigen::VectorXd& eta, const SurvivalLabelSet& labels) {
  const Eigen::VectorXd g = partial_ll_gradient(eta, labels);
  Eigen::VectorXd fd(eta.size());
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    Eigen::VectorXd up = eta, dn = eta;
    up[i] += h;
    dn[i] -= h;
    fd[i] = (partial_log_likelihood(up, labels) - partial_log_likelihood(dn, labels)) / (2 * h);
  }
  return (g - fd).norm() / std::max(fd.norm(), 1e-12);
}

}  // namespace

TEST_CASE("hand-evaluated three-patient likelihood") {
  const SurvivalLabelSet labels({1.0, 2.0, 3.0}, {true, true, false});
  const Eigen::VectorXd eta = Eigen::VectorXd::Zero(3);
  CHECK(partial_log_likelihood(eta, labels) == doctest::Approx(-(std::log(3.0) + std::log(2.0))).epsilon(1e-15));
  CHECK(partial_log_likelihood(eta, labels) == doctest::Approx(-1.791759).epsilon(1e-6));
  // d/d eta: event 0 -> 1 - 1/3; event 1 -> 1 - 1/3 - 1/2; censored 2 -> -1/3 - 1/2.
  const Eigen::VectorXd g = partial_ll_gradient(eta, labels);
  CHECK(g[0] == doctest::Approx(2.0 / 3.0));
  CHECK(g[1] == doctest::Approx(1.0 / 6.0));
  CHECK(g[2] == doctest::Approx(-5.0 / 6.0));
  CHECK(max_rel_gradient_error(eta, labels) < 1e-5);
}

TEST_CASE("single patient contributes zero") {
  const SurvivalLabelSet labels({2.5}, {true});
  for (double v : {-30.0, 0.0, 4.2, 700.0}) {
    CHECK(partial_log_likelihood(Eigen::VectorXd::Constant(1, v), labels) == 0.0);
  }
}

TEST_CASE("agrees with the direct definition on random instances, ties included") {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 1 + static_cast<int>(rng() % 40);
    auto r = testing::random_survival(rng, n, 0.3, rep % 2 == 0, rep % 3 == 0);
    if (std::none_of(r.events.begin(), r.events.end(), [](bool b) { return b; })) r.events[0] = true;
    const SurvivalLabelSet labels(r.times, r.events);
    const double expect = testing::brute_partial_ll(r.scores, r.times, r.events);
    CHECK(partial_log_likelihood(r.scores, labels) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("shift invariance and stability at extreme scores") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    auto r = testing::random_survival(rng, 2 + rep % 29, 0.3, rep % 2, false);
    r.events[0] = true;
    const SurvivalLabelSet labels(r.times, r.events);
    const double base = partial_log_likelihood(r.scores, labels);
    for (double c : {-500.0, -1.0, 3.0, 800.0}) {
      const Eigen::VectorXd shifted = r.scores.array() + c;
      CHECK(std::abs(partial_log_likelihood(shifted, labels) - base) <= 1e-12 * std::max(1.0, std::abs(base)));
    }
  }
}

TEST_CASE("value and gradient overload agrees with the separate calls") {
  std::mt19937_64 rng(8);
  auto r = testing::random_survival(rng, 25, 0.3, true, true);
  r.events[3] = true;
  const SurvivalLabelSet labels(r.times, r.events);
  Eigen::VectorXd g;
  const double v = partial_log_likelihood(r.scores, labels, &g);
  CHECK(v == partial_log_likelihood(r.scores, labels));
  CHECK((g - partial_ll_gradient(r.scores, labels)).norm() == 0.0);
}

TEST_CASE("gradient matches central finite differences") {
  std::mt19937_64 rng(99);
  double worst = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 1 + static_cast<int>(rng() % 30);
    auto r = testing::random_survival(rng, n, 0.3, rep % 2 == 1, false);
    r.events[0] = true;
    const SurvivalLabelSet labels(r.times, r.events);
    worst = std::max(worst, max_rel_gradient_error(r.scores, labels));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("gradient sums to zero and detached patients get none") {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    auto r = testing::random_survival(rng, 3 + rep % 20, 0.4, rep % 2, false);
    r.events[0] = true;
    const SurvivalLabelSet labels(r.times, r.events);
    const Eigen::VectorXd g = partial_ll_gradient(r.scores, labels);
    CHECK(std::abs(g.sum()) < 1e-12 * static_cast<double>(g.size()));
  }
  // Patient 0 is censored before the only event: in no risk set.
  const SurvivalLabelSet labels({0.5, 2.0, 3.0}, {false, true, false});
  const Eigen::VectorXd eta{{0.3, -1.0, 2.0}};
  CHECK(partial_ll_gradient(eta, labels)[0] == 0.0);
}

TEST_CASE("risk sets are nested in time") {
  std::mt19937_64 rng(44);
  for (int rep = 0; rep < 50; ++rep) {
    const auto r = testing::random_survival(rng, 30, 0.3, true, false);
    const SurvivalLabelSet labels(r.times, r.events);
    const auto& order = labels.order();
    for (std::size_t k = 1; k < order.size(); ++k) CHECK(r.times[order[k - 1]] <= r.times[order[k]]);
    for (int a = 0; a < 30; ++a) {
      for (int b = 0; b < 30; ++b) {
        if (!(r.times[a] <= r.times[b])) continue;
        for (int j = 0; j < 30; ++j) {
          if (r.times[j] >= r.times[b]) CHECK(r.times[j] >= r.times[a]);
        }
      }
    }
  }
}

TEST_CASE("early censored patients only act through risk sets") {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 50; ++rep) {
    auto r = testing::random_survival(rng, 10, 0.3, false, false);
    r.events[0] = true;
    const double first_event = [&] {
      double m = 1e300;
      for (std::size_t i = 0; i < r.times.size(); ++i) if (r.events[i]) m = std::min(m, r.times[i]);
      return m;
    }();
    // Append a censored patient strictly before every event.
    auto t2 = r.times;
    auto e2 = r.events;
    t2.push_back(first_event * 0.5);
    e2.push_back(false);
    Eigen::VectorXd s2(11);
    s2 << r.scores, 4.0;
    CHECK(partial_log_likelihood(s2, SurvivalLabelSet(t2, e2)) ==
          doctest::Approx(partial_log_likelihood(r.scores, SurvivalLabelSet(r.times, r.events))).epsilon(1e-14));
  }
}

TEST_CASE("partial likelihood errors") {
  CHECK_THROWS_AS(partial_log_likelihood(Eigen::VectorXd::Zero(2), SurvivalLabelSet({1.0, 2.0}, {false, false})),
                  NumericalError);
  Eigen::VectorXd bad{{0.0, std::numeric_limits<double>::infinity()}};
  CHECK_THROWS_AS(partial_log_likelihood(bad, SurvivalLabelSet({1.0, 2.0}, {true, false})), NumericalError);
  CHECK_THROWS_AS(partial_log_likelihood(Eigen::VectorXd::Zero(3), SurvivalLabelSet({1.0, 2.0}, {true, false})),
                  SchemaError);
  CHECK_THROWS_AS(SurvivalLabelSet({-1.0}, {true}), SchemaError);
}

TEST_CASE("linear Cox with an all-zero design stays at beta = 0") {
  const SurvivalLabelSet labels({1, 2, 3, 4}, {true, true, false, true});
  const auto fit = fit_linear_cox(Eigen::MatrixXd::Zero(4, 3), labels);
  CHECK(fit.converged);
  CHECK(fit.model.beta.isZero(0.0));
}

TEST_CASE("linear Cox on a rank-correlated feature ascends monotonically") {
  // Higher feature -> earlier event, with some overlap so the MLE is finite.
  const int n = 40;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z(0, 1);
  Eigen::MatrixXd x(n, 1);
  std::vector<double> t;
  std::vector<bool> e;
  for (int i = 0; i < n; ++i) {
    x(i, 0) = z(rng);
    t.push_back(std::exp(-1.5 * x(i, 0) + 0.8 * z(rng)));
    e.push_back(i % 4 != 0);
  }
  const SurvivalLabelSet labels(t, e);
  double previous_beta = 0.0;
  double previous_ll = -1e300;
  for (int iters : {1, 2, 4, 8, 16, 32, 64, 2000}) {
    LinearCoxOptions opt;
    opt.max_iterations = iters;
    const auto fit = fit_linear_cox(x, labels, opt);
    CHECK(fit.model.beta[0] > 0.0);
    CHECK(fit.model.beta[0] >= previous_beta - 1e-12);
    CHECK(fit.log_likelihood >= previous_ll - 1e-12);
    previous_beta = fit.model.beta[0];
    previous_ll = fit.log_likelihood;
  }
  const auto full = fit_linear_cox(x, labels);
  INFO("iterations " << full.iterations << " beta " << full.model.beta[0]);
  CHECK(full.converged);
  CHECK(full.gradient_norm < 1e-7);
  // The fitted scores rank with the feature.
  const Eigen::VectorXd s = full.model.predict(x);
  for (int i = 1; i < n; ++i) CHECK((s[i] > s[0]) == (x(i, 0) > x(0, 0)));
}

TEST_CASE("linear Cox is invariant to patient order") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(0, 1);
  const int n = 30;
  Eigen::MatrixXd x(n, 3);
  std::vector<double> t;
  std::vector<bool> e;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j) x(i, j) = z(rng);
    t.push_back(std::exp(-x(i, 0) + 0.5 * x(i, 2) + z(rng)));
    e.push_back(i % 3 != 0);
  }
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::MatrixXd xp(n, 3);
  std::vector<double> tp;
  std::vector<bool> ep;
  for (int i = 0; i < n; ++i) {
    xp.row(i) = x.row(perm[i]);
    tp.push_back(t[perm[i]]);
    ep.push_back(e[perm[i]]);
  }
  const auto a = fit_linear_cox(x, SurvivalLabelSet(t, e));
  const auto b = fit_linear_cox(xp, SurvivalLabelSet(tp, ep));
  CHECK(a.converged);
  CHECK((a.model.beta - b.model.beta).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("non-convergence is reported or thrown on request") {
  Eigen::MatrixXd x{{0.3, 1.0}, {2.0, -1.0}, {1.0, 0.5}, {-0.5, 0.2}, {0.1, 0.1}};
  const SurvivalLabelSet labels({1, 2, 3, 4, 5}, {true, false, true, true, false});
  LinearCoxOptions opt;
  opt.max_iterations = 2;
  const auto fit = fit_linear_cox(x, labels, opt);
  CHECK_FALSE(fit.converged);
  CHECK(fit.iterations == 2);
  CHECK(fit.gradient_norm > 1e-7);
  opt.require_convergence = true;
  CHECK_THROWS_WITH_AS(fit_linear_cox(x, labels, opt), doctest::Contains("gradient"), NumericalError);
}

TEST_CASE("Breslow baseline is a non-decreasing step function") {
  const SurvivalLabelSet labels({1, 2, 2, 3, 5}, {true, true, true, false, true});
  const Eigen::VectorXd eta = Eigen::VectorXd::Zero(5);
  const auto h = breslow_baseline(eta, labels);
  REQUIRE(h.event_times == std::vector<double>{1, 2, 5});
  // Risk sets of sizes 5, 4, 1 with 1, 2, 1 events.
  CHECK(h.cumulative_hazard[0] == doctest::Approx(1.0 / 5));
  CHECK(h.cumulative_hazard[1] == doctest::Approx(1.0 / 5 + 2.0 / 4));
  CHECK(h.cumulative_hazard[2] == doctest::Approx(1.0 / 5 + 2.0 / 4 + 1.0));
  CHECK(h.at(0.5) == 0.0);
  CHECK(h.at(2.5) == h.cumulative_hazard[1]);
  CHECK(h.at(100) == h.cumulative_hazard[2]);

  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 30; ++rep) {
    auto r = testing::random_survival(rng, 25, 0.3, true, false);
    r.events[0] = true;
    const auto b = breslow_baseline(r.scores, SurvivalLabelSet(r.times, r.events));
    CHECK(std::is_sorted(b.event_times.begin(), b.event_times.end()));
    CHECK(std::is_sorted(b.cumulative_hazard.begin(), b.cumulative_hazard.end()));
  }
}

TEST_CASE("mean imputation") {
  Eigen::MatrixXd v{{1.0, 5.0}, {3.0, 0.0}, {0.0, 7.0}};
  MatrixXb obs(3, 2);
  obs << true, true, true, false, false, true;
  const auto out = impute(v, obs, ImputeMethod::mean, 5, {0, 1, 2});
  CHECK(out(2, 0) == 2.0);
  CHECK(out(1, 1) == 6.0);
  CHECK(out(0, 0) == 1.0);
  CHECK(out(0, 1) == 5.0);

  // Statistics come from the training rows only.
  const auto train_only = impute(v, obs, ImputeMethod::mean, 5, {0, 2});
  CHECK(train_only(1, 1) == 6.0);
  CHECK(train_only(2, 0) == 1.0);
}

TEST_CASE("imputation leaves a fully observed matrix unchanged") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z(0, 1);
  Eigen::MatrixXd v(6, 4);
  for (int i = 0; i < 6; ++i) for (int j = 0; j < 4; ++j) v(i, j) = z(rng);
  const MatrixXb obs = MatrixXb::Constant(6, 4, true);
  for (auto m : {ImputeMethod::mean, ImputeMethod::knn}) CHECK(impute(v, obs, m, 2, {0, 1, 2}) == v);
}

TEST_CASE("KNN with k = 1 copies from a duplicate row") {
  Eigen::MatrixXd v{{1.0, 2.0, 3.0, 4.0}, {9.0, -9.0, 9.0, -9.0}, {1.0, 2.0, 0.0, 0.0}, {5.0, 5.0, 5.0, 5.0}};
  MatrixXb obs = MatrixXb::Constant(4, 4, true);
  obs(2, 2) = obs(2, 3) = false;
  const auto out = impute(v, obs, ImputeMethod::knn, 1, {0, 1, 3});
  CHECK(out(2, 2) == 3.0);
  CHECK(out(2, 3) == 4.0);
  CHECK(out(2, 0) == 1.0);
}

TEST_CASE("masked distance") {
  Eigen::VectorXd a{{1.0, 2.0, 0.0}}, b{{4.0, 6.0, 9.0}};
  ArrayXb ao(3), bo(3);
  ao << true, true, false;
  bo << true, true, true;
  // Overlap on 2 of 3 coordinates: 5 * sqrt(3/2).
  CHECK(masked_distance(a, ao, b, bo) == doctest::Approx(5.0 * std::sqrt(1.5)));
  ArrayXb none = ArrayXb::Constant(3, false);
  CHECK(std::isinf(masked_distance(a, none, b, bo)));
}

TEST_CASE("never-observed training columns are rejected by name") {
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(3, 3);
  MatrixXb obs = MatrixXb::Constant(3, 3, true);
  obs.col(1).setConstant(false);
  obs(0, 2) = obs(1, 2) = false;
  Imputer imp(ImputeMethod::mean);
  CHECK_THROWS_WITH_AS(imp.fit(v.topRows(2), obs.topRows(2)), doctest::Contains("1, 2"), SchemaError);
}
