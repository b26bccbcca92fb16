#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "seqrisk/error.hpp"
#include "seqrisk/evaluation.hpp"
#include "test_support.hpp"

using namespace seqrisk;
using namespace seqrisk::eval;

TEST_CASE("perfect anti-ranking scores 1 and constant scores 0.5") {
  const cox::SurvivalLabelSet labels({1, 2, 3, 4, 5}, {true, true, true, true, true});
  const Eigen::VectorXd risk{{5, 4, 3, 2, 1}};
  const auto r = c_index(risk, labels);
  CHECK(r.value == 1.0);
  CHECK(r.comparable == 10);
  CHECK(r.concordant == 10);
  CHECK(c_index(Eigen::VectorXd::Constant(5, 0.3), labels).value == 0.5);
  CHECK(c_index(-risk, labels).value == 0.0);
}

TEST_CASE("censored patients anchor no pairs") {
  const cox::SurvivalLabelSet labels({1, 2, 3}, {false, true, false});
  const Eigen::VectorXd risk{{0, 1, 2}};
  const auto r = c_index(risk, labels);
  // Only (1, 2) is comparable and it is discordant.
  CHECK(r.comparable == 1);
  CHECK(r.discordant == 1);
  CHECK(r.value == 0.0);
}

TEST_CASE("equal times are not comparable") {
  const cox::SurvivalLabelSet labels({2, 2, 3}, {true, true, false});
  const Eigen::VectorXd risk{{1, 0, 0}};
  const auto r = c_index(risk, labels);
  CHECK(r.comparable == 2);
  CHECK(r.concordant == 1);
  CHECK(r.tied_score == 1);
  CHECK(r.value == 0.75);
}

TEST_CASE("matches brute-force pair enumeration exactly") {
  std::mt19937_64 rng(31337);
  int checked = 0;
  for (int rep = 0; rep < 400; ++rep) {
    const int n = 2 + static_cast<int>(rng() % 49);
    const auto r = testing::random_survival(rng, n, 0.3, rep % 3 == 0, true);
    const auto brute = testing::brute_c_index(r.scores, r.times, r.events);
    const cox::SurvivalLabelSet labels(r.times, r.events);
    if (brute.comparable == 0) {
      CHECK_THROWS_AS(c_index(r.scores, labels), NumericalError);
      continue;
    }
    const auto fast = c_index(r.scores, labels);
    CHECK(fast.concordant == brute.concordant);
    CHECK(fast.discordant == brute.discordant);
    CHECK(fast.tied_score == brute.tied);
    CHECK(fast.comparable == brute.comparable);
    CHECK(fast.value == brute.value());
    ++checked;
  }
  CHECK(checked > 300);
}

TEST_CASE("rank invariance, permutation symmetry and antisymmetry") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 5 + static_cast<int>(rng() % 40);
    auto r = testing::random_survival(rng, n, 0.3, false, false);
    r.events[0] = true;
    const cox::SurvivalLabelSet labels(r.times, r.events);
    const double v = c_index(r.scores, labels).value;
    const Eigen::VectorXd affine = 2.0 * r.scores.array() + 1.0;
    const Eigen::VectorXd expo = r.scores.array().exp();
    CHECK(c_index(affine, labels).value == v);
    CHECK(c_index(expo, labels).value == v);
    CHECK(c_index(-r.scores, labels).value == doctest::Approx(1.0 - v).epsilon(1e-15));

    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> t;
    std::vector<bool> e;
    Eigen::VectorXd s(n);
    for (int i = 0; i < n; ++i) {
      t.push_back(r.times[perm[i]]);
      e.push_back(r.events[perm[i]]);
      s[i] = r.scores[perm[i]];
    }
    CHECK(c_index(s, cox::SurvivalLabelSet(t, e)).value == v);
  }
}

TEST_CASE("c_index errors") {
  CHECK_THROWS_AS(c_index(Eigen::VectorXd::Zero(1), cox::SurvivalLabelSet({1.0}, {true})), NumericalError);
  CHECK_THROWS_AS(c_index(Eigen::VectorXd::Zero(2), cox::SurvivalLabelSet({1.0, 2.0}, {false, false})),
                  NumericalError);
  CHECK_THROWS_AS(c_index(Eigen::VectorXd::Zero(3), cox::SurvivalLabelSet({1.0, 2.0}, {true, true})), SchemaError);
}

TEST_CASE("uncensored pair formula counts same-direction pairs") {
  const cox::SurvivalLabelSet labels({3, 2, 1}, {true, false, true});
  const Eigen::VectorXd longer_is_riskier{{3, 2, 1}};
  const auto literal = c_index(longer_is_riskier, labels, CIndexMode::uncensored_pairs);
  // Read literally, the formula rewards higher risk for the longer time, the
  // opposite of Harrell's convention, and ignores censoring.
  CHECK(literal.value == 1.0);
  CHECK(literal.comparable == 3);
  CHECK(c_index(longer_is_riskier, labels).value == 0.0);
  CHECK(c_index(-longer_is_riskier, labels, CIndexMode::uncensored_pairs).value == 0.0);
  CHECK(c_index(-longer_is_riskier, labels).value == 1.0);
}

TEST_CASE("summaries") {
  auto s = summarize({0.8, 0.85, 0.9});
  CHECK(s.mean == doctest::Approx(0.85).epsilon(1e-15));
  CHECK(s.std == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(s.count == 3);
  CHECK(summarize({0.7}).std == 0.0);
  s = summarize({0.61, 0.61, 0.61, 0.61});
  CHECK(s.mean == doctest::Approx(0.61));
  CHECK(s.std == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("report table text and tsv") {
  ReportTable table({"Cox", "VAE+Transformer"}, {"70%", "90%"});
  table.add("Cox", "70%", 0.6);
  table.add("Cox", "70%", 0.7);
  table.add("VAE+Transformer", "90%", 0.8);
  CHECK(table.cell("Cox", "70%").mean == doctest::Approx(0.65));
  CHECK(table.values("Cox", "90%").empty());
  const auto text = table.to_text(3);
  CHECK(text.find("0.650 ± 0.071") != std::string::npos);
  CHECK(text.find("0.800 ± 0.000") != std::string::npos);
  CHECK(text.find("-") != std::string::npos);
  const auto tsv = table.to_tsv();
  CHECK(tsv.rfind("model\tcondition\tmean\tstd\tn\tvalues\n", 0) == 0);
  CHECK(tsv.find("Cox\t70%\t0.64999999999999991\t") != std::string::npos);
  CHECK(tsv.find("\t2\t0.59999999999999998,0.69999999999999996\n") != std::string::npos);
  CHECK_THROWS_AS(table.add("RSF", "70%", 0.5), SchemaError);
}

TEST_CASE("2-D projections") {
  Eigen::MatrixXd z(4, 3);
  z << 1, 2, 0, 2, 4, 0, 3, 6, 0, 4, 8, 0;
  CHECK(project_2d(z, Projection::first_two) == z.leftCols(2));
  const auto p = project_2d(z, Projection::pca);
  // All variance lies along (1, 2, 0): the first component carries it.
  CHECK(p.col(1).norm() < 1e-12);
  CHECK(p.col(0).cwiseAbs().maxCoeff() == doctest::Approx(1.5 * std::sqrt(5.0)));
  CHECK(p(3, 0) > 0);
  CHECK(projection_from_string("pca-2") == Projection::pca);
  CHECK_THROWS_AS(projection_from_string("tsne"), ConfigError);
}
