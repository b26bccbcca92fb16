#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "seqrisk/cox.hpp"

namespace seqrisk::eval {

enum class CIndexMode {
  /// Pair comparable iff the shorter time has an event; concordant iff that
  /// patient has the higher risk; tied scores count one half.
  harrell,
  /// Time-independent pair formula without censoring: sum over i<j of
  /// 1(R_i > R_j) 1(t_i > t_j) divided by the count of pairs with t_i != t_j.
  /// For auditing only.
  uncensored_pairs,
};

struct CIndexResult {
  double value = 0.0;
  std::int64_t concordant = 0;
  std::int64_t discordant = 0;
  std::int64_t tied_score = 0;
  std::int64_t comparable = 0;
};

/// O(n log n) concordance. Throws NumericalError without comparable pairs.
CIndexResult c_index(const Eigen::Ref<const Eigen::VectorXd>& scores, const cox::SurvivalLabelSet& labels,
                     CIndexMode mode = CIndexMode::harrell);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
  std::size_t count = 0;
};

MetricSummary summarize(const std::vector<double>& values);

/// Model x condition table of metric values, e.g. C-index per variant and
/// masking level, each cell pooled over splits and seeds.
class ReportTable {
 public:
  ReportTable(std::vector<std::string> row_labels, std::vector<std::string> column_labels);

  void add(const std::string& row, const std::string& column, double value);
  MetricSummary cell(const std::string& row, const std::string& column) const;
  const std::vector<double>& values(const std::string& row, const std::string& column) const;

  /// Aligned "mean ± std" table for humans.
  std::string to_text(int precision = 3) const;
  /// Tab-separated: row, column, mean, std, n, then the raw values.
  std::string to_tsv() const;

  const std::vector<std::string>& rows() const { return rows_; }
  const std::vector<std::string>& columns() const { return cols_; }

 private:
  std::size_t row_index(const std::string& row) const;
  std::size_t col_index(const std::string& col) const;

  std::vector<std::string> rows_;
  std::vector<std::string> cols_;
  std::vector<std::vector<double>> cells_;
};

enum class Projection { first_two, pca };

Projection projection_from_string(const std::string& s);

/// Projects per-patient latent vectors (rows) to two dimensions.
Eigen::MatrixXd project_2d(const Eigen::Ref<const Eigen::MatrixXd>& latents, Projection projection);

inline constexpr double kLogTimeFloor = 1e-6;

}  // namespace seqrisk::eval
