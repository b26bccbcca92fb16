#include "seqrisk/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "seqrisk/error.hpp"

namespace seqrisk::eval {

namespace {

/// Fenwick tree over score ranks.
class RankCounter {
 public:
  explicit RankCounter(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t rank) {
    for (std::size_t i = rank + 1; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  /// Number of inserted ranks strictly below `rank`.
  std::int64_t below(std::size_t rank) const {
    std::int64_t s = 0;
    for (std::size_t i = rank; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<std::int64_t> tree_;
};

CIndexResult literal(const Eigen::Ref<const Eigen::VectorXd>& r, const cox::SurvivalLabelSet& labels) {
  const auto& t = labels.times();
  CIndexResult out;
  std::int64_t numer = 0;
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    for (Eigen::Index j = i + 1; j < r.size(); ++j) {
      if (t[i] != t[j]) ++out.comparable;
      if (r[i] > r[j] && t[i] > t[j]) ++numer;
    }
  }
  if (out.comparable == 0) throw NumericalError("c_index: no pairs with distinct times");
  out.concordant = numer;
  out.value = static_cast<double>(numer) / static_cast<double>(out.comparable);
  return out;
}

}  // namespace

CIndexResult c_index(const Eigen::Ref<const Eigen::VectorXd>& scores, const cox::SurvivalLabelSet& labels,
                     CIndexMode mode) {
  const Eigen::Index n = labels.size();
  if (scores.size() != n) throw SchemaError("c_index: scores and labels differ in length");
  if (n < 2) throw NumericalError("c_index: need at least two patients");
  if (!scores.allFinite()) throw NumericalError("c_index: non-finite scores");
  if (mode == CIndexMode::uncensored_pairs) return literal(scores, labels);

  // Dense score ranks.
  std::vector<double> sorted(scores.data(), scores.data() + n);
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  auto rank_of = [&](double s) {
    return static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), s) - sorted.begin());
  };

  // Walk time groups from longest to shortest; the counter holds every patient
  // with a strictly longer time than the current group.
  const auto& order = labels.order();
  const auto& t = labels.times();
  const auto& e = labels.events();
  RankCounter counter(sorted.size());
  std::int64_t inserted = 0;
  CIndexResult out;
  for (std::size_t end = order.size(); end > 0;) {
    std::size_t begin = end - 1;
    while (begin > 0 && t[order[begin - 1]] == t[order[end - 1]]) --begin;
    for (std::size_t k = begin; k < end; ++k) {
      const auto i = order[k];
      if (!e[i]) continue;
      const auto rank = rank_of(scores[i]);
      const auto lower = counter.below(rank);
      const auto lower_or_equal = counter.below(rank + 1);
      out.concordant += lower;
      out.tied_score += lower_or_equal - lower;
      out.discordant += inserted - lower_or_equal;
      out.comparable += inserted;
    }
    for (std::size_t k = begin; k < end; ++k) {
      counter.add(rank_of(scores[order[k]]));
      ++inserted;
    }
    end = begin;
  }
  if (out.comparable == 0) throw NumericalError("c_index: no comparable pairs");
  out.value = (static_cast<double>(out.concordant) + 0.5 * static_cast<double>(out.tied_score)) /
              static_cast<double>(out.comparable);
  return out;
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  s.count = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

ReportTable::ReportTable(std::vector<std::string> row_labels, std::vector<std::string> column_labels)
    : rows_(std::move(row_labels)), cols_(std::move(column_labels)), cells_(rows_.size() * cols_.size()) {}

std::size_t ReportTable::row_index(const std::string& row) const {
  const auto it = std::find(rows_.begin(), rows_.end(), row);
  if (it == rows_.end()) throw SchemaError("report table: unknown row '" + row + "'");
  return static_cast<std::size_t>(it - rows_.begin());
}

std::size_t ReportTable::col_index(const std::string& col) const {
  const auto it = std::find(cols_.begin(), cols_.end(), col);
  if (it == cols_.end()) throw SchemaError("report table: unknown column '" + col + "'");
  return static_cast<std::size_t>(it - cols_.begin());
}

void ReportTable::add(const std::string& row, const std::string& column, double value) {
  cells_[row_index(row) * cols_.size() + col_index(column)].push_back(value);
}

const std::vector<double>& ReportTable::values(const std::string& row, const std::string& column) const {
  return cells_[row_index(row) * cols_.size() + col_index(column)];
}

MetricSummary ReportTable::cell(const std::string& row, const std::string& column) const {
  return summarize(values(row, column));
}

std::string ReportTable::to_text(int precision) const {
  std::vector<std::vector<std::string>> grid;
  grid.push_back({"Model"});
  for (const auto& c : cols_) grid.back().push_back(c);
  for (const auto& r : rows_) {
    grid.push_back({r});
    for (const auto& c : cols_) {
      const auto& v = values(r, c);
      if (v.empty()) {
        grid.back().push_back("-");
        continue;
      }
      const auto s = summarize(v);
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(precision) << s.mean << " ± " << s.std;
      grid.back().push_back(cell.str());
    }
  }
  // Column widths in code points so the ± sign does not skew alignment.
  auto width = [](const std::string& s) {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char ch) {
      return (static_cast<unsigned char>(ch) & 0xC0) != 0x80;
    }));
  };
  std::vector<std::size_t> widths(grid.front().size(), 0);
  for (const auto& row : grid) {
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], width(row[c]));
  }
  std::ostringstream out;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (std::size_t c = 0; c < grid[r].size(); ++c) {
      out << grid[r][c] << std::string(widths[c] - width(grid[r][c]) + (c + 1 < grid[r].size() ? 2 : 0), ' ');
    }
    out << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : widths) total += w + 2;
      out << std::string(total - 2, '-') << '\n';
    }
  }
  return out.str();
}

std::string ReportTable::to_tsv() const {
  std::ostringstream out;
  out << "model\tcondition\tmean\tstd\tn\tvalues\n";
  out << std::setprecision(17);
  for (const auto& r : rows_) {
    for (const auto& c : cols_) {
      const auto& v = values(r, c);
      const auto s = summarize(v);
      out << r << '\t' << c << '\t' << s.mean << '\t' << s.std << '\t' << s.count << '\t';
      for (std::size_t k = 0; k < v.size(); ++k) out << (k ? "," : "") << v[k];
      out << '\n';
    }
  }
  return out.str();
}

Projection projection_from_string(const std::string& s) {
  if (s == "first-2-dims" || s == "first_two") return Projection::first_two;
  if (s == "pca-2" || s == "pca") return Projection::pca;
  throw ConfigError("unknown projection '" + s + "' (expected first-2-dims or pca-2)");
}

Eigen::MatrixXd project_2d(const Eigen::Ref<const Eigen::MatrixXd>& latents, Projection projection) {
  if (latents.cols() < 2) throw SchemaError("project_2d: need at least two latent dimensions");
  if (projection == Projection::first_two) return latents.leftCols(2);
  if (latents.rows() < 2) throw SchemaError("project_2d: PCA needs at least two rows");
  const Eigen::RowVectorXd mean = latents.colwise().mean();
  const Eigen::MatrixXd centered = latents.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(latents.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  // Eigenvalues ascend; take the last two columns, largest first, with a sign
  // convention (largest-magnitude loading positive) for reproducible plots.
  Eigen::MatrixXd basis(latents.cols(), 2);
  for (int k = 0; k < 2; ++k) {
    Eigen::VectorXd v = solver.eigenvectors().col(latents.cols() - 1 - k);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    basis.col(k) = v;
  }
  return centered * basis;
}

}  // namespace seqrisk::eval
