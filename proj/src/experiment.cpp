#include "seqrisk/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>

#include "seqrisk/checkpoint.hpp"
#include "seqrisk/error.hpp"
#include "seqrisk/seeding.hpp"

namespace seqrisk::exp {

namespace fs = std::filesystem;
using nlohmann::json;

StaticFeatures last_observation_features(const SurvivalDataset& dataset) {
  const auto p = static_cast<Eigen::Index>(dataset.records.size());
  const auto d = static_cast<Eigen::Index>(dataset.feature_count());
  StaticFeatures f{Eigen::MatrixXd::Zero(p, d), cox::MatrixXb::Constant(p, d, false)};
  for (Eigen::Index i = 0; i < p; ++i) {
    const auto& s = dataset.records[static_cast<std::size_t>(i)].samples.back();
    for (Eigen::Index j = 0; j < d; ++j) {
      f.observed(i, j) = s.observed_mask[static_cast<std::size_t>(j)] != 0;
      f.values(i, j) = s.measurements[static_cast<std::size_t>(j)];
    }
  }
  return f;
}

namespace {

cox::SurvivalLabelSet labels_of(const SurvivalDataset& dataset, const std::vector<std::size_t>& rows) {
  std::vector<double> t;
  std::vector<bool> e;
  for (auto r : rows) {
    t.push_back(dataset.records[r].event_time);
    e.push_back(dataset.records[r].event);
  }
  return {t, e};
}

std::vector<Eigen::Index> as_index(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

}  // namespace

double cox_baseline_c_index(const SurvivalDataset& dataset, const SplitMap& splits, cox::ImputeMethod method,
                            int knn_k) {
  auto fit_rows = split_indices(dataset, splits, Split::train);
  const auto val = split_indices(dataset, splits, Split::validation);
  fit_rows.insert(fit_rows.end(), val.begin(), val.end());
  const auto test_rows = split_indices(dataset, splits, Split::test);
  const auto f = last_observation_features(dataset);

  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < f.values.cols(); ++j) {
    for (auto r : fit_rows) {
      if (f.observed(static_cast<Eigen::Index>(r), j)) {
        keep.push_back(j);
        break;
      }
    }
  }
  const Eigen::MatrixXd values = f.values(Eigen::all, keep);
  const cox::MatrixXb observed = f.observed(Eigen::all, keep);
  const Eigen::MatrixXd x = cox::impute(values, observed, method, knn_k, as_index(fit_rows));

  const auto fit = cox::fit_linear_cox(x(as_index(fit_rows), Eigen::all), labels_of(dataset, fit_rows));
  const Eigen::VectorXd scores = fit.model.predict(x(as_index(test_rows), Eigen::all));
  return eval::c_index(scores, labels_of(dataset, test_rows)).value;
}

VariantRun run_variant(const SurvivalDataset& dataset, const SplitMap& splits, const model::ModelConfig& config,
                       const train::TrainConfig& training, std::uint64_t seed, const train::TrainHooks& hooks) {
  const auto data = model::make_tensors(dataset, config, training.dtype());
  const auto sets = train::training_sets(dataset, splits);
  model::SeqRiskModel m(config, data.feature_dim(), dataset.covariate_schema, seed, training.dtype());
  m.select_inducing(data, sets.train, derive_seed(seed, "inducing"));
  VariantRun run;
  run.training = train::train(m, data, sets, training, seed, hooks);
  run.validation_c_index = run.training.best_validation_c_index;
  run.test_c_index = train::evaluate_c_index(m, data, split_indices(dataset, splits, Split::test));
  return run;
}

std::vector<std::string> benchmark_rows(const ReproduceConfig& r) {
  std::vector<std::string> rows;
  for (const auto& imp : r.cox_imputation) rows.push_back(imp == "mean" ? "Cox (mean)" : "Cox (KNN)");
  for (auto v : r.variants) rows.push_back(risk::display_name(v));
  return rows;
}

std::string masking_label(double level) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", level);
  return buf;
}

std::uint64_t run_seed(const ExperimentConfig& c, std::size_t k) {
  return derive_seed(c.seed, "run", {c.training.seeds.at(k)});
}

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw IoError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw IoError("output directory " + dir.string() + " is not empty; pass --force to overwrite");
      for (const auto& entry : fs::directory_iterator(dir)) fs::remove_all(entry.path());
    }
  }
  fs::create_directories(dir);
}

void write_manifest(const fs::path& dir, const std::string& command, const json& config) {
  std::vector<std::pair<std::string, std::uintmax_t>> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dir).generic_string();
    if (rel != "run_manifest.json") files.emplace_back(rel, entry.file_size());
  }
  std::sort(files.begin(), files.end());
  json list = json::array();
  for (const auto& [name, size] : files) list.push_back({{"path", name}, {"bytes", size}});
  std::ofstream out(dir / "run_manifest.json");
  out << json{{"command", command}, {"config", config}, {"files", list}}.dump(2) << '\n';
  if (!out) throw IoError("cannot write run manifest in " + dir.string());
}

std::vector<sim::Image> load_source_images(const ExperimentConfig& c) {
  return sim::load_idx_images(c.mnist_images.empty() ? default_mnist_images() : fs::path(c.mnist_images));
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

SplitMap splits_for(const ExperimentConfig& c, const SurvivalDataset& dataset) {
  if (!dataset.splits.empty()) return dataset.splits;
  return assign_splits(dataset, c.splits, derive_seed(c.seed, "split"));
}

json splits_to_json(const SplitMap& splits) {
  json j = json::object();
  for (const auto& [id, s] : splits) j[id] = to_string(s);
  return j;
}

}  // namespace

SurvivalDataset cmd_simulate(const ExperimentConfig& c, const fs::path& out, bool force) {
  auto dataset = sim::generate(c.simulation, load_source_images(c));
  dataset.splits = assign_splits(dataset, c.splits, derive_seed(c.seed, "split"));
  prepare_output_dir(out, force);
  write_dataset(dataset, out);
  write_manifest(out, "simulate", to_json(c));
  return dataset;
}

TrainSummary cmd_train(const ExperimentConfig& c, const fs::path& dataset_path, const fs::path& out, bool force) {
  const auto dataset = read_dataset(dataset_path);
  const auto splits = splits_for(c, dataset);
  prepare_output_dir(out, force);
  const auto seed = run_seed(c, 0);
  const auto ckpt_path = out / "model.ckpt";
  std::ofstream log(out / "train.ndjson");
  train::TrainHooks hooks;
  hooks.log = &log;
  const json extra = {{"splits", splits_to_json(splits)}, {"seed", seed}};
  hooks.on_divergence = [&](const model::SeqRiskModel& m) {
    ckpt::write_checkpoint(ckpt_path, m, static_cast<std::int64_t>(dataset.feature_count()), dataset.covariate_schema,
                           extra);
  };

  const auto data = model::make_tensors(dataset, c.model, c.training.dtype());
  const auto sets = train::training_sets(dataset, splits);
  model::SeqRiskModel m(c.model, data.feature_dim(), dataset.covariate_schema, seed, c.training.dtype());
  m.select_inducing(data, sets.train, derive_seed(seed, "inducing"));
  const auto result = train::train(m, data, sets, c.training, seed, hooks);

  TrainSummary s;
  s.validation_c_index = result.best_validation_c_index;
  s.test_c_index = train::evaluate_c_index(m, data, split_indices(dataset, splits, Split::test));
  s.best_epoch = result.best_epoch;
  ckpt::write_checkpoint(ckpt_path, m, data.feature_dim(), dataset.covariate_schema, extra);
  log << json{{"event", "finished"},
              {"best_epoch", s.best_epoch},
              {"validation_c_index", s.validation_c_index},
              {"test_c_index", s.test_c_index}}
             .dump()
      << '\n';
  log.close();
  write_text(out / "summary.json", json{{"variant", risk::to_string(c.model.risk.variant)},
                                        {"best_epoch", s.best_epoch},
                                        {"epochs_run", result.epochs_run},
                                        {"validation_c_index", s.validation_c_index},
                                        {"test_c_index", s.test_c_index}}
                                           .dump(2) +
                                       "\n");
  write_manifest(out, "train", to_json(c));
  return s;
}

train::CvReport cmd_cross_validate(const ExperimentConfig& c, const fs::path& dataset_path, const fs::path& out,
                                   bool force, int jobs) {
  const auto dataset = read_dataset(dataset_path);
  prepare_output_dir(out, force);
  const auto report = train::cross_validate(dataset, c.model, c.training, c.splits, c.seed, jobs);
  write_text(out / "cv_report.json", report.to_json().dump(2) + "\n");
  write_text(out / "cv_report.tsv", report.to_tsv());
  write_manifest(out, "cross-validate", to_json(c));
  return report;
}

std::vector<SplitEvaluation> cmd_evaluate(const fs::path& checkpoint, const fs::path& dataset_path) {
  const auto dataset = read_dataset(dataset_path);
  auto m = ckpt::load_model(checkpoint);
  const auto header = ckpt::read_header(checkpoint);
  const auto identity =
      ckpt::model_identity(*m, static_cast<std::int64_t>(dataset.feature_count()), dataset.covariate_schema);
  if (identity != header.config) throw ConfigError("dataset does not match the checkpoint's feature layout");

  SplitMap splits = dataset.splits;
  if (header.extra.contains("splits")) {
    splits.clear();
    for (const auto& [id, s] : header.extra.at("splits").items()) splits[id] = split_from_string(s.get<std::string>());
  }
  validate_splits(dataset, splits);
  const auto data = model::make_tensors(dataset, m->config(), m->store().dtype());
  std::vector<SplitEvaluation> rows;
  for (auto which : {Split::train, Split::validation, Split::test}) {
    const auto idx = split_indices(dataset, splits, which);
    if (idx.empty()) continue;
    const auto scores = m->score(data, idx);
    const Eigen::Map<const Eigen::VectorXd> r(scores.data(), static_cast<Eigen::Index>(scores.size()));
    rows.push_back({to_string(which), eval::c_index(r, labels_of(dataset, idx))});
  }
  return rows;
}

std::string format_evaluation(const std::vector<SplitEvaluation>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(12) << "split" << std::setw(10) << "c_index" << std::setw(12) << "concordant"
      << std::setw(12) << "discordant" << std::setw(8) << "tied" << "comparable\n";
  for (const auto& r : rows) {
    out << std::setw(12) << r.split << std::setw(10) << std::fixed << std::setprecision(4) << r.result.value
        << std::setw(12) << r.result.concordant << std::setw(12) << r.result.discordant << std::setw(8)
        << r.result.tied_score << r.result.comparable << '\n';
  }
  return out.str();
}

void cmd_embed(const fs::path& checkpoint, const fs::path& dataset_path, const fs::path& out,
               eval::Projection projection, bool force) {
  const auto dataset = read_dataset(dataset_path);
  auto m = ckpt::load_model(checkpoint);
  if (fs::exists(out) && !force) throw IoError(out.string() + " exists; pass --force to overwrite");
  const auto data = model::make_tensors(dataset, m->config(), m->store().dtype());
  std::vector<std::size_t> all(dataset.records.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto z = m->last_latent_means(data, all).contiguous();
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> lat(
      z.data_ptr<double>(), z.size(0), z.size(1));
  const Eigen::MatrixXd xy = eval::project_2d(lat, projection);

  std::ostringstream text;
  text << "patient_id\tx\ty\tlog_time\tevent\ttime_floored\n" << std::setprecision(9);
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& rec = dataset.records[i];
    const bool floored = rec.event_time < eval::kLogTimeFloor;
    const double lt = std::log(std::max(rec.event_time, eval::kLogTimeFloor));
    const auto r = static_cast<Eigen::Index>(i);
    text << rec.patient_id << '\t' << xy(r, 0) << '\t' << xy(r, 1) << '\t' << lt << '\t' << (rec.event ? 1 : 0)
         << '\t' << (floored ? 1 : 0) << '\n';
  }
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  write_text(out, text.str());
}

eval::ReportTable cmd_reproduce_mnist(const ExperimentConfig& c, const fs::path& out, bool force, int jobs) {
  c.validate();
  prepare_output_dir(out, force);
  const auto images = load_source_images(c);
  const auto rows = benchmark_rows(c.reproduce);
  std::vector<std::string> cols;
  for (double level : c.reproduce.masking_levels) cols.push_back(masking_label(level));
  eval::ReportTable table(rows, cols);
  std::ostringstream runs_tsv;
  runs_tsv << "masking\tmodel\tseed\ttest_c_index\tvalidation_c_index\tbest_epoch\tepochs_run\n"
           << std::setprecision(17);
  std::mutex progress;

  for (std::size_t li = 0; li < c.reproduce.masking_levels.size(); ++li) {
    auto sc = c.simulation;
    sc.mask_fraction = c.reproduce.masking_levels[li];
    sc.seed = derive_seed(c.seed, "simulate", {li});
    const auto dataset = sim::generate(sc, images);
    const auto n_seeds = c.training.seeds.size();
    std::vector<SplitMap> splits;
    for (std::size_t k = 0; k < n_seeds; ++k) {
      splits.push_back(assign_splits(dataset, c.splits, derive_seed(run_seed(c, k), "split")));
    }
    const fs::path level_dir = out / "runs" / cols[li];
    fs::create_directories(level_dir);

    struct Outcome {
      double test = 0.0, validation = 0.0;
      int best_epoch = -1, epochs = 0;
    };
    std::vector<Outcome> outcomes(rows.size() * n_seeds);
    const auto n_cox = c.reproduce.cox_imputation.size();
    train::parallel_for(outcomes.size(), jobs, [&](std::size_t task) {
      const auto row = task / n_seeds;
      const auto k = task % n_seeds;
      Outcome o;
      if (row < n_cox) {
        const auto method = c.reproduce.cox_imputation[row] == "mean" ? cox::ImputeMethod::mean : cox::ImputeMethod::knn;
        o.test = cox_baseline_c_index(dataset, splits[k], method, c.reproduce.knn_k);
      } else {
        auto mc = c.model;
        mc.risk.variant = c.reproduce.variants[row - n_cox];
        std::ofstream log(level_dir / (risk::to_string(mc.risk.variant) + "_seed" + std::to_string(k) + ".ndjson"));
        train::TrainHooks hooks;
        hooks.log = &log;
        const auto run = run_variant(dataset, splits[k], mc, c.training, run_seed(c, k), hooks);
        o = {run.test_c_index, run.validation_c_index, run.training.best_epoch, run.training.epochs_run};
      }
      outcomes[task] = o;
      std::lock_guard lock(progress);
      std::clog << "[reproduce] masking " << cols[li] << "  " << rows[row] << "  seed " << c.training.seeds[k]
                << "  test C-index " << std::fixed << std::setprecision(4) << o.test << std::defaultfloat << '\n';
    });
    for (std::size_t task = 0; task < outcomes.size(); ++task) {
      const auto& o = outcomes[task];
      const auto& row = rows[task / n_seeds];
      table.add(row, cols[li], o.test);
      runs_tsv << cols[li] << '\t' << row << '\t' << c.training.seeds[task % n_seeds] << '\t' << o.test << '\t'
               << o.validation << '\t' << o.best_epoch << '\t' << o.epochs << '\n';
    }
  }
  write_text(out / "results.txt", table.to_text());
  write_text(out / "results.tsv", table.to_tsv());
  write_text(out / "runs.tsv", runs_tsv.str());
  write_manifest(out, "reproduce-mnist", to_json(c));
  return table;
}

}  // namespace seqrisk::exp
