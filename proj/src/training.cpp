#include "seqrisk/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include <torch/csrc/autograd/custom_function.h>

#include "seqrisk/evaluation.hpp"
#include "seqrisk/seeding.hpp"

namespace seqrisk::train {

void TrainConfig::validate() const {
  auto in_unit = [](double a) { return a >= 0.0 && a <= 1.0; };
  if (!in_unit(alpha)) throw ConfigError("training.alpha must lie in [0, 1]");
  if (alpha_grid.empty() || latent_dim_grid.empty()) throw ConfigError("training: grids must be non-empty");
  for (double a : alpha_grid) if (!in_unit(a)) throw ConfigError("training.alpha_grid values must lie in [0, 1]");
  for (int l : latent_dim_grid) if (l < 1) throw ConfigError("training.latent_dim_grid values must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("training.learning_rate must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("training.clip_norm must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("training.weight_decay must be >= 0");
  if (batch_patients < 2) throw ConfigError("training.batch_patients must be >= 2");
  if (max_epochs < 1) throw ConfigError("training.max_epochs must be >= 1");
  if (patience < 1) throw ConfigError("training.patience must be >= 1");
  if (max_steps < 0) throw ConfigError("training.max_steps must be >= 0");
  if (kl_warmup_steps < 0) throw ConfigError("training.kl_warmup_steps must be >= 0");
  if (seeds.empty()) throw ConfigError("training.seeds must be non-empty");
  if (cv_folds < 0 || cv_folds == 1) throw ConfigError("training.cv_folds must be 0 or >= 2");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"alpha", c.alpha},
          {"alpha_grid", c.alpha_grid},
          {"latent_dim_grid", c.latent_dim_grid},
          {"learning_rate", c.learning_rate},
          {"clip_norm", c.clip_norm},
          {"weight_decay", c.weight_decay},
          {"batch_patients", c.batch_patients},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"max_steps", c.max_steps},
          {"kl_warmup_steps", c.kl_warmup_steps},
          {"seeds", c.seeds},
          {"cv_folds", c.cv_folds},
          {"double_precision", c.double_precision},
          {"elbo_scale", c.elbo_scale == ElboScale::sample ? "sample" : "observed_entry"}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("training: expected an object");
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "alpha") c.alpha = v.get<double>();
    else if (key == "alpha_grid") c.alpha_grid = v.get<std::vector<double>>();
    else if (key == "latent_dim_grid") c.latent_dim_grid = v.get<std::vector<int>>();
    else if (key == "learning_rate") c.learning_rate = v.get<double>();
    else if (key == "clip_norm") c.clip_norm = v.get<double>();
    else if (key == "weight_decay") c.weight_decay = v.get<double>();
    else if (key == "batch_patients") c.batch_patients = v.get<int>();
    else if (key == "max_epochs") c.max_epochs = v.get<int>();
    else if (key == "patience") c.patience = v.get<int>();
    else if (key == "max_steps") c.max_steps = v.get<int>();
    else if (key == "kl_warmup_steps") c.kl_warmup_steps = v.get<int>();
    else if (key == "seeds") c.seeds = v.get<std::vector<std::uint64_t>>();
    else if (key == "cv_folds") c.cv_folds = v.get<int>();
    else if (key == "double_precision") c.double_precision = v.get<bool>();
    else if (key == "elbo_scale") {
      const auto name = v.get<std::string>();
      if (name == "observed_entry") c.elbo_scale = ElboScale::observed_entry;
      else if (name == "sample") c.elbo_scale = ElboScale::sample;
      else throw ConfigError("training.elbo_scale must be 'observed_entry' or 'sample'");
    }
    else throw ConfigError("training: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

namespace {

using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

class CoxLossFunction : public torch::autograd::Function<CoxLossFunction> {
 public:
  static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& scores, const cox::SurvivalLabelSet& labels) {
    const auto s = scores.detach().to(torch::kFloat64).contiguous();
    const Eigen::Map<const Eigen::VectorXd> eta(s.data_ptr<double>(), s.numel());
    Eigen::VectorXd grad;
    const double ll = cox::partial_log_likelihood(eta, labels, &grad);
    const auto n_events = static_cast<double>(labels.event_count());
    auto g = torch::from_blob(grad.data(), {grad.size()}, torch::kFloat64).clone() * (-1.0 / n_events);
    ctx->saved_data["grad"] = g;
    ctx->saved_data["dtype"] = static_cast<std::int64_t>(scores.scalar_type());
    return torch::tensor(-ll / n_events, torch::kFloat64);
  }

  static variable_list backward(AutogradContext* ctx, variable_list grad_out) {
    const auto g = ctx->saved_data["grad"].toTensor();
    const auto dtype = static_cast<at::ScalarType>(ctx->saved_data["dtype"].toInt());
    return {(g * grad_out[0]).to(dtype), torch::Tensor()};
  }
};

double value_of(const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; }

}  // namespace

torch::Tensor cox_loss(const torch::Tensor& scores, const cox::SurvivalLabelSet& labels) {
  if (scores.dim() != 1 || scores.size(0) != labels.size()) {
    throw SchemaError("cox_loss: expected one score per label");
  }
  return CoxLossFunction::apply(scores, labels);
}

bool has_training_event(const model::PatientBatch& batch) {
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch.in_train[i] && batch.events[i]) return true;
  }
  return false;
}

LossBreakdown composite_loss(const model::SeqRiskModel& m, const model::PatientBatch& batch, double alpha,
                             at::Generator& gen, ElboScale scale, double kl_weight) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("composite_loss: alpha must lie in [0, 1]");
  if (!(kl_weight >= 0.0 && kl_weight <= 1.0)) throw ConfigError("composite_loss: kl_weight must lie in [0, 1]");
  const bool events = has_training_event(batch);
  if (alpha > 0.0 && !events) {
    throw NumericalError("composite_loss: no training patient in the batch has an event");
  }
  const auto out = m.forward(batch, gen);
  LossBreakdown b;
  b.alpha = alpha;
  b.samples = batch.sample_count();
  b.observed = static_cast<std::int64_t>(batch.mask.sum().item<double>());

  auto survival = torch::zeros({}, torch::kFloat64);
  if (events) {
    std::vector<std::int64_t> rows;
    std::vector<double> times;
    std::vector<bool> ev;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (!batch.in_train[i]) continue;
      rows.push_back(static_cast<std::int64_t>(i));
      times.push_back(batch.times[i]);
      ev.push_back(batch.events[i]);
    }
    const cox::SurvivalLabelSet labels(times, ev);
    b.events = labels.event_count();
    survival = cox_loss(out.risk.index_select(0, torch::tensor(rows, torch::kInt64)), labels);
  }
  auto elbo = torch::zeros({}, torch::kFloat64);
  auto objective = elbo;
  if (out.elbo.defined()) {
    const double n = static_cast<double>(scale == ElboScale::sample ? b.samples : std::max<std::int64_t>(b.observed, 1));
    elbo = out.elbo.to(torch::kFloat64) / n;
    objective = kl_weight == 1.0 ? elbo
                                 : (out.recon.to(torch::kFloat64) - kl_weight * out.kl.to(torch::kFloat64)) / n;
    b.recon = out.recon.item<double>() / n;
    b.kl = out.kl.item<double>() / n;
  }
  b.total = alpha * survival - (1.0 - alpha) * objective;
  b.survival = survival.item<double>();
  b.elbo = elbo.item<double>();
  if (!std::isfinite(b.total.item<double>())) {
    std::ostringstream msg;
    msg << "composite_loss: non-finite loss (survival " << b.survival << ", elbo " << b.elbo << ", recon "
        << value_of(out.recon) << ", kl " << value_of(out.kl) << ")";
    throw NumericalError(msg.str());
  }
  return b;
}

nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},     {"steps", r.steps},
          {"total", r.total},     {"survival", r.survival},
          {"elbo", r.elbo},       {"recon", r.recon},
          {"kl", r.kl},           {"validation_c_index", r.validation_c_index},
          {"improved", r.improved}, {"wall_seconds", r.wall_seconds}};
}

TrainingSets training_sets(const SurvivalDataset& dataset, const SplitMap& splits) {
  TrainingSets s;
  s.train = split_indices(dataset, splits, Split::train);
  s.validation = split_indices(dataset, splits, Split::validation);
  for (std::size_t i = 0; i < dataset.records.size(); ++i) s.all.push_back(i);
  return s;
}

double evaluate_c_index(const model::SeqRiskModel& m, const model::DatasetTensors& data,
                        const std::vector<std::size_t>& patients) {
  const auto scores = m.score(data, patients);
  std::vector<double> times;
  std::vector<bool> events;
  for (auto p : patients) {
    times.push_back(data.times[p]);
    events.push_back(data.events[p]);
  }
  const Eigen::Map<const Eigen::VectorXd> r(scores.data(), static_cast<Eigen::Index>(scores.size()));
  return eval::c_index(r, cox::SurvivalLabelSet(times, events)).value;
}

namespace {

/// Patient batches for one epoch: a shuffled partition of `all`, a size-1
/// tail merged into the previous batch, eventless batches redrawn at random.
std::vector<std::vector<std::size_t>> epoch_batches(const model::DatasetTensors& data, const TrainingSets& sets,
                                                    const std::vector<bool>& in_train, int batch_size, bool need_event,
                                                    std::mt19937_64& rng) {
  auto order = sets.all;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> b(order.begin() + static_cast<std::ptrdiff_t>(start),
                               order.begin() + static_cast<std::ptrdiff_t>(end));
    if (b.size() == 1 && !batches.empty()) batches.back().push_back(b[0]);
    else batches.push_back(std::move(b));
  }
  auto has_event = [&](const std::vector<std::size_t>& b) {
    return std::any_of(b.begin(), b.end(), [&](std::size_t p) { return in_train[p] && data.events[p]; });
  };
  for (auto& b : batches) {
    if (!need_event) break;
    for (int attempt = 0; !has_event(b); ++attempt) {
      if (attempt == 1000) throw NumericalError("training: could not draw a batch with a training event");
      std::vector<std::size_t> pool = sets.all;
      std::shuffle(pool.begin(), pool.end(), rng);
      pool.resize(b.size());
      b = std::move(pool);
    }
  }
  return batches;
}

}  // namespace

TrainResult train(model::SeqRiskModel& m, const model::DatasetTensors& data, const TrainingSets& sets,
                  const TrainConfig& config, std::uint64_t seed, const TrainHooks& hooks) {
  config.validate();
  if (config.alpha > 0.0) {
    const bool any = std::any_of(sets.train.begin(), sets.train.end(), [&](std::size_t p) { return data.events[p]; });
    if (!any) throw NumericalError("training: the training split has no events");
  }
  std::vector<bool> in_train(data.patient_count(), false);
  for (auto p : sets.train) in_train[p] = true;

  auto params = m.store().tensors();
  torch::optim::Adam optimizer(params,
                               torch::optim::AdamOptions(config.learning_rate).weight_decay(config.weight_decay));
  auto gen = nn::make_generator(derive_seed(seed, "latent-draws"));
  auto rng = make_rng(derive_seed(seed, "batches"));

  TrainResult result;
  auto best = m.store().snapshot();
  int since_best = 0;
  const bool early_stopping = !sets.validation.empty();
  const auto start = std::chrono::steady_clock::now();
  bool done = false;

  for (int epoch = 0; epoch < config.max_epochs && !done; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    for (const auto& patients : epoch_batches(data, sets, in_train, config.batch_patients, config.alpha > 0.0, rng)) {
      const auto batch = model::make_batch(data, patients, in_train);
      LossBreakdown loss;
      try {
        const double kl_weight =
            config.kl_warmup_steps > 0 ? std::min(1.0, (result.steps + 1.0) / config.kl_warmup_steps) : 1.0;
        loss = composite_loss(m, batch, config.alpha, gen, config.elbo_scale, kl_weight);
      } catch (const NumericalError& e) {
        m.store().restore(best);
        if (hooks.on_divergence) hooks.on_divergence(m);
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(result.steps) + ": " + e.what() +
                               "; last good parameters restored");
      }
      optimizer.zero_grad();
      loss.total.backward();
      torch::nn::utils::clip_grad_norm_(params, config.clip_norm);
      optimizer.step();

      ++result.steps;
      ++rec.steps;
      rec.total += loss.total.item<double>();
      rec.survival += loss.survival;
      rec.elbo += loss.elbo;
      rec.recon += loss.recon;
      rec.kl += loss.kl;
      if (hooks.on_step) {
        hooks.on_step({epoch, result.steps, loss.total.item<double>(), loss.survival, loss.elbo, loss.recon, loss.kl});
      }
      if (config.max_steps > 0 && result.steps >= config.max_steps) {
        done = true;
        break;
      }
    }
    if (rec.steps > 0) {
      const double k = rec.steps;
      rec.total /= k;
      rec.survival /= k;
      rec.elbo /= k;
      rec.recon /= k;
      rec.kl /= k;
    }
    if (early_stopping) {
      rec.validation_c_index = evaluate_c_index(m, data, sets.validation);
      if (result.best_epoch < 0 || rec.validation_c_index > result.best_validation_c_index) {
        result.best_epoch = epoch;
        result.best_validation_c_index = rec.validation_c_index;
        best = m.store().snapshot();
        rec.improved = true;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        done = true;
      }
    } else {
      result.best_epoch = epoch;
      best = m.store().snapshot();
      rec.improved = true;
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (hooks.log) *hooks.log << to_json(rec).dump() << '\n' << std::flush;
    result.epochs.push_back(rec);
    result.epochs_run = epoch + 1;
  }
  m.store().restore(best);
  return result;
}

nlohmann::json CvReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : entries) {
    rows.push_back({{"alpha", e.alpha}, {"latent_dim", e.latent_dim}, {"validation_c_index", e.validation_c_index},
                    {"mean", e.mean}});
  }
  nlohmann::json out = {{"entries", rows}};
  if (!entries.empty()) {
    out["winner"] = {{"alpha", entries[winner].alpha}, {"latent_dim", entries[winner].latent_dim},
                     {"mean", entries[winner].mean}};
  }
  return out;
}

std::string CvReport::to_tsv() const {
  std::ostringstream out;
  out.precision(17);
  out << "alpha\tlatent_dim\tmean\tvalues\n";
  for (const auto& e : entries) {
    out << e.alpha << '\t' << e.latent_dim << '\t' << e.mean << '\t';
    for (std::size_t i = 0; i < e.validation_c_index.size(); ++i) out << (i ? "," : "") << e.validation_c_index[i];
    out << '\n';
  }
  return out.str();
}

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  const auto workers = std::max<std::size_t>(1, std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, jobs))));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr error;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard lock(mu);
          if (error || next >= count) return;
          i = next++;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

CvReport cross_validate(const SurvivalDataset& dataset, const model::ModelConfig& base, const TrainConfig& config,
                        SplitFractions fractions, std::uint64_t seed, int jobs) {
  config.validate();
  struct Run {
    SplitMap splits;
    std::uint64_t seed;
  };
  std::vector<Run> runs;
  for (std::size_t s = 0; s < config.seeds.size(); ++s) {
    const auto run_seed = derive_seed(seed, {config.seeds[s]});
    if (config.cv_folds > 1) {
      for (auto& split : kfold_splits(dataset, config.cv_folds, derive_seed(run_seed, "folds"))) {
        runs.push_back({std::move(split), run_seed});
      }
    } else {
      runs.push_back({assign_splits(dataset, fractions, derive_seed(run_seed, "split")), run_seed});
    }
  }

  CvReport report;
  for (int l : config.latent_dim_grid) {
    for (double a : config.alpha_grid) {
      CvEntry e;
      e.alpha = a;
      e.latent_dim = l;
      e.validation_c_index.assign(runs.size(), 0.0);
      report.entries.push_back(e);
    }
  }
  const auto tasks = report.entries.size() * runs.size();
  parallel_for(tasks, jobs, [&](std::size_t task) {
    auto& entry = report.entries[task / runs.size()];
    const auto& run = runs[task % runs.size()];
    auto mc = base;
    mc.vae.latent_dim = entry.latent_dim;
    auto tc = config;
    tc.alpha = entry.alpha;
    const auto data = model::make_tensors(dataset, mc, tc.dtype());
    const auto sets = training_sets(dataset, run.splits);
    model::SeqRiskModel m(mc, data.feature_dim(), dataset.covariate_schema, run.seed, tc.dtype());
    m.select_inducing(data, sets.train, derive_seed(run.seed, "inducing"));
    entry.validation_c_index[task % runs.size()] = train(m, data, sets, tc, run.seed).best_validation_c_index;
  });
  for (std::size_t i = 0; i < report.entries.size(); ++i) {
    auto& e = report.entries[i];
    e.mean = eval::summarize(e.validation_c_index).mean;
    if (e.mean > report.entries[report.winner].mean) report.winner = i;
  }
  return report;
}

}  // namespace seqrisk::train
