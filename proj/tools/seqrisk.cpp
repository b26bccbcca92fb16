#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "seqrisk/config.hpp"
#include "seqrisk/error.hpp"
#include "seqrisk/experiment.hpp"

namespace {

using namespace seqrisk;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  int jobs = 1;
  std::string dataset;
  std::string checkpoint;
  std::string projection = "pca-2";
  std::vector<double> masking;
};

ExperimentConfig load(const Options& o) {
  ExperimentConfig c = o.config.empty() ? experiment_config_from_json(nlohmann::json::object())
                                        : load_experiment_config(o.config);
  if (o.seed) {
    c.seed = *o.seed;
    c.simulation.seed = *o.seed;
  }
  if (!o.masking.empty()) c.reproduce.masking_levels = o.masking;
  c.validate();
  return c;
}

int report_error(const char* kind, const std::exception& e, int code) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", e.what()}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  at::set_num_threads(1);
  CLI::App app{"SeqRisk: survival analysis on irregular longitudinal data"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* cmd, bool needs_out) {
    cmd->add_option("--config", o.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "Top-level seed; overrides the config");
    auto* out = cmd->add_option("--out", o.out, "Output path");
    if (needs_out) out->required();
    cmd->add_flag("--force", o.force, "Overwrite existing outputs");
    cmd->add_option("--jobs", o.jobs, "Parallel jobs")->check(CLI::PositiveNumber);
  };

  auto* simulate = app.add_subcommand("simulate", "Generate a Survival MNIST dataset archive");
  add_common(simulate, true);

  auto* train = app.add_subcommand("train", "Train one model; writes model.ckpt, train.ndjson, summary.json");
  add_common(train, true);
  train->add_option("--dataset", o.dataset, "Dataset archive directory")->required()->check(CLI::ExistingDirectory);

  auto* cv = app.add_subcommand("cross-validate", "Grid search over alpha and latent dimension");
  add_common(cv, true);
  cv->add_option("--dataset", o.dataset, "Dataset archive directory")->required()->check(CLI::ExistingDirectory);

  auto* evaluate = app.add_subcommand("evaluate", "C-index of a checkpoint on every split");
  add_common(evaluate, false);
  evaluate->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--dataset", o.dataset, "Dataset archive directory")->required()->check(CLI::ExistingDirectory);

  auto* embed = app.add_subcommand("embed", "Export a 2-D latent point table");
  add_common(embed, true);
  embed->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  embed->add_option("--dataset", o.dataset, "Dataset archive directory")->required()->check(CLI::ExistingDirectory);
  embed->add_option("--projection", o.projection, "first-2-dims or pca-2");

  auto* reproduce = app.add_subcommand("reproduce-mnist", "C-index versus missingness sweep on Survival MNIST");
  add_common(reproduce, true);
  reproduce->add_option("--masking", o.masking, "Masking levels; overrides the config")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e, 64);
  }

  try {
    if (*simulate) {
      const auto c = load(o);
      const auto ds = exp::cmd_simulate(c, o.out, o.force);
      std::cout << "wrote " << ds.records.size() << " subjects to " << o.out << '\n';
    } else if (*train) {
      const auto s = exp::cmd_train(load(o), o.dataset, o.out, o.force);
      std::cout << "best epoch " << s.best_epoch << "  validation C-index " << s.validation_c_index
                << "  test C-index " << s.test_c_index << '\n';
    } else if (*cv) {
      const auto r = exp::cmd_cross_validate(load(o), o.dataset, o.out, o.force, o.jobs);
      std::cout << r.to_tsv();
      std::cout << "winner: alpha " << r.entries[r.winner].alpha << ", latent_dim " << r.entries[r.winner].latent_dim
                << '\n';
    } else if (*evaluate) {
      const auto text = exp::format_evaluation(exp::cmd_evaluate(o.checkpoint, o.dataset));
      std::cout << text;
      if (!o.out.empty()) {
        if (std::filesystem::exists(o.out) && !o.force) throw IoError(o.out + " exists; pass --force to overwrite");
        std::ofstream(o.out) << text;
      }
    } else if (*embed) {
      exp::cmd_embed(o.checkpoint, o.dataset, o.out, eval::projection_from_string(o.projection), o.force);
      std::cout << "wrote " << o.out << '\n';
    } else if (*reproduce) {
      std::cout << exp::cmd_reproduce_mnist(load(o), o.out, o.force, o.jobs).to_text();
    }
  } catch (const ConfigError& e) {
    return report_error("config", e, 2);
  } catch (const IoError& e) {
    return report_error("io", e, 3);
  } catch (const SchemaError& e) {
    return report_error("schema", e, 4);
  } catch (const NumericalError& e) {
    return report_error("numerical", e, 5);
  } catch (const std::exception& e) {
    return report_error("internal", e, 1);
  }
  return 0;
}
