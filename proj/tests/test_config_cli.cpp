#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "seqrisk/config.hpp"
#include "seqrisk/error.hpp"

using namespace seqrisk;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

fs::path work_dir() {
  const auto dir = fs::temp_directory_path() / "seqrisk_test_cli";
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Run cli(const std::string& args) {
  const auto out = work_dir() / "stdout.txt";
  const auto err = work_dir() / "stderr.txt";
  const std::string cmd = std::string("\"") + SEQRISK_CLI + "\" " + args + " > \"" + out.string() + "\" 2> \"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

fs::path write_config(const std::string& name, const json& j) {
  const auto p = work_dir() / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

json tiny_config() {
  return {{"simulation", {{"n_subjects", 12}}},
          {"training", {{"max_epochs", 1}, {"batch_patients", 6}, {"seeds", {0}}}}};
}

}  // namespace

TEST_CASE("unknown keys are rejected at every level") {
  CHECK_NOTHROW(experiment_config_from_json(json::object()));
  for (const auto& bad : {json{{"sed", 1}}, json{{"training", {{"epochs", 3}}}}, json{{"vae", {{"latent", 3}}}},
                          json{{"gp", {{"inducing", 3}}}}, json{{"risk_head", {{"heads", 2}}}},
                          json{{"simulation", {{"subjects", 2}}}}, json{{"splits", {{"training", 0.5}}}},
                          json{{"reproduce", {{"levels", {0.7}}}}}}) {
    CAPTURE(bad.dump());
    CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
  }
  CHECK_THROWS_AS(experiment_config_from_json({{"seed", "seven"}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json({{"splits", {{"train", 0.9}}}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json({{"reproduce", {{"masking_levels", {1.0}}}}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(json::array()), ConfigError);
}

TEST_CASE("config JSON round trip") {
  const auto c = experiment_config_from_json(json::object());
  CHECK(to_json(experiment_config_from_json(to_json(c))) == to_json(c));
  CHECK(c.reproduce.masking_levels == std::vector<double>{0.70, 0.80, 0.90, 0.95, 0.99});
}

TEST_CASE("shipped configs parse") {
  int count = 0;
  for (const auto& entry : fs::directory_iterator(fs::path(SEQRISK_SOURCE_DIR) / "configs")) {
    if (entry.path().extension() != ".json") continue;
    CAPTURE(entry.path().string());
    CHECK_NOTHROW(load_experiment_config(entry.path()));
    ++count;
  }
  CHECK(count >= 3);
}

TEST_CASE("cli: simulate, train, evaluate, embed with structured errors") {
  fs::remove_all(work_dir());
  fs::create_directories(work_dir());
  const auto cfg = write_config("tiny.json", tiny_config());
  const auto ds = work_dir() / "ds";

  auto r = cli("simulate --config " + cfg.string() + " --out " + ds.string());
  REQUIRE(r.code == 0);
  const auto manifest = json::parse(slurp(ds / "run_manifest.json"));
  CHECK(manifest.at("command") == "simulate");
  CHECK(manifest.at("config").at("simulation").at("n_subjects") == 12);
  CHECK(!manifest.at("files").empty());
  for (const auto& f : manifest.at("files")) {
    CHECK(fs::file_size(ds / f.at("path").get<std::string>()) == f.at("bytes").get<std::uintmax_t>());
  }
  const auto records = slurp(ds / "records.ndjson");

  r = cli("simulate --config " + cfg.string() + " --out " + ds.string());
  CHECK(r.code == 3);
  CHECK(json::parse(r.err).at("error") == "io");
  CHECK(slurp(ds / "records.ndjson") == records);

  r = cli("simulate --config " + cfg.string() + " --out " + ds.string() + " --force");
  CHECK(r.code == 0);
  CHECK(slurp(ds / "records.ndjson") == records);

  const auto other = work_dir() / "ds_seed5";
  CHECK(cli("simulate --config " + cfg.string() + " --seed 5 --out " + other.string()).code == 0);
  CHECK(slurp(other / "records.ndjson") != records);

  auto bad = tiny_config();
  bad["training"]["epochs"] = 2;
  r = cli("simulate --config " + write_config("bad.json", bad).string() + " --out " + (work_dir() / "x").string());
  CHECK(r.code == 2);
  const auto err = json::parse(r.err);
  CHECK(err.at("error") == "config");
  CHECK(err.at("message").get<std::string>().find("epochs") != std::string::npos);
  CHECK_FALSE(fs::exists(work_dir() / "x"));

  r = cli("simulate --out");
  CHECK(r.code == 64);
  CHECK(json::parse(r.err).at("error") == "usage");
  CHECK(cli("").code != 0);

  const auto run = work_dir() / "run";
  r = cli("train --config " + cfg.string() + " --dataset " + ds.string() + " --out " + run.string());
  REQUIRE(r.code == 0);
  CHECK(fs::exists(run / "model.ckpt"));
  CHECK(json::parse(slurp(run / "run_manifest.json")).at("command") == "train");
  std::istringstream log(slurp(run / "train.ndjson"));
  std::string line, last;
  while (std::getline(log, line)) last = line;
  CHECK(json::parse(last).at("event") == "finished");

  r = cli("evaluate --checkpoint " + (run / "model.ckpt").string() + " --dataset " + ds.string());
  CHECK(r.code == 0);
  for (const char* split : {"train", "validation", "test"}) CHECK(r.out.find(split) != std::string::npos);

  const auto points = work_dir() / "points.tsv";
  r = cli("embed --checkpoint " + (run / "model.ckpt").string() + " --dataset " + ds.string() + " --out " +
          points.string());
  CHECK(r.code == 0);
  CHECK(slurp(points).rfind("patient_id\tx\ty\tlog_time\tevent\ttime_floored\n", 0) == 0);

  r = cli("evaluate --checkpoint " + (ds / "records.ndjson").string() + " --dataset " + ds.string());
  CHECK(r.code == 3);
  CHECK(json::parse(r.err).at("error") == "io");

  auto tonly = tiny_config();
  tonly["risk_head"] = {{"variant", "transformer_only"}};
  const auto run2 = work_dir() / "run_tonly";
  CHECK(cli("train --config " + write_config("tonly.json", tonly).string() + " --dataset " + ds.string() + " --out " +
            run2.string())
            .code == 0);
  r = cli("embed --checkpoint " + (run2 / "model.ckpt").string() + " --dataset " + ds.string() + " --out " +
          (work_dir() / "p2.tsv").string());
  CHECK(r.code == 2);
  CHECK(json::parse(r.err).at("error") == "config");
}
