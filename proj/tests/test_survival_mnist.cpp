#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "seqrisk/error.hpp"
#include "seqrisk/evaluation.hpp"
#include "seqrisk/survival_mnist.hpp"

using namespace seqrisk;
using namespace seqrisk::sim;
namespace fs = std::filesystem;

namespace {

const std::vector<Image>& digits() {
  static const auto images = load_idx_images(fs::path(SEQRISK_DATA_DIR) / "mnist_digit3.idx3-ubyte");
  return images;
}

Image ramp(int rows, int cols) {
  Image img{rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols)};
  for (int i = 0; i < rows * cols; ++i) img.pixels[i] = (i * 37) % 256;
  return img;
}

SimConfig quiet_config() {
  SimConfig c;
  c.noise_std = 0.0;
  c.mask_fraction = 0.0;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("bundled digit images load") {
  const auto& imgs = digits();
  REQUIRE(imgs.size() == 500);
  CHECK(imgs[0].rows == 28);
  CHECK(imgs[0].cols == 28);
  double total = 0;
  for (double p : imgs[0].pixels) {
    CHECK(p >= 0);
    CHECK(p <= 255);
    total += p;
  }
  CHECK(total > 0);
}

TEST_CASE("identity rendering reproduces the padded input exactly") {
  const auto img = digits()[0];
  std::mt19937_64 rng(1);
  const auto s = render_observation(img, {0.0}, quiet_config(), 0, rng, "S0", 0);
  const auto padded = pad_to_canvas(img, 36, 36);
  CHECK(s.measurements == padded.pixels);
  CHECK(s.observed_count() == 1296);
  CHECK(s.covariates == std::vector<double>{0.0, 0.0});
}

TEST_CASE("180 degree rendering is the pixel-exact point reflection") {
  const auto img = ramp(28, 28);
  std::mt19937_64 rng(1);
  const auto s = render_observation(img, {1.0}, quiet_config(), 0, rng, "S0", 0);
  const auto padded = pad_to_canvas(img, 36, 36);
  for (int r = 0; r < 36; ++r) {
    for (int c = 0; c < 36; ++c) {
      CHECK(s.measurements[r * 36 + c] == padded.at(35 - r, 35 - c));
    }
  }
}

TEST_CASE("90 degree rotation on an odd canvas is a pixel permutation") {
  const auto img = ramp(5, 5);
  const auto r = rotate(img, 90.0);
  // Inverse map for +90 degrees: output (y, x) reads source (x, 4 - y).
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 5; ++x) CHECK(r.at(y, x) == img.at(x, 4 - y));
  }
}

TEST_CASE("diagonal shift moves content and keeps it on the canvas") {
  const auto img = digits()[3];
  const SimConfig cfg = quiet_config();
  const int bound = max_shift(img, cfg);
  CHECK(bound == 4);
  const auto padded = pad_to_canvas(img, 36, 36);
  double mass = 0;
  for (double p : padded.pixels) mass += p;
  for (int shift : {-bound, -1, 1, bound}) {
    const auto moved = shift_diagonal(padded, shift);
    double moved_mass = 0;
    for (double p : moved.pixels) moved_mass += p;
    CHECK(moved_mass == doctest::Approx(mass).epsilon(1e-12));
    CHECK(moved.at(10 + std::max(shift, 0), 10 + std::max(shift, 0)) ==
          padded.at(10 + std::max(-shift, 0), 10 + std::max(-shift, 0)));
  }
}

TEST_CASE("masking removes an exact pixel count") {
  const auto img = digits()[1];
  std::mt19937_64 rng(2);
  SimConfig cfg;
  for (double f : {0.7, 0.8, 0.9, 0.95, 0.99}) {
    cfg.mask_fraction = f;
    const int expected = static_cast<int>(std::floor(f * 1296 + 1e-9));
    CHECK(cfg.masked_pixel_count() == expected);
    for (int rep = 0; rep < 5; ++rep) {
      const auto s = render_observation(img, {0.3}, cfg, rng, "S0", 0);
      CHECK(1296 - static_cast<int>(s.observed_count()) == expected);
      for (int d = 0; d < 1296; ++d) {
        if (!s.observed_mask[d]) CHECK(s.measurements[d] == kUnobservedSentinel);
        CHECK(s.measurements[d] >= 0.0);
        CHECK(s.measurements[d] <= 255.0);
      }
    }
  }
  cfg.mask_fraction = 0.99;
  CHECK(cfg.masked_pixel_count() == 1283);
  cfg.mask_fraction = 0.95;
  CHECK(1296 - cfg.masked_pixel_count() == 65);
}

TEST_CASE("noise has the configured standard deviation") {
  Image flat{28, 28, std::vector<double>(784, 128.0)};
  SimConfig cfg;
  cfg.mask_fraction = 0;
  cfg.noise_std = 30;
  std::mt19937_64 rng(3);
  const auto s = render_observation(flat, {0.0}, cfg, 0, rng, "S0", 0);
  // Central 28x28 block sits at 128 before noise; clamping at 0/255 is >4 sd away.
  double sum = 0, sq = 0;
  int n = 0;
  for (int r = 4; r < 32; ++r) {
    for (int c = 4; c < 32; ++c) {
      const double v = s.measurements[r * 36 + c] - 128.0;
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(mean) < 4 * 30 / std::sqrt(n));
  CHECK(sd == doctest::Approx(30).epsilon(0.08));
}

TEST_CASE("generated cohort obeys the simulation rules") {
  SimConfig cfg;
  cfg.n_subjects = 1000;
  cfg.seed = 20240601;
  cfg.mask_fraction = 0.9;
  const auto ds = generate(cfg, digits());
  validate(ds);
  REQUIRE(ds.records.size() == 1000);
  CHECK(ds.feature_count() == 1296);
  CHECK(ds.covariate_index(kPatientIdCovariate) == 0);
  CHECK(ds.covariate_index(kTimeCovariate) == 1);

  int events = 0;
  for (const auto& r : ds.records) {
    events += r.event;
    CHECK(r.samples.size() >= 5);
    CHECK(r.samples.size() <= 20);
    const double s_last = r.samples.back().time;
    CHECK(s_last >= 0.5);
    CHECK(s_last < 1.0);
    CHECK(r.event_time > 0.0);
    if (r.event) CHECK(r.event_time == 1.0 - s_last);
    else CHECK(r.event_time < 1.0 - s_last);
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
      const auto& s = r.samples[i];
      CHECK(1296 - static_cast<int>(s.observed_count()) == cfg.masked_pixel_count());
      CHECK(s.covariates[1] == s.time);
      CHECK(s.time > 0.0);
      if (i) CHECK(s.time > r.samples[i - 1].time);
    }
  }
  const double sigma = std::sqrt(1000 * 0.6 * 0.4);
  CHECK(std::abs(events - 600) <= 3 * sigma);
}

TEST_CASE("generation is deterministic and independent of worker count") {
  SimConfig cfg;
  cfg.n_subjects = 40;
  cfg.seed = 5;
  const auto a = generate(cfg, digits());
  cfg.jobs = 3;
  const auto b = generate(cfg, digits());
  CHECK(a == b);
  const auto da = fs::temp_directory_path() / "seqrisk_sim_a";
  const auto db = fs::temp_directory_path() / "seqrisk_sim_b";
  fs::remove_all(da);
  fs::remove_all(db);
  write_dataset(a, da);
  write_dataset(b, db);
  CHECK(slurp(da / "records.ndjson") == slurp(db / "records.ndjson"));
  CHECK(slurp(da / "manifest.json") == slurp(db / "manifest.json"));
  cfg.seed = 6;
  CHECK_FALSE(generate(cfg, digits()) == a);
}

TEST_CASE("provenance records the full simulation config") {
  SimConfig cfg;
  cfg.n_subjects = 4;
  cfg.mask_fraction = 0.8;
  const auto ds = generate(cfg, digits());
  CHECK(ds.provenance.at("generator") == "survival-mnist");
  CHECK(sim_config_from_json(ds.provenance.at("config")).mask_fraction == 0.8);
  CHECK(ds.provenance.contains("censoring"));
}

TEST_CASE("config validation") {
  SimConfig c;
  c.obs_min = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.obs_min = 9;
  c.obs_max = 8;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.mask_fraction = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(sim_config_from_json({{"n_subject", 3}}), ConfigError);
  c = {};
  c.canvas_rows = c.canvas_cols = 20;
  CHECK_THROWS_AS(generate(c, digits()), ConfigError);
  CHECK_THROWS_AS(generate(SimConfig{}, {}), ConfigError);
}

TEST_CASE("the time covariate alone ranks the simulated cohort perfectly") {
  // Event times are 1 - s_last and censored times are shorter still, so the
  // last observation time orders every comparable pair. This is why the MNIST
  // preset keeps time out of the risk head's inputs.
  SimConfig cfg;
  cfg.n_subjects = 200;
  cfg.seed = 3;
  const auto ds = generate(cfg, digits());
  Eigen::VectorXd score(200);
  std::vector<double> t;
  std::vector<bool> e;
  for (int i = 0; i < 200; ++i) {
    score[i] = ds.records[i].samples.back().time;
    t.push_back(ds.records[i].event_time);
    e.push_back(ds.records[i].event);
  }
  CHECK(eval::c_index(score, cox::SurvivalLabelSet(t, e)).value == 1.0);
}
