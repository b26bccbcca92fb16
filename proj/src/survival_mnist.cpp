#include "seqrisk/survival_mnist.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <thread>

#include "seqrisk/error.hpp"
#include "seqrisk/seeding.hpp"

namespace seqrisk::sim {

using nlohmann::json;

namespace {

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw IoError("truncated IDX header in '" + path.string() + "'");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

std::vector<Image> load_idx_images(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open IDX image file '" + path.string() + "'");
  if (read_be32(in, path) != 0x00000803) {
    throw IoError("'" + path.string() + "' is not an IDX3 ubyte image file");
  }
  const auto count = read_be32(in, path);
  const auto rows = static_cast<int>(read_be32(in, path));
  const auto cols = static_cast<int>(read_be32(in, path));
  std::vector<Image> out(count);
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
  for (auto& img : out) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw IoError("truncated IDX image data in '" + path.string() + "'");
    img.rows = rows;
    img.cols = cols;
    img.pixels.assign(buf.begin(), buf.end());
  }
  return out;
}

std::vector<int> load_idx_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open IDX label file '" + path.string() + "'");
  if (read_be32(in, path) != 0x00000801) {
    throw IoError("'" + path.string() + "' is not an IDX1 ubyte label file");
  }
  const auto count = read_be32(in, path);
  std::vector<unsigned char> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count));
  if (!in) throw IoError("truncated IDX label data in '" + path.string() + "'");
  return {buf.begin(), buf.end()};
}

void SimConfig::validate() const {
  if (n_subjects <= 0) throw ConfigError("simulation.n_subjects must be positive");
  if (!(mask_fraction >= 0.0 && mask_fraction < 1.0)) {
    throw ConfigError("simulation.mask_fraction must lie in [0, 1)");
  }
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
    throw ConfigError("simulation.noise_std must be finite and >= 0");
  }
  if (!(event_prob >= 0.0 && event_prob <= 1.0)) {
    throw ConfigError("simulation.event_prob must lie in [0, 1]");
  }
  if (obs_min < 1 || obs_min > obs_max) {
    throw ConfigError("simulation.obs_count_range must satisfy 1 <= min <= max");
  }
  if (canvas_rows <= 0 || canvas_cols <= 0) throw ConfigError("simulation.canvas must be positive");
  if (jobs < 1) throw ConfigError("simulation.jobs must be >= 1");
}

int SimConfig::masked_pixel_count() const {
  return static_cast<int>(std::floor(mask_fraction * canvas_pixels() + 1e-9));
}

json to_json(const SimConfig& c) {
  return json{{"n_subjects", c.n_subjects},
              {"mask_fraction", c.mask_fraction},
              {"noise_std", c.noise_std},
              {"event_prob", c.event_prob},
              {"obs_count_range", {c.obs_min, c.obs_max}},
              {"canvas", {c.canvas_rows, c.canvas_cols}},
              {"digit_class", c.digit_class},
              {"seed", c.seed}};
}

SimConfig sim_config_from_json(const json& j) {
  SimConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "n_subjects") c.n_subjects = value.get<int>();
    else if (key == "mask_fraction") c.mask_fraction = value.get<double>();
    else if (key == "noise_std") c.noise_std = value.get<double>();
    else if (key == "event_prob") c.event_prob = value.get<double>();
    else if (key == "obs_count_range") {
      const auto r = value.get<std::vector<int>>();
      if (r.size() != 2) throw ConfigError("simulation.obs_count_range must be [min, max]");
      c.obs_min = r[0];
      c.obs_max = r[1];
    } else if (key == "canvas") {
      const auto r = value.get<std::vector<int>>();
      if (r.size() != 2) throw ConfigError("simulation.canvas must be [rows, cols]");
      c.canvas_rows = r[0];
      c.canvas_cols = r[1];
    } else if (key == "digit_class") c.digit_class = value.get<int>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "jobs") c.jobs = value.get<int>();
    else throw ConfigError("simulation: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

Image pad_to_canvas(const Image& image, int rows, int cols) {
  if (image.rows > rows || image.cols > cols) {
    throw SchemaError("image " + std::to_string(image.rows) + "x" + std::to_string(image.cols) +
                      " does not fit canvas " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  Image out{rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0)};
  const int r0 = (rows - image.rows) / 2;
  const int c0 = (cols - image.cols) / 2;
  for (int r = 0; r < image.rows; ++r) {
    for (int c = 0; c < image.cols; ++c) out.at(r0 + r, c0 + c) = image.at(r, c);
  }
  return out;
}

Image rotate(const Image& image, double angle_degrees) {
  const double theta = angle_degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  const double cy = (image.rows - 1) / 2.0;
  const double cx = (image.cols - 1) / 2.0;
  Image out{image.rows, image.cols, std::vector<double>(image.pixels.size(), 0.0)};

  auto pixel = [&](int r, int c) {
    return (r < 0 || c < 0 || r >= image.rows || c >= image.cols) ? 0.0 : image.at(r, c);
  };
  for (int r = 0; r < image.rows; ++r) {
    for (int c = 0; c < image.cols; ++c) {
      // Inverse map: the output pixel reads from the source rotated by -theta.
      const double dx = c - cx;
      const double dy = r - cy;
      const double sx = snap(cx + cs * dx - sn * dy);
      const double sy = snap(cy + sn * dx + cs * dy);
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0;
      const double fy = sy - y0;
      double v = (1 - fx) * (1 - fy) * pixel(y0, x0);
      if (fx > 0) v += fx * (1 - fy) * pixel(y0, x0 + 1);
      if (fy > 0) v += (1 - fx) * fy * pixel(y0 + 1, x0);
      if (fx > 0 && fy > 0) v += fx * fy * pixel(y0 + 1, x0 + 1);
      out.at(r, c) = v;
    }
  }
  return out;
}

Image shift_diagonal(const Image& image, int shift) {
  Image out{image.rows, image.cols, std::vector<double>(image.pixels.size(), 0.0)};
  for (int r = 0; r < image.rows; ++r) {
    const int sr = r - shift;
    if (sr < 0 || sr >= image.rows) continue;
    for (int c = 0; c < image.cols; ++c) {
      const int sc = c - shift;
      if (sc < 0 || sc >= image.cols) continue;
      out.at(r, c) = image.at(sr, sc);
    }
  }
  return out;
}

int max_shift(const Image& source, const SimConfig& config) {
  return std::max(0, std::min((config.canvas_rows - source.rows) / 2, (config.canvas_cols - source.cols) / 2));
}

TrajectorySample render_observation(const Image& image, ProgressionState state, const SimConfig& config,
                                    int shift, std::mt19937_64& rng, const std::string& patient_id,
                                    double patient_code) {
  Image canvas = pad_to_canvas(image, config.canvas_rows, config.canvas_cols);
  canvas = rotate(canvas, state.angle_degrees());
  if (shift != 0) canvas = shift_diagonal(canvas, shift);

  if (config.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, config.noise_std);
    for (auto& p : canvas.pixels) p += noise(rng);
  }
  for (auto& p : canvas.pixels) p = std::clamp(p, 0.0, 255.0);

  const int n = config.canvas_pixels();
  const int masked = config.masked_pixel_count();
  TrajectorySample s;
  s.patient_id = patient_id;
  s.time = state.s;
  s.measurements = std::move(canvas.pixels);
  s.observed_mask.assign(n, 1);
  if (masked > 0) {
    // Partial Fisher-Yates: the first `masked` slots form a uniform subset.
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < masked; ++i) {
      std::uniform_int_distribution<int> pick(i, n - 1);
      std::swap(idx[i], idx[pick(rng)]);
      s.observed_mask[idx[i]] = 0;
      s.measurements[idx[i]] = kUnobservedSentinel;
    }
  }
  s.covariates = {patient_code, state.s};
  return s;
}

TrajectorySample render_observation(const Image& image, ProgressionState state, const SimConfig& config,
                                    std::mt19937_64& rng, const std::string& patient_id,
                                    double patient_code) {
  const int bound = max_shift(image, config);
  std::uniform_int_distribution<int> magnitude(0, bound);
  std::bernoulli_distribution direction(0.5);
  const int m = magnitude(rng);
  const int shift = direction(rng) ? m : -m;
  return render_observation(image, state, config, shift, rng, patient_id, patient_code);
}

namespace {

std::string subject_id(int index, int total) {
  const int width = std::max(4, static_cast<int>(std::to_string(total - 1).size()));
  auto digits = std::to_string(index);
  return "S" + std::string(static_cast<std::size_t>(width) - digits.size(), '0') + digits;
}

PatientRecord generate_subject(const SimConfig& config, const Image& source, int index) {
  auto rng = make_rng(derive_seed(config.seed, "subject", {static_cast<std::uint64_t>(index)}));
  PatientRecord rec;
  rec.patient_id = subject_id(index, config.n_subjects);

  std::bernoulli_distribution event(config.event_prob);
  rec.event = event(rng);
  std::uniform_int_distribution<int> count(config.obs_min, config.obs_max);
  const int m = count(rng);

  std::uniform_real_distribution<double> last(0.5, 1.0);
  const double s_last = last(rng);
  std::vector<double> progressions;
  progressions.reserve(m);
  std::uniform_real_distribution<double> early(0.0, s_last);
  while (static_cast<int>(progressions.size()) < m - 1) {
    const double s = early(rng);
    if (s <= 0.0 || s >= s_last) continue;
    if (std::find(progressions.begin(), progressions.end(), s) != progressions.end()) continue;
    progressions.push_back(s);
  }
  std::sort(progressions.begin(), progressions.end());
  progressions.push_back(s_last);

  const double code = static_cast<double>(index);
  for (double s : progressions) {
    rec.samples.push_back(render_observation(source, ProgressionState{s}, config, rng, rec.patient_id, code));
  }

  if (rec.event) {
    rec.event_time = 1.0 - s_last;
  } else {
    std::uniform_real_distribution<double> censor(s_last, 1.0);
    double c = censor(rng);
    while (c <= s_last) c = censor(rng);
    rec.event_time = c - s_last;
  }
  return rec;
}

}  // namespace

SurvivalDataset generate(const SimConfig& config, const std::vector<Image>& source_images) {
  config.validate();
  if (source_images.empty()) throw ConfigError("generate: empty source image set");
  for (const auto& img : source_images) {
    if (img.rows > config.canvas_rows || img.cols > config.canvas_cols) {
      throw ConfigError("generate: source image larger than canvas");
    }
  }

  // Source assignment: consecutive independent permutations of the image set,
  // so images repeat only once every image has been used.
  std::vector<std::size_t> assignment;
  assignment.reserve(config.n_subjects);
  auto master = make_rng(derive_seed(config.seed, "source-assignment"));
  while (assignment.size() < static_cast<std::size_t>(config.n_subjects)) {
    std::vector<std::size_t> perm(source_images.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (std::size_t i = perm.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(perm[i - 1], perm[pick(master)]);
    }
    for (auto p : perm) {
      if (assignment.size() == static_cast<std::size_t>(config.n_subjects)) break;
      assignment.push_back(p);
    }
  }

  SurvivalDataset ds;
  ds.records.resize(config.n_subjects);
  const int workers = std::min(config.jobs, config.n_subjects);
  auto work = [&](int worker) {
    for (int i = worker; i < config.n_subjects; i += workers) {
      ds.records[i] = generate_subject(config, source_images[assignment[i]], i);
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }

  ds.feature_names.reserve(config.canvas_pixels());
  for (int r = 0; r < config.canvas_rows; ++r) {
    for (int c = 0; c < config.canvas_cols; ++c) {
      ds.feature_names.push_back("px_" + std::to_string(r) + "_" + std::to_string(c));
    }
  }
  CovariateSpec id_spec{kPatientIdCovariate, CovariateKind::categorical, {}};
  for (const auto& r : ds.records) id_spec.codes.push_back(r.patient_id);
  ds.covariate_schema = {std::move(id_spec), CovariateSpec{kTimeCovariate, CovariateKind::continuous, {}}};

  ds.provenance = {{"generator", "survival-mnist"},
                   {"seed", config.seed},
                   {"config", to_json(config)},
                   {"source_image_count", source_images.size()},
                   {"censoring", "c ~ Uniform(s_last, 1); t = c - s_last"},
                   {"event_time", "t = 1 - s_last"},
                   {"progression", "s_last ~ Uniform[0.5, 1); earlier s ~ Uniform(0, s_last), sorted"},
                   {"rendering", "pad, bilinear rotate 180*s deg, diagonal shift, noise, clamp [0,255], mask"},
                   {"noise", "additive Gaussian, noise_std is a standard deviation on the 0-255 scale"}};
  return ds;
}

}  // namespace seqrisk::sim
