#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqrisk/data_model.hpp"

namespace seqrisk::sim {

/// Row-major grayscale image on the 0-255 intensity scale.
struct Image {
  int rows = 0;
  int cols = 0;
  std::vector<double> pixels;

  double at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * cols + c]; }
  double& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * cols + c]; }
  bool operator==(const Image&) const = default;
};

/// Reads an IDX3 (ubyte) image file such as the MNIST distribution files.
std::vector<Image> load_idx_images(const std::filesystem::path& path);
/// Reads an IDX1 (ubyte) label file.
std::vector<int> load_idx_labels(const std::filesystem::path& path);

struct SimConfig {
  int n_subjects = 500;
  double mask_fraction = 0.7;
  double noise_std = 30.0;
  double event_prob = 0.6;
  int obs_min = 5;
  int obs_max = 20;
  int canvas_rows = 36;
  int canvas_cols = 36;
  int digit_class = 3;
  std::uint64_t seed = 0;
  /// Worker threads for subject generation; output does not depend on it.
  int jobs = 1;

  /// Throws ConfigError.
  void validate() const;
  int canvas_pixels() const { return canvas_rows * canvas_cols; }
  /// floor(mask_fraction * canvas_pixels)
  int masked_pixel_count() const;
};

nlohmann::json to_json(const SimConfig& c);
/// Rejects unknown keys.
SimConfig sim_config_from_json(const nlohmann::json& j);

/// Disease progression s in [0,1]; rendering angle is 180 * s degrees.
struct ProgressionState {
  double s = 0.0;
  double angle_degrees() const { return 180.0 * s; }
};

/// Centers `image` on a zero canvas. Throws SchemaError if it does not fit.
Image pad_to_canvas(const Image& image, int rows, int cols);
/// Bilinear rotation about the canvas center; samples falling outside read 0.
Image rotate(const Image& image, double angle_degrees);
/// Moves content by (shift, shift) pixels; positive = towards the bottom right.
Image shift_diagonal(const Image& image, int shift);

/// Full rendering pipeline with an explicit diagonal shift: pad, rotate, shift,
/// add N(0, noise_std) noise, clamp to [0,255], then mask exactly
/// masked_pixel_count() uniformly chosen pixels. Covariates are
/// (patient_code, s).
TrajectorySample render_observation(const Image& image, ProgressionState state, const SimConfig& config,
                                    int shift, std::mt19937_64& rng, const std::string& patient_id,
                                    double patient_code);

/// Same, drawing the shift magnitude uniformly in [0, pad width] with a fair
/// direction coin.
TrajectorySample render_observation(const Image& image, ProgressionState state, const SimConfig& config,
                                    std::mt19937_64& rng, const std::string& patient_id,
                                    double patient_code);

/// Largest shift that keeps the padded source inside the canvas.
int max_shift(const Image& source, const SimConfig& config);

/// Generates the benchmark. Each subject uses a generator derived from
/// (seed, subject index), so output is identical for any `jobs` value.
SurvivalDataset generate(const SimConfig& config, const std::vector<Image>& source_images);

/// Covariate column names used by generated datasets.
inline constexpr const char* kPatientIdCovariate = "patient_id";
inline constexpr const char* kTimeCovariate = "time";

}  // namespace seqrisk::sim
