#include "seqrisk/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "seqrisk/error.hpp"
#include "seqrisk/seeding.hpp"

namespace seqrisk {

using nlohmann::json;

namespace {

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kRecordsFile = "records.ndjson";
constexpr const char* kSplitsFile = "splits.tsv";
constexpr const char* kFormatName = "seqrisk-dataset";

std::string sample_context(const PatientRecord& r, std::size_t i) {
  return "patient '" + r.patient_id + "' sample " + std::to_string(i);
}

json sample_to_json(const TrajectorySample& s) {
  // Sparse encoding: the mask is the set of listed indices, values align with it.
  json observed = json::array();
  json values = json::array();
  for (std::size_t d = 0; d < s.measurements.size(); ++d) {
    if (s.observed_mask[d]) {
      observed.push_back(d);
      values.push_back(s.measurements[d]);
    }
  }
  json j;
  j["time"] = s.time;
  j["covariates"] = s.covariates;
  j["observed"] = std::move(observed);
  j["values"] = std::move(values);
  return j;
}

TrajectorySample sample_from_json(const json& j, const std::string& patient_id, std::size_t dim) {
  TrajectorySample s;
  s.patient_id = patient_id;
  s.time = j.at("time").get<double>();
  s.covariates = j.at("covariates").get<std::vector<double>>();
  const auto observed = j.at("observed").get<std::vector<std::size_t>>();
  const auto values = j.at("values").get<std::vector<double>>();
  if (observed.size() != values.size()) {
    throw SchemaError("patient '" + patient_id + "': observed/values length mismatch");
  }
  s.measurements.assign(dim, kUnobservedSentinel);
  s.observed_mask.assign(dim, 0);
  for (std::size_t k = 0; k < observed.size(); ++k) {
    if (observed[k] >= dim) {
      throw SchemaError("patient '" + patient_id + "': observed index " +
                        std::to_string(observed[k]) + " out of range D=" + std::to_string(dim));
    }
    s.measurements[observed[k]] = values[k];
    s.observed_mask[observed[k]] = 1;
  }
  return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace

std::string to_string(CovariateKind kind) {
  switch (kind) {
    case CovariateKind::continuous: return "continuous";
    case CovariateKind::categorical: return "categorical";
    case CovariateKind::binary: return "binary";
  }
  return "continuous";
}

CovariateKind covariate_kind_from_string(const std::string& s) {
  if (s == "continuous") return CovariateKind::continuous;
  if (s == "categorical") return CovariateKind::categorical;
  if (s == "binary") return CovariateKind::binary;
  throw SchemaError("unknown covariate kind '" + s + "'");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "test") return Split::test;
  throw SchemaError("unknown split '" + s + "'");
}

std::size_t TrajectorySample::observed_count() const {
  return static_cast<std::size_t>(std::count(observed_mask.begin(), observed_mask.end(), 1));
}

std::size_t SurvivalDataset::sample_count() const {
  std::size_t n = 0;
  for (const auto& r : records) n += r.samples.size();
  return n;
}

int SurvivalDataset::covariate_index(const std::string& name) const {
  for (std::size_t q = 0; q < covariate_schema.size(); ++q) {
    if (covariate_schema[q].name == name) return static_cast<int>(q);
  }
  return -1;
}

void validate(const SurvivalDataset& dataset) {
  const std::size_t dim = dataset.feature_names.size();
  const std::size_t q_count = dataset.covariate_schema.size();
  for (const auto& spec : dataset.covariate_schema) {
    if (spec.kind == CovariateKind::categorical && spec.codes.empty()) {
      throw SchemaError("covariate '" + spec.name + "': categorical column without code table");
    }
  }
  std::set<std::string> ids;
  for (const auto& r : dataset.records) {
    if (!ids.insert(r.patient_id).second) {
      throw SchemaError("patient_id '" + r.patient_id + "' is not unique");
    }
    if (r.samples.empty()) throw SchemaError("patient '" + r.patient_id + "': no samples");
    if (!std::isfinite(r.event_time) || r.event_time < 0.0) {
      throw SchemaError("patient '" + r.patient_id + "': event_time must be finite and >= 0");
    }
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
      const auto& s = r.samples[i];
      const auto ctx = sample_context(r, i);
      if (s.patient_id != r.patient_id) throw SchemaError(ctx + ": patient_id mismatch");
      if (!std::isfinite(s.time) || s.time < 0.0) {
        throw SchemaError(ctx + ": time must be finite and >= 0");
      }
      if (i > 0 && !(s.time > r.samples[i - 1].time)) {
        throw SchemaError(ctx + ": sample times must be strictly increasing");
      }
      if (s.measurements.size() != dim || s.observed_mask.size() != dim) {
        throw SchemaError(ctx + ": measurements/observed_mask length must equal D=" +
                          std::to_string(dim));
      }
      for (std::size_t d = 0; d < dim; ++d) {
        if (!s.observed_mask[d] && s.measurements[d] != kUnobservedSentinel) {
          throw SchemaError(ctx + ": unobserved entry " + std::to_string(d) +
                            " does not hold the sentinel");
        }
        if (s.observed_mask[d] && !std::isfinite(s.measurements[d])) {
          throw SchemaError(ctx + ": non-finite measurement at " + std::to_string(d));
        }
      }
      if (s.covariates.size() != q_count) {
        throw SchemaError(ctx + ": covariates length must equal Q=" + std::to_string(q_count));
      }
      for (std::size_t q = 0; q < q_count; ++q) {
        const auto& spec = dataset.covariate_schema[q];
        const double v = s.covariates[q];
        if (!std::isfinite(v)) throw SchemaError(ctx + ": covariate '" + spec.name + "' not finite");
        if (spec.kind == CovariateKind::categorical &&
            (v != std::floor(v) || v < 0 || v >= static_cast<double>(spec.codes.size()))) {
          throw SchemaError(ctx + ": covariate '" + spec.name + "' is not a valid code");
        }
        if (spec.kind == CovariateKind::binary && v != 0.0 && v != 1.0) {
          throw SchemaError(ctx + ": covariate '" + spec.name + "' must be 0 or 1");
        }
      }
    }
  }
  if (!dataset.splits.empty()) validate_splits(dataset, dataset.splits);
}

void validate_splits(const SurvivalDataset& dataset, const SplitMap& splits) {
  if (splits.size() != dataset.records.size()) {
    throw SchemaError("splits: " + std::to_string(splits.size()) + " assignments for " +
                      std::to_string(dataset.records.size()) + " patients");
  }
  for (const auto& r : dataset.records) {
    if (!splits.contains(r.patient_id)) {
      throw SchemaError("splits: patient '" + r.patient_id + "' has no split");
    }
  }
}

void write_dataset(const SurvivalDataset& dataset, const std::filesystem::path& dir) {
  validate(dataset);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  json manifest;
  manifest["format"] = kFormatName;
  manifest["version"] = kArchiveVersion;
  manifest["generator"] = dataset.provenance.value("generator", std::string("unknown"));
  manifest["seed"] = dataset.provenance.contains("seed") ? dataset.provenance.at("seed") : json();
  manifest["provenance"] = dataset.provenance;
  manifest["D"] = dataset.feature_names.size();
  manifest["Q"] = dataset.covariate_schema.size();
  manifest["P"] = dataset.records.size();
  manifest["N"] = dataset.sample_count();
  manifest["feature_names"] = dataset.feature_names;
  json schema = json::array();
  for (const auto& c : dataset.covariate_schema) {
    schema.push_back({{"name", c.name}, {"kind", to_string(c.kind)}, {"codes", c.codes}});
  }
  manifest["covariate_schema"] = std::move(schema);
  const bool has_records = !dataset.records.empty();
  manifest["records_file"] = has_records ? json(kRecordsFile) : json();
  manifest["splits_file"] = has_records && !dataset.splits.empty() ? json(kSplitsFile) : json();
  write_text(dir / kManifestFile, manifest.dump(1) + "\n");

  if (!has_records) return;

  std::string records;
  for (const auto& r : dataset.records) {
    json j;
    j["id"] = r.patient_id;
    j["event_time"] = r.event_time;
    j["event"] = r.event;
    json samples = json::array();
    for (const auto& s : r.samples) samples.push_back(sample_to_json(s));
    j["samples"] = std::move(samples);
    records += j.dump();
    records += '\n';
  }
  write_text(dir / kRecordsFile, records);

  if (!dataset.splits.empty()) {
    std::string splits = "patient_id\tsplit\n";
    for (const auto& r : dataset.records) {
      splits += r.patient_id + "\t" + to_string(dataset.splits.at(r.patient_id)) + "\n";
    }
    write_text(dir / kSplitsFile, splits);
  }
}

SurvivalDataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / kManifestFile;
  std::ifstream in(manifest_path);
  if (!in) throw IoError("missing dataset manifest '" + manifest_path.string() + "'");
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw SchemaError("manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", std::string()) != kFormatName) {
    throw SchemaError("manifest: not a " + std::string(kFormatName) + " archive");
  }
  const int version = manifest.value("version", -1);
  if (version != kArchiveVersion) {
    throw SchemaError("manifest: unsupported archive version " + std::to_string(version) +
                      " (expected " + std::to_string(kArchiveVersion) + ")");
  }

  SurvivalDataset ds;
  try {
    ds.provenance = manifest.at("provenance");
    ds.feature_names = manifest.at("feature_names").get<std::vector<std::string>>();
    for (const auto& c : manifest.at("covariate_schema")) {
      ds.covariate_schema.push_back({c.at("name").get<std::string>(),
                                     covariate_kind_from_string(c.at("kind").get<std::string>()),
                                     c.at("codes").get<std::vector<std::string>>()});
    }
    if (manifest.at("D").get<std::size_t>() != ds.feature_names.size()) {
      throw SchemaError("manifest: D does not match feature_names");
    }
    if (manifest.at("Q").get<std::size_t>() != ds.covariate_schema.size()) {
      throw SchemaError("manifest: Q does not match covariate_schema");
    }
    const auto patients = manifest.at("P").get<std::size_t>();
    const std::size_t dim = ds.feature_names.size();

    if (patients > 0) {
      const auto records_path = dir / kRecordsFile;
      std::ifstream rin(records_path);
      if (!rin) throw IoError("missing records file '" + records_path.string() + "'");
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(rin, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
          j = json::parse(line);
        } catch (const json::exception& e) {
          throw SchemaError("records line " + std::to_string(line_no) + ": " + e.what());
        }
        PatientRecord r;
        r.patient_id = j.at("id").get<std::string>();
        r.event_time = j.at("event_time").get<double>();
        r.event = j.at("event").get<bool>();
        for (const auto& sj : j.at("samples")) r.samples.push_back(sample_from_json(sj, r.patient_id, dim));
        ds.records.push_back(std::move(r));
      }
      if (ds.records.size() != patients) {
        throw SchemaError("records: expected " + std::to_string(patients) + " patients, found " +
                          std::to_string(ds.records.size()));
      }
      if (manifest.at("N").get<std::size_t>() != ds.sample_count()) {
        throw SchemaError("records: sample count does not match manifest N");
      }
      if (!manifest.at("splits_file").is_null()) {
        const auto splits_path = dir / kSplitsFile;
        std::ifstream sin(splits_path);
        if (!sin) throw IoError("missing splits file '" + splits_path.string() + "'");
        std::getline(sin, line);  // header
        while (std::getline(sin, line)) {
          if (line.empty()) continue;
          const auto tab = line.find('\t');
          if (tab == std::string::npos) throw SchemaError("splits: malformed line '" + line + "'");
          const auto id = line.substr(0, tab);
          if (!ds.splits.emplace(id, split_from_string(line.substr(tab + 1))).second) {
            throw SchemaError("splits: patient '" + id + "' assigned twice");
          }
        }
      }
    }
  } catch (const json::exception& e) {
    throw SchemaError("dataset archive: " + std::string(e.what()));
  }
  validate(ds);
  return ds;
}

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = make_rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
  return idx;
}

}  // namespace

SplitMap assign_splits(const SurvivalDataset& dataset, SplitFractions f, std::uint64_t seed) {
  const double fr[3] = {f.train, f.validation, f.test};
  for (double v : fr) {
    if (!(v > 0.0)) throw ConfigError("split fractions must be positive");
  }
  if (std::abs(fr[0] + fr[1] + fr[2] - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  const std::size_t n = dataset.records.size();
  if (n < 3) {
    throw ConfigError("assign_splits: " + std::to_string(n) + " patients cannot fill 3 splits");
  }
  // Largest remainder, then make sure no split is empty.
  std::size_t counts[3];
  double rema[3];
  std::size_t used = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = fr[k] * static_cast<double>(n);
    counts[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rema[k] = exact - static_cast<double>(counts[k]);
    used += counts[k];
  }
  while (used < n) {
    int best = 0;
    for (int k = 1; k < 3; ++k) {
      if (rema[k] > rema[best] + 1e-12) best = k;
    }
    ++counts[best];
    rema[best] = -1.0;
    ++used;
  }
  for (int k = 0; k < 3; ++k) {
    if (counts[k] == 0) {
      int donor = static_cast<int>(std::max_element(counts, counts + 3) - counts);
      --counts[donor];
      ++counts[k];
    }
  }

  const auto order = shuffled_indices(n, seed);
  SplitMap out;
  for (std::size_t i = 0; i < n; ++i) {
    const Split s = i < counts[0] ? Split::train
                    : i < counts[0] + counts[1] ? Split::validation
                                                : Split::test;
    out.emplace(dataset.records[order[i]].patient_id, s);
  }
  return out;
}

std::vector<SplitMap> kfold_splits(const SurvivalDataset& dataset, int folds, std::uint64_t seed) {
  const std::size_t n = dataset.records.size();
  if (folds < 3) throw ConfigError("kfold_splits: need at least 3 folds");
  if (n < static_cast<std::size_t>(folds)) {
    throw ConfigError("kfold_splits: " + std::to_string(n) + " patients cannot fill " +
                      std::to_string(folds) + " folds");
  }
  const auto order = shuffled_indices(n, seed);
  std::vector<int> part(n);
  for (std::size_t i = 0; i < n; ++i) part[order[i]] = static_cast<int>(i % folds);

  std::vector<SplitMap> out(folds);
  for (int f = 0; f < folds; ++f) {
    for (std::size_t i = 0; i < n; ++i) {
      const Split s = part[i] == f                 ? Split::test
                      : part[i] == (f + 1) % folds ? Split::validation
                                                   : Split::train;
      out[f].emplace(dataset.records[i].patient_id, s);
    }
  }
  return out;
}

std::vector<std::size_t> split_indices(const SurvivalDataset& dataset, const SplitMap& splits,
                                       Split which) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const auto it = splits.find(dataset.records[i].patient_id);
    if (it == splits.end()) {
      throw SchemaError("patient '" + dataset.records[i].patient_id + "' has no split");
    }
    if (it->second == which) out.push_back(i);
  }
  return out;
}

}  // namespace seqrisk
