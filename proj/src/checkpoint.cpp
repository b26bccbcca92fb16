#include "seqrisk/checkpoint.hpp"

#include <cstring>
#include <map>
#include <fstream>

#include "seqrisk/error.hpp"

namespace seqrisk::ckpt {

namespace {

using nlohmann::json;

constexpr const char* kInducing = "gp.inducing";

json schema_to_json(const std::vector<CovariateSpec>& schema) {
  json out = json::array();
  for (const auto& c : schema) out.push_back({{"name", c.name}, {"kind", to_string(c.kind)}, {"codes", c.codes}});
  return out;
}

std::vector<CovariateSpec> schema_from_json(const json& j) {
  std::vector<CovariateSpec> out;
  for (const auto& c : j) {
    out.push_back({c.at("name").get<std::string>(), covariate_kind_from_string(c.at("kind").get<std::string>()),
                   c.at("codes").get<std::vector<std::string>>()});
  }
  return out;
}

std::string dtype_name(torch::Dtype t) {
  if (t == torch::kFloat32) return "float32";
  if (t == torch::kFloat64) return "float64";
  throw ConfigError("checkpoint: unsupported dtype");
}

torch::Dtype dtype_from_name(const std::string& s) {
  if (s == "float32") return torch::kFloat32;
  if (s == "float64") return torch::kFloat64;
  throw IoError("checkpoint: unsupported dtype '" + s + "'");
}

std::vector<std::pair<std::string, torch::Tensor>> tensors_of(const model::SeqRiskModel& m) {
  auto out = m.store().items();
  if (m.gp() && m.gp()->inducing().defined()) out.emplace_back(kInducing, m.gp()->inducing());
  return out;
}

struct RawFile {
  CheckpointHeader header;
  std::vector<char> data;
};

RawFile read_file(const std::filesystem::path& path, bool with_data) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw IoError(path.string() + " is not a SeqRisk checkpoint");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated checkpoint header in " + path.string());
  RawFile f;
  try {
    const auto j = json::parse(text);
    f.header = {j.at("config"), j.at("extra"), j.at("tensors")};
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  if (with_data) {
    f.data.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return f;
}

}  // namespace

json model_identity(const model::SeqRiskModel& m, std::int64_t feature_dim, const std::vector<CovariateSpec>& schema) {
  return {{"model", model::to_json(m.config())},
          {"feature_dim", feature_dim},
          {"covariate_schema", schema_to_json(schema)},
          {"dtype", dtype_name(m.store().dtype())}};
}

void write_checkpoint(const std::filesystem::path& path, const model::SeqRiskModel& m, std::int64_t feature_dim,
                      const std::vector<CovariateSpec>& schema, const json& extra) {
  json table = json::array();
  std::vector<torch::Tensor> blobs;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors_of(m)) {
    auto c = t.detach().contiguous();
    const auto bytes = static_cast<std::uint64_t>(c.numel() * c.element_size());
    table.push_back({{"name", name}, {"dtype", dtype_name(c.scalar_type())}, {"shape", c.sizes().vec()},
                     {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
    blobs.push_back(c);
  }
  const json header = {{"format_version", 1}, {"config", model_identity(m, feature_dim, schema)},
                       {"extra", extra}, {"tensors", table}};
  const auto text = header.dump();
  const std::uint64_t len = text.size();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(len));
  for (const auto& b : blobs) {
    out.write(static_cast<const char*>(b.data_ptr()), static_cast<std::streamsize>(b.numel() * b.element_size()));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

CheckpointHeader read_header(const std::filesystem::path& path) { return read_file(path, false).header; }

void load_into(const std::filesystem::path& path, model::SeqRiskModel& m, std::int64_t feature_dim,
               const std::vector<CovariateSpec>& schema) {
  const auto f = read_file(path, true);
  const auto expected = model_identity(m, feature_dim, schema);
  if (f.header.config != expected) {
    throw ConfigError("checkpoint " + path.string() + " was written for a different configuration:\n  stored:   " +
                      f.header.config.dump() + "\n  expected: " + expected.dump());
  }
  std::map<std::string, torch::Tensor> loaded;
  for (const auto& t : f.header.tensors) {
    const auto offset = t.at("offset").get<std::uint64_t>();
    const auto bytes = t.at("bytes").get<std::uint64_t>();
    if (offset + bytes > f.data.size()) throw IoError("truncated tensor data in " + path.string());
    const auto shape = t.at("shape").get<std::vector<std::int64_t>>();
    auto tensor = torch::empty(shape, dtype_from_name(t.at("dtype").get<std::string>()));
    if (static_cast<std::uint64_t>(tensor.numel() * tensor.element_size()) != bytes) {
      throw IoError("tensor '" + t.at("name").get<std::string>() + "' has an inconsistent size");
    }
    std::memcpy(tensor.data_ptr(), f.data.data() + offset, bytes);
    loaded[t.at("name").get<std::string>()] = tensor;
  }
  std::vector<torch::Tensor> values;
  for (const auto& [name, t] : m.store().items()) {
    const auto it = loaded.find(name);
    if (it == loaded.end()) throw ConfigError("checkpoint is missing parameter '" + name + "'");
    if (!it->second.sizes().equals(t.sizes())) throw ConfigError("checkpoint parameter '" + name + "' has the wrong shape");
    values.push_back(it->second);
  }
  m.store().restore(values);
  if (m.gp()) {
    const auto it = loaded.find(kInducing);
    if (it == loaded.end()) throw ConfigError("checkpoint is missing the GP inducing inputs");
    m.gp()->set_inducing(it->second);
  }
}

std::unique_ptr<model::SeqRiskModel> load_model(const std::filesystem::path& path) {
  const auto h = read_header(path);
  const auto& c = h.config;
  const auto mc = model::model_config_from_json(c.at("model"));
  const auto feature_dim = c.at("feature_dim").get<std::int64_t>();
  const auto schema = schema_from_json(c.at("covariate_schema"));
  auto m = std::make_unique<model::SeqRiskModel>(mc, feature_dim, schema, 0,
                                                 dtype_from_name(c.at("dtype").get<std::string>()));
  load_into(path, *m, feature_dim, schema);
  return m;
}

}  // namespace seqrisk::ckpt
