#include "refcomp/checkpoint.hpp"

#include <bit>
#include <cstring>

namespace refcomp {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + static_cast<size_t>(i)]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const Denoiser& model, const std::filesystem::path& path, const nlohmann::json& metadata) {
  const auto& params = model.params();
  nlohmann::json header;
  header["model"] = model.config();
  header["metadata"] = metadata;
  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  for (int id = 0; id < params.size(); ++id) {
    const auto& v = params.value(id);
    index.push_back({{"name", params.name(id)}, {"rows", v.rows()}, {"cols", v.cols()}, {"offset", offset}});
    offset += static_cast<std::size_t>(v.size());
  }
  header["tensors"] = index;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out{'R', 'C', 'K', 'P'};
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  const size_t data_at = out.size();
  out.resize(data_at + offset * sizeof(float));
  std::uint8_t* dst = out.data() + data_at;
  for (int id = 0; id < params.size(); ++id) {
    const auto& v = params.value(id);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const float f = static_cast<float>(v.data()[i]);
      std::memcpy(dst, &f, sizeof f);
      dst += sizeof f;
    }
  }
  write_file_atomic(path, out);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::string where = path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RCKP", 4) != 0) throw IoError(where + ": not a checkpoint file");
  const auto version = get_u32(bytes, 4);
  if (version != kCheckpointVersion)
    throw IoError(where + ": unsupported checkpoint version " + std::to_string(version));
  const auto len = get_u32(bytes, 8);
  if (bytes.size() < 12 + static_cast<size_t>(len)) throw IoError(where + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(where + ": malformed header: " + e.what());
  }
  const size_t data_at = 12 + static_cast<size_t>(len);
  const size_t floats = (bytes.size() - data_at) / sizeof(float);
  if ((bytes.size() - data_at) % sizeof(float) != 0) throw IoError(where + ": truncated tensor data");

  LoadedCheckpoint out;
  try {
    ModelConfig cfg = header.at("model").get<ModelConfig>();
    out.model = std::make_unique<Denoiser>(cfg, 0);
    out.metadata = header.value("metadata", nlohmann::json::object());
    auto& params = out.model->params();
    std::vector<char> seen(static_cast<size_t>(params.size()), 0);
    for (const auto& t : header.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const int id = params.find(name);
      if (id < 0) throw ConfigError(where + ": tensor '" + name + "' does not exist in this architecture");
      auto& v = params.value(id);
      const auto rows = t.at("rows").get<Eigen::Index>(), cols = t.at("cols").get<Eigen::Index>();
      if (rows != v.rows() || cols != v.cols())
        throw ConfigError(where + ": tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                          std::to_string(cols) + ", architecture expects " + std::to_string(v.rows()) + "x" +
                          std::to_string(v.cols()));
      const auto offset = t.at("offset").get<size_t>();
      if (offset + static_cast<size_t>(v.size()) > floats) throw IoError(where + ": tensor '" + name + "' out of bounds");
      std::vector<float> buf(static_cast<size_t>(v.size()));
      std::memcpy(buf.data(), bytes.data() + data_at + offset * sizeof(float), buf.size() * sizeof(float));
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<double>(buf[static_cast<size_t>(i)]);
      seen[static_cast<size_t>(id)] = 1;
    }
    for (int id = 0; id < params.size(); ++id)
      if (!seen[static_cast<size_t>(id)]) throw ConfigError(where + ": missing tensor '" + params.name(id) + "'");
  } catch (const nlohmann::json::exception& e) {
    throw IoError(where + ": malformed header: " + e.what());
  }
  return out;
}

void round_to_storage_precision(Denoiser& model) {
  auto& params = model.params();
  for (int id = 0; id < params.size(); ++id) {
    auto& v = params.value(id);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<double>(static_cast<float>(v.data()[i]));
  }
}

}  // namespace refcomp
