#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "shapeseg/nn/feature_map.hpp"

/* Checkpoint archive: a single file holding a JSON header (format version,
 * config echo, iteration counter, rng state, tensor index) followed by the
 * raw little-endian float32 payloads of all named tensors.
 *
 * layout: magic "SSEGCKPT" | u32 version | u64 header bytes | header | payload
 */
namespace shapeseg::nn {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[9] = "SSEGCKPT";

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::int64_t iteration = 0;
  nlohmann::json config;                         // config echo, format-defined by the writer
  std::string rng_state;
  std::map<std::string, VectorX<float>> tensors;  // named flat tensors

  bool has(const std::string& name) const { return tensors.count(name) != 0; }
  const VectorX<float>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
    return it->second;
  }
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json hdr;
  hdr["version"] = ckpt.version;
  hdr["iteration"] = ckpt.iteration;
  hdr["config"] = ckpt.config;
  hdr["rng_state"] = ckpt.rng_state;
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, values] : ckpt.tensors) {
    nlohmann::json e;
    e["name"] = name;
    e["dtype"] = "float32";
    e["size"] = values.size();
    e["offset"] = offset;
    index.push_back(e);
    offset += sizeof(float) * static_cast<std::uint64_t>(values.size());
  }
  hdr["tensors"] = index;
  const std::string header = hdr.dump();

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + tmp.string());
    os.write(kCheckpointMagic, 8);
    const std::uint32_t ver = ckpt.version;
    os.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    const std::uint64_t hbytes = header.size();
    os.write(reinterpret_cast<const char*>(&hbytes), sizeof(hbytes));
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, values] : ckpt.tensors) {
      os.write(reinterpret_cast<const char*>(values.data()),
               static_cast<std::streamsize>(sizeof(float) * values.size()));
    }
    if (!os) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != std::string(kCheckpointMagic, 8)) {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  Checkpoint ckpt;
  is.read(reinterpret_cast<char*>(&ckpt.version), sizeof(ckpt.version));
  if (ckpt.version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  std::uint64_t hbytes = 0;
  is.read(reinterpret_cast<char*>(&hbytes), sizeof(hbytes));
  std::string header(hbytes, '\0');
  is.read(header.data(), static_cast<std::streamsize>(hbytes));
  if (!is) throw std::runtime_error("truncated checkpoint header: " + path.string());
  nlohmann::json hdr;
  try {
    hdr = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed checkpoint header: " + std::string(e.what()));
  }
  ckpt.iteration = hdr.at("iteration").get<std::int64_t>();
  ckpt.config = hdr.at("config");
  ckpt.rng_state = hdr.at("rng_state").get<std::string>();
  const std::streampos payload_base = is.tellg();
  for (const auto& e : hdr.at("tensors")) {
    const std::string name = e.at("name").get<std::string>();
    const Index size = e.at("size").get<Index>();
    const std::uint64_t offset = e.at("offset").get<std::uint64_t>();
    VectorX<float> values(size);
    is.seekg(payload_base + static_cast<std::streamoff>(offset));
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(sizeof(float) * size));
    if (!is) throw std::runtime_error("truncated checkpoint payload: " + path.string());
    ckpt.tensors.emplace(name, std::move(values));
  }
  return ckpt;
}

}  // namespace shapeseg::nn
