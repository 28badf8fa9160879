#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "shapeseg/volume.hpp"

/* Volume file format: a JSON text header (`<name>.vhdr`) describing shape,
 * dtype, axis order and payload file, plus a raw little-endian payload
 * (`<name>.vraw`) in depth-major (d, h, w) order. Writes go through a temp
 * file and a rename.
 */
namespace shapeseg::synth {

static_assert(std::endian::native == std::endian::little,
              "volume payloads are little-endian; big-endian hosts unsupported");

enum class GridKind { image, mask, sdm };

inline const char* kind_name(GridKind k) {
  switch (k) {
    case GridKind::image: return "image";
    case GridKind::mask: return "mask";
    default: return "sdm";
  }
}

inline GridKind kind_from_name(const std::string& s) {
  if (s == "image") return GridKind::image;
  if (s == "mask") return GridKind::mask;
  if (s == "sdm") return GridKind::sdm;
  throw std::runtime_error("volume header: unknown kind '" + s + "'");
}

struct VolumeHeader {
  std::string id;
  VolumeShape shape;
  std::string dtype;    // "uint8" | "float32"
  std::string order;    // always "dhw"
  GridKind kind = GridKind::image;
  std::string payload;  // payload filename, relative to the header
};

namespace detail {

template <typename T>
const char* dtype_name();
template <>
inline const char* dtype_name<std::uint8_t>() { return "uint8"; }
template <>
inline const char* dtype_name<float>() { return "float32"; }

inline void atomic_write(const std::filesystem::path& path, const void* data,
                         std::size_t bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + tmp.string());
    os.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!os) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

template <typename T>
void save_grid(const Grid3<T>& grid, GridKind kind, const std::string& id,
               const std::filesystem::path& header_path) {
  const std::filesystem::path payload_path = [&] {
    std::filesystem::path p = header_path;
    p.replace_extension(".vraw");
    return p;
  }();
  nlohmann::json hdr;
  hdr["id"] = id;
  hdr["shape"] = {grid.shape().depth, grid.shape().height, grid.shape().width};
  hdr["dtype"] = detail::dtype_name<T>();
  hdr["order"] = "dhw";
  hdr["kind"] = kind_name(kind);
  hdr["payload"] = payload_path.filename().string();
  detail::atomic_write(payload_path, grid.data(), sizeof(T) * static_cast<std::size_t>(grid.size()));
  const std::string text = hdr.dump(2) + "\n";
  detail::atomic_write(header_path, text.data(), text.size());
}

inline VolumeHeader read_volume_header(const std::filesystem::path& header_path) {
  std::ifstream is(header_path);
  if (!is) throw std::runtime_error("cannot open volume header: " + header_path.string());
  nlohmann::json hdr;
  try {
    is >> hdr;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed volume header " + header_path.string() + ": " +
                             e.what());
  }
  VolumeHeader out;
  try {
    out.id = hdr.at("id").get<std::string>();
    const auto sh = hdr.at("shape");
    if (!sh.is_array() || sh.size() != 3) throw std::runtime_error("shape must be [d,h,w]");
    out.shape = VolumeShape(sh[0].get<Index>(), sh[1].get<Index>(), sh[2].get<Index>());
    out.dtype = hdr.at("dtype").get<std::string>();
    out.order = hdr.at("order").get<std::string>();
    out.kind = kind_from_name(hdr.at("kind").get<std::string>());
    out.payload = hdr.at("payload").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("volume header " + header_path.string() +
                             " missing field: " + e.what());
  }
  if (!out.shape.valid()) {
    throw std::runtime_error("volume header " + header_path.string() + ": invalid shape " +
                             out.shape.str());
  }
  if (out.order != "dhw") {
    throw std::runtime_error("volume header " + header_path.string() +
                             ": unsupported axis order '" + out.order + "'");
  }
  if (out.dtype != "uint8" && out.dtype != "float32") {
    throw std::runtime_error("volume header " + header_path.string() +
                             ": unknown element type '" + out.dtype + "'");
  }
  return out;
}

template <typename T>
Grid3<T> load_grid(const std::filesystem::path& header_path, VolumeHeader* header_out = nullptr) {
  const VolumeHeader hdr = read_volume_header(header_path);
  if (hdr.dtype != detail::dtype_name<T>()) {
    throw std::runtime_error("volume " + header_path.string() + ": element type is " +
                             hdr.dtype + ", requested " + detail::dtype_name<T>());
  }
  const std::filesystem::path payload_path = header_path.parent_path() / hdr.payload;
  std::ifstream is(payload_path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open payload: " + payload_path.string());
  const std::size_t expect = sizeof(T) * static_cast<std::size_t>(hdr.shape.voxels());
  Grid3<T> grid(hdr.shape);
  is.read(reinterpret_cast<char*>(grid.data()), static_cast<std::streamsize>(expect));
  if (static_cast<std::size_t>(is.gcount()) != expect || is.peek() != EOF) {
    throw std::runtime_error("payload size mismatch for " + payload_path.string() +
                             ": expected " + std::to_string(expect) + " bytes");
  }
  if (header_out) *header_out = hdr;
  return grid;
}

}  // namespace shapeseg::synth
