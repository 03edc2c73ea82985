#pragma once

// Binary container for tensor collections.
//
//   "PEPS1" magic (5 bytes), then per tensor:
//     rank    u32
//     extents u64 x rank
//     payload f64 x product(extents), row-major
//
// All integers and floats are little-endian. Lattice metadata lives in a
// JSON sidecar next to the binary file (`<path>.json`).

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metts/errors.hpp"
#include "metts/tensor.hpp"

namespace metts {

inline constexpr std::array<char, 5> kCheckpointMagic{'P', 'E', 'P', 'S', '1'};

namespace detail {

template <class T>
void write_le(std::ostream& os, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(bytes.data(), sizeof(T));
}

template <class T>
bool read_le(std::istream& is, T& value) {
  std::array<char, sizeof(T)> bytes;
  if (!is.read(bytes.data(), sizeof(T))) return false;
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  std::memcpy(&value, bytes.data(), sizeof(T));
  return true;
}

}  // namespace detail

inline std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

inline void write_tensors(const std::filesystem::path& path, const std::vector<Tensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot open checkpoint for writing: " + path.string());
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  for (const auto& t : tensors) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) detail::write_le<std::uint64_t>(os, e);
    for (double x : t.data()) detail::write_le<double>(os, x);
  }
  if (!os) throw InputError("failed writing checkpoint: " + path.string());
}

inline std::vector<Tensor> read_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint: " + path.string());
  std::array<char, 5> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic)
    throw InputError("checkpoint version mismatch (bad magic) in " + path.string());
  std::vector<Tensor> out;
  std::uint32_t rank = 0;
  while (detail::read_le(is, rank)) {
    Shape shape(rank);
    for (auto& e : shape) {
      std::uint64_t v = 0;
      if (!detail::read_le(is, v)) throw InputError("truncated checkpoint: " + path.string());
      e = static_cast<std::size_t>(v);
    }
    std::vector<double> data(shape_volume(shape));
    for (auto& x : data)
      if (!detail::read_le(is, x)) throw InputError("truncated checkpoint: " + path.string());
    out.emplace_back(std::move(shape), std::move(data));
  }
  return out;
}

inline void write_checkpoint(const std::filesystem::path& path, const std::vector<Tensor>& tensors,
                             const nlohmann::json& sidecar) {
  write_tensors(path, tensors);
  std::ofstream js(sidecar_path(path), std::ios::trunc);
  js << sidecar.dump(2) << '\n';
}

inline nlohmann::json read_sidecar(const std::filesystem::path& path) {
  std::ifstream js(sidecar_path(path));
  if (!js) throw InputError("missing checkpoint sidecar for " + path.string());
  return nlohmann::json::parse(js);
}

}  // namespace metts
