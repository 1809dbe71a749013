#pragma once

#include <filesystem>
#include <fstream>

#include <fdnet/tensor.hpp>

namespace fdn {

// Binary PGM (P5), 8 bit.
inline void write_pgm(const std::filesystem::path& path, int width, int height,
                      std::span<const unsigned char> pixels) {
  if (static_cast<std::size_t>(width) * height != pixels.size())
    throw ConfigError("write_pgm: pixel count does not match dimensions");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("short write to " + path.string());
}

// Min-max normalization of one feature map to 8 bit; returns the bounds used
// so the scaling is recoverable.
inline std::pair<float, float> normalize_to_u8(std::span<const float> map,
                                               std::vector<unsigned char>& out) {
  float lo = map.empty() ? 0.0f : map[0], hi = lo;
  for (float v : map) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float range = hi > lo ? hi - lo : 1.0f;
  out.resize(map.size());
  for (std::size_t i = 0; i < map.size(); ++i)
    out[i] = static_cast<unsigned char>(
        std::lround((map[i] - lo) / range * 255.0f));
  return {lo, hi};
}

}  // namespace fdn
