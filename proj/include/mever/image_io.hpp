#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace mever::data {

struct Raster {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;  // HWC
};

// 8-bit RGB PNG. Other PNG color types are converted to RGB on read.
Raster read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Raster& raster);

}  // namespace mever::data
