#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tfti2i {

/// 8-bit image, row-major with interleaved channels (1 = gray, 3 = RGB).
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const noexcept {
    return pixels[(y * width + x) * channels + c];
  }
  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) noexcept {
    return pixels[(y * width + x) * channels + c];
  }

  static Image filled(std::size_t width, std::size_t height, std::size_t channels,
                      std::uint8_t value);
};

/// Binary PGM (P5) / PPM (P6) with maxval <= 255.
Image read_pnm(const std::filesystem::path& path);
Image parse_pnm(const std::string& bytes);
std::string encode_pnm(const Image& image);
void write_pnm(const std::filesystem::path& path, const Image& image);

}  // namespace tfti2i
