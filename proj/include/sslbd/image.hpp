#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace sslbd {

/// 8-bit interleaved (HWC) image. Only 3-channel RGB is used by the pipeline,
/// but PNG loading keeps whatever channel count the file has so callers can
/// reject it with a proper error.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c = 3, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  std::uint8_t& at(int x, int y, int c) { return pixels[index(x, y, c)]; }
  std::uint8_t at(int x, int y, int c) const { return pixels[index(x, y, c)]; }

  bool empty() const { return pixels.empty(); }
  friend bool operator==(const Image&, const Image&) = default;
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

Image read_png(const std::filesystem::path& path);
ImageSize read_png_size(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

/// Bilinear resampling with half-pixel centers (align_corners = false).
/// Source coordinates below zero are clamped to the first pixel, which is the
/// behaviour of the common tensor-library resamplers. Results are rounded to
/// the nearest integer.
Image resize_bilinear(const Image& src, int out_width, int out_height);

/// Rotate by k quarter turns counter-clockwise.
Image rotate90(const Image& src, int quarter_turns);

}  // namespace sslbd
