#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tvla/tensor.hpp"

namespace tvla {

// H x W x C pixel array, channel-last, row-major, values nominally in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
  std::size_t size() const { return pixels.size(); }

  friend bool operator==(const Image&, const Image&) = default;
};

// Splits an image into non-overlapping patch tokens. Tokens are in raster
// order over the patch grid; each token lists its pixels in raster order
// with channels innermost. Throws ConfigError if a side is not divisible.
Tensor patchify(const Image& image, std::size_t patch);
// Patches for a batch, stacked as [batch*tokens x patch*patch*channels].
Tensor patchify_batch(std::span<const Image> images, std::size_t patch);
Image unpatchify(const Tensor& tokens, std::size_t height, std::size_t width, std::size_t channels,
                 std::size_t patch);

// Box-filter resampling: each output pixel is the area-weighted mean of the
// input pixels it covers.
Image resize_area(const Image& image, std::size_t height, std::size_t width);

// Per-channel 8-bit storage round trip: q = round(v * 255) after clamping.
std::uint8_t quantize_u8(double v);
double dequantize_u8(std::uint8_t q);
Image quantized(const Image& image);

}  // namespace tvla
