#include "tvla/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tvla/errors.hpp"

namespace tvla {

Tensor patchify(const Image& image, std::size_t patch) {
  if (patch == 0 || image.height % patch != 0 || image.width % patch != 0) {
    throw ConfigError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                      " is not divisible into " + std::to_string(patch) + "-pixel patches");
  }
  const std::size_t gh = image.height / patch;
  const std::size_t gw = image.width / patch;
  const std::size_t c = image.channels;
  const std::size_t dim = patch * patch * c;
  Tensor out({gh * gw, dim});
  for (std::size_t ty = 0; ty < gh; ++ty) {
    for (std::size_t tx = 0; tx < gw; ++tx) {
      double* dst = out.data() + (ty * gw + tx) * dim;
      for (std::size_t py = 0; py < patch; ++py) {
        const double* src = image.pixels.data() + ((ty * patch + py) * image.width + tx * patch) * c;
        std::copy(src, src + patch * c, dst + py * patch * c);
      }
    }
  }
  return out;
}

Tensor patchify_batch(std::span<const Image> images, std::size_t patch) {
  if (images.empty()) throw PreconditionError("patchify_batch on an empty batch");
  const Tensor first = patchify(images[0], patch);
  const std::size_t t = first.rows();
  const std::size_t d = first.cols();
  Tensor out({images.size() * t, d});
  std::copy(first.data(), first.data() + first.size(), out.data());
  for (std::size_t b = 1; b < images.size(); ++b) {
    if (images[b].height != images[0].height || images[b].width != images[0].width ||
        images[b].channels != images[0].channels) {
      throw DimensionError("patchify_batch: images in a batch must share dimensions");
    }
    const Tensor p = patchify(images[b], patch);
    std::copy(p.data(), p.data() + p.size(), out.data() + b * t * d);
  }
  return out;
}

Image unpatchify(const Tensor& tokens, std::size_t height, std::size_t width, std::size_t channels,
                 std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) throw ConfigError("unpatchify: non-divisible size");
  const std::size_t gw = width / patch;
  const std::size_t dim = patch * patch * channels;
  if (tokens.rows() != (height / patch) * gw || tokens.cols() != dim) {
    throw DimensionError("unpatchify: token tensor " + shape_str(tokens.shape()) + " does not match image size");
  }
  Image img(height, width, channels);
  for (std::size_t tok = 0; tok < tokens.rows(); ++tok) {
    const std::size_t ty = tok / gw;
    const std::size_t tx = tok % gw;
    const double* src = tokens.data() + tok * dim;
    for (std::size_t py = 0; py < patch; ++py) {
      double* dst = img.pixels.data() + ((ty * patch + py) * width + tx * patch) * channels;
      std::copy(src + py * patch * channels, src + (py + 1) * patch * channels, dst);
    }
  }
  return img;
}

Image resize_area(const Image& image, std::size_t height, std::size_t width) {
  if (height == image.height && width == image.width) return image;
  if (height == 0 || width == 0) throw ConfigError("resize_area to an empty image");
  Image out(height, width, image.channels);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  for (std::size_t oy = 0; oy < height; ++oy) {
    const double y0 = oy * sy;
    const double y1 = y0 + sy;
    for (std::size_t ox = 0; ox < width; ++ox) {
      const double x0 = ox * sx;
      const double x1 = x0 + sx;
      for (std::size_t c = 0; c < image.channels; ++c) {
        double acc = 0.0;
        for (auto iy = static_cast<std::size_t>(y0); iy < image.height && static_cast<double>(iy) < y1; ++iy) {
          const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
          for (auto ix = static_cast<std::size_t>(x0); ix < image.width && static_cast<double>(ix) < x1; ++ix) {
            const double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
            acc += wy * wx * image.at(iy, ix, c);
          }
        }
        out.at(oy, ox, c) = acc / (sy * sx);
      }
    }
  }
  return out;
}

std::uint8_t quantize_u8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

double dequantize_u8(std::uint8_t q) { return static_cast<double>(q) / 255.0; }

Image quantized(const Image& image) {
  Image out = image;
  for (auto& v : out.pixels) v = dequantize_u8(quantize_u8(v));
  return out;
}

}  // namespace tvla
