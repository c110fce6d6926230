#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "acaptcha/image_pool.hpp"

namespace acaptcha {

class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit RGB, row-major, no padding.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  std::uint8_t* pixel(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* pixel(int x, int y) const {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
};

/// Decodes PNG or JPEG (sniffed from the signature). Alpha is composited
/// onto white. Throws DecodeError.
Raster decode_image(std::span<const std::uint8_t> bytes);

/// Encodes as 8-bit RGB PNG with fixed zlib level and filter, no ancillary chunks.
std::vector<std::uint8_t> encode_png(const Raster& raster);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Parameters of one transform, all derived from the seed.
struct TransformParams {
  int crop_left = 0;
  int crop_top = 0;
  int crop_right = 0;
  int crop_bottom = 0;
  /// Horizontal sampling phase in 1/65536 output pixels, in [-32768, 32767].
  std::int32_t phase_q16 = 0;
  /// Brightness offset in 1/1000 of full scale, in [-80, 80].
  int brightness_permille = 0;
  /// Contrast gain delta in 1/1000, in [-80, 80].
  int contrast_permille = 0;
};

TransformParams derive_transform_params(TransformSeed seed, int width, int height);

/// Applies crop, resize to kCanonicalSize square and tone jitter. Integer-only
/// arithmetic, so results are identical on every platform.
Raster apply_transform(const Raster& input, const TransformParams& params);

}  // namespace acaptcha
