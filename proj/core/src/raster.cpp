#include "acaptcha/raster.hpp"

#include <png.h>

#include <algorithm>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

namespace acaptcha {
namespace {

bool is_png(std::span<const std::uint8_t> b) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  return b.size() >= 8 && std::memcmp(b.data(), sig, 8) == 0;
}

bool is_jpeg(std::span<const std::uint8_t> b) {
  return b.size() >= 3 && b[0] == 0xff && b[1] == 0xd8 && b[2] == 0xff;
}

constexpr int kMaxDimension = 16384;

Raster decode_png(std::span<const std::uint8_t> bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    std::string msg = std::string("png: ") + image.message;
    png_image_free(&image);
    throw DecodeError(msg);
  }
  if (image.width == 0 || image.height == 0 || image.width > kMaxDimension ||
      image.height > kMaxDimension) {
    png_image_free(&image);
    throw DecodeError("png: unsupported dimensions");
  }
  image.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> rgba(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgba.data(), 0, nullptr)) {
    std::string msg = std::string("png: ") + image.message;
    png_image_free(&image);
    throw DecodeError(msg);
  }

  Raster out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.rgb.resize(static_cast<std::size_t>(out.width) * out.height * 3);
  const std::size_t npix = static_cast<std::size_t>(out.width) * out.height;
  for (std::size_t i = 0; i < npix; ++i) {
    const unsigned a = rgba[i * 4 + 3];
    for (int c = 0; c < 3; ++c) {
      // Composite onto white, rounded.
      const unsigned v = rgba[i * 4 + c];
      out.rgb[i * 3 + c] = static_cast<std::uint8_t>((v * a + 255u * (255u - a) + 127u) / 255u);
    }
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void jpeg_silence(j_common_ptr, int) {}

// Only trivially destructible locals may live in this frame: longjmp skips destructors.
bool decode_jpeg_into(std::span<const std::uint8_t> bytes, Raster& out, std::string& error) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager jerr{};
  cinfo.err = jpeg_std_error(&jerr.base);
  jerr.base.error_exit = jpeg_error_exit;
  jerr.base.emit_message = jpeg_silence;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    error = jerr.message;
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  cinfo.dct_method = JDCT_ISLOW;
  cinfo.do_fancy_upsampling = TRUE;
  jpeg_start_decompress(&cinfo);
  if (cinfo.output_width == 0 || cinfo.output_height == 0 ||
      cinfo.output_width > kMaxDimension || cinfo.output_height > kMaxDimension ||
      cinfo.output_components != 3) {
    jpeg_destroy_decompress(&cinfo);
    error = "unsupported jpeg layout";
    return false;
  }
  out.width = static_cast<int>(cinfo.output_width);
  out.height = static_cast<int>(cinfo.output_height);
  out.rgb.resize(static_cast<std::size_t>(out.width) * out.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

void png_flush_noop(png_structp) {}

// splitmix64 finaliser; iterated to draw each parameter from the seed alone.
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Uniform integer in [lo, hi] from one 64-bit draw. The modulo bias is
// below 2^-50 for the tiny ranges used here.
int draw_range(std::uint64_t bits, int lo, int hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo + 1);
  return lo + static_cast<int>(bits % span);
}

std::uint8_t clamp_u8(std::int64_t v) {
  return static_cast<std::uint8_t>(std::clamp<std::int64_t>(v, 0, 255));
}

// Signed division rounding half away from zero.
std::int64_t div_round(std::int64_t a, std::int64_t b) {
  return a >= 0 ? (a + b / 2) / b : -((-a + b / 2) / b);
}

}  // namespace

Raster decode_image(std::span<const std::uint8_t> bytes) {
  if (is_png(bytes)) return decode_png(bytes);
  if (is_jpeg(bytes)) {
    Raster out;
    std::string error;
    if (!decode_jpeg_into(bytes, out, error)) throw DecodeError("jpeg: " + error);
    return out;
  }
  throw DecodeError("unrecognised image format");
}

std::vector<std::uint8_t> encode_png(const Raster& raster) {
  if (raster.width <= 0 || raster.height <= 0 ||
      raster.rgb.size() != static_cast<std::size_t>(raster.width) * raster.height * 3) {
    throw std::invalid_argument("encode_png: raster shape mismatch");
  }
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png encode failed");
  }
  png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
  png_set_compression_level(png, 6);
  png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_FILTER_SUB);
  png_set_IHDR(png, info, static_cast<png_uint_32>(raster.width),
               static_cast<png_uint_32>(raster.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_BASE, PNG_FILTER_TYPE_BASE);
  png_write_info(png, info);
  for (int y = 0; y < raster.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(raster.pixel(0, y)));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TransformParams derive_transform_params(TransformSeed seed, int width, int height) {
  std::uint64_t state = seed.seed;
  auto next = [&state] {
    state = mix64(state);
    return state;
  };
  // Edge crops are at most 6% of the dimension, and never empty the image.
  const int max_x = width * 6 / 100;
  const int max_y = height * 6 / 100;
  TransformParams p;
  p.crop_left = draw_range(next(), 0, max_x);
  p.crop_right = draw_range(next(), 0, max_x);
  p.crop_top = draw_range(next(), 0, max_y);
  p.crop_bottom = draw_range(next(), 0, max_y);
  p.phase_q16 = static_cast<std::int32_t>(draw_range(next(), -32768, 32767));
  p.brightness_permille = draw_range(next(), -80, 80);
  p.contrast_permille = draw_range(next(), -80, 80);
  return p;
}

Raster apply_transform(const Raster& input, const TransformParams& params) {
  const int src_w = input.width - params.crop_left - params.crop_right;
  const int src_h = input.height - params.crop_top - params.crop_bottom;
  if (src_w <= 0 || src_h <= 0) throw std::invalid_argument("crop removes the whole image");

  constexpr int size = kCanonicalSize;
  Raster out;
  out.width = size;
  out.height = size;
  out.rgb.resize(static_cast<std::size_t>(size) * size * 3);

  // Source coordinate of output pixel centre i, in Q16:
  //   ((i + 0.5 + phase) * src / size - 0.5), clamped to [0, src - 1].
  auto source_q16 = [](int i, int src, std::int64_t phase_q16) {
    const std::int64_t centre = (static_cast<std::int64_t>(i) << 16) + 32768 + phase_q16;
    std::int64_t pos = centre * src / size - 32768;
    return std::clamp<std::int64_t>(pos, 0, static_cast<std::int64_t>(src - 1) << 16);
  };

  // Tone: out = (v - 128) * (1000 + contrast) / 1000 + 128 + brightness * 255 / 1000.
  const std::int64_t shift = div_round(std::int64_t{params.brightness_permille} * 255, 1000);
  std::uint8_t tone[256];
  for (int v = 0; v < 256; ++v) {
    const std::int64_t scaled = div_round(std::int64_t{v - 128} * (1000 + params.contrast_permille), 1000);
    tone[v] = clamp_u8(scaled + 128 + shift);
  }

  std::vector<std::int64_t> xs(size);
  for (int x = 0; x < size; ++x) xs[x] = source_q16(x, src_w, params.phase_q16);

  for (int y = 0; y < size; ++y) {
    const std::int64_t sy = source_q16(y, src_h, 0);
    const int y0 = static_cast<int>(sy >> 16);
    const int y1 = std::min(y0 + 1, src_h - 1);
    const std::int64_t fy = sy & 0xffff;
    for (int x = 0; x < size; ++x) {
      const std::int64_t sx = xs[x];
      const int x0 = static_cast<int>(sx >> 16);
      const int x1 = std::min(x0 + 1, src_w - 1);
      const std::int64_t fx = sx & 0xffff;
      const std::uint8_t* p00 = input.pixel(params.crop_left + x0, params.crop_top + y0);
      const std::uint8_t* p10 = input.pixel(params.crop_left + x1, params.crop_top + y0);
      const std::uint8_t* p01 = input.pixel(params.crop_left + x0, params.crop_top + y1);
      const std::uint8_t* p11 = input.pixel(params.crop_left + x1, params.crop_top + y1);
      std::uint8_t* dst = out.pixel(x, y);
      for (int c = 0; c < 3; ++c) {
        const std::int64_t top = p00[c] * (65536 - fx) + p10[c] * fx;
        const std::int64_t bottom = p01[c] * (65536 - fx) + p11[c] * fx;
        const std::int64_t v = (top * (65536 - fy) + bottom * fy + (std::int64_t{1} << 31)) >> 32;
        dst[c] = tone[clamp_u8(v)];
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> transform(std::span<const std::uint8_t> image_bytes, TransformSeed seed) {
  const Raster input = decode_image(image_bytes);
  const TransformParams params = derive_transform_params(seed, input.width, input.height);
  return encode_png(apply_transform(input, params));
}

}  // namespace acaptcha
