#ifndef DCL_IMAGE_IO_HPP
#define DCL_IMAGE_IO_HPP

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "dcl/error.hpp"
#include "dcl/tensor.hpp"

namespace dcl {

/// Raw interleaved pixels as stored on disk.
struct RawImage {
  int h = 0, w = 0, channels = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;
};

namespace detail {

inline std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline RawImage read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng init failed for " + path.string());
  }
  RawImage img;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("malformed PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_strip_alpha(png);
  }
  if (depth == 16) png_set_swap(png);  // host little-endian words
  png_read_update_info(png, info);
  img.w = static_cast<int>(png_get_image_width(png, info));
  img.h = static_cast<int>(png_get_image_height(png, info));
  img.channels = png_get_channels(png, info);
  depth = png_get_bit_depth(png, info);
  img.bit_depth = depth;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * img.h);
  rows.resize(img.h);
  for (int y = 0; y < img.h; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = static_cast<std::size_t>(img.h) * img.w * img.channels;
  img.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    img.samples[i] = depth == 16 ? static_cast<std::uint16_t>(buffer[2 * i] | (buffer[2 * i + 1] << 8))
                                 : buffer[i];
  }
  return img;
}

inline void write_png(const std::filesystem::path& path, const RawImage& img) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng init failed for " + path.string());
  }
  const int bytes = img.bit_depth == 16 ? 2 : 1;
  const std::size_t rowbytes = static_cast<std::size_t>(img.w) * img.channels * bytes;
  std::vector<unsigned char> buffer(rowbytes * img.h);
  for (std::size_t i = 0; i < img.samples.size(); ++i) {
    if (bytes == 2) {
      buffer[2 * i] = static_cast<unsigned char>(img.samples[i] >> 8);  // PNG is big-endian
      buffer[2 * i + 1] = static_cast<unsigned char>(img.samples[i] & 0xFF);
    } else {
      buffer[i] = static_cast<unsigned char>(img.samples[i]);
    }
  }
  std::vector<png_bytep> rows(img.h);
  for (int y = 0; y < img.h; ++y) rows[y] = buffer.data() + y * rowbytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG write failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.w, img.h, img.bit_depth,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline RawImage read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::string magic;
  is >> magic;
  if (magic != "P5" && magic != "P6") {
    throw IoError(path.string() + ": only binary P5/P6 netpbm files are supported");
  }
  auto next_int = [&]() {
    int v = 0;
    while (is >> std::ws && is.peek() == '#') {
      std::string skip;
      std::getline(is, skip);
    }
    if (!(is >> v)) throw IoError(path.string() + ": malformed netpbm header");
    return v;
  };
  RawImage img;
  img.w = next_int();
  img.h = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw IoError(path.string() + ": only maxval 255 is supported");
  is.get();
  img.channels = magic == "P6" ? 3 : 1;
  const std::size_t n = static_cast<std::size_t>(img.h) * img.w * img.channels;
  std::vector<unsigned char> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  if (!is) throw IoError(path.string() + ": truncated netpbm payload");
  img.samples.assign(buf.begin(), buf.end());
  return img;
}

inline void write_pnm(const std::filesystem::path& path, const RawImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << (img.channels == 3 ? "P6" : "P5") << '\n' << img.w << ' ' << img.h << "\n255\n";
  for (auto s : img.samples) os.put(static_cast<char>(s));
  if (!os) throw IoError("write failed: " + path.string());
}

inline std::uint16_t quantize8(double v) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

inline RawImage read_raw_image(const std::filesystem::path& path) {
  const std::string e = detail::lower_ext(path);
  if (e == ".png") return detail::read_png(path);
  if (e == ".ppm" || e == ".pgm" || e == ".pnm") return detail::read_pnm(path);
  throw IoError("unsupported image format: " + path.string());
}

inline void write_raw_image(const std::filesystem::path& path, const RawImage& img) {
  const std::string e = detail::lower_ext(path);
  if (e == ".png") return detail::write_png(path, img);
  if (e == ".ppm" || e == ".pgm" || e == ".pnm") {
    if (img.bit_depth != 8) throw IoError("netpbm output supports 8-bit samples only");
    return detail::write_pnm(path, img);
  }
  throw IoError("unsupported image format: " + path.string());
}

/// 1x3xHxW in [0, 1]; gray files are replicated across channels.
inline Tensor load_rgb(const std::filesystem::path& path) {
  const RawImage img = read_raw_image(path);
  const double scale = img.bit_depth == 16 ? 65535.0 : 255.0;
  Tensor t(1, 3, img.h, img.w);
  const std::size_t N = static_cast<std::size_t>(img.h) * img.w;
  for (int c = 0; c < 3; ++c) {
    auto plane = t.plane(0, c);
    const int src = img.channels == 3 ? c : 0;
    for (std::size_t i = 0; i < N; ++i) plane[i] = img.samples[i * img.channels + src] / scale;
  }
  return t;
}

/// 1x1xHxW in [0, 1]; colour files are averaged.
inline Tensor load_gray(const std::filesystem::path& path) {
  const RawImage img = read_raw_image(path);
  const double scale = img.bit_depth == 16 ? 65535.0 : 255.0;
  Tensor t(1, 1, img.h, img.w);
  const std::size_t N = static_cast<std::size_t>(img.h) * img.w;
  for (std::size_t i = 0; i < N; ++i) {
    double s = 0;
    for (int c = 0; c < img.channels; ++c) s += img.samples[i * img.channels + c];
    t[i] = s / img.channels / scale;
  }
  return t;
}

/// Binary mask: gray level >= 0.5 (128 of 255) is salient.
inline Tensor load_ground_truth(const std::filesystem::path& path) {
  Tensor g = load_gray(path);
  for (double& v : g.data()) v = v >= 0.5 ? 1.0 : 0.0;
  return g;
}

/// 8-bit grayscale, value round(255 * clamp(v, 0, 1)).
inline void save_gray8(const std::filesystem::path& path, const Tensor& map) {
  RawImage img{map.h(), map.w(), 1, 8, {}};
  img.samples.resize(static_cast<std::size_t>(map.h()) * map.w());
  const auto p = map.plane(0, 0);
  for (std::size_t i = 0; i < img.samples.size(); ++i) img.samples[i] = detail::quantize8(p[i]);
  write_raw_image(path, img);
}

inline void save_rgb8(const std::filesystem::path& path, const Tensor& image) {
  if (image.c() != 3) throw ShapeError("save_rgb8 expects three channels");
  RawImage img{image.h(), image.w(), 3, 8, {}};
  const std::size_t N = static_cast<std::size_t>(image.h()) * image.w();
  img.samples.resize(3 * N);
  for (int c = 0; c < 3; ++c) {
    const auto p = image.plane(0, c);
    for (std::size_t i = 0; i < N; ++i) img.samples[3 * i + c] = detail::quantize8(p[i]);
  }
  write_raw_image(path, img);
}

inline void save_labels16(const std::filesystem::path& path, int h, int w,
                          const std::vector<int>& labels) {
  RawImage img{h, w, 1, 16, {}};
  img.samples.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 65535) throw IoError("label does not fit 16 bits");
    img.samples[i] = static_cast<std::uint16_t>(labels[i]);
  }
  detail::write_png(path, img);
}

inline std::vector<int> load_labels16(const std::filesystem::path& path, int* h, int* w) {
  const RawImage img = detail::read_png(path);
  if (img.channels != 1) throw IoError(path.string() + ": label map must be single-channel");
  *h = img.h;
  *w = img.w;
  return {img.samples.begin(), img.samples.end()};
}

}  // namespace dcl

#endif  // DCL_IMAGE_IO_HPP
