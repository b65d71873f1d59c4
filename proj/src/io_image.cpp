#include "mcssl/io_image.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>

namespace mcssl {
namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

Image read_png_file(const std::string& path, FILE* fp) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng init failed");
  }
  std::vector<png_bytep> rows;
  std::vector<uint8_t> buf;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path + ": PNG decode failed");
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  size_t rowbytes = png_get_rowbytes(png, info);
  buf.resize(rowbytes * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = buf.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(static_cast<int64_t>(h), static_cast<int64_t>(w), 3);
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        img.at(y, x, c) = buf[static_cast<size_t>(y) * rowbytes + static_cast<size_t>(x) * 3 +
                              static_cast<size_t>(c)] /
                          255.f;
  return img;
}

Image read_ppm_file(const std::string& path, FILE* fp) {
  auto next_token = [&]() -> std::string {
    std::string tok;
    int ch;
    while ((ch = std::fgetc(fp)) != EOF) {
      if (ch == '#') {
        while ((ch = std::fgetc(fp)) != EOF && ch != '\n') {
        }
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(ch));
    }
    return tok;
  };
  std::string magic = next_token();
  if (magic != "P6") throw IoError(path + ": unsupported PPM variant " + magic);
  std::string ws = next_token(), hs = next_token(), ms = next_token();
  long w = std::strtol(ws.c_str(), nullptr, 10);
  long h = std::strtol(hs.c_str(), nullptr, 10);
  long maxval = std::strtol(ms.c_str(), nullptr, 10);
  if (w <= 0 || h <= 0 || maxval != 255) throw IoError(path + ": malformed PPM header");
  std::vector<uint8_t> buf(static_cast<size_t>(w) * h * 3);
  if (std::fread(buf.data(), 1, buf.size(), fp) != buf.size())
    throw IoError(path + ": truncated PPM payload");
  Image img(h, w, 3);
  for (size_t i = 0; i < buf.size(); ++i) img.px[i] = buf[i] / 255.f;
  return img;
}

uint8_t to_byte(float v) {
  float s = v * 255.f + 0.5f;
  if (s < 0) s = 0;
  if (s > 255) s = 255;
  return static_cast<uint8_t>(s);
}

}  // namespace

Image read_image(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError(path + ": cannot open file");
  uint8_t sig[8] = {0};
  size_t got = std::fread(sig, 1, 8, fp.get());
  std::rewind(fp.get());
  if (got >= 8 && !png_sig_cmp(sig, 0, 8)) return read_png_file(path, fp.get());
  if (got >= 2 && sig[0] == 'P' && sig[1] == '6') return read_ppm_file(path, fp.get());
  throw IoError(path + ": unsupported image format (PNG and PPM accepted)");
}

void write_png(const std::string& path, const Image& img) {
  if (img.c != 3) throw IoError("write_png expects a 3-channel image");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError(path + ": cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng init failed");
  }
  std::vector<uint8_t> buf(static_cast<size_t>(img.h) * img.w * 3);
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path + ": PNG encode failed");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = to_byte(img.px[i]);
  for (int64_t y = 0; y < img.h; ++y)
    rows[static_cast<size_t>(y)] = buf.data() + static_cast<size_t>(y) * img.w * 3;
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_ppm(const std::string& path, const Image& img) {
  if (img.c != 3) throw IoError("write_ppm expects a 3-channel image");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError(path + ": cannot open for writing");
  std::fprintf(fp.get(), "P6\n%lld %lld\n255\n", static_cast<long long>(img.w),
               static_cast<long long>(img.h));
  std::vector<uint8_t> buf(img.px.size());
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = to_byte(img.px[i]);
  if (std::fwrite(buf.data(), 1, buf.size(), fp.get()) != buf.size())
    throw IoError(path + ": short write");
}

void write_pgm(const std::string& path, int64_t h, int64_t w, const std::vector<uint8_t>& gray) {
  if (static_cast<int64_t>(gray.size()) != h * w) throw IoError("write_pgm: size mismatch");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError(path + ": cannot open for writing");
  std::fprintf(fp.get(), "P5\n%lld %lld\n255\n", static_cast<long long>(w),
               static_cast<long long>(h));
  if (std::fwrite(gray.data(), 1, gray.size(), fp.get()) != gray.size())
    throw IoError(path + ": short write");
}

}  // namespace mcssl
