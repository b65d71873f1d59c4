#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "mcssl/image.hpp"

namespace mcssl {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Reads a PNG or binary PPM (P6) file into an RGB float image in [0, 1].
// Other formats are rejected.
Image read_image(const std::string& path);

// 8-bit RGB PNG.
void write_png(const std::string& path, const Image& img);

// Binary PPM (P6), 8-bit RGB.
void write_ppm(const std::string& path, const Image& img);

// Binary PGM (P5) from bytes (used for mask dumps).
void write_pgm(const std::string& path, int64_t h, int64_t w, const std::vector<uint8_t>& gray);

}  // namespace mcssl
