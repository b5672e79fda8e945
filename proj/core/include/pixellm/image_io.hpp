#pragma once

#include <string>
#include <vector>

#include "pixellm/render.hpp"

namespace pixellm {

// P5 binary PGM: "P5\n<w> <h>\n255\n" followed by width*height bytes,
// intensity = round(255 * pixel).
std::string pgm_bytes(const GlyphImage& img);
void write_pgm(const GlyphImage& img, const std::string& path);
GlyphImage read_pgm(const std::string& path);  // throws FormatError

// 8-bit grayscale PNG (zlib-compressed).
std::string png_bytes(const GlyphImage& img);
void write_png(const GlyphImage& img, const std::string& path);

// Dispatches on the file extension: .pgm or .png.
void write_image(const GlyphImage& img, const std::string& path);

}  // namespace pixellm
