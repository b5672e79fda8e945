#include "pixellm/image_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>

namespace pixellm {

std::string pgm_bytes(const GlyphImage& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  std::vector<uint8_t> q = quantize_image(img);
  out.append(reinterpret_cast<const char*>(q.data()), q.size());
  return out;
}

void write_pgm(const GlyphImage& img, const std::string& path) {
  write_file(path, pgm_bytes(img));
}

GlyphImage read_pgm(const std::string& path) {
  std::string data = read_file(path);
  if (data.size() < 2 || data[0] != 'P' || data[1] != '5') {
    throw FormatError("not a P5 PGM file: " + path);
  }
  size_t pos = 2;
  auto next_int = [&]() -> long {
    while (pos < data.size() &&
           (data[pos] == ' ' || data[pos] == '\n' || data[pos] == '\t' ||
            data[pos] == '\r')) {
      ++pos;
    }
    size_t start = pos;
    while (pos < data.size() && data[pos] >= '0' && data[pos] <= '9') ++pos;
    if (pos == start) throw FormatError("malformed PGM header: " + path);
    return std::stol(data.substr(start, pos - start));
  };
  long w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255 || w <= 0 || h <= 0) {
    throw FormatError("unsupported PGM parameters: " + path);
  }
  ++pos;  // single whitespace byte after maxval
  size_t need = static_cast<size_t>(w) * h;
  if (data.size() - pos < need) throw FormatError("truncated PGM: " + path);
  GlyphImage img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.pixels.resize(need);
  for (size_t i = 0; i < need; ++i) {
    img.pixels[i] = static_cast<uint8_t>(data[pos + i]) / 255.0f;
  }
  return img;
}

namespace {

void put_u32be(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v >> 24));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>(v & 0xFF));
}

void png_chunk(std::string& out, const char type[4], const std::string& payload) {
  put_u32be(out, static_cast<uint32_t>(payload.size()));
  std::string body(type, 4);
  body += payload;
  out += body;
  uint32_t crc = static_cast<uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(body.data()),
            static_cast<uInt>(body.size())));
  put_u32be(out, crc);
}

}  // namespace

std::string png_bytes(const GlyphImage& img) {
  std::vector<uint8_t> q = quantize_image(img);
  // Raw scanlines, filter byte 0 per row.
  std::string raw;
  raw.reserve(static_cast<size_t>(img.height) * (img.width + 1));
  for (int r = 0; r < img.height; ++r) {
    raw.push_back('\0');
    raw.append(reinterpret_cast<const char*>(q.data()) +
                   static_cast<size_t>(r) * img.width,
               img.width);
  }
  uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
  std::string compressed(comp_cap, '\0');
  if (compress2(reinterpret_cast<Bytef*>(compressed.data()), &comp_cap,
                reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw Error("png: zlib compression failed");
  }
  compressed.resize(comp_cap);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32be(ihdr, static_cast<uint32_t>(img.width));
  put_u32be(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(0);   // grayscale
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // no interlace
  png_chunk(out, "IHDR", ihdr);
  png_chunk(out, "IDAT", compressed);
  png_chunk(out, "IEND", "");
  return out;
}

void write_png(const GlyphImage& img, const std::string& path) {
  write_file(path, png_bytes(img));
}

void write_image(const GlyphImage& img, const std::string& path) {
  auto ends_with = [&](const char* suffix) {
    size_t n = std::strlen(suffix);
    return path.size() >= n && path.compare(path.size() - n, n, suffix) == 0;
  };
  if (ends_with(".png")) {
    write_png(img, path);
  } else if (ends_with(".pgm")) {
    write_pgm(img, path);
  } else {
    throw InputError("unsupported image extension (use .pgm or .png): " + path);
  }
}

}  // namespace pixellm
