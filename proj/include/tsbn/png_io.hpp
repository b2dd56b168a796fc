#pragma once

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tsbn/errors.hpp"
#include "tsbn/gsim.hpp"

// Minimal PNG support: 8-bit grayscale (color type 0), non-interlaced.
// Enough for the manifest + PNG dataset layout; anything else is rejected
// with a clear error. Compression settings are fixed so re-encoding the
// same image is byte-identical.

namespace tsbn {
namespace png_detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

inline void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                         const std::vector<std::uint8_t>& payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  std::uint32_t crc = static_cast<std::uint32_t>(
      ::crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
  put_u32(out, crc);
}

inline int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace png_detail

// Encodes [0,1] pixels to 8-bit gray PNG bytes (values clamped, rounded).
inline std::vector<std::uint8_t> encode_png_gray8(const GrayImage& img) {
  const int h = img.height, w = img.width;
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(h) * (w + 1));
  for (int r = 0; r < h; ++r) {
    raw[static_cast<std::size_t>(r) * (w + 1)] = 0;  // filter: None
    for (int c = 0; c < w; ++c) {
      double v = img.at(r, c);
      v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      raw[static_cast<std::size_t>(r) * (w + 1) + 1 + c] =
          static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  if (::compress2(compressed.data(), &bound, raw.data(),
                  static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError("png encode: deflate failed");
  compressed.resize(bound);

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  png_detail::put_u32(ihdr, static_cast<std::uint32_t>(w));
  png_detail::put_u32(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // color type: grayscale
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // interlace
  png_detail::append_chunk(out, "IHDR", ihdr);
  png_detail::append_chunk(out, "IDAT", compressed);
  png_detail::append_chunk(out, "IEND", {});
  return out;
}

inline void write_png_gray8(const std::string& path, const GrayImage& img) {
  std::vector<std::uint8_t> bytes = encode_png_gray8(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

// Decodes an 8-bit grayscale PNG into [0,1] pixels.
inline GrayImage decode_png_gray8(const std::vector<std::uint8_t>& bytes,
                                  const std::string& origin = "<memory>") {
  using namespace png_detail;
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
    throw IoError("not a PNG file: " + origin);

  long w = 0, h = 0;
  bool have_ihdr = false;
  std::vector<std::uint8_t> idat;
  std::size_t pos = 8;
  while (pos + 8 <= bytes.size()) {
    std::uint32_t len = get_u32(bytes.data() + pos);
    if (pos + 12 + len > bytes.size())
      throw IoError("truncated PNG chunk: " + origin);
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const std::uint8_t* payload = bytes.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw IoError("bad IHDR: " + origin);
      w = get_u32(payload);
      h = get_u32(payload + 4);
      int depth = payload[8], color = payload[9], interlace = payload[12];
      if (depth != 8 || color != 0)
        throw IoError("unsupported PNG (8-bit grayscale required): " + origin);
      if (interlace != 0)
        throw IoError("interlaced PNG not supported: " + origin);
      have_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (!have_ihdr || w < 1 || h < 1 || idat.empty())
    throw IoError("malformed PNG: " + origin);

  std::vector<std::uint8_t> raw(static_cast<std::size_t>(h) * (w + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  int rc = ::uncompress(raw.data(), &raw_len, idat.data(),
                        static_cast<uLong>(idat.size()));
  if (rc != Z_OK || raw_len != raw.size())
    throw IoError("png inflate failed: " + origin);

  // Undo per-scanline filters.
  GrayImage img(static_cast<int>(h), static_cast<int>(w));
  std::vector<std::uint8_t> prev(static_cast<std::size_t>(w), 0);
  std::vector<std::uint8_t> cur(static_cast<std::size_t>(w), 0);
  for (long r = 0; r < h; ++r) {
    const std::uint8_t* line = raw.data() + r * (w + 1);
    int filter = line[0];
    for (long c = 0; c < w; ++c) {
      int x = line[1 + c];
      int a = c > 0 ? cur[static_cast<std::size_t>(c - 1)] : 0;
      int b = prev[static_cast<std::size_t>(c)];
      int cc = c > 0 ? prev[static_cast<std::size_t>(c - 1)] : 0;
      int v;
      switch (filter) {
        case 0: v = x; break;
        case 1: v = x + a; break;
        case 2: v = x + b; break;
        case 3: v = x + (a + b) / 2; break;
        case 4: v = x + paeth(a, b, cc); break;
        default: throw IoError("bad PNG filter type: " + origin);
      }
      cur[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(v & 0xff);
      img.at(static_cast<int>(r), static_cast<int>(c)) =
          cur[static_cast<std::size_t>(c)] / 255.0;
    }
    std::swap(prev, cur);
  }
  return img;
}

inline GrayImage read_png_gray8(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_png_gray8(bytes, path);
}

}  // namespace tsbn
