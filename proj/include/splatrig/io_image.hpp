#pragma once

#include "splatrig/core.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>

namespace splatrig {

// ---------------------------------------------------------------------------
// Image file I/O: 8-bit PNG (RGB / gray, via zlib), ASCII PPM (P3), and a raw
// float dump for depth/normal buffers:
//   "SPLATRAW <width> <height> <channels>\n" + little-endian float32 payload,
// row-major, channel-interleaved.
// ---------------------------------------------------------------------------

namespace detail {

inline void append_be32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x >> 24));
  v.push_back(static_cast<uint8_t>(x >> 16));
  v.push_back(static_cast<uint8_t>(x >> 8));
  v.push_back(static_cast<uint8_t>(x));
}

inline uint32_t read_be32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) |
         (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline void png_chunk(std::vector<uint8_t>& out, const char tag[4],
                      const std::vector<uint8_t>& payload) {
  append_be32(out, static_cast<uint32_t>(payload.size()));
  size_t crc_start = out.size();
  out.insert(out.end(), tag, tag + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  uLong crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  append_be32(out, static_cast<uint32_t>(crc));
}

inline std::vector<uint8_t> zlib_compress(const std::vector<uint8_t>& raw) {
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> out(bound);
  if (compress2(out.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                Z_BEST_SPEED) != Z_OK)
    throw RunError("zlib compression failed");
  out.resize(bound);
  return out;
}

inline std::vector<uint8_t> zlib_decompress(const uint8_t* data, size_t size,
                                            size_t expected) {
  std::vector<uint8_t> out(expected);
  uLongf dest_len = static_cast<uLongf>(expected);
  if (uncompress(out.data(), &dest_len, data, static_cast<uLong>(size)) != Z_OK ||
      dest_len != expected)
    throw RunError("zlib decompression failed");
  return out;
}

inline uint8_t quantize(double v) {
  double c = std::min(1.0, std::max(0.0, v));
  return static_cast<uint8_t>(std::lround(c * 255.0));
}

// Paeth predictor, used when decoding filter type 4.
inline int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace detail

/// Writes an 8-bit PNG. channels must be 1 (gray) or 3 (RGB); values are
/// clamped to [0,1] and rounded.
inline void write_png(const std::string& path, const ImageBuf& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ValidationError("png writer supports 1 or 3 channels");
  const int w = img.width, h = img.height, ch = img.channels;

  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(h) * (1 + static_cast<size_t>(w) * ch));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);  // filter: none
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c)
        raw.push_back(detail::quantize(img.at(x, y, c)));
  }

  std::vector<uint8_t> out;
  static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  out.insert(out.end(), sig, sig + 8);

  std::vector<uint8_t> ihdr;
  detail::append_be32(ihdr, static_cast<uint32_t>(w));
  detail::append_be32(ihdr, static_cast<uint32_t>(h));
  ihdr.push_back(8);                      // bit depth
  ihdr.push_back(ch == 3 ? 2 : 0);        // color type
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", detail::zlib_compress(raw));
  detail::png_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw RunError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
}

/// Reads an 8-bit gray/RGB/RGBA PNG (non-interlaced) into doubles in [0,1].
/// Alpha is dropped on RGBA input.
inline ImageBuf read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw RunError("cannot read " + path);
  std::vector<uint8_t> data((std::istreambuf_iterator<char>(f)),
                            std::istreambuf_iterator<char>());
  static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (data.size() < 8 || std::memcmp(data.data(), sig, 8) != 0)
    throw ValidationError(path + ": not a png file");

  int w = 0, h = 0, file_ch = 0;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  while (pos + 8 <= data.size()) {
    uint32_t len = detail::read_be32(&data[pos]);
    if (pos + 12 + len > data.size())
      throw ValidationError(path + ": truncated png chunk");
    const char* tag = reinterpret_cast<const char*>(&data[pos + 4]);
    const uint8_t* payload = &data[pos + 8];
    if (std::memcmp(tag, "IHDR", 4) == 0) {
      w = static_cast<int>(detail::read_be32(payload));
      h = static_cast<int>(detail::read_be32(payload + 4));
      int depth = payload[8], color = payload[9];
      if (depth != 8) throw ValidationError(path + ": only 8-bit png supported");
      if (color == 0) file_ch = 1;
      else if (color == 2) file_ch = 3;
      else if (color == 6) file_ch = 4;
      else throw ValidationError(path + ": unsupported png color type");
      if (payload[12] != 0)
        throw ValidationError(path + ": interlaced png not supported");
    } else if (std::memcmp(tag, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(tag, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (w <= 0 || h <= 0 || idat.empty())
    throw ValidationError(path + ": malformed png");

  const size_t stride = static_cast<size_t>(w) * file_ch;
  std::vector<uint8_t> raw =
      detail::zlib_decompress(idat.data(), idat.size(), (stride + 1) * h);

  // Undo per-scanline filters in place.
  std::vector<uint8_t> prev(stride, 0);
  const int out_ch = (file_ch == 4) ? 3 : file_ch;
  ImageBuf img(w, h, out_ch);
  std::vector<uint8_t> cur(stride);
  for (int y = 0; y < h; ++y) {
    uint8_t filter = raw[(stride + 1) * y];
    const uint8_t* src = &raw[(stride + 1) * y + 1];
    for (size_t i = 0; i < stride; ++i) {
      int a = (i >= static_cast<size_t>(file_ch)) ? cur[i - file_ch] : 0;
      int b = prev[i];
      int c = (i >= static_cast<size_t>(file_ch)) ? prev[i - file_ch] : 0;
      int x = src[i];
      switch (filter) {
        case 0: break;
        case 1: x += a; break;
        case 2: x += b; break;
        case 3: x += (a + b) / 2; break;
        case 4: x += detail::paeth(a, b, c); break;
        default: throw ValidationError(path + ": bad png filter type");
      }
      cur[i] = static_cast<uint8_t>(x & 0xff);
    }
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < out_ch; ++c)
        img.at(x, y, c) = cur[static_cast<size_t>(x) * file_ch + c] / 255.0;
    std::swap(prev, cur);
  }
  return img;
}

inline void write_ppm(const std::string& path, const ImageBuf& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ValidationError("ppm writer supports 1 or 3 channels");
  std::ofstream f(path);
  if (!f) throw RunError("cannot write " + path);
  f << "P3\n" << img.width << " " << img.height << "\n255\n";
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      int r = detail::quantize(img.at(x, y, 0));
      int g = detail::quantize(img.at(x, y, img.channels == 3 ? 1 : 0));
      int b = detail::quantize(img.at(x, y, img.channels == 3 ? 2 : 0));
      f << r << " " << g << " " << b << "\n";
    }
  }
}

inline void write_raw_dump(const std::string& path, const ImageBuf& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RunError("cannot write " + path);
  char header[64];
  int n = std::snprintf(header, sizeof(header), "SPLATRAW %d %d %d\n",
                        img.width, img.height, img.channels);
  f.write(header, n);
  std::vector<float> payload(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i)
    payload[i] = static_cast<float>(img.data[i]);
  f.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
}

inline ImageBuf read_raw_dump(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw RunError("cannot read " + path);
  std::string magic;
  int w = 0, h = 0, ch = 0;
  f >> magic >> w >> h >> ch;
  if (magic != "SPLATRAW" || w <= 0 || h <= 0 || ch <= 0)
    throw ValidationError(path + ": bad raw dump header");
  f.get();  // consume the newline terminating the header
  ImageBuf img(w, h, ch);
  std::vector<float> payload(img.data.size());
  f.read(reinterpret_cast<char*>(payload.data()),
         static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!f) throw ValidationError(path + ": truncated raw dump");
  for (size_t i = 0; i < payload.size(); ++i) img.data[i] = payload[i];
  return img;
}

}  // namespace splatrig
