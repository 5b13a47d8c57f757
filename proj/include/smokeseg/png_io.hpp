#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <zlib.h>

#include "smokeseg/errors.hpp"
#include "smokeseg/image.hpp"

// Minimal PNG reader/writer over zlib. Writes 8-bit gray/RGB/RGBA,
// non-interlaced, filter type 0 on every scanline. Reads any 8-bit
// gray/RGB/RGBA non-interlaced file (all five scanline filters).

namespace smokeseg::png {

namespace detail {

inline void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32_be(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                         const std::vector<std::uint8_t>& payload) {
  put_u32_be(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
  put_u32_be(out, crc);
}

inline std::vector<std::uint8_t> deflate_bytes(const std::vector<std::uint8_t>& raw) {
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> out(bound);
  if (compress2(out.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                Z_DEFAULT_COMPRESSION) != Z_OK) {
    throw IoError("png: deflate failed");
  }
  out.resize(bound);
  return out;
}

inline std::vector<std::uint8_t> inflate_bytes(const std::vector<std::uint8_t>& comp,
                                               std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  uLongf dest_len = static_cast<uLongf>(expected);
  const int rc = uncompress(out.data(), &dest_len, comp.data(), static_cast<uLong>(comp.size()));
  if (rc != Z_OK || dest_len != expected) {
    throw IoError("png: inflate failed or produced unexpected length");
  }
  return out;
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

constexpr std::uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

}  // namespace detail

/// Serializes one 8-bit image; channels is 1 (gray), 3 (RGB) or 4 (RGBA).
inline std::vector<std::uint8_t> encode(int width, int height, int channels,
                                        const std::vector<std::uint8_t>& pixels) {
  if (channels != 1 && channels != 3 && channels != 4) {
    throw IoError("png: unsupported channel count " + std::to_string(channels));
  }
  if (pixels.size() != static_cast<std::size_t>(width) * height * channels) {
    throw IoError("png: pixel buffer size does not match dimensions");
  }
  std::vector<std::uint8_t> out(detail::kSignature, detail::kSignature + 8);

  std::vector<std::uint8_t> ihdr;
  detail::put_u32_be(ihdr, static_cast<std::uint32_t>(width));
  detail::put_u32_be(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(channels == 1 ? 0 : channels == 3 ? 2 : 6);
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // no interlace
  detail::append_chunk(out, "IHDR", ihdr);

  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * height);
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), pixels.begin() + y * stride, pixels.begin() + (y + 1) * stride);
  }
  detail::append_chunk(out, "IDAT", detail::deflate_bytes(raw));
  detail::append_chunk(out, "IEND", {});
  return out;
}

struct Decoded {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

inline Decoded decode(const std::vector<std::uint8_t>& bytes) {
  using namespace detail;
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0) {
    throw IoError("png: missing PNG signature");
  }

  int width = 0, height = 0, channels = 0;
  bool saw_ihdr = false;
  std::vector<std::uint8_t> idat;

  std::size_t pos = 8;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = get_u32_be(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) throw IoError("png: truncated chunk");
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const std::uint8_t* payload = bytes.data() + pos + 8;

    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw IoError("png: malformed IHDR");
      width = static_cast<int>(get_u32_be(payload));
      height = static_cast<int>(get_u32_be(payload + 4));
      const int depth = payload[8], color = payload[9], interlace = payload[12];
      if (depth != 8) {
        throw IoError("png: unsupported bit depth " + std::to_string(depth) + " (only 8)");
      }
      switch (color) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 6: channels = 4; break;
        default:
          throw IoError("png: unsupported color type " + std::to_string(color) +
                        " (only gray/RGB/RGBA)");
      }
      if (interlace != 0) throw IoError("png: interlaced images unsupported");
      if (width < 1 || height < 1) throw IoError("png: bad dimensions");
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    // ancillary chunks skipped; CRCs not re-verified
    pos += 12 + len;
  }
  if (!saw_ihdr || idat.empty()) throw IoError("png: missing IHDR or IDAT");

  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  const std::vector<std::uint8_t> raw = inflate_bytes(idat, (stride + 1) * height);

  Decoded d;
  d.width = width;
  d.height = height;
  d.channels = channels;
  d.pixels.assign(stride * height, 0);

  const int bpp = channels;  // bytes per pixel at depth 8
  for (int y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[y * (stride + 1)];
    const std::uint8_t* src = raw.data() + y * (stride + 1) + 1;
    std::uint8_t* cur = d.pixels.data() + y * stride;
    const std::uint8_t* up = y > 0 ? d.pixels.data() + (y - 1) * stride : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
      const int b = up ? up[i] : 0;
      const int c = (up && i >= static_cast<std::size_t>(bpp)) ? up[i - bpp] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw IoError("png: unknown scanline filter " + std::to_string(filter));
      }
      cur[i] = static_cast<std::uint8_t>(v & 0xff);
    }
  }
  return d;
}

// ---- file helpers ----

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "rb");
  if (!f) throw IoError("cannot open " + path.string() + " for reading");
  std::fseek(f, 0, SEEK_END);
  const long size = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<std::uint8_t> bytes(size > 0 ? static_cast<std::size_t>(size) : 0);
  const std::size_t got = bytes.empty() ? 0 : std::fread(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (got != bytes.size()) throw IoError("short read on " + path.string());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  const std::size_t put = bytes.empty() ? 0 : std::fwrite(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (put != bytes.size()) throw IoError("short write on " + path.string());
}

}  // namespace smokeseg::png

namespace smokeseg {

// ---- typed image I/O ----

inline void save_image(const RgbImage& img, const std::filesystem::path& path) {
  png::write_file(path, png::encode(img.width, img.height, 3, img.data));
}

inline void save_image(const RgbaImage& img, const std::filesystem::path& path) {
  png::write_file(path, png::encode(img.width, img.height, 4, img.data));
}

/// Masks persist as 0/255 grayscale.
inline void save_image(const BinaryMask& mask, const std::filesystem::path& path) {
  std::vector<std::uint8_t> gray(mask.data.size());
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = mask.data[i] ? 255 : 0;
  png::write_file(path, png::encode(mask.width, mask.height, 1, gray));
}

inline void save_gray(const std::vector<std::uint8_t>& gray, int width, int height,
                      const std::filesystem::path& path) {
  png::write_file(path, png::encode(width, height, 1, gray));
}

inline RgbaImage load_rgba(const std::filesystem::path& path) {
  const png::Decoded d = png::decode(png::read_file(path));
  if (d.channels != 4) {
    throw IoError(path.string() + ": expected an RGBA image, got " +
                  std::to_string(d.channels) + " channel(s)");
  }
  RgbaImage img(d.width, d.height);
  img.data = d.pixels;
  return img;
}

/// Accepts gray/RGB/RGBA sources; gray replicates, RGBA drops alpha.
inline RgbImage load_rgb(const std::filesystem::path& path) {
  const png::Decoded d = png::decode(png::read_file(path));
  RgbImage img(d.width, d.height);
  const std::size_t n = static_cast<std::size_t>(d.width) * d.height;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* src = d.pixels.data() + i * d.channels;
    for (int c = 0; c < 3; ++c) img.data[i * 3 + c] = d.channels == 1 ? src[0] : src[c];
  }
  return img;
}

/// Grayscale with >127 counting as smoke.
inline BinaryMask load_mask(const std::filesystem::path& path) {
  const png::Decoded d = png::decode(png::read_file(path));
  if (d.channels != 1) {
    throw IoError(path.string() + ": masks must be 8-bit grayscale, got " +
                  std::to_string(d.channels) + " channel(s)");
  }
  BinaryMask mask(d.width, d.height);
  for (std::size_t i = 0; i < d.pixels.size(); ++i) mask.data[i] = d.pixels[i] > 127 ? 1 : 0;
  return mask;
}

}  // namespace smokeseg
