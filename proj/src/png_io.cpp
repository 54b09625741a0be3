#include "cdk/png_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "cdk/error.hpp"
#include "cdk/util.hpp"

namespace cdk {

namespace {

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32_be(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& payload) {
  put_u32_be(out, static_cast<uint32_t>(payload.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  uint32_t crc = ::crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32_be(out, crc);
}

std::vector<uint8_t> zlib_compress(const std::vector<uint8_t>& in) {
  uLongf bound = compressBound(static_cast<uLong>(in.size()));
  std::vector<uint8_t> out(bound);
  int rc = compress2(out.data(), &bound, in.data(), static_cast<uLong>(in.size()), 6);
  if (rc != Z_OK) throw ParseError("png: zlib compression failed");
  out.resize(bound);
  return out;
}

std::vector<uint8_t> zlib_decompress(const std::vector<uint8_t>& in, size_t expected) {
  std::vector<uint8_t> out(expected);
  uLongf len = static_cast<uLongf>(expected);
  int rc = uncompress(out.data(), &len, in.data(), static_cast<uLong>(in.size()));
  if (rc != Z_OK || len != expected) throw ParseError("png: zlib decompression failed");
  return out;
}

constexpr uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_png(const std::string& path, const ImageU8& img) {
  require(img.width > 0 && img.height > 0, "png: empty image");
  require(img.rgb.size() == static_cast<size_t>(img.width) * img.height * 3,
          "png: pixel buffer size mismatch");

  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(img.height) * (1 + 3 * img.width));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter type: none
    const uint8_t* row = img.rgb.data() + static_cast<size_t>(y) * img.width * 3;
    raw.insert(raw.end(), row, row + static_cast<size_t>(img.width) * 3);
  }

  std::vector<uint8_t> file(kSignature, kSignature + 8);
  std::vector<uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<uint32_t>(img.width));
  put_u32_be(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // not interlaced
  append_chunk(file, "IHDR", ihdr);
  append_chunk(file, "IDAT", zlib_compress(raw));
  append_chunk(file, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("png: cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(file.data()), static_cast<std::streamsize>(file.size()));
  if (!f) throw ParseError("png: write failed: " + path);
}

ImageU8 read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("png: cannot open: " + path);
  std::vector<uint8_t> file((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (file.size() < 8 || std::memcmp(file.data(), kSignature, 8) != 0)
    throw ParseError("png: bad signature: " + path);

  int width = 0, height = 0, bit_depth = 0, color_type = 0;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  bool seen_iend = false;
  while (pos + 12 <= file.size() && !seen_iend) {
    uint32_t len = get_u32_be(file.data() + pos);
    if (pos + 12 + len > file.size()) throw ParseError("png: truncated chunk: " + path);
    std::string type(reinterpret_cast<const char*>(file.data() + pos + 4), 4);
    const uint8_t* payload = file.data() + pos + 8;
    if (type == "IHDR") {
      if (len != 13) throw ParseError("png: bad IHDR: " + path);
      width = static_cast<int>(get_u32_be(payload));
      height = static_cast<int>(get_u32_be(payload + 4));
      bit_depth = payload[8];
      color_type = payload[9];
      if (payload[12] != 0) throw ParseError("png: interlaced files unsupported: " + path);
      if (bit_depth != 8) throw ParseError("png: only 8-bit depth supported: " + path);
      if (color_type != 0 && color_type != 2 && color_type != 6)
        throw ParseError("png: unsupported color type: " + path);
    } else if (type == "IDAT") {
      idat.insert(idat.end(), payload, payload + len);
    } else if (type == "IEND") {
      seen_iend = true;
    }
    pos += 12 + len;
  }
  if (width <= 0 || height <= 0) throw ParseError("png: missing IHDR: " + path);

  const int ch = color_type == 0 ? 1 : (color_type == 2 ? 3 : 4);
  const size_t stride = static_cast<size_t>(width) * ch;
  std::vector<uint8_t> raw = zlib_decompress(idat, static_cast<size_t>(height) * (stride + 1));

  // undo per-scanline filters in place
  std::vector<uint8_t> pixels(static_cast<size_t>(height) * stride);
  for (int y = 0; y < height; ++y) {
    uint8_t filter = raw[static_cast<size_t>(y) * (stride + 1)];
    const uint8_t* src = raw.data() + static_cast<size_t>(y) * (stride + 1) + 1;
    uint8_t* dst = pixels.data() + static_cast<size_t>(y) * stride;
    const uint8_t* prev = y > 0 ? pixels.data() + static_cast<size_t>(y - 1) * stride : nullptr;
    for (size_t i = 0; i < stride; ++i) {
      int a = i >= static_cast<size_t>(ch) ? dst[i - ch] : 0;
      int b = prev ? prev[i] : 0;
      int c = (prev && i >= static_cast<size_t>(ch)) ? prev[i - ch] : 0;
      int x = src[i];
      switch (filter) {
        case 0: break;
        case 1: x += a; break;
        case 2: x += b; break;
        case 3: x += (a + b) / 2; break;
        case 4: x += paeth(a, b, c); break;
        default: throw ParseError("png: unknown filter type: " + path);
      }
      dst[i] = static_cast<uint8_t>(x & 0xff);
    }
  }

  ImageU8 img;
  img.width = width;
  img.height = height;
  img.rgb.resize(static_cast<size_t>(width) * height * 3);
  for (size_t p = 0; p < static_cast<size_t>(width) * height; ++p) {
    if (ch == 1) {
      img.rgb[p * 3] = img.rgb[p * 3 + 1] = img.rgb[p * 3 + 2] = pixels[p];
    } else {
      img.rgb[p * 3] = pixels[p * ch];
      img.rgb[p * 3 + 1] = pixels[p * ch + 1];
      img.rgb[p * 3 + 2] = pixels[p * ch + 2];
    }
  }
  return img;
}

ImageU8 frame_to_image(const Tensor& frame) {
  require(frame.rank() == 3 && frame.dim(0) == 3, "frame must be [3,H,W]");
  ImageU8 img;
  img.height = static_cast<int>(frame.dim(1));
  img.width = static_cast<int>(frame.dim(2));
  img.rgb.resize(static_cast<size_t>(img.width) * img.height * 3);
  const int64_t hw = frame.dim(1) * frame.dim(2);
  for (int64_t p = 0; p < hw; ++p)
    for (int64_t c = 0; c < 3; ++c) {
      float v = std::round(frame[c * hw + p] * 255.0f);
      img.rgb[static_cast<size_t>(p * 3 + c)] =
          static_cast<uint8_t>(std::clamp(v, 0.0f, 255.0f));
    }
  return img;
}

Tensor image_to_frame(const ImageU8& img) {
  Tensor frame({3, img.height, img.width});
  const int64_t hw = static_cast<int64_t>(img.height) * img.width;
  for (int64_t p = 0; p < hw; ++p)
    for (int64_t c = 0; c < 3; ++c)
      frame[c * hw + p] = static_cast<float>(img.rgb[static_cast<size_t>(p * 3 + c)]) / 255.0f;
  return frame;
}

}  // namespace cdk
