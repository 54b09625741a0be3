#include "cdk/tensor_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cdk/error.hpp"

namespace cdk {

namespace {

bool host_is_little_endian() {
  const uint32_t probe = 1;
  return *reinterpret_cast<const unsigned char*>(&probe) == 1;
}

void put_u32_le(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32_le(const unsigned char* b) {
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

[[noreturn]] void parse_fail(std::streamoff offset, const std::string& what) {
  std::ostringstream os;
  os << "tensor file parse error at byte " << offset << ": " << what;
  throw ParseError(os.str());
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  nlohmann::json header;
  header["dtype"] = "f32";
  header["shape"] = t.shape();
  header["order"] = "row_major";
  const std::string hs = header.dump();

  out.write(kTensorMagic, 8);
  put_u32_le(out, static_cast<uint32_t>(hs.size()));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));

  if (host_is_little_endian()) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * 4));
  } else {
    for (int64_t i = 0; i < t.size(); ++i) {
      uint32_t bits;
      std::memcpy(&bits, &t[i], 4);
      put_u32_le(out, bits);
    }
  }
  if (!out) throw ParseError("tensor write failed (stream error)");
}

Tensor read_tensor(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kTensorMagic, 8) != 0)
    parse_fail(0, "bad magic, expected CDKT0001");

  unsigned char lenb[4];
  in.read(reinterpret_cast<char*>(lenb), 4);
  if (!in) parse_fail(8, "truncated header length");
  const uint32_t hlen = get_u32_le(lenb);
  if (hlen > (1u << 20)) parse_fail(8, "header length implausibly large");

  std::string hs(hlen, '\0');
  in.read(hs.data(), hlen);
  if (!in) parse_fail(12, "truncated JSON header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const std::exception& e) {
    parse_fail(12, std::string("invalid JSON header: ") + e.what());
  }
  if (header.value("dtype", "") != "f32") parse_fail(12, "unsupported dtype, expected f32");
  if (header.value("order", "") != "row_major") parse_fail(12, "unsupported order");
  if (!header.contains("shape") || !header["shape"].is_array())
    parse_fail(12, "missing shape array");

  std::vector<int64_t> shape;
  for (const auto& d : header["shape"]) {
    if (!d.is_number_integer() || d.get<int64_t>() < 0) parse_fail(12, "invalid shape entry");
    shape.push_back(d.get<int64_t>());
  }

  Tensor t(shape);
  const std::streamoff data_off = 12 + hlen;
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 4));
  if (in.gcount() != static_cast<std::streamsize>(t.size() * 4))
    parse_fail(data_off + in.gcount(), "truncated data section");

  if (!host_is_little_endian()) {
    for (int64_t i = 0; i < t.size(); ++i) {
      uint32_t bits;
      std::memcpy(&bits, &t[i], 4);
      bits = __builtin_bswap32(bits);
      std::memcpy(&t[i], &bits, 4);
    }
  }
  return t;
}

void save_tensor(const Tensor& t, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open for writing: " + path);
  write_tensor(f, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open: " + path);
  return read_tensor(f);
}

std::vector<uint8_t> tensor_bytes(const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  const std::string s = os.str();
  return std::vector<uint8_t>(s.begin(), s.end());
}

Tensor tensor_from_bytes(const uint8_t* data, size_t len) {
  std::istringstream is(std::string(reinterpret_cast<const char*>(data), len),
                        std::ios::binary);
  return read_tensor(is);
}

}  // namespace cdk
