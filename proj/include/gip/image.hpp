#pragma once

#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gip/error.hpp"
#include "gip/network.hpp"

namespace gip {

struct Image {
  Shape shape;  // (c, h, w)
  Vec data;     // channel-major
};

namespace detail {

inline int ppm_token(std::istream& in, std::size_t& offset) {
  // Skips whitespace and '#' comments, then reads one integer.
  int c = in.get();
  ++offset;
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      while (c != EOF && c != '\n') {
        c = in.get();
        ++offset;
      }
    }
    c = in.get();
    ++offset;
  }
  if (c == EOF) throw ParseError("unexpected end of PNM header", offset);
  int value = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = in.get();
    ++offset;
  }
  if (!any) throw ParseError("expected an integer in PNM header", offset);
  return value;
}

}  // namespace detail

// Binary PPM (P6) / PGM (P5), 8-bit. Values map to [-1, 1] via x/127.5 - 1.
inline Image load_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  std::size_t offset = 0;
  char m0 = static_cast<char>(f.get());
  char m1 = static_cast<char>(f.get());
  offset += 2;
  if (m0 != 'P' || (m1 != '5' && m1 != '6')) throw ParseError("expected a binary PGM (P5) or PPM (P6) file", 0);
  const int channels = m1 == '6' ? 3 : 1;
  const int w = detail::ppm_token(f, offset);
  const int h = detail::ppm_token(f, offset);
  const int maxval = detail::ppm_token(f, offset);
  if (maxval != 255) throw ParseError("only 8-bit PNM images are supported (maxval 255)", offset);
  // ppm_token consumed exactly one whitespace after maxval.
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * channels);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (f.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw ParseError("PNM pixel data truncated", offset + static_cast<std::size_t>(f.gcount()));
  }
  Image img;
  img.shape = Shape{{channels, h, w}};
  img.data.resize(raw.size());
  // interleaved -> channel-major
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        img.data[(static_cast<std::size_t>(c) * h + y) * w + x] =
            raw[(static_cast<std::size_t>(y) * w + x) * channels + c] / 127.5 - 1.0;
      }
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// NPY v1.0, C-order, little-endian f8/f4

inline std::vector<std::uint8_t> npy_bytes(const Vec& data, const std::vector<int>& shape) {
  std::ostringstream dict;
  dict << "{'descr': '<f8', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) dict << shape[i] << (shape.size() == 1 || i + 1 < shape.size() ? "," : "");
  dict << "), }";
  std::string header = dict.str();
  const std::size_t base = 10;  // magic + version + header length
  const std::size_t pad = 64 - (base + header.size() + 1) % 64;
  header.append(pad, ' ');
  header.push_back('\n');

  std::vector<std::uint8_t> out;
  const char magic[] = "\x93NUMPY";
  out.insert(out.end(), magic, magic + 6);
  out.push_back(1);
  out.push_back(0);
  out.push_back(static_cast<std::uint8_t>(header.size() & 0xff));
  out.push_back(static_cast<std::uint8_t>((header.size() >> 8) & 0xff));
  out.insert(out.end(), header.begin(), header.end());
  for (double v : data) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>((bits >> (8 * b)) & 0xff));
  }
  return out;
}

inline void write_npy(const std::string& path, const Vec& data, const std::vector<int>& shape) {
  const auto bytes = npy_bytes(data, shape);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

struct NpyArray {
  std::vector<int> shape;
  Vec data;
};

inline NpyArray read_npy(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 10 || std::memcmp(bytes.data(), "\x93NUMPY", 6) != 0) {
    throw ParseError("not an NPY file", 0);
  }
  const std::size_t hlen = bytes[8] | (static_cast<std::size_t>(bytes[9]) << 8);
  if (10 + hlen > bytes.size()) throw ParseError("NPY header truncated", 10);
  const std::string header(bytes.begin() + 10, bytes.begin() + 10 + hlen);

  const bool f8 = header.find("'<f8'") != std::string::npos;
  const bool f4 = header.find("'<f4'") != std::string::npos;
  if (!f8 && !f4) throw ParseError("NPY dtype must be <f8 or <f4", 10);
  if (header.find("'fortran_order': False") == std::string::npos) {
    throw ParseError("NPY must be C-ordered", 10);
  }
  NpyArray arr;
  const std::size_t lp = header.find('(');
  const std::size_t rp = header.find(')', lp);
  if (lp == std::string::npos || rp == std::string::npos) throw ParseError("NPY shape not found", 10);
  std::string inside = header.substr(lp + 1, rp - lp - 1);
  std::istringstream ss(inside);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::string digits;
    for (char c : tok) {
      if (std::isdigit(static_cast<unsigned char>(c))) digits.push_back(c);
    }
    if (!digits.empty()) arr.shape.push_back(std::stoi(digits));
  }
  std::size_t n = 1;
  for (int d : arr.shape) n *= static_cast<std::size_t>(d);
  const std::size_t esize = f8 ? 8 : 4;
  const std::size_t start = 10 + hlen;
  if (start + n * esize > bytes.size()) throw ParseError("NPY data truncated", start);
  arr.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (f8) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[start + i * 8 + b]) << (8 * b);
      double d;
      std::memcpy(&d, &bits, 8);
      arr.data[i] = d;
    } else {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[start + i * 4 + b]) << (8 * b);
      float fl;
      std::memcpy(&fl, &bits, 4);
      arr.data[i] = static_cast<double>(fl);
    }
  }
  return arr;
}

// Loads a model input: .ppm/.pgm pixels mapped to [-1,1], or a .npy tensor
// taken as-is.
inline Image load_image(const std::string& path) {
  const auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  if (ext == ".ppm" || ext == ".pgm") return load_pnm(path);
  if (ext == ".npy") {
    NpyArray arr = read_npy(path);
    Image img;
    if (arr.shape.size() == 3) {
      img.shape = Shape{{arr.shape[0], arr.shape[1], arr.shape[2]}};
    } else if (arr.shape.size() == 2) {
      img.shape = Shape{{1, arr.shape[0], arr.shape[1]}};
    } else if (arr.shape.size() == 1) {
      img.shape = Shape{{arr.shape[0]}};
    } else {
      throw ParseError("NPY input must have 1..3 dimensions", 0);
    }
    img.data = std::move(arr.data);
    return img;
  }
  throw Error("unsupported image format '" + ext + "' (use .ppm, .pgm or .npy)");
}

}  // namespace gip
