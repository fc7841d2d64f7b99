#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "gip/error.hpp"
#include "gip/network.hpp"

namespace gip {

// rows x cols equally sized cells, each channel-major (c, h, w). With
// scale_each every cell is min-max normalized independently; otherwise one
// global min-max is used. A cell (or grid) with zero range renders as
// uniform 0.5.
struct ImageGrid {
  int rows = 0, cols = 0;
  int channels = 0, cell_h = 0, cell_w = 0;
  std::vector<Vec> cells;
  bool scale_each = true;
  int padding = 2;
};

struct RenderResult {
  std::vector<std::uint8_t> png;
  Vec canvas;  // the exact float values quantized into the PNG, in [0,1]
  int height = 0, width = 0, channels = 0;
};

// Minimal PNG writer: 8-bit grayscale or RGB, filter 0 scanlines, one IDAT.
inline std::vector<std::uint8_t> encode_png(const std::vector<std::uint8_t>& pixels, int width, int height,
                                            int channels) {
  if (channels != 1 && channels != 3) throw DomainError("PNG writer supports 1 or 3 channels");
  if (pixels.size() != static_cast<std::size_t>(width) * height * channels) {
    throw ShapeError("pixel buffer does not match width*height*channels");
  }
  std::vector<std::uint8_t> out;
  const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  out.insert(out.end(), sig, sig + 8);

  auto put_be32 = [](std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(static_cast<std::uint8_t>(x >> 24));
    v.push_back(static_cast<std::uint8_t>(x >> 16));
    v.push_back(static_cast<std::uint8_t>(x >> 8));
    v.push_back(static_cast<std::uint8_t>(x));
  };
  auto chunk = [&](const char type[4], const std::vector<std::uint8_t>& data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    std::vector<std::uint8_t> body(type, type + 4);
    body.insert(body.end(), data.begin(), data.end());
    out.insert(out.end(), body.begin(), body.end());
    put_be32(out, static_cast<std::uint32_t>(crc32(0, body.data(), static_cast<uInt>(body.size()))));
  };

  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(width));
  put_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);                                    // bit depth
  ihdr.push_back(channels == 1 ? 0 : 2);                // grayscale / truecolor
  ihdr.push_back(0);                                    // compression
  ihdr.push_back(0);                                    // filter
  ihdr.push_back(0);                                    // interlace
  chunk("IHDR", ihdr);

  // Raw scanlines, filter byte 0 per row.
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(height) * (1 + static_cast<std::size_t>(width) * channels));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    const std::uint8_t* row = pixels.data() + static_cast<std::size_t>(y) * width * channels;
    raw.insert(raw.end(), row, row + static_cast<std::size_t>(width) * channels);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw Error("zlib compression failed");
  }
  compressed.resize(bound);
  chunk("IDAT", compressed);
  chunk("IEND", {});
  return out;
}

// Lays the cells out with padding, normalizes, quantizes to 8-bit and
// encodes a PNG. The float canvas is returned alongside so regression tests
// never compare lossy pixels.
inline RenderResult render_grid(const ImageGrid& grid) {
  if (grid.rows < 1 || grid.cols < 1 || grid.cells.empty()) throw DomainError("empty grid");
  if (grid.cells.size() != static_cast<std::size_t>(grid.rows) * grid.cols) {
    throw ShapeError("grid expects rows*cols cells");
  }
  if (grid.channels != 1 && grid.channels != 3) throw DomainError("grid cells must have 1 or 3 channels");
  const std::size_t cell_n = static_cast<std::size_t>(grid.channels) * grid.cell_h * grid.cell_w;
  for (const Vec& c : grid.cells) {
    if (c.size() != cell_n) throw ShapeError("grid cells must share one shape");
  }

  // Per-cell or global min-max; zero range maps to constant 0.5.
  std::vector<std::pair<double, double>> ranges(grid.cells.size());
  if (grid.scale_each) {
    for (std::size_t i = 0; i < grid.cells.size(); ++i) {
      double lo = grid.cells[i][0], hi = grid.cells[i][0];
      for (double v : grid.cells[i]) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      ranges[i] = {lo, hi};
    }
  } else {
    double lo = grid.cells[0][0], hi = grid.cells[0][0];
    for (const Vec& c : grid.cells) {
      for (double v : c) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    for (auto& r : ranges) r = {lo, hi};
  }

  RenderResult res;
  res.channels = grid.channels;
  res.height = grid.rows * grid.cell_h + grid.padding * (grid.rows + 1);
  res.width = grid.cols * grid.cell_w + grid.padding * (grid.cols + 1);
  res.canvas.assign(static_cast<std::size_t>(res.channels) * res.height * res.width, 0.0);

  for (int r = 0; r < grid.rows; ++r) {
    for (int cidx = 0; cidx < grid.cols; ++cidx) {
      const std::size_t cell = static_cast<std::size_t>(r) * grid.cols + cidx;
      const auto [lo, hi] = ranges[cell];
      const int y0 = grid.padding + r * (grid.cell_h + grid.padding);
      const int x0 = grid.padding + cidx * (grid.cell_w + grid.padding);
      for (int ch = 0; ch < grid.channels; ++ch) {
        for (int y = 0; y < grid.cell_h; ++y) {
          for (int x = 0; x < grid.cell_w; ++x) {
            const double v = grid.cells[cell][(static_cast<std::size_t>(ch) * grid.cell_h + y) * grid.cell_w + x];
            const double scaled = hi > lo ? (v - lo) / (hi - lo) : 0.5;
            res.canvas[(static_cast<std::size_t>(ch) * res.height + (y0 + y)) * res.width + (x0 + x)] = scaled;
          }
        }
      }
    }
  }

  // Channel-major canvas -> interleaved 8-bit pixels.
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(res.height) * res.width * res.channels);
  for (int y = 0; y < res.height; ++y) {
    for (int x = 0; x < res.width; ++x) {
      for (int ch = 0; ch < res.channels; ++ch) {
        const double v = res.canvas[(static_cast<std::size_t>(ch) * res.height + y) * res.width + x];
        const double clamped = std::min(1.0, std::max(0.0, v));
        pixels[(static_cast<std::size_t>(y) * res.width + x) * res.channels + ch] =
            static_cast<std::uint8_t>(std::lround(clamped * 255.0));
      }
    }
  }
  res.png = encode_png(pixels, res.width, res.height, res.channels);
  return res;
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace gip
