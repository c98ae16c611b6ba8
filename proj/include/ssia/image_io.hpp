#pragma once

// Minimal binary PPM (P6) / PGM (P5) reading and writing, 8-bit only.
// Values map [0,255] -> [0,1] by /255 on read; writes round-to-nearest and
// clamp.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssia/tensor.hpp"

namespace ssia {

class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline int next_pnm_int(std::istream& in, const std::string& path) {
  // skip whitespace and '#' comment lines
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = in.get();
  }
  if (ch == EOF || !std::isdigit(ch))
    throw io_error("malformed PNM header in " + path);
  int value = 0;
  while (ch != EOF && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    ch = in.get();
  }
  return value;  // the single whitespace after the token is consumed
}

inline std::uint8_t quantize(double v) {
  const double x = std::lround(v * 255.0);
  return static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, x)));
}

}  // namespace detail

// Reads a binary P6 (3-channel) or P5 (1-channel) file into a 1xCxHxW tensor.
inline Tensor read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || (m1 != '6' && m1 != '5'))
    throw io_error(path + " is not a binary PPM/PGM (P6/P5) file");
  const int channels = m1 == '6' ? 3 : 1;
  const int w = detail::next_pnm_int(in, path);
  const int h = detail::next_pnm_int(in, path);
  const int maxval = detail::next_pnm_int(in, path);
  if (maxval != 255)
    throw io_error(path + ": only maxval 255 is supported, got " +
                   std::to_string(maxval));
  if (w < 1 || h < 1) throw io_error(path + ": invalid dimensions");

  std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw io_error(path + ": truncated pixel payload");

  Tensor t = Tensor::zeros({1, channels, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        t.at(0, c, y, x) =
            raw[(static_cast<std::size_t>(y) * w + x) * channels + c] / 255.0;
  return t;
}

inline void write_image(const std::string& path, const Tensor& img) {
  const Shape s = img.shape();
  if (s.b != 1 || (s.c != 3 && s.c != 1))
    throw io_error("write_image expects 1x3xHxW or 1x1xHxW, got " + s.str());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out << (s.c == 3 ? "P6" : "P5") << "\n" << s.w << " " << s.h << "\n255\n";
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(s.w) * s.h * s.c);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < s.c; ++c)
        raw[(static_cast<std::size_t>(y) * s.w + x) * s.c + c] =
            detail::quantize(img.at(0, c, y, x));
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  if (!out) throw io_error("short write to " + path);
}

// Channel-averaged copy, for dumping multi-channel feature maps as grayscale.
inline Tensor channel_mean(const Tensor& t) {
  const Shape s = t.shape();
  Tensor out = Tensor::zeros({s.b, 1, s.h, s.w});
  const double inv = 1.0 / s.c;
  for (int b = 0; b < s.b; ++b)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) out.at(b, 0, y, x) += t.at(b, c, y, x) * inv;
  return out;
}

// Min-max normalization to [0,1]; constant inputs map to 0.
inline Tensor minmax_normalize(const Tensor& t) {
  double lo = t.values().empty() ? 0.0 : t.values()[0];
  double hi = lo;
  for (double v : t.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Tensor out = Tensor::zeros(t.shape());
  if (hi > lo) {
    const double inv = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < t.values().size(); ++i)
      out.values()[i] = (t.values()[i] - lo) * inv;
  }
  return out;
}

inline Tensor clamp01(const Tensor& t) {
  Tensor out = Tensor::zeros(t.shape());
  for (std::size_t i = 0; i < t.values().size(); ++i)
    out.values()[i] = std::min(1.0, std::max(0.0, t.values()[i]));
  return out;
}

}  // namespace ssia
