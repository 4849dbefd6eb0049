#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "latentcast/common.hpp"

namespace latentcast {

// Evenly spaced frequency components from f_min to f_max inclusive. A scalar
// encodes to f_n sine entries followed by f_n cosine entries.
struct FrequencyBank {
  double f_min = 1.0;
  double f_max = 1.0;
  int f_n = 1;
  std::vector<double> frequencies;

  static FrequencyBank linspace(double f_min, double f_max, int f_n) {
    if (f_n < 1) throw UsageError("frequency bank needs f_n >= 1");
    if (f_min > f_max) throw UsageError("frequency bank needs f_min <= f_max");
    FrequencyBank b{f_min, f_max, f_n, {}};
    b.frequencies.resize(static_cast<std::size_t>(f_n));
    if (f_n == 1) {
      b.frequencies[0] = f_min;
    } else {
      const double step = (f_max - f_min) / static_cast<double>(f_n - 1);
      for (int i = 0; i < f_n; ++i) b.frequencies[static_cast<std::size_t>(i)] = f_min + step * i;
    }
    return b;
  }

  int encoded_size() const { return 2 * f_n; }
};

struct RegionOfInterest {
  double center_x = 0.0;
  double center_y = 0.0;
  double extent_x = 160.0;  // meters
  double extent_y = 160.0;

  double half_x() const { return extent_x / 2.0; }
  double half_y() const { return extent_y / 2.0; }
};

// Affine map of the ROI box onto [-1,1]^2. Out-of-box points map outside
// [-1,1] and are left to the caller to drop.
inline std::array<double, 2> normalize_position(double x, double y, const RegionOfInterest& roi) {
  return {(x - roi.center_x) / roi.half_x(), (y - roi.center_y) / roi.half_y()};
}

// Square evaluation grid centered in the ROI. Row 0 sits at the minimum y
// edge; pixel (r, c) has its center at offset (c + 0.5, r + 0.5) pixels from
// the minimum corner.
struct GridGeometry {
  double center_x = 0.0;
  double center_y = 0.0;
  double extent_m = 80.0;
  int px = 256;

  double m_per_px() const { return extent_m / px; }
  std::int64_t cells() const { return static_cast<std::int64_t>(px) * px; }

  std::array<double, 2> pixel_center(int row, int col) const {
    const double half = extent_m / 2.0;
    return {center_x - half + (col + 0.5) * m_per_px(),
            center_y - half + (row + 0.5) * m_per_px()};
  }
};

// Headings are wrapped to (-pi, pi] and normalized by pi before encoding.
inline double normalize_heading(double theta) {
  const double pi = std::numbers::pi;
  double t = std::fmod(theta + pi, 2.0 * pi);
  if (t <= 0) t += 2.0 * pi;
  return (t - pi) / pi;
}

// out[i] = sin(f_i * pi * p) for i < f_n, cos(f_{i-f_n} * pi * p) otherwise.
template <typename T>
void sin_encode_scalar(double p, const FrequencyBank& bank, std::span<T> out) {
  const double pi = std::numbers::pi;
  for (int i = 0; i < bank.f_n; ++i) {
    const double phase = bank.frequencies[static_cast<std::size_t>(i)] * pi * p;
    out[static_cast<std::size_t>(i)] = static_cast<T>(std::sin(phase));
    out[static_cast<std::size_t>(bank.f_n + i)] = static_cast<T>(std::cos(phase));
  }
}

// Encodes each element with its own bank and concatenates in element order.
template <typename T>
void sin_encode_vector(std::span<const double> values, std::span<const FrequencyBank> banks,
                       std::span<T> out) {
  if (values.size() != banks.size()) {
    throw UsageError("sin_encode_vector: one bank per element required");
  }
  std::size_t off = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t w = static_cast<std::size_t>(banks[i].encoded_size());
    sin_encode_scalar<T>(values[i], banks[i], out.subspan(off, w));
    off += w;
  }
}

template <typename T>
std::vector<T> sin_encode_vector(std::span<const double> values,
                                 std::span<const FrequencyBank> banks) {
  std::size_t total = 0;
  for (const auto& b : banks) total += static_cast<std::size_t>(b.encoded_size());
  std::vector<T> out(total);
  sin_encode_vector<T>(values, banks, std::span<T>(out));
  return out;
}

}  // namespace latentcast
