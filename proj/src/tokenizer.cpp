#include "latentcast/tokenizer.hpp"

#include <algorithm>
#include <cmath>

namespace latentcast {

namespace {

// Liang-Barsky clip of a segment to the box [0, px) x [0, px) in continuous
// pixel coordinates. Returns false when the segment misses the box.
bool clip_segment(double& x0, double& y0, double& x1, double& y1, double lo, double hi) {
  double t0 = 0.0, t1 = 1.0;
  const double dx = x1 - x0, dy = y1 - y0;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {x0 - lo, hi - x0, y0 - lo, hi - y0};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0.0) {
      if (r > t1) return false;
      if (r > t0) t0 = r;
    } else {
      if (r < t0) return false;
      if (r < t1) t1 = r;
    }
  }
  const double nx0 = x0 + t0 * dx, ny0 = y0 + t0 * dy;
  const double nx1 = x0 + t1 * dx, ny1 = y0 + t1 * dy;
  x0 = nx0;
  y0 = ny0;
  x1 = nx1;
  y1 = ny1;
  return true;
}

void draw_segment(RoadRaster& raster, double x0, double y0, double x1, double y1) {
  const int px = raster.px;
  if (!clip_segment(x0, y0, x1, y1, 0.0, static_cast<double>(px) - 1e-9)) return;
  int ix0 = static_cast<int>(x0), iy0 = static_cast<int>(y0);
  int ix1 = static_cast<int>(x1), iy1 = static_cast<int>(y1);
  ix0 = std::clamp(ix0, 0, px - 1);
  iy0 = std::clamp(iy0, 0, px - 1);
  ix1 = std::clamp(ix1, 0, px - 1);
  iy1 = std::clamp(iy1, 0, px - 1);

  // Bresenham, 1 pixel wide, no anti-aliasing.
  const int adx = std::abs(ix1 - ix0), ady = std::abs(iy1 - iy0);
  const int sx = ix0 < ix1 ? 1 : -1, sy = iy0 < iy1 ? 1 : -1;
  int err = adx - ady;
  int x = ix0, y = iy0;
  while (true) {
    raster.image[static_cast<std::size_t>(y) * px + x] = 1.0f;
    if (x == ix1 && y == iy1) break;
    const int e2 = 2 * err;
    if (e2 > -ady) {
      err -= ady;
      x += sx;
    }
    if (e2 < adx) {
      err += adx;
      y += sy;
    }
  }
}

}  // namespace

RoadRaster rasterize_roadgraph(std::span<const Polyline> splines, const RegionOfInterest& roi,
                               int px) {
  if (px < 1) throw UsageError("raster resolution must be positive");
  RoadRaster raster;
  raster.px = px;
  raster.image.assign(static_cast<std::size_t>(px) * px, 0.0f);
  for (const auto& line : splines) {
    for (std::size_t i = 0; i + 1 < line.size(); ++i) {
      const auto a = normalize_position(line[i][0], line[i][1], roi);
      const auto b = normalize_position(line[i + 1][0], line[i + 1][1], roi);
      // Continuous pixel coordinates; pixel (r, c) covers [c, c+1) x [r, r+1).
      draw_segment(raster, (a[0] + 1.0) / 2.0 * px, (a[1] + 1.0) / 2.0 * px,
                   (b[0] + 1.0) / 2.0 * px, (b[1] + 1.0) / 2.0 * px);
    }
  }
  return raster;
}

}  // namespace latentcast
