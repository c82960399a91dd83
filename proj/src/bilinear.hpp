#pragma once

#include <cmath>
#include <cstddef>

// Bilinear sampling helpers shared by grid_sample and deform_conv3x3.
namespace dcnas::detail {

// Bilinear read of one plane at fractional (py, px) with zeros outside.
struct BilinearTap {
  int y0, x0;
  double ly, lx;
};

inline BilinearTap make_tap(double py, double px) {
  const double fy = std::floor(py);
  const double fx = std::floor(px);
  return {static_cast<int>(fy), static_cast<int>(fx), py - fy, px - fx};
}

inline double read(const double* plane, int h, int w, int y, int x) {
  return (y >= 0 && y < h && x >= 0 && x < w) ? plane[static_cast<std::size_t>(y) * w + x] : 0.0;
}

inline double sample(const double* plane, int h, int w, const BilinearTap& t) {
  const double v00 = read(plane, h, w, t.y0, t.x0);
  const double v01 = read(plane, h, w, t.y0, t.x0 + 1);
  const double v10 = read(plane, h, w, t.y0 + 1, t.x0);
  const double v11 = read(plane, h, w, t.y0 + 1, t.x0 + 1);
  return (1 - t.ly) * ((1 - t.lx) * v00 + t.lx * v01) + t.ly * ((1 - t.lx) * v10 + t.lx * v11);
}

inline void scatter(double* plane, int h, int w, int y, int x, double v) {
  if (y >= 0 && y < h && x >= 0 && x < w) plane[static_cast<std::size_t>(y) * w + x] += v;
}

// Accumulates d/d(plane) and returns (d/dpy, d/dpx) of the sample, scaled by g.
inline void sample_backward(const double* plane, double* dplane, int h, int w, const BilinearTap& t,
                            double g, double& dpy, double& dpx) {
  const double v00 = read(plane, h, w, t.y0, t.x0);
  const double v01 = read(plane, h, w, t.y0, t.x0 + 1);
  const double v10 = read(plane, h, w, t.y0 + 1, t.x0);
  const double v11 = read(plane, h, w, t.y0 + 1, t.x0 + 1);
  dpy = g * ((1 - t.lx) * (v10 - v00) + t.lx * (v11 - v01));
  dpx = g * ((1 - t.ly) * (v01 - v00) + t.ly * (v11 - v10));
  if (dplane) {
    scatter(dplane, h, w, t.y0, t.x0, g * (1 - t.ly) * (1 - t.lx));
    scatter(dplane, h, w, t.y0, t.x0 + 1, g * (1 - t.ly) * t.lx);
    scatter(dplane, h, w, t.y0 + 1, t.x0, g * t.ly * (1 - t.lx));
    scatter(dplane, h, w, t.y0 + 1, t.x0 + 1, g * t.ly * t.lx);
  }
}

}  // namespace dcnas::detail
