#include <algorithm>
#include <cmath>
#include <string>

#include "bilinear.hpp"
#include "dcnas/ops.hpp"

namespace dcnas {

using namespace detail;

namespace {

// Align-corners source coordinate of each output index.
struct Axis {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

Axis make_axis(int in, int out) {
  Axis a;
  a.lo.resize(out);
  a.hi.resize(out);
  a.frac.resize(out);
  const double step = out > 1 ? static_cast<double>(in - 1) / (out - 1) : 0.0;
  for (int o = 0; o < out; ++o) {
    const double src = o * step;
    int l = static_cast<int>(std::floor(src));
    l = std::clamp(l, 0, in - 1);
    a.lo[o] = l;
    a.hi[o] = std::min(l + 1, in - 1);
    a.frac[o] = src - l;
  }
  return a;
}

inline double base_coord(int i, int n) { return n > 1 ? -1.0 + 2.0 * i / (n - 1) : 0.0; }

}  // namespace

Var bilinear_resize(Var x, int out_h, int out_w) {
  const Shape& s = x.shape();
  if (s.rank() != 4) throw ShapeError("bilinear_resize: input rank must be 4, got " + s.str());
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: output size must be >= 1");
  const int planes = s[0] * s[1];
  const int h = s[2], w = s[3];
  const Axis ay = make_axis(h, out_h);
  const Axis ax = make_axis(w, out_w);
  Tensor out(Shape{s[0], s[1], out_h, out_w});
  const double* px = x.value().data();
  for (int p = 0; p < planes; ++p) {
    const double* in = px + static_cast<std::size_t>(p) * h * w;
    double* o = out.data() + static_cast<std::size_t>(p) * out_h * out_w;
    for (int i = 0; i < out_h; ++i) {
      const double fy = ay.frac[i];
      const double* r0 = in + static_cast<std::size_t>(ay.lo[i]) * w;
      const double* r1 = in + static_cast<std::size_t>(ay.hi[i]) * w;
      for (int j = 0; j < out_w; ++j) {
        const double fx = ax.frac[j];
        const double top = (1 - fx) * r0[ax.lo[j]] + fx * r0[ax.hi[j]];
        const double bot = (1 - fx) * r1[ax.lo[j]] + fx * r1[ax.hi[j]];
        o[static_cast<std::size_t>(i) * out_w + j] = (1 - fy) * top + fy * bot;
      }
    }
  }
  return x.tape->record(std::move(out), {x}, [=](Tape& t, const std::vector<double>& g) {
    double* gx = t.grad_buffer(x);
    for (int p = 0; p < planes; ++p) {
      double* din = gx + static_cast<std::size_t>(p) * h * w;
      const double* go = g.data() + static_cast<std::size_t>(p) * out_h * out_w;
      for (int i = 0; i < out_h; ++i) {
        const double fy = ay.frac[i];
        double* r0 = din + static_cast<std::size_t>(ay.lo[i]) * w;
        double* r1 = din + static_cast<std::size_t>(ay.hi[i]) * w;
        for (int j = 0; j < out_w; ++j) {
          const double fx = ax.frac[j];
          const double gv = go[static_cast<std::size_t>(i) * out_w + j];
          r0[ax.lo[j]] += (1 - fy) * (1 - fx) * gv;
          r0[ax.hi[j]] += (1 - fy) * fx * gv;
          r1[ax.lo[j]] += fy * (1 - fx) * gv;
          r1[ax.hi[j]] += fy * fx * gv;
        }
      }
    }
  });
}

Var grid_sample(Var x, Var grid) {
  const Shape& xs = x.shape();
  const Shape& gs = grid.shape();
  if (xs.rank() != 4) throw ShapeError("grid_sample: input rank must be 4, got " + xs.str());
  if (gs.rank() != 4 || gs[0] != xs[0] || gs[3] != 2) {
    throw ShapeError("grid_sample: grid shape " + gs.str() + " must be (N,H,W,2) with N=" +
                     std::to_string(xs[0]));
  }
  const int n_batch = xs[0], c_n = xs[1], h = xs[2], w = xs[3];
  const int ho = gs[1], wo = gs[2];
  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  const std::size_t out_plane = static_cast<std::size_t>(ho) * wo;
  const double sx = 0.5 * (w - 1);
  const double sy = 0.5 * (h - 1);
  Tensor out(Shape{n_batch, c_n, ho, wo});
  const double* px = x.value().data();
  const double* pg = grid.value().data();
  for (int n = 0; n < n_batch; ++n) {
    for (std::size_t p = 0; p < out_plane; ++p) {
      const double* gp = pg + (static_cast<std::size_t>(n) * out_plane + p) * 2;
      const BilinearTap t = make_tap((gp[1] + 1.0) * sy, (gp[0] + 1.0) * sx);
      for (int c = 0; c < c_n; ++c) {
        const std::size_t plane = static_cast<std::size_t>(n) * c_n + c;
        out.data()[plane * out_plane + p] = sample(px + plane * in_plane, h, w, t);
      }
    }
  }
  return x.tape->record(std::move(out), {x, grid}, [=](Tape& t, const std::vector<double>& g) {
    double* gx = t.grad_buffer(x);
    double* gg = t.grad_buffer(grid);
    const double* xv = t.value(x).data();
    const double* gv = t.value(grid).data();
    for (int n = 0; n < n_batch; ++n) {
      for (std::size_t p = 0; p < out_plane; ++p) {
        const std::size_t gi = (static_cast<std::size_t>(n) * out_plane + p) * 2;
        const BilinearTap tp = make_tap((gv[gi + 1] + 1.0) * sy, (gv[gi] + 1.0) * sx);
        double dy_sum = 0.0, dx_sum = 0.0;
        for (int c = 0; c < c_n; ++c) {
          const std::size_t plane = static_cast<std::size_t>(n) * c_n + c;
          double dpy, dpx;
          sample_backward(xv + plane * in_plane, gx ? gx + plane * in_plane : nullptr, h, w, tp,
                          g[plane * out_plane + p], dpy, dpx);
          dy_sum += dpy;
          dx_sum += dpx;
        }
        if (gg) {
          gg[gi] += dx_sum * sx;
          gg[gi + 1] += dy_sum * sy;
        }
      }
    }
  });
}

Var affine_grid(Var theta, int h, int w) {
  const Shape& ts = theta.shape();
  if (ts.rank() != 4 || ts[1] != 6 || ts[2] != 1 || ts[3] != 1) {
    throw ShapeError("affine_grid: theta shape " + ts.str() + " must be (N,6,1,1)");
  }
  const int n_batch = ts[0];
  Tensor out(Shape{n_batch, h, w, 2});
  const double* th = theta.value().data();
  for (int n = 0; n < n_batch; ++n) {
    const double* a = th + n * 6;
    for (int i = 0; i < h; ++i) {
      const double y = base_coord(i, h);
      for (int j = 0; j < w; ++j) {
        const double x = base_coord(j, w);
        double* o = out.data() + ((static_cast<std::size_t>(n) * h + i) * w + j) * 2;
        o[0] = a[0] * x + a[1] * y + a[2];
        o[1] = a[3] * x + a[4] * y + a[5];
      }
    }
  }
  return theta.tape->record(std::move(out), {theta}, [=](Tape& t, const std::vector<double>& g) {
    double* gt = t.grad_buffer(theta);
    for (int n = 0; n < n_batch; ++n) {
      double* a = gt + n * 6;
      for (int i = 0; i < h; ++i) {
        const double y = base_coord(i, h);
        for (int j = 0; j < w; ++j) {
          const double x = base_coord(j, w);
          const double* go = g.data() + ((static_cast<std::size_t>(n) * h + i) * w + j) * 2;
          a[0] += go[0] * x;
          a[1] += go[0] * y;
          a[2] += go[0];
          a[3] += go[1] * x;
          a[4] += go[1] * y;
          a[5] += go[1];
        }
      }
    }
  });
}

Tensor identity_grid(int n, int h, int w) {
  Tensor out(Shape{n, h, w, 2});
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        double* o = out.data() + ((static_cast<std::size_t>(b) * h + i) * w + j) * 2;
        o[0] = base_coord(j, w);
        o[1] = base_coord(i, h);
      }
    }
  }
  return out;
}

Var global_avg_pool(Var x) {
  const Shape& s = x.shape();
  if (s.rank() != 4) throw ShapeError("global_avg_pool: input rank must be 4, got " + s.str());
  const int planes = s[0] * s[1];
  const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];
  Tensor out(Shape{s[0], s[1], 1, 1});
  const double* px = x.value().data();
  for (int p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += px[p * hw + i];
    out[p] = acc / static_cast<double>(hw);
  }
  return x.tape->record(std::move(out), {x}, [=](Tape& t, const std::vector<double>& g) {
    double* gx = t.grad_buffer(x);
    const double inv = 1.0 / static_cast<double>(hw);
    for (int p = 0; p < planes; ++p) {
      for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += g[p] * inv;
    }
  });
}

Var adaptive_avg_pool(Var x, int out_h, int out_w) {
  const Shape& s = x.shape();
  if (s.rank() != 4) throw ShapeError("adaptive_avg_pool: input rank must be 4, got " + s.str());
  if (out_h < 1 || out_w < 1 || out_h > s[2] || out_w > s[3]) {
    throw ShapeError("adaptive_avg_pool: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " must be within input height (dim 2) " + std::to_string(s[2]) + " and width (dim 3) " +
                     std::to_string(s[3]));
  }
  const int planes = s[0] * s[1];
  const int h = s[2], w = s[3];
  auto window = [](int i, int in, int out, int& lo, int& hi) {
    lo = (i * in) / out;
    hi = ((i + 1) * in + out - 1) / out;
  };
  Tensor out(Shape{s[0], s[1], out_h, out_w});
  const double* px = x.value().data();
  for (int p = 0; p < planes; ++p) {
    const double* in = px + static_cast<std::size_t>(p) * h * w;
    for (int i = 0; i < out_h; ++i) {
      int y0, y1;
      window(i, h, out_h, y0, y1);
      for (int j = 0; j < out_w; ++j) {
        int x0, x1;
        window(j, w, out_w, x0, x1);
        double acc = 0.0;
        for (int y = y0; y < y1; ++y) {
          for (int xx = x0; xx < x1; ++xx) acc += in[static_cast<std::size_t>(y) * w + xx];
        }
        out.data()[(static_cast<std::size_t>(p) * out_h + i) * out_w + j] = acc / ((y1 - y0) * (x1 - x0));
      }
    }
  }
  return x.tape->record(std::move(out), {x}, [=](Tape& t, const std::vector<double>& g) {
    double* gx = t.grad_buffer(x);
    for (int p = 0; p < planes; ++p) {
      double* in = gx + static_cast<std::size_t>(p) * h * w;
      for (int i = 0; i < out_h; ++i) {
        int y0, y1;
        window(i, h, out_h, y0, y1);
        for (int j = 0; j < out_w; ++j) {
          int x0, x1;
          window(j, w, out_w, x0, x1);
          const double gv = g[(static_cast<std::size_t>(p) * out_h + i) * out_w + j] / ((y1 - y0) * (x1 - x0));
          for (int y = y0; y < y1; ++y) {
            for (int xx = x0; xx < x1; ++xx) in[static_cast<std::size_t>(y) * w + xx] += gv;
          }
        }
      }
    }
  });
}

}  // namespace dcnas
