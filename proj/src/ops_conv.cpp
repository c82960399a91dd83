#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "dcnas/ops.hpp"
#include "bilinear.hpp"

namespace dcnas {

using namespace detail;

namespace {

struct ConvGeometry {
  int n, cin, h, w;
  int cout, kh, kw;
  int stride, dilation, groups, pad;
  int ho, wo;
};

// Output index range [lo, hi] whose input coordinate o*stride + offset lies in [0, extent).
inline void valid_range(int extent, int out_extent, int offset, int stride, int& lo, int& hi) {
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  const int last = extent - 1 - offset;
  hi = last < 0 ? -1 : std::min(out_extent - 1, last / stride);
}

void conv_forward(const ConvGeometry& g, const double* x, const double* w, const double* b,
                  double* out) {
  const int cin_g = g.cin / g.groups;
  const int cout_g = g.cout / g.groups;
  const std::size_t in_plane = static_cast<std::size_t>(g.h) * g.w;
  const std::size_t out_plane = static_cast<std::size_t>(g.ho) * g.wo;
  for (int n = 0; n < g.n; ++n) {
    for (int oc = 0; oc < g.cout; ++oc) {
      const int grp = oc / cout_g;
      double* op = out + (static_cast<std::size_t>(n) * g.cout + oc) * out_plane;
      std::fill(op, op + out_plane, b ? b[oc] : 0.0);
      for (int icg = 0; icg < cin_g; ++icg) {
        const int ic = grp * cin_g + icg;
        const double* xp = x + (static_cast<std::size_t>(n) * g.cin + ic) * in_plane;
        const double* wk = w + (static_cast<std::size_t>(oc) * cin_g + icg) * g.kh * g.kw;
        for (int ki = 0; ki < g.kh; ++ki) {
          const int yoff = ki * g.dilation - g.pad;
          int oh_lo, oh_hi;
          valid_range(g.h, g.ho, yoff, g.stride, oh_lo, oh_hi);
          for (int kj = 0; kj < g.kw; ++kj) {
            const double wv = wk[ki * g.kw + kj];
            if (wv == 0.0) continue;
            const int xoff = kj * g.dilation - g.pad;
            int ow_lo, ow_hi;
            valid_range(g.w, g.wo, xoff, g.stride, ow_lo, ow_hi);
            for (int oh = oh_lo; oh <= oh_hi; ++oh) {
              double* orow = op + static_cast<std::size_t>(oh) * g.wo;
              const double* irow = xp + static_cast<std::size_t>(oh * g.stride + yoff) * g.w + xoff;
              if (g.stride == 1) {
                for (int ow = ow_lo; ow <= ow_hi; ++ow) orow[ow] += wv * irow[ow];
              } else {
                for (int ow = ow_lo; ow <= ow_hi; ++ow) orow[ow] += wv * irow[ow * g.stride];
              }
            }
          }
        }
      }
    }
  }
}

void conv_backward(const ConvGeometry& g, const double* x, const double* w, const double* dout,
                   double* dx, double* dw, double* db) {
  const int cin_g = g.cin / g.groups;
  const int cout_g = g.cout / g.groups;
  const std::size_t in_plane = static_cast<std::size_t>(g.h) * g.w;
  const std::size_t out_plane = static_cast<std::size_t>(g.ho) * g.wo;
  for (int n = 0; n < g.n; ++n) {
    for (int oc = 0; oc < g.cout; ++oc) {
      const int grp = oc / cout_g;
      const double* gp = dout + (static_cast<std::size_t>(n) * g.cout + oc) * out_plane;
      if (db) {
        double s = 0.0;
        for (std::size_t i = 0; i < out_plane; ++i) s += gp[i];
        db[oc] += s;
      }
      for (int icg = 0; icg < cin_g; ++icg) {
        const int ic = grp * cin_g + icg;
        const std::size_t xo = (static_cast<std::size_t>(n) * g.cin + ic) * in_plane;
        const std::size_t wo = (static_cast<std::size_t>(oc) * cin_g + icg) * g.kh * g.kw;
        for (int ki = 0; ki < g.kh; ++ki) {
          const int yoff = ki * g.dilation - g.pad;
          int oh_lo, oh_hi;
          valid_range(g.h, g.ho, yoff, g.stride, oh_lo, oh_hi);
          for (int kj = 0; kj < g.kw; ++kj) {
            const int xoff = kj * g.dilation - g.pad;
            int ow_lo, ow_hi;
            valid_range(g.w, g.wo, xoff, g.stride, ow_lo, ow_hi);
            const double wv = w[wo + ki * g.kw + kj];
            double acc = 0.0;
            for (int oh = oh_lo; oh <= oh_hi; ++oh) {
              const double* grow = gp + static_cast<std::size_t>(oh) * g.wo;
              const std::size_t ioff = xo + static_cast<std::size_t>(oh * g.stride + yoff) * g.w + xoff;
              const double* irow = x + ioff;
              double* drow = dx ? dx + ioff : nullptr;
              if (g.stride == 1) {
                for (int ow = ow_lo; ow <= ow_hi; ++ow) acc += grow[ow] * irow[ow];
                if (drow) {
                  for (int ow = ow_lo; ow <= ow_hi; ++ow) drow[ow] += wv * grow[ow];
                }
              } else {
                for (int ow = ow_lo; ow <= ow_hi; ++ow) acc += grow[ow] * irow[ow * g.stride];
                if (drow) {
                  for (int ow = ow_lo; ow <= ow_hi; ++ow) drow[ow * g.stride] += wv * grow[ow];
                }
              }
            }
            if (dw) dw[wo + ki * g.kw + kj] += acc;
          }
        }
      }
    }
  }
}

Var record_conv(Var x, Var w, std::optional<Var> b, const ConvGeometry& g, Shape out_shape) {
  Tensor out(std::move(out_shape));
  conv_forward(g, x.value().data(), w.value().data(), b ? b->value().data() : nullptr, out.data());
  std::vector<Var> inputs{x, w};
  if (b) inputs.push_back(*b);
  return x.tape->record(std::move(out), inputs, [x, w, b, g](Tape& t, const std::vector<double>& gout) {
    conv_backward(g, t.value(x).data(), t.value(w).data(), gout.data(), t.grad_buffer(x),
                  t.grad_buffer(w), b ? t.grad_buffer(*b) : nullptr);
  });
}

void check_bias(const std::optional<Var>& b, int cout, const char* op) {
  if (!b) return;
  const Shape& s = b->shape();
  if (s.rank() != 4 || s[0] != 1 || s[1] != cout || s[2] != 1 || s[3] != 1) {
    throw ShapeError(std::string(op) + ": bias shape " + s.str() + " must be (1," +
                     std::to_string(cout) + ",1,1)");
  }
}

}  // namespace

int same_padding(int kernel, int dilation) {
  if (kernel % 2 == 0) throw ShapeError("same_padding: kernel size must be odd");
  return dilation * (kernel - 1) / 2;
}

Var conv2d(Var x, Var w, std::optional<Var> b, const Conv2dOptions& opt) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.rank() != 4) throw ShapeError("conv2d: input rank must be 4, got " + xs.str());
  if (ws.rank() != 4) throw ShapeError("conv2d: weight rank must be 4, got " + ws.str());
  if (opt.stride < 1 || opt.dilation < 1 || opt.groups < 1 || opt.pad < 0) {
    throw ShapeError("conv2d: stride, dilation, groups must be >= 1 and pad >= 0");
  }
  if (xs[1] % opt.groups != 0) {
    throw ShapeError("conv2d: input channels (dim 1) = " + std::to_string(xs[1]) +
                     " not divisible by groups " + std::to_string(opt.groups));
  }
  if (ws[0] % opt.groups != 0) {
    throw ShapeError("conv2d: output channels (weight dim 0) = " + std::to_string(ws[0]) +
                     " not divisible by groups " + std::to_string(opt.groups));
  }
  if (ws[1] != xs[1] / opt.groups) {
    throw ShapeError("conv2d: weight dim 1 = " + std::to_string(ws[1]) + " but input channels / groups = " +
                     std::to_string(xs[1] / opt.groups));
  }
  check_bias(b, ws[0], "conv2d");
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3],
                 opt.stride, opt.dilation, opt.groups, opt.pad, 0, 0};
  g.ho = (g.h + 2 * g.pad - g.dilation * (g.kh - 1) - 1) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.dilation * (g.kw - 1) - 1) / g.stride + 1;
  if (g.ho < 1 || g.wo < 1) {
    throw ShapeError("conv2d: kernel extent exceeds padded input " + xs.str());
  }
  return record_conv(x, w, b, g, Shape{g.n, g.cout, g.ho, g.wo});
}

Var stack_depth(Var a, Var b) {
  const Shape& s = a.shape();
  if (s.rank() != 4 || b.shape() != s) {
    throw ShapeError("stack_depth: inputs must share a rank-4 shape, got " + s.str() + " and " +
                     b.shape().str());
  }
  const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
  const std::size_t planes = static_cast<std::size_t>(s[0]) * s[1];
  Tensor out(Shape{s[0], s[1], 2, s[2], s[3]});
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  for (std::size_t p = 0; p < planes; ++p) {
    std::copy(pa + p * plane, pa + (p + 1) * plane, out.data() + (2 * p) * plane);
    std::copy(pb + p * plane, pb + (p + 1) * plane, out.data() + (2 * p + 1) * plane);
  }
  return a.tape->record(std::move(out), {a, b}, [a, b, plane, planes](Tape& t, const std::vector<double>& g) {
    double* ga = t.grad_buffer(a);
    double* gb = t.grad_buffer(b);
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t i = 0; i < plane; ++i) {
        if (ga) ga[p * plane + i] += g[(2 * p) * plane + i];
        if (gb) gb[p * plane + i] += g[(2 * p + 1) * plane + i];
      }
    }
  });
}

Var conv3d_2x3x3(Var x, Var w, std::optional<Var> b) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.rank() != 5) throw ShapeError("conv3d_2x3x3: input rank must be 5, got " + xs.str());
  if (xs[2] != 2) {
    throw ShapeError("conv3d_2x3x3: depth (dim 2) must be 2, got " + std::to_string(xs[2]));
  }
  if (ws.rank() != 5 || ws[1] != xs[1] || ws[2] != 2 || ws[3] != 3 || ws[4] != 3) {
    throw ShapeError("conv3d_2x3x3: weight shape " + ws.str() + " must be (C_out," +
                     std::to_string(xs[1]) + ",2,3,3)");
  }
  check_bias(b, ws[0], "conv3d_2x3x3");
  // (N,C,2,H,W) is laid out exactly like (N,2C,H,W) and (C_out,C,2,3,3) like
  // (C_out,2C,3,3); the depth-2 kernel without depth padding is then a plain
  // 2-D convolution over the interleaved channels.
  ConvGeometry g{xs[0], 2 * xs[1], xs[3], xs[4], ws[0], 3, 3, 1, 1, 1, 1, xs[3], xs[4]};
  return record_conv(x, w, b, g, Shape{xs[0], ws[0], xs[3], xs[4]});
}

Var deform_conv3x3(Var x, Var offset, Var w, std::optional<Var> b) {
  const Shape& xs = x.shape();
  const Shape& os = offset.shape();
  const Shape& ws = w.shape();
  if (xs.rank() != 4) throw ShapeError("deform_conv3x3: input rank must be 4, got " + xs.str());
  if (os.rank() != 4 || os[0] != xs[0] || os[1] != 18 || os[2] != xs[2] || os[3] != xs[3]) {
    throw ShapeError("deform_conv3x3: offset shape " + os.str() + " must be (N,18,H,W) matching input " +
                     xs.str());
  }
  if (ws.rank() != 4 || ws[1] != xs[1] || ws[2] != 3 || ws[3] != 3) {
    throw ShapeError("deform_conv3x3: weight shape " + ws.str() + " must be (C_out," +
                     std::to_string(xs[1]) + ",3,3)");
  }
  check_bias(b, ws[0], "deform_conv3x3");
  const int n_batch = xs[0], cin = xs[1], h = xs[2], wd = xs[3], cout = ws[0];
  const std::size_t hw = static_cast<std::size_t>(h) * wd;
  const std::size_t k = static_cast<std::size_t>(cin) * 9;

  // Sampled columns (N, C_in*9, H*W), kept for the backward pass.
  auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n_batch) * k * hw);
  const double* px = x.value().data();
  const double* po = offset.value().data();
  for (int n = 0; n < n_batch; ++n) {
    for (int tap = 0; tap < 9; ++tap) {
      const int ki = tap / 3, kj = tap % 3;
      const double* dy = po + (static_cast<std::size_t>(n) * 18 + 2 * tap) * hw;
      const double* dx = po + (static_cast<std::size_t>(n) * 18 + 2 * tap + 1) * hw;
      for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < wd; ++xx) {
          const std::size_t pix = static_cast<std::size_t>(y) * wd + xx;
          const BilinearTap t = make_tap(y - 1 + ki + dy[pix], xx - 1 + kj + dx[pix]);
          for (int c = 0; c < cin; ++c) {
            const double* plane = px + (static_cast<std::size_t>(n) * cin + c) * hw;
            (*cols)[(static_cast<std::size_t>(n) * k + c * 9 + tap) * hw + pix] = sample(plane, h, wd, t);
          }
        }
      }
    }
  }

  Tensor out(Shape{n_batch, cout, h, wd});
  const double* pw = w.value().data();
  for (int n = 0; n < n_batch; ++n) {
    const double* cn = cols->data() + static_cast<std::size_t>(n) * k * hw;
    for (int o = 0; o < cout; ++o) {
      double* orow = out.data() + (static_cast<std::size_t>(n) * cout + o) * hw;
      std::fill(orow, orow + hw, b ? b->value()[o] : 0.0);
      for (std::size_t j = 0; j < k; ++j) {
        const double wv = pw[o * k + j];
        const double* crow = cn + j * hw;
        for (std::size_t p = 0; p < hw; ++p) orow[p] += wv * crow[p];
      }
    }
  }

  std::vector<Var> inputs{x, offset, w};
  if (b) inputs.push_back(*b);
  return x.tape->record(std::move(out), inputs, [=](Tape& t, const std::vector<double>& g) {
    double* gx = t.grad_buffer(x);
    double* goff = t.grad_buffer(offset);
    double* gw = t.grad_buffer(w);
    double* gb = b ? t.grad_buffer(*b) : nullptr;
    const double* xv = t.value(x).data();
    const double* ov = t.value(offset).data();
    const double* wv = t.value(w).data();
    std::vector<double> dcols(k * hw);
    for (int n = 0; n < n_batch; ++n) {
      const double* cn = cols->data() + static_cast<std::size_t>(n) * k * hw;
      const double* gn = g.data() + static_cast<std::size_t>(n) * cout * hw;
      std::fill(dcols.begin(), dcols.end(), 0.0);
      for (int o = 0; o < cout; ++o) {
        const double* grow = gn + static_cast<std::size_t>(o) * hw;
        if (gb) {
          double s = 0.0;
          for (std::size_t p = 0; p < hw; ++p) s += grow[p];
          gb[o] += s;
        }
        for (std::size_t j = 0; j < k; ++j) {
          const double* crow = cn + j * hw;
          double* drow = dcols.data() + j * hw;
          const double wj = wv[o * k + j];
          double acc = 0.0;
          for (std::size_t p = 0; p < hw; ++p) {
            acc += grow[p] * crow[p];
            drow[p] += wj * grow[p];
          }
          if (gw) gw[o * k + j] += acc;
        }
      }
      if (!gx && !goff) continue;
      for (int tap = 0; tap < 9; ++tap) {
        const int ki = tap / 3, kj = tap % 3;
        const std::size_t oy = (static_cast<std::size_t>(n) * 18 + 2 * tap) * hw;
        const std::size_t ox = oy + hw;
        for (int y = 0; y < h; ++y) {
          for (int xx = 0; xx < wd; ++xx) {
            const std::size_t pix = static_cast<std::size_t>(y) * wd + xx;
            const BilinearTap tp = make_tap(y - 1 + ki + ov[oy + pix], xx - 1 + kj + ov[ox + pix]);
            double sy = 0.0, sx = 0.0;
            for (int c = 0; c < cin; ++c) {
              const std::size_t plane_off = (static_cast<std::size_t>(n) * cin + c) * hw;
              double dpy, dpx;
              sample_backward(xv + plane_off, gx ? gx + plane_off : nullptr, h, wd, tp,
                              dcols[(static_cast<std::size_t>(c) * 9 + tap) * hw + pix], dpy, dpx);
              sy += dpy;
              sx += dpx;
            }
            if (goff) {
              goff[oy + pix] += sy;
              goff[ox + pix] += sx;
            }
          }
        }
      }
    }
  });
}

Var dynamic_depthwise_conv3x3(Var filters, Var x) {
  const Shape& xs = x.shape();
  const Shape& fs = filters.shape();
  if (xs.rank() != 4) throw ShapeError("dynamic_depthwise_conv3x3: input rank must be 4, got " + xs.str());
  if (fs.rank() != 4 || fs[0] != xs[0] || fs[1] != xs[1] || fs[2] != 3 || fs[3] != 3) {
    throw ShapeError("dynamic_depthwise_conv3x3: filters " + fs.str() + " must be (N,C,3,3) for input " +
                     xs.str());
  }
  // Each (n, c) pair is a 1x1x(H,W) convolution with its own 3x3 kernel.
  const int planes = xs[0] * xs[1];
  const int h = xs[2], wd = xs[3];
  const std::size_t hw = static_cast<std::size_t>(h) * wd;
  ConvGeometry g{1, 1, h, wd, 1, 3, 3, 1, 1, 1, 1, h, wd};
  Tensor out(xs);
  for (int p = 0; p < planes; ++p) {
    conv_forward(g, x.value().data() + p * hw, filters.value().data() + p * 9, nullptr,
                 out.data() + p * hw);
  }
  return x.tape->record(std::move(out), {filters, x}, [=](Tape& t, const std::vector<double>& gout) {
    double* gf = t.grad_buffer(filters);
    double* gx = t.grad_buffer(x);
    for (int p = 0; p < planes; ++p) {
      conv_backward(g, t.value(x).data() + p * hw, t.value(filters).data() + p * 9, gout.data() + p * hw,
                    gx ? gx + p * hw : nullptr, gf ? gf + p * 9 : nullptr, nullptr);
    }
  });
}

}  // namespace dcnas
