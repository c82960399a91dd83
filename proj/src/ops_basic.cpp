#include <algorithm>
#include <cmath>
#include <string>

#include "dcnas/ops.hpp"

namespace dcnas {

namespace {

// Maps every flat index of `a` to the flat index of `b`, where b broadcasts
// along axes of extent 1. Empty when the shapes are equal.
std::vector<std::size_t> broadcast_index(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return {};
  if (a.rank() != b.rank()) {
    throw ShapeError(std::string(op) + ": rank mismatch " + a.str() + " vs " + b.str());
  }
  const int r = a.rank();
  std::vector<std::size_t> bstride(r, 0);
  std::size_t stride = 1;
  for (int i = r - 1; i >= 0; --i) {
    if (b[i] == a[i]) {
      bstride[i] = stride;
    } else if (b[i] != 1) {
      throw ShapeError(std::string(op) + ": dim " + std::to_string(i) + " of " + b.str() +
                       " cannot broadcast to " + a.str());
    }
    stride *= static_cast<std::size_t>(b[i]);
  }
  std::vector<std::size_t> map(a.numel());
  std::vector<int> idx(r, 0);
  std::size_t bi = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    map[i] = bi;
    for (int ax = r - 1; ax >= 0; --ax) {
      if (++idx[ax] < a[ax]) {
        bi += bstride[ax];
        break;
      }
      bi -= bstride[ax] * (a[ax] - 1);
      idx[ax] = 0;
    }
  }
  return map;
}

template <class F, class D>
Var unary(Var x, F f, D dfdx_from_out) {
  Tensor out(x.shape());
  const double* px = x.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(px[i]);
  return x.tape->record(std::move(out), {x}, [x, dfdx_from_out](Tape& t, const std::vector<double>& g) {
    double* gx = t.grad_buffer(x);
    const double* xv = t.value(x).data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx_from_out(xv[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  auto map = broadcast_index(a.shape(), b.shape(), "add");
  Tensor out(a.shape());
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  if (map.empty()) {
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = pa[i] + pb[i];
  } else {
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = pa[i] + pb[map[i]];
  }
  return a.tape->record(std::move(out), {a, b}, [a, b, map](Tape& t, const std::vector<double>& g) {
    if (double* ga = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (double* gb = t.grad_buffer(b)) {
      if (map.empty()) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) gb[map[i]] += g[i];
      }
    }
  });
}

Var mul(Var a, Var b) {
  auto map = broadcast_index(a.shape(), b.shape(), "mul");
  Tensor out(a.shape());
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  auto bidx = [&map](std::size_t i) { return map.empty() ? i : map[i]; };
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = pa[i] * pb[bidx(i)];
  return a.tape->record(std::move(out), {a, b}, [a, b, map](Tape& t, const std::vector<double>& g) {
    const double* av = t.value(a).data();
    const double* bv = t.value(b).data();
    double* ga = t.grad_buffer(a);
    double* gb = t.grad_buffer(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t j = map.empty() ? i : map[i];
      if (ga) ga[i] += g[i] * bv[j];
      if (gb) gb[j] += g[i] * av[i];
    }
  });
}

Var scale_by_channel(Var a, Var s) {
  const Shape& as = a.shape();
  const Shape& ss = s.shape();
  if (as.rank() != 4 || ss.rank() != 4 || ss[1] != as[1] || ss[2] != 1 || ss[3] != 1 ||
      (ss[0] != 1 && ss[0] != as[0])) {
    throw ShapeError("scale_by_channel: scales " + ss.str() + " must be (1,C,1,1) or (N,C,1,1) for " +
                     as.str());
  }
  return mul(a, s);
}

Var scale(Var x, double factor) {
  Tensor out(x.shape());
  const double* px = x.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = px[i] * factor;
  return x.tape->record(std::move(out), {x}, [x, factor](Tape& t, const std::vector<double>& g) {
    double* gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
}

Var sigmoid(Var x) {
  auto f = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  return unary(x, f, [f](double v) {
    const double s = f(v);
    return s * (1.0 - s);
  });
}

Var relu(Var x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var x) {
  return unary(x, [](double v) { return std::tanh(v); },
               [](double v) {
                 const double th = std::tanh(v);
                 return 1.0 - th * th;
               });
}

Var exp(Var x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = xs.front().shape();
  if (s0.rank() != 4) throw ShapeError("concat_channels: input rank must be 4, got " + s0.str());
  int total = 0;
  for (const Var& v : xs) {
    const Shape& s = v.shape();
    if (s.rank() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
      throw ShapeError("concat_channels: " + s.str() + " incompatible with " + s0.str() +
                       " outside dim 1");
    }
    total += s[1];
  }
  const int n_batch = s0[0];
  const std::size_t plane = static_cast<std::size_t>(s0[2]) * s0[3];
  Tensor out(Shape{n_batch, total, s0[2], s0[3]});
  std::vector<int> offsets;
  int off = 0;
  for (const Var& v : xs) {
    const int c = v.shape()[1];
    offsets.push_back(off);
    for (int n = 0; n < n_batch; ++n) {
      const double* src = v.value().data() + static_cast<std::size_t>(n) * c * plane;
      std::copy(src, src + c * plane, out.data() + (static_cast<std::size_t>(n) * total + off) * plane);
    }
    off += c;
  }
  return xs.front().tape->record(std::move(out), xs, [xs, offsets, total, n_batch, plane](
                                                         Tape& t, const std::vector<double>& g) {
    for (std::size_t k = 0; k < xs.size(); ++k) {
      double* gx = t.grad_buffer(xs[k]);
      if (!gx) continue;
      const int c = t.value(xs[k]).shape()[1];
      for (int n = 0; n < n_batch; ++n) {
        const double* src = g.data() + (static_cast<std::size_t>(n) * total + offsets[k]) * plane;
        double* dst = gx + static_cast<std::size_t>(n) * c * plane;
        for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
      }
    }
  });
}

Var slice_channels(Var x, int start, int count) {
  const Shape& s = x.shape();
  if (s.rank() != 4) throw ShapeError("slice_channels: input rank must be 4, got " + s.str());
  if (start < 0 || count < 1 || start + count > s[1]) {
    throw ShapeError("slice_channels: range [" + std::to_string(start) + "," + std::to_string(start + count) +
                     ") outside channel dim 1 of " + s.str());
  }
  const int n_batch = s[0], c = s[1];
  const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
  Tensor out(Shape{n_batch, count, s[2], s[3]});
  for (int n = 0; n < n_batch; ++n) {
    const double* src = x.value().data() + (static_cast<std::size_t>(n) * c + start) * plane;
    std::copy(src, src + count * plane, out.data() + static_cast<std::size_t>(n) * count * plane);
  }
  return x.tape->record(std::move(out), {x}, [=](Tape& t, const std::vector<double>& g) {
    double* gx = t.grad_buffer(x);
    for (int n = 0; n < n_batch; ++n) {
      double* dst = gx + (static_cast<std::size_t>(n) * c + start) * plane;
      const double* src = g.data() + static_cast<std::size_t>(n) * count * plane;
      for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
    }
  });
}

Var linear(Var x, Var w, std::optional<Var> b) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.rank() != 4 || xs[2] != 1 || xs[3] != 1) {
    throw ShapeError("linear: input " + xs.str() + " must be (N,F,1,1)");
  }
  if (ws.rank() != 4 || ws[1] != xs[1] || ws[2] != 1 || ws[3] != 1) {
    throw ShapeError("linear: weight " + ws.str() + " must be (O," + std::to_string(xs[1]) + ",1,1)");
  }
  const int n_batch = xs[0], f = xs[1], o = ws[0];
  if (b && b->shape() != Shape{1, o, 1, 1}) {
    throw ShapeError("linear: bias " + b->shape().str() + " must be (1," + std::to_string(o) + ",1,1)");
  }
  Tensor out(Shape{n_batch, o, 1, 1});
  const double* px = x.value().data();
  const double* pw = w.value().data();
  for (int n = 0; n < n_batch; ++n) {
    const double* xr = px + static_cast<std::size_t>(n) * f;
    for (int k = 0; k < o; ++k) {
      const double* wr = pw + static_cast<std::size_t>(k) * f;
      double acc = b ? b->value()[k] : 0.0;
      for (int i = 0; i < f; ++i) acc += wr[i] * xr[i];
      out[static_cast<std::size_t>(n) * o + k] = acc;
    }
  }
  std::vector<Var> inputs{x, w};
  if (b) inputs.push_back(*b);
  return x.tape->record(std::move(out), inputs, [=](Tape& t, const std::vector<double>& g) {
    double* gx = t.grad_buffer(x);
    double* gw = t.grad_buffer(w);
    double* gb = b ? t.grad_buffer(*b) : nullptr;
    const double* xv = t.value(x).data();
    const double* wv = t.value(w).data();
    for (int n = 0; n < n_batch; ++n) {
      const double* xr = xv + static_cast<std::size_t>(n) * f;
      double* gxr = gx ? gx + static_cast<std::size_t>(n) * f : nullptr;
      for (int k = 0; k < o; ++k) {
        const double gk = g[static_cast<std::size_t>(n) * o + k];
        if (gk == 0.0) continue;
        if (gb) gb[k] += gk;
        const double* wr = wv + static_cast<std::size_t>(k) * f;
        if (gw) {
          double* gwr = gw + static_cast<std::size_t>(k) * f;
          for (int i = 0; i < f; ++i) gwr[i] += gk * xr[i];
        }
        if (gxr) {
          for (int i = 0; i < f; ++i) gxr[i] += gk * wr[i];
        }
      }
    }
  });
}

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().values()) acc += v;
  return x.tape->record(Tensor::scalar(acc), {x}, [x](Tape& t, const std::vector<double>& g) {
    double* gx = t.grad_buffer(x);
    const std::size_t n = t.value(x).numel();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

Var weighted_sum(Var x, const Tensor& weights) {
  if (weights.shape() != x.shape()) {
    throw ShapeError("weighted_sum: weights " + weights.shape().str() + " vs input " + x.shape().str());
  }
  double acc = 0.0;
  const double* px = x.value().data();
  for (std::size_t i = 0; i < weights.numel(); ++i) acc += px[i] * weights[i];
  return x.tape->record(Tensor::scalar(acc), {x}, [x, weights](Tape& t, const std::vector<double>& g) {
    double* gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < weights.numel(); ++i) gx[i] += g[0] * weights[i];
  });
}

Var l1_normalize_planes(Var x, double eps) {
  const Shape& s = x.shape();
  if (s.rank() != 4) throw ShapeError("l1_normalize_planes: input rank must be 4, got " + s.str());
  const int planes = s[0] * s[1];
  const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];
  std::vector<double> norms(planes);
  Tensor out(s);
  const double* px = x.value().data();
  for (int p = 0; p < planes; ++p) {
    double acc = eps;
    for (std::size_t i = 0; i < hw; ++i) acc += std::abs(px[p * hw + i]);
    norms[p] = acc;
    for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] = px[p * hw + i] / acc;
  }
  return x.tape->record(std::move(out), {x}, [=](Tape& t, const std::vector<double>& g) {
    double* gx = t.grad_buffer(x);
    const double* xv = t.value(x).data();
    for (int p = 0; p < planes; ++p) {
      const double z = norms[p];
      // d(x_i / z)/dx_j = delta_ij / z - x_i sign(x_j) / z^2
      double dot = 0.0;
      for (std::size_t i = 0; i < hw; ++i) dot += g[p * hw + i] * xv[p * hw + i];
      for (std::size_t j = 0; j < hw; ++j) {
        const double v = xv[p * hw + j];
        const double sgn = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
        gx[p * hw + j] += g[p * hw + j] / z - dot * sgn / (z * z);
      }
    }
  });
}

}  // namespace dcnas
