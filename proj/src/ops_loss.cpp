#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "dcnas/ops.hpp"

namespace dcnas {

namespace {

Var cross_entropy_impl(Var logits, const std::vector<std::uint8_t>& labels, bool average) {
  const Shape& s = logits.shape();
  if (s.rank() != 4) throw ShapeError("softmax_cross_entropy: logits rank must be 4, got " + s.str());
  const int n_batch = s[0], c_n = s[1];
  const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];
  if (labels.size() != static_cast<std::size_t>(n_batch) * hw) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     s.str());
  }
  const double* pz = logits.value().data();
  double total = 0.0;
  std::size_t count = 0;
  for (int n = 0; n < n_batch; ++n) {
    for (std::size_t p = 0; p < hw; ++p) {
      const int label = labels[n * hw + p];
      if (label == kIgnoreLabel) continue;
      if (label >= c_n) {
        throw Error("softmax_cross_entropy: label " + std::to_string(label) + " >= class count " +
                    std::to_string(c_n));
      }
      const double* z = pz + static_cast<std::size_t>(n) * c_n * hw + p;
      double zmax = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < c_n; ++c) zmax = std::max(zmax, z[c * hw]);
      double se = 0.0;
      for (int c = 0; c < c_n; ++c) se += std::exp(z[c * hw] - zmax);
      total += zmax + std::log(se) - z[label * hw];
      ++count;
    }
  }
  const double denom = average ? static_cast<double>(std::max<std::size_t>(count, 1)) : 1.0;
  return logits.tape->record(
      Tensor::scalar(count ? total / denom : 0.0), {logits},
      [logits, labels, n_batch, c_n, hw, denom](Tape& t, const std::vector<double>& g) {
        double* gz = t.grad_buffer(logits);
        const double* zv = t.value(logits).data();
        const double scale = g[0] / denom;
        std::vector<double> prob(c_n);
        for (int n = 0; n < n_batch; ++n) {
          for (std::size_t p = 0; p < hw; ++p) {
            const int label = labels[n * hw + p];
            if (label == kIgnoreLabel) continue;
            const std::size_t base = static_cast<std::size_t>(n) * c_n * hw + p;
            double zmax = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < c_n; ++c) zmax = std::max(zmax, zv[base + c * hw]);
            double se = 0.0;
            for (int c = 0; c < c_n; ++c) {
              prob[c] = std::exp(zv[base + c * hw] - zmax);
              se += prob[c];
            }
            for (int c = 0; c < c_n; ++c) {
              gz[base + c * hw] += scale * (prob[c] / se - (c == label ? 1.0 : 0.0));
            }
          }
        }
      });
}

void check_rows(const Shape& s, const char* op) {
  if (s.rank() != 4 || s[2] != 1 || s[3] != 1) {
    throw ShapeError(std::string(op) + ": input " + s.str() + " must be (N,V,1,1)");
  }
}

}  // namespace

Var softmax_cross_entropy(Var logits, const std::vector<std::uint8_t>& labels) {
  return cross_entropy_impl(logits, labels, true);
}

Var softmax_cross_entropy_sum(Var logits, const std::vector<std::uint8_t>& labels) {
  return cross_entropy_impl(logits, labels, false);
}

Var log_softmax_rows(Var logits, int valid) {
  const Shape& s = logits.shape();
  check_rows(s, "log_softmax_rows");
  const int n_batch = s[0], v = s[1];
  if (valid < 1 || valid > v) {
    throw ShapeError("log_softmax_rows: valid count " + std::to_string(valid) + " outside [1," +
                     std::to_string(v) + "]");
  }
  Tensor out(Shape{n_batch, valid, 1, 1});
  const double* pz = logits.value().data();
  for (int n = 0; n < n_batch; ++n) {
    const double* z = pz + static_cast<std::size_t>(n) * v;
    double zmax = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < valid; ++j) zmax = std::max(zmax, z[j]);
    double se = 0.0;
    for (int j = 0; j < valid; ++j) se += std::exp(z[j] - zmax);
    const double lse = zmax + std::log(se);
    for (int j = 0; j < valid; ++j) out[static_cast<std::size_t>(n) * valid + j] = z[j] - lse;
  }
  auto lp = std::make_shared<std::vector<double>>(out.values().begin(), out.values().end());
  return logits.tape->record(std::move(out), {logits}, [=](Tape& t, const std::vector<double>& g) {
    double* gz = t.grad_buffer(logits);
    for (int n = 0; n < n_batch; ++n) {
      const double* gr = g.data() + static_cast<std::size_t>(n) * valid;
      const double* lr = lp->data() + static_cast<std::size_t>(n) * valid;
      double gsum = 0.0;
      for (int j = 0; j < valid; ++j) gsum += gr[j];
      for (int j = 0; j < valid; ++j) gz[static_cast<std::size_t>(n) * v + j] += gr[j] - std::exp(lr[j]) * gsum;
    }
  });
}

Var gather_rows(Var x, const std::vector<int>& index) {
  const Shape& s = x.shape();
  check_rows(s, "gather_rows");
  const int n_batch = s[0], v = s[1];
  if (index.size() != static_cast<std::size_t>(n_batch)) {
    throw ShapeError("gather_rows: " + std::to_string(index.size()) + " indices for " + s.str());
  }
  Tensor out(Shape{n_batch, 1, 1, 1});
  for (int n = 0; n < n_batch; ++n) {
    if (index[n] < 0 || index[n] >= v) {
      throw ShapeError("gather_rows: index " + std::to_string(index[n]) + " outside dim 1 of " + s.str());
    }
    out[n] = x.value()[static_cast<std::size_t>(n) * v + index[n]];
  }
  return x.tape->record(std::move(out), {x}, [x, index, v](Tape& t, const std::vector<double>& g) {
    double* gx = t.grad_buffer(x);
    for (std::size_t n = 0; n < index.size(); ++n) gx[n * v + index[n]] += g[n];
  });
}

Var entropy_rows(Var logp) {
  const Shape& s = logp.shape();
  check_rows(s, "entropy_rows");
  const int n_batch = s[0], v = s[1];
  Tensor out(Shape{n_batch, 1, 1, 1});
  const double* pl = logp.value().data();
  for (int n = 0; n < n_batch; ++n) {
    double h = 0.0;
    for (int j = 0; j < v; ++j) {
      const double l = pl[static_cast<std::size_t>(n) * v + j];
      h -= std::exp(l) * l;
    }
    out[n] = h;
  }
  return logp.tape->record(std::move(out), {logp}, [logp, n_batch, v](Tape& t, const std::vector<double>& g) {
    double* gl = t.grad_buffer(logp);
    const double* lv = t.value(logp).data();
    for (int n = 0; n < n_batch; ++n) {
      for (int j = 0; j < v; ++j) {
        const std::size_t i = static_cast<std::size_t>(n) * v + j;
        gl[i] -= g[n] * std::exp(lv[i]) * (lv[i] + 1.0);
      }
    }
  });
}

Var embedding(Var table, const std::vector<int>& index) {
  const Shape& s = table.shape();
  check_rows(s, "embedding");
  const int rows = s[0], e = s[1];
  const int n_batch = static_cast<int>(index.size());
  if (n_batch < 1) throw ShapeError("embedding: empty index list");
  Tensor out(Shape{n_batch, e, 1, 1});
  for (int n = 0; n < n_batch; ++n) {
    if (index[n] < 0 || index[n] >= rows) {
      throw ShapeError("embedding: index " + std::to_string(index[n]) + " outside dim 0 of " + s.str());
    }
    const double* src = table.value().data() + static_cast<std::size_t>(index[n]) * e;
    std::copy(src, src + e, out.data() + static_cast<std::size_t>(n) * e);
  }
  return table.tape->record(std::move(out), {table}, [table, index, e](Tape& t, const std::vector<double>& g) {
    double* gt = t.grad_buffer(table);
    for (std::size_t n = 0; n < index.size(); ++n) {
      for (int k = 0; k < e; ++k) gt[static_cast<std::size_t>(index[n]) * e + k] += g[n * e + k];
    }
  });
}

Var ppo_clipped_surrogate(Var logp_new, const std::vector<double>& logp_old,
                          const std::vector<double>& advantage, double clip_eps) {
  const std::size_t n = logp_new.value().numel();
  if (logp_old.size() != n || advantage.size() != n || n == 0) {
    throw ShapeError("ppo_clipped_surrogate: batch sizes disagree");
  }
  std::vector<double> slope(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = std::exp(logp_new.value()[i] - logp_old[i]);
    const double unclipped = r * advantage[i];
    const double clipped = std::clamp(r, 1.0 - clip_eps, 1.0 + clip_eps) * advantage[i];
    if (unclipped <= clipped) {
      total += unclipped;
      slope[i] = unclipped;  // d(r A)/d logp_new = r A
    } else {
      total += clipped;  // constant in logp_new
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  return logp_new.tape->record(Tensor::scalar(total * inv), {logp_new},
                               [logp_new, slope, inv](Tape& t, const std::vector<double>& g) {
                                 double* gl = t.grad_buffer(logp_new);
                                 for (std::size_t i = 0; i < slope.size(); ++i) gl[i] += g[0] * slope[i] * inv;
                               });
}

std::vector<std::uint8_t> argmax_channels(const Tensor& logits) {
  const Shape& s = logits.shape();
  if (s.rank() != 4) throw ShapeError("argmax_channels: rank must be 4, got " + s.str());
  const int n_batch = s[0], c_n = s[1];
  const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n_batch) * hw);
  for (int n = 0; n < n_batch; ++n) {
    for (std::size_t p = 0; p < hw; ++p) {
      const double* z = logits.data() + static_cast<std::size_t>(n) * c_n * hw + p;
      int best = 0;
      for (int c = 1; c < c_n; ++c) {
        if (z[c * hw] > z[best * hw]) best = c;
      }
      out[n * hw + p] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

}  // namespace dcnas
