#include "dcnas/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace dcnas {

double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  if (denom == 0.0) return 0.0;
  return std::sqrt(diff) / denom;
}

GradCheckResult check_gradients(std::span<Parameter* const> params, const LossBuilder& loss, double h,
                                std::optional<std::size_t> max_entries, std::uint64_t seed) {
  std::vector<bool> was_trainable;
  for (Parameter* p : params) {
    was_trainable.push_back(p->trainable());
    p->set_trainable(true);
    p->zero_grad();
  }
  {
    Tape tape;
    Var root = loss(tape);
    tape.backward(root);
  }
  auto eval = [&loss]() {
    Tape tape;
    return loss(tape).value()[0];
  };

  std::mt19937_64 rng(seed);
  GradCheckResult result;
  for (Parameter* p : params) {
    std::vector<std::size_t> entries(p->value.numel());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (max_entries && *max_entries < entries.size()) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(*max_entries);
    }
    std::vector<double> analytic, numeric;
    for (std::size_t i : entries) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = eval();
      p->value[i] = orig - h;
      const double down = eval();
      p->value[i] = orig;
      numeric.push_back((up - down) / (2.0 * h));
      analytic.push_back(p->grad[i]);
    }
    const double err = relative_error(analytic, numeric);
    result.relative_errors.push_back(err);
    result.max_relative_error = std::max(result.max_relative_error, err);
    result.entries_checked += entries.size();
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!was_trainable[i]) params[i]->set_trainable(false);
  }
  return result;
}

}  // namespace dcnas
