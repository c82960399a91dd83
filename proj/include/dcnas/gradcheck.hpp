#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dcnas/tape.hpp"

namespace dcnas {

/// Builds a scalar loss on a fresh tape. Must be a deterministic function of
/// the parameter values.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckResult {
  /// Relative error per parameter, in input order.
  std::vector<double> relative_errors;
  double max_relative_error = 0.0;
  std::size_t entries_checked = 0;
};

/// ||a - b||_2 / max(||a||_2, ||b||_2); 0 when both vectors vanish.
double relative_error(std::span<const double> a, std::span<const double> b);

/// Compares reverse-mode gradients against central differences with step `h`.
/// When `max_entries` is set, only that many randomly chosen entries of each
/// parameter are perturbed (spot check). Frozen parameters are temporarily
/// made trainable and restored afterwards.
GradCheckResult check_gradients(std::span<Parameter* const> params, const LossBuilder& loss,
                                double h = 1e-5, std::optional<std::size_t> max_entries = std::nullopt,
                                std::uint64_t seed = 0);

}  // namespace dcnas
