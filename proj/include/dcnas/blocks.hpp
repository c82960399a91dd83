#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "dcnas/ops.hpp"

namespace dcnas {

/// Candidate operations applied to a sampled input, numbered as in the search space.
enum class OpId : int {
  SepConv3x3 = 0,
  GapConv1x1 = 1,
  SepConv3x3Dil3 = 2,
  SepConv5x5Dil6 = 3,
  Skip = 4,
  DeformConv3x3 = 5,
};

/// Aggregations combining the two processed inputs of a step.
enum class AggId : int {
  WeightedSum = 0,
  ConcatConv1x1 = 1,
  Predictive = 2,
  AffineSample = 3,
  Conv3d = 4,
  DenseAttention = 5,
};

inline constexpr int kNumOps = 6;
inline constexpr int kNumAggs = 6;

OpId op_from_int(int id);
AggId agg_from_int(int id);
std::string_view op_name(OpId id);
std::string_view agg_name(AggId id);

enum class BlockKind { Op, Agg, Projection };

/// A parameterized block: one candidate op, one aggregation, or a 1x1
/// projection (used for input harmonization and the cell output).
struct OpInstance {
  BlockKind kind = BlockKind::Projection;
  int id = 0;  // OpId or AggId value; 0 for projections
  int in_channels = 0;
  int out_channels = 0;
  std::vector<std::string> names;
  std::vector<Parameter> params;

  static OpInstance op(OpId id, int in_channels, int out_channels, std::mt19937_64& rng);
  static OpInstance agg(AggId id, int channels, std::mt19937_64& rng);
  static OpInstance projection(int in_channels, int out_channels, std::mt19937_64& rng);

  Parameter& param(std::string_view name);
  OpId op_id() const { return static_cast<OpId>(id); }
  AggId agg_id() const { return static_cast<AggId>(id); }
};

/// Runs a candidate op; output keeps x's spatial size and has out_channels
/// channels. Every op except skip ends in relu.
Var apply_op(OpInstance& inst, Var x);

/// Deformable 3x3 conv: offsets from an ordinary 3x3 conv on x (18 channels),
/// then bilinear gathering at the displaced taps.
Var deformable_conv3x3(Var x, Var offset_w, Var offset_b, Var main_w, Var main_b);

/// Combines two harmonized inputs of identical shape.
Var apply_agg(OpInstance& inst, Var a, Var b);

/// 1x1 projection to target_c channels, then bilinear resize to (target_h, target_w).
Var harmonize(Var x, int target_c, int target_h, int target_w, OpInstance& proj);

/// Scalar trainable values of a block, from its kind and widths.
std::int64_t op_param_count(BlockKind kind, int id, int in_channels, int out_channels);
std::int64_t op_param_count(const OpInstance& inst);

/// Sets a square projection to the identity map (unit diagonal, zero bias).
void set_identity(OpInstance& proj);

}  // namespace dcnas
