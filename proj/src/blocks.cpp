#include "dcnas/blocks.hpp"

#include <cmath>

namespace dcnas {

namespace {

struct SepSpec {
  int kernel;
  int dilation;
};

SepSpec sep_spec(OpId id) {
  switch (id) {
    case OpId::SepConv3x3: return {3, 1};
    case OpId::SepConv3x3Dil3: return {3, 3};
    case OpId::SepConv5x5Dil6: return {5, 6};
    default: throw Error("sep_spec: not a separable op");
  }
}

Tensor he_normal(const Shape& s, int fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  Tensor t(s);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

void add_param(OpInstance& inst, std::string name, Tensor value) {
  inst.names.push_back(std::move(name));
  inst.params.emplace_back(std::move(value));
}

}  // namespace

OpId op_from_int(int id) {
  if (id < 0 || id >= kNumOps) throw Error("op id " + std::to_string(id) + " outside [0,5]");
  return static_cast<OpId>(id);
}

AggId agg_from_int(int id) {
  if (id < 0 || id >= kNumAggs) throw Error("aggregation id " + std::to_string(id) + " outside [0,5]");
  return static_cast<AggId>(id);
}

std::string_view op_name(OpId id) {
  switch (id) {
    case OpId::SepConv3x3: return "sep_conv_3x3";
    case OpId::GapConv1x1: return "gap_upsample_conv_1x1";
    case OpId::SepConv3x3Dil3: return "sep_conv_3x3_dil3";
    case OpId::SepConv5x5Dil6: return "sep_conv_5x5_dil6";
    case OpId::Skip: return "skip";
    case OpId::DeformConv3x3: return "deform_conv_3x3";
  }
  return "?";
}

std::string_view agg_name(AggId id) {
  switch (id) {
    case AggId::WeightedSum: return "weighted_sum";
    case AggId::ConcatConv1x1: return "concat_conv_1x1";
    case AggId::Predictive: return "predictive_filters";
    case AggId::AffineSample: return "affine_sampling";
    case AggId::Conv3d: return "conv3d_2x3x3";
    case AggId::DenseAttention: return "dense_attention";
  }
  return "?";
}

OpInstance OpInstance::op(OpId id, int in, int out, std::mt19937_64& rng) {
  OpInstance inst;
  inst.kind = BlockKind::Op;
  inst.id = static_cast<int>(id);
  inst.in_channels = in;
  inst.out_channels = out;
  switch (id) {
    case OpId::SepConv3x3:
    case OpId::SepConv3x3Dil3:
    case OpId::SepConv5x5Dil6: {
      const int k = sep_spec(id).kernel;
      add_param(inst, "depthwise.w", he_normal(Shape{in, 1, k, k}, k * k, rng));
      add_param(inst, "pointwise.w", he_normal(Shape{out, in, 1, 1}, in, rng));
      add_param(inst, "pointwise.b", Tensor(Shape{1, out, 1, 1}));
      break;
    }
    case OpId::GapConv1x1:
      add_param(inst, "conv.w", he_normal(Shape{out, in, 1, 1}, in, rng));
      add_param(inst, "conv.b", Tensor(Shape{1, out, 1, 1}));
      break;
    case OpId::Skip:
      if (in != out) throw ShapeError("skip-connection needs equal widths, got " + std::to_string(in) + " -> " +
                                      std::to_string(out));
      break;
    case OpId::DeformConv3x3:
      add_param(inst, "offset.w", Tensor(Shape{18, in, 3, 3}));
      add_param(inst, "offset.b", Tensor(Shape{1, 18, 1, 1}));
      add_param(inst, "main.w", he_normal(Shape{out, in, 3, 3}, in * 9, rng));
      add_param(inst, "main.b", Tensor(Shape{1, out, 1, 1}));
      break;
  }
  return inst;
}

OpInstance OpInstance::agg(AggId id, int c, std::mt19937_64& rng) {
  OpInstance inst;
  inst.kind = BlockKind::Agg;
  inst.id = static_cast<int>(id);
  inst.in_channels = c;
  inst.out_channels = c;
  switch (id) {
    case AggId::WeightedSum:
      add_param(inst, "weight.a", Tensor(Shape{1, c, 1, 1}, 1.0));
      add_param(inst, "weight.b", Tensor(Shape{1, c, 1, 1}, 1.0));
      break;
    case AggId::ConcatConv1x1:
      add_param(inst, "conv.w", he_normal(Shape{c, 2 * c, 1, 1}, 2 * c, rng));
      add_param(inst, "conv.b", Tensor(Shape{1, c, 1, 1}));
      break;
    case AggId::Predictive:
    case AggId::DenseAttention:
      break;
    case AggId::AffineSample:
      add_param(inst, "theta.w", Tensor(Shape{6, c, 1, 1}));
      add_param(inst, "theta.b", Tensor(Shape{1, 6, 1, 1}, std::vector<double>{1, 0, 0, 0, 1, 0}));
      break;
    case AggId::Conv3d:
      add_param(inst, "conv3d.w", he_normal(Shape{c, c, 2, 3, 3}, c * 18, rng));
      add_param(inst, "conv3d.b", Tensor(Shape{1, c, 1, 1}));
      break;
  }
  return inst;
}

OpInstance OpInstance::projection(int in, int out, std::mt19937_64& rng) {
  OpInstance inst;
  inst.kind = BlockKind::Projection;
  inst.in_channels = in;
  inst.out_channels = out;
  add_param(inst, "proj.w", he_normal(Shape{out, in, 1, 1}, in, rng));
  add_param(inst, "proj.b", Tensor(Shape{1, out, 1, 1}));
  return inst;
}

Parameter& OpInstance::param(std::string_view name) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return params[i];
  }
  throw Error("block has no parameter named " + std::string(name));
}

Var deformable_conv3x3(Var x, Var offset_w, Var offset_b, Var main_w, Var main_b) {
  Var offset = conv2d(x, offset_w, offset_b, {.pad = 1});
  return deform_conv3x3(x, offset, main_w, main_b);
}

Var apply_op(OpInstance& inst, Var x) {
  if (inst.kind != BlockKind::Op) throw Error("apply_op: block is not a candidate op");
  if (x.shape()[1] != inst.in_channels) {
    throw ShapeError("apply_op(" + std::string(op_name(inst.op_id())) + "): input channels (dim 1) = " +
                     std::to_string(x.shape()[1]) + ", expected " + std::to_string(inst.in_channels));
  }
  Tape& t = *x.tape;
  auto p = [&](std::size_t i) { return t.parameter(inst.params[i]); };
  switch (inst.op_id()) {
    case OpId::SepConv3x3:
    case OpId::SepConv3x3Dil3:
    case OpId::SepConv5x5Dil6: {
      const SepSpec s = sep_spec(inst.op_id());
      Var dw = conv2d(x, p(0), std::nullopt,
                      {.dilation = s.dilation, .groups = inst.in_channels, .pad = same_padding(s.kernel, s.dilation)});
      return relu(conv2d(dw, p(1), p(2), {}));
    }
    case OpId::GapConv1x1: {
      Var pooled = conv2d(global_avg_pool(x), p(0), p(1), {});
      return relu(bilinear_resize(pooled, x.shape()[2], x.shape()[3]));
    }
    case OpId::Skip:
      return x;
    case OpId::DeformConv3x3:
      return relu(deformable_conv3x3(x, p(0), p(1), p(2), p(3)));
  }
  throw Error("apply_op: unknown op");
}

Var apply_agg(OpInstance& inst, Var a, Var b) {
  if (inst.kind != BlockKind::Agg) throw Error("apply_agg: block is not an aggregation");
  if (a.shape() != b.shape()) {
    throw ShapeError("apply_agg(" + std::string(agg_name(inst.agg_id())) + "): inputs not harmonized, " +
                     a.shape().str() + " vs " + b.shape().str());
  }
  if (a.shape()[1] != inst.in_channels) {
    throw ShapeError("apply_agg(" + std::string(agg_name(inst.agg_id())) + "): channels (dim 1) = " +
                     std::to_string(a.shape()[1]) + ", expected " + std::to_string(inst.in_channels));
  }
  Tape& t = *a.tape;
  auto p = [&](std::size_t i) { return t.parameter(inst.params[i]); };
  const int h = a.shape()[2], w = a.shape()[3];
  switch (inst.agg_id()) {
    case AggId::WeightedSum:
      return add(scale_by_channel(a, p(0)), scale_by_channel(b, p(1)));
    case AggId::ConcatConv1x1:
      return conv2d(concat_channels({a, b}), p(0), p(1), {});
    case AggId::Predictive: {
      Var filters = l1_normalize_planes(adaptive_avg_pool(a, 3, 3));
      return dynamic_depthwise_conv3x3(filters, b);
    }
    case AggId::AffineSample: {
      Var theta = linear(global_avg_pool(b), p(0), p(1));
      return grid_sample(a, affine_grid(theta, h, w));
    }
    case AggId::Conv3d:
      return conv3d_2x3x3(stack_depth(a, b), p(0), p(1));
    case AggId::DenseAttention:
      return mul(a, sigmoid(b));
  }
  throw Error("apply_agg: unknown aggregation");
}

Var harmonize(Var x, int target_c, int target_h, int target_w, OpInstance& proj) {
  if (proj.kind != BlockKind::Projection || proj.out_channels != target_c || proj.in_channels != x.shape()[1]) {
    throw ShapeError("harmonize: projection " + std::to_string(proj.in_channels) + "->" +
                     std::to_string(proj.out_channels) + " does not map " + x.shape().str() + " to " +
                     std::to_string(target_c) + " channels");
  }
  Tape& t = *x.tape;
  Var y = conv2d(x, t.parameter(proj.params[0]), t.parameter(proj.params[1]), {});
  if (y.shape()[2] == target_h && y.shape()[3] == target_w) return y;
  return bilinear_resize(y, target_h, target_w);
}

std::int64_t op_param_count(BlockKind kind, int id, int in, int out) {
  const std::int64_t ci = in, co = out;
  switch (kind) {
    case BlockKind::Projection:
      return ci * co + co;
    case BlockKind::Op:
      switch (op_from_int(id)) {
        case OpId::SepConv3x3:
        case OpId::SepConv3x3Dil3: return ci * 9 + co * ci + co;
        case OpId::SepConv5x5Dil6: return ci * 25 + co * ci + co;
        case OpId::GapConv1x1: return co * ci + co;
        case OpId::Skip: return 0;
        case OpId::DeformConv3x3: return 18 * ci * 9 + 18 + co * ci * 9 + co;
      }
      break;
    case BlockKind::Agg:
      switch (agg_from_int(id)) {
        case AggId::WeightedSum: return 2 * ci;
        case AggId::ConcatConv1x1: return 2 * ci * ci + ci;
        case AggId::Predictive: return 0;
        case AggId::AffineSample: return 6 * ci + 6;
        case AggId::Conv3d: return 18 * ci * ci + ci;
        case AggId::DenseAttention: return 0;
      }
      break;
  }
  return 0;
}

std::int64_t op_param_count(const OpInstance& inst) {
  return op_param_count(inst.kind, inst.id, inst.in_channels, inst.out_channels);
}

void set_identity(OpInstance& proj) {
  if (proj.kind != BlockKind::Projection || proj.in_channels != proj.out_channels) {
    throw Error("set_identity: needs a square projection");
  }
  Tensor& w = proj.params[0].value;
  w.fill(0.0);
  for (int c = 0; c < proj.out_channels; ++c) w[static_cast<std::size_t>(c) * proj.in_channels + c] = 1.0;
  proj.params[1].value.fill(0.0);
}

}  // namespace dcnas
