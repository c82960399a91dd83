#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "dcnas/blocks.hpp"

namespace dcnas {

inline constexpr int kNumInputSlots = 5;
inline constexpr int kTokensPerStep = 5;

/// Raw cell inputs. scale_divisor is the stride relative to the input frame.
struct InputSlot {
  int id;
  std::string_view name;
  int scale_divisor;
};

const std::array<InputSlot, kNumInputSlots>& input_slots();

struct Step {
  int in1 = 0;
  int in2 = 0;
  OpId op1 = OpId::SepConv3x3;
  OpId op2 = OpId::SepConv3x3;
  AggId agg = AggId::WeightedSum;

  bool operator==(const Step&) const = default;
};

struct Genotype {
  std::vector<Step> steps;

  int k() const { return static_cast<int>(steps.size()); }
  bool operator==(const Genotype&) const = default;
};

/// Throws Error naming the step and field of the first out-of-range token.
void validate(const Genotype& g);

Genotype decode(std::span<const int> tokens, int k);
std::vector<int> encode(const Genotype& g);

/// One line of 5K comma-separated integers.
std::string to_text(const Genotype& g);
/// Accepts comma- or whitespace-separated tokens.
Genotype parse_genotype(std::string_view text);

/// Uniform over valid token strings.
Genotype random_genotype(int k, std::mt19937_64& rng);

/// Op edge from a pool node into aggregate node 5+step.
struct CellEdge {
  int from;
  int to;
  OpId op;
  int slot;  // 0 for the in1 branch, 1 for in2
};

struct CellGraph {
  int k = 0;
  std::vector<CellEdge> edges;
  std::vector<int> output_set;  // ascending aggregate node ids
};

CellGraph build_graph(const Genotype& g);

using BigUint = boost::multiprecision::cpp_int;

/// Number of distinct token strings for K steps.
BigUint space_size(int k);

struct CellConfig {
  int cell_width = 16;
  int dec_width = 16;
  /// Channels of (dec_prev, layer4_prev, layer2, layer3, layer4).
  std::array<int, kNumInputSlots> slot_channels{16, 32, 16, 24, 32};
};

std::int64_t cell_param_count(const Genotype& g, const CellConfig& cfg);

std::string emit_dot(const Genotype& g);

/// An instantiated cell: harmonizing projections for the five slots, two ops
/// and one aggregation per step, and the output projection.
class Cell {
 public:
  Cell(Genotype g, const CellConfig& cfg, std::mt19937_64& rng);

  /// Slots in input_slots() order. Returns (N, dec_width, out_h, out_w).
  Var forward(const std::array<Var, kNumInputSlots>& slots, int out_h, int out_w);

  const Genotype& genotype() const { return genotype_; }
  const CellGraph& graph() const { return graph_; }
  const CellConfig& config() const { return cfg_; }

  std::vector<std::pair<std::string, Parameter*>> named_parameters();
  std::vector<Parameter*> parameters();
  std::int64_t param_count() const;

 private:
  Genotype genotype_;
  CellConfig cfg_;
  CellGraph graph_;
  std::vector<OpInstance> harmonizers_;
  std::vector<OpInstance> ops_;  // 2 per step
  std::vector<OpInstance> aggs_;
  OpInstance out_proj_;
};

}  // namespace dcnas
