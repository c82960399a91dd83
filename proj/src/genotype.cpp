#include "dcnas/genotype.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <optional>
#include <sstream>

namespace dcnas {

namespace {

constexpr std::array<InputSlot, kNumInputSlots> kSlots{{
    {0, "dec_prev", 8},
    {1, "layer4_prev", 32},
    {2, "layer2", 8},
    {3, "layer3", 16},
    {4, "layer4", 32},
}};

constexpr const char* kFieldNames[kTokensPerStep] = {"in1", "in2", "op1", "op2", "agg"};

void check_token(int step, int field, int value, int bound) {
  if (value < 0 || value >= bound) {
    throw Error("genotype step " + std::to_string(step) + " field " + kFieldNames[field] + ": token " +
                std::to_string(value) + " outside [0," + std::to_string(bound - 1) + "]");
  }
}

}  // namespace

const std::array<InputSlot, kNumInputSlots>& input_slots() { return kSlots; }

void validate(const Genotype& g) {
  if (g.k() < 1) throw Error("genotype must have at least one step");
  for (int i = 0; i < g.k(); ++i) {
    const Step& s = g.steps[i];
    check_token(i, 0, s.in1, kNumInputSlots + i);
    check_token(i, 1, s.in2, kNumInputSlots + i);
    check_token(i, 2, static_cast<int>(s.op1), kNumOps);
    check_token(i, 3, static_cast<int>(s.op2), kNumOps);
    check_token(i, 4, static_cast<int>(s.agg), kNumAggs);
  }
}

Genotype decode(std::span<const int> tokens, int k) {
  if (k < 1) throw Error("decode: K must be >= 1, got " + std::to_string(k));
  if (tokens.size() != static_cast<std::size_t>(kTokensPerStep * k)) {
    throw Error("decode: expected " + std::to_string(kTokensPerStep * k) + " tokens for K=" + std::to_string(k) +
                ", got " + std::to_string(tokens.size()));
  }
  Genotype g;
  for (int i = 0; i < k; ++i) {
    const int* t = tokens.data() + kTokensPerStep * i;
    check_token(i, 0, t[0], kNumInputSlots + i);
    check_token(i, 1, t[1], kNumInputSlots + i);
    check_token(i, 2, t[2], kNumOps);
    check_token(i, 3, t[3], kNumOps);
    check_token(i, 4, t[4], kNumAggs);
    g.steps.push_back(Step{t[0], t[1], static_cast<OpId>(t[2]), static_cast<OpId>(t[3]), static_cast<AggId>(t[4])});
  }
  return g;
}

std::vector<int> encode(const Genotype& g) {
  validate(g);
  std::vector<int> out;
  out.reserve(kTokensPerStep * g.steps.size());
  for (const Step& s : g.steps) {
    out.insert(out.end(), {s.in1, s.in2, static_cast<int>(s.op1), static_cast<int>(s.op2), static_cast<int>(s.agg)});
  }
  return out;
}

std::string to_text(const Genotype& g) {
  std::string out;
  for (int t : encode(g)) {
    if (!out.empty()) out += ',';
    out += std::to_string(t);
  }
  return out;
}

Genotype parse_genotype(std::string_view text) {
  std::vector<int> tokens;
  // Commas separate fields when present; otherwise whitespace does.
  const bool commas = text.find(',') != std::string_view::npos;
  std::size_t pos = 0;
  if (!commas) {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }
  while (pos <= text.size()) {
    std::size_t end = commas ? text.find(',', pos) : text.find_first_of(" \t\r\n", pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view field = text.substr(pos, end - pos);
    while (!field.empty() && std::isspace(static_cast<unsigned char>(field.front()))) field.remove_prefix(1);
    while (!field.empty() && std::isspace(static_cast<unsigned char>(field.back()))) field.remove_suffix(1);
    int v = 0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
      throw Error("parse_genotype: bad token '" + std::string(field) + "'");
    }
    tokens.push_back(v);
    pos = end + 1;
    if (!commas) {
      while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
      if (pos >= text.size()) break;
    }
  }
  if (tokens.size() % kTokensPerStep != 0) {
    throw Error("parse_genotype: token count " + std::to_string(tokens.size()) + " is not a multiple of 5");
  }
  return decode(tokens, static_cast<int>(tokens.size() / kTokensPerStep));
}

Genotype random_genotype(int k, std::mt19937_64& rng) {
  if (k < 1) throw Error("random_genotype: K must be >= 1");
  Genotype g;
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pool(0, kNumInputSlots + i - 1), op(0, kNumOps - 1), agg(0, kNumAggs - 1);
    Step s;
    s.in1 = pool(rng);
    s.in2 = pool(rng);
    s.op1 = static_cast<OpId>(op(rng));
    s.op2 = static_cast<OpId>(op(rng));
    s.agg = static_cast<AggId>(agg(rng));
    g.steps.push_back(s);
  }
  return g;
}

CellGraph build_graph(const Genotype& g) {
  validate(g);
  CellGraph graph;
  graph.k = g.k();
  std::vector<bool> consumed(kNumInputSlots + g.k(), false);
  for (int i = 0; i < g.k(); ++i) {
    const Step& s = g.steps[i];
    const int node = kNumInputSlots + i;
    graph.edges.push_back({s.in1, node, s.op1, 0});
    graph.edges.push_back({s.in2, node, s.op2, 1});
    consumed[s.in1] = true;
    consumed[s.in2] = true;
  }
  for (int i = 0; i < g.k(); ++i) {
    if (!consumed[kNumInputSlots + i]) graph.output_set.push_back(kNumInputSlots + i);
  }
  return graph;
}

BigUint space_size(int k) {
  if (k < 1) throw Error("space_size: K must be >= 1, got " + std::to_string(k));
  BigUint n = 1;
  for (int i = 0; i < k; ++i) n *= (kNumInputSlots + i) * (kNumInputSlots + i) * kNumOps * kNumOps * kNumAggs;
  return n;
}

std::int64_t cell_param_count(const Genotype& g, const CellConfig& cfg) {
  const CellGraph graph = build_graph(g);
  const int cw = cfg.cell_width;
  std::int64_t total = 0;
  for (int c : cfg.slot_channels) total += op_param_count(BlockKind::Projection, 0, c, cw);
  for (const Step& s : g.steps) {
    total += op_param_count(BlockKind::Op, static_cast<int>(s.op1), cw, cw);
    total += op_param_count(BlockKind::Op, static_cast<int>(s.op2), cw, cw);
    total += op_param_count(BlockKind::Agg, static_cast<int>(s.agg), cw, cw);
  }
  total += op_param_count(BlockKind::Projection, 0, static_cast<int>(graph.output_set.size()) * cw, cfg.dec_width);
  return total;
}

std::string emit_dot(const Genotype& g) {
  const CellGraph graph = build_graph(g);
  std::ostringstream os;
  os << "digraph cell {\n";
  os << "  rankdir=LR;\n";
  os << "  node [shape=box, style=filled, fontname=\"Helvetica\"];\n";
  for (const auto& slot : kSlots) {
    os << "  n" << slot.id << " [label=\"" << slot.id << ": " << slot.name << "\", fillcolor=\"lightgray\"];\n";
  }
  for (int i = 0; i < g.k(); ++i) {
    const Step& s = g.steps[i];
    const int node = kNumInputSlots + i;
    const OpId ops[2] = {s.op1, s.op2};
    for (int b = 0; b < 2; ++b) {
      os << "  s" << i << "_op" << (b + 1) << " [label=\"op " << static_cast<int>(ops[b]) << "\\n" << op_name(ops[b])
         << "\", fillcolor=\"orange\"];\n";
    }
    os << "  n" << node << " [label=\"agg " << static_cast<int>(s.agg) << "\\n" << agg_name(s.agg)
       << "\", fillcolor=\"palegreen\"];\n";
  }
  os << "  out [label=\"concat\", shape=ellipse, fillcolor=\"white\"];\n";
  for (int i = 0; i < g.k(); ++i) {
    const Step& s = g.steps[i];
    const int node = kNumInputSlots + i;
    os << "  n" << s.in1 << " -> s" << i << "_op1;\n";
    os << "  n" << s.in2 << " -> s" << i << "_op2;\n";
    os << "  s" << i << "_op1 -> n" << node << ";\n";
    os << "  s" << i << "_op2 -> n" << node << ";\n";
  }
  for (int node : graph.output_set) os << "  n" << node << " -> out;\n";
  os << "}\n";
  return os.str();
}

Cell::Cell(Genotype g, const CellConfig& cfg, std::mt19937_64& rng)
    : genotype_(std::move(g)), cfg_(cfg), graph_(build_graph(genotype_)) {
  const int cw = cfg_.cell_width;
  for (int c : cfg_.slot_channels) harmonizers_.push_back(OpInstance::projection(c, cw, rng));
  for (const Step& s : genotype_.steps) {
    ops_.push_back(OpInstance::op(s.op1, cw, cw, rng));
    ops_.push_back(OpInstance::op(s.op2, cw, cw, rng));
    aggs_.push_back(OpInstance::agg(s.agg, cw, rng));
  }
  out_proj_ = OpInstance::projection(static_cast<int>(graph_.output_set.size()) * cw, cfg_.dec_width, rng);
}

Var Cell::forward(const std::array<Var, kNumInputSlots>& slots, int out_h, int out_w) {
  for (int i = 0; i < kNumInputSlots; ++i) {
    if (slots[i].shape()[1] != cfg_.slot_channels[i]) {
      throw ShapeError("cell input " + std::string(kSlots[i].name) + ": channels (dim 1) = " +
                       std::to_string(slots[i].shape()[1]) + ", expected " + std::to_string(cfg_.slot_channels[i]));
    }
  }
  // Slots no step consumes cannot reach the output, so they are not evaluated.
  std::vector<std::optional<Var>> pool(kNumInputSlots + genotype_.k());
  auto fetch = [&](int node) -> Var {
    if (!pool[node]) pool[node] = harmonize(slots[node], cfg_.cell_width, out_h, out_w, harmonizers_[node]);
    return *pool[node];
  };
  for (int i = 0; i < genotype_.k(); ++i) {
    const Step& s = genotype_.steps[i];
    Var a = apply_op(ops_[2 * i], fetch(s.in1));
    Var b = apply_op(ops_[2 * i + 1], fetch(s.in2));
    pool[kNumInputSlots + i] = apply_agg(aggs_[i], a, b);
  }
  std::vector<Var> outs;
  for (int node : graph_.output_set) outs.push_back(*pool[node]);
  Var cat = outs.size() == 1 ? outs[0] : concat_channels(outs);
  Tape& t = *cat.tape;
  return conv2d(cat, t.parameter(out_proj_.params[0]), t.parameter(out_proj_.params[1]), {});
}

std::vector<std::pair<std::string, Parameter*>> Cell::named_parameters() {
  std::vector<std::pair<std::string, Parameter*>> out;
  auto add = [&](const std::string& prefix, OpInstance& inst) {
    for (std::size_t j = 0; j < inst.params.size(); ++j) out.emplace_back(prefix + "." + inst.names[j], &inst.params[j]);
  };
  for (int i = 0; i < kNumInputSlots; ++i) add("harmonize." + std::string(kSlots[i].name), harmonizers_[i]);
  for (int i = 0; i < genotype_.k(); ++i) {
    add("step" + std::to_string(i) + ".op1", ops_[2 * i]);
    add("step" + std::to_string(i) + ".op2", ops_[2 * i + 1]);
    add("step" + std::to_string(i) + ".agg", aggs_[i]);
  }
  add("output", out_proj_);
  return out;
}

std::vector<Parameter*> Cell::parameters() {
  std::vector<Parameter*> out;
  for (auto& [name, p] : named_parameters()) out.push_back(p);
  return out;
}

std::int64_t Cell::param_count() const {
  std::int64_t n = 0;
  for (const auto& h : harmonizers_) n += op_param_count(h);
  for (const auto& o : ops_) n += op_param_count(o);
  for (const auto& a : aggs_) n += op_param_count(a);
  return n + op_param_count(out_proj_);
}

}  // namespace dcnas
