#include "dcnas/segnet.hpp"

#include <cmath>
#include <cstring>

#include "dcnas/checkpoint.hpp"

namespace dcnas {

namespace {

Tensor he_normal(Shape shape, int fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / fan_in));
  for (auto& v : t.values()) v = nd(rng);
  return t;
}

void fnv_bytes(std::uint64_t& h, const void* p, std::size_t n) {
  const auto* b = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 0x100000001b3ULL;
  }
}

void add_block(std::vector<std::pair<std::string, Parameter*>>& out, const std::string& prefix, OpInstance& inst) {
  for (std::size_t i = 0; i < inst.params.size(); ++i) out.emplace_back(prefix + "." + inst.names[i], &inst.params[i]);
}

}  // namespace

FrameBundle FrameBundle::detach(const FrameVars& v) {
  return {v.layer2.value(), v.layer3.value(), v.layer4.value(), v.dec.value(), v.pred.value()};
}

ConvLayer::ConvLayer(int in, int out, int k, int stride_, std::mt19937_64& rng)
    : w(he_normal(Shape{out, in, k, k}, in * k * k, rng)),
      b(Tensor(Shape{1, out, 1, 1})),
      stride(stride_),
      pad(k / 2) {}

Var ConvLayer::operator()(Var x) {
  Tape& t = *x.tape;
  return conv2d(x, t.parameter(w), t.parameter(b), {.stride = stride, .pad = pad});
}

StaticNet::StaticNet(StaticNetConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.num_classes < 2 || cfg_.dec_width < 1) throw Error("StaticNet: need num_classes >= 2 and dec_width >= 1");
  for (int w : cfg_.widths)
    if (w < 1) throw Error("StaticNet: encoder widths must be positive");
  std::mt19937_64 rng(seed);
  const int w2 = cfg_.widths[0], w3 = cfg_.widths[1], w4 = cfg_.widths[2];
  stage1_.emplace_back(3, w2, 3, 2, rng);
  stage1_.emplace_back(w2, w2, 3, 2, rng);
  stage1_.emplace_back(w2, w2, 3, 2, rng);
  stage2_ = ConvLayer(w2, w3, 3, 2, rng);
  stage3_ = ConvLayer(w3, w4, 3, 2, rng);
  for (int w : cfg_.widths) dec_proj_.push_back(OpInstance::projection(w, cfg_.dec_width, rng));
  dec_conv1_ = ConvLayer(3 * cfg_.dec_width, cfg_.dec_width, 3, 1, rng);
  dec_conv2_ = ConvLayer(cfg_.dec_width, cfg_.dec_width, 3, 1, rng);
  classifier_ = OpInstance::projection(cfg_.dec_width, cfg_.num_classes, rng);
  aux_ = OpInstance::projection(w3, cfg_.num_classes, rng);
}

StaticNet::Features StaticNet::encode(Var frame) {
  const Shape& s = frame.shape();
  if (s.rank() != 4 || s[1] != 3) throw ShapeError("StaticNet: frame must be (N,3,H,W), got " + s.str());
  if (s[2] % 32 != 0 || s[3] % 32 != 0) {
    throw Error("StaticNet: H and W must be multiples of 32, got " + s.str());
  }
  Var x = frame;
  for (auto& c : stage1_) x = relu(c(x));
  Features f;
  f.layer2 = x;
  f.layer3 = relu(stage2_(f.layer2));
  f.layer4 = relu(stage3_(f.layer3));
  return f;
}

Var StaticNet::decode(const Features& f) {
  ++decoder_calls_;
  const int h = f.layer2.shape()[2], w = f.layer2.shape()[3];
  std::vector<Var> parts{harmonize(f.layer2, cfg_.dec_width, h, w, dec_proj_[0]),
                         harmonize(f.layer3, cfg_.dec_width, h, w, dec_proj_[1]),
                         harmonize(f.layer4, cfg_.dec_width, h, w, dec_proj_[2])};
  return dec_conv2_(relu(dec_conv1_(concat_channels(parts))));
}

Var StaticNet::classify(Var dec) {
  Tape& t = *dec.tape;
  return conv2d(dec, t.parameter(classifier_.params[0]), t.parameter(classifier_.params[1]), {});
}

Var StaticNet::aux_logits(Var layer3) {
  Tape& t = *layer3.tape;
  return conv2d(layer3, t.parameter(aux_.params[0]), t.parameter(aux_.params[1]), {});
}

FrameVars StaticNet::forward(Var frame) {
  Features f = encode(frame);
  Var dec = decode(f);
  return {f.layer2, f.layer3, f.layer4, dec, classify(dec)};
}

std::array<int, kNumInputSlots> StaticNet::slot_channels() const {
  return {cfg_.dec_width, cfg_.widths[2], cfg_.widths[0], cfg_.widths[1], cfg_.widths[2]};
}

std::vector<std::pair<std::string, Parameter*>> StaticNet::named_parameters() {
  std::vector<std::pair<std::string, Parameter*>> out;
  auto conv = [&](const std::string& name, ConvLayer& c) {
    out.emplace_back(name + ".w", &c.w);
    out.emplace_back(name + ".b", &c.b);
  };
  for (std::size_t i = 0; i < stage1_.size(); ++i) conv("enc.stage1." + std::to_string(i), stage1_[i]);
  conv("enc.stage2", stage2_);
  conv("enc.stage3", stage3_);
  for (std::size_t i = 0; i < dec_proj_.size(); ++i) add_block(out, "dec.proj" + std::to_string(i + 2), dec_proj_[i]);
  conv("dec.conv1", dec_conv1_);
  conv("dec.conv2", dec_conv2_);
  add_block(out, "classifier", classifier_);
  add_block(out, "aux", aux_);
  return out;
}

std::vector<Parameter*> StaticNet::encoder_parameters() {
  std::vector<Parameter*> out;
  for (auto& [name, p] : named_parameters())
    if (name.rfind("enc.", 0) == 0) out.push_back(p);
  return out;
}

std::vector<Parameter*> StaticNet::decoder_parameters() {
  std::vector<Parameter*> out;
  for (auto& [name, p] : named_parameters())
    if (name.rfind("enc.", 0) != 0) out.push_back(p);
  return out;
}

std::vector<Parameter*> StaticNet::parameters() {
  std::vector<Parameter*> out;
  for (auto& [name, p] : named_parameters()) out.push_back(p);
  return out;
}

std::uint64_t StaticNet::checksum() {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto& [name, p] : named_parameters()) {
    fnv_bytes(h, name.data(), name.size());
    fnv_bytes(h, p->value.data(), p->value.numel() * sizeof(double));
  }
  return h;
}

void StaticNet::save(const std::filesystem::path& path) {
  Checkpoint ck;
  ck.strings["kind"] = "static";
  ck.scalars["num_classes"] = cfg_.num_classes;
  ck.scalars["dec_width"] = cfg_.dec_width;
  for (int i = 0; i < 3; ++i) ck.scalars["width" + std::to_string(i + 2)] = cfg_.widths[i];
  for (auto& [name, p] : named_parameters()) ck.tensors[name] = p->value;
  ck.save(path);
}

void StaticNet::load(const std::filesystem::path& path) {
  Checkpoint ck = Checkpoint::load(path);
  if (ck.strings.count("kind") == 0 || ck.string("kind") != "static") {
    throw Error("not a static-net checkpoint: " + path.string());
  }
  if (ck.scalar("num_classes") != cfg_.num_classes || ck.scalar("dec_width") != cfg_.dec_width) {
    throw Error("static-net checkpoint widths differ from the configured net: " + path.string());
  }
  for (auto& [name, p] : named_parameters()) restore_into(ck, name, p->value);
}

DynamicNet::DynamicNet(StaticNet& net, Cell& cell) : net_(net), cell_(cell), classifier_(net.classifier()) {
  if (cell.config().dec_width != net.config().dec_width || cell.config().slot_channels != net.slot_channels()) {
    throw ShapeError("DynamicNet: cell slot widths do not match the static net (dim 1)");
  }
  for (auto& p : classifier_.params) p.set_trainable(true);
}

FrameVars DynamicNet::first(Var frame) { return net_.forward(frame); }

FrameVars DynamicNet::next(const FrameVars& prev, Var frame) {
  if (prev.dec.tape == nullptr || prev.layer4.tape == nullptr) {
    throw Error("dynamic step needs dec and layer4 of the previous frame");
  }
  StaticNet::Features cur = net_.encode(frame);
  return next_from_features(prev.dec, prev.layer4, cur, cur.layer2.shape()[2], cur.layer2.shape()[3]);
}

FrameVars DynamicNet::next_from_features(Var dec_prev, Var layer4_prev, const StaticNet::Features& cur, int out_h,
                                         int out_w) {
  if (dec_prev.tape == nullptr || layer4_prev.tape == nullptr) {
    throw Error("dynamic step needs dec and layer4 of the previous frame");
  }
  Var dec = cell_.forward({dec_prev, layer4_prev, cur.layer2, cur.layer3, cur.layer4}, out_h, out_w);
  Tape& t = *dec.tape;
  Var pred = conv2d(dec, t.parameter(classifier_.params[0]), t.parameter(classifier_.params[1]), {});
  return {cur.layer2, cur.layer3, cur.layer4, dec, pred};
}

std::vector<Parameter*> DynamicNet::cell_parameters() {
  std::vector<Parameter*> out = cell_.parameters();
  for (auto& p : classifier_.params) out.push_back(&p);
  return out;
}

CellConfig cell_config_for(const StaticNet& net, int cell_width) {
  CellConfig c;
  c.cell_width = cell_width;
  c.dec_width = net.config().dec_width;
  c.slot_channels = net.slot_channels();
  return c;
}

Var upsample_logits(Var pred, int h, int w) {
  if (pred.shape()[2] == h && pred.shape()[3] == w) return pred;
  return bilinear_resize(pred, h, w);
}

Var sequence_loss(DynamicNet& net, const std::vector<Var>& frames,
                  const std::vector<std::vector<std::uint8_t>>& labels) {
  if (frames.size() < 2) throw Error("sequence_loss: need at least two frames");
  if (labels.size() != frames.size()) throw Error("sequence_loss: one label map per frame expected");
  const int h = frames[0].shape()[2], w = frames[0].shape()[3];
  for (std::size_t t = 1; t < labels.size(); ++t) {
    if (labels[t].empty()) throw Error("sequence_loss: frame " + std::to_string(t) + " is unlabeled");
  }
  FrameVars state = net.first(frames[0]);
  std::optional<Var> total;
  for (std::size_t t = 1; t < frames.size(); ++t) {
    state = net.next(state, frames[t]);
    Var l = softmax_cross_entropy(upsample_logits(state.pred, h, w), labels[t]);
    total = total ? add(*total, l) : l;
  }
  return *total;
}

void save_cell(DynamicNet& net, const std::filesystem::path& path) {
  Checkpoint ck;
  const CellConfig& cfg = net.cell().config();
  ck.strings["kind"] = "cell";
  ck.strings["genotype"] = to_text(net.cell().genotype());
  ck.scalars["cell_width"] = cfg.cell_width;
  ck.scalars["dec_width"] = cfg.dec_width;
  for (int i = 0; i < kNumInputSlots; ++i) ck.scalars["slot" + std::to_string(i)] = cfg.slot_channels[i];
  for (auto& [name, p] : net.cell().named_parameters()) ck.tensors["cell." + name] = p->value;
  auto& cls = net.classifier();
  for (std::size_t i = 0; i < cls.params.size(); ++i) ck.tensors["classifier." + cls.names[i]] = cls.params[i].value;
  ck.save(path);
}

CellHeader read_cell_header(const std::filesystem::path& path) {
  Checkpoint ck = Checkpoint::load(path);
  if (ck.strings.count("kind") == 0 || ck.string("kind") != "cell") {
    throw Error("not a cell checkpoint: " + path.string());
  }
  CellHeader h;
  h.genotype = parse_genotype(ck.string("genotype"));
  h.config.cell_width = static_cast<int>(ck.scalar("cell_width"));
  h.config.dec_width = static_cast<int>(ck.scalar("dec_width"));
  for (int i = 0; i < kNumInputSlots; ++i) h.config.slot_channels[i] = static_cast<int>(ck.scalar("slot" + std::to_string(i)));
  return h;
}

void load_cell(DynamicNet& net, const std::filesystem::path& path) {
  CellHeader h = read_cell_header(path);
  const CellConfig& cfg = net.cell().config();
  if (!(h.genotype == net.cell().genotype()) || h.config.cell_width != cfg.cell_width ||
      h.config.dec_width != cfg.dec_width || h.config.slot_channels != cfg.slot_channels) {
    throw Error("cell checkpoint does not match the instantiated cell: " + path.string());
  }
  Checkpoint ck = Checkpoint::load(path);
  for (auto& [name, p] : net.cell().named_parameters()) restore_into(ck, "cell." + name, p->value);
  auto& cls = net.classifier();
  for (std::size_t i = 0; i < cls.params.size(); ++i) restore_into(ck, "classifier." + cls.names[i], cls.params[i].value);
}

}  // namespace dcnas
