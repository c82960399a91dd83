#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dcnas/blocks.hpp"
#include "dcnas/genotype.hpp"

namespace dcnas {

struct StaticNetConfig {
  int num_classes = 5;
  int dec_width = 16;
  /// Channels of layer2, layer3 and layer4.
  std::array<int, 3> widths{16, 24, 32};
};

/// Per-frame outputs recorded on a tape.
struct FrameVars {
  Var layer2, layer3, layer4, dec, pred;
};

/// Detached copies of the same outputs.
struct FrameBundle {
  Tensor layer2, layer3, layer4, dec, pred;

  static FrameBundle detach(const FrameVars& v);
};

/// 3x3 or 1x1 convolution with bias.
struct ConvLayer {
  Parameter w, b;
  int stride = 1;
  int pad = 0;

  ConvLayer() = default;
  ConvLayer(int in, int out, int k, int stride, std::mt19937_64& rng);
  Var operator()(Var x);
};

/// Toy per-frame segmentation network: strided conv encoder reaching 1/8,
/// 1/16 and 1/32, a decoder fusing the three at 1/8, a 1x1 classifier and an
/// auxiliary 1x1 head on layer3.
class StaticNet {
 public:
  StaticNet(StaticNetConfig cfg, std::uint64_t seed);
  StaticNet(const StaticNet&) = default;
  StaticNet& operator=(const StaticNet&) = default;

  struct Features {
    Var layer2, layer3, layer4;
  };

  /// Throws Error unless H and W are multiples of 32.
  Features encode(Var frame);
  Var decode(const Features& f);
  Var classify(Var dec);
  Var aux_logits(Var layer3);
  FrameVars forward(Var frame);

  const StaticNetConfig& config() const { return cfg_; }
  long decoder_calls() const { return decoder_calls_; }
  /// Channel widths of the five cell input slots fed by this net.
  std::array<int, kNumInputSlots> slot_channels() const;

  std::vector<std::pair<std::string, Parameter*>> named_parameters();
  std::vector<Parameter*> encoder_parameters();
  /// Decoder, classifier and auxiliary head.
  std::vector<Parameter*> decoder_parameters();
  std::vector<Parameter*> parameters();
  OpInstance& classifier() { return classifier_; }

  /// FNV-1a over parameter names and raw values.
  std::uint64_t checksum();

  void save(const std::filesystem::path& path);
  void load(const std::filesystem::path& path);

 private:
  StaticNetConfig cfg_;
  std::vector<ConvLayer> stage1_;  // to 1/8
  ConvLayer stage2_, stage3_;
  std::vector<OpInstance> dec_proj_;  // layer2..4 to dec_width
  ConvLayer dec_conv1_, dec_conv2_;
  OpInstance classifier_;
  OpInstance aux_;
  long decoder_calls_ = 0;
};

/// Static net on frame 0, then a dynamic cell on later frames. Later frames
/// run only the static encoder.
class DynamicNet {
 public:
  /// The classifier starts as a copy of the static classifier.
  DynamicNet(StaticNet& net, Cell& cell);

  FrameVars first(Var frame);
  FrameVars next(const FrameVars& prev, Var frame);
  /// Cell step from already computed current-frame features.
  FrameVars next_from_features(Var dec_prev, Var layer4_prev, const StaticNet::Features& cur, int out_h, int out_w);

  StaticNet& static_net() { return net_; }
  Cell& cell() { return cell_; }
  OpInstance& classifier() { return classifier_; }
  /// Cell parameters plus the classifier copy.
  std::vector<Parameter*> cell_parameters();

 private:
  StaticNet& net_;
  Cell& cell_;
  OpInstance classifier_;
};

/// Cell configuration matching a static net's slot widths.
CellConfig cell_config_for(const StaticNet& net, int cell_width);

/// Logits upsampled to (h, w).
Var upsample_logits(Var pred, int h, int w);

/// Sum over frames t >= 1 of the mean cross-entropy of the upsampled
/// prediction. `labels[t]` must be non-empty for every t >= 1.
Var sequence_loss(DynamicNet& net, const std::vector<Var>& frames,
                  const std::vector<std::vector<std::uint8_t>>& labels);

/// Cell weights, the classifier copy, genotype and cell config.
void save_cell(DynamicNet& net, const std::filesystem::path& path);
/// Throws Error when the stored genotype or widths differ from net.cell().
void load_cell(DynamicNet& net, const std::filesystem::path& path);

struct CellHeader {
  Genotype genotype;
  CellConfig config;
};
CellHeader read_cell_header(const std::filesystem::path& path);

}  // namespace dcnas
