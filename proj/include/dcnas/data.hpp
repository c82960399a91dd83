#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dcnas/tensor.hpp"

namespace dcnas {

struct DatasetConfig {
  int n_sequences = 200;
  int seq_len = 3;
  int height = 64;
  int width = 64;
  int num_classes = 5;  // background + shape classes
  int max_velocity = 4;  // pixels per frame, per axis
  double occlusion_prob = 0.3;
  double noise_std = 0.03;
  std::uint64_t seed = 1;
  /// When set, every object moves with this (vx, vy).
  std::optional<std::array<int, 2>> fixed_velocity;
  int max_objects = 4;
};

void validate(const DatasetConfig& cfg);

enum class ShapeKind : int { Rectangle = 0, Disk = 1, Bar = 2 };

struct ObjectTrack {
  int cls = 1;
  ShapeKind kind = ShapeKind::Rectangle;
  double cy = 0.0, cx = 0.0;  // center at frame 0
  double hy = 0.0, hx = 0.0;  // half extents (radius for disks)
  int vx = 0, vy = 0;
  std::array<std::uint8_t, 3> color{};
};

/// Images are planar RGB bytes (3*H*W); labels are H*W class ids.
struct Sequence {
  std::vector<std::vector<std::uint8_t>> frames;
  std::vector<std::vector<std::uint8_t>> labels;
  std::vector<ObjectTrack> objects;  // in drawing order (later on top)
  std::uint64_t seed = 0;
};

struct Dataset {
  DatasetConfig config;
  std::vector<Sequence> sequences;

  /// Per-channel mean image value in [0,1].
  std::array<double, 3> channel_mean() const;
};

Dataset generate(const DatasetConfig& cfg);

/// Sequence indices per partition. The meta partitions split `train`.
struct Split {
  std::vector<int> train, val, meta_train, meta_val;
};

/// Sequence-level partition; every shape class appears in `train` (the
/// assignment is redrawn a bounded number of times otherwise).
Split split(const Dataset& ds, double train_frac, double meta_val_frac, std::uint64_t seed);

struct Batch {
  std::vector<int> sequence_ids;
  std::vector<Tensor> frames;                       // per time step, (B,3,crop,crop)
  std::vector<std::vector<std::uint8_t>> labels;    // per time step, B*crop*crop
};

struct AugmentConfig {
  int crop = 64;
  double scale_min = 1.0;
  double scale_max = 1.0;
  bool shuffle = true;
};

/// Batches over `indices`. One scale and crop offset is drawn per sequence
/// and applied to all its frames; images resize bilinearly, labels by nearest
/// neighbour; padding uses the dataset mean and label 255.
std::vector<Batch> batches(const Dataset& ds, std::span<const int> indices, int batch_size, const AugmentConfig& aug,
                           std::uint64_t seed);

/// One directory per sequence with PPM frames and PGM labels, plus manifest.json.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace dcnas
