#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dcnas/data.hpp"
#include "dcnas/metrics.hpp"
#include "dcnas/optim.hpp"
#include "dcnas/segnet.hpp"

namespace dcnas {

// ---- evaluation -------------------------------------------------------------

/// Static per-frame predictions over every frame of the given sequences.
MetricsReport evaluate_static(StaticNet& net, const Dataset& ds, std::span<const int> ids);
/// Predicts the most frequent training class everywhere, scored on frames t >= first_frame.
MetricsReport evaluate_majority(const Dataset& ds, std::span<const int> train_ids, std::span<const int> eval_ids,
                                int first_frame = 0);
/// Frame-0 dec reused for every later frame through the static classifier; frames t >= 1.
MetricsReport evaluate_copy_forward(StaticNet& net, const Dataset& ds, std::span<const int> ids);
/// Static frame 0 followed by cell steps; frames t >= 1.
MetricsReport evaluate_dynamic(DynamicNet& net, const Dataset& ds, std::span<const int> ids);

// ---- static pretraining -----------------------------------------------------

struct PretrainConfig {
  int epochs = 60;
  int batch_size = 16;  // sequences; every frame of a sequence is a training image
  double encoder_lr = 5e-2;
  double decoder_lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double aux_weight = 0.3;
  double poly_power = 0.9;
  AugmentConfig augment{.crop = 64, .scale_min = 0.5, .scale_max = 2.0, .shuffle = true};
  std::uint64_t seed = 1;
};

struct PretrainResult {
  std::vector<double> step_losses;
  long steps = 0;
};

/// Poly-scheduled SGD with momentum, separate encoder/decoder base rates,
/// loss = main CE + aux_weight * aux CE (both upsampled to the crop).
PretrainResult pretrain_static(StaticNet& net, const Dataset& ds, std::span<const int> train_ids,
                               const PretrainConfig& cfg);

// ---- precomputed static outputs ---------------------------------------------

/// Static encoder outputs for every frame and the frame-0 decoder output of a
/// list of sequences, stacked along N in `ids` order.
struct BundleCache {
  std::string split;
  std::uint64_t static_checksum = 0;
  std::vector<int> ids;
  int seq_len = 0, height = 0, width = 0;
  std::vector<Tensor> layer2, layer3, layer4;   // per frame
  Tensor dec0;
  std::vector<std::vector<std::uint8_t>> labels;  // per frame, N*H*W
};

BundleCache build_bundle_cache(StaticNet& net, const Dataset& ds, std::span<const int> ids, std::string split);

/// Caches keyed by (split name, static checksum). A lookup with a changed
/// static net builds a fresh entry.
class BundleStore {
 public:
  const BundleCache& get(StaticNet& net, const Dataset& ds, std::span<const int> ids, const std::string& split);
  std::size_t size() const { return caches_.size(); }
  long builds() const { return builds_; }

 private:
  std::map<std::pair<std::string, std::uint64_t>, std::unique_ptr<BundleCache>> caches_;
  long builds_ = 0;
};

// ---- cell training ----------------------------------------------------------

struct CellTrainConfig {
  int epochs = 8;
  int batch_size = 8;
  double lr = 8e-3;
  std::uint64_t seed = 1;
};

/// Trains a cell and its classifier copy with Adam on cached static outputs.
/// The static net is only read.
class CellTrainer {
 public:
  CellTrainer(DynamicNet& net, const BundleCache& train, CellTrainConfig cfg);

  /// Runs up to n more epochs (capped at cfg.epochs); returns the mean loss of the last one.
  double train_epochs(int n);
  int epochs_done() const { return epochs_done_; }
  MetricsReport evaluate(const BundleCache& eval);

 private:
  DynamicNet& net_;
  const BundleCache& train_;
  CellTrainConfig cfg_;
  Adam adam_;
  std::mt19937_64 rng_;
  int epochs_done_ = 0;
};

struct CellTrainResult {
  int epochs_run = 0;
  MetricsReport report;
};

/// Trains ceil(epochs * stop_at_fraction) epochs and evaluates on `eval`.
CellTrainResult train_cell(DynamicNet& net, const BundleCache& train, const BundleCache& eval,
                           const CellTrainConfig& cfg, double stop_at_fraction = 1.0);

/// Loss of a cached batch (rows of `train`), for tests.
Var cached_sequence_loss(DynamicNet& net, Tape& tape, const BundleCache& cache, const std::vector<int>& rows);

// ---- end-to-end fine-tuning -------------------------------------------------

struct FinetuneConfig {
  int epochs = 20;
  int batch_size = 8;
  double cell_lr = 4e-3;
  double static_lr = 5e-4;
  double momentum = 0.9;
  AugmentConfig augment{.crop = 64, .scale_min = 1.0, .scale_max = 1.0, .shuffle = true};
  std::uint64_t seed = 1;
};

struct FinetuneResult {
  std::vector<double> epoch_losses;
};

/// Adam on the cell and classifier copy, SGD with momentum on the static net.
FinetuneResult finetune_end_to_end(DynamicNet& net, const Dataset& ds, std::span<const int> train_ids,
                                   const FinetuneConfig& cfg);

}  // namespace dcnas
