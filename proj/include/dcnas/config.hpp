#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "dcnas/data.hpp"
#include "dcnas/search.hpp"
#include "dcnas/segnet.hpp"
#include "dcnas/training.hpp"

namespace dcnas {

/// Invalid or unreadable configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A required input file or directory does not exist (CLI exit code 3).
class MissingArtifact : public Error {
 public:
  using Error::Error;
};

/// Every knob of a full run, from data generation to fine-tuning.
struct RunConfig {
  DatasetConfig data;
  double train_frac = 0.8;
  double meta_val_frac = 0.1;
  std::uint64_t split_seed = 1;

  StaticNetConfig static_net;
  std::uint64_t static_seed = 1;
  PretrainConfig pretrain;

  SearchConfig search;
  int top_k = 2;
  int random_baselines = 15;

  /// Cell training on the full train split before fine-tuning.
  CellTrainConfig cell_train;
  FinetuneConfig finetune;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Missing keys keep their defaults; unknown keys and bad values throw ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Reseeds every stage from one seed.
void apply_seed(RunConfig& cfg, std::uint64_t seed);

/// Sequences in which at least one object moves.
std::vector<int> moving_sequences(const Dataset& ds, std::span<const int> ids);

}  // namespace dcnas
