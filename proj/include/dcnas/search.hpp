#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcnas/controller.hpp"
#include "dcnas/genotype.hpp"
#include "dcnas/training.hpp"

namespace dcnas {

struct SearchConfig {
  int n_candidates = 60;
  int k = 2;
  int cell_width = 16;
  CellTrainConfig train;
  double early_stop_fraction = 0.5;
  /// Fixed early-stop threshold; unset means the running mean of earlier
  /// halfway rewards.
  std::optional<double> early_stop_threshold;
  ControllerConfig controller;
  PpoConfig ppo{.clip_eps = 0.2, .lr = 1.5e-3, .epochs_per_batch = 3, .entropy_coef = 1e-3, .baseline_decay = 0.9};
  int update_every = 8;
  /// After the loop, sample this many cells from the trained controller and
  /// train them fully. They are kept apart from the search records.
  int posthoc_samples = 0;
  std::uint64_t seed = 1;
};

void validate(const SearchConfig& cfg);

/// Streaming mean of halfway rewards.
class RunningMean {
 public:
  void add(double x);
  double mean() const { return mean_; }
  long count() const { return n_; }

 private:
  double mean_ = 0.0;
  long n_ = 0;
};

/// Stop iff history is non-empty and halfway < mean(history).
bool early_stop_decision(double halfway_reward, std::span<const double> history);
bool early_stop_decision(double halfway_reward, const RunningMean& history);

enum class CandidateStatus { Completed, EarlyStopped };

struct SearchRecord {
  int index = 0;
  std::vector<int> tokens;
  CandidateStatus status = CandidateStatus::Completed;
  double halfway_reward = 0.0;
  std::optional<double> final_reward;
  /// Reward passed to the controller: final, or halfway when stopped.
  double reward = 0.0;
  int epochs_run = 0;
  double wall_time = 0.0;
  std::uint64_t seed = 0;

  nlohmann::json to_json(bool with_wall_time = true) const;
  static SearchRecord from_json(const nlohmann::json& j);
};

struct ControllerUpdate {
  int after_candidate = 0;  // index of the last candidate in the batch
  int batch = 0;
  PpoTrainer::Stats stats;
  std::string checkpoint;  // empty when no output directory was given
};

struct RunLog {
  nlohmann::json config;
  std::vector<SearchRecord> records;
  std::vector<ControllerUpdate> updates;
  std::vector<SearchRecord> posthoc;

  /// FNV-1a over the records' canonical JSON without wall_time, hex.
  std::string digest() const;
  void append_record(const SearchRecord& r, const std::filesystem::path& file) const;
};

/// Reads a JSON-lines run log written by run_search.
RunLog load_run_log(const std::filesystem::path& path);

nlohmann::json to_json(const SearchConfig& cfg);
SearchConfig search_config_from_json(const nlohmann::json& j);

/// Per-candidate hook (progress printing).
using RecordCallback = std::function<void(const SearchRecord&)>;

/// Sample, train to the early-stop probe, stop or finish, feed the reward to
/// PPO every `update_every` candidates (and once more for a trailing partial
/// batch). With `out_dir`, the log is appended to out_dir/runlog.jsonl and a
/// controller checkpoint is written after every update.
RunLog run_search(const SearchConfig& cfg, StaticNet& net, const BundleCache& meta_train,
                  const BundleCache& meta_val, const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                  const RecordCallback& on_record = {});

/// Fully trains each genotype the way search candidates are trained and
/// returns meta-val rewards. Candidate i uses the seed of search index i.
std::vector<double> train_genotypes(const std::vector<Genotype>& genotypes, const SearchConfig& cfg, StaticNet& net,
                                    const BundleCache& meta_train, const BundleCache& meta_val);

/// Seed of candidate `index` under a search seed.
std::uint64_t candidate_seed(std::uint64_t search_seed, int index);

/// Indices of the k completed records with the highest final reward; ties
/// go to the earlier index.
std::vector<int> select_top_k(std::span<const SearchRecord> records, int k);

// ---- reporting --------------------------------------------------------------

struct ProportionTable {
  std::string category;  // "ops", "aggregations", "inputs"
  std::vector<std::string> columns;
  std::vector<std::string> row_labels;
  std::vector<std::vector<double>> rows;
};

struct SearchReport {
  std::vector<double> rewards;
  std::vector<double> moving_average;  // trailing window
  ProportionTable ops, aggregations, inputs;
};

/// Proportion rows cover consecutive windows of `segment` candidates, then
/// one row over the whole log.
SearchReport make_report(const RunLog& log, int moving_window = 10, int segment = 10);
/// rewards.csv, proportions_{ops,aggregations,inputs}.csv, summary.json.
void write_report(const SearchReport& report, const RunLog& log, const std::filesystem::path& dir);

}  // namespace dcnas
