#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dcnas/optim.hpp"
#include "dcnas/tape.hpp"

namespace dcnas {

struct ControllerConfig {
  int k = 2;  // cell steps
  int hidden = 100;
  int embed = 32;
  double init_range = 0.1;
};

struct PpoConfig {
  double clip_eps = 0.2;
  double lr = 1e-4;
  int epochs_per_batch = 3;
  double entropy_coef = 1e-3;
  double baseline_decay = 0.9;
};

struct SampleTrace {
  std::vector<int> tokens;
  std::vector<double> logprobs;
  std::vector<double> entropies;
  std::optional<double> reward;

  double total_logprob() const;
};

enum class TokenKind { Index, Op, Agg };

/// Kind of token t (0-based) in the per-step order (in1, in2, op1, op2, agg).
TokenKind token_kind(int t);
/// Number of admissible values for token t.
int token_choices(int t);

/// Two-layer LSTM policy over genotype token strings.
class Controller {
 public:
  explicit Controller(ControllerConfig cfg, std::uint64_t seed = 0);

  const ControllerConfig& config() const { return cfg_; }
  int num_tokens() const { return 5 * cfg_.k; }

  SampleTrace sample(std::mt19937_64& rng);

  /// Teacher-forced per-token log-probabilities of `tokens`.
  std::vector<double> log_prob(std::span<const int> tokens);

  /// Full-width head probabilities at every position of `tokens`; entries
  /// outside the admissible range are exactly zero.
  std::vector<std::vector<double>> distributions(std::span<const int> tokens);

  /// Records a batched teacher-forced pass. Returns per-trace summed
  /// log-probabilities (B,1,1,1) and summed entropies (B,1,1,1).
  struct BatchOutput {
    Var logp;
    Var entropy;
  };
  BatchOutput forward_batch(Tape& tape, const std::vector<std::vector<int>>& token_batch);

  std::vector<std::pair<std::string, Parameter*>> named_parameters();
  std::vector<Parameter*> parameters();
  void zero_weights();

 private:
  struct Step {
    Var logits;  // (B, head width, 1, 1)
    int valid;
  };
  // Runs the LSTM over `token_batch`, invoking `choose(t, step)` for each
  // position; it returns the token per batch row to feed back.
  template <typename Choose>
  void unroll(Tape& tape, int batch, int length, Choose&& choose);

  ControllerConfig cfg_;
  std::vector<std::string> names_;
  std::vector<Parameter> params_;
  // Indices into params_.
  int start_, emb_index_, emb_op_, emb_agg_;
  int wx_[2], wh_[2], b_[2];
  int head_w_[3], head_b_[3];
};

/// PPO over trace-level likelihood ratios with an EMA reward baseline.
class PpoTrainer {
 public:
  PpoTrainer(Controller& ctrl, PpoConfig cfg);

  struct Stats {
    double mean_advantage = 0.0;
    double surrogate_first = 0.0;  // objective before the first step
    double surrogate_last = 0.0;
    double baseline_before = 0.0;
    double baseline_after = 0.0;
  };

  /// One update from traces that all carry rewards. Advantages use the
  /// incoming baseline (batch mean when there is none yet); the baseline is
  /// then folded forward trace by trace.
  Stats update(std::span<const SampleTrace> batch);

  /// Clipped surrogate plus entropy bonus for the current parameters.
  double objective(std::span<const SampleTrace> batch, std::span<const double> advantages);

  std::optional<double> baseline() const { return baseline_; }
  void set_baseline(std::optional<double> b) { baseline_ = b; }
  const PpoConfig& config() const { return cfg_; }
  Adam& optimizer() { return adam_; }

  void save(const std::filesystem::path& path);
  void load(const std::filesystem::path& path);

 private:
  Var build_objective(Tape& tape, std::span<const SampleTrace> batch, std::span<const double> advantages);

  Controller& ctrl_;
  PpoConfig cfg_;
  Adam adam_;
  std::optional<double> baseline_;
};

}  // namespace dcnas
