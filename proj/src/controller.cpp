#include "dcnas/controller.hpp"

#include <cmath>
#include <numeric>

#include "dcnas/blocks.hpp"
#include "dcnas/checkpoint.hpp"
#include "dcnas/genotype.hpp"
#include "dcnas/ops.hpp"

namespace dcnas {

double SampleTrace::total_logprob() const { return std::accumulate(logprobs.begin(), logprobs.end(), 0.0); }

TokenKind token_kind(int t) {
  const int f = t % kTokensPerStep;
  if (f < 2) return TokenKind::Index;
  if (f < 4) return TokenKind::Op;
  return TokenKind::Agg;
}

int token_choices(int t) {
  switch (token_kind(t)) {
    case TokenKind::Index: return kNumInputSlots + t / kTokensPerStep;
    case TokenKind::Op: return kNumOps;
    case TokenKind::Agg: return kNumAggs;
  }
  return 0;
}

Controller::Controller(ControllerConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.k < 1 || cfg_.hidden < 1 || cfg_.embed < 1) throw Error("controller: K, hidden and embed must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-cfg_.init_range, cfg_.init_range);
  const int h = cfg_.hidden, e = cfg_.embed, pool = kNumInputSlots + cfg_.k - 1;
  auto add = [&](std::string name, Shape s) {
    Tensor t(std::move(s));
    for (double& v : t.values()) v = dist(rng);
    names_.push_back(std::move(name));
    params_.emplace_back(std::move(t));
    return static_cast<int>(params_.size()) - 1;
  };
  start_ = add("start", Shape{1, e, 1, 1});
  emb_index_ = add("embed.index", Shape{pool, e, 1, 1});
  emb_op_ = add("embed.op", Shape{kNumOps, e, 1, 1});
  emb_agg_ = add("embed.agg", Shape{kNumAggs, e, 1, 1});
  for (int l = 0; l < 2; ++l) {
    const std::string p = "lstm" + std::to_string(l);
    wx_[l] = add(p + ".wx", Shape{4 * h, l == 0 ? e : h, 1, 1});
    wh_[l] = add(p + ".wh", Shape{4 * h, h, 1, 1});
    b_[l] = add(p + ".b", Shape{1, 4 * h, 1, 1});
  }
  const int widths[3] = {pool, kNumOps, kNumAggs};
  const char* head_names[3] = {"head.index", "head.op", "head.agg"};
  for (int k = 0; k < 3; ++k) {
    head_w_[k] = add(std::string(head_names[k]) + ".w", Shape{widths[k], h, 1, 1});
    head_b_[k] = add(std::string(head_names[k]) + ".b", Shape{1, widths[k], 1, 1});
  }
}

template <typename Choose>
void Controller::unroll(Tape& tape, int batch, int length, Choose&& choose) {
  const int h = cfg_.hidden;
  auto p = [&](int i) { return tape.parameter(params_[i]); };
  Var hs[2], cs[2];
  for (int l = 0; l < 2; ++l) {
    hs[l] = tape.constant(Tensor(Shape{batch, h, 1, 1}));
    cs[l] = tape.constant(Tensor(Shape{batch, h, 1, 1}));
  }
  std::vector<int> prev(batch, 0);
  for (int t = 0; t < length; ++t) {
    Var x;
    if (t == 0) {
      x = embedding(p(start_), prev);
    } else {
      const TokenKind kind = token_kind(t - 1);
      const int table = kind == TokenKind::Index ? emb_index_ : kind == TokenKind::Op ? emb_op_ : emb_agg_;
      x = embedding(p(table), prev);
    }
    for (int l = 0; l < 2; ++l) {
      Var gates = add(linear(x, p(wx_[l]), p(b_[l])), linear(hs[l], p(wh_[l]), std::nullopt));
      Var i = sigmoid(slice_channels(gates, 0, h));
      Var f = sigmoid(slice_channels(gates, h, h));
      Var g = tanh(slice_channels(gates, 2 * h, h));
      Var o = sigmoid(slice_channels(gates, 3 * h, h));
      cs[l] = add(mul(f, cs[l]), mul(i, g));
      hs[l] = mul(o, tanh(cs[l]));
      x = hs[l];
    }
    const int head = static_cast<int>(token_kind(t));
    Var logits = linear(x, p(head_w_[head]), p(head_b_[head]));
    prev = choose(t, Step{logits, token_choices(t)});
  }
}

SampleTrace Controller::sample(std::mt19937_64& rng) {
  SampleTrace trace;
  Tape tape;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  unroll(tape, 1, num_tokens(), [&](int, const Step& s) {
    const Tensor& lp = log_softmax_rows(s.logits, s.valid).value();
    const double r = u(rng);
    double cdf = 0.0, entropy = 0.0;
    int pick = s.valid - 1;
    bool picked = false;
    for (int j = 0; j < s.valid; ++j) {
      const double pj = std::exp(lp[j]);
      entropy -= pj * lp[j];
      cdf += pj;
      if (!picked && r < cdf) {
        pick = j;
        picked = true;
      }
    }
    trace.tokens.push_back(pick);
    trace.logprobs.push_back(lp[pick]);
    trace.entropies.push_back(entropy);
    return std::vector<int>{pick};
  });
  return trace;
}

std::vector<double> Controller::log_prob(std::span<const int> tokens) {
  decode(tokens, cfg_.k);  // validates bounds
  std::vector<double> out;
  Tape tape;
  unroll(tape, 1, num_tokens(), [&](int t, const Step& s) {
    out.push_back(log_softmax_rows(s.logits, s.valid).value()[tokens[t]]);
    return std::vector<int>{tokens[t]};
  });
  return out;
}

std::vector<std::vector<double>> Controller::distributions(std::span<const int> tokens) {
  decode(tokens, cfg_.k);
  std::vector<std::vector<double>> out;
  Tape tape;
  unroll(tape, 1, num_tokens(), [&](int t, const Step& s) {
    const Tensor& lp = log_softmax_rows(s.logits, s.valid).value();
    std::vector<double> probs(s.logits.shape()[1], 0.0);
    for (int j = 0; j < s.valid; ++j) probs[j] = std::exp(lp[j]);
    out.push_back(std::move(probs));
    return std::vector<int>{tokens[t]};
  });
  return out;
}

Controller::BatchOutput Controller::forward_batch(Tape& tape, const std::vector<std::vector<int>>& token_batch) {
  const int batch = static_cast<int>(token_batch.size());
  if (batch == 0) throw Error("controller: empty batch");
  for (const auto& tokens : token_batch) decode(tokens, cfg_.k);
  std::optional<Var> logp, entropy;
  unroll(tape, batch, num_tokens(), [&](int t, const Step& s) {
    std::vector<int> col(batch);
    for (int b = 0; b < batch; ++b) col[b] = token_batch[b][t];
    Var lp = log_softmax_rows(s.logits, s.valid);
    Var chosen = gather_rows(lp, col);
    Var ent = entropy_rows(lp);
    logp = logp ? add(*logp, chosen) : chosen;
    entropy = entropy ? add(*entropy, ent) : ent;
    return col;
  });
  return {*logp, *entropy};
}

std::vector<std::pair<std::string, Parameter*>> Controller::named_parameters() {
  std::vector<std::pair<std::string, Parameter*>> out;
  for (std::size_t i = 0; i < params_.size(); ++i) out.emplace_back(names_[i], &params_[i]);
  return out;
}

std::vector<Parameter*> Controller::parameters() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

void Controller::zero_weights() {
  for (auto& p : params_) p.value.fill(0.0);
}

PpoTrainer::PpoTrainer(Controller& ctrl, PpoConfig cfg)
    : ctrl_(ctrl), cfg_(cfg), adam_(ctrl.parameters(), AdamConfig{.lr = cfg.lr}) {
  if (!(cfg_.clip_eps > 0.0 && cfg_.clip_eps < 1.0)) throw Error("ppo: clip_eps must lie in (0,1)");
  if (!(cfg_.lr > 0.0)) throw Error("ppo: lr must be positive");
  if (cfg_.epochs_per_batch < 1) throw Error("ppo: epochs_per_batch must be >= 1");
}

Var PpoTrainer::build_objective(Tape& tape, std::span<const SampleTrace> batch, std::span<const double> advantages) {
  std::vector<std::vector<int>> tokens;
  std::vector<double> old;
  for (const auto& tr : batch) {
    tokens.push_back(tr.tokens);
    old.push_back(tr.total_logprob());
  }
  auto out = ctrl_.forward_batch(tape, tokens);
  std::vector<double> adv(advantages.begin(), advantages.end());
  Var surrogate = ppo_clipped_surrogate(out.logp, old, adv, cfg_.clip_eps);
  if (cfg_.entropy_coef == 0.0) return surrogate;
  return add(surrogate, scale(mean(out.entropy), cfg_.entropy_coef));
}

double PpoTrainer::objective(std::span<const SampleTrace> batch, std::span<const double> advantages) {
  Tape tape;
  return build_objective(tape, batch, advantages).value()[0];
}

PpoTrainer::Stats PpoTrainer::update(std::span<const SampleTrace> batch) {
  if (batch.empty()) throw Error("ppo_update: empty batch");
  double mean_reward = 0.0;
  for (const auto& tr : batch) {
    if (!tr.reward) throw Error("ppo_update: trace without reward");
    mean_reward += *tr.reward;
  }
  mean_reward /= static_cast<double>(batch.size());

  Stats st;
  st.baseline_before = baseline_.value_or(mean_reward);
  std::vector<double> adv;
  for (const auto& tr : batch) adv.push_back(*tr.reward - st.baseline_before);
  st.mean_advantage = std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(adv.size());

  for (int epoch = 0; epoch < cfg_.epochs_per_batch; ++epoch) {
    adam_.zero_grad();
    Tape tape;
    Var obj = build_objective(tape, batch, adv);
    if (epoch == 0) st.surrogate_first = obj.value()[0];
    st.surrogate_last = obj.value()[0];
    tape.backward(scale(obj, -1.0));
    adam_.step();
  }

  double b = st.baseline_before;
  for (const auto& tr : batch) b = cfg_.baseline_decay * b + (1.0 - cfg_.baseline_decay) * *tr.reward;
  baseline_ = b;
  st.baseline_after = b;
  return st;
}

void PpoTrainer::save(const std::filesystem::path& path) {
  Checkpoint ck;
  const auto named = ctrl_.named_parameters();
  const auto moments = adam_.state();
  for (std::size_t i = 0; i < named.size(); ++i) {
    ck.tensors["ctrl." + named[i].first] = named[i].second->value;
    ck.tensors["adam.m." + named[i].first] = *moments[i];
    ck.tensors["adam.v." + named[i].first] = *moments[named.size() + i];
  }
  ck.scalars["adam.steps"] = static_cast<double>(adam_.steps());
  ck.scalars["config.k"] = ctrl_.config().k;
  ck.scalars["config.hidden"] = ctrl_.config().hidden;
  ck.scalars["config.embed"] = ctrl_.config().embed;
  if (baseline_) ck.scalars["baseline"] = *baseline_;
  ck.strings["kind"] = "controller";
  ck.save(path);
}

void PpoTrainer::load(const std::filesystem::path& path) {
  Checkpoint ck = Checkpoint::load(path);
  if (ck.strings.count("kind") == 0 || ck.string("kind") != "controller") {
    throw Error("checkpoint " + path.string() + " is not a controller checkpoint");
  }
  if (ck.scalar("config.k") != ctrl_.config().k || ck.scalar("config.hidden") != ctrl_.config().hidden ||
      ck.scalar("config.embed") != ctrl_.config().embed) {
    throw Error("checkpoint " + path.string() + " was written for a different controller shape");
  }
  const auto named = ctrl_.named_parameters();
  const auto moments = adam_.state();
  for (std::size_t i = 0; i < named.size(); ++i) {
    restore_into(ck, "ctrl." + named[i].first, named[i].second->value);
    restore_into(ck, "adam.m." + named[i].first, *moments[i]);
    restore_into(ck, "adam.v." + named[i].first, *moments[named.size() + i]);
  }
  adam_.set_steps(static_cast<long>(ck.scalar("adam.steps")));
  baseline_ = ck.scalars.count("baseline") ? std::optional<double>(ck.scalar("baseline")) : std::nullopt;
}

}  // namespace dcnas
