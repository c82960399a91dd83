#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dcnas/checkpoint.hpp"
#include "dcnas/controller.hpp"
#include "dcnas/genotype.hpp"
#include "test_util.hpp"

using namespace dcnas;
using namespace dcnas::testing;

namespace {

std::vector<SampleTrace> sample_batch(Controller& c, std::mt19937_64& rng, int n) {
  std::vector<SampleTrace> out;
  for (int i = 0; i < n; ++i) out.push_back(c.sample(rng));
  return out;
}

std::vector<Tensor> snapshot(Controller& c) {
  std::vector<Tensor> out;
  for (Parameter* p : c.parameters()) out.push_back(p->value);
  return out;
}

}  // namespace

TEST_CASE("token layout") {
  CHECK(token_kind(0) == TokenKind::Index);
  CHECK(token_kind(1) == TokenKind::Index);
  CHECK(token_kind(2) == TokenKind::Op);
  CHECK(token_kind(3) == TokenKind::Op);
  CHECK(token_kind(4) == TokenKind::Agg);
  CHECK(token_choices(0) == 5);
  CHECK(token_choices(5) == 6);
  CHECK(token_choices(11) == 7);
  CHECK(token_choices(7) == 6);
}

TEST_CASE("zero-weight controller is uniform over admissible tokens") {
  Controller c({.k = 3});
  c.zero_weights();
  std::vector<int> tokens{0, 0, 0, 0, 0, 5, 5, 0, 0, 0, 6, 6, 0, 0, 0};
  auto dist = c.distributions(tokens);
  REQUIRE(dist.size() == 15);
  for (double p : dist[2]) CHECK(p == doctest::Approx(1.0 / 6).epsilon(1e-12));
  // Step 1 index token: head width 7, pool of 6.
  REQUIRE(dist[5].size() == 7);
  for (int j = 0; j < 6; ++j) CHECK(dist[5][j] == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(dist[5][6] == 0.0);
  for (int j = 5; j < 7; ++j) CHECK(dist[0][j] == 0.0);

  Controller c1({.k = 1});
  c1.zero_weights();
  auto lp = c1.log_prob(std::vector<int>{3, 1, 2, 5, 4});
  double total = 0.0;
  for (double v : lp) total += v;
  CHECK(total == doctest::Approx(2 * std::log(1.0 / 5) + 3 * std::log(1.0 / 6)).epsilon(1e-12));
}

TEST_CASE("sampling respects pool bounds and recomputed log-probs match") {
  Controller c({.k = 3}, 5);
  std::mt19937_64 rng(6);
  for (int n = 0; n < 10000; ++n) {
    SampleTrace tr = c.sample(rng);
    REQUIRE(tr.tokens.size() == 15);
    CHECK_NOTHROW(decode(tr.tokens, 3));
    if (n < 50) {
      auto lp = c.log_prob(tr.tokens);
      for (std::size_t t = 0; t < lp.size(); ++t) {
        CHECK(std::abs(lp[t] - tr.logprobs[t]) <= 1e-10);
        CHECK(std::isfinite(tr.logprobs[t]));
      }
      for (const auto& d : c.distributions(tr.tokens)) {
        double s = 0.0;
        for (double p : d) s += p;
        CHECK(std::abs(s - 1.0) <= 1e-9);
      }
    }
  }
  CHECK_THROWS_AS(c.log_prob(std::vector<int>{0, 0, 0, 0, 0, 9, 0, 0, 0, 0, 0, 0, 0, 0, 0}), Error);
}

TEST_CASE("batched pass agrees with single traces") {
  Controller c({.k = 2}, 7);
  std::mt19937_64 rng(8);
  auto batch = sample_batch(c, rng, 5);
  std::vector<std::vector<int>> toks;
  for (auto& b : batch) toks.push_back(b.tokens);
  Tape t;
  auto out = c.forward_batch(t, toks);
  for (int i = 0; i < 5; ++i) {
    CHECK(std::abs(out.logp.value()[i] - batch[i].total_logprob()) <= 1e-12);
    double h = 0.0;
    for (double e : batch[i].entropies) h += e;
    CHECK(std::abs(out.entropy.value()[i] - h) <= 1e-12);
  }
}

TEST_CASE("log-prob gradient matches finite differences") {
  Controller c({.k = 2, .hidden = 6, .embed = 4, .init_range = 0.5}, 9);
  std::vector<std::vector<int>> toks{{0, 4, 1, 5, 2, 5, 1, 3, 0, 4}, {2, 2, 4, 4, 0, 0, 3, 2, 1, 5}};
  auto ps = c.parameters();
  double err = fd_error(ps, [&](Tape& t) {
    auto out = c.forward_batch(t, toks);
    return add(sum(out.logp), scale(sum(out.entropy), 0.3));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("ppo objective identities") {
  Controller c({.k = 2}, 11);
  std::mt19937_64 rng(12);
  auto batch = sample_batch(c, rng, 6);

  SUBCASE("ratio one gives the mean advantage") {
    PpoTrainer tr(c, {.entropy_coef = 0.0});
    std::vector<double> adv{0.3, -0.1, 0.5, 0.0, -0.4, 0.2};
    CHECK(tr.objective(batch, adv) == doctest::Approx(0.5 / 6).epsilon(1e-12));
  }
  SUBCASE("zero advantage and no entropy bonus leaves parameters unchanged") {
    for (auto& b : batch) b.reward = 0.25;
    PpoTrainer tr(c, {.entropy_coef = 0.0});
    tr.set_baseline(0.25);
    auto before = snapshot(c);
    auto st = tr.update(batch);
    CHECK(st.mean_advantage == 0.0);
    auto after = snapshot(c);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
  }
  SUBCASE("zero advantage update follows the entropy gradient") {
    for (auto& b : batch) b.reward = 0.25;
    const double coef = 1e-3;
    // Entropy gradient computed independently.
    std::vector<std::vector<int>> toks;
    for (auto& b : batch) toks.push_back(b.tokens);
    for (Parameter* p : c.parameters()) p->zero_grad();
    {
      Tape t;
      t.backward(mean(c.forward_batch(t, toks).entropy));
    }
    std::vector<Tensor> ge;
    for (Parameter* p : c.parameters()) ge.push_back(p->grad);
    auto before = snapshot(c);

    PpoTrainer tr(c, {.epochs_per_batch = 1, .entropy_coef = coef});
    tr.set_baseline(0.25);
    tr.update(batch);
    auto after = snapshot(c);
    double worst = 0.0;
    for (std::size_t k = 0; k < before.size(); ++k) {
      for (std::size_t i = 0; i < before[k].numel(); ++i) {
        const double g = -coef * ge[k][i];  // gradient of the minimized loss
        const double expect = before[k][i] - 1e-4 * g / (std::abs(g) + 1e-8);
        worst = std::max(worst, std::abs(after[k][i] - expect));
      }
    }
    CHECK(worst <= 1e-15);
  }
  SUBCASE("clipped ratios stop the gradient") {
    // Old log-probs far below the current ones: r = e > 1 + eps, A > 0.
    for (auto& b : batch) {
      for (double& lp : b.logprobs) lp -= 0.1;
      b.reward = 1.0;
    }
    PpoTrainer tr(c, {.entropy_coef = 0.0});
    tr.set_baseline(0.0);
    auto before = snapshot(c);
    tr.update(batch);
    auto after = snapshot(c);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
  }
  SUBCASE("errors") {
    PpoTrainer tr(c, {});
    CHECK_THROWS_AS(tr.update(std::span<const SampleTrace>{}), Error);
    CHECK_THROWS_AS(tr.update(batch), Error);  // no rewards
    CHECK_THROWS_AS(PpoTrainer(c, {.clip_eps = 1.5}), Error);
  }
}

TEST_CASE("baseline bookkeeping") {
  Controller c({.k = 1}, 13);
  std::mt19937_64 rng(14);
  auto batch = sample_batch(c, rng, 4);
  const double rewards[4] = {0.2, 0.4, 0.6, 1.0};
  for (int i = 0; i < 4; ++i) batch[i].reward = rewards[i];
  PpoTrainer tr(c, {.baseline_decay = 0.5});
  auto st = tr.update(batch);
  CHECK(st.baseline_before == doctest::Approx(0.55));
  CHECK(st.mean_advantage == doctest::Approx(0.0).epsilon(1e-15));
  double b = 0.55;
  for (double r : rewards) b = 0.5 * b + 0.5 * r;
  CHECK(*tr.baseline() == doctest::Approx(b).epsilon(1e-15));
}

TEST_CASE("ppo update is deterministic") {
  auto run = [] {
    Controller c({.k = 2}, 21);
    PpoTrainer tr(c, {});
    std::mt19937_64 rng(22);
    for (int u = 0; u < 3; ++u) {
      auto batch = sample_batch(c, rng, 8);
      for (auto& b : batch) b.reward = b.tokens[4] / 5.0;
      tr.update(batch);
    }
    return snapshot(c);
  };
  CHECK(run() == run());
}

TEST_CASE("bandit: reward for aggregation 5 at step 0") {
  Controller c({.k = 2}, 1);
  PpoTrainer tr(c, {.clip_eps = 0.2, .lr = 1e-4});
  std::mt19937_64 rng(101);
  std::mt19937_64 eval_rng(202);
  double freq = 0.0;
  int updates = 0;
  while (updates < 500 && freq <= 0.8) {
    auto batch = sample_batch(c, rng, 8);
    for (auto& b : batch) b.reward = b.tokens[4] == 5 ? 1.0 : 0.0;
    tr.update(batch);
    ++updates;
    if (updates % 10 == 0) {
      int hits = 0;
      for (int i = 0; i < 200; ++i) hits += c.sample(eval_rng).tokens[4] == 5;
      freq = hits / 200.0;
    }
  }
  MESSAGE("updates: " << updates << ", frequency: " << freq);
  CHECK(freq > 0.8);
  CHECK(updates <= 500);
}

TEST_CASE("checkpoint round trip is bit exact") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "dcnas_test_controller";
  fs::create_directories(dir);
  Controller c({.k = 2}, 31);
  PpoTrainer tr(c, {});
  std::mt19937_64 rng(32);
  auto batch = sample_batch(c, rng, 8);
  for (auto& b : batch) b.reward = b.tokens[0] * 0.1;
  tr.update(batch);
  tr.save(dir / "ctrl.bin");

  Controller c2({.k = 2}, 99);
  PpoTrainer tr2(c2, {});
  tr2.load(dir / "ctrl.bin");
  CHECK(snapshot(c) == snapshot(c2));
  CHECK(*tr2.baseline() == *tr.baseline());
  CHECK(tr2.optimizer().steps() == tr.optimizer().steps());

  // Identical continuation after restore.
  std::mt19937_64 r1(40), r2(40);
  auto b1 = sample_batch(c, r1, 8), b2 = sample_batch(c2, r2, 8);
  for (auto* bb : {&b1, &b2})
    for (auto& b : *bb) b.reward = b.tokens[1] * 0.1;
  tr.update(b1);
  tr2.update(b2);
  CHECK(snapshot(c) == snapshot(c2));

  Controller c3({.k = 3}, 1);
  PpoTrainer tr3(c3, {});
  CHECK_THROWS_AS(tr3.load(dir / "ctrl.bin"), Error);
  CHECK_THROWS_AS(tr3.load(dir / "missing.bin"), Error);
  {
    std::ofstream f(dir / "junk.bin", std::ios::binary);
    f << "not a checkpoint";
  }
  CHECK_THROWS_AS(Checkpoint::load(dir / "junk.bin"), Error);
  fs::remove_all(dir);
}

TEST_CASE("optimizers") {
  SUBCASE("adam with zero gradient") {
    Parameter p(Tensor(Shape{1, 3, 1, 1}, 0.7));
    Adam a({&p}, {.lr = 0.1});
    a.zero_grad();
    a.step();
    for (double v : p.value.values()) CHECK(v == 0.7);
  }
  SUBCASE("sgd momentum recurrence") {
    Parameter p(Tensor(Shape{1, 1, 1, 1}, 1.0));
    Sgd s({&p}, 0.1, 0.9);
    p.grad[0] = 2.0;
    s.step();
    CHECK(p.value[0] == doctest::Approx(1.0 - 0.1 * 2.0));
    s.step();
    CHECK(p.value[0] == doctest::Approx(1.0 - 0.1 * 2.0 - 0.1 * 1.9 * 2.0));
  }
  SUBCASE("adam descends x^2") {
    Parameter x(Tensor(Shape{1, 1, 1, 1}, 1.0));
    Adam a({&x}, {.lr = 0.015});
    double prev = 1.0;
    bool monotone = true;
    for (int i = 0; i < 100; ++i) {
      a.zero_grad();
      x.grad[0] = 2.0 * x.value[0];
      a.step();
      monotone = monotone && std::abs(x.value[0]) < prev;
      prev = std::abs(x.value[0]);
    }
    CHECK(monotone);
    CHECK(prev < 0.1);
  }
  SUBCASE("poly schedule") {
    CHECK(poly_lr(5e-2, 0, 100) == 5e-2);
    CHECK(poly_lr(5e-2, 100, 100) == 0.0);
    CHECK(poly_lr(5e-2, 50, 100) == doctest::Approx(2.680e-2).epsilon(1e-3));
    CHECK(poly_lr(5e-2, 50, 100) == doctest::Approx(5e-2 * std::pow(0.5, 0.9)).epsilon(1e-15));
    CHECK_THROWS_AS(poly_lr(5e-2, 101, 100), Error);
  }
}
