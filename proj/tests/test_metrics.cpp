#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dcnas/metrics.hpp"
#include "dcnas/ops.hpp"

using namespace dcnas;

namespace {

struct Oracle {
  double miou, fwiou, macc, reward;
};

// Works from the raw maps, never from a confusion matrix.
Oracle count_oracle(const std::vector<std::uint8_t>& l, const std::vector<std::uint8_t>& p, int c_n) {
  double miou_s = 0.0, fw = 0.0, acc_s = 0.0;
  int present = 0;
  std::size_t scored = 0;
  for (auto v : l) scored += v != 255;
  for (int c = 0; c < c_n; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0, n = 0;
    for (std::size_t i = 0; i < l.size(); ++i) {
      if (l[i] == 255) continue;
      const bool lt = l[i] == c, pt = p[i] == c;
      n += lt;
      tp += lt && pt;
      fp += !lt && pt;
      fn += lt && !pt;
    }
    if (n == 0) continue;
    ++present;
    const double iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    miou_s += iou;
    fw += static_cast<double>(n) / static_cast<double>(scored) * iou;
    acc_s += static_cast<double>(tp) / static_cast<double>(n);
  }
  Oracle o{miou_s / present, fw, acc_s / present, 0.0};
  o.reward = std::pow(o.miou * o.fwiou * o.macc, 1.0 / 3.0);
  return o;
}

}  // namespace

TEST_CASE("update") {
  ConfusionMatrix cm(3);
  std::vector<std::uint8_t> l(100), p(100);
  for (int i = 0; i < 100; ++i) l[i] = p[i] = static_cast<std::uint8_t>(i % 3);
  cm.update(l, p);
  std::uint64_t diag = 0;
  for (int c = 0; c < 3; ++c) diag += cm.count(c, c);
  CHECK(diag == 100);
  CHECK(cm.total() == 100);

  ConfusionMatrix before = cm;
  std::vector<std::uint8_t> ignored(50, 255), any(50, 1);
  cm.update(ignored, any);
  CHECK(cm == before);

  std::vector<std::uint8_t> bad_pred{0, 3};
  std::vector<std::uint8_t> two{0, 1};
  CHECK_THROWS_AS(cm.update(two, bad_pred), Error);
  CHECK_THROWS_AS(cm.update(std::vector<std::uint8_t>{7, 0}, two), Error);
  CHECK_THROWS_AS(cm.update(two, std::vector<std::uint8_t>{0}), ShapeError);
  CHECK_THROWS_AS(miou(ConfusionMatrix(2)), Error);
  CHECK_THROWS_AS(reward(ConfusionMatrix(2)), Error);
}

TEST_CASE("hand example") {
  ConfusionMatrix cm(2);
  cm.update(std::vector<std::uint8_t>{0, 0, 1, 1}, std::vector<std::uint8_t>{0, 1, 1, 1});
  CHECK(miou(cm) == doctest::Approx(7.0 / 12).epsilon(1e-15));
  CHECK(fwiou(cm) == doctest::Approx(7.0 / 12).epsilon(1e-15));
  CHECK(macc(cm) == doctest::Approx(3.0 / 4).epsilon(1e-15));
  CHECK(reward(cm) == doctest::Approx(std::cbrt(7.0 / 12 * 7.0 / 12 * 3.0 / 4)).epsilon(1e-15));

  ConfusionMatrix perfect(4);
  perfect.update(std::vector<std::uint8_t>{0, 3, 3, 2}, std::vector<std::uint8_t>{0, 3, 3, 2});
  auto r = evaluate(perfect);
  CHECK(r.miou == 1.0);
  CHECK(r.fwiou == 1.0);
  CHECK(r.macc == 1.0);
  CHECK(r.reward == 1.0);
  CHECK(r.to_json().find("\"reward\":1.0") != std::string::npos);
}

TEST_CASE("geometric mean of equal metrics") {
  // Two classes, each half right: IoU 1/3 each, accuracy 1/2.
  ConfusionMatrix cm(2);
  cm.update(std::vector<std::uint8_t>{0, 0, 1, 1}, std::vector<std::uint8_t>{0, 1, 1, 0});
  CHECK(macc(cm) == 0.5);
  const double m = miou(cm);
  CHECK(reward(cm) == doctest::Approx(std::cbrt(m * m * 0.5)).epsilon(1e-15));
}

TEST_CASE("random maps against the counting oracle") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int c_n = 2 + trial % 4;
    const std::size_t n = 50 + rng() % 400;
    std::uniform_int_distribution<int> cls(0, c_n - 1);
    std::bernoulli_distribution ignore(0.15), agree(0.5);
    std::vector<std::uint8_t> l(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      l[i] = ignore(rng) ? 255 : static_cast<std::uint8_t>(cls(rng));
      p[i] = (l[i] != 255 && agree(rng)) ? l[i] : static_cast<std::uint8_t>(cls(rng));
    }
    if (std::all_of(l.begin(), l.end(), [](auto v) { return v == 255; })) l[0] = 0;
    ConfusionMatrix cm(c_n);
    cm.update(l, p);

    // Exact counts.
    for (int t = 0; t < c_n; ++t) {
      std::uint64_t row = 0;
      for (int q = 0; q < c_n; ++q) {
        std::uint64_t direct = 0;
        for (std::size_t i = 0; i < n; ++i) direct += l[i] == t && p[i] == q;
        CHECK(cm.count(t, q) == direct);
        row += cm.count(t, q);
      }
      CHECK(row == static_cast<std::uint64_t>(std::count(l.begin(), l.end(), t)));
    }

    Oracle o = count_oracle(l, p, c_n);
    MetricsReport r = evaluate(cm);
    CHECK(std::abs(r.miou - o.miou) <= 1e-12);
    CHECK(std::abs(r.fwiou - o.fwiou) <= 1e-12);
    CHECK(std::abs(r.macc - o.macc) <= 1e-12);
    CHECK(std::abs(r.reward - o.reward) <= 1e-12);
    for (double v : {r.miou, r.fwiou, r.macc, r.reward}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(r.reward <= std::max({r.miou, r.fwiou, r.macc}) + 1e-15);
    CHECK(r.reward >= std::min({r.miou, r.fwiou, r.macc}) - 1e-15);

    // Relabeling both maps by one permutation leaves every metric unchanged.
    std::vector<std::uint8_t> perm(c_n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::uint8_t> l2(n), p2(n);
    for (std::size_t i = 0; i < n; ++i) {
      l2[i] = l[i] == 255 ? 255 : perm[l[i]];
      p2[i] = perm[p[i]];
    }
    ConfusionMatrix cm2(c_n);
    cm2.update(l2, p2);
    MetricsReport r2 = evaluate(cm2);
    CHECK(std::abs(r2.miou - r.miou) <= 1e-12);
    CHECK(std::abs(r2.fwiou - r.fwiou) <= 1e-12);
    CHECK(std::abs(r2.macc - r.macc) <= 1e-12);
  }
}

TEST_CASE("merge equals a single pass") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> cls(0, 3);
  std::vector<std::uint8_t> l(200), p(200);
  for (auto& v : l) v = static_cast<std::uint8_t>(cls(rng));
  for (auto& v : p) v = static_cast<std::uint8_t>(cls(rng));
  ConfusionMatrix whole(4), a(4), b(4);
  whole.update(l, p);
  a.update(std::span(l).first(80), std::span(p).first(80));
  b.update(std::span(l).subspan(80), std::span(p).subspan(80));
  a.merge(b);
  CHECK(a == whole);
  CHECK_THROWS_AS(a.merge(ConfusionMatrix(3)), Error);
}
