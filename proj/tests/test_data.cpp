#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "dcnas/data.hpp"
#include "dcnas/ops.hpp"

using namespace dcnas;

namespace {

DatasetConfig small_config() {
  DatasetConfig cfg;
  cfg.n_sequences = 20;
  cfg.seq_len = 3;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("generation is deterministic and well formed") {
  DatasetConfig cfg = small_config();
  Dataset a = generate(cfg), b = generate(cfg);
  REQUIRE(a.sequences.size() == 20);
  for (std::size_t i = 0; i < a.sequences.size(); ++i) {
    CHECK(a.sequences[i].frames == b.sequences[i].frames);
    CHECK(a.sequences[i].labels == b.sequences[i].labels);
    const auto& s = a.sequences[i];
    CHECK(s.frames.size() == 3);
    CHECK(s.frames[0].size() == 3u * 64 * 64);
    CHECK(!s.objects.empty());
    CHECK(s.objects.size() <= 4);
    std::set<int> cls;
    for (const auto& o : s.objects) cls.insert(o.cls);
    CHECK(cls.size() == s.objects.size());
    for (const auto& l : s.labels)
      for (auto v : l) CHECK(v < 5);
  }
  cfg.seed = 6;
  CHECK(generate(cfg).sequences[0].frames != a.sequences[0].frames);
}

TEST_CASE("config validation") {
  DatasetConfig cfg = small_config();
  cfg.height = 48;
  CHECK_THROWS_AS(generate(cfg), Error);
  cfg = small_config();
  cfg.seq_len = 1;
  CHECK_THROWS_AS(generate(cfg), Error);
  cfg = small_config();
  cfg.num_classes = 1;
  CHECK_THROWS_AS(generate(cfg), Error);
}

TEST_CASE("static scenes keep their labels") {
  DatasetConfig cfg = small_config();
  cfg.max_velocity = 0;
  Dataset ds = generate(cfg);
  for (const auto& s : ds.sequences) {
    CHECK(s.labels[1] == s.labels[0]);
    CHECK(s.labels[2] == s.labels[0]);
  }
}

TEST_CASE("shift oracle for a fixed velocity") {
  DatasetConfig cfg = small_config();
  cfg.fixed_velocity = std::array<int, 2>{2, 0};
  Dataset ds = generate(cfg);
  const int h = cfg.height, w = cfg.width;
  for (const auto& s : ds.sequences) {
    for (const auto& o : s.objects) {
      CHECK(o.vx == 2);
      CHECK(o.vy == 0);
    }
    // Frame 1 at column x shows what frame 0 showed at column x-2. Columns 0,1
    // are where content enters from outside the frame.
    for (int y = 0; y < h; ++y) {
      for (int x = 2; x < w; ++x) {
        CHECK(s.labels[1][y * w + x] == s.labels[0][y * w + x - 2]);
      }
    }
  }
}

TEST_CASE("split") {
  DatasetConfig cfg = small_config();
  cfg.n_sequences = 125;
  Dataset ds = generate(cfg);
  Split s = split(ds, 0.8, 0.1, 3);
  CHECK(s.train.size() == 100);
  CHECK(s.val.size() == 25);
  CHECK(s.meta_train.size() == 90);
  CHECK(s.meta_val.size() == 10);

  std::vector<int> all = s.train;
  all.insert(all.end(), s.val.begin(), s.val.end());
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 125; ++i) CHECK(all[i] == i);
  std::vector<int> meta = s.meta_train;
  meta.insert(meta.end(), s.meta_val.begin(), s.meta_val.end());
  std::sort(meta.begin(), meta.end());
  CHECK(meta == s.train);

  std::set<int> train_classes;
  for (int i : s.train)
    for (const auto& o : ds.sequences[i].objects) train_classes.insert(o.cls);
  CHECK(train_classes.size() == 4);

  Split again = split(ds, 0.8, 0.1, 3);
  CHECK(again.train == s.train);
  CHECK(again.meta_val == s.meta_val);
  CHECK_THROWS_AS(split(ds, 1.0, 0.1, 3), Error);
  CHECK_THROWS_AS(split(ds, 0.8, 0.0, 3), Error);

  DatasetConfig tiny = small_config();
  tiny.n_sequences = 2;
  CHECK_THROWS_AS(split(generate(tiny), 0.5, 0.1, 1), Error);
}

TEST_CASE("identity batches") {
  Dataset ds = generate(small_config());
  std::vector<int> idx{0, 1, 2, 3, 4};
  auto bs = batches(ds, idx, 2, {.crop = 64, .scale_min = 1.0, .scale_max = 1.0, .shuffle = false}, 9);
  REQUIRE(bs.size() == 3);
  CHECK(bs[2].sequence_ids == std::vector<int>{4});
  for (const auto& b : bs) {
    for (std::size_t k = 0; k < b.sequence_ids.size(); ++k) {
      const auto& seq = ds.sequences[b.sequence_ids[k]];
      for (int t = 0; t < 3; ++t) {
        for (std::size_t i = 0; i < 3u * 64 * 64; ++i) {
          REQUIRE(b.frames[t][k * 3 * 64 * 64 + i] == seq.frames[t][i] / 255.0);
        }
        for (std::size_t i = 0; i < 64u * 64; ++i) REQUIRE(b.labels[t][k * 64 * 64 + i] == seq.labels[t][i]);
      }
    }
  }
  auto again = batches(ds, idx, 2, {.crop = 64, .scale_min = 1.0, .scale_max = 1.0, .shuffle = true}, 9);
  auto again2 = batches(ds, idx, 2, {.crop = 64, .scale_min = 1.0, .scale_max = 1.0, .shuffle = true}, 9);
  for (std::size_t i = 0; i < again.size(); ++i) CHECK(again[i].sequence_ids == again2[i].sequence_ids);
}

TEST_CASE("augmented labels stay in range") {
  Dataset ds = generate(small_config());
  std::vector<int> idx(20);
  for (int i = 0; i < 20; ++i) idx[i] = i;
  auto bs = batches(ds, idx, 4, {.crop = 64, .scale_min = 0.5, .scale_max = 2.0}, 11);
  bool saw_pad = false;
  for (const auto& b : bs) {
    for (const auto& l : b.labels) {
      for (auto v : l) {
        CHECK((v < 5 || v == kIgnoreLabel));
        saw_pad = saw_pad || v == kIgnoreLabel;
      }
    }
  }
  CHECK(saw_pad);
}

TEST_CASE("augmentation is consistent across the frames of a sequence") {
  // Coordinate-grid frames: channel 0 encodes x, channel 1 encodes y. Frame 1
  // is identical to frame 0, so any crop or scale mismatch between the frames
  // shows up as a value difference.
  Dataset ds;
  ds.config = small_config();
  ds.config.n_sequences = 6;
  for (int s = 0; s < 6; ++s) {
    Sequence seq;
    std::vector<std::uint8_t> img(3 * 64 * 64), lab(64 * 64);
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        img[y * 64 + x] = static_cast<std::uint8_t>(4 * x);
        img[64 * 64 + y * 64 + x] = static_cast<std::uint8_t>(4 * y);
        img[2 * 64 * 64 + y * 64 + x] = static_cast<std::uint8_t>(s);
        lab[y * 64 + x] = static_cast<std::uint8_t>((x / 16 + y / 16) % 5);
      }
    }
    for (int t = 0; t < 3; ++t) {
      seq.frames.push_back(img);
      seq.labels.push_back(lab);
    }
    ds.sequences.push_back(seq);
  }
  std::vector<int> idx{0, 1, 2, 3, 4, 5};
  auto bs = batches(ds, idx, 3, {.crop = 48, .scale_min = 0.5, .scale_max = 2.0}, 12);
  std::set<double> corners;
  for (const auto& b : bs) {
    CHECK(b.frames[0].shape() == Shape{3, 3, 48, 48});
    CHECK(b.frames[0] == b.frames[1]);
    CHECK(b.frames[1] == b.frames[2]);
    CHECK(b.labels[0] == b.labels[1]);
    for (int k = 0; k < 3; ++k) corners.insert(b.frames[0].at(k, 0, 0, 0) + 1000 * b.frames[0].at(k, 1, 0, 0));
  }
  // Different sequences draw different offsets.
  CHECK(corners.size() > 1);
}

TEST_CASE("save and load round trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "dcnas_test_data";
  fs::remove_all(dir);
  DatasetConfig cfg = small_config();
  cfg.n_sequences = 4;
  cfg.fixed_velocity = std::array<int, 2>{1, -1};
  Dataset ds = generate(cfg);
  save_dataset(ds, dir);
  Dataset back = load_dataset(dir);
  CHECK(back.config.seed == cfg.seed);
  CHECK(back.config.fixed_velocity == cfg.fixed_velocity);
  REQUIRE(back.sequences.size() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(back.sequences[i].frames == ds.sequences[i].frames);
    CHECK(back.sequences[i].labels == ds.sequences[i].labels);
    CHECK(back.sequences[i].seed == ds.sequences[i].seed);
    REQUIRE(back.sequences[i].objects.size() == ds.sequences[i].objects.size());
    CHECK(back.sequences[i].objects[0].vx == 1);
    CHECK(back.sequences[i].objects[0].color == ds.sequences[i].objects[0].color);
  }
  fs::remove(dir / "seq_0002" / "label_01.pgm");
  CHECK_THROWS_AS(load_dataset(dir), Error);
  CHECK_THROWS_AS(load_dataset(dir / "nope"), Error);
  fs::remove_all(dir);
}
