#include "dcnas/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <random>
#include <set>

#include "dcnas/ops.hpp"

namespace dcnas {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::array<std::uint8_t, 3> class_color(int cls, int num_classes) {
  // Evenly spaced saturated hues.
  const double h = 6.0 * (cls - 1) / std::max(1, num_classes - 1);
  const double f = h - std::floor(h);
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(std::floor(h)) % 6) {
    case 0: r = 1, g = f, b = 0; break;
    case 1: r = 1 - f, g = 1, b = 0; break;
    case 2: r = 0, g = 1, b = f; break;
    case 3: r = 0, g = 1 - f, b = 1; break;
    case 4: r = f, g = 0, b = 1; break;
    default: r = 1, g = 0, b = 1 - f; break;
  }
  auto q = [](double v) { return static_cast<std::uint8_t>(std::lround(40 + 200 * v)); };
  return {q(r), q(g), q(b)};
}

bool inside(const ObjectTrack& o, int t, int y, int x) {
  const double cy = o.cy + t * o.vy, cx = o.cx + t * o.vx;
  const double dy = y - cy, dx = x - cx;
  if (o.kind == ShapeKind::Disk) return dy * dy + dx * dx <= o.hy * o.hy;
  return std::abs(dy) <= o.hy && std::abs(dx) <= o.hx;
}

Sequence make_sequence(const DatasetConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int h = cfg.height, w = cfg.width;
  Sequence seq;
  seq.seed = seed;

  // Low-frequency background: two sinusoids per channel.
  struct Wave {
    double fy, fx, phase, amp;
  };
  std::uniform_real_distribution<double> freq(0.5, 2.0), phase(0.0, 2 * M_PI), amp(0.05, 0.12), base(0.35, 0.55);
  std::array<double, 3> bg_base{};
  std::array<std::array<Wave, 2>, 3> waves{};
  for (int c = 0; c < 3; ++c) {
    bg_base[c] = base(rng);
    for (auto& wv : waves[c]) wv = {freq(rng) * 2 * M_PI / h, freq(rng) * 2 * M_PI / w, phase(rng), amp(rng)};
  }

  const int max_obj = std::min(cfg.max_objects, cfg.num_classes - 1);
  const int n_obj = std::uniform_int_distribution<int>(1, max_obj)(rng);
  std::vector<int> classes(cfg.num_classes - 1);
  std::iota(classes.begin(), classes.end(), 1);
  std::shuffle(classes.begin(), classes.end(), rng);
  std::uniform_int_distribution<int> vel(-cfg.max_velocity, cfg.max_velocity), kind(0, 2), jitter(-20, 20);
  std::bernoulli_distribution occlude(cfg.occlusion_prob), vertical(0.5);
  const double lo = h / 10.0, hi = h / 5.0;
  std::uniform_real_distribution<double> size(lo, hi);
  for (int i = 0; i < n_obj; ++i) {
    ObjectTrack o;
    o.cls = classes[i];
    o.kind = static_cast<ShapeKind>(kind(rng));
    switch (o.kind) {
      case ShapeKind::Rectangle:
        o.hy = size(rng);
        o.hx = size(rng);
        break;
      case ShapeKind::Disk:
        o.hy = o.hx = size(rng);
        break;
      case ShapeKind::Bar: {
        const double thin = std::uniform_real_distribution<double>(h / 24.0, h / 16.0)(rng);
        const double lng = std::uniform_real_distribution<double>(h / 4.0, h / 3.0)(rng);
        if (vertical(rng)) {
          o.hy = lng, o.hx = thin;
        } else {
          o.hy = thin, o.hx = lng;
        }
        break;
      }
    }
    if (2 * o.hy >= h - 1 || 2 * o.hx >= w - 1) throw Error("generate: shape does not fit a " + std::to_string(h) + "x" +
                                                            std::to_string(w) + " frame");
    std::uniform_real_distribution<double> py(o.hy, h - 1 - o.hy), px(o.hx, w - 1 - o.hx);
    o.cy = py(rng);
    o.cx = px(rng);
    if (i > 0 && occlude(rng)) {
      // Overlap a previously placed object.
      const ObjectTrack& prev = seq.objects[std::uniform_int_distribution<int>(0, i - 1)(rng)];
      std::uniform_real_distribution<double> near(-0.5, 0.5);
      o.cy = std::clamp(prev.cy + near(rng) * (prev.hy + o.hy), o.hy, h - 1 - o.hy);
      o.cx = std::clamp(prev.cx + near(rng) * (prev.hx + o.hx), o.hx, w - 1 - o.hx);
    }
    if (cfg.fixed_velocity) {
      o.vx = (*cfg.fixed_velocity)[0];
      o.vy = (*cfg.fixed_velocity)[1];
    } else {
      o.vx = vel(rng);
      o.vy = vel(rng);
    }
    const auto col = class_color(o.cls, cfg.num_classes);
    for (int c = 0; c < 3; ++c) o.color[c] = static_cast<std::uint8_t>(std::clamp(col[c] + jitter(rng), 0, 255));
    seq.objects.push_back(o);
  }

  std::normal_distribution<double> noise(0.0, cfg.noise_std);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int t = 0; t < cfg.seq_len; ++t) {
    std::vector<std::uint8_t> img(3 * hw), lab(hw, 0);
    std::vector<double> val(3 * hw);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) {
          double v = bg_base[c];
          for (const auto& wv : waves[c]) v += wv.amp * std::sin(wv.fy * y + wv.fx * x + wv.phase);
          val[c * hw + y * w + x] = v;
        }
        for (const auto& o : seq.objects) {
          if (!inside(o, t, y, x)) continue;
          lab[y * w + x] = static_cast<std::uint8_t>(o.cls);
          for (int c = 0; c < 3; ++c) val[c * hw + y * w + x] = o.color[c] / 255.0;
        }
      }
    }
    for (std::size_t i = 0; i < 3 * hw; ++i) {
      const double v = std::clamp(val[i] + (cfg.noise_std > 0 ? noise(rng) : 0.0), 0.0, 1.0);
      img[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    seq.frames.push_back(std::move(img));
    seq.labels.push_back(std::move(lab));
  }
  return seq;
}

std::set<int> classes_in(const Dataset& ds, std::span<const int> idx) {
  std::set<int> s;
  for (int i : idx)
    for (const auto& o : ds.sequences[i].objects) s.insert(o.cls);
  return s;
}

void write_pnm(const fs::path& p, const char* magic, int h, int w, int channels, const std::uint8_t* planar) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cannot write " + p.string());
  f << magic << "\n" << w << " " << h << "\n255\n";
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<char> buf(hw * channels);
  for (std::size_t i = 0; i < hw; ++i)
    for (int c = 0; c < channels; ++c) buf[i * channels + c] = static_cast<char>(planar[c * hw + i]);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw Error("write failed: " + p.string());
}

std::vector<std::uint8_t> read_pnm(const fs::path& p, const std::string& magic, int h, int w, int channels) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error("cannot read " + p.string());
  std::string m;
  int fw = 0, fh = 0, maxv = 0;
  f >> m >> fw >> fh >> maxv;
  f.get();
  if (m != magic || fw != w || fh != h || maxv != 255) throw Error("unexpected raster header in " + p.string());
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<char> buf(hw * channels);
  f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(f.gcount()) != buf.size()) throw Error("truncated raster " + p.string());
  std::vector<std::uint8_t> planar(hw * channels);
  for (std::size_t i = 0; i < hw; ++i)
    for (int c = 0; c < channels; ++c) planar[c * hw + i] = static_cast<std::uint8_t>(buf[i * channels + c]);
  return planar;
}

json config_to_json(const DatasetConfig& c) {
  json j{{"n_sequences", c.n_sequences}, {"seq_len", c.seq_len},           {"height", c.height},
         {"width", c.width},             {"num_classes", c.num_classes},   {"max_velocity", c.max_velocity},
         {"occlusion_prob", c.occlusion_prob}, {"noise_std", c.noise_std}, {"seed", c.seed},
         {"max_objects", c.max_objects}};
  j["fixed_velocity"] = c.fixed_velocity ? json(*c.fixed_velocity) : json(nullptr);
  return j;
}

DatasetConfig config_from_json(const json& j) {
  DatasetConfig c;
  c.n_sequences = j.at("n_sequences");
  c.seq_len = j.at("seq_len");
  c.height = j.at("height");
  c.width = j.at("width");
  c.num_classes = j.at("num_classes");
  c.max_velocity = j.at("max_velocity");
  c.occlusion_prob = j.at("occlusion_prob");
  c.noise_std = j.at("noise_std");
  c.seed = j.at("seed");
  c.max_objects = j.at("max_objects");
  if (!j.at("fixed_velocity").is_null()) c.fixed_velocity = j.at("fixed_velocity").get<std::array<int, 2>>();
  return c;
}

}  // namespace

void validate(const DatasetConfig& cfg) {
  if (cfg.n_sequences < 1) throw Error("dataset: n_sequences must be >= 1");
  if (cfg.seq_len < 2) throw Error("dataset: seq_len must be >= 2");
  if (cfg.height < 32 || cfg.width < 32 || cfg.height % 32 || cfg.width % 32) {
    throw Error("dataset: height and width must be positive multiples of 32");
  }
  if (cfg.num_classes < 2 || cfg.num_classes > 255) throw Error("dataset: num_classes must lie in [2,255]");
  if (cfg.max_velocity < 0) throw Error("dataset: max_velocity must be >= 0");
  if (cfg.occlusion_prob < 0 || cfg.occlusion_prob > 1) throw Error("dataset: occlusion_prob must lie in [0,1]");
  if (cfg.noise_std < 0) throw Error("dataset: noise_std must be >= 0");
  if (cfg.max_objects < 1) throw Error("dataset: max_objects must be >= 1");
}

std::array<double, 3> Dataset::channel_mean() const {
  std::array<double, 3> sum{};
  std::size_t count = 0;
  for (const auto& s : sequences) {
    for (const auto& f : s.frames) {
      const std::size_t hw = f.size() / 3;
      for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < hw; ++i) sum[c] += f[c * hw + i];
      count += hw;
    }
  }
  for (double& v : sum) v = count ? v / count / 255.0 : 0.0;
  return sum;
}

Dataset generate(const DatasetConfig& cfg) {
  validate(cfg);
  constexpr int kAttempts = 16;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    Dataset ds;
    ds.config = cfg;
    for (int i = 0; i < cfg.n_sequences; ++i) {
      const std::uint64_t s = splitmix64(cfg.seed ^ splitmix64(static_cast<std::uint64_t>(i) + 1) ^
                                         (static_cast<std::uint64_t>(attempt) << 48));
      ds.sequences.push_back(make_sequence(cfg, s));
    }
    std::vector<int> all(cfg.n_sequences);
    std::iota(all.begin(), all.end(), 0);
    if (static_cast<int>(classes_in(ds, all).size()) == cfg.num_classes - 1) return ds;
  }
  throw Error("generate: could not cover all classes in " + std::to_string(kAttempts) + " attempts");
}

Split split(const Dataset& ds, double train_frac, double meta_val_frac, std::uint64_t seed) {
  if (!(train_frac > 0 && train_frac < 1) || !(meta_val_frac > 0 && meta_val_frac < 1)) {
    throw Error("split: fractions must lie in (0,1)");
  }
  const int n = static_cast<int>(ds.sequences.size());
  const int n_train = static_cast<int>(std::lround(train_frac * n));
  const int n_meta_val = static_cast<int>(std::lround(meta_val_frac * n_train));
  if (n_train < 1 || n_train >= n || n_meta_val < 1 || n_meta_val >= n_train) {
    throw Error("split: a partition would be empty (" + std::to_string(n) + " sequences)");
  }
  const int want = ds.config.num_classes - 1;
  constexpr int kAttempts = 32;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    std::mt19937_64 rng(splitmix64(seed + attempt));
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Split s;
    s.train.assign(perm.begin(), perm.begin() + n_train);
    s.val.assign(perm.begin() + n_train, perm.end());
    if (static_cast<int>(classes_in(ds, s.train).size()) != want) continue;
    std::vector<int> tr = s.train;
    std::shuffle(tr.begin(), tr.end(), rng);
    s.meta_val.assign(tr.begin(), tr.begin() + n_meta_val);
    s.meta_train.assign(tr.begin() + n_meta_val, tr.end());
    for (auto* v : {&s.train, &s.val, &s.meta_train, &s.meta_val}) std::sort(v->begin(), v->end());
    return s;
  }
  throw Error("split: training partition misses a class after " + std::to_string(kAttempts) + " draws");
}

std::vector<Batch> batches(const Dataset& ds, std::span<const int> indices, int batch_size, const AugmentConfig& aug,
                           std::uint64_t seed) {
  if (batch_size < 1) throw Error("batches: batch_size must be >= 1");
  if (aug.crop < 1 || !(aug.scale_min > 0) || aug.scale_max < aug.scale_min) throw Error("batches: bad augmentation");
  const DatasetConfig& cfg = ds.config;
  const int h = cfg.height, w = cfg.width, crop = aug.crop, t_n = cfg.seq_len;
  const std::size_t hw = static_cast<std::size_t>(h) * w, cc = static_cast<std::size_t>(crop) * crop;
  const auto mean = ds.channel_mean();
  std::mt19937_64 rng(seed);
  std::vector<int> order(indices.begin(), indices.end());
  if (aug.shuffle) std::shuffle(order.begin(), order.end(), rng);

  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const int b_n = static_cast<int>(std::min<std::size_t>(batch_size, order.size() - start));
    Batch batch;
    for (int t = 0; t < t_n; ++t) {
      batch.frames.emplace_back(Shape{b_n, 3, crop, crop});
      batch.labels.emplace_back(static_cast<std::size_t>(b_n) * cc, kIgnoreLabel);
    }
    for (int b = 0; b < b_n; ++b) {
      const int id = order[start + b];
      const Sequence& seq = ds.sequences.at(id);
      batch.sequence_ids.push_back(id);
      const double s = std::uniform_real_distribution<double>(aug.scale_min, aug.scale_max)(rng);
      const int sh = std::max(1, static_cast<int>(std::lround(h * s)));
      const int sw = std::max(1, static_cast<int>(std::lround(w * s)));
      const int ph = std::max(sh, crop), pw = std::max(sw, crop);
      const int oy = std::uniform_int_distribution<int>(0, ph - crop)(rng);
      const int ox = std::uniform_int_distribution<int>(0, pw - crop)(rng);
      for (int t = 0; t < t_n; ++t) {
        const auto& img = seq.frames[t];
        const auto& lab = seq.labels[t];
        double* dst = batch.frames[t].data() + static_cast<std::size_t>(b) * 3 * cc;
        std::uint8_t* ldst = batch.labels[t].data() + static_cast<std::size_t>(b) * cc;
        for (int y = 0; y < crop; ++y) {
          for (int x = 0; x < crop; ++x) {
            const int sy = y + oy, sx = x + ox;  // coordinates in the scaled, padded canvas
            const std::size_t o = static_cast<std::size_t>(y) * crop + x;
            if (sy >= sh || sx >= sw) {
              for (int c = 0; c < 3; ++c) dst[c * cc + o] = mean[c];
              continue;
            }
            if (sh == h && sw == w) {
              for (int c = 0; c < 3; ++c) dst[c * cc + o] = img[c * hw + sy * w + sx] / 255.0;
              ldst[o] = lab[sy * w + sx];
              continue;
            }
            // Bilinear for images (align corners), nearest for labels.
            const double fy = sh > 1 ? sy * (h - 1.0) / (sh - 1.0) : 0.0;
            const double fx = sw > 1 ? sx * (w - 1.0) / (sw - 1.0) : 0.0;
            const int y0 = std::min(static_cast<int>(fy), h - 1), x0 = std::min(static_cast<int>(fx), w - 1);
            const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
            const double ay = fy - y0, ax = fx - x0;
            for (int c = 0; c < 3; ++c) {
              const std::uint8_t* p = img.data() + c * hw;
              dst[c * cc + o] = ((1 - ay) * ((1 - ax) * p[y0 * w + x0] + ax * p[y0 * w + x1]) +
                                 ay * ((1 - ax) * p[y1 * w + x0] + ax * p[y1 * w + x1])) /
                                255.0;
            }
            const int ny = std::min(h - 1, static_cast<int>(std::lround(fy)));
            const int nx = std::min(w - 1, static_cast<int>(std::lround(fx)));
            ldst[o] = lab[ny * w + nx];
          }
        }
      }
    }
    out.push_back(std::move(batch));
  }
  return out;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  const auto& cfg = ds.config;
  json manifest{{"format", "dcnas-synthetic"}, {"version", 1}, {"config", config_to_json(cfg)}};
  json seqs = json::array();
  char name[64];
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
    const Sequence& s = ds.sequences[i];
    std::snprintf(name, sizeof name, "seq_%04zu", i);
    const fs::path sd = dir / name;
    fs::create_directories(sd);
    for (std::size_t t = 0; t < s.frames.size(); ++t) {
      char f[32];
      std::snprintf(f, sizeof f, "frame_%02zu.ppm", t);
      write_pnm(sd / f, "P6", cfg.height, cfg.width, 3, s.frames[t].data());
      std::snprintf(f, sizeof f, "label_%02zu.pgm", t);
      write_pnm(sd / f, "P5", cfg.height, cfg.width, 1, s.labels[t].data());
    }
    json objs = json::array();
    for (const auto& o : s.objects) {
      objs.push_back({{"class", o.cls},
                      {"shape", static_cast<int>(o.kind)},
                      {"center", {o.cy, o.cx}},
                      {"half_extent", {o.hy, o.hx}},
                      {"velocity", {o.vx, o.vy}},
                      {"color", o.color}});
    }
    seqs.push_back({{"dir", name}, {"seed", s.seed}, {"objects", objs}});
  }
  manifest["sequences"] = seqs;
  std::ofstream f(dir / "manifest.json");
  f << manifest.dump(1) << "\n";
  if (!f) throw Error("cannot write " + (dir / "manifest.json").string());
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path mp = dir / "manifest.json";
  std::ifstream f(mp);
  if (!f) throw Error("dataset manifest not found: " + mp.string());
  json manifest;
  try {
    manifest = json::parse(f);
  } catch (const json::exception& e) {
    throw Error("bad dataset manifest " + mp.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "dcnas-synthetic" || manifest.value("version", 0) != 1) {
    throw Error("unsupported dataset manifest " + mp.string());
  }
  Dataset ds;
  ds.config = config_from_json(manifest.at("config"));
  validate(ds.config);
  const auto& cfg = ds.config;
  for (const auto& js : manifest.at("sequences")) {
    Sequence s;
    s.seed = js.at("seed");
    for (const auto& jo : js.at("objects")) {
      ObjectTrack o;
      o.cls = jo.at("class");
      o.kind = static_cast<ShapeKind>(jo.at("shape").get<int>());
      o.cy = jo.at("center")[0];
      o.cx = jo.at("center")[1];
      o.hy = jo.at("half_extent")[0];
      o.hx = jo.at("half_extent")[1];
      o.vx = jo.at("velocity")[0];
      o.vy = jo.at("velocity")[1];
      o.color = jo.at("color").get<std::array<std::uint8_t, 3>>();
      s.objects.push_back(o);
    }
    const fs::path sd = dir / js.at("dir").get<std::string>();
    for (int t = 0; t < cfg.seq_len; ++t) {
      char fn[32];
      std::snprintf(fn, sizeof fn, "frame_%02d.ppm", t);
      s.frames.push_back(read_pnm(sd / fn, "P6", cfg.height, cfg.width, 3));
      std::snprintf(fn, sizeof fn, "label_%02d.pgm", t);
      s.labels.push_back(read_pnm(sd / fn, "P5", cfg.height, cfg.width, 1));
    }
    ds.sequences.push_back(std::move(s));
  }
  if (static_cast<int>(ds.sequences.size()) != cfg.n_sequences) throw Error("dataset manifest sequence count mismatch");
  return ds;
}

}  // namespace dcnas
