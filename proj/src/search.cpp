#include "dcnas/search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dcnas {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

const char* status_name(CandidateStatus s) {
  return s == CandidateStatus::Completed ? "completed" : "early_stopped";
}

nlohmann::json stats_json(const PpoTrainer::Stats& s) {
  return {{"mean_advantage", s.mean_advantage},   {"surrogate_first", s.surrogate_first},
          {"surrogate_last", s.surrogate_last},   {"baseline_before", s.baseline_before},
          {"baseline_after", s.baseline_after}};
}

void append_line(const std::filesystem::path& file, const nlohmann::json& j) {
  std::ofstream out(file, std::ios::app);
  if (!out) throw Error("cannot append to " + file.string());
  out << j.dump() << '\n';
}

// Trains one candidate; returns its record without timing fields.
SearchRecord train_candidate(const Genotype& g, int index, const SearchConfig& cfg, StaticNet& net,
                             const BundleCache& meta_train, const BundleCache& meta_val,
                             const std::function<bool(double)>& stop_at_half) {
  SearchRecord r;
  r.index = index;
  r.tokens = encode(g);
  r.seed = candidate_seed(cfg.seed, index);
  std::mt19937_64 init_rng(r.seed);
  Cell cell(g, cell_config_for(net, cfg.cell_width), init_rng);
  DynamicNet dyn(net, cell);
  CellTrainConfig tc = cfg.train;
  tc.seed = splitmix64(r.seed);
  CellTrainer trainer(dyn, meta_train, tc);
  trainer.train_epochs(static_cast<int>(std::ceil(tc.epochs * cfg.early_stop_fraction)));
  r.halfway_reward = trainer.evaluate(meta_val).reward;
  if (stop_at_half(r.halfway_reward)) {
    r.status = CandidateStatus::EarlyStopped;
    r.reward = r.halfway_reward;
  } else {
    trainer.train_epochs(tc.epochs);
    r.status = CandidateStatus::Completed;
    r.final_reward = trainer.evaluate(meta_val).reward;
    r.reward = *r.final_reward;
  }
  r.epochs_run = trainer.epochs_done();
  return r;
}

}  // namespace

void validate(const SearchConfig& cfg) {
  if (cfg.n_candidates < 1) throw Error("search: n_candidates must be >= 1");
  if (cfg.k < 1) throw Error("search: k must be >= 1");
  if (cfg.cell_width < 1) throw Error("search: cell_width must be >= 1");
  if (cfg.train.epochs < 1 || cfg.train.batch_size < 1) throw Error("search: train epochs and batch_size must be >= 1");
  if (!(cfg.early_stop_fraction > 0.0 && cfg.early_stop_fraction <= 1.0)) {
    throw Error("search: early_stop_fraction must be in (0,1]");
  }
  if (cfg.update_every < 1) throw Error("search: update_every must be >= 1");
  if (cfg.posthoc_samples < 0) throw Error("search: posthoc_samples must be >= 0");
}

void RunningMean::add(double x) {
  ++n_;
  mean_ += (x - mean_) / static_cast<double>(n_);
}

bool early_stop_decision(double halfway_reward, std::span<const double> history) {
  if (history.empty()) return false;
  const double mean = std::accumulate(history.begin(), history.end(), 0.0) / static_cast<double>(history.size());
  return halfway_reward < mean;
}

bool early_stop_decision(double halfway_reward, const RunningMean& history) {
  return history.count() > 0 && halfway_reward < history.mean();
}

nlohmann::json SearchRecord::to_json(bool with_wall_time) const {
  nlohmann::json j = {{"index", index},
                      {"tokens", tokens},
                      {"status", status_name(status)},
                      {"halfway_reward", halfway_reward},
                      {"reward", reward},
                      {"epochs_run", epochs_run},
                      {"seed", seed}};
  j["final_reward"] = final_reward ? nlohmann::json(*final_reward) : nlohmann::json(nullptr);
  if (with_wall_time) j["wall_time"] = wall_time;
  return j;
}

SearchRecord SearchRecord::from_json(const nlohmann::json& j) {
  SearchRecord r;
  r.index = j.at("index").get<int>();
  r.tokens = j.at("tokens").get<std::vector<int>>();
  const std::string st = j.at("status").get<std::string>();
  if (st == "completed") {
    r.status = CandidateStatus::Completed;
  } else if (st == "early_stopped") {
    r.status = CandidateStatus::EarlyStopped;
  } else {
    throw Error("run log: unknown status '" + st + "'");
  }
  r.halfway_reward = j.at("halfway_reward").get<double>();
  if (!j.at("final_reward").is_null()) r.final_reward = j.at("final_reward").get<double>();
  r.reward = j.at("reward").get<double>();
  r.epochs_run = j.at("epochs_run").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.wall_time = j.value("wall_time", 0.0);
  if (r.status == CandidateStatus::Completed && !r.final_reward) {
    throw Error("run log: completed record " + std::to_string(r.index) + " has no final reward");
  }
  return r;
}

std::string RunLog::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& r : records) {
    const std::string s = r.to_json(false).dump() + "\n";
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void RunLog::append_record(const SearchRecord& r, const std::filesystem::path& file) const {
  nlohmann::json j = r.to_json();
  j["type"] = "record";
  append_line(file, j);
}

RunLog load_run_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open run log " + path.string());
  RunLog log;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error("run log line " + std::to_string(lineno) + ": " + e.what());
    }
    const std::string type = j.value("type", "");
    if (type == "config") {
      log.config = j.at("config");
    } else if (type == "record") {
      log.records.push_back(SearchRecord::from_json(j));
    } else if (type == "posthoc") {
      log.posthoc.push_back(SearchRecord::from_json(j));
    } else if (type == "controller_update") {
      ControllerUpdate u;
      u.after_candidate = j.at("after_candidate").get<int>();
      u.batch = j.at("batch").get<int>();
      const auto& s = j.at("stats");
      u.stats = {s.at("mean_advantage").get<double>(), s.at("surrogate_first").get<double>(),
                 s.at("surrogate_last").get<double>(), s.at("baseline_before").get<double>(),
                 s.at("baseline_after").get<double>()};
      u.checkpoint = j.value("checkpoint", "");
      log.updates.push_back(u);
    } else {
      throw Error("run log line " + std::to_string(lineno) + ": unknown type '" + type + "'");
    }
  }
  return log;
}

nlohmann::json to_json(const SearchConfig& c) {
  nlohmann::json j = {
      {"n_candidates", c.n_candidates},
      {"k", c.k},
      {"cell_width", c.cell_width},
      {"train", {{"epochs", c.train.epochs}, {"batch_size", c.train.batch_size}, {"lr", c.train.lr}}},
      {"early_stop_fraction", c.early_stop_fraction},
      {"controller",
       {{"hidden", c.controller.hidden}, {"embed", c.controller.embed}, {"init_range", c.controller.init_range}}},
      {"ppo",
       {{"clip_eps", c.ppo.clip_eps},
        {"lr", c.ppo.lr},
        {"epochs_per_batch", c.ppo.epochs_per_batch},
        {"entropy_coef", c.ppo.entropy_coef},
        {"baseline_decay", c.ppo.baseline_decay}}},
      {"update_every", c.update_every},
      {"posthoc_samples", c.posthoc_samples},
      {"seed", c.seed}};
  j["early_stop_threshold"] = c.early_stop_threshold ? nlohmann::json(*c.early_stop_threshold) : nlohmann::json(nullptr);
  return j;
}

SearchConfig search_config_from_json(const nlohmann::json& j) {
  SearchConfig c;
  auto read = [](const nlohmann::json& obj, const char* key, auto& dst) {
    if (obj.contains(key)) dst = obj.at(key).get<std::decay_t<decltype(dst)>>();
  };
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const std::vector<std::string> known{"n_candidates",   "k",          "cell_width",
                                                "train",          "early_stop_fraction",
                                                "early_stop_threshold",      "controller",
                                                "ppo",            "update_every", "posthoc_samples",
                                                "seed"};
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw Error("search config: unknown key '" + it.key() + "'");
    }
  }
  read(j, "n_candidates", c.n_candidates);
  read(j, "k", c.k);
  read(j, "cell_width", c.cell_width);
  if (j.contains("train")) {
    const auto& t = j.at("train");
    read(t, "epochs", c.train.epochs);
    read(t, "batch_size", c.train.batch_size);
    read(t, "lr", c.train.lr);
  }
  read(j, "early_stop_fraction", c.early_stop_fraction);
  if (j.contains("early_stop_threshold") && !j.at("early_stop_threshold").is_null()) {
    c.early_stop_threshold = j.at("early_stop_threshold").get<double>();
  }
  if (j.contains("controller")) {
    const auto& t = j.at("controller");
    read(t, "hidden", c.controller.hidden);
    read(t, "embed", c.controller.embed);
    read(t, "init_range", c.controller.init_range);
  }
  if (j.contains("ppo")) {
    const auto& t = j.at("ppo");
    read(t, "clip_eps", c.ppo.clip_eps);
    read(t, "lr", c.ppo.lr);
    read(t, "epochs_per_batch", c.ppo.epochs_per_batch);
    read(t, "entropy_coef", c.ppo.entropy_coef);
    read(t, "baseline_decay", c.ppo.baseline_decay);
  }
  read(j, "update_every", c.update_every);
  read(j, "posthoc_samples", c.posthoc_samples);
  read(j, "seed", c.seed);
  validate(c);
  return c;
}

std::uint64_t candidate_seed(std::uint64_t search_seed, int index) {
  return splitmix64(splitmix64(search_seed) ^ static_cast<std::uint64_t>(index));
}

RunLog run_search(const SearchConfig& cfg, StaticNet& net, const BundleCache& meta_train,
                  const BundleCache& meta_val, const std::optional<std::filesystem::path>& out_dir,
                  const RecordCallback& on_record) {
  validate(cfg);
  if (meta_train.static_checksum != net.checksum() || meta_val.static_checksum != net.checksum()) {
    throw Error("search: cached static outputs were computed by a different static net");
  }
  ControllerConfig cc = cfg.controller;
  cc.k = cfg.k;
  Controller ctrl(cc, splitmix64(cfg.seed ^ 0xc0ffeeULL));
  PpoTrainer ppo(ctrl, cfg.ppo);
  std::mt19937_64 sample_rng(splitmix64(cfg.seed ^ 0x5a5a5aULL));

  RunLog log;
  log.config = to_json(cfg);
  std::optional<std::filesystem::path> file;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    file = *out_dir / "runlog.jsonl";
    std::filesystem::remove(*file);
    append_line(*file, {{"type", "config"}, {"config", log.config}});
  }

  RunningMean halfway_history;
  std::vector<SampleTrace> pending;
  auto flush = [&](int last_index) {
    if (pending.empty()) return;
    ControllerUpdate u;
    u.after_candidate = last_index;
    u.batch = static_cast<int>(pending.size());
    u.stats = ppo.update(pending);
    pending.clear();
    if (out_dir) {
      const auto ck = *out_dir / ("controller_" + std::to_string(log.updates.size()) + ".ckp");
      ppo.save(ck);
      u.checkpoint = ck.filename().string();
      append_line(*file, {{"type", "controller_update"},
                          {"after_candidate", u.after_candidate},
                          {"batch", u.batch},
                          {"stats", stats_json(u.stats)},
                          {"checkpoint", u.checkpoint}});
    }
    log.updates.push_back(u);
  };

  for (int i = 0; i < cfg.n_candidates; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    SampleTrace trace = ctrl.sample(sample_rng);
    const Genotype g = decode(trace.tokens, cfg.k);
    SearchRecord r = train_candidate(g, i, cfg, net, meta_train, meta_val, [&](double halfway) {
      return cfg.early_stop_threshold ? halfway < *cfg.early_stop_threshold
                                      : early_stop_decision(halfway, halfway_history);
    });
    halfway_history.add(r.halfway_reward);
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.records.push_back(r);
    if (file) log.append_record(r, *file);
    if (on_record) on_record(r);
    trace.reward = r.reward;
    pending.push_back(std::move(trace));
    if (static_cast<int>(pending.size()) == cfg.update_every) flush(i);
  }
  flush(cfg.n_candidates - 1);

  for (int j = 0; j < cfg.posthoc_samples; ++j) {
    const auto t0 = std::chrono::steady_clock::now();
    SampleTrace trace = ctrl.sample(sample_rng);
    SearchRecord r = train_candidate(decode(trace.tokens, cfg.k), cfg.n_candidates + j, cfg, net, meta_train,
                                     meta_val, [](double) { return false; });
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.posthoc.push_back(r);
    if (file) {
      nlohmann::json jr = r.to_json();
      jr["type"] = "posthoc";
      append_line(*file, jr);
    }
    if (on_record) on_record(r);
  }
  return log;
}

std::vector<double> train_genotypes(const std::vector<Genotype>& genotypes, const SearchConfig& cfg, StaticNet& net,
                                    const BundleCache& meta_train, const BundleCache& meta_val) {
  std::vector<double> out;
  for (std::size_t i = 0; i < genotypes.size(); ++i) {
    SearchRecord r = train_candidate(genotypes[i], static_cast<int>(i), cfg, net, meta_train, meta_val,
                                     [](double) { return false; });
    out.push_back(*r.final_reward);
  }
  return out;
}

std::vector<int> select_top_k(std::span<const SearchRecord> records, int k) {
  if (k < 1) throw Error("select_top_k: k must be >= 1");
  std::vector<const SearchRecord*> done;
  for (const auto& r : records)
    if (r.status == CandidateStatus::Completed) done.push_back(&r);
  if (static_cast<int>(done.size()) < k) {
    throw Error("select_top_k: only " + std::to_string(done.size()) + " completed records, need " +
                std::to_string(k));
  }
  std::stable_sort(done.begin(), done.end(), [](const SearchRecord* a, const SearchRecord* b) {
    if (*a->final_reward != *b->final_reward) return *a->final_reward > *b->final_reward;
    return a->index < b->index;
  });
  std::vector<int> out;
  for (int i = 0; i < k; ++i) out.push_back(done[i]->index);
  return out;
}

SearchReport make_report(const RunLog& log, int moving_window, int segment) {
  if (log.records.empty()) throw Error("report: empty run log");
  if (moving_window < 1 || segment < 1) throw Error("report: window and segment must be >= 1");
  SearchReport rep;
  for (const auto& r : log.records) rep.rewards.push_back(r.reward);
  for (std::size_t i = 0; i < rep.rewards.size(); ++i) {
    const std::size_t lo = i + 1 >= static_cast<std::size_t>(moving_window) ? i + 1 - moving_window : 0;
    double s = 0.0;
    for (std::size_t j = lo; j <= i; ++j) s += rep.rewards[j];
    rep.moving_average.push_back(s / static_cast<double>(i + 1 - lo));
  }

  int k = 0;
  for (const auto& r : log.records) k = std::max(k, static_cast<int>(r.tokens.size()) / 5);
  rep.ops.category = "ops";
  rep.aggregations.category = "aggregations";
  rep.inputs.category = "inputs";
  for (int i = 0; i < kNumOps; ++i) rep.ops.columns.emplace_back(op_name(op_from_int(i)));
  for (int i = 0; i < kNumAggs; ++i) rep.aggregations.columns.emplace_back(agg_name(agg_from_int(i)));
  for (const auto& s : input_slots()) rep.inputs.columns.emplace_back(s.name);
  for (int i = 0; i + 1 < k; ++i) rep.inputs.columns.push_back("step" + std::to_string(i));

  auto add_row = [&](std::size_t lo, std::size_t hi, const std::string& label) {
    std::vector<double> ops(rep.ops.columns.size(), 0.0), aggs(rep.aggregations.columns.size(), 0.0),
        ins(rep.inputs.columns.size(), 0.0);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& t = log.records[i].tokens;
      for (std::size_t p = 0; p < t.size(); ++p) {
        switch (p % 5) {
          case 0:
          case 1: ins.at(t[p]) += 1.0; break;
          case 2:
          case 3: ops.at(t[p]) += 1.0; break;
          default: aggs.at(t[p]) += 1.0; break;
        }
      }
    }
    for (auto* v : {&ops, &aggs, &ins}) {
      const double total = std::accumulate(v->begin(), v->end(), 0.0);
      for (auto& x : *v) x /= total;
    }
    rep.ops.row_labels.push_back(label);
    rep.ops.rows.push_back(ops);
    rep.aggregations.row_labels.push_back(label);
    rep.aggregations.rows.push_back(aggs);
    rep.inputs.row_labels.push_back(label);
    rep.inputs.rows.push_back(ins);
  };
  const std::size_t n = log.records.size();
  for (std::size_t lo = 0; lo < n; lo += segment) {
    const std::size_t hi = std::min(n, lo + segment);
    add_row(lo, hi, std::to_string(lo) + "-" + std::to_string(hi - 1));
  }
  add_row(0, n, "all");
  return rep;
}

void write_report(const SearchReport& rep, const RunLog& log, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream f(dir / name);
    if (!f) throw Error("cannot write " + (dir / name).string());
    f.precision(17);
    return f;
  };
  {
    auto f = open("rewards.csv");
    f << "index,status,halfway_reward,final_reward,reward,moving_average\n";
    for (std::size_t i = 0; i < log.records.size(); ++i) {
      const auto& r = log.records[i];
      f << r.index << ',' << status_name(r.status) << ',' << r.halfway_reward << ',';
      if (r.final_reward) f << *r.final_reward;
      f << ',' << r.reward << ',' << rep.moving_average[i] << '\n';
    }
  }
  for (const ProportionTable* t : {&rep.ops, &rep.aggregations, &rep.inputs}) {
    auto f = open("proportions_" + t->category + ".csv");
    f << "candidates";
    for (const auto& c : t->columns) f << ',' << c;
    f << '\n';
    for (std::size_t i = 0; i < t->rows.size(); ++i) {
      f << t->row_labels[i];
      for (double v : t->rows[i]) f << ',' << v;
      f << '\n';
    }
  }
  const std::size_t n = rep.rewards.size(), third = n / 3;
  nlohmann::json s = {{"candidates", n}, {"digest", log.digest()}, {"controller_updates", log.updates.size()}};
  long stopped = 0;
  for (const auto& r : log.records) stopped += r.status == CandidateStatus::EarlyStopped;
  s["early_stopped"] = stopped;
  if (third > 0) {
    s["first_third_mean"] = std::accumulate(rep.rewards.begin(), rep.rewards.begin() + third, 0.0) / third;
    s["last_third_mean"] = std::accumulate(rep.rewards.end() - third, rep.rewards.end(), 0.0) / third;
  }
  try {
    std::vector<int> best = select_top_k(log.records, 1);
    s["best_index"] = best[0];
    s["best_reward"] = *log.records[best[0]].final_reward;
    s["best_genotype"] = to_text(decode(log.records[best[0]].tokens, static_cast<int>(log.records[best[0]].tokens.size() / 5)));
  } catch (const Error&) {
  }
  auto f = open("summary.json");
  f << s.dump(2) << '\n';
}

}  // namespace dcnas
