// Command-line front end: data generation, static pretraining, cell search,
// cell training, fine-tuning, evaluation, genotype decoding and reporting.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dcnas/checkpoint.hpp"
#include "dcnas/config.hpp"

namespace fs = std::filesystem;
using namespace dcnas;
using nlohmann::json;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "run";
};

RunConfig effective_config(const Globals& g) {
  RunConfig c = g.config_path.empty() ? RunConfig{} : load_run_config(g.config_path);
  if (g.seed) apply_seed(c, *g.seed);
  return c;
}

void write_json(const fs::path& p, const json& j) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) throw Error("cannot write " + p.string());
  f << j.dump(2) << '\n';
}

void require_exists(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p)) throw MissingArtifact(p.string() + " not found (" + hint + ")");
}

Dataset load_data(const fs::path& out) {
  require_exists(out / "data" / "manifest.json", "run gen-data first");
  return load_dataset(out / "data");
}

StaticNet load_static(const RunConfig& c, const fs::path& path) {
  require_exists(path, "run pretrain-static first");
  StaticNet net(c.static_net, c.static_seed);
  net.load(path);
  return net;
}

Split make_split(const RunConfig& c, const Dataset& ds) {
  return split(ds, c.train_frac, c.meta_val_frac, c.split_seed);
}

json report_json(const MetricsReport& r) { return json::parse(r.to_json()); }

std::string cell_tag(const Genotype& g) {
  std::string s = "cell";
  for (int t : encode(g)) s += "_" + std::to_string(t);
  return s;
}

Genotype genotype_arg(const std::vector<std::string>& parts) {
  std::string text;
  for (const auto& p : parts) text += p + " ";
  try {
    return parse_genotype(text);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_gen_data(const Globals& g) {
  RunConfig c = effective_config(g);
  const fs::path out = g.out_dir;
  Dataset ds = generate(c.data);
  save_dataset(ds, out / "data");
  write_json(out / "config.json", to_json(c));
  Split s = make_split(c, ds);
  std::cout << json{{"sequences", ds.sequences.size()},
                    {"train", s.train.size()},
                    {"val", s.val.size()},
                    {"meta_train", s.meta_train.size()},
                    {"meta_val", s.meta_val.size()},
                    {"path", (out / "data").string()}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_pretrain(const Globals& g) {
  RunConfig c = effective_config(g);
  const fs::path out = g.out_dir;
  Dataset ds = load_data(out);
  Split s = make_split(c, ds);
  StaticNet net(c.static_net, c.static_seed);
  const auto t0 = std::chrono::steady_clock::now();
  PretrainResult r = pretrain_static(net, ds, s.train, c.pretrain);
  net.save(out / "static.ckp");
  json j = {{"steps", r.steps},
            {"first_loss", r.step_losses.empty() ? 0.0 : r.step_losses.front()},
            {"last_loss", r.step_losses.empty() ? 0.0 : r.step_losses.back()},
            {"seconds", seconds_since(t0)},
            {"val_static", report_json(evaluate_static(net, ds, s.val))},
            {"val_majority", report_json(evaluate_majority(ds, s.train, s.val))},
            {"val_copy_forward", report_json(evaluate_copy_forward(net, ds, s.val))},
            {"checksum", net.checksum()}};
  write_json(out / "static_metrics.json", j);
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_search(const Globals& g, int posthoc, bool quiet) {
  RunConfig c = effective_config(g);
  if (posthoc >= 0) c.search.posthoc_samples = posthoc;
  const fs::path out = g.out_dir;
  Dataset ds = load_data(out);
  StaticNet net = load_static(c, out / "static.ckp");
  Split s = make_split(c, ds);
  BundleStore store;
  const BundleCache& mt = store.get(net, ds, s.meta_train, "meta_train");
  const BundleCache& mv = store.get(net, ds, s.meta_val, "meta_val");
  const auto t0 = std::chrono::steady_clock::now();
  RunLog log = run_search(c.search, net, mt, mv, out / "search", [&](const SearchRecord& r) {
    if (quiet) return;
    std::printf("candidate %3d  %-34s %-13s halfway %.4f reward %.4f  %.1fs\n", r.index,
                to_text(decode(r.tokens, c.search.k)).c_str(),
                r.status == CandidateStatus::Completed ? "completed" : "early_stopped", r.halfway_reward, r.reward,
                r.wall_time);
    std::fflush(stdout);
  });
  const double search_seconds = seconds_since(t0);
  SearchReport rep = make_report(log);
  write_report(rep, log, out / "search" / "report");

  json summary = {{"digest", log.digest()}, {"search_seconds", search_seconds}, {"candidates", log.records.size()}};
  const int k = std::min<int>(c.top_k, static_cast<int>(std::count_if(log.records.begin(), log.records.end(), [](const auto& r) {
                                return r.status == CandidateStatus::Completed;
                              })));
  json top = json::array();
  for (int idx : k > 0 ? select_top_k(log.records, k) : std::vector<int>{}) {
    top.push_back({{"index", idx},
                   {"genotype", to_text(decode(log.records[idx].tokens, c.search.k))},
                   {"final_reward", *log.records[idx].final_reward}});
  }
  summary["top"] = top;
  if (c.random_baselines > 0) {
    std::mt19937_64 rng(candidate_seed(c.search.seed, -1));
    std::vector<Genotype> gs;
    for (int i = 0; i < c.random_baselines; ++i) gs.push_back(random_genotype(c.search.k, rng));
    std::vector<double> rewards = train_genotypes(gs, c.search, net, mt, mv);
    json rb = json::array();
    for (std::size_t i = 0; i < gs.size(); ++i) rb.push_back({{"genotype", to_text(gs[i])}, {"reward", rewards[i]}});
    std::sort(rewards.begin(), rewards.end());
    summary["random_baseline"] = rb;
    summary["random_median"] = rewards[rewards.size() / 2];
  }
  write_json(out / "search" / "summary.json", summary);
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_train_cell(const Globals& g, const std::vector<std::string>& tokens) {
  RunConfig c = effective_config(g);
  const Genotype geno = genotype_arg(tokens);
  const fs::path out = g.out_dir;
  Dataset ds = load_data(out);
  StaticNet net = load_static(c, out / "static.ckp");
  Split s = make_split(c, ds);
  BundleCache train = build_bundle_cache(net, ds, s.train, "train");
  BundleCache val = build_bundle_cache(net, ds, s.val, "val");
  std::mt19937_64 rng(c.cell_train.seed);
  Cell cell(geno, cell_config_for(net, c.search.cell_width), rng);
  DynamicNet dyn(net, cell);
  CellTrainResult r = train_cell(dyn, train, val, c.cell_train);
  const fs::path ck = out / "cells" / (cell_tag(geno) + ".ckp");
  fs::create_directories(ck.parent_path());
  save_cell(dyn, ck);
  json j = {{"genotype", to_text(geno)},
            {"epochs", r.epochs_run},
            {"val", report_json(r.report)},
            {"val_copy_forward", report_json(evaluate_copy_forward(net, ds, s.val))},
            {"checkpoint", ck.string()}};
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_finetune(const Globals& g, const std::vector<std::string>& tokens) {
  RunConfig c = effective_config(g);
  const Genotype geno = genotype_arg(tokens);
  const fs::path out = g.out_dir;
  Dataset ds = load_data(out);
  StaticNet net = load_static(c, out / "static.ckp");
  const fs::path cell_ck = out / "cells" / (cell_tag(geno) + ".ckp");
  require_exists(cell_ck, "run train-cell with this genotype first");
  CellHeader h = read_cell_header(cell_ck);
  std::mt19937_64 rng(0);
  Cell cell(geno, h.config, rng);
  DynamicNet dyn(net, cell);
  load_cell(dyn, cell_ck);
  Split s = make_split(c, ds);
  const std::vector<int> moving = moving_sequences(ds, s.val);
  if (moving.empty()) throw Error("no validation sequence contains motion");

  const double copy = evaluate_copy_forward(net, ds, moving).reward;
  const double before = evaluate_dynamic(dyn, ds, moving).reward;
  FinetuneResult r = finetune_end_to_end(dyn, ds, s.train, c.finetune);
  const double after = evaluate_dynamic(dyn, ds, moving).reward;
  const fs::path dir = out / "finetuned" / cell_tag(geno);
  fs::create_directories(dir);
  net.save(dir / "static.ckp");
  save_cell(dyn, dir / "cell.ckp");
  json j = {{"genotype", to_text(geno)},
            {"moving_val_sequences", moving.size()},
            {"copy_forward_reward", copy},
            {"before_reward", before},
            {"after_reward", after},
            {"margin_over_copy_forward", after - copy},
            {"epoch_losses", r.epoch_losses}};
  write_json(dir / "metrics.json", j);
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_eval(const Globals& g, const std::string& path, const std::string& static_path) {
  RunConfig c = effective_config(g);
  require_exists(path, "checkpoint to evaluate");
  const fs::path out = g.out_dir;
  Dataset ds = load_data(out);
  Split s = make_split(c, ds);
  Checkpoint ck = Checkpoint::load(path);
  const std::string kind = ck.strings.count("kind") ? ck.string("kind") : "";
  json j = {{"checkpoint", path}, {"kind", kind}};
  if (kind == "static") {
    StaticNet net = load_static(c, path);
    j["val_static"] = report_json(evaluate_static(net, ds, s.val));
    j["val_copy_forward"] = report_json(evaluate_copy_forward(net, ds, s.val));
  } else if (kind == "cell") {
    StaticNet net = load_static(c, static_path.empty() ? out / "static.ckp" : fs::path(static_path));
    CellHeader h = read_cell_header(path);
    std::mt19937_64 rng(0);
    Cell cell(h.genotype, h.config, rng);
    DynamicNet dyn(net, cell);
    load_cell(dyn, path);
    const std::vector<int> moving = moving_sequences(ds, s.val);
    j["genotype"] = to_text(h.genotype);
    j["val_dynamic"] = report_json(evaluate_dynamic(dyn, ds, s.val));
    j["val_copy_forward"] = report_json(evaluate_copy_forward(net, ds, s.val));
    if (!moving.empty()) {
      j["moving_val_dynamic"] = report_json(evaluate_dynamic(dyn, ds, moving));
      j["moving_val_copy_forward"] = report_json(evaluate_copy_forward(net, ds, moving));
    }
  } else {
    throw Error("eval: unsupported checkpoint kind '" + kind + "'");
  }
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_decode(const Globals& g, const std::vector<std::string>& tokens, bool dot_only) {
  RunConfig c = effective_config(g);
  const Genotype geno = genotype_arg(tokens);
  if (dot_only) {
    std::cout << emit_dot(geno);
    return 0;
  }
  const CellGraph graph = build_graph(geno);
  StaticNet shape_only(c.static_net, 0);
  const CellConfig cc = cell_config_for(shape_only, c.search.cell_width);
  std::cout << "genotype: " << to_text(geno) << "\n";
  std::cout << "steps: " << geno.k() << "\n";
  const auto& slots = input_slots();
  auto node = [&](int id) {
    return id < kNumInputSlots ? std::string(slots[id].name) : "step" + std::to_string(id - kNumInputSlots);
  };
  for (int i = 0; i < geno.k(); ++i) {
    const Step& st = geno.steps[i];
    std::cout << "  step" << i << " = " << agg_name(st.agg) << "(" << op_name(st.op1) << "(" << node(st.in1) << "), "
              << op_name(st.op2) << "(" << node(st.in2) << "))\n";
  }
  std::cout << "output: concat(";
  for (std::size_t i = 0; i < graph.output_set.size(); ++i) std::cout << (i ? ", " : "") << node(graph.output_set[i]);
  std::cout << ")\n";
  std::cout << "params: " << cell_param_count(geno, cc) << " (cell width " << cc.cell_width << ", dec width "
            << cc.dec_width << ")\n";
  std::cout << "search space size for K=" << geno.k() << ": " << space_size(geno.k()) << "\n\n";
  std::cout << emit_dot(geno);
  return 0;
}

int cmd_report(const Globals& g, const std::string& path, int window, int segment) {
  require_exists(path, "run log written by search");
  RunLog log = load_run_log(path);
  const fs::path dir = fs::path(g.out_dir) / "report";
  SearchReport rep = make_report(log, window, segment);
  write_report(rep, log, dir);
  std::ifstream in(dir / "summary.json");
  std::cout << in.rdbuf();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic-cell architecture search on synthetic video segmentation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config_path, "JSON run configuration");
  auto* seed_opt = app.add_option("--seed", seed, "Reseed every stage");
  app.add_option("--out-dir", g.out_dir, "Artifact directory")->capture_default_str();

  std::vector<std::string> tokens;
  std::string path, static_path;
  int posthoc = -1, window = 10, segment = 10;
  bool quiet = false, dot_only = false;

  auto* gen = app.add_subcommand("gen-data", "Generate and save the synthetic dataset");
  auto* pre = app.add_subcommand("pretrain-static", "Pretrain the per-frame network");
  auto* search = app.add_subcommand("search", "Controller-driven cell search");
  search->add_option("--posthoc", posthoc, "Cells sampled from the trained controller after the search");
  search->add_flag("--quiet", quiet, "No per-candidate lines");
  auto* tc = app.add_subcommand("train-cell", "Train one cell on the train split");
  tc->add_option("genotype", tokens, "Tokens, comma or space separated")->required();
  auto* ft = app.add_subcommand("finetune", "Fine-tune a trained cell end to end");
  ft->add_option("genotype", tokens, "Tokens, comma or space separated")->required();
  auto* ev = app.add_subcommand("eval", "Evaluate a static or cell checkpoint");
  ev->add_option("checkpoint", path)->required();
  ev->add_option("--static", static_path, "Static checkpoint for cell evaluation");
  auto* dec = app.add_subcommand("decode", "Print the DAG, parameter count and DOT of a genotype");
  dec->add_option("tokens", tokens, "Tokens, comma or space separated")->required();
  dec->add_flag("--dot", dot_only, "Only the DOT graph");
  auto* rep = app.add_subcommand("report", "Reward curve and sampling proportions of a run log");
  rep->add_option("runlog", path)->required();
  rep->add_option("--window", window, "Moving-average window")->capture_default_str();
  rep->add_option("--segment", segment, "Candidates per proportion row")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (seed_opt->count() > 0) g.seed = seed;

  try {
    if (gen->parsed()) return cmd_gen_data(g);
    if (pre->parsed()) return cmd_pretrain(g);
    if (search->parsed()) return cmd_search(g, posthoc, quiet);
    if (tc->parsed()) return cmd_train_cell(g, tokens);
    if (ft->parsed()) return cmd_finetune(g, tokens);
    if (ev->parsed()) return cmd_eval(g, path, static_path);
    if (dec->parsed()) return cmd_decode(g, tokens, dot_only);
    if (rep->parsed()) return cmd_report(g, path, window, segment);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
