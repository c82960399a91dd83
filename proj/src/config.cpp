#include "dcnas/config.hpp"

#include <fstream>
#include <set>

namespace dcnas {

namespace {

using nlohmann::json;

// Reads known keys of one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& dst) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      dst = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config: bad value for '" + path_ + "." + key + "': " + e.what());
    }
  }

  Section sub(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (seen_.count(it.key()) == 0) throw ConfigError("config: unknown key '" + path_ + "." + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json augment_json(const AugmentConfig& a) {
  return {{"crop", a.crop}, {"scale_min", a.scale_min}, {"scale_max", a.scale_max}, {"shuffle", a.shuffle}};
}

void read_augment(Section s, AugmentConfig& a) {
  s.get("crop", a.crop);
  s.get("scale_min", a.scale_min);
  s.get("scale_max", a.scale_max);
  s.get("shuffle", a.shuffle);
  s.finish();
}

}  // namespace

json to_json(const RunConfig& c) {
  json data = {{"n_sequences", c.data.n_sequences}, {"seq_len", c.data.seq_len},
               {"height", c.data.height},           {"width", c.data.width},
               {"num_classes", c.data.num_classes}, {"max_velocity", c.data.max_velocity},
               {"occlusion_prob", c.data.occlusion_prob}, {"noise_std", c.data.noise_std},
               {"seed", c.data.seed},               {"max_objects", c.data.max_objects}};
  data["fixed_velocity"] = c.data.fixed_velocity ? json(*c.data.fixed_velocity) : json(nullptr);
  return {
      {"data", data},
      {"split", {{"train_frac", c.train_frac}, {"meta_val_frac", c.meta_val_frac}, {"seed", c.split_seed}}},
      {"static_net",
       {{"num_classes", c.static_net.num_classes},
        {"dec_width", c.static_net.dec_width},
        {"widths", c.static_net.widths},
        {"seed", c.static_seed}}},
      {"pretrain",
       {{"epochs", c.pretrain.epochs},
        {"batch_size", c.pretrain.batch_size},
        {"encoder_lr", c.pretrain.encoder_lr},
        {"decoder_lr", c.pretrain.decoder_lr},
        {"momentum", c.pretrain.momentum},
        {"weight_decay", c.pretrain.weight_decay},
        {"aux_weight", c.pretrain.aux_weight},
        {"poly_power", c.pretrain.poly_power},
        {"augment", augment_json(c.pretrain.augment)},
        {"seed", c.pretrain.seed}}},
      {"search", to_json(c.search)},
      {"top_k", c.top_k},
      {"random_baselines", c.random_baselines},
      {"cell_train",
       {{"epochs", c.cell_train.epochs},
        {"batch_size", c.cell_train.batch_size},
        {"lr", c.cell_train.lr},
        {"seed", c.cell_train.seed}}},
      {"finetune",
       {{"epochs", c.finetune.epochs},
        {"batch_size", c.finetune.batch_size},
        {"cell_lr", c.finetune.cell_lr},
        {"static_lr", c.finetune.static_lr},
        {"momentum", c.finetune.momentum},
        {"augment", augment_json(c.finetune.augment)},
        {"seed", c.finetune.seed}}},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Section root(j, "config");
  {
    Section s = root.sub("data");
    s.get("n_sequences", c.data.n_sequences);
    s.get("seq_len", c.data.seq_len);
    s.get("height", c.data.height);
    s.get("width", c.data.width);
    s.get("num_classes", c.data.num_classes);
    s.get("max_velocity", c.data.max_velocity);
    s.get("occlusion_prob", c.data.occlusion_prob);
    s.get("noise_std", c.data.noise_std);
    s.get("seed", c.data.seed);
    s.get("max_objects", c.data.max_objects);
    if (const json* fv = s.raw("fixed_velocity"); fv && !fv->is_null()) {
      try {
        c.data.fixed_velocity = fv->get<std::array<int, 2>>();
      } catch (const json::exception& e) {
        throw ConfigError(std::string("config: bad value for 'config.data.fixed_velocity': ") + e.what());
      }
    }
    s.finish();
  }
  {
    Section s = root.sub("split");
    s.get("train_frac", c.train_frac);
    s.get("meta_val_frac", c.meta_val_frac);
    s.get("seed", c.split_seed);
    s.finish();
  }
  {
    Section s = root.sub("static_net");
    s.get("num_classes", c.static_net.num_classes);
    s.get("dec_width", c.static_net.dec_width);
    s.get("widths", c.static_net.widths);
    s.get("seed", c.static_seed);
    s.finish();
  }
  {
    Section s = root.sub("pretrain");
    s.get("epochs", c.pretrain.epochs);
    s.get("batch_size", c.pretrain.batch_size);
    s.get("encoder_lr", c.pretrain.encoder_lr);
    s.get("decoder_lr", c.pretrain.decoder_lr);
    s.get("momentum", c.pretrain.momentum);
    s.get("weight_decay", c.pretrain.weight_decay);
    s.get("aux_weight", c.pretrain.aux_weight);
    s.get("poly_power", c.pretrain.poly_power);
    read_augment(s.sub("augment"), c.pretrain.augment);
    s.get("seed", c.pretrain.seed);
    s.finish();
  }
  if (const json* sj = root.raw("search")) {
    try {
      c.search = search_config_from_json(*sj);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config: bad search section: ") + e.what());
    } catch (const Error& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
  root.get("top_k", c.top_k);
  root.get("random_baselines", c.random_baselines);
  {
    Section s = root.sub("cell_train");
    s.get("epochs", c.cell_train.epochs);
    s.get("batch_size", c.cell_train.batch_size);
    s.get("lr", c.cell_train.lr);
    s.get("seed", c.cell_train.seed);
    s.finish();
  }
  {
    Section s = root.sub("finetune");
    s.get("epochs", c.finetune.epochs);
    s.get("batch_size", c.finetune.batch_size);
    s.get("cell_lr", c.finetune.cell_lr);
    s.get("static_lr", c.finetune.static_lr);
    s.get("momentum", c.finetune.momentum);
    read_augment(s.sub("augment"), c.finetune.augment);
    s.get("seed", c.finetune.seed);
    s.finish();
  }
  root.finish();

  try {
    validate(c.data);
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!(c.train_frac > 0.0 && c.train_frac < 1.0) || !(c.meta_val_frac > 0.0 && c.meta_val_frac < 1.0)) {
    throw ConfigError("config: split fractions must lie in (0,1)");
  }
  if (c.static_net.num_classes != c.data.num_classes) {
    throw ConfigError("config: static_net.num_classes must equal data.num_classes");
  }
  if (c.pretrain.epochs < 0 || c.pretrain.batch_size < 1 || c.cell_train.epochs < 1 || c.cell_train.batch_size < 1 ||
      c.finetune.epochs < 0 || c.finetune.batch_size < 1) {
    throw ConfigError("config: epochs must be non-negative (cell_train positive) and batch sizes positive");
  }
  if (c.top_k < 1 || c.random_baselines < 0) throw ConfigError("config: top_k must be >= 1, random_baselines >= 0");
  for (const AugmentConfig* a : {&c.pretrain.augment, &c.finetune.augment}) {
    if (a->crop % 32 != 0 || a->crop < 32 || a->scale_min <= 0.0 || a->scale_max < a->scale_min) {
      throw ConfigError("config: augment crop must be a positive multiple of 32 and 0 < scale_min <= scale_max");
    }
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("config: cannot parse " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

void apply_seed(RunConfig& c, std::uint64_t seed) {
  c.data.seed = seed;
  c.split_seed = seed;
  c.static_seed = seed;
  c.pretrain.seed = seed;
  c.search.seed = seed;
  c.cell_train.seed = seed;
  c.finetune.seed = seed;
}

std::vector<int> moving_sequences(const Dataset& ds, std::span<const int> ids) {
  std::vector<int> out;
  for (int id : ids) {
    for (const auto& o : ds.sequences.at(id).objects) {
      if (o.vx != 0 || o.vy != 0) {
        out.push_back(id);
        break;
      }
    }
  }
  return out;
}

}  // namespace dcnas
