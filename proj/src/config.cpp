#include "petnas/config.hpp"

#include <fstream>

#include "petnas/errors.hpp"

namespace petnas {

namespace {

using nlohmann::json;

const json* find(const json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

int get_int(const json& j, const char* key, int fallback, const std::string& scope) {
  const json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_number_integer())
    throw ConfigError(scope + "." + key + " must be an integer");
  return v->get<int>();
}

uint64_t get_u64(const json& j, const char* key, uint64_t fallback, const std::string& scope) {
  const json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_number_unsigned() && !v->is_number_integer())
    throw ConfigError(scope + "." + key + " must be an integer");
  return v->get<uint64_t>();
}

double get_double(const json& j, const char* key, double fallback, const std::string& scope) {
  const json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_number()) throw ConfigError(scope + "." + key + " must be a number");
  return v->get<double>();
}

bool get_bool(const json& j, const char* key, bool fallback, const std::string& scope) {
  const json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_boolean()) throw ConfigError(scope + "." + key + " must be a boolean");
  return v->get<bool>();
}

std::string get_string(const json& j, const char* key, const std::string& fallback,
                       const std::string& scope) {
  const json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_string()) throw ConfigError(scope + "." + key + " must be a string");
  return v->get<std::string>();
}

// "all" expands to every eligible per-layer site.
std::vector<SiteName> parse_sites(const json& j, const char* key,
                                  const std::vector<SiteName>& fallback, bool matrix_only,
                                  const std::string& scope) {
  const json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_array()) throw ConfigError(scope + "." + key + " must be an array of site names");
  std::vector<SiteName> sites;
  for (const auto& item : *v) {
    if (!item.is_string()) throw ConfigError(scope + "." + key + " entries must be strings");
    const std::string s = item.get<std::string>();
    if (s == "all") {
      for (SiteName name : kLayerSites) {
        const bool is_ln = name == SiteName::layernorm_attention ||
                           name == SiteName::layernorm_ffn;
        if (matrix_only && is_ln) continue;
        sites.push_back(name);
      }
      continue;
    }
    sites.push_back(site_from_string(s));
  }
  return sites;
}

json sites_to_json(const std::vector<SiteName>& sites) {
  json arr = json::array();
  for (SiteName s : sites) arr.push_back(to_string(s));
  return arr;
}

}  // namespace

TrainSettings RunConfig::train_settings(uint64_t shuffle_seed) const {
  TrainSettings s;
  s.epochs = epochs;
  s.batch_size = batch_size;
  s.peak_lr = peak_lr;
  s.warmup_fraction = warmup_fraction;
  s.adam = adam;
  s.shuffle_seed = shuffle_seed;
  return s;
}

void RunConfig::validate() const {
  model.shape.validate();
  if (budget < 0) throw ConfigError("budget must be >= 0, got " + std::to_string(budget));
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0))
    throw ConfigError("train.warmup_fraction must lie in (0,1)");
  if (peak_lr <= 0.0) throw ConfigError("train.peak_lr must be positive");
  if (run_seeds.empty()) throw ConfigError("seeds must list at least one run seed");
  if (model.pretrain_steps < 0) throw ConfigError("model.pretrain_steps must be >= 0");
  if (!space.bias_enabled && !space.lora_enabled)
    throw ConfigError("search_space enables neither bias nor lora updates");
}

RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  RunConfig cfg;

  if (const json* m = find(j, "model")) {
    cfg.model.shape.layers = get_int(*m, "layers", cfg.model.shape.layers, "model");
    cfg.model.shape.hidden_dim = get_int(*m, "hidden_dim", cfg.model.shape.hidden_dim, "model");
    cfg.model.shape.heads = get_int(*m, "heads", cfg.model.shape.heads, "model");
    cfg.model.shape.ffn_dim = get_int(*m, "ffn_dim", cfg.model.shape.ffn_dim, "model");
    cfg.model.shape.vocab_size = get_int(*m, "vocab_size", cfg.model.shape.vocab_size, "model");
    cfg.model.shape.max_seq_len =
        get_int(*m, "max_seq_len", cfg.model.shape.max_seq_len, "model");
    cfg.model.shape.num_classes =
        get_int(*m, "num_classes", cfg.model.shape.num_classes, "model");
    cfg.model.seed = get_u64(*m, "seed", cfg.model.seed, "model");
    cfg.model.checkpoint = get_string(*m, "checkpoint", cfg.model.checkpoint, "model");
    cfg.model.pretrain_steps = get_int(*m, "pretrain_steps", cfg.model.pretrain_steps, "model");
    cfg.model.pretrain_lr = get_double(*m, "pretrain_lr", cfg.model.pretrain_lr, "model");
  }

  if (const json* t = find(j, "task")) {
    cfg.task.kind = task_kind_from_string(get_string(*t, "kind", "presence", "task"));
    cfg.task.train_size = get_int(*t, "train_size", cfg.task.train_size, "task");
    cfg.task.val_size = get_int(*t, "val_size", cfg.task.val_size, "task");
    cfg.task.seed = get_u64(*t, "seed", cfg.task.seed, "task");
    cfg.task.marker = get_int(*t, "marker", cfg.task.marker, "task");
    cfg.task.marker_a = get_int(*t, "marker_a", cfg.task.marker_a, "task");
    cfg.task.marker_b = get_int(*t, "marker_b", cfg.task.marker_b, "task");
    cfg.task.train_path = get_string(*t, "train_path", cfg.task.train_path, "task");
    cfg.task.val_path = get_string(*t, "val_path", cfg.task.val_path, "task");
  }

  if (const json* s = find(j, "search_space")) {
    if (const json* b = find(*s, "bias")) {
      cfg.space.bias_enabled = get_bool(*b, "enabled", cfg.space.bias_enabled,
                                        "search_space.bias");
      cfg.space.bias_structured = get_bool(*b, "structured", cfg.space.bias_structured,
                                           "search_space.bias");
      cfg.space.bias_sites =
          parse_sites(*b, "sites", cfg.space.bias_sites, false, "search_space.bias");
    }
    if (const json* l = find(*s, "lora")) {
      cfg.space.lora_enabled = get_bool(*l, "enabled", cfg.space.lora_enabled,
                                        "search_space.lora");
      cfg.space.lora_structured = get_bool(*l, "structured", cfg.space.lora_structured,
                                           "search_space.lora");
      cfg.space.lora_rank = get_int(*l, "rank", cfg.space.lora_rank, "search_space.lora");
      cfg.space.lora_sites =
          parse_sites(*l, "sites", cfg.space.lora_sites, true, "search_space.lora");
    }
  }

  cfg.budget = get_int(j, "budget", cfg.budget, "config");
  cfg.criterion = criterion_mode_from_string(
      get_string(j, "criterion", to_string(cfg.criterion), "config"));
  cfg.lora_init =
      lora_init_from_string(get_string(j, "lora_init", to_string(cfg.lora_init), "config"));
  cfg.structured_lora_include_v = get_bool(j, "structured_lora_include_v",
                                           cfg.structured_lora_include_v, "config");

  if (const json* t = find(j, "train")) {
    cfg.epochs = get_int(*t, "epochs", cfg.epochs, "train");
    cfg.batch_size = get_int(*t, "batch_size", cfg.batch_size, "train");
    cfg.peak_lr = get_double(*t, "peak_lr", cfg.peak_lr, "train");
    cfg.warmup_fraction = get_double(*t, "warmup_fraction", cfg.warmup_fraction, "train");
    cfg.adam.beta1 = get_double(*t, "beta1", cfg.adam.beta1, "train");
    cfg.adam.beta2 = get_double(*t, "beta2", cfg.adam.beta2, "train");
    cfg.adam.epsilon = get_double(*t, "epsilon", cfg.adam.epsilon, "train");
  }

  if (const json* seeds = find(j, "seeds")) {
    if (!seeds->is_array()) throw ConfigError("seeds must be an array of integers");
    cfg.run_seeds.clear();
    for (const auto& s : *seeds) {
      if (!s.is_number_integer() && !s.is_number_unsigned())
        throw ConfigError("seeds entries must be integers");
      cfg.run_seeds.push_back(s.get<uint64_t>());
    }
  }

  cfg.validate();
  return cfg;
}

nlohmann::ordered_json config_to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["model"] = {{"layers", cfg.model.shape.layers},
                {"hidden_dim", cfg.model.shape.hidden_dim},
                {"heads", cfg.model.shape.heads},
                {"ffn_dim", cfg.model.shape.ffn_dim},
                {"vocab_size", cfg.model.shape.vocab_size},
                {"max_seq_len", cfg.model.shape.max_seq_len},
                {"num_classes", cfg.model.shape.num_classes},
                {"seed", cfg.model.seed},
                {"checkpoint", cfg.model.checkpoint},
                {"pretrain_steps", cfg.model.pretrain_steps},
                {"pretrain_lr", cfg.model.pretrain_lr}};
  j["task"] = {{"kind", to_string(cfg.task.kind)},
               {"train_size", cfg.task.train_size},
               {"val_size", cfg.task.val_size},
               {"seed", cfg.task.seed},
               {"marker", cfg.task.marker},
               {"marker_a", cfg.task.marker_a},
               {"marker_b", cfg.task.marker_b},
               {"train_path", cfg.task.train_path},
               {"val_path", cfg.task.val_path}};
  j["search_space"] = {{"bias",
                        {{"enabled", cfg.space.bias_enabled},
                         {"structured", cfg.space.bias_structured},
                         {"sites", sites_to_json(cfg.space.bias_sites)}}},
                       {"lora",
                        {{"enabled", cfg.space.lora_enabled},
                         {"structured", cfg.space.lora_structured},
                         {"rank", cfg.space.lora_rank},
                         {"sites", sites_to_json(cfg.space.lora_sites)}}}};
  j["budget"] = cfg.budget;
  j["criterion"] = to_string(cfg.criterion);
  j["lora_init"] = to_string(cfg.lora_init);
  j["structured_lora_include_v"] = cfg.structured_lora_include_v;
  j["train"] = {{"epochs", cfg.epochs},
                {"batch_size", cfg.batch_size},
                {"peak_lr", cfg.peak_lr},
                {"warmup_fraction", cfg.warmup_fraction},
                {"beta1", cfg.adam.beta1},
                {"beta2", cfg.adam.beta2},
                {"epsilon", cfg.adam.epsilon}};
  j["seeds"] = cfg.run_seeds;
  return j;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace petnas
