#include "petnas/data.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "petnas/errors.hpp"
#include "petnas/model.hpp"
#include "petnas/rng.hpp"

namespace petnas {

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "presence") return TaskKind::presence;
  if (s == "order") return TaskKind::order;
  if (s == "majority") return TaskKind::majority;
  if (s == "jsonl") return TaskKind::jsonl;
  throw ConfigError("unknown task kind \"" + s + "\"");
}

const char* to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::presence: return "presence";
    case TaskKind::order: return "order";
    case TaskKind::majority: return "majority";
    case TaskKind::jsonl: return "jsonl";
  }
  return "?";
}

int hash_token(const std::string& word, int vocab_size) {
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : word) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return static_cast<int>(h % static_cast<uint64_t>(vocab_size));
}

namespace {

struct TaskTokens {
  int marker = 0;    // presence
  int marker_a = 0;  // order / majority
  int marker_b = 0;
};

TaskTokens resolve_markers(const TaskSpec& spec, const TransformerConfig& cfg) {
  if (cfg.vocab_size < 4)
    throw ConfigError("task generators need model.vocab_size >= 4, got " +
                      std::to_string(cfg.vocab_size));
  TaskTokens t;
  t.marker = spec.marker >= 0 ? spec.marker : cfg.vocab_size - 1;
  t.marker_a = spec.marker_a >= 0 ? spec.marker_a : cfg.vocab_size - 1;
  t.marker_b = spec.marker_b >= 0 ? spec.marker_b : cfg.vocab_size - 2;
  for (int m : {t.marker, t.marker_a, t.marker_b})
    if (m >= cfg.vocab_size)
      throw ConfigError("task marker " + std::to_string(m) + " outside vocabulary of size " +
                        std::to_string(cfg.vocab_size));
  if (t.marker_a == t.marker_b)
    throw ConfigError("order/majority tasks need two distinct marker tokens");
  return t;
}

// Uniform filler token, avoiding the given markers.
int filler_token(Rng& rng, int vocab, int avoid1, int avoid2) {
  for (;;) {
    const int t = static_cast<int>(rng.uniform_int(vocab));
    if (t != avoid1 && t != avoid2) return t;
  }
}

Example gen_presence(Rng& rng, const TransformerConfig& cfg, const TaskTokens& tok, int label) {
  Example ex;
  ex.label = label;
  const int len = cfg.max_seq_len;
  ex.tokens.resize(len);
  for (int& t : ex.tokens) t = filler_token(rng, cfg.vocab_size, tok.marker, -1);
  if (label == 1) ex.tokens[rng.uniform_int(len)] = tok.marker;
  return ex;
}

Example gen_order(Rng& rng, const TransformerConfig& cfg, const TaskTokens& tok, int label) {
  Example ex;
  ex.label = label;
  const int len = cfg.max_seq_len;
  if (len < 2) throw ConfigError("order task needs model.max_seq_len >= 2");
  ex.tokens.resize(len);
  for (int& t : ex.tokens) t = filler_token(rng, cfg.vocab_size, tok.marker_a, tok.marker_b);
  int p1 = static_cast<int>(rng.uniform_int(len));
  int p2 = static_cast<int>(rng.uniform_int(len - 1));
  if (p2 >= p1) ++p2;
  const int first = std::min(p1, p2), second = std::max(p1, p2);
  ex.tokens[first] = label == 1 ? tok.marker_a : tok.marker_b;
  ex.tokens[second] = label == 1 ? tok.marker_b : tok.marker_a;
  return ex;
}

Example gen_majority(Rng& rng, const TransformerConfig& cfg, const TaskTokens& tok, int label) {
  Example ex;
  ex.label = label;
  const int len = cfg.max_seq_len;
  if (len < 3) throw ConfigError("majority task needs model.max_seq_len >= 3");
  const int half = len / 2;
  // strict majority of marker_a for label 1, of marker_b for label 0
  const int low = half + 1;
  const int count_a =
      label == 1 ? low + static_cast<int>(rng.uniform_int(len - low + 1))
                 : static_cast<int>(rng.uniform_int(len - low + 1));
  ex.tokens.assign(len, tok.marker_b);
  // choose count_a distinct positions for marker_a
  std::vector<int> pos(len);
  for (int i = 0; i < len; ++i) pos[i] = i;
  for (int i = len - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform_int(i + 1));
    std::swap(pos[i], pos[j]);
  }
  for (int i = 0; i < count_a; ++i) ex.tokens[pos[i]] = tok.marker_a;
  return ex;
}

}  // namespace

Splits generate_task(const TaskSpec& spec, const TransformerConfig& cfg) {
  if (spec.kind == TaskKind::jsonl) {
    if (spec.train_path.empty() || spec.val_path.empty())
      throw ConfigError("jsonl task needs task.train_path and task.val_path");
    Splits splits;
    splits.train = load_jsonl(spec.train_path, cfg);
    splits.val = load_jsonl(spec.val_path, cfg);
    if (splits.train.empty()) throw InputError(spec.train_path + ": no examples");
    if (splits.val.empty()) throw InputError(spec.val_path + ": no examples");
    return splits;
  }

  if (spec.train_size < 1)
    throw ConfigError("task.train_size must be >= 1, got " + std::to_string(spec.train_size));
  if (spec.val_size < 1)
    throw ConfigError("task.val_size must be >= 1, got " + std::to_string(spec.val_size));
  if (cfg.num_classes < 2) throw ConfigError("task generators need model.num_classes >= 2");

  const TaskTokens tok = resolve_markers(spec, cfg);
  Rng rng(spec.seed);
  const int total = spec.train_size + spec.val_size;
  std::set<std::vector<int>> seen;
  std::vector<Example> examples;
  examples.reserve(total);
  long attempts = 0;
  const long max_attempts = 200L * total + 1000;
  while (static_cast<int>(examples.size()) < total) {
    if (++attempts > max_attempts)
      throw ConfigError("task space too small to generate " + std::to_string(total) +
                        " distinct examples");
    const int label = static_cast<int>(examples.size()) % 2;
    Example ex;
    switch (spec.kind) {
      case TaskKind::presence: ex = gen_presence(rng, cfg, tok, label); break;
      case TaskKind::order: ex = gen_order(rng, cfg, tok, label); break;
      case TaskKind::majority: ex = gen_majority(rng, cfg, tok, label); break;
      case TaskKind::jsonl: break;  // handled above
    }
    if (!seen.insert(ex.tokens).second) continue;  // keep splits disjoint
    examples.push_back(std::move(ex));
  }

  Splits splits;
  splits.train.assign(examples.begin(), examples.begin() + spec.train_size);
  splits.val.assign(examples.begin() + spec.train_size, examples.end());
  return splits;
}

std::vector<Example> load_jsonl(const std::string& path, const TransformerConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<Example> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path + ": line " + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(where + ": " + e.what());
    }
    if (!j.is_object()) throw InputError(where + ": expected a JSON object");
    if (!j.contains("label") || !j["label"].is_number_integer())
      throw InputError(where + ": missing integer \"label\"");
    const int label = j["label"].get<int>();
    if (label < 0 || label >= cfg.num_classes)
      throw InputError(where + ": unknown label " + std::to_string(label) +
                       " (num_classes = " + std::to_string(cfg.num_classes) + ")");

    Example ex;
    ex.label = label;
    if (j.contains("tokens")) {
      if (!j["tokens"].is_array()) throw InputError(where + ": \"tokens\" must be an array");
      for (const auto& t : j["tokens"]) {
        if (!t.is_number_integer()) throw InputError(where + ": token ids must be integers");
        const int id = t.get<int>();
        if (id < 0 || id >= cfg.vocab_size)
          throw InputError(where + ": token id " + std::to_string(id) +
                           " outside vocabulary of size " + std::to_string(cfg.vocab_size));
        ex.tokens.push_back(id);
      }
    } else if (j.contains("text")) {
      if (!j["text"].is_string()) throw InputError(where + ": \"text\" must be a string");
      std::istringstream words(j["text"].get<std::string>());
      std::string word;
      while (words >> word) ex.tokens.push_back(hash_token(word, cfg.vocab_size));
    } else {
      throw InputError(where + ": need \"text\" or \"tokens\"");
    }
    if (ex.tokens.empty()) throw InputError(where + ": empty example");
    if (static_cast<int>(ex.tokens.size()) > cfg.max_seq_len)
      ex.tokens.resize(cfg.max_seq_len);  // keep the first max_seq_len tokens
    out.push_back(std::move(ex));
  }
  return out;
}

void write_jsonl(const std::vector<Example>& examples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const Example& ex : examples) {
    nlohmann::json j;
    j["tokens"] = ex.tokens;
    j["label"] = ex.label;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace petnas
