#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace petnas {

struct TransformerConfig;

struct Example {
  std::vector<int> tokens;  // ids < vocab_size, length <= max_seq_len
  int label = 0;            // < num_classes
};

enum class TaskKind { presence, order, majority, jsonl };

TaskKind task_kind_from_string(const std::string& s);
const char* to_string(TaskKind kind);

struct TaskSpec {
  TaskKind kind = TaskKind::presence;
  int train_size = 512;
  int val_size = 128;
  uint64_t seed = 0;

  // presence: the marker token; order: marker_a before/after marker_b.
  // Negative values pick defaults derived from the vocabulary.
  int marker = -1;
  int marker_a = -1;
  int marker_b = -1;

  // jsonl task
  std::string train_path;
  std::string val_path;
};

struct Splits {
  std::vector<Example> train;
  std::vector<Example> val;
};

// Deterministic synthetic datasets; train and validation sequences are
// disjoint by construction.
Splits generate_task(const TaskSpec& spec, const TransformerConfig& cfg);

// One example per line: {"text": "...", "label": k} with a whitespace
// tokenizer over hash buckets, or {"tokens": [ids...], "label": k} verbatim.
std::vector<Example> load_jsonl(const std::string& path, const TransformerConfig& cfg);
void write_jsonl(const std::vector<Example>& examples, const std::string& path);

// Stable across platforms (FNV-1a, 64-bit).
int hash_token(const std::string& word, int vocab_size);

}  // namespace petnas
