#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "petnas/autodiff.hpp"
#include "petnas/data.hpp"
#include "petnas/rng.hpp"

namespace petnas {

struct PetSet;  // pet.hpp

struct TransformerConfig {
  int layers = 2;
  int hidden_dim = 32;
  int heads = 4;
  int ffn_dim = 64;
  int vocab_size = 64;
  int max_seq_len = 16;
  int num_classes = 2;

  int head_dim() const { return hidden_dim / heads; }
  void validate() const;  // throws ConfigError naming the offending field
};

enum class SiteName {
  attention_query,
  attention_key,
  attention_value,
  attention_output,
  ffn_intermediate,
  ffn_output,
  layernorm_attention,
  layernorm_ffn,
  classifier,
};

// The eight per-layer attachment sites, in canonical order.
constexpr std::array<SiteName, 8> kLayerSites = {
    SiteName::attention_query,    SiteName::attention_key,
    SiteName::attention_value,    SiteName::attention_output,
    SiteName::ffn_intermediate,   SiteName::ffn_output,
    SiteName::layernorm_attention, SiteName::layernorm_ffn,
};

const char* to_string(SiteName name);
SiteName site_from_string(const std::string& s);  // ConfigError on unknown site

struct ModuleSite {
  int layer = -1;  // -1 for the classifier site
  SiteName name = SiteName::classifier;
  std::vector<int> weight_shape;  // {out,in} for matrices, {n} for layernorm gains
  int bias_length = 0;

  bool has_matrix() const { return weight_shape.size() == 2; }
  std::string id() const;
};

struct LayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // attention projections, weights [out,in]
  Tensor w1, b1;                          // ffn.intermediate
  Tensor w2, b2;                          // ffn.output
  Tensor ln1_gain, ln1_bias;              // layernorm.attention
  Tensor ln2_gain, ln2_bias;              // layernorm.ffn
};

// Base encoder parameters. Frozen for the whole NAS pipeline: requires_grad
// is off and nothing writes to them after construction (pretraining, when
// requested, happens before the pipeline sees them).
struct FrozenParams {
  TransformerConfig cfg;
  Tensor tok_emb;  // [vocab, hidden]
  Tensor pos_emb;  // [max_seq_len, hidden]
  std::vector<LayerParams> layers;
  std::vector<ModuleSite> sites;  // per-layer sites then the classifier site

  const ModuleSite& site(int layer, SiteName name) const;
  // Weight tensor behind a site; layernorm sites expose their gain.
  const Tensor& weight_at(int layer, SiteName name) const;
  const Tensor& bias_at(int layer, SiteName name) const;
  Tensor& weight_at(int layer, SiteName name);
  Tensor& bias_at(int layer, SiteName name);

  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  std::vector<Tensor> all_tensors() const;
  void set_trainable(bool trainable);
};

FrozenParams build_model(const TransformerConfig& cfg, uint64_t seed);

// Task head on the first-token representation. Trainable alongside the PET
// parameters; excluded from the prunable budget.
struct Classifier {
  Tensor weight;  // [num_classes, hidden]
  Tensor bias;    // [num_classes]
};

Classifier init_classifier(const TransformerConfig& cfg, Rng& rng);

struct ForwardResult {
  Tensor loss;    // scalar
  Tensor logits;  // [batch, num_classes]
};

// Runs the encoder over a batch of examples (indices into `examples`).
// Attached PETs contribute additively: bias sites compute b + delta, weight
// sites add (U masked)(V masked)^T applied as two thin matmuls.
ForwardResult forward(const FrozenParams& params, const Classifier& head, const PetSet* pets,
                      const std::vector<Example>& examples, std::span<const int> batch);

// Folds every attached PET into a copy of the base parameters and head, so
// inference costs exactly one bare-model pass.
std::pair<FrozenParams, Classifier> merge_pets(const FrozenParams& params,
                                               const Classifier& head, const PetSet& pets);

}  // namespace petnas
