#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "petnas/autodiff.hpp"
#include "petnas/model.hpp"
#include "petnas/rng.hpp"

namespace petnas {

enum class LoraInit { balanced, original };

LoraInit lora_init_from_string(const std::string& s);
const char* to_string(LoraInit init);

// Additive update for one bias vector. Masked-out entries are exactly zero
// before, during and after training: values are zeroed by apply_masks and
// their gradients are zeroed after every backward pass.
struct BiasDelta {
  ModuleSite site;
  Tensor delta;               // [bias_length], requires_grad
  std::vector<uint8_t> mask;  // 1 = kept
  bool structured = false;    // pruned as a whole vector
  int pet_id = -1;

  int param_count() const;
};

// Low-rank update delta_W = (U . mask_u)(V . mask_v)^T for one weight matrix
// W [out,in]; U is [out,rank], V is [in,rank]. The structured variant prunes
// U/V columns in pairs, reducing the rank.
struct LoRAUpdate {
  ModuleSite site;
  int rank = 0;
  Tensor u;                     // [out, rank]
  Tensor v;                     // [in, rank]
  std::vector<uint8_t> mask_u;  // row-major over u
  std::vector<uint8_t> mask_v;  // row-major over v
  bool structured = false;
  int pet_id = -1;

  int out_dim() const { return site.weight_shape[0]; }
  int in_dim() const { return site.weight_shape[1]; }
  int param_count() const;
  bool column_kept(int j) const;  // true if any entry of column j survives
};

// Which sites carry PETs and under which pruning granularity.
struct SearchSpace {
  bool bias_enabled = true;
  bool bias_structured = false;
  std::vector<SiteName> bias_sites = std::vector<SiteName>(kLayerSites.begin(), kLayerSites.end());

  bool lora_enabled = false;
  bool lora_structured = false;
  int lora_rank = 16;
  std::vector<SiteName> lora_sites = {SiteName::attention_query, SiteName::attention_key,
                                      SiteName::ffn_intermediate, SiteName::ffn_output};
};

// The attachable update units for one run. Iteration order is stable: bias
// deltas by (layer, site order), then LoRA updates by (layer, site order);
// pet_id is the position in that order.
struct PetSet {
  std::vector<BiasDelta> biases;
  std::vector<LoRAUpdate> loras;

  int param_count() const;
  int pet_count() const { return static_cast<int>(biases.size() + loras.size()); }

  void apply_masks();        // zero masked values; idempotent
  void zero_masked_grads();  // zero masked gradient entries, post-backward

  const BiasDelta* bias_at(int layer, SiteName name) const;
  const LoRAUpdate* lora_at(int layer, SiteName name) const;

  std::vector<Tensor> trainable_tensors() const;
};

// Builds dense, unmasked PETs over the search space. Values are
// uninitialized zeros until init_pets runs.
PetSet build_pets(const FrozenParams& model, const SearchSpace& space);

// Bias updates start at zero. LoRA factors draw in a fixed order (U
// row-major, then V row-major, pets in stable order) so a reseeded Rng
// reproduces the exact initial values regardless of masks.
void init_pets(PetSet& pets, LoraInit kind, Rng& rng);

void init_bias(BiasDelta& delta);
// Each factor draws N(0, 1/sqrt(rows)): U rows = out, V rows = in. Expected
// square gradients of U and V entries match under an isotropic input.
void init_lora_balanced(LoRAUpdate& upd, Rng& rng);
// U = 0, V Gaussian: the scheme this project's balanced init replaces.
void init_lora_original(LoRAUpdate& upd, Rng& rng);

}  // namespace petnas
