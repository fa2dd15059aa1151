#include "petnas/pet.hpp"

#include <algorithm>
#include <cmath>

#include "petnas/errors.hpp"

namespace petnas {

LoraInit lora_init_from_string(const std::string& s) {
  if (s == "balanced") return LoraInit::balanced;
  if (s == "original") return LoraInit::original;
  throw ConfigError("unknown lora_init \"" + s + "\" (expected balanced|original)");
}

const char* to_string(LoraInit init) {
  return init == LoraInit::balanced ? "balanced" : "original";
}

int BiasDelta::param_count() const {
  return static_cast<int>(std::count(mask.begin(), mask.end(), uint8_t{1}));
}

int LoRAUpdate::param_count() const {
  return static_cast<int>(std::count(mask_u.begin(), mask_u.end(), uint8_t{1}) +
                          std::count(mask_v.begin(), mask_v.end(), uint8_t{1}));
}

bool LoRAUpdate::column_kept(int j) const {
  for (int i = 0; i < out_dim(); ++i)
    if (mask_u[i * rank + j]) return true;
  for (int i = 0; i < in_dim(); ++i)
    if (mask_v[i * rank + j]) return true;
  return false;
}

int PetSet::param_count() const {
  int total = 0;
  for (const BiasDelta& b : biases) total += b.param_count();
  for (const LoRAUpdate& l : loras) total += l.param_count();
  return total;
}

namespace {

void mask_values(Tensor& t, const std::vector<uint8_t>& mask) {
  auto& v = t.values();
  for (size_t i = 0; i < mask.size(); ++i)
    if (!mask[i]) v[i] = 0.0;
}

void mask_grads(Tensor& t, const std::vector<uint8_t>& mask) {
  if (!t.has_grad()) return;
  auto& g = t.grad();
  for (size_t i = 0; i < mask.size(); ++i)
    if (!mask[i]) g[i] = 0.0;
}

}  // namespace

void PetSet::apply_masks() {
  for (BiasDelta& b : biases) mask_values(b.delta, b.mask);
  for (LoRAUpdate& l : loras) {
    mask_values(l.u, l.mask_u);
    mask_values(l.v, l.mask_v);
  }
}

void PetSet::zero_masked_grads() {
  for (BiasDelta& b : biases) mask_grads(b.delta, b.mask);
  for (LoRAUpdate& l : loras) {
    mask_grads(l.u, l.mask_u);
    mask_grads(l.v, l.mask_v);
  }
}

const BiasDelta* PetSet::bias_at(int layer, SiteName name) const {
  for (const BiasDelta& b : biases)
    if (b.site.layer == layer && b.site.name == name) return &b;
  return nullptr;
}

const LoRAUpdate* PetSet::lora_at(int layer, SiteName name) const {
  for (const LoRAUpdate& l : loras)
    if (l.site.layer == layer && l.site.name == name) return &l;
  return nullptr;
}

std::vector<Tensor> PetSet::trainable_tensors() const {
  std::vector<Tensor> out;
  for (const BiasDelta& b : biases) out.push_back(b.delta);
  for (const LoRAUpdate& l : loras) {
    out.push_back(l.u);
    out.push_back(l.v);
  }
  return out;
}

PetSet build_pets(const FrozenParams& model, const SearchSpace& space) {
  PetSet pets;
  auto site_wanted = [](const std::vector<SiteName>& wanted, SiteName name) {
    return std::find(wanted.begin(), wanted.end(), name) != wanted.end();
  };

  for (SiteName name : space.bias_sites)
    if (name == SiteName::classifier)
      throw ConfigError("classifier is not a PET attachment site");
  for (SiteName name : space.lora_sites) {
    if (name == SiteName::classifier)
      throw ConfigError("classifier is not a PET attachment site");
    if (name == SiteName::layernorm_attention || name == SiteName::layernorm_ffn)
      throw ConfigError(std::string("site ") + to_string(name) +
                        " has no weight matrix for a low-rank update");
  }
  if (space.lora_enabled && space.lora_rank < 1)
    throw ConfigError("search_space.lora.rank must be >= 1");

  int next_id = 0;
  if (space.bias_enabled) {
    for (int l = 0; l < model.cfg.layers; ++l)
      for (SiteName name : kLayerSites) {
        if (!site_wanted(space.bias_sites, name)) continue;
        BiasDelta b;
        b.site = model.site(l, name);
        b.delta = Tensor::zeros({b.site.bias_length}, true);
        b.mask.assign(b.site.bias_length, 1);
        b.structured = space.bias_structured;
        b.pet_id = next_id++;
        pets.biases.push_back(std::move(b));
      }
  }
  if (space.lora_enabled) {
    for (int l = 0; l < model.cfg.layers; ++l)
      for (SiteName name : kLayerSites) {
        if (!site_wanted(space.lora_sites, name)) continue;
        LoRAUpdate lora;
        lora.site = model.site(l, name);
        lora.rank = space.lora_rank;
        const int out = lora.site.weight_shape[0];
        const int in = lora.site.weight_shape[1];
        lora.u = Tensor::zeros({out, lora.rank}, true);
        lora.v = Tensor::zeros({in, lora.rank}, true);
        lora.mask_u.assign(out * lora.rank, 1);
        lora.mask_v.assign(in * lora.rank, 1);
        lora.structured = space.lora_structured;
        lora.pet_id = next_id++;
        pets.loras.push_back(std::move(lora));
      }
  }
  return pets;
}

void init_bias(BiasDelta& delta) {
  std::fill(delta.delta.values().begin(), delta.delta.values().end(), 0.0);
}

void init_lora_balanced(LoRAUpdate& upd, Rng& rng) {
  const double sd_u = 1.0 / std::sqrt(static_cast<double>(upd.out_dim()));
  const double sd_v = 1.0 / std::sqrt(static_cast<double>(upd.in_dim()));
  for (double& x : upd.u.values()) x = rng.normal(sd_u);
  for (double& x : upd.v.values()) x = rng.normal(sd_v);
}

void init_lora_original(LoRAUpdate& upd, Rng& rng) {
  const double sd_v = 1.0 / std::sqrt(static_cast<double>(upd.in_dim()));
  std::fill(upd.u.values().begin(), upd.u.values().end(), 0.0);
  for (double& x : upd.v.values()) x = rng.normal(sd_v);
}

void init_pets(PetSet& pets, LoraInit kind, Rng& rng) {
  for (BiasDelta& b : pets.biases) init_bias(b);
  for (LoRAUpdate& l : pets.loras) {
    if (kind == LoraInit::balanced)
      init_lora_balanced(l, rng);
    else
      init_lora_original(l, rng);
  }
  pets.apply_masks();
}

}  // namespace petnas
