#include "petnas/model.hpp"

#include <cmath>

#include "petnas/errors.hpp"
#include "petnas/pet.hpp"

namespace petnas {

void TransformerConfig::validate() const {
  auto positive = [](int v, const char* field) {
    if (v < 1) throw ConfigError(std::string("model.") + field + " must be >= 1, got " +
                                 std::to_string(v));
  };
  positive(layers, "layers");
  positive(hidden_dim, "hidden_dim");
  positive(heads, "heads");
  positive(ffn_dim, "ffn_dim");
  positive(vocab_size, "vocab_size");
  positive(max_seq_len, "max_seq_len");
  positive(num_classes, "num_classes");
  if (hidden_dim % heads != 0)
    throw ConfigError("model.hidden_dim (" + std::to_string(hidden_dim) +
                      ") not divisible by model.heads (" + std::to_string(heads) + ")");
}

const char* to_string(SiteName name) {
  switch (name) {
    case SiteName::attention_query: return "attention.query";
    case SiteName::attention_key: return "attention.key";
    case SiteName::attention_value: return "attention.value";
    case SiteName::attention_output: return "attention.output";
    case SiteName::ffn_intermediate: return "ffn.intermediate";
    case SiteName::ffn_output: return "ffn.output";
    case SiteName::layernorm_attention: return "layernorm.attention";
    case SiteName::layernorm_ffn: return "layernorm.ffn";
    case SiteName::classifier: return "classifier";
  }
  return "?";
}

SiteName site_from_string(const std::string& s) {
  for (SiteName name : kLayerSites)
    if (s == to_string(name)) return name;
  if (s == "classifier") return SiteName::classifier;
  throw ConfigError("unknown site \"" + s + "\"");
}

std::string ModuleSite::id() const {
  if (name == SiteName::classifier) return "classifier";
  return "layer" + std::to_string(layer) + "." + to_string(name);
}

namespace {

ModuleSite make_site(const TransformerConfig& cfg, int layer, SiteName name) {
  ModuleSite site;
  site.layer = layer;
  site.name = name;
  const int h = cfg.hidden_dim;
  switch (name) {
    case SiteName::attention_query:
    case SiteName::attention_key:
    case SiteName::attention_value:
    case SiteName::attention_output:
      site.weight_shape = {h, h};
      site.bias_length = h;
      break;
    case SiteName::ffn_intermediate:
      site.weight_shape = {cfg.ffn_dim, h};
      site.bias_length = cfg.ffn_dim;
      break;
    case SiteName::ffn_output:
      site.weight_shape = {h, cfg.ffn_dim};
      site.bias_length = h;
      break;
    case SiteName::layernorm_attention:
    case SiteName::layernorm_ffn:
      site.weight_shape = {h};
      site.bias_length = h;
      break;
    case SiteName::classifier:
      site.layer = -1;
      site.weight_shape = {cfg.num_classes, h};
      site.bias_length = cfg.num_classes;
      break;
  }
  return site;
}

Tensor random_matrix(std::vector<int> shape, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values()) v = rng.normal(stddev);
  return t;
}

}  // namespace

FrozenParams build_model(const TransformerConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  FrozenParams p;
  p.cfg = cfg;
  const int h = cfg.hidden_dim;

  p.tok_emb = random_matrix({cfg.vocab_size, h}, 1.0, rng);
  p.pos_emb = random_matrix({cfg.max_seq_len, h}, 1.0, rng);

  const double proj_sd = 1.0 / std::sqrt(static_cast<double>(h));
  const double ffn_sd = 1.0 / std::sqrt(static_cast<double>(cfg.ffn_dim));
  const double bias_sd = 0.02;
  p.layers.resize(cfg.layers);
  for (LayerParams& lp : p.layers) {
    lp.wq = random_matrix({h, h}, proj_sd, rng);
    lp.bq = random_matrix({h}, bias_sd, rng);
    lp.wk = random_matrix({h, h}, proj_sd, rng);
    lp.bk = random_matrix({h}, bias_sd, rng);
    lp.wv = random_matrix({h, h}, proj_sd, rng);
    lp.bv = random_matrix({h}, bias_sd, rng);
    lp.wo = random_matrix({h, h}, proj_sd, rng);
    lp.bo = random_matrix({h}, bias_sd, rng);
    lp.w1 = random_matrix({cfg.ffn_dim, h}, proj_sd, rng);
    lp.b1 = random_matrix({cfg.ffn_dim}, bias_sd, rng);
    lp.w2 = random_matrix({h, cfg.ffn_dim}, ffn_sd, rng);
    lp.b2 = random_matrix({h}, bias_sd, rng);
    lp.ln1_gain = Tensor::full({h}, 1.0);
    lp.ln1_bias = Tensor::zeros({h});
    lp.ln2_gain = Tensor::full({h}, 1.0);
    lp.ln2_bias = Tensor::zeros({h});
  }

  for (int l = 0; l < cfg.layers; ++l)
    for (SiteName name : kLayerSites) p.sites.push_back(make_site(cfg, l, name));
  p.sites.push_back(make_site(cfg, -1, SiteName::classifier));
  return p;
}

const ModuleSite& FrozenParams::site(int layer, SiteName name) const {
  for (const ModuleSite& s : sites)
    if (s.layer == layer && s.name == name) return s;
  throw InternalError("no site " + std::string(to_string(name)) + " at layer " +
                      std::to_string(layer));
}

const Tensor& FrozenParams::weight_at(int layer, SiteName name) const {
  return const_cast<FrozenParams*>(this)->weight_at(layer, name);
}

const Tensor& FrozenParams::bias_at(int layer, SiteName name) const {
  return const_cast<FrozenParams*>(this)->bias_at(layer, name);
}

Tensor& FrozenParams::weight_at(int layer, SiteName name) {
  if (layer < 0 || layer >= static_cast<int>(layers.size()))
    throw InternalError("weight_at: bad layer " + std::to_string(layer));
  LayerParams& lp = layers[layer];
  switch (name) {
    case SiteName::attention_query: return lp.wq;
    case SiteName::attention_key: return lp.wk;
    case SiteName::attention_value: return lp.wv;
    case SiteName::attention_output: return lp.wo;
    case SiteName::ffn_intermediate: return lp.w1;
    case SiteName::ffn_output: return lp.w2;
    case SiteName::layernorm_attention: return lp.ln1_gain;
    case SiteName::layernorm_ffn: return lp.ln2_gain;
    case SiteName::classifier: break;
  }
  throw InternalError("weight_at: classifier weights live outside FrozenParams");
}

Tensor& FrozenParams::bias_at(int layer, SiteName name) {
  if (layer < 0 || layer >= static_cast<int>(layers.size()))
    throw InternalError("bias_at: bad layer " + std::to_string(layer));
  LayerParams& lp = layers[layer];
  switch (name) {
    case SiteName::attention_query: return lp.bq;
    case SiteName::attention_key: return lp.bk;
    case SiteName::attention_value: return lp.bv;
    case SiteName::attention_output: return lp.bo;
    case SiteName::ffn_intermediate: return lp.b1;
    case SiteName::ffn_output: return lp.b2;
    case SiteName::layernorm_attention: return lp.ln1_bias;
    case SiteName::layernorm_ffn: return lp.ln2_bias;
    case SiteName::classifier: break;
  }
  throw InternalError("bias_at: classifier bias lives outside FrozenParams");
}

std::vector<std::pair<std::string, Tensor>> FrozenParams::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("tok_emb", tok_emb);
  out.emplace_back("pos_emb", pos_emb);
  for (int l = 0; l < static_cast<int>(layers.size()); ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    for (SiteName name : kLayerSites) {
      const bool ln = name == SiteName::layernorm_attention || name == SiteName::layernorm_ffn;
      out.emplace_back(prefix + to_string(name) + (ln ? ".gain" : ".weight"),
                       weight_at(l, name));
      out.emplace_back(prefix + to_string(name) + ".bias", bias_at(l, name));
    }
  }
  return out;
}

std::vector<Tensor> FrozenParams::all_tensors() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_tensors()) out.push_back(t);
  return out;
}

void FrozenParams::set_trainable(bool trainable) {
  for (Tensor t : all_tensors()) t.set_requires_grad(trainable);
}

Classifier init_classifier(const TransformerConfig& cfg, Rng& rng) {
  Classifier head;
  head.weight = random_matrix({cfg.num_classes, cfg.hidden_dim},
                              1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim)), rng);
  head.bias = Tensor::zeros({cfg.num_classes});
  head.weight.set_requires_grad(true);
  head.bias.set_requires_grad(true);
  return head;
}

namespace {

// y = x W^T [+ (x V) U^T] + (b [+ delta])
Tensor linear_site(const Tensor& x, const FrozenParams& p, int layer, SiteName name,
                   const PetSet* pets) {
  const Tensor& w = p.weight_at(layer, name);
  const Tensor& b = p.bias_at(layer, name);
  Tensor y = matmul_nt(x, w);
  if (pets) {
    if (const LoRAUpdate* lora = pets->lora_at(layer, name))
      y = add(y, matmul_nt(matmul(x, lora->v), lora->u));
    if (const BiasDelta* delta = pets->bias_at(layer, name))
      return add(y, add(b, delta->delta));
  }
  return add(y, b);
}

Tensor layer_norm_site(const Tensor& x, const FrozenParams& p, int layer, SiteName name,
                       const PetSet* pets) {
  const Tensor& gain = p.weight_at(layer, name);
  const Tensor& bias = p.bias_at(layer, name);
  if (pets)
    if (const BiasDelta* delta = pets->bias_at(layer, name))
      return layer_norm(x, gain, add(bias, delta->delta));
  return layer_norm(x, gain, bias);
}

// Single-example encoder: tokens -> final first-token representation [1,h].
Tensor encode(const FrozenParams& p, const PetSet* pets, const std::vector<int>& tokens) {
  const TransformerConfig& cfg = p.cfg;
  if (tokens.empty()) throw InputError("empty token sequence");
  if (static_cast<int>(tokens.size()) > cfg.max_seq_len)
    throw InputError("sequence length " + std::to_string(tokens.size()) +
                     " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  std::vector<int> positions(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) positions[i] = static_cast<int>(i);

  Tensor x = add(embedding_lookup(p.tok_emb, tokens), embedding_lookup(p.pos_emb, positions));
  const int dh = cfg.head_dim();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  for (int l = 0; l < cfg.layers; ++l) {
    Tensor q = linear_site(x, p, l, SiteName::attention_query, pets);
    Tensor k = linear_site(x, p, l, SiteName::attention_key, pets);
    Tensor v = linear_site(x, p, l, SiteName::attention_value, pets);

    std::vector<Tensor> head_outputs;
    head_outputs.reserve(cfg.heads);
    for (int hh = 0; hh < cfg.heads; ++hh) {
      Tensor qh = slice_cols(q, hh * dh, dh);
      Tensor kh = slice_cols(k, hh * dh, dh);
      Tensor vh = slice_cols(v, hh * dh, dh);
      Tensor probs = softmax_rows(scale(matmul_nt(qh, kh), att_scale));
      head_outputs.push_back(matmul(probs, vh));
    }
    Tensor ctx = concat_cols(head_outputs);
    Tensor attn = linear_site(ctx, p, l, SiteName::attention_output, pets);
    x = layer_norm_site(add(x, attn), p, l, SiteName::layernorm_attention, pets);

    Tensor hmid = gelu(linear_site(x, p, l, SiteName::ffn_intermediate, pets));
    Tensor ffn = linear_site(hmid, p, l, SiteName::ffn_output, pets);
    x = layer_norm_site(add(x, ffn), p, l, SiteName::layernorm_ffn, pets);
  }
  return take_row(x, 0);
}

}  // namespace

ForwardResult forward(const FrozenParams& params, const Classifier& head, const PetSet* pets,
                      const std::vector<Example>& examples, std::span<const int> batch) {
  if (batch.empty()) throw UsageError("forward: empty batch");
  std::vector<Tensor> logit_rows;
  std::vector<int> labels;
  logit_rows.reserve(batch.size());
  labels.reserve(batch.size());
  for (int idx : batch) {
    const Example& ex = examples.at(idx);
    Tensor h0 = encode(params, pets, ex.tokens);
    logit_rows.push_back(add(matmul_nt(h0, head.weight), head.bias));
    labels.push_back(ex.label);
  }
  ForwardResult result;
  result.logits = stack_rows(logit_rows);
  result.loss = softmax_cross_entropy(result.logits, labels);
  return result;
}

std::pair<FrozenParams, Classifier> merge_pets(const FrozenParams& params,
                                               const Classifier& head, const PetSet& pets) {
  FrozenParams merged = params;
  merged.tok_emb = params.tok_emb.clone();
  merged.pos_emb = params.pos_emb.clone();
  for (LayerParams& lp : merged.layers)
    for (Tensor* t : {&lp.wq, &lp.bq, &lp.wk, &lp.bk, &lp.wv, &lp.bv, &lp.wo, &lp.bo, &lp.w1,
                      &lp.b1, &lp.w2, &lp.b2, &lp.ln1_gain, &lp.ln1_bias, &lp.ln2_gain,
                      &lp.ln2_bias})
      *t = t->clone();

  for (const BiasDelta& delta : pets.biases) {
    Tensor& b = merged.bias_at(delta.site.layer, delta.site.name);
    for (int i = 0; i < b.size(); ++i) b.values()[i] += delta.delta.values()[i];
  }
  for (const LoRAUpdate& lora : pets.loras) {
    Tensor& w = merged.weight_at(lora.site.layer, lora.site.name);
    const int out = lora.out_dim(), in = lora.in_dim(), r = lora.rank;
    for (int i = 0; i < out; ++i)
      for (int j = 0; j < in; ++j) {
        double s = 0.0;
        for (int c = 0; c < r; ++c) s += lora.u.values()[i * r + c] * lora.v.values()[j * r + c];
        w.values()[i * in + j] += s;
      }
  }

  Classifier merged_head;
  merged_head.weight = head.weight.clone();
  merged_head.bias = head.bias.clone();
  return {std::move(merged), std::move(merged_head)};
}

}  // namespace petnas
