#include "petnas/report.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>

#include "petnas/errors.hpp"

namespace petnas {

namespace {

bool same_model(const TransformerConfig& a, const TransformerConfig& b) {
  return a.layers == b.layers && a.hidden_dim == b.hidden_dim && a.heads == b.heads &&
         a.ffn_dim == b.ffn_dim && a.vocab_size == b.vocab_size &&
         a.max_seq_len == b.max_seq_len && a.num_classes == b.num_classes;
}

bool same_structure(const PetArchEntry& a, const PetArchEntry& b) {
  return a.layer == b.layer && a.site == b.site && a.is_lora == b.is_lora &&
         a.rank == b.rank && a.mask.size() == b.mask.size() &&
         a.mask_u.size() == b.mask_u.size() && a.mask_v.size() == b.mask_v.size();
}

int kept(const std::vector<uint8_t>& mask) {
  return static_cast<int>(std::count(mask.begin(), mask.end(), uint8_t{1}));
}

}  // namespace

std::string architecture_report_csv(const std::vector<ArchitectureSpec>& specs) {
  if (specs.empty()) throw UsageError("report: no architecture specs given");
  const ArchitectureSpec& first = specs[0];
  for (const ArchitectureSpec& spec : specs) {
    if (!same_model(spec.model, first.model))
      throw InputError("incompatible model shapes across specs");
    if (spec.pets.size() != first.pets.size())
      throw InputError("specs come from different search spaces");
    for (size_t i = 0; i < spec.pets.size(); ++i)
      if (!same_structure(spec.pets[i], first.pets[i]))
        throw InputError("specs come from different search spaces");
  }

  // (layer, site) -> kept/total accumulated per spec, then averaged
  std::map<std::pair<int, int>, double> fraction_sum;
  std::vector<std::pair<int, int>> order;
  for (const ArchitectureSpec& spec : specs) {
    std::map<std::pair<int, int>, std::pair<long, long>> counts;  // kept, total
    for (const PetArchEntry& pet : spec.pets) {
      auto key = std::make_pair(pet.layer, static_cast<int>(pet.site));
      auto& [k, t] = counts[key];
      if (pet.is_lora) {
        k += kept(pet.mask_u) + kept(pet.mask_v);
        t += static_cast<long>(pet.mask_u.size() + pet.mask_v.size());
      } else {
        k += kept(pet.mask);
        t += static_cast<long>(pet.mask.size());
      }
    }
    for (const auto& [key, kt] : counts) {
      if (!fraction_sum.count(key)) order.push_back(key);
      fraction_sum[key] += static_cast<double>(kt.first) / static_cast<double>(kt.second);
    }
  }
  std::sort(order.begin(), order.end());

  std::string csv = "layer,site,fraction_kept\n";
  char buf[64];
  for (const auto& key : order) {
    const double fraction = fraction_sum[key] / specs.size();
    std::snprintf(buf, sizeof buf, "%.17g", fraction);
    csv += std::to_string(key.first);
    csv += ',';
    csv += to_string(static_cast<SiteName>(key.second));
    csv += ',';
    csv += buf;
    csv += '\n';
  }
  return csv;
}

}  // namespace petnas
