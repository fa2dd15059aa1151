#pragma once

#include <string>
#include <vector>

#include "petnas/pipeline.hpp"

namespace petnas {

// Architecture map: per (layer, site) fraction of PET parameters kept,
// averaged over the given specs. All specs must share the same model shape
// and search space.
std::string architecture_report_csv(const std::vector<ArchitectureSpec>& specs);

}  // namespace petnas
