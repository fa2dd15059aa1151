#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace petnas {

// Exit codes: 0 success, 2 configuration or input error, 3 training
// divergence, 4 i/o error, 1 anything else.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitIo = 4;

struct SearchOptions {
  std::string config_path;
  std::string out_dir = "petnas-out";
  std::string seeds;      // comma-separated override, empty = config seeds
  int budget = -1;        // override when >= 0
  std::string criterion;  // averaged|last_step override
  std::string init;       // balanced|original override
  std::string baseline;   // random|last_step|full; empty = criterion search
  bool verbose = false;
};

struct ReportOptions {
  std::vector<std::string> spec_paths;
  std::string out_path = "report.csv";
};

int cmd_search(const SearchOptions& options, std::ostream& out, std::ostream& err);
int cmd_baseline(const SearchOptions& options, std::ostream& out, std::ostream& err);
int cmd_report(const ReportOptions& options, std::ostream& out, std::ostream& err);

}  // namespace petnas
