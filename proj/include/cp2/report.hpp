#pragma once

#include <string>
#include <vector>

namespace cp2 {

struct RunSummary {
  std::string dir;
  std::string mode;
  std::string phase;
  std::int64_t steps = 0;
  double final_total = 0.0;
  double final_l_ins = 0.0;
  double final_l_dense = 0.0;
  double miou = -1.0;  // negative when the run has no evaluation report
};

RunSummary summarize_run(const std::string& run_dir);

// One row per run directory, aligned plain-text table.
std::string format_comparison_table(const std::vector<RunSummary>& rows);

}  // namespace cp2
