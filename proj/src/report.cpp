#include "cp2/report.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cp2/error.hpp"

namespace cp2 {

namespace fs = std::filesystem;

RunSummary summarize_run(const std::string& run_dir) {
  RunSummary s;
  s.dir = run_dir;

  const fs::path echo_path = fs::path(run_dir) / "config.echo";
  if (fs::exists(echo_path)) {
    std::ifstream is(echo_path);
    nlohmann::json j;
    try {
      is >> j;
      s.mode = j.at("losses").value("mode", "?");
    } catch (const nlohmann::json::exception&) {
      s.mode = "?";
    }
  }

  const fs::path metrics_path = fs::path(run_dir) / "metrics.csv";
  if (fs::exists(metrics_path)) {
    std::ifstream is(metrics_path);
    std::string header, line, last;
    std::getline(is, header);
    std::int64_t rows = 0;
    while (std::getline(is, line))
      if (!line.empty()) {
        last = line;
        ++rows;
      }
    s.steps = rows;
    if (!last.empty()) {
      std::istringstream row(last);
      std::string cell;
      std::vector<std::string> cells;
      while (std::getline(row, cell, ',')) cells.push_back(cell);
      // pretrain format: step,l_ins,l_dense,total,...; finetune: step,loss,...
      if (cells.size() >= 4 && header.rfind("step,l_ins", 0) == 0) {
        s.final_l_ins = std::stod(cells[1]);
        s.final_l_dense = std::stod(cells[2]);
        s.final_total = std::stod(cells[3]);
        s.phase = "train";
      } else if (cells.size() >= 2) {
        s.final_total = std::stod(cells[1]);
        s.phase = "finetune";
      }
    }
  }

  const fs::path report_path = fs::path(run_dir) / "report.json";
  if (fs::exists(report_path)) {
    std::ifstream is(report_path);
    nlohmann::json j;
    try {
      is >> j;
      s.miou = j.value("miou", -1.0);
    } catch (const nlohmann::json::exception&) {
    }
  }
  return s;
}

std::string format_comparison_table(const std::vector<RunSummary>& rows) {
  if (rows.empty()) throw InvalidInput("report: no run directories given");
  std::size_t dir_w = 3;
  for (const auto& r : rows) dir_w = std::max(dir_w, r.dir.size());

  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(dir_w) + 2) << "run" << std::setw(16) << "mode"
     << std::setw(8) << "steps" << std::setw(12) << "l_ins" << std::setw(12) << "l_dense"
     << std::setw(12) << "total" << std::setw(10) << "miou" << "\n";
  os << std::string(dir_w + 2 + 16 + 8 + 12 + 12 + 12 + 10, '-') << "\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(dir_w) + 2) << r.dir << std::setw(16)
       << (r.mode.empty() ? "?" : r.mode) << std::setw(8) << r.steps;
    os << std::setw(12) << std::fixed << std::setprecision(4) << r.final_l_ins;
    os << std::setw(12) << r.final_l_dense;
    os << std::setw(12) << r.final_total;
    if (r.miou >= 0.0)
      os << std::setw(10) << r.miou;
    else
      os << std::setw(10) << "-";
    os << "\n";
  }
  return os.str();
}

}  // namespace cp2
