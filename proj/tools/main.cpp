#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cp2/compose.hpp"
#include "cp2/config.hpp"
#include "cp2/dataset.hpp"
#include "cp2/evalseg.hpp"
#include "cp2/report.hpp"
#include "cp2/trainer.hpp"
#include "cp2/viz.hpp"

namespace {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

cp2::ExperimentConfig load_config(const std::string& path,
                                  const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw cp2::InvalidConfig("cannot open config file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();

  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error&) {
    // Re-parse through the library for the line/column diagnostic.
    cp2::parse_config_text(ss.str(), path);
    throw;  // unreachable
  }
  for (const auto& o : overrides) doc = cp2::apply_override(doc, o);
  return cp2::config_from_json(doc);
}

int cmd_preview_compose(const cp2::ExperimentConfig& cfg, const std::string& out_dir, int n) {
  cp2::ExperimentConfig resolved = cfg;
  cp2::resolve_external_masks(resolved);
  fs::create_directories(out_dir);
  std::vector<cp2::Image> corpus = cp2::build_pretrain_corpus(resolved);
  if (corpus.size() < 3) throw cp2::InvalidConfig("preview needs at least 3 corpus images");

  const std::vector<cp2::MaskFamily> families =
      resolved.masks.family == cp2::MaskFamily::external
          ? std::vector<cp2::MaskFamily>{cp2::MaskFamily::external}
          : std::vector<cp2::MaskFamily>{cp2::MaskFamily::rectangular, cp2::MaskFamily::polygon,
                                         cp2::MaskFamily::blocks, cp2::MaskFamily::patches};

  cp2::Rng rng(resolved.master_seed);
  for (const auto family : families) {
    cp2::MaskConfig mask_cfg = resolved.masks;
    mask_cfg.family = family;
    std::vector<cp2::ComposedPair> pairs;
    for (int i = 0; i < n; ++i) {
      const int fg = static_cast<int>(rng.uniform_int(corpus.size()));
      int ba = fg, bb = fg;
      while (ba == fg) ba = static_cast<int>(rng.uniform_int(corpus.size()));
      while (bb == fg || bb == ba) bb = static_cast<int>(rng.uniform_int(corpus.size()));
      pairs.push_back(cp2::make_composed_pair(
          corpus[static_cast<std::size_t>(fg)], corpus[static_cast<std::size_t>(ba)],
          corpus[static_cast<std::size_t>(bb)], resolved.augment, mask_cfg,
          resolved.model.stride, rng, std::to_string(fg)));
    }
    const std::string path =
        (fs::path(out_dir) / (std::string("compose_") + cp2::mask_family_name(family) + ".png"))
            .string();
    cp2::write_compose_preview(path, pairs);
    std::cout << "wrote " << path << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"copy-paste contrastive pretraining for semantic segmentation"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  const auto add_config_opts = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config file (JSON)")->required();
    cmd->add_option("--set", overrides, "override: section.key=value (repeatable)");
  };

  auto* c_pretrain = app.add_subcommand("pretrain", "pretrain with the configured loss mode");
  add_config_opts(c_pretrain);

  auto* c_quicktune = app.add_subcommand("quicktune", "short tuning on top of a checkpoint");
  add_config_opts(c_quicktune);
  std::string qt_init;
  c_quicktune->add_option("--init", qt_init, "initialization checkpoint (overrides config)");

  auto* c_finetune = app.add_subcommand("finetune", "supervised finetuning on the synthetic task");
  add_config_opts(c_finetune);
  std::string ft_init = "random";
  c_finetune->add_option("--init", ft_init, "checkpoint path or 'random'");

  auto* c_eval = app.add_subcommand("eval", "evaluate a finetuned checkpoint (mIoU)");
  add_config_opts(c_eval);
  std::string eval_model;
  c_eval->add_option("--model", eval_model, "finetuned checkpoint")->required();

  auto* c_preview = app.add_subcommand("preview-compose", "write composed-pair preview grids");
  add_config_opts(c_preview);
  std::string preview_out = "previews";
  int preview_n = 4;
  c_preview->add_option("--out", preview_out, "output directory");
  c_preview->add_option("--n", preview_n, "pairs per mask family");

  auto* c_report = app.add_subcommand("report", "aggregate runs into a comparison table");
  std::vector<std::string> report_dirs;
  std::string report_out;
  c_report->add_option("runs", report_dirs, "run directories")->required();
  c_report->add_option("--out", report_out, "also write the table to this file");

  auto* c_gendata = app.add_subcommand("gen-data", "write the synthetic dataset to disk");
  add_config_opts(c_gendata);
  std::string gendata_out = "dataset";
  std::string gendata_split = "val";
  c_gendata->add_option("--out", gendata_out, "output directory");
  c_gendata->add_option("--split", gendata_split, "train or val")->check(CLI::IsMember({"train", "val"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (c_pretrain->parsed()) {
      const auto cfg = load_config(config_path, overrides);
      const auto result = cp2::run_pretrain(cfg);
      std::cout << "checkpoint: " << result.checkpoint_path << "\n";
      return kExitOk;
    }
    if (c_quicktune->parsed()) {
      const auto cfg = load_config(config_path, overrides);
      const std::string init = qt_init.empty() ? cfg.quicktune.init_checkpoint : qt_init;
      if (init.empty())
        throw cp2::InvalidConfig("quicktune needs --init or quicktune.init_checkpoint");
      const auto result = cp2::run_quick_tune(cfg, init);
      std::cout << "checkpoint: " << result.checkpoint_path << "\n";
      return kExitOk;
    }
    if (c_finetune->parsed()) {
      const auto cfg = load_config(config_path, overrides);
      cp2::FinetuneInit init;
      if (ft_init == "random") {
        init.kind = cp2::FinetuneInit::Kind::random;
      } else {
        init.kind = cp2::FinetuneInit::Kind::checkpoint;
        init.checkpoint_path = ft_init;
      }
      const auto result = cp2::run_finetune(cfg, init);
      std::cout << "checkpoint: " << result.checkpoint_path << "\n";
      return kExitOk;
    }
    if (c_eval->parsed()) {
      const auto cfg = load_config(config_path, overrides);
      const auto rep = cp2::run_eval(cfg, eval_model);
      std::cout << "miou: " << rep.miou << "\n";
      return kExitOk;
    }
    if (c_preview->parsed()) {
      const auto cfg = load_config(config_path, overrides);
      return cmd_preview_compose(cfg, preview_out, preview_n);
    }
    if (c_report->parsed()) {
      std::vector<cp2::RunSummary> rows;
      for (const auto& dir : report_dirs) rows.push_back(cp2::summarize_run(dir));
      const std::string table = cp2::format_comparison_table(rows);
      std::cout << table;
      if (!report_out.empty()) {
        std::ofstream os(report_out);
        os << table;
        if (!os) throw cp2::IOFailure("cannot write report table: " + report_out);
      }
      return kExitOk;
    }
    if (c_gendata->parsed()) {
      const auto cfg = load_config(config_path, overrides);
      const auto samples = gendata_split == "train" ? cp2::make_train_split(cfg)
                                                    : cp2::make_val_split(cfg);
      cp2::save_dataset(gendata_out, samples, cfg.evalseg.num_classes);
      std::cout << "wrote " << samples.size() << " samples to " << gendata_out << "\n";
      return kExitOk;
    }
  } catch (const cp2::InvalidConfig& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
