#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "petrec/config.hpp"

namespace petrec {

/// An earlier stage's output is missing or stale; what() names the artifact.
class MissingPrerequisite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A command would overwrite existing outputs and --force was not given.
class OverwriteRefused : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// On-disk layout below RunConfig::output_dir.
///
///   data/manifest.json, data/<subject>/{fpet,lpet,atlas}.pvol
///   folds/fold<t>/{transgan,sdam}.ckpt, {transgan,sdam}_{history,validation}.csv
///   eval/manifest.json, eval/*.csv, eval/volumes/<subject>/*.pvol, eval/plots/*.ppm
///   report/*  (suvr-report)
struct Layout {
  std::filesystem::path root;

  explicit Layout(std::filesystem::path r) : root(std::move(r)) {}
  std::filesystem::path data_dir() const { return root / "data"; }
  std::filesystem::path data_manifest() const { return data_dir() / "manifest.json"; }
  std::filesystem::path subject_dir(const std::string& id) const { return data_dir() / id; }
  std::filesystem::path fold_dir(int t) const { return root / "folds" / ("fold" + std::to_string(t)); }
  std::filesystem::path transgan_ckpt(int t) const { return fold_dir(t) / "transgan.ckpt"; }
  std::filesystem::path sdam_ckpt(int t) const { return fold_dir(t) / "sdam.ckpt"; }
  std::filesystem::path eval_dir() const { return root / "eval"; }
  std::filesystem::path eval_manifest() const { return eval_dir() / "manifest.json"; }
  std::filesystem::path report_dir() const { return root / "report"; }
};

/// "sub-000", "sub-001", ...
std::vector<std::string> subject_ids(Index n);

enum class Phase { Transgan, Sdam };

struct ParameterCounts {
  Index generator = 0;
  Index discriminator = 0;
  Index sdam = 0;
  Index perceptual_trainable = 0;  // frozen encoders: always 0
  Index total() const { return generator + discriminator + sdam; }
};

/// Trainable parameter counts of the models described by cfg.
ParameterCounts count_model_parameters(const RunConfig& cfg);
nlohmann::json to_json(const ParameterCounts& p);

/// Each command returns a JSON summary. `log` receives progress lines.
nlohmann::json cmd_generate_data(const RunConfig& cfg, bool force, std::ostream* log = nullptr);
nlohmann::json cmd_train(const RunConfig& cfg, Phase phase, bool force, std::ostream* log = nullptr);
nlohmann::json cmd_evaluate(const RunConfig& cfg, bool force, std::ostream* log = nullptr);
nlohmann::json cmd_suvr_report(const RunConfig& cfg, bool force, std::ostream* log = nullptr);
nlohmann::json cmd_info(const RunConfig& cfg);

/// Manifest sections that must match between identically seeded runs
/// (everything except wall-clock timings and paths).
nlohmann::json reproducible_fields(const nlohmann::json& manifest);

/// Process exit code for an exception escaping a command: 2 config error or
/// refused overwrite, 3 missing prerequisite, 4 anything else.
int exit_code_for(const std::exception& e);

}  // namespace petrec
