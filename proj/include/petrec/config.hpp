#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "petrec/phantom.hpp"
#include "petrec/sdam.hpp"
#include "petrec/transgan.hpp"

namespace petrec {

enum class Profile { Desk, PaperShape };

std::string_view to_string(Profile p);
Profile profile_from_string(std::string_view s);

/// Everything a run needs. Loaded from one JSON document whose keys mirror
/// to_json(RunConfig); missing keys take the profile defaults.
struct RunConfig {
  Profile profile = Profile::Desk;
  std::uint64_t seed = 20240501;

  // data
  Index n_subjects = 6;
  PhantomSpec phantom;
  double dose_fraction = 0.05;
  double scale_counts = 100.0;

  // cross-validation
  int k_folds = 6;
  std::vector<int> folds_used{0, 1};

  // models
  TransganConfig transgan;
  TransganHyper transgan_hyper;
  SdamConfig sdam;
  SdamHyper sdam_hyper;

  // evaluation / output
  int reference_region = 1;
  bool plots = true;
  std::filesystem::path output_dir = "petrec_out";

  /// Throws ConfigError naming the offending key.
  void validate() const;
};

RunConfig default_config(Profile profile);

nlohmann::json to_json(const RunConfig& cfg);

/// Overlays `doc` on the defaults of the selected profile. Unknown keys and
/// type mismatches raise ConfigError with the JSON path. The profile is taken
/// from `profile_override`, else doc["profile"], else desk. Relative
/// output_dir / weights paths resolve against `base_dir`.
RunConfig config_from_json(const nlohmann::json& doc, std::optional<Profile> profile_override = std::nullopt,
                           const std::filesystem::path& base_dir = {});

/// Reads a config file; PETREC_SEED, when set, overrides the seed.
RunConfig load_config(const std::filesystem::path& path, std::optional<Profile> profile_override = std::nullopt);

/// Stable FNV-1a hash (hex) of the canonical JSON serialisation.
std::string config_hash(const RunConfig& cfg);

}  // namespace petrec
