#include "petrec/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>

namespace petrec {

using nlohmann::json;

std::string_view to_string(Profile p) { return p == Profile::Desk ? "desk" : "paper-shape"; }

Profile profile_from_string(std::string_view s) {
  if (s == "desk") return Profile::Desk;
  if (s == "paper-shape") return Profile::PaperShape;
  throw ConfigError("profile: expected \"desk\" or \"paper-shape\", got \"" + std::string(s) + "\"");
}

RunConfig default_config(Profile profile) {
  RunConfig c;
  c.profile = profile;
  if (profile == Profile::PaperShape) {
    // Full in-plane resolution and ten folds; short schedules because this
    // profile exercises shapes, not accuracy.
    c.n_subjects = 10;
    c.phantom.dims = {12, 256, 256};
    c.k_folds = 10;
    c.folds_used = {0};
    c.transgan.generator.height = 256;
    c.transgan.generator.width = 256;
    c.transgan.generator.patch_size = 16;
    c.transgan_hyper.steps = 40;
    c.transgan_hyper.batch_size = 2;
    c.transgan_hyper.eval_every = 20;
    c.sdam_hyper.steps = 20;
    c.sdam_hyper.batch_size = 2;
    c.sdam_hyper.eval_every = 10;
  }
  return c;
}

namespace {

json adam_json(const nn::AdamOptions& a) {
  return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}

nn::AdamOptions adam_from(const json& j) {
  return {j.at("lr").get<double>(), j.at("beta1").get<double>(), j.at("beta2").get<double>(),
          j.at("eps").get<double>()};
}

/// Every key of `doc` must exist in `schema` with a compatible type.
void check_against(const json& doc, const json& schema, const std::string& path) {
  const auto where = path.empty() ? std::string("config") : path;
  if (schema.is_object()) {
    if (!doc.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, value] : doc.items()) {
      const auto child = path.empty() ? key : path + "." + key;
      if (!schema.contains(key)) throw ConfigError(child + ": unknown key");
      check_against(value, schema.at(key), child);
    }
    return;
  }
  const bool ok = schema.is_boolean()           ? doc.is_boolean()
                  : schema.is_number_integer()  ? doc.is_number_integer()
                  : schema.is_number()          ? doc.is_number()
                  : schema.is_string()          ? doc.is_string()
                  : schema.is_array()           ? doc.is_array()
                                                : true;
  if (!ok) throw ConfigError(where + ": expected " + std::string(schema.type_name()) + ", got " + doc.type_name());
  if (schema.is_array())
    for (std::size_t i = 0; i < doc.size(); ++i)
      if (!doc[i].is_number_integer()) throw ConfigError(where + "[" + std::to_string(i) + "]: expected integer");
}

template <typename F>
auto rethrow_as_config(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace

json to_json(const RunConfig& c) {
  const auto& th = c.transgan_hyper;
  const auto& sh = c.sdam_hyper;
  return {
      {"profile", std::string(to_string(c.profile))},
      {"seed", c.seed},
      {"output_dir", c.output_dir.string()},
      {"data",
       {{"n_subjects", c.n_subjects},
        {"dose_fraction", c.dose_fraction},
        {"scale_counts", c.scale_counts},
        {"phantom",
         {{"dims", {c.phantom.dims.depth, c.phantom.dims.height, c.phantom.dims.width}},
          {"n_regions", c.phantom.n_regions},
          {"uptake_lo", c.phantom.uptake_lo},
          {"uptake_hi", c.phantom.uptake_hi},
          {"smoothing_sigma_vox", c.phantom.smoothing_sigma_vox},
          {"background_level", c.phantom.background_level}}}}},
      {"folds", {{"k", c.k_folds}, {"used", c.folds_used}}},
      {"transgan",
       {{"generator", to_json(c.transgan.generator)},
        {"discriminator", to_json(c.transgan.discriminator)},
        {"perceptual",
         {{"width_divisor", c.transgan.perceptual.width_divisor},
          {"weights_path", c.transgan.perceptual.weights_path},
          {"eps", c.transgan.perceptual.eps}}},
        {"train",
         {{"steps", th.steps},
          {"batch_size", th.batch_size},
          {"adam_g", adam_json(th.adam_g)},
          {"adam_d", adam_json(th.adam_d)},
          {"alpha", th.alpha},
          {"beta", th.beta},
          {"eval_every", th.eval_every}}}}},
      {"sdam",
       {{"model", to_json(c.sdam)},
        {"train", {{"steps", sh.steps}, {"batch_size", sh.batch_size}, {"adam", adam_json(sh.adam)}, {"eval_every", sh.eval_every}}}}},
      {"evaluation", {{"reference_region", c.reference_region}, {"plots", c.plots}}},
  };
}

RunConfig config_from_json(const json& doc, std::optional<Profile> profile_override,
                           const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw ConfigError("config: top level must be a JSON object");
  Profile profile = Profile::Desk;
  if (profile_override) profile = *profile_override;
  else if (doc.contains("profile")) {
    if (!doc.at("profile").is_string()) throw ConfigError("profile: expected string");
    profile = profile_from_string(doc.at("profile").get<std::string>());
  }

  json merged = to_json(default_config(profile));
  check_against(doc, merged, "");
  merged.merge_patch(doc);
  merged["profile"] = std::string(to_string(profile));

  RunConfig c;
  c.profile = profile;
  c.seed = merged.at("seed").get<std::uint64_t>();
  c.output_dir = merged.at("output_dir").get<std::string>();
  if (c.output_dir.is_relative() && !base_dir.empty()) c.output_dir = base_dir / c.output_dir;

  const auto& d = merged.at("data");
  c.n_subjects = d.at("n_subjects").get<Index>();
  c.dose_fraction = d.at("dose_fraction").get<double>();
  c.scale_counts = d.at("scale_counts").get<double>();
  const auto& p = d.at("phantom");
  const auto dims = p.at("dims");
  if (dims.size() != 3) throw ConfigError("data.phantom.dims: expected [depth, height, width]");
  c.phantom.dims = {dims[0].get<Index>(), dims[1].get<Index>(), dims[2].get<Index>()};
  c.phantom.n_regions = p.at("n_regions").get<int>();
  c.phantom.uptake_lo = p.at("uptake_lo").get<double>();
  c.phantom.uptake_hi = p.at("uptake_hi").get<double>();
  c.phantom.smoothing_sigma_vox = p.at("smoothing_sigma_vox").get<double>();
  c.phantom.background_level = p.at("background_level").get<double>();

  c.k_folds = merged.at("folds").at("k").get<int>();
  c.folds_used = merged.at("folds").at("used").get<std::vector<int>>();

  const auto& t = merged.at("transgan");
  from_json(t.at("generator"), c.transgan.generator);
  from_json(t.at("discriminator"), c.transgan.discriminator);
  c.transgan.perceptual.width_divisor = t.at("perceptual").at("width_divisor").get<Index>();
  c.transgan.perceptual.weights_path = t.at("perceptual").at("weights_path").get<std::string>();
  c.transgan.perceptual.eps = t.at("perceptual").at("eps").get<double>();
  if (!c.transgan.perceptual.weights_path.empty()) {
    std::filesystem::path w = c.transgan.perceptual.weights_path;
    if (w.is_relative() && !base_dir.empty()) c.transgan.perceptual.weights_path = (base_dir / w).string();
  }
  const auto& tt = t.at("train");
  c.transgan_hyper.steps = tt.at("steps").get<long>();
  c.transgan_hyper.batch_size = tt.at("batch_size").get<Index>();
  c.transgan_hyper.adam_g = adam_from(tt.at("adam_g"));
  c.transgan_hyper.adam_d = adam_from(tt.at("adam_d"));
  c.transgan_hyper.alpha = tt.at("alpha").get<double>();
  c.transgan_hyper.beta = tt.at("beta").get<double>();
  c.transgan_hyper.eps = c.transgan.perceptual.eps;
  c.transgan_hyper.eval_every = tt.at("eval_every").get<long>();

  const auto& s = merged.at("sdam");
  rethrow_as_config("sdam.model", [&] { from_json(s.at("model"), c.sdam); });
  c.sdam_hyper.steps = s.at("train").at("steps").get<long>();
  c.sdam_hyper.batch_size = s.at("train").at("batch_size").get<Index>();
  c.sdam_hyper.adam = adam_from(s.at("train").at("adam"));
  c.sdam_hyper.eval_every = s.at("train").at("eval_every").get<long>();

  c.reference_region = merged.at("evaluation").at("reference_region").get<int>();
  c.plots = merged.at("evaluation").at("plots").get<bool>();
  c.validate();
  return c;
}

void RunConfig::validate() const {
  if (n_subjects < 3) throw ConfigError("data.n_subjects: must be >= 3, got " + std::to_string(n_subjects));
  if (!(dose_fraction > 0.0 && dose_fraction <= 1.0))
    throw ConfigError("data.dose_fraction: must lie in (0, 1], got " + std::to_string(dose_fraction));
  if (!(scale_counts > 0.0)) throw ConfigError("data.scale_counts: must be > 0");
  rethrow_as_config("data", [&] { phantom.validate(); });
  if (k_folds < 3) throw ConfigError("folds.k: must be >= 3, got " + std::to_string(k_folds));
  if (k_folds > n_subjects)
    throw ConfigError("folds.k: " + std::to_string(k_folds) + " exceeds data.n_subjects=" + std::to_string(n_subjects));
  if (folds_used.empty()) throw ConfigError("folds.used: must list at least one test fold");
  std::set<int> seen;
  for (int f : folds_used) {
    if (f < 0 || f >= k_folds) throw ConfigError("folds.used: fold " + std::to_string(f) + " outside [0, k)");
    if (!seen.insert(f).second) throw ConfigError("folds.used: fold " + std::to_string(f) + " listed twice");
  }
  rethrow_as_config("transgan.generator", [&] { transgan.generator.validate(); });
  rethrow_as_config("transgan.discriminator", [&] { transgan.discriminator.validate(); });
  const auto& g = transgan.generator;
  if (g.height != phantom.dims.height || g.width != phantom.dims.width)
    throw ConfigError("transgan.generator: height x width " + std::to_string(g.height) + "x" + std::to_string(g.width) +
                      " must equal the phantom slice size " + std::to_string(phantom.dims.height) + "x" +
                      std::to_string(phantom.dims.width));
  if (g.height % 4 != 0 || g.width % 4 != 0)
    throw ConfigError("transgan.generator: height and width must be multiples of 4 for the perceptual encoders");
  const Index p = transgan.perceptual.width_divisor;
  if (p < 1 || 64 % p != 0) throw ConfigError("transgan.perceptual.width_divisor: must divide 64");
  if (!(transgan.perceptual.eps > 0.0)) throw ConfigError("transgan.perceptual.eps: must be > 0");
  if (!transgan.perceptual.weights_path.empty() && !std::filesystem::exists(transgan.perceptual.weights_path))
    throw ConfigError("transgan.perceptual.weights_path: file not found: " + transgan.perceptual.weights_path);
  const auto& th = transgan_hyper;
  if (th.steps < 0) throw ConfigError("transgan.train.steps: must be >= 0");
  if (th.batch_size < 1) throw ConfigError("transgan.train.batch_size: must be >= 1");
  if (th.eval_every < 1) throw ConfigError("transgan.train.eval_every: must be >= 1");
  if (th.alpha < 0.0 || th.beta < 0.0) throw ConfigError("transgan.train: alpha and beta must be >= 0");
  for (const auto* a : {&th.adam_g, &th.adam_d, &sdam_hyper.adam})
    if (!(a->lr > 0.0) || a->beta1 < 0.0 || a->beta1 >= 1.0 || a->beta2 < 0.0 || a->beta2 >= 1.0 || !(a->eps > 0.0))
      throw ConfigError("adam options: need lr > 0, betas in [0, 1), eps > 0");
  rethrow_as_config("sdam.model", [&] { sdam.validate(); });
  const Index factor = Index{1} << (sdam.unet_depth - 1);
  if (phantom.dims.height % factor != 0 || phantom.dims.width % factor != 0)
    throw ConfigError("sdam.model.unet_depth: slice size must be divisible by " + std::to_string(factor));
  if (sdam_hyper.steps < 0) throw ConfigError("sdam.train.steps: must be >= 0");
  if (sdam_hyper.batch_size < 1) throw ConfigError("sdam.train.batch_size: must be >= 1");
  if (sdam_hyper.eval_every < 1) throw ConfigError("sdam.train.eval_every: must be >= 1");
  if (reference_region < 1 || reference_region > phantom.n_regions)
    throw ConfigError("evaluation.reference_region: must lie in [1, n_regions]");
  if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
}

RunConfig load_config(const std::filesystem::path& path, std::optional<Profile> profile_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  if (const char* env = std::getenv("PETREC_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0') throw ConfigError("PETREC_SEED: not an unsigned integer: " + std::string(env));
    if (!doc.is_object()) throw ConfigError("config: top level must be a JSON object");
    doc["seed"] = static_cast<std::uint64_t>(v);
  }
  return config_from_json(doc, profile_override, path.parent_path());
}

std::string config_hash(const RunConfig& cfg) {
  const std::string text = to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) h = (h ^ ch) * 0x100000001b3ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace petrec
