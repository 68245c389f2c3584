#include "petrec/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "petrec/folds.hpp"
#include "petrec/metrics.hpp"
#include "petrec/nn/checkpoint.hpp"
#include "petrec/phantom.hpp"
#include "petrec/plots.hpp"
#include "petrec/suvr.hpp"
#include "petrec/volume_io.hpp"

namespace petrec {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> subject_ids(Index n) {
  std::vector<std::string> ids;
  for (Index i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "sub-%03lld", static_cast<long long>(i));
    ids.emplace_back(buf);
  }
  return ids;
}

ParameterCounts count_model_parameters(const RunConfig& cfg) {
  ParameterCounts p;
  Generator<float> g(cfg.transgan.generator, 0);
  Discriminator<float> d(cfg.transgan.discriminator, 0);
  Sdam<float> s(cfg.sdam, 0);
  PerceptualEncoder<float> v16(VggTopology::Vgg16, cfg.transgan.perceptual.width_divisor, 0);
  PerceptualEncoder<float> v19(VggTopology::Vgg19, cfg.transgan.perceptual.width_divisor, 0);
  p.generator = nn::count_parameters(g);
  p.discriminator = nn::count_parameters(d);
  p.sdam = nn::count_parameters(s);
  p.perceptual_trainable = nn::count_parameters(v16) + nn::count_parameters(v19);
  return p;
}

json to_json(const ParameterCounts& p) {
  return {{"generator", p.generator},
          {"discriminator", p.discriminator},
          {"sdam", p.sdam},
          {"perceptual_trainable", p.perceptual_trainable},
          {"total", p.total()}};
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const OverwriteRefused*>(&e)) return 2;
  if (dynamic_cast<const MissingPrerequisite*>(&e)) return 3;
  return 4;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void say(std::ostream* log, const std::string& line) {
  if (log) *log << line << std::endl;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingPrerequisite("cannot read " + path.string());
  return json::parse(in);
}

void require_file(const fs::path& path, const std::string& hint) {
  if (!fs::exists(path)) throw MissingPrerequisite("missing " + path.string() + ": " + hint);
}

void refuse_overwrite(const fs::path& path, bool force) {
  if (!force && fs::exists(path))
    throw OverwriteRefused(path.string() + " already exists; pass --force to overwrite");
}

json data_section(const RunConfig& cfg) {
  json j = to_json(cfg).at("data");
  j["seed"] = cfg.seed;
  return j;
}

struct Subject {
  std::string id;
  Volume3D fpet, lpet;
  LabelVolume atlas;
};

/// Loads the dataset, checking it was generated from the same data settings.
std::map<std::string, Subject> load_dataset(const RunConfig& cfg) {
  const Layout layout(cfg.output_dir);
  require_file(layout.data_manifest(), "run `petrec generate-data` first");
  const json manifest = read_json(layout.data_manifest());
  if (manifest.value("data", json()) != data_section(cfg))
    throw MissingPrerequisite(layout.data_manifest().string() +
                              " was generated with different data settings; rerun `petrec generate-data --force`");
  std::map<std::string, Subject> out;
  for (const auto& id : subject_ids(cfg.n_subjects)) {
    const fs::path dir = layout.subject_dir(id);
    for (const char* f : {"fpet.pvol", "lpet.pvol", "atlas.pvol"}) require_file(dir / f, "rerun `petrec generate-data --force`");
    out[id] = {id, read_volume(dir / "fpet.pvol"), read_volume(dir / "lpet.pvol"), read_labels(dir / "atlas.pvol")};
  }
  return out;
}

FoldAssignment folds_for(const RunConfig& cfg) {
  return make_folds(subject_ids(cfg.n_subjects), cfg.k_folds, derive_seed(cfg.seed, "folds"));
}

std::uint64_t fold_seed(const RunConfig& cfg, const char* phase, int fold) {
  return derive_seed(derive_seed(cfg.seed, phase), static_cast<std::uint64_t>(fold));
}

std::vector<PairedSubject> paired(const std::map<std::string, Subject>& data, const std::vector<std::string>& ids) {
  std::vector<PairedSubject> out;
  for (const auto& id : ids) {
    const auto& s = data.at(id);
    out.push_back({s.lpet, s.fpet, s.atlas});
  }
  return out;
}

std::unique_ptr<Generator<float>> load_generator(const fs::path& path, double* norm_scale) {
  const auto ckpt = nn::read_checkpoint(path);
  GeneratorConfig gc;
  from_json(ckpt.meta.at("generator"), gc);
  auto gen = std::make_unique<Generator<float>>(gc, 0);
  ckpt.restore(*gen);
  if (norm_scale) *norm_scale = ckpt.meta.at("norm_scale").get<double>();
  return gen;
}

std::unique_ptr<Sdam<float>> load_sdam(const fs::path& path) {
  const auto ckpt = nn::read_checkpoint(path);
  SdamConfig sc;
  from_json(ckpt.meta.at("sdam"), sc);
  auto model = std::make_unique<Sdam<float>>(sc, 0);
  ckpt.restore(*model);
  return model;
}

std::string csv_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string validation_csv(const std::vector<ValidationPoint>& points) {
  std::string s = "step,psnr_db\n";
  for (const auto& p : points) s += std::to_string(p.step) + "," + csv_number(p.psnr_db) + "\n";
  return s;
}

// ------------------------------------------------------------------ training phases

json train_transgan_fold(const RunConfig& cfg, const std::map<std::string, Subject>& data, const FoldRoles& roles,
                         PerceptualPair<float>& encoders, std::ostream* log) {
  const Layout layout(cfg.output_dir);
  const int t = roles.test_fold;
  TransganHyper hyper = cfg.transgan_hyper;
  hyper.seed = fold_seed(cfg, "transgan", t);
  say(log, "fold " + std::to_string(t) + ": training transGAN on " + std::to_string(roles.train.size()) +
               " subjects for " + std::to_string(hyper.steps) + " steps");
  const auto t0 = Clock::now();
  auto res = train_transgan(paired(data, roles.train), paired(data, roles.validation), cfg.transgan, hyper, encoders);
  const double secs = seconds_since(t0);

  json meta{{"kind", "transgan"},
            {"fold", t},
            {"seed", hyper.seed},
            {"norm_scale", res.norm_scale},
            {"best_step", res.best_step},
            {"best_val_psnr", res.best_val_psnr},
            {"generator", to_json(cfg.transgan.generator)},
            {"train_seconds", secs},
            {"config_hash", config_hash(cfg)}};
  nn::write_checkpoint(layout.transgan_ckpt(t), nn::Checkpoint::capture(*res.generator, meta));

  std::string hist = "step,l_gan_d,l_gan_g,l_charbonnier,l_perceptual,l_total_g\n";
  for (const auto& b : res.history)
    hist += std::to_string(b.step) + "," + csv_number(b.l_gan_d) + "," + csv_number(b.l_gan_g) + "," +
            csv_number(b.l_charbonnier) + "," + csv_number(b.l_perceptual) + "," + csv_number(b.l_total_g) + "\n";
  write_text(layout.fold_dir(t) / "transgan_history.csv", hist);
  write_text(layout.fold_dir(t) / "transgan_validation.csv", validation_csv(res.validation));
  say(log, "fold " + std::to_string(t) + ": best validation PSNR " + csv_number(res.best_val_psnr) + " dB at step " +
               std::to_string(res.best_step));
  return {{"fold", t}, {"best_step", res.best_step}, {"best_val_psnr", res.best_val_psnr}, {"seconds", secs}};
}

json train_sdam_fold(const RunConfig& cfg, const std::map<std::string, Subject>& data, const FoldRoles& roles,
                     std::ostream* log) {
  const Layout layout(cfg.output_dir);
  const int t = roles.test_fold;
  require_file(layout.transgan_ckpt(t), "run `petrec train --phase transgan` first");
  double scale = 1.0;
  auto gen = load_generator(layout.transgan_ckpt(t), &scale);
  const auto generated = [&](const std::vector<std::string>& ids) {
    std::vector<GeneratedSubject> out;
    for (const auto& id : ids) {
      const auto& s = data.at(id);
      out.push_back({generate_volume(*gen, s.lpet, scale), s.fpet, s.atlas});
    }
    return out;
  };
  SdamHyper hyper = cfg.sdam_hyper;
  hyper.seed = fold_seed(cfg, "sdam", t);
  say(log, "fold " + std::to_string(t) + ": training SDAM for " + std::to_string(hyper.steps) + " steps");
  const auto t0 = Clock::now();
  auto res = train_sdam(generated(roles.train), generated(roles.validation), cfg.sdam, hyper, scale);
  const double secs = seconds_since(t0);

  json meta{{"kind", "sdam"},
            {"fold", t},
            {"seed", hyper.seed},
            {"norm_scale", scale},
            {"best_step", res.best_step},
            {"best_val_psnr", res.best_val_psnr},
            {"sdam", to_json(cfg.sdam)},
            {"train_seconds", secs},
            {"config_hash", config_hash(cfg)}};
  nn::write_checkpoint(layout.sdam_ckpt(t), nn::Checkpoint::capture(*res.model, meta));
  std::string hist = "step,l_sdam\n";
  for (std::size_t i = 0; i < res.history.size(); ++i) hist += std::to_string(i + 1) + "," + csv_number(res.history[i]) + "\n";
  write_text(layout.fold_dir(t) / "sdam_history.csv", hist);
  write_text(layout.fold_dir(t) / "sdam_validation.csv", validation_csv(res.validation));
  say(log, "fold " + std::to_string(t) + ": best validation PSNR " + csv_number(res.best_val_psnr) + " dB at step " +
               std::to_string(res.best_step));
  return {{"fold", t}, {"best_step", res.best_step}, {"best_val_psnr", res.best_val_psnr}, {"seconds", secs}};
}

// ------------------------------------------------------------------ evaluation helpers

const char* const kMethods[] = {"lpet", "generated", "refined"};

json mean_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return {{"mean", mean}, {"std", sd}, {"n", v.size()}};
}

struct MetricSeries {
  // Per-subject values, plus every slice pooled across subjects.
  std::map<std::string, std::vector<double>> psnr, ssim, vsmd, slice_psnr, slice_ssim;

  void add(const std::string& method, const MetricsReport& r) {
    psnr[method].push_back(r.psnr_db);
    ssim[method].push_back(r.ssim);
    vsmd[method].push_back(r.vsmd);
    auto& sp = slice_psnr[method];
    sp.insert(sp.end(), r.psnr_slices.begin(), r.psnr_slices.end());
    auto& ss = slice_ssim[method];
    ss.insert(ss.end(), r.ssim_slices.begin(), r.ssim_slices.end());
  }

  json summary() const {
    json j = json::object();
    for (const auto& [method, v] : psnr)
      j[method] = {{"psnr_db", mean_std(v)},
                   {"ssim", mean_std(ssim.at(method))},
                   {"vsmd", mean_std(vsmd.at(method))},
                   {"per_slice", {{"psnr_db", mean_std(slice_psnr.at(method))}, {"ssim", mean_std(slice_ssim.at(method))}}}};
    return j;
  }
};

const std::map<std::string, Rgb> kMethodColors{
    {"lpet", {120, 120, 120}}, {"generated", {30, 90, 220}}, {"refined", {220, 40, 40}}};

}  // namespace

// ------------------------------------------------------------------ commands

json cmd_generate_data(const RunConfig& cfg, bool force, std::ostream* log) {
  cfg.validate();
  const Layout layout(cfg.output_dir);
  refuse_overwrite(layout.data_manifest(), force);
  json subjects = json::array();
  for (const auto& id : subject_ids(cfg.n_subjects)) {
    const auto phantom_seed = derive_seed(cfg.seed, "phantom/" + id);
    const auto lowdose_seed = derive_seed(cfg.seed, "lowdose/" + id);
    const Phantom ph = generate_phantom(cfg.phantom, phantom_seed, id);
    const Volume3D lpet = simulate_low_dose(ph.fpet, cfg.dose_fraction, cfg.scale_counts, lowdose_seed);
    const fs::path dir = layout.subject_dir(id);
    fs::create_directories(dir);
    write_volume(ph.fpet, dir / "fpet.pvol");
    write_volume(lpet, dir / "lpet.pvol");
    write_labels(ph.atlas, dir / "atlas.pvol");
    subjects.push_back({{"subject_id", id}, {"phantom_seed", phantom_seed}, {"lowdose_seed", lowdose_seed}});
    say(log, "wrote " + dir.string());
  }
  const json manifest{{"config_hash", config_hash(cfg)},
                      {"seed", cfg.seed},
                      {"dose_fraction", cfg.dose_fraction},
                      {"scale_counts", cfg.scale_counts},
                      {"data", data_section(cfg)},
                      {"subjects", subjects}};
  write_json(layout.data_manifest(), manifest);
  return manifest;
}

json cmd_train(const RunConfig& cfg, Phase phase, bool force, std::ostream* log) {
  cfg.validate();
  const Layout layout(cfg.output_dir);
  const auto data = load_dataset(cfg);
  const auto folds = folds_for(cfg);
  for (int t : cfg.folds_used) {
    if (phase == Phase::Transgan) refuse_overwrite(layout.transgan_ckpt(t), force);
    else {
      require_file(layout.transgan_ckpt(t), "run `petrec train --phase transgan` first");
      refuse_overwrite(layout.sdam_ckpt(t), force);
    }
  }

  json summary{{"phase", phase == Phase::Transgan ? "transgan" : "sdam"}, {"folds", json::array()}};
  std::unique_ptr<PerceptualPair<float>> encoders;
  if (phase == Phase::Transgan)
    encoders = std::make_unique<PerceptualPair<float>>(cfg.transgan.perceptual, derive_seed(cfg.seed, "perceptual"));
  for (int t : cfg.folds_used) {
    const FoldRoles roles = folds.roles(t);
    fs::create_directories(layout.fold_dir(t));
    if (phase == Phase::Transgan) {
      // A new generator invalidates any SDAM trained on the old one.
      fs::remove(layout.sdam_ckpt(t));
      summary["folds"].push_back(train_transgan_fold(cfg, data, roles, *encoders, log));
    } else {
      summary["folds"].push_back(train_sdam_fold(cfg, data, roles, log));
    }
  }
  return summary;
}

json cmd_evaluate(const RunConfig& cfg, bool force, std::ostream* log) {
  cfg.validate();
  const Layout layout(cfg.output_dir);
  const auto t_start = Clock::now();
  for (int t : cfg.folds_used) {
    require_file(layout.transgan_ckpt(t), "run `petrec train --phase transgan` first");
    require_file(layout.sdam_ckpt(t), "run `petrec train --phase sdam` first");
  }
  refuse_overwrite(layout.eval_manifest(), force);
  const auto data = load_dataset(cfg);
  const auto folds = folds_for(cfg);

  json fold_reports = json::array();
  MetricSeries all;
  std::map<std::string, std::vector<std::pair<SUVRTable, SUVRTable>>> suvr_pairs;
  std::vector<SUVRTable> suvr_tables;
  std::string metrics_csv = "fold,subject_id,method,psnr_db,ssim,vsmd\n";
  json timing = json::object();

  for (int t : cfg.folds_used) {
    const FoldRoles roles = folds.roles(t);
    double scale = 1.0;
    auto gen = load_generator(layout.transgan_ckpt(t), &scale);
    auto sdam = load_sdam(layout.sdam_ckpt(t));
    timing["fold" + std::to_string(t)] = {
        {"transgan_train_seconds", nn::read_checkpoint(layout.transgan_ckpt(t)).meta.value("train_seconds", 0.0)},
        {"sdam_train_seconds", nn::read_checkpoint(layout.sdam_ckpt(t)).meta.value("train_seconds", 0.0)}};
    MetricSeries fold_series;
    json per_subject = json::array();
    for (const auto& id : roles.test) {
      const auto& s = data.at(id);
      say(log, "fold " + std::to_string(t) + ": evaluating " + id);
      const Volume3D generated = generate_volume(*gen, s.lpet, scale);
      const Volume3D refined = refine_volume(*sdam, generated, scale);
      const fs::path vdir = layout.eval_dir() / "volumes" / id;
      fs::create_directories(vdir);
      write_volume(generated, vdir / "generated.pvol");
      write_volume(refined, vdir / "refined.pvol");

      const Mask mask = brain_mask(s.atlas);
      const double range = masked_dynamic_range(s.fpet, mask);
      const std::map<std::string, const Volume3D*> vols{{"lpet", &s.lpet}, {"generated", &generated}, {"refined", &refined}};
      const ROIAtlas atlas = ROIAtlas::from_labels(s.atlas, cfg.reference_region);
      const SUVRTable truth = compute_suvr(s.fpet, atlas);
      suvr_tables.push_back(truth);
      json subj{{"subject_id", id}};
      for (const char* m : kMethods) {
        const MetricsReport r = evaluate_volume(s.fpet, *vols.at(m), mask, range);
        fold_series.add(m, r);
        all.add(m, r);
        subj[m] = to_json(r);
        metrics_csv += std::to_string(t) + "," + id + "," + m + "," + csv_number(r.psnr_db) + "," + csv_number(r.ssim) +
                       "," + csv_number(r.vsmd) + "\n";
        SUVRTable table = compute_suvr(*vols.at(m), atlas);
        table.modality = vols.at(m)->modality;
        if (std::string(m) == "lpet") table.modality = Modality::LPET;
        suvr_tables.push_back(table);
        suvr_pairs[m].push_back({table, truth});
        if (cfg.plots) {
          const Index c = s.fpet.dims.depth / 2;
          write_ppm(difference_map(Image(s.fpet.slice(c)), Image(vols.at(m)->slice(c)), range),
                    layout.eval_dir() / "plots" / ("diff_" + id + "_" + m + ".ppm"));
        }
      }
      per_subject.push_back(subj);
    }
    fold_reports.push_back({{"fold", t},
                            {"validation_fold", roles.validation_fold},
                            {"train_subjects", roles.train},
                            {"validation_subjects", roles.validation},
                            {"test_subjects", roles.test},
                            {"metrics", fold_series.summary()},
                            {"per_subject", per_subject}});
  }

  json agreement = json::object();
  std::vector<ScatterSeries> series;
  for (const char* m : kMethods) {
    const AgreementReport rep = agreement_report(suvr_pairs.at(m));
    agreement[m] = to_json(rep.stats);
    write_text(layout.eval_dir() / ("scatter_" + std::string(m) + ".csv"), scatter_csv(rep.points));
    series.push_back({rep.points, rep.stats, kMethodColors.at(m)});
  }
  if (cfg.plots) write_ppm(bland_altman_plot(series), layout.eval_dir() / "plots" / "bland_altman.ppm");
  write_text(layout.eval_dir() / "metrics.csv", metrics_csv);
  write_text(layout.eval_dir() / "suvr.csv", suvr_csv(suvr_tables));

  timing["evaluate_seconds"] = seconds_since(t_start);
  json manifest{{"config_hash", config_hash(cfg)},
                {"profile", std::string(to_string(cfg.profile))},
                {"seeds",
                 {{"master", cfg.seed},
                  {"folds", derive_seed(cfg.seed, "folds")},
                  {"perceptual", derive_seed(cfg.seed, "perceptual")}}},
                {"dose_fraction", cfg.dose_fraction},
                {"k_folds", cfg.k_folds},
                {"folds", fold_reports},
                {"summary", all.summary()},
                {"suvr_agreement", agreement},
                {"parameters", to_json(count_model_parameters(cfg))},
                {"timing", timing}};
  for (int t : cfg.folds_used) {
    manifest["seeds"]["transgan_fold" + std::to_string(t)] = fold_seed(cfg, "transgan", t);
    manifest["seeds"]["sdam_fold" + std::to_string(t)] = fold_seed(cfg, "sdam", t);
  }
  write_json(layout.eval_manifest(), manifest);
  return manifest;
}

json cmd_suvr_report(const RunConfig& cfg, bool force, std::ostream* log) {
  cfg.validate();
  const Layout layout(cfg.output_dir);
  require_file(layout.eval_manifest(), "run `petrec evaluate` first");
  refuse_overwrite(layout.report_dir() / "agreement.json", force);
  const auto data = load_dataset(cfg);
  const json eval = read_json(layout.eval_manifest());

  std::map<std::string, std::vector<std::pair<SUVRTable, SUVRTable>>> pairs;
  std::vector<SUVRTable> tables;
  json per_subject = json::object();
  for (const auto& fold : eval.at("folds")) {
    for (const auto& id_json : fold.at("test_subjects")) {
      const auto id = id_json.get<std::string>();
      const auto& s = data.at(id);
      const fs::path vdir = layout.eval_dir() / "volumes" / id;
      require_file(vdir / "refined.pvol", "rerun `petrec evaluate --force`");
      const Volume3D generated = read_volume(vdir / "generated.pvol");
      const Volume3D refined = read_volume(vdir / "refined.pvol");
      const ROIAtlas atlas = ROIAtlas::from_labels(s.atlas, cfg.reference_region);
      const SUVRTable truth = compute_suvr(s.fpet, atlas);
      tables.push_back(truth);
      const std::map<std::string, const Volume3D*> vols{{"lpet", &s.lpet}, {"generated", &generated}, {"refined", &refined}};
      for (const char* m : kMethods) {
        SUVRTable table = compute_suvr(*vols.at(m), atlas);
        if (std::string(m) == "lpet") table.modality = Modality::LPET;
        tables.push_back(table);
        pairs[m].push_back({table, truth});
        per_subject[id][m] = to_json(bland_altman(table, truth));
      }
      say(log, "SUVR tables for " + id);
    }
  }
  json pooled = json::object();
  std::vector<ScatterSeries> series;
  for (const char* m : kMethods) {
    const AgreementReport rep = agreement_report(pairs.at(m));
    pooled[m] = to_json(rep.stats);
    write_text(layout.report_dir() / ("scatter_" + std::string(m) + ".csv"), scatter_csv(rep.points));
    series.push_back({rep.points, rep.stats, kMethodColors.at(m)});
  }
  write_text(layout.report_dir() / "suvr.csv", suvr_csv(tables));
  if (cfg.plots) write_ppm(bland_altman_plot(series), layout.report_dir() / "bland_altman.ppm");
  const json report{{"reference_region", cfg.reference_region}, {"pooled", pooled}, {"per_subject", per_subject}};
  write_json(layout.report_dir() / "agreement.json", report);
  return report;
}

json cmd_info(const RunConfig& cfg) {
  const Layout layout(cfg.output_dir);
  json status{{"data", fs::exists(layout.data_manifest())}, {"evaluation", fs::exists(layout.eval_manifest())}};
  for (int t : cfg.folds_used)
    status["fold" + std::to_string(t)] = {{"transgan", fs::exists(layout.transgan_ckpt(t))},
                                          {"sdam", fs::exists(layout.sdam_ckpt(t))}};
  return {{"config_hash", config_hash(cfg)},
          {"config", to_json(cfg)},
          {"parameters", to_json(count_model_parameters(cfg))},
          {"status", status}};
}

json reproducible_fields(const json& manifest) {
  json out = manifest;
  out.erase("timing");
  return out;
}

}  // namespace petrec
