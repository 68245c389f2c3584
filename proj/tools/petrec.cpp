#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "petrec/pipeline.hpp"

namespace {

struct Common {
  std::string config;
  std::string profile;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run configuration (JSON)")->required();
  cmd->add_option("--profile", c.profile, "Default profile")->check(CLI::IsMember({"desk", "paper-shape"}));
  cmd->add_flag("--force", c.force, "Overwrite existing outputs");
}

petrec::RunConfig load(const Common& c) {
  std::optional<petrec::Profile> profile;
  if (!c.profile.empty()) profile = petrec::profile_from_string(c.profile);
  return petrec::load_config(c.config, profile);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-dose PET reconstruction: phantom data, two-phase training, evaluation and SUVR reporting"};
  app.require_subcommand(1);

  Common gen_opts, train_opts, eval_opts, suvr_opts, info_opts;
  std::string phase = "all";
  auto* gen = app.add_subcommand("generate-data", "Synthesize paired full/low-dose phantoms");
  add_common(gen, gen_opts);
  auto* train = app.add_subcommand("train", "Train transGAN, then SDAM, over the configured folds");
  add_common(train, train_opts);
  train->add_option("--phase", phase, "transgan, sdam or all")->check(CLI::IsMember({"transgan", "sdam", "all"}));
  auto* eval = app.add_subcommand("evaluate", "Score test folds and write the run manifest and plots");
  add_common(eval, eval_opts);
  auto* suvr = app.add_subcommand("suvr-report", "SUVR tables and Bland-Altman agreement from evaluated volumes");
  add_common(suvr, suvr_opts);
  auto* info = app.add_subcommand("info", "Resolved configuration, parameter counts and artifact status");
  add_common(info, info_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    nlohmann::json out;
    if (gen->parsed()) {
      out = petrec::cmd_generate_data(load(gen_opts), gen_opts.force, &std::cerr);
    } else if (train->parsed()) {
      const auto cfg = load(train_opts);
      out = nlohmann::json::array();
      if (phase != "sdam") out.push_back(petrec::cmd_train(cfg, petrec::Phase::Transgan, train_opts.force, &std::cerr));
      if (phase != "transgan") out.push_back(petrec::cmd_train(cfg, petrec::Phase::Sdam, train_opts.force, &std::cerr));
    } else if (eval->parsed()) {
      out = petrec::cmd_evaluate(load(eval_opts), eval_opts.force, &std::cerr);
    } else if (suvr->parsed()) {
      out = petrec::cmd_suvr_report(load(suvr_opts), suvr_opts.force, &std::cerr);
    } else if (info->parsed()) {
      out = petrec::cmd_info(load(info_opts));
    }
    std::cout << out.dump(2) << std::endl;
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "petrec: " << e.what() << std::endl;
    return petrec::exit_code_for(e);
  }
}
