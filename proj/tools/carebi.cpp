// Command line front end. Exit codes: 0 ok, 1 user error (bad input,
// missing artifact, bad flag), 2 internal error (numeric failure, bug).

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "carebi/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"CareBI: caregiver burden index pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path,
                 "pipeline config, JSON with // comments allowed")
      ->required();
  app.add_option("--out", out_dir, "output directory (overrides config)");
  auto* seed_opt =
      app.add_option("--seed", seed, "master seed (overrides config)");
  app.add_option("--stage-overrides", overrides,
                 "config overrides as dot.path=value, repeatable")
      ->take_all();

  const std::pair<const char*, const char*> stages[] = {
      {"prep", "apply the codebook to raw responses"},
      {"corr", "polychoric correlations, KMO, DWLS weights"},
      {"efa", "parallel analysis, minres extraction, oblimin, retention"},
      {"cfa", "fit the confirmatory model by DWLS"},
      {"score", "factor scores and the 0-100 index"},
      {"classify", "burden categories from k-means or a preset"},
      {"validate", "criterion validity via cluster-robust GLMs"},
      {"simulate", "draw synthetic raw responses from a known model"},
      {"report", "consolidated text report over available artifacts"},
      {"run", "execute the config's stage list in order"}};
  for (const auto& [name, blurb] : stages)
    app.add_subcommand(name, blurb)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    nlohmann::json doc = carebi::load_config_json(config_path);
    for (const auto& kv : overrides) carebi::apply_stage_override(doc, kv);
    carebi::PipelineConfig cfg = carebi::pipeline_config_from_json(doc);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed_opt->count() > 0) cfg.seed = seed;

    for (const CLI::App* sub : app.get_subcommands()) {
      if (sub->get_name() == "run") {
        if (cfg.stages.empty())
          throw carebi::UserError("config has no stages list; name a stage");
        for (const auto& s : cfg.stages) carebi::run_stage(s, cfg);
      } else {
        carebi::run_stage(sub->get_name(), cfg);
      }
    }
    return 0;
  } catch (const carebi::UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
