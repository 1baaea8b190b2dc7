#include <atomic>
#include <csignal>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dve/cli.hpp"

namespace {

std::atomic<bool> g_interrupted{false};

void handle_interrupt(int) { g_interrupted.store(true); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dve - defeasible video entailment pipeline and evaluation harness"};
  app.require_subcommand(1);
  app.fallthrough();  // allow --config after the subcommand name

  std::string config_path;
  dve::cli::Overrides overrides;
  bool strict = false;
  bool baseline_flag = false;

  app.add_option("--config", config_path, "run configuration file (JSON)")->required();
  auto bind_common = [&](CLI::App* sub) {
    sub->add_option("--manifest", overrides.manifest, "manifest path override");
    sub->add_option("--ablation", overrides.ablation,
                    "none | no-refined-description | no-counterfactual");
    sub->add_option("--averaging", overrides.averaging, "binary | weighted");
    sub->add_option("--out", overrides.output_dir, "output directory override");
    sub->add_option("--cache-dir", overrides.cache_dir, "cache directory override");
    sub->add_option("--concurrency", overrides.concurrency,
                    "max in-flight requests per backend");
    sub->add_flag("--strict", strict, "treat validation findings as errors");
  };

  auto* classify = app.add_subcommand("classify", "run the classification pipeline");
  classify->add_flag("--baseline", baseline_flag, "single-call baseline instead of the chain");
  bind_common(classify);

  auto* generate = app.add_subcommand("generate", "run the update generation pipeline");
  bind_common(generate);

  std::string records_path;
  auto* judge = app.add_subcommand("judge", "judge a generation record file");
  judge->add_option("records", records_path, "generations.jsonl from the generate command")
      ->required();
  bind_common(judge);

  std::string dataset_action;
  auto* dataset = app.add_subcommand("dataset", "manifest tooling");
  dataset->add_option("action", dataset_action, "stats | validate | plan-edits | trim")
      ->required();
  bind_common(dataset);

  std::string cache_action;
  auto* cache = app.add_subcommand("cache", "response cache tooling");
  cache->add_option("action", cache_action, "stats | purge | verify")->required();
  bind_common(cache);

  CLI11_PARSE(app, argc, argv);

  dve::cli::RunConfig config;
  try {
    config = dve::cli::load_config(config_path);
    if (baseline_flag) overrides.baseline = true;
    dve::cli::apply_overrides(config, overrides);
  } catch (const dve::Error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return dve::cli::kExitConfig;
  }

  std::signal(SIGINT, handle_interrupt);
  std::signal(SIGTERM, handle_interrupt);

  if (classify->parsed()) return dve::cli::cmd_classify(config, &g_interrupted);
  if (generate->parsed()) return dve::cli::cmd_generate(config, &g_interrupted);
  if (judge->parsed()) return dve::cli::cmd_judge(config, records_path);
  if (dataset->parsed()) return dve::cli::cmd_dataset(config, dataset_action, strict);
  if (cache->parsed()) return dve::cli::cmd_cache(config, cache_action, strict);
  return dve::cli::kExitConfig;
}
