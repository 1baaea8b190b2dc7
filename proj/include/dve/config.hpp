#pragma once

#include <map>
#include <optional>
#include <string>

#include "dve/backends.hpp"
#include "dve/coct.hpp"
#include "dve/evaluation.hpp"

// One configuration file drives every subcommand; flags override file
// values, file values override defaults.

namespace dve::cli {

struct RunConfig {
  std::map<backends::Role, backends::BackendSpec> backend_specs;
  std::string template_dir = "templates/default";
  coct::Ablation ablation = coct::Ablation::full;
  bool baseline = false;
  bool draft_free = false;
  bool two_call_rationales = false;
  std::string manifest_path;
  std::string cache_dir;  // empty disables the response cache
  int concurrency = 4;
  eval::Averaging averaging = eval::Averaging::binary_strengthener;
  std::string output_dir = "out";
  double failure_threshold = 0.5;  // exit 3 above this per-sample failure ratio
  double min_keep_seconds = 1.0;
  std::string trim_command;   // {in} {out} {start} {end}
  std::string probe_command;  // {in}, prints duration in seconds

  bool has_backend(backends::Role role) const { return backend_specs.count(role) > 0; }
  const backends::BackendSpec& backend(backends::Role role) const;
};

// Relative paths inside the file resolve against the file's directory.
RunConfig load_config(const std::string& path);

struct Overrides {
  std::optional<std::string> manifest;
  std::optional<std::string> ablation;
  std::optional<bool> baseline;
  std::optional<std::string> averaging;
  std::optional<std::string> output_dir;
  std::optional<std::string> cache_dir;
  std::optional<int> concurrency;
};

void apply_overrides(RunConfig& config, const Overrides& overrides);

}  // namespace dve::cli
