#include "dve/config.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace dve::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string resolve(const fs::path& base, const std::string& path) {
  if (path.empty()) return path;
  fs::path p(path);
  if (p.is_absolute()) return p.string();
  return (base / p).lexically_normal().string();
}

backends::BackendSpec backend_from_json(const std::string& role_name, const json& j,
                                        const fs::path& base) {
  backends::BackendSpec spec;
  spec.role = backends::parse_role(role_name);
  spec.id = j.value("id", role_name + "-backend");
  spec.transport = backends::parse_transport(j.value("transport", "scripted"));
  spec.model_name = j.value("model", "unspecified");

  if (j.contains("params")) {
    const auto& params = j["params"];
    spec.params.temperature = params.value("temperature", 0.0);
    spec.params.max_tokens = params.value("max_tokens", 1024);
    if (params.contains("seed")) spec.params.seed = params["seed"].get<int>();
    if (spec.params.max_tokens <= 0) {
      throw ConfigError("backend '" + spec.id + "': max_tokens must be > 0");
    }
    if (spec.params.temperature < 0.0) {
      throw ConfigError("backend '" + spec.id + "': temperature must be >= 0");
    }
  }

  if (j.contains("retry")) {
    spec.retry.attempts = j["retry"].value("attempts", 3);
    spec.retry.initial_backoff =
        std::chrono::milliseconds(j["retry"].value("initial_backoff_ms", 1000));
  }

  switch (spec.transport) {
    case backends::Transport::scripted: {
      if (!j.contains("script")) {
        throw ConfigError("scripted backend '" + spec.id + "' needs a 'script' file");
      }
      spec.script = std::make_shared<backends::Script>(
          backends::Script::load(resolve(base, j["script"].get<std::string>())));
      break;
    }
    case backends::Transport::chat_http: {
      spec.http.base_url = j.value("base_url", spec.http.base_url);
      spec.http.auth_env = j.value("auth_env", "");
      spec.http.media_mode = j.value("media_mode", "video_url");
      spec.http.frame_count = j.value("frame_count", 8);
      spec.http.frame_command = j.value("frame_command", "");
      spec.http.timeout_seconds = j.value("timeout_seconds", 120);
      break;
    }
    case backends::Transport::subprocess: {
      if (!j.contains("command")) {
        throw ConfigError("subprocess backend '" + spec.id + "' needs a 'command'");
      }
      spec.subprocess.command = j["command"].get<std::string>();
      break;
    }
  }
  return spec;
}

}  // namespace

const backends::BackendSpec& RunConfig::backend(backends::Role role) const {
  auto it = backend_specs.find(role);
  if (it == backend_specs.end()) {
    throw ConfigError("no backend bound for role '" + backends::role_name(role) + "'");
  }
  return it->second;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& ex) {
    throw ConfigError("malformed config " + path + ": " + ex.what());
  }

  const fs::path base = fs::path(path).parent_path();
  RunConfig config;
  config.template_dir = resolve(base, j.value("template_dir", "templates/default"));
  config.manifest_path = resolve(base, j.value("manifest", ""));
  config.cache_dir = resolve(base, j.value("cache_dir", ""));
  config.output_dir = resolve(base, j.value("output_dir", "out"));
  config.concurrency = j.value("concurrency", 4);
  if (config.concurrency < 1) throw ConfigError("concurrency must be >= 1");
  config.ablation = coct::parse_ablation(j.value("ablation", "none"));
  config.baseline = j.value("baseline", false);
  config.draft_free = j.value("draft_free", false);
  config.two_call_rationales = j.value("two_call_rationales", false);
  config.averaging = eval::parse_averaging(j.value("averaging", "binary"));
  config.failure_threshold = j.value("failure_threshold", 0.5);
  config.min_keep_seconds = j.value("min_keep_seconds", 1.0);
  config.trim_command = j.value("trim_command", "");
  config.probe_command = j.value("probe_command", "");

  if (j.contains("backends")) {
    for (const auto& [role_name, backend_json] : j["backends"].items()) {
      config.backend_specs.emplace(backends::parse_role(role_name),
                                   backend_from_json(role_name, backend_json, base));
    }
  }
  return config;
}

void apply_overrides(RunConfig& config, const Overrides& overrides) {
  if (overrides.manifest) config.manifest_path = *overrides.manifest;
  if (overrides.ablation) config.ablation = coct::parse_ablation(*overrides.ablation);
  if (overrides.baseline) config.baseline = *overrides.baseline;
  if (overrides.averaging) config.averaging = eval::parse_averaging(*overrides.averaging);
  if (overrides.output_dir) config.output_dir = *overrides.output_dir;
  if (overrides.cache_dir) config.cache_dir = *overrides.cache_dir;
  if (overrides.concurrency) {
    if (*overrides.concurrency < 1) throw ConfigError("concurrency must be >= 1");
    config.concurrency = *overrides.concurrency;
  }
}

}  // namespace dve::cli
