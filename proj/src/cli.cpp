#include "dve/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "dve/dataset.hpp"
#include "dve/generator.hpp"

namespace dve::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string fmt2(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.2f", eval::round2(value));
  return buffer;
}

void write_text_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
}

std::string variant_name(const RunConfig& config) {
  return config.baseline ? "baseline" : coct::ablation_name(config.ablation);
}

json backend_ids(const RunConfig& config) {
  json ids = json::object();
  for (const auto& [role, spec] : config.backend_specs) {
    ids[backends::role_name(role)] = spec.id;
  }
  return ids;
}

void require_backends(const RunConfig& config, std::initializer_list<backends::Role> roles) {
  for (backends::Role role : roles) {
    if (!config.has_backend(role)) {
      throw ConfigError("no backend bound for role '" + backends::role_name(role) +
                        "' (required by this command)");
    }
  }
}

std::vector<Sample> finalized_samples(const std::vector<dataset::ManifestEntry>& manifest) {
  std::vector<Sample> samples;
  for (const auto& entry : manifest) {
    if (entry.annotation_state == dataset::AnnotationState::Finalized) {
      samples.push_back(entry.sample);
    }
  }
  return samples;
}

// Manifest gate shared by classify/generate: structural violations are
// fatal, the balance advisory is not.
std::vector<dataset::ManifestEntry> load_valid_manifest(const RunConfig& config) {
  if (config.manifest_path.empty()) throw ConfigError("no manifest configured");
  auto manifest = dataset::load_manifest(config.manifest_path);
  if (manifest.empty()) throw ConfigError("manifest is empty: " + config.manifest_path);
  for (const auto& violation : dataset::validate_manifest(manifest)) {
    if (violation.kind == "label_imbalance") {
      std::cerr << "warning: " << violation.message << "\n";
      continue;
    }
    throw ConfigError("invalid manifest (" + violation.kind + "): " + violation.message +
                      (violation.sample_id.empty() ? "" : " [" + violation.sample_id + "]"));
  }
  return manifest;
}

struct RunContext {
  std::shared_ptr<backends::ResponseCache> cache;
  std::unique_ptr<backends::Invoker> invoker;
  TemplateSet templates;
};

RunContext make_run_context(const RunConfig& config) {
  RunContext ctx{nullptr, nullptr, TemplateSet::load(config.template_dir)};
  if (!config.cache_dir.empty()) {
    ctx.cache = std::make_shared<backends::ResponseCache>(config.cache_dir);
  }
  ctx.invoker = std::make_unique<backends::Invoker>(ctx.cache, config.concurrency);
  return ctx;
}

void write_run_stats(const RunConfig& config, const backends::Invoker& invoker,
                     bool interrupted) {
  if (config.cache_dir.empty()) return;
  const auto stats = invoker.stats();
  const size_t total = stats.upstream_calls + stats.cache_hits;
  json j;
  j["upstream_calls"] = stats.upstream_calls;
  j["cache_hits"] = stats.cache_hits;
  j["hit_ratio"] =
      total == 0 ? 0.0 : static_cast<double>(stats.cache_hits) / static_cast<double>(total);
  j["interrupted"] = interrupted;
  json per_backend = json::object();
  for (const auto& [id, count] : stats.upstream_by_backend) per_backend[id] = count;
  j["upstream_by_backend"] = per_backend;
  write_text_file(fs::path(config.cache_dir) / "last_run_stats.json", j.dump(2) + "\n");
}

void write_failures(const fs::path& dir,
                    const std::vector<coct::SampleFailure>& failures) {
  if (failures.empty()) {
    fs::remove(dir / "failures.jsonl");
    return;
  }
  std::string lines;
  for (const auto& failure : failures) {
    lines += json{{"sample_id", failure.sample_id}, {"error", failure.error}}.dump() + "\n";
  }
  write_text_file(dir / "failures.jsonl", lines);
}

void write_classification_report(const RunConfig& config, const TemplateSet& templates,
                                 const eval::ClassificationReport& report,
                                 const fs::path& dir) {
  json j;
  j["task"] = "classification";
  j["variant"] = variant_name(config);
  j["averaging"] = eval::averaging_name(report.averaging);
  j["template_set"] = templates.name();
  j["backends"] = backend_ids(config);
  j["n_scored"] = report.confusion.scored();
  j["excluded"] = report.excluded;
  j["confusion"] = {{"tp", report.confusion.tp},
                    {"fp", report.confusion.fp},
                    {"fn", report.confusion.fn},
                    {"tn", report.confusion.tn}};
  j["metrics"] = {{"accuracy", eval::round2(report.accuracy)},
                  {"precision", eval::round2(report.precision)},
                  {"recall", eval::round2(report.recall)},
                  {"f1", eval::round2(report.f1)},
                  {"sratio", eval::round2(report.sratio)}};
  j["zero_division"] = report.zero_division;
  write_text_file(dir / "classification_report.json", j.dump(2) + "\n");

  std::ostringstream csv;
  csv << "variant,averaging,accuracy,precision,recall,f1,sratio,n_scored,excluded\n"
      << variant_name(config) << "," << eval::averaging_name(report.averaging) << ","
      << fmt2(report.accuracy) << "," << fmt2(report.precision) << "," << fmt2(report.recall)
      << "," << fmt2(report.f1) << "," << fmt2(report.sratio) << ","
      << report.confusion.scored() << "," << report.excluded << "\n";
  write_text_file(dir / "classification_report.csv", csv.str());

  std::ostringstream txt;
  txt << "Classification report (variant=" << variant_name(config)
      << ", averaging=" << eval::averaging_name(report.averaging)
      << ", templates=" << templates.name() << ")\n";
  txt << "backends:";
  for (const auto& [role, spec] : config.backend_specs) {
    txt << " " << backends::role_name(role) << "=" << spec.id;
  }
  txt << "\nn_scored=" << report.confusion.scored() << " excluded=" << report.excluded
      << "\n\n";
  txt << "Accuracy  Precision  Recall  F1      SRatio\n";
  txt << fmt2(report.accuracy) << "     " << fmt2(report.precision) << "      "
      << fmt2(report.recall) << "   " << fmt2(report.f1) << "   " << fmt2(report.sratio)
      << "\n";
  write_text_file(dir / "classification_report.txt", txt.str());
}

void write_judge_report(const RunConfig& config, const TemplateSet& templates,
                        const eval::JudgeReport& report, const fs::path& dir) {
  json j;
  j["task"] = "generation_judge";
  j["template_set"] = templates.name();
  j["backends"] = backend_ids(config);
  j["n"] = report.n;
  j["excluded"] = report.excluded;
  json dist = json::object();
  for (eval::JudgeCategory category : eval::kAllCategories) {
    dist[eval::category_token(category)] = eval::round2(report.distribution.at(category));
  }
  j["distribution"] = dist;
  write_text_file(dir / "judge_report.json", j.dump(2) + "\n");

  std::ostringstream csv;
  csv << "C1,C2,C3,C4,C5,C6,C7,C8,n,excluded\n";
  for (eval::JudgeCategory category : eval::kAllCategories) {
    csv << fmt2(report.distribution.at(category)) << ",";
  }
  csv << report.n << "," << report.excluded << "\n";
  write_text_file(dir / "judge_report.csv", csv.str());

  std::ostringstream txt;
  txt << "Judge report (templates=" << templates.name() << ", n=" << report.n
      << ", excluded=" << report.excluded << ")\n\n";
  txt << "C1      C2      C3      C4      C5      C6      C7      C8\n";
  for (eval::JudgeCategory category : eval::kAllCategories) {
    std::string cell = fmt2(report.distribution.at(category));
    txt << cell << std::string(cell.size() < 8 ? 8 - cell.size() : 1, ' ');
  }
  txt << "\n";
  write_text_file(dir / "judge_report.txt", txt.str());
}

void write_dataset_stats(const dataset::DatasetStats& stats, const fs::path& dir) {
  json j;
  j["total"] = stats.total;
  j["weakeners"] = stats.weakeners;
  j["strengtheners"] = stats.strengtheners;
  j["avg_hypothesis_words"] = eval::round2(stats.avg_hypothesis_words);
  j["avg_update_words"] = eval::round2(stats.avg_update_words);
  j["avg_duration_seconds"] = eval::round2(stats.avg_duration_seconds);
  j["unique_videos"] = stats.unique_videos;
  write_text_file(dir / "dataset_stats.json", j.dump(2) + "\n");

  std::ostringstream csv;
  csv << "total,weakeners,strengtheners,avg_hypothesis_words,avg_update_words,"
         "avg_duration_seconds,unique_videos\n"
      << stats.total << "," << stats.weakeners << "," << stats.strengtheners << ","
      << fmt2(stats.avg_hypothesis_words) << "," << fmt2(stats.avg_update_words) << ","
      << fmt2(stats.avg_duration_seconds) << "," << stats.unique_videos << "\n";
  write_text_file(dir / "dataset_stats.csv", csv.str());

  std::ostringstream txt;
  txt << "Total samples              " << stats.total << "\n"
      << "  Weakener                 " << stats.weakeners << "\n"
      << "  Strengthener             " << stats.strengtheners << "\n"
      << "Average hypothesis length  " << fmt2(stats.avg_hypothesis_words) << " words\n"
      << "Average update length      " << fmt2(stats.avg_update_words) << " words\n"
      << "Average video duration     " << fmt2(stats.avg_duration_seconds) << " sec\n"
      << "Unique videos              " << stats.unique_videos << "\n";
  write_text_file(dir / "dataset_stats.txt", txt.str());
  std::cout << txt.str();
}

}  // namespace

int cmd_classify(const RunConfig& config, std::atomic<bool>* cancel) {
  try {
    if (config.baseline) {
      require_backends(config, {backends::Role::vlmm});
    } else if (config.ablation == coct::Ablation::no_refined_description) {
      require_backends(config, {backends::Role::vlmm, backends::Role::llm});
    } else {
      require_backends(config,
                       {backends::Role::vlmm, backends::Role::llm, backends::Role::asr});
    }
    const auto manifest = load_valid_manifest(config);
    auto samples = finalized_samples(manifest);
    for (const auto& sample : samples) {
      if (!sample.update || !sample.gold_label) {
        throw ConfigError("sample '" + sample.id + "' lacks update/gold label");
      }
    }
    if (samples.empty()) throw ConfigError("manifest has no Finalized samples");

    auto ctx = make_run_context(config);
    coct::Runtime rt{*ctx.invoker, ctx.templates};
    coct::PipelineBackends pipeline_backends;
    pipeline_backends.vlmm = config.backend(backends::Role::vlmm);
    if (config.has_backend(backends::Role::llm)) {
      pipeline_backends.llm = config.backend(backends::Role::llm);
    }
    if (config.has_backend(backends::Role::asr)) {
      pipeline_backends.asr = config.backend(backends::Role::asr);
    }
    coct::ClassifyOptions options;
    options.ablation = config.ablation;
    options.two_call_rationales = config.two_call_rationales;

    auto outcome = coct::run_batch<coct::PredictionRecord>(
        samples, config.concurrency,
        [&](const Sample& sample) {
          return config.baseline
                     ? coct::classify_baseline(rt, sample, pipeline_backends.vlmm,
                                               options.parse_policy)
                     : coct::classify(rt, sample, pipeline_backends, options);
        },
        cancel);

    const fs::path out_dir(config.output_dir);
    std::string lines;
    for (const auto& record : outcome.records) {
      lines += coct::prediction_record_to_json_line(record) + "\n";
    }
    write_text_file(out_dir / "predictions.jsonl", lines);
    write_failures(out_dir, outcome.failures);
    write_run_stats(config, *ctx.invoker, outcome.interrupted);

    const double failure_ratio =
        static_cast<double>(outcome.failures.size()) / static_cast<double>(samples.size());
    if (outcome.interrupted) {
      std::cerr << "interrupted: " << outcome.records.size() << "/" << samples.size()
                << " samples completed; partial records flushed\n";
      return kExitFailures;
    }
    if (failure_ratio > config.failure_threshold) {
      std::cerr << "excessive per-sample failures: " << outcome.failures.size() << "/"
                << samples.size() << "\n";
      return kExitFailures;
    }

    std::map<std::string, Label> gold;
    for (const auto& sample : samples) gold[sample.id] = *sample.gold_label;
    std::vector<std::pair<Label, Label>> pred_gold;
    for (const auto& record : outcome.records) {
      pred_gold.emplace_back(record.verdict.label, gold.at(record.sample_id));
    }
    auto cm = eval::compute_confusion(pred_gold);
    cm.excluded += static_cast<long long>(outcome.failures.size());
    auto report = eval::classification_metrics(cm, config.averaging);
    report.excluded = cm.excluded;
    write_classification_report(config, ctx.templates, report, out_dir);
    return kExitOk;
  } catch (const Error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitConfig;
  }
}

int cmd_generate(const RunConfig& config, std::atomic<bool>* cancel) {
  try {
    require_backends(config,
                     {backends::Role::vlmm, backends::Role::llm, backends::Role::asr});
    const auto manifest = load_valid_manifest(config);
    auto samples = finalized_samples(manifest);
    std::erase_if(samples, [](const Sample& s) { return !s.gold_goal.has_value(); });
    if (samples.empty()) throw ConfigError("manifest has no Finalized samples with a goal");

    auto ctx = make_run_context(config);
    coct::Runtime rt{*ctx.invoker, ctx.templates};
    coct::PipelineBackends pipeline_backends{config.backend(backends::Role::vlmm),
                                             config.backend(backends::Role::llm),
                                             config.backend(backends::Role::asr)};
    gen::GenerateOptions options;
    options.draft_free = config.draft_free;

    auto outcome = coct::run_batch<gen::GenerationRecord>(
        samples, config.concurrency,
        [&](const Sample& sample) {
          return gen::generate(rt, sample, pipeline_backends, options);
        },
        cancel);

    const fs::path out_dir(config.output_dir);
    std::string lines;
    for (const auto& record : outcome.records) {
      lines += gen::generation_record_to_json_line(record) + "\n";
    }
    write_text_file(out_dir / "generations.jsonl", lines);
    write_failures(out_dir, outcome.failures);
    write_run_stats(config, *ctx.invoker, outcome.interrupted);

    if (outcome.interrupted) {
      std::cerr << "interrupted: partial records flushed\n";
      return kExitFailures;
    }
    const double failure_ratio =
        static_cast<double>(outcome.failures.size()) / static_cast<double>(samples.size());
    if (failure_ratio > config.failure_threshold) {
      std::cerr << "excessive per-sample failures: " << outcome.failures.size() << "/"
                << samples.size() << "\n";
      return kExitFailures;
    }
    return kExitOk;
  } catch (const Error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitConfig;
  }
}

int cmd_judge(const RunConfig& config, const std::string& records_path) {
  try {
    require_backends(config, {backends::Role::judge});
    std::ifstream in(records_path);
    if (!in) throw ConfigError("cannot open records file: " + records_path);

    std::vector<eval::JudgeInput> inputs;
    std::string line;
    size_t line_number = 0;
    while (std::getline(in, line)) {
      ++line_number;
      if (line.empty()) continue;
      gen::GenerationRecord record;
      try {
        record = gen::generation_record_from_json_line(line);
      } catch (const ConfigError& ex) {
        throw ConfigError(records_path + ":" + std::to_string(line_number) + ": " + ex.what());
      }
      eval::JudgeInput input;
      input.sample_id = record.sample_id;
      input.description = record.descriptions.fused_description;
      input.hypothesis = record.hypothesis;
      input.update = record.refined_update;
      input.goal = record.goal;
      inputs.push_back(std::move(input));
    }
    if (inputs.empty()) throw ConfigError("records file is empty: " + records_path);

    auto ctx = make_run_context(config);
    auto outcome = eval::judge_all(*ctx.invoker, ctx.templates, inputs,
                                   config.backend(backends::Role::judge), config.concurrency);

    const fs::path out_dir(config.output_dir);
    std::string lines;
    for (const auto& [id, category] : outcome.per_sample) {
      lines += json{{"sample_id", id}, {"category", eval::category_token(category)}}.dump() +
               "\n";
    }
    write_text_file(out_dir / "judgements.jsonl", lines);
    write_run_stats(config, *ctx.invoker, false);
    write_judge_report(config, ctx.templates, outcome.report, out_dir);
    return kExitOk;
  } catch (const Error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitConfig;
  }
}

int cmd_dataset(const RunConfig& config, const std::string& action, bool strict) {
  try {
    if (config.manifest_path.empty()) throw ConfigError("no manifest configured");
    const auto manifest = dataset::load_manifest(config.manifest_path);
    const fs::path out_dir(config.output_dir);

    if (action == "stats") {
      write_dataset_stats(dataset::compute_stats(manifest), out_dir);
      return kExitOk;
    }
    if (action == "validate") {
      const auto violations = dataset::validate_manifest(manifest);
      std::string lines;
      for (const auto& v : violations) {
        lines += json{{"kind", v.kind}, {"sample_id", v.sample_id}, {"message", v.message}}
                     .dump() +
                 "\n";
        std::cout << v.kind << (v.sample_id.empty() ? "" : " [" + v.sample_id + "]") << ": "
                  << v.message << "\n";
      }
      write_text_file(out_dir / "violations.jsonl", lines);
      std::cout << violations.size() << " violation(s)\n";
      return (strict && !violations.empty()) ? kExitConfig : kExitOk;
    }
    if (action == "plan-edits") {
      std::string lines;
      size_t errors = 0;
      for (const auto& entry : manifest) {
        if (!entry.evidence_span) continue;
        try {
          const auto plan =
              dataset::plan_clip_edit(entry.source_video.duration_seconds,
                                      *entry.evidence_span, config.min_keep_seconds);
          lines += json{{"sample_id", entry.sample.id},
                        {"keep", {{"start", plan.keep.start}, {"end", plan.keep.end}}},
                        {"removed",
                         {{"start", plan.removed.start}, {"end", plan.removed.end}}},
                        {"rule", dataset::edit_rule_name(plan.rule_applied)}}
                       .dump() +
                   "\n";
        } catch (const Error& ex) {
          ++errors;
          lines += json{{"sample_id", entry.sample.id}, {"error", ex.what()}}.dump() + "\n";
        }
      }
      write_text_file(out_dir / "clip_edit_plans.jsonl", lines);
      std::cout << "plans written to " << (out_dir / "clip_edit_plans.jsonl").string() << " ("
                << errors << " error(s))\n";
      return (strict && errors > 0) ? kExitConfig : kExitOk;
    }
    if (action == "trim") {
      if (config.trim_command.empty()) {
        throw ConfigError("dataset trim requires a trim_command in the config");
      }
      const auto results =
          dataset::run_trim(manifest, config.trim_command, config.probe_command,
                            (out_dir / "trimmed").string(), config.min_keep_seconds);
      std::string lines;
      size_t mismatches = 0;
      for (const auto& result : results) {
        json j{{"sample_id", result.sample_id},
               {"output", result.output_path},
               {"keep", {{"start", result.plan.keep.start}, {"end", result.plan.keep.end}}},
               {"duration_ok", result.duration_ok}};
        if (result.measured_duration) j["measured_duration"] = *result.measured_duration;
        lines += j.dump() + "\n";
        if (!result.duration_ok) ++mismatches;
      }
      write_text_file(out_dir / "trim_results.jsonl", lines);
      std::cout << results.size() << " clip(s) trimmed, " << mismatches
                << " duration mismatch(es)\n";
      return (strict && mismatches > 0) ? kExitConfig : kExitOk;
    }
    throw ConfigError("unknown dataset action: " + action);
  } catch (const Error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitConfig;
  }
}

int cmd_cache(const RunConfig& config, const std::string& action, bool strict) {
  try {
    if (config.cache_dir.empty()) throw ConfigError("no cache_dir configured");

    if (action == "purge") {
      backends::ResponseCache cache(config.cache_dir);
      cache.purge();
      std::cout << "cache purged: " << config.cache_dir << "\n";
      return kExitOk;
    }
    if (!fs::exists(config.cache_dir)) {
      throw ConfigError("cache directory does not exist: " + config.cache_dir);
    }
    backends::ResponseCache cache(config.cache_dir);
    if (action == "stats") {
      std::cout << "entries: " << cache.entry_count() << "\n";
      const fs::path stats_path = fs::path(config.cache_dir) / "last_run_stats.json";
      if (fs::exists(stats_path)) {
        std::ifstream in(stats_path);
        json stats;
        in >> stats;
        std::cout << "last run: upstream_calls=" << stats.value("upstream_calls", 0)
                  << " cache_hits=" << stats.value("cache_hits", 0)
                  << " hit_ratio=" << fmt2(100.0 * stats.value("hit_ratio", 0.0)) << "%\n";
      }
      return kExitOk;
    }
    if (action == "verify") {
      const auto corrupt = cache.verify();
      for (const auto& digest : corrupt) std::cout << "corrupt entry: " << digest << "\n";
      std::cout << corrupt.size() << " corruption(s) in " << cache.entry_count()
                << " entries\n";
      return (strict && !corrupt.empty()) ? kExitConfig : kExitOk;
    }
    throw ConfigError("unknown cache action: " + action);
  } catch (const Error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace dve::cli
