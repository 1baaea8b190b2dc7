// Acceptance suite: one check per release criterion, one [PASS]/[FAIL]
// line each, nonzero exit if anything fails. Conditional checks print
// [SKIP] when their inputs are not supplied.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "dve/cli.hpp"
#include "dve/dataset.hpp"
#include "dve/generator.hpp"

using namespace dve;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kSource = DVE_SOURCE_DIR;
const std::string kFixtures = kSource + "/tests/fixtures";

int g_failures = 0;

void report(const std::string& name, bool ok, const std::string& detail = "") {
  std::cout << (ok ? "[PASS] " : "[FAIL] ") << name;
  if (!detail.empty()) std::cout << ": " << detail;
  std::cout << "\n";
  if (!ok) ++g_failures;
}

void skip(const std::string& name, const std::string& why) {
  std::cout << "[SKIP] " << name << ": " << why << "\n";
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

fs::path fresh_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() /
             ("dve-accept-" + tag + "-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Independent tally: per-sample loops and direct formulas, no shared code
// with eval::classification_metrics.
struct Tally {
  double accuracy, precision, recall, f1, sratio;
};

Tally brute_force(const std::vector<std::pair<Label, Label>>& pairs, bool weighted) {
  long long tp = 0, fp = 0, fn = 0, tn = 0;
  for (auto [pred, gold] : pairs) {
    if (pred == Label::Neutral) continue;
    const bool gold_s = gold == Label::Strengthener;
    const bool pred_s = pred == Label::Strengthener;
    if (gold_s && pred_s) ++tp;
    if (gold_s && !pred_s) ++fn;
    if (!gold_s && pred_s) ++fp;
    if (!gold_s && !pred_s) ++tn;
  }
  const double n = static_cast<double>(tp + fp + fn + tn);
  auto safe = [](double a, double b) { return b == 0.0 ? 0.0 : a / b; };
  Tally t{};
  t.accuracy = (tp + tn) / n;
  t.sratio = (tp + fp) / n;
  if (!weighted) {
    t.precision = safe(static_cast<double>(tp), static_cast<double>(tp + fp));
    t.recall = safe(static_cast<double>(tp), static_cast<double>(tp + fn));
  } else {
    const double ns = static_cast<double>(tp + fn);
    const double nw = static_cast<double>(fp + tn);
    t.precision = (ns * safe(static_cast<double>(tp), static_cast<double>(tp + fp)) +
                   nw * safe(static_cast<double>(tn), static_cast<double>(tn + fn))) /
                  n;
    t.recall =
        (ns * safe(static_cast<double>(tp), ns) + nw * safe(static_cast<double>(tn), nw)) / n;
  }
  t.f1 = (t.precision + t.recall) > 0
             ? 2.0 * t.precision * t.recall / (t.precision + t.recall)
             : 0.0;
  return t;
}

void check_metric_oracle_equivalence() {
  const auto started = std::chrono::steady_clock::now();
  std::mt19937 rng(11087);
  bool ok = true;
  std::string detail;
  for (int trial = 0; trial < 200 && ok; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 1000);
    std::vector<std::pair<Label, Label>> pairs;
    pairs.reserve(n);
    for (int i = 0; i < n; ++i) {
      Label gold = rng() % 2 ? Label::Strengthener : Label::Weakener;
      Label pred = (i > 0 && rng() % 25 == 0)
                       ? Label::Neutral
                       : (rng() % 2 ? Label::Strengthener : Label::Weakener);
      pairs.emplace_back(pred, gold);
    }
    auto cm = eval::compute_confusion(pairs);
    for (bool weighted : {false, true}) {
      auto r = eval::classification_metrics(
          cm, weighted ? eval::Averaging::weighted : eval::Averaging::binary_strengthener);
      auto o = brute_force(pairs, weighted);
      const double diffs[] = {std::fabs(r.accuracy / 100.0 - o.accuracy),
                              std::fabs(r.precision / 100.0 - o.precision),
                              std::fabs(r.recall / 100.0 - o.recall),
                              std::fabs(r.f1 / 100.0 - o.f1),
                              std::fabs(r.sratio / 100.0 - o.sratio)};
      for (double d : diffs) {
        if (d >= 1e-9) {
          ok = false;
          detail = "divergence " + std::to_string(d) + " at trial " + std::to_string(trial);
        }
      }
    }
  }
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - started);
  if (elapsed.count() >= 5000) {
    ok = false;
    detail += " (too slow: " + std::to_string(elapsed.count()) + "ms)";
  }
  report("metric-oracle-equivalence",
         ok, ok ? "200 random vectors, both averagings, <=1e-9, " +
                      std::to_string(elapsed.count()) + "ms"
                : detail);
}

void check_averaging_identity() {
  std::mt19937 rng(90125);
  bool ok = true;
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    eval::ConfusionMatrix cm;
    cm.tp = rng() % 400;
    cm.fp = rng() % 400;
    cm.fn = rng() % 400;
    cm.tn = rng() % 400;
    if (cm.scored() == 0) cm.tn = 1;
    auto r = eval::classification_metrics(cm, eval::Averaging::weighted);
    if (r.recall != r.accuracy) ok = false;
  }
  report("averaging-identity", ok, "weighted recall == accuracy, 1000 random matrices, exact");
}

void check_worked_examples() {
  bool ok = true;
  std::string detail;

  auto cm = eval::compute_confusion({{Label::Strengthener, Label::Strengthener},
                                     {Label::Weakener, Label::Strengthener},
                                     {Label::Weakener, Label::Weakener},
                                     {Label::Weakener, Label::Weakener}});
  ok &= cm.tp == 1 && cm.fn == 1 && cm.fp == 0 && cm.tn == 2;
  auto metrics = eval::classification_metrics(cm, eval::Averaging::binary_strengthener);
  ok &= eval::round2(metrics.accuracy) == 75.00;
  ok &= eval::round2(metrics.precision) == 100.00;
  ok &= eval::round2(metrics.recall) == 50.00;
  ok &= eval::round2(metrics.f1) == 66.67;
  if (!ok) detail = "confusion/metrics example";

  ok &= eval::round2(eval::sratio({Label::Strengthener, Label::Weakener, Label::Weakener,
                                   Label::Weakener})) == 25.00;

  // Judge distribution 50/25/25 over four scripted records.
  {
    auto templates = TemplateSet::load(kSource + "/templates/default");
    auto judge = backends::scripted_backend(
        "acc-judge", backends::Role::judge,
        {{backends::ScriptEntry::Match::prompt_substring, "update-one", "Category: C1"},
         {backends::ScriptEntry::Match::prompt_substring, "update-two", "Category: C1"},
         {backends::ScriptEntry::Match::prompt_substring, "update-three", "Category: C4"},
         {backends::ScriptEntry::Match::prompt_substring, "update-four", "Category: C6"}});
    backends::Invoker invoker;
    std::vector<eval::JudgeInput> inputs;
    for (const char* u : {"update-one", "update-two", "update-three", "update-four"}) {
      inputs.push_back({u, "desc", "hyp", u, Goal::Weakener});
    }
    auto outcome = eval::judge_all(invoker, templates, inputs, judge);
    ok &= eval::round2(outcome.report.distribution.at(eval::JudgeCategory::C1)) == 50.00;
    ok &= eval::round2(outcome.report.distribution.at(eval::JudgeCategory::C4)) == 25.00;
    ok &= eval::round2(outcome.report.distribution.at(eval::JudgeCategory::C6)) == 25.00;
    if (!ok && detail.empty()) detail = "judge distribution example";
  }

  // Clip-edit worked examples.
  {
    auto p1 = dataset::plan_clip_edit(30.0, {0.0, 10.0});
    ok &= p1.keep.start == 10.0 && p1.keep.end == 30.0 &&
          p1.rule_applied == dataset::EditRule::suffix_kept;
    auto p2 = dataset::plan_clip_edit(30.0, {10.0, 15.0});
    ok &= p2.keep.start == 15.0 && p2.keep.end == 30.0 &&
          p2.rule_applied == dataset::EditRule::longer_of_two;
    auto p3 = dataset::plan_clip_edit(30.0, {10.0, 20.0});
    ok &= p3.keep.start == 0.0 && p3.keep.end == 10.0;
    if (!ok && detail.empty()) detail = "clip-edit examples";
  }

  report("worked-examples", ok, ok ? "confusion 75/100/50/66.67, sratio 25.00, judge "
                                     "50/25/25, clip-edit plans"
                                   : detail);
}

cli::RunConfig fixture_config(const std::string& name, const fs::path& out,
                              const std::string& cache = "") {
  auto config = cli::load_config(kFixtures + "/" + name);
  config.output_dir = out.string();
  config.cache_dir = cache;
  return config;
}

std::vector<coct::PredictionRecord> records_of(const fs::path& predictions) {
  std::vector<coct::PredictionRecord> records;
  std::istringstream lines(slurp(predictions));
  std::string line;
  while (std::getline(lines, line)) {
    if (!line.empty()) records.push_back(coct::prediction_record_from_json_line(line));
  }
  return records;
}

void check_pipeline_call_graph() {
  bool ok = true;
  std::string detail;

  auto out_full = fresh_dir("graph-full");
  ok &= cli::cmd_classify(fixture_config("config_full.json", out_full)) == 0;
  auto full = records_of(out_full / "predictions.jsonl");
  ok &= full.size() == 20;
  for (const auto& record : full) {
    int vlmm = 0, asr = 0, llm = 0;
    for (const auto& call : record.backend_calls) {
      vlmm += call.role == backends::Role::vlmm;
      asr += call.role == backends::Role::asr;
      llm += call.role == backends::Role::llm;
    }
    if (vlmm != 2 || asr != 1 || llm > 2) {
      ok = false;
      detail = "full-chain counts off for " + record.sample_id;
    }
  }

  auto out_norefine = fresh_dir("graph-norefine");
  ok &= cli::cmd_classify(fixture_config("config_norefine.json", out_norefine)) == 0;
  for (const auto& record : records_of(out_norefine / "predictions.jsonl")) {
    for (const auto& call : record.backend_calls) {
      if (call.role == backends::Role::asr) {
        ok = false;
        detail = "no-refined-description made an ASR call";
      }
    }
  }

  auto out_nocf = fresh_dir("graph-nocf");
  ok &= cli::cmd_classify(fixture_config("config_nocf.json", out_nocf)) == 0;
  for (const auto& record : records_of(out_nocf / "predictions.jsonl")) {
    // No rationale call: the record carries no rationale pair and the
    // audit is describe, transcribe, fuse, direct-classify.
    if (!record.rationales.weakener_rationale.empty() ||
        !record.rationales.strengthener_rationale.empty() ||
        record.backend_calls.size() != 4) {
      ok = false;
      detail = "no-counterfactual still produced rationales";
    }
  }

  auto out_baseline = fresh_dir("graph-baseline");
  ok &= cli::cmd_classify(fixture_config("config_baseline.json", out_baseline)) == 0;
  for (const auto& record : records_of(out_baseline / "predictions.jsonl")) {
    if (record.backend_calls.size() != 1) {
      ok = false;
      detail = "baseline made more than one call";
    }
  }

  report("pipeline-call-graph", ok,
         ok ? "full 2V+1A+<=2L, no-refined 0 ASR, no-counterfactual 0 rationale, baseline 1"
            : detail);
}

void check_determinism_and_cache() {
  bool ok = true;
  std::string detail;

  auto cache = fresh_dir("det-cache") / "store";
  auto out1 = fresh_dir("det-run1");
  auto out2 = fresh_dir("det-run2");

  ok &= cli::cmd_classify(fixture_config("config_full.json", out1, cache.string())) == 0;
  ok &= cli::cmd_classify(fixture_config("config_full.json", out2, cache.string())) == 0;

  for (const char* name : {"classification_report.json", "classification_report.csv",
                           "classification_report.txt"}) {
    if (slurp(out1 / name) != slurp(out2 / name)) {
      ok = false;
      detail = std::string("report differs: ") + name;
    }
  }
  auto stats = json::parse(slurp(cache / "last_run_stats.json"));
  if (stats["upstream_calls"].get<long long>() != 0) {
    ok = false;
    detail = "second run hit upstream " + stats["upstream_calls"].dump() + " times";
  }
  report("determinism-and-cache", ok,
         ok ? "byte-identical reports, zero upstream calls on the warm rerun" : detail);
}

void check_parser_properties() {
  bool ok = true;
  std::string detail;

  ParsePolicy policy;
  policy.allow_neutral = true;
  for (Label label : {Label::Strengthener, Label::Weakener, Label::Neutral}) {
    if (parse_label(format_label(label), policy) != label) {
      ok = false;
      detail = "round-trip failed for " + format_label(label);
    }
  }

  // No gold leakage: over the whole fixture corpus, flipping the gold
  // label leaves every rendered prompt byte-identical.
  auto templates = TemplateSet::load(kSource + "/templates/default");
  auto manifest = dataset::load_manifest(kFixtures + "/manifest.jsonl");
  coct::PipelineBackends pipeline;
  pipeline.vlmm.id = "vlmm-main";
  pipeline.vlmm.role = backends::Role::vlmm;
  pipeline.vlmm.model_name = "scripted";
  pipeline.vlmm.script = std::make_shared<backends::Script>(
      backends::Script::load(kFixtures + "/scripts/vlmm_shared.json"));
  pipeline.llm.id = "llm-main";
  pipeline.llm.role = backends::Role::llm;
  pipeline.llm.model_name = "scripted";
  pipeline.llm.script = std::make_shared<backends::Script>(
      backends::Script::load(kFixtures + "/scripts/llm_shared.json"));
  pipeline.asr.id = "asr-main";
  pipeline.asr.role = backends::Role::asr;
  pipeline.asr.model_name = "scripted";
  pipeline.asr.script = std::make_shared<backends::Script>(
      backends::Script::load(kFixtures + "/scripts/asr.json"));

  auto prompts_for = [&](Sample sample, Label gold) {
    sample.gold_label = gold;
    backends::Invoker invoker;
    std::vector<std::string> prompts;
    invoker.set_request_observer(
        [&](const backends::BackendSpec&, const backends::ModelRequest& req) {
          prompts.push_back(req.prompt);
        });
    coct::Runtime rt{invoker, templates};
    coct::classify(rt, sample, pipeline);
    return prompts;
  };
  for (const auto& entry : manifest) {
    if (prompts_for(entry.sample, Label::Strengthener) !=
        prompts_for(entry.sample, Label::Weakener)) {
      ok = false;
      detail = "prompt depends on gold label for " + entry.sample.id;
    }
  }
  report("parser-properties", ok,
         ok ? "label round-trip, gold-flip prompt invariance over the fixture corpus"
            : detail);
}

void check_clip_edit_properties() {
  std::mt19937 rng(777);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  bool ok = true;
  std::string detail;
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double duration = 2.0 + 118.0 * unit(rng);
    double a = duration * unit(rng);
    double b = duration * unit(rng);
    if (a > b) std::swap(a, b);
    if (b - a < 1e-9) continue;
    dataset::ClipEditPlan plan;
    try {
      plan = dataset::plan_clip_edit(duration, {a, b});
    } catch (const dataset::DegenerateKeep&) {
      continue;
    }
    ++checked;
    const double prefix = a;
    const double suffix = duration - b;
    const bool disjoint = plan.keep.end <= a || plan.keep.start >= b;
    const bool contained = plan.keep.start >= 0.0 && plan.keep.end <= duration;
    const double discarded = (prefix + suffix) - plan.keep.length();
    const bool conserved =
        std::fabs(plan.keep.length() + discarded + (b - a) - duration) < 1e-9;
    const bool maximal = plan.keep.length() == std::max(prefix, suffix);
    if (!(disjoint && contained && conserved && maximal)) {
      ok = false;
      detail = "violation at trial " + std::to_string(trial);
    }
  }
  report("clip-edit-properties", ok,
         ok ? "disjoint/contained/conserved/maximal over " + std::to_string(checked) +
                  " random spans"
            : detail);
}

void check_majority_vote() {
  bool ok = true;
  for (auto a : eval::kAllCategories) {
    for (auto b : eval::kAllCategories) {
      for (auto c : eval::kAllCategories) {
        auto result = eval::majority_vote({{a, b, c}});
        const bool distinct = a != b && b != c && a != c;
        if (distinct) {
          if (result.has_value()) ok = false;
          continue;
        }
        if (!result.has_value()) {
          ok = false;
          continue;
        }
        int count = (a == *result) + (b == *result) + (c == *result);
        if (count < 2) ok = false;
      }
    }
  }
  report("majority-vote", ok, "exhaustive over all 512 vote triples");
}

void check_benchmark_manifest() {
  const char* path = std::getenv("DVE_BENCHMARK_MANIFEST");
  if (!path || !*path) {
    skip("benchmark-manifest-stats", "set DVE_BENCHMARK_MANIFEST to the released manifest to enable");
    return;
  }
  bool ok = true;
  std::string detail;
  try {
    auto manifest = dataset::load_manifest(path);
    auto stats = dataset::compute_stats(manifest);
    ok &= stats.total == 986;
    ok &= stats.weakeners == 493;
    ok &= stats.strengtheners == 493;
    ok &= eval::round2(stats.avg_hypothesis_words) == 17.99;
    ok &= eval::round2(stats.avg_update_words) == 12.28;
    ok &= eval::round2(stats.avg_duration_seconds) == 16.45;
    if (!ok) {
      std::ostringstream got;
      got << stats.total << "/" << stats.weakeners << "/" << stats.strengtheners << "/"
          << eval::round2(stats.avg_hypothesis_words) << "/"
          << eval::round2(stats.avg_update_words) << "/"
          << eval::round2(stats.avg_duration_seconds);
      detail = "got " + got.str() + ", want 986/493/493/17.99/12.28/16.45";
    }
  } catch (const std::exception& ex) {
    ok = false;
    detail = ex.what();
  }
  report("benchmark-manifest-stats", ok, detail);
}

void check_fair_coin_sratio() {
  // A fair-coin classifier wired through the baseline pipeline on a
  // balanced 100-sample corpus: SRatio must land in the binomial 95% band.
  auto media = fs::temp_directory_path() /
               ("dve-accept-coin-" + std::to_string(::getpid()) + ".mp4");
  {
    std::ofstream out(media, std::ios::binary);
    out << "coin clip bytes";
  }

  std::mt19937 rng(160012);
  std::vector<Sample> samples;
  std::vector<backends::ScriptEntry> entries;
  for (int i = 0; i < 100; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "coin%03d", i);
    Sample sample;
    sample.id = id;
    sample.video = {media.string(), 10.0, false};
    sample.hypothesis = "A fixed claim about the clip.";
    sample.update = "coin update number " + std::to_string(i) + " ends here.";
    sample.gold_label = i % 2 ? Label::Strengthener : Label::Weakener;
    samples.push_back(sample);

    const char* flip = rng() % 2 ? "Strengthener" : "Weakener";
    entries.push_back({backends::ScriptEntry::Match::prompt_substring,
                       *sample.update, flip});
  }
  auto vlmm = backends::scripted_backend("coin-vlmm", backends::Role::vlmm,
                                         std::move(entries));
  auto templates = TemplateSet::load(kSource + "/templates/default");
  backends::Invoker invoker;
  coct::Runtime rt{invoker, templates};

  std::vector<Label> predictions;
  for (const auto& sample : samples) {
    predictions.push_back(coct::classify_baseline(rt, sample, vlmm).verdict.label);
  }
  const double ratio = eval::sratio(predictions);
  const bool ok = ratio >= 40.0 && ratio <= 60.0;
  std::ostringstream detail;
  detail << "sratio " << eval::round2(ratio) << " within [40, 60] at n=100";
  report("fair-coin-sratio", ok, detail.str());
}

}  // namespace

int main() {
  const auto suite_start = std::chrono::steady_clock::now();

  check_metric_oracle_equivalence();
  check_averaging_identity();
  check_worked_examples();
  check_pipeline_call_graph();
  check_determinism_and_cache();
  check_parser_properties();
  check_clip_edit_properties();
  check_majority_vote();
  check_benchmark_manifest();
  check_fair_coin_sratio();

  const auto elapsed = std::chrono::duration_cast<std::chrono::seconds>(
      std::chrono::steady_clock::now() - suite_start);
  report("fixture-suite-runtime", elapsed.count() < 120,
         std::to_string(elapsed.count()) + "s (bound 120s, no network)");

  std::cout << (g_failures == 0 ? "ALL CRITERIA PASSED" : "CRITERIA FAILED") << " ("
            << g_failures << " failure(s))\n";
  return g_failures == 0 ? 0 : 1;
}
