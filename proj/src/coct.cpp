#include "dve/coct.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include <json.hpp>

namespace dve::coct {

namespace {

using json = nlohmann::json;

std::string trim(const std::string& text) {
  auto begin = text.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  auto end = text.find_last_not_of(" \t\r\n");
  return text.substr(begin, end - begin + 1);
}

std::string to_lower(const std::string& text) {
  std::string lowered = text;
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return lowered;
}

struct SectionSpec {
  std::string key;
  std::vector<std::string> prefixes;  // lowercase
};

// Splits model output into named sections. A section starts at a line
// whose trimmed lowercase form begins with one of the prefixes and
// contains a ':'; its content runs to the next section header.
std::map<std::string, std::string> split_sections(const std::string& text,
                                                  const std::vector<SectionSpec>& specs) {
  std::map<std::string, std::string> sections;
  std::string current_key;
  std::string current_value;

  auto flush = [&] {
    if (!current_key.empty() && !sections.count(current_key)) {
      sections[current_key] = trim(current_value);
    }
    current_key.clear();
    current_value.clear();
  };

  size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    const std::string line =
        end == std::string::npos ? text.substr(start) : text.substr(start, end - start);
    const std::string lowered = to_lower(trim(line));

    const SectionSpec* matched = nullptr;
    for (const auto& spec : specs) {
      for (const auto& prefix : spec.prefixes) {
        if (lowered.rfind(prefix, 0) == 0 && line.find(':') != std::string::npos) {
          matched = &spec;
          break;
        }
      }
      if (matched) break;
    }

    if (matched) {
      flush();
      current_key = matched->key;
      current_value = line.substr(line.find(':') + 1);
    } else if (!current_key.empty()) {
      current_value += "\n" + line;
    }

    if (end == std::string::npos) break;
    start = end + 1;
  }
  flush();
  return sections;
}

json audit_to_json(const backends::AuditTrail& audit) {
  json calls = json::array();
  for (const auto& call : audit) {
    calls.push_back({{"role", backends::role_name(call.role)},
                     {"cache_key", call.cache_key},
                     {"cached", call.cached}});
  }
  return calls;
}

backends::AuditTrail audit_from_json(const json& calls) {
  backends::AuditTrail audit;
  for (const auto& call : calls) {
    audit.push_back({backends::parse_role(call.at("role").get<std::string>()),
                     call.at("cache_key").get<std::string>(),
                     call.at("cached").get<bool>()});
  }
  return audit;
}

Label label_from_token(const std::string& token) {
  if (token == "Strengthener") return Label::Strengthener;
  if (token == "Weakener") return Label::Weakener;
  if (token == "Neutral") return Label::Neutral;
  throw ConfigError("unknown label token: " + token);
}

}  // namespace

std::string ablation_name(Ablation ablation) {
  switch (ablation) {
    case Ablation::full: return "full";
    case Ablation::no_refined_description: return "no_refined_description";
    case Ablation::no_counterfactual: return "no_counterfactual";
  }
  throw Error("unknown ablation");
}

Ablation parse_ablation(const std::string& name) {
  if (name == "full" || name == "none") return Ablation::full;
  if (name == "no_refined_description" || name == "no-refined-description")
    return Ablation::no_refined_description;
  if (name == "no_counterfactual" || name == "no-counterfactual")
    return Ablation::no_counterfactual;
  throw ConfigError("unknown ablation: " + name);
}

RationalePair gen_rationales(Runtime& rt, const VideoRef& video, const std::string& hypothesis,
                             const std::string& update, const backends::BackendSpec& vlmm,
                             bool two_calls, backends::AuditTrail* audit) {
  RationalePair pair;
  if (two_calls) {
    for (const char* perspective : {"weakens", "strengthens"}) {
      backends::ModelRequest req;
      req.prompt = rt.templates.render("rationale_single", {{"hypothesis", hypothesis},
                                                            {"update", update},
                                                            {"perspective", perspective}});
      req.media = {backends::video_media(video)};
      const auto response = rt.invoker.invoke(vlmm, req, audit);
      const std::string rationale = trim(response.text);
      if (rationale.empty()) {
        throw SplitFailure("empty rationale for perspective '" + std::string(perspective) + "'");
      }
      (std::string(perspective) == "weakens" ? pair.weakener_rationale
                                             : pair.strengthener_rationale) = rationale;
    }
    return pair;
  }

  backends::ModelRequest req;
  req.prompt = rt.templates.render("rationale_generation",
                                   {{"hypothesis", hypothesis}, {"update", update}});
  req.media = {backends::video_media(video)};
  const auto response = rt.invoker.invoke(vlmm, req, audit);

  const auto sections = split_sections(
      response.text,
      {{"weakener", {"weakener"}}, {"strengthener", {"strengthener"}}});
  const auto weakener = sections.find("weakener");
  const auto strengthener = sections.find("strengthener");
  if (weakener == sections.end() || weakener->second.empty() ||
      strengthener == sections.end() || strengthener->second.empty()) {
    throw SplitFailure("rationale response lacks the two expected sections: " +
                       response.text.substr(0, 120));
  }
  pair.weakener_rationale = weakener->second;
  pair.strengthener_rationale = strengthener->second;
  return pair;
}

std::string describe_video(Runtime& rt, const VideoRef& video,
                           const backends::BackendSpec& vlmm, backends::AuditTrail* audit) {
  backends::ModelRequest req;
  req.prompt = rt.templates.render("video_description", {});
  req.media = {backends::video_media(video)};
  const auto response = rt.invoker.invoke(vlmm, req, audit);
  const std::string description = trim(response.text);
  if (description.empty()) {
    throw EmptyDescription("backend '" + vlmm.id + "' returned an empty description");
  }
  return description;
}

std::string transcribe(Runtime& rt, const VideoRef& video, const backends::BackendSpec& asr,
                       backends::AuditTrail* audit) {
  if (!video.audio_present) return "";
  backends::ModelRequest req;
  req.media = {backends::audio_media(video)};
  const auto response = rt.invoker.invoke(asr, req, audit);
  return trim(response.text);
}

std::string fuse_description(Runtime& rt, const std::string& transcript,
                             const std::string& raw_description,
                             const backends::BackendSpec& llm, backends::AuditTrail* audit) {
  if (raw_description.empty()) {
    throw EmptyDescription("fuse_description requires a non-empty raw description");
  }
  if (transcript.empty()) return raw_description;
  backends::ModelRequest req;
  req.prompt = rt.templates.render(
      "transcript_fusion", {{"transcript", transcript}, {"description", raw_description}});
  const auto response = rt.invoker.invoke(llm, req, audit);
  const std::string fused = trim(response.text);
  if (fused.empty()) {
    throw EmptyDescription("backend '" + llm.id + "' returned an empty fused description");
  }
  return fused;
}

Verdict refine_select(Runtime& rt, const RationalePair& rationales,
                      const std::string& description, const std::string& hypothesis,
                      const std::string& update, const backends::BackendSpec& llm,
                      const ParsePolicy& policy, backends::AuditTrail* audit) {
  backends::ModelRequest req;
  req.prompt = rt.templates.render(
      "refine_select", {{"weakener_rationale", rationales.weakener_rationale},
                        {"strengthener_rationale", rationales.strengthener_rationale},
                        {"description", description},
                        {"hypothesis", hypothesis},
                        {"update", update}});
  const auto response = rt.invoker.invoke(llm, req, audit);

  Verdict verdict;
  verdict.selector_raw_output = response.text;
  verdict.label = parse_label(response.text, policy);
  const auto sections =
      split_sections(response.text, {{"weakener", {"refined w"}},
                                     {"strengthener", {"refined s"}},
                                     {"answer", {"answer", "final answer"}}});
  if (auto it = sections.find("weakener"); it != sections.end()) {
    verdict.refined_weakener_rationale = it->second;
  }
  if (auto it = sections.find("strengthener"); it != sections.end()) {
    verdict.refined_strengthener_rationale = it->second;
  }
  return verdict;
}

PredictionRecord classify(Runtime& rt, const Sample& sample, const PipelineBackends& backends,
                          const ClassifyOptions& options) {
  if (sample.hypothesis.empty() || !sample.update || sample.update->empty()) {
    throw Error("classification sample '" + sample.id + "' needs hypothesis and update");
  }
  PredictionRecord record;
  record.sample_id = sample.id;
  record.ablation = options.ablation;
  auto* audit = &record.backend_calls;

  switch (options.ablation) {
    case Ablation::full: {
      record.rationales = gen_rationales(rt, sample.video, sample.hypothesis, *sample.update,
                                         backends.vlmm, options.two_call_rationales, audit);
      record.descriptions.raw_description =
          describe_video(rt, sample.video, backends.vlmm, audit);
      record.descriptions.transcript = transcribe(rt, sample.video, backends.asr, audit);
      record.descriptions.fused_description =
          fuse_description(rt, record.descriptions.transcript,
                           record.descriptions.raw_description, backends.llm, audit);
      record.verdict = refine_select(rt, record.rationales,
                                     record.descriptions.fused_description, sample.hypothesis,
                                     *sample.update, backends.llm, options.parse_policy, audit);
      break;
    }
    case Ablation::no_refined_description: {
      // Selection runs on the raw visual description; ASR and fusion are
      // skipped entirely.
      record.rationales = gen_rationales(rt, sample.video, sample.hypothesis, *sample.update,
                                         backends.vlmm, options.two_call_rationales, audit);
      record.descriptions.raw_description =
          describe_video(rt, sample.video, backends.vlmm, audit);
      record.descriptions.fused_description = record.descriptions.raw_description;
      record.verdict = refine_select(rt, record.rationales,
                                     record.descriptions.raw_description, sample.hypothesis,
                                     *sample.update, backends.llm, options.parse_policy, audit);
      break;
    }
    case Ablation::no_counterfactual: {
      // No dual rationales; one direct classification call on the fused
      // description.
      record.descriptions.raw_description =
          describe_video(rt, sample.video, backends.vlmm, audit);
      record.descriptions.transcript = transcribe(rt, sample.video, backends.asr, audit);
      record.descriptions.fused_description =
          fuse_description(rt, record.descriptions.transcript,
                           record.descriptions.raw_description, backends.llm, audit);
      backends::ModelRequest req;
      req.prompt = rt.templates.render(
          "direct_classification",
          {{"description", record.descriptions.fused_description},
           {"hypothesis", sample.hypothesis},
           {"update", *sample.update}});
      req.media = {backends::video_media(sample.video)};
      const auto response = rt.invoker.invoke(backends.vlmm, req, audit);
      record.verdict.selector_raw_output = response.text;
      record.verdict.label = parse_label(response.text, options.parse_policy);
      break;
    }
  }
  return record;
}

PredictionRecord classify_baseline(Runtime& rt, const Sample& sample,
                                   const backends::BackendSpec& vlmm,
                                   const ParsePolicy& policy) {
  if (sample.hypothesis.empty() || !sample.update || sample.update->empty()) {
    throw Error("classification sample '" + sample.id + "' needs hypothesis and update");
  }
  PredictionRecord record;
  record.sample_id = sample.id;
  record.baseline = true;

  backends::ModelRequest req;
  req.prompt = rt.templates.render(
      "classification_baseline",
      {{"hypothesis", sample.hypothesis}, {"update", *sample.update}});
  req.media = {backends::video_media(sample.video)};
  const auto response = rt.invoker.invoke(vlmm, req, &record.backend_calls);
  record.verdict.selector_raw_output = response.text;
  record.verdict.label = parse_label(response.text, policy);
  return record;
}

std::string prediction_record_to_json_line(const PredictionRecord& record) {
  json j;
  j["sample_id"] = record.sample_id;
  j["variant"] = record.baseline ? "baseline" : ablation_name(record.ablation);
  j["verdict"] = {
      {"label", format_label(record.verdict.label)},
      {"refined_weakener_rationale", record.verdict.refined_weakener_rationale},
      {"refined_strengthener_rationale", record.verdict.refined_strengthener_rationale},
      {"selector_raw_output", record.verdict.selector_raw_output}};
  j["rationales"] = {{"weakener", record.rationales.weakener_rationale},
                     {"strengthener", record.rationales.strengthener_rationale}};
  j["descriptions"] = {{"raw", record.descriptions.raw_description},
                       {"transcript", record.descriptions.transcript},
                       {"fused", record.descriptions.fused_description}};
  j["backend_calls"] = audit_to_json(record.backend_calls);
  return j.dump();
}

PredictionRecord prediction_record_from_json_line(const std::string& line) {
  json j = json::parse(line);
  PredictionRecord record;
  record.sample_id = j.at("sample_id").get<std::string>();
  const std::string variant = j.value("variant", "full");
  if (variant == "baseline") {
    record.baseline = true;
  } else {
    record.ablation = parse_ablation(variant);
  }
  const auto& verdict = j.at("verdict");
  record.verdict.label = label_from_token(verdict.at("label").get<std::string>());
  record.verdict.refined_weakener_rationale =
      verdict.value("refined_weakener_rationale", "");
  record.verdict.refined_strengthener_rationale =
      verdict.value("refined_strengthener_rationale", "");
  record.verdict.selector_raw_output = verdict.value("selector_raw_output", "");
  if (j.contains("rationales")) {
    record.rationales.weakener_rationale = j["rationales"].value("weakener", "");
    record.rationales.strengthener_rationale = j["rationales"].value("strengthener", "");
  }
  if (j.contains("descriptions")) {
    record.descriptions.raw_description = j["descriptions"].value("raw", "");
    record.descriptions.transcript = j["descriptions"].value("transcript", "");
    record.descriptions.fused_description = j["descriptions"].value("fused", "");
  }
  if (j.contains("backend_calls")) {
    record.backend_calls = audit_from_json(j["backend_calls"]);
  }
  return record;
}

}  // namespace dve::coct
