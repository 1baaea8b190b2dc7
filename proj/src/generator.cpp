#include "dve/generator.hpp"

#include <json.hpp>

namespace dve::gen {

namespace {

using json = nlohmann::json;

std::string trim(const std::string& text) {
  auto begin = text.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  auto end = text.find_last_not_of(" \t\r\n");
  return text.substr(begin, end - begin + 1);
}

}  // namespace

std::string draft_update(coct::Runtime& rt, const VideoRef& video,
                         const std::string& hypothesis, Goal goal,
                         const backends::BackendSpec& vlmm, backends::AuditTrail* audit) {
  backends::ModelRequest req;
  req.prompt = rt.templates.render(
      "generation_baseline", {{"hypothesis", hypothesis}, {"goal", format_goal(goal)}});
  req.media = {backends::video_media(video)};
  const auto response = rt.invoker.invoke(vlmm, req, audit);
  const std::string draft = trim(response.text);
  if (draft.empty()) throw EmptyDraft("backend '" + vlmm.id + "' returned a blank draft");
  return draft;
}

std::string refine_update(coct::Runtime& rt, const std::string& description,
                          const std::string& hypothesis, const std::string& draft, Goal goal,
                          const backends::BackendSpec& llm, backends::AuditTrail* audit) {
  if (description.empty() || hypothesis.empty() || draft.empty()) {
    throw Error("refine_update requires non-empty description, hypothesis, and draft");
  }
  backends::ModelRequest req;
  req.prompt = rt.templates.render("update_refinement", {{"description", description},
                                                         {"hypothesis", hypothesis},
                                                         {"draft_update", draft},
                                                         {"goal", format_goal(goal)}});
  const auto response = rt.invoker.invoke(llm, req, audit);
  if (trim(response.text).empty()) {
    throw EmptyRefinement("backend '" + llm.id + "' returned a blank refinement");
  }
  return response.text;
}

GenerationRecord generate(coct::Runtime& rt, const Sample& sample,
                          const coct::PipelineBackends& backends,
                          const GenerateOptions& options) {
  if (!sample.gold_goal) {
    throw Error("generation sample '" + sample.id + "' carries no goal");
  }
  GenerationRecord record;
  record.sample_id = sample.id;
  record.goal = *sample.gold_goal;
  record.hypothesis = sample.hypothesis;
  auto* audit = &record.backend_calls;

  record.descriptions.raw_description =
      coct::describe_video(rt, sample.video, backends.vlmm, audit);
  record.descriptions.transcript = coct::transcribe(rt, sample.video, backends.asr, audit);
  record.descriptions.fused_description =
      coct::fuse_description(rt, record.descriptions.transcript,
                             record.descriptions.raw_description, backends.llm, audit);

  if (options.draft_free) {
    backends::ModelRequest req;
    req.prompt = rt.templates.render(
        "update_refinement_draftfree",
        {{"description", record.descriptions.fused_description},
         {"hypothesis", sample.hypothesis},
         {"goal", format_goal(record.goal)}});
    const auto response = rt.invoker.invoke(backends.llm, req, audit);
    if (trim(response.text).empty()) {
      throw EmptyRefinement("backend '" + backends.llm.id + "' returned a blank update");
    }
    record.refined_update = response.text;
    return record;
  }

  record.draft_update =
      draft_update(rt, sample.video, sample.hypothesis, record.goal, backends.vlmm, audit);
  record.refined_update =
      refine_update(rt, record.descriptions.fused_description, sample.hypothesis,
                    record.draft_update, record.goal, backends.llm, audit);
  return record;
}

std::string generation_record_to_json_line(const GenerationRecord& record) {
  json calls = json::array();
  for (const auto& call : record.backend_calls) {
    calls.push_back({{"role", backends::role_name(call.role)},
                     {"cache_key", call.cache_key},
                     {"cached", call.cached}});
  }
  json j;
  j["sample_id"] = record.sample_id;
  j["goal"] = format_goal(record.goal);
  j["hypothesis"] = record.hypothesis;
  j["draft_update"] = record.draft_update;
  j["refined_update"] = record.refined_update;
  j["descriptions"] = {{"raw", record.descriptions.raw_description},
                       {"transcript", record.descriptions.transcript},
                       {"fused", record.descriptions.fused_description}};
  j["backend_calls"] = std::move(calls);
  return j.dump();
}

GenerationRecord generation_record_from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("malformed generation record: ") + ex.what());
  }
  GenerationRecord record;
  record.sample_id = j.at("sample_id").get<std::string>();
  if (!j.contains("goal")) {
    throw ConfigError("generation record '" + record.sample_id + "' is missing its goal");
  }
  record.goal =
      j["goal"].get<std::string>() == "Strengthener" ? Goal::Strengthener : Goal::Weakener;
  record.hypothesis = j.value("hypothesis", "");
  record.draft_update = j.value("draft_update", "");
  record.refined_update = j.value("refined_update", "");
  if (j.contains("descriptions")) {
    record.descriptions.raw_description = j["descriptions"].value("raw", "");
    record.descriptions.transcript = j["descriptions"].value("transcript", "");
    record.descriptions.fused_description = j["descriptions"].value("fused", "");
  }
  if (j.contains("backend_calls")) {
    for (const auto& call : j["backend_calls"]) {
      record.backend_calls.push_back({backends::parse_role(call.at("role").get<std::string>()),
                                      call.at("cache_key").get<std::string>(),
                                      call.at("cached").get<bool>()});
    }
  }
  return record;
}

}  // namespace dve::gen
