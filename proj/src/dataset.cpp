#include "dve/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dve::dataset {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string now_utc_iso8601() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buffer[32];
  std::strftime(buffer, sizeof(buffer), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buffer;
}

std::string shell_quote(const std::string& arg) {
  std::string quoted = "'";
  for (char c : arg) {
    if (c == '\'') {
      quoted += "'\\''";
    } else {
      quoted += c;
    }
  }
  quoted += "'";
  return quoted;
}

std::string substitute(std::string text, const std::string& placeholder,
                       const std::string& value) {
  std::string::size_type pos = 0;
  while ((pos = text.find(placeholder, pos)) != std::string::npos) {
    text.replace(pos, placeholder.size(), value);
    pos += value.size();
  }
  return text;
}

double mean_sorted(std::vector<double> values) {
  // Value-sorted accumulation keeps the sum independent of entry order.
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  return values.empty() ? 0.0 : sum / static_cast<double>(values.size());
}

json video_to_json(const VideoRef& video) {
  return {{"path", video.path_or_uri},
          {"duration_seconds", video.duration_seconds},
          {"audio_present", video.audio_present}};
}

VideoRef video_from_json(const json& j) {
  VideoRef video;
  video.path_or_uri = j.value("path", "");
  video.duration_seconds = j.value("duration_seconds", 0.0);
  video.audio_present = j.value("audio_present", false);
  return video;
}

}  // namespace

std::string edit_rule_name(EditRule rule) {
  switch (rule) {
    case EditRule::prefix_kept: return "prefix_kept";
    case EditRule::suffix_kept: return "suffix_kept";
    case EditRule::longer_of_two: return "longer_of_two";
  }
  throw Error("unknown edit rule");
}

ClipEditPlan plan_clip_edit(double duration, TimeSpan evidence, double min_keep_seconds) {
  if (!(duration > 0.0)) {
    throw InvalidSpan("duration must be positive, got " + std::to_string(duration));
  }
  if (!(evidence.start >= 0.0) || !(evidence.start < evidence.end) ||
      !(evidence.end <= duration)) {
    throw InvalidSpan("evidence span [" + std::to_string(evidence.start) + ", " +
                      std::to_string(evidence.end) + ") invalid for duration " +
                      std::to_string(duration));
  }

  ClipEditPlan plan;
  plan.removed = evidence;
  if (evidence.start == 0.0) {
    plan.keep = {evidence.end, duration};
    plan.rule_applied = EditRule::suffix_kept;
  } else if (evidence.end == duration) {
    plan.keep = {0.0, evidence.start};
    plan.rule_applied = EditRule::prefix_kept;
  } else {
    const double prefix_len = evidence.start;
    const double suffix_len = duration - evidence.end;
    // Ties keep the earlier segment.
    if (prefix_len >= suffix_len) {
      plan.keep = {0.0, evidence.start};
    } else {
      plan.keep = {evidence.end, duration};
    }
    plan.rule_applied = EditRule::longer_of_two;
  }

  if (plan.keep.length() < min_keep_seconds) {
    throw DegenerateKeep("kept segment " + std::to_string(plan.keep.length()) +
                         "s is below the minimum of " + std::to_string(min_keep_seconds) + "s");
  }
  return plan;
}

std::string annotation_state_name(AnnotationState state) {
  switch (state) {
    case AnnotationState::Drafted: return "Drafted";
    case AnnotationState::Reviewed: return "Reviewed";
    case AnnotationState::Finalized: return "Finalized";
  }
  throw Error("unknown annotation state");
}

AnnotationState parse_annotation_state(const std::string& name) {
  if (name == "Drafted") return AnnotationState::Drafted;
  if (name == "Reviewed") return AnnotationState::Reviewed;
  if (name == "Finalized") return AnnotationState::Finalized;
  throw ConfigError("unknown annotation state: " + name);
}

std::string annotation_action_name(AnnotationAction action) {
  switch (action) {
    case AnnotationAction::submit_draft: return "submit_draft";
    case AnnotationAction::review_pass: return "review_pass";
    case AnnotationAction::review_correct: return "review_correct";
    case AnnotationAction::finalize: return "finalize";
  }
  throw Error("unknown annotation action");
}

ManifestEntry advance_annotation(const ManifestEntry& entry, AnnotationAction action,
                                 std::optional<std::string> corrected_update,
                                 std::optional<std::string> timestamp) {
  ManifestEntry next = entry;
  AnnotationEvent event;
  event.action = annotation_action_name(action);
  event.timestamp = timestamp ? *timestamp : now_utc_iso8601();

  switch (entry.annotation_state) {
    case AnnotationState::Drafted:
      if (action == AnnotationAction::submit_draft) {
        event.actor = "annotator_1";
        break;
      }
      if (action == AnnotationAction::review_pass ||
          action == AnnotationAction::review_correct) {
        event.actor = "annotator_2";
        if (action == AnnotationAction::review_correct) {
          if (corrected_update) next.sample.update = *corrected_update;
          event.corrected_update = corrected_update;
        }
        next.annotation_state = AnnotationState::Reviewed;
        break;
      }
      throw IllegalTransition("action " + annotation_action_name(action) +
                              " is illegal in state Drafted");
    case AnnotationState::Reviewed:
      if (action == AnnotationAction::finalize) {
        event.actor = "annotator_3";
        next.annotation_state = AnnotationState::Finalized;
        break;
      }
      throw IllegalTransition("action " + annotation_action_name(action) +
                              " is illegal in state Reviewed");
    case AnnotationState::Finalized:
      throw IllegalTransition("entry is Finalized; no further action is legal");
  }

  next.history.push_back(std::move(event));
  return next;
}

long long count_words(const std::string& text) {
  long long words = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  return words;
}

DatasetStats compute_stats(const std::vector<ManifestEntry>& manifest) {
  std::vector<double> hypothesis_words;
  std::vector<double> update_words;
  std::vector<double> durations;
  std::set<std::string> videos;
  DatasetStats stats;

  for (const auto& entry : manifest) {
    if (entry.annotation_state != AnnotationState::Finalized) continue;
    ++stats.total;
    if (entry.sample.gold_label == Label::Strengthener) ++stats.strengtheners;
    if (entry.sample.gold_label == Label::Weakener) ++stats.weakeners;
    hypothesis_words.push_back(static_cast<double>(count_words(entry.sample.hypothesis)));
    if (entry.sample.update) {
      update_words.push_back(static_cast<double>(count_words(*entry.sample.update)));
    }
    durations.push_back(entry.sample.video.duration_seconds);
    videos.insert(entry.sample.video.path_or_uri);
  }
  if (stats.total == 0) throw EmptyManifest("no Finalized entries to summarize");

  stats.avg_hypothesis_words = mean_sorted(std::move(hypothesis_words));
  stats.avg_update_words = mean_sorted(std::move(update_words));
  stats.avg_duration_seconds = mean_sorted(std::move(durations));
  stats.unique_videos = static_cast<long long>(videos.size());
  return stats;
}

std::vector<Violation> validate_manifest(const std::vector<ManifestEntry>& manifest) {
  std::vector<Violation> violations;
  std::map<std::string, int> id_counts;
  long long strengtheners = 0;
  long long weakeners = 0;

  for (const auto& entry : manifest) {
    const auto& sample = entry.sample;
    ++id_counts[sample.id];
    if (sample.id.empty()) {
      violations.push_back({"missing_field", sample.id, "sample id is empty"});
    }
    if (sample.hypothesis.empty()) {
      violations.push_back({"missing_field", sample.id, "hypothesis is empty"});
    }
    if (sample.update && sample.update->empty()) {
      violations.push_back({"missing_field", sample.id, "update present but empty"});
    }
    if (!(sample.video.duration_seconds > 0.0)) {
      violations.push_back({"invalid_duration", sample.id, "video duration must be > 0"});
    }
    if (sample.gold_label == Label::Neutral) {
      violations.push_back(
          {"invalid_label", sample.id, "Neutral is not a valid gold label"});
    }
    if (entry.evidence_span) {
      const auto& span = *entry.evidence_span;
      const double source_duration = entry.source_video.duration_seconds;
      if (!(span.start >= 0.0) || !(span.start < span.end) || !(span.end <= source_duration)) {
        violations.push_back(
            {"invalid_span", sample.id,
             "evidence span [" + std::to_string(span.start) + ", " + std::to_string(span.end) +
                 ") invalid for source duration " + std::to_string(source_duration)});
      }
    }
    if (entry.annotation_state == AnnotationState::Finalized) {
      if (!sample.update || sample.update->empty()) {
        violations.push_back({"missing_field", sample.id, "Finalized entry has no update"});
      }
      if (!sample.gold_label) {
        violations.push_back({"missing_field", sample.id, "Finalized entry has no gold label"});
      } else if (*sample.gold_label == Label::Strengthener) {
        ++strengtheners;
      } else if (*sample.gold_label == Label::Weakener) {
        ++weakeners;
      }
    }
  }

  for (const auto& [id, count] : id_counts) {
    if (count > 1) {
      violations.push_back(
          {"duplicate_id", id, "id occurs " + std::to_string(count) + " times"});
    }
  }
  if (strengtheners != weakeners) {
    violations.push_back({"label_imbalance", "",
                          "gold labels are imbalanced: " + std::to_string(strengtheners) +
                              " Strengthener vs " + std::to_string(weakeners) + " Weakener"});
  }
  return violations;
}

std::string entry_to_json_line(const ManifestEntry& entry) {
  json j;
  j["id"] = entry.sample.id;
  j["video"] = video_to_json(entry.sample.video);
  j["hypothesis"] = entry.sample.hypothesis;
  if (entry.sample.update) j["update"] = *entry.sample.update;
  if (entry.sample.gold_label) j["gold_label"] = format_label(*entry.sample.gold_label);
  if (entry.sample.gold_goal) j["gold_goal"] = format_goal(*entry.sample.gold_goal);
  if (entry.evidence_span) {
    j["evidence_span"] = {{"start", entry.evidence_span->start},
                          {"end", entry.evidence_span->end}};
  }
  j["source_video"] = video_to_json(entry.source_video);
  j["state"] = annotation_state_name(entry.annotation_state);
  if (!entry.history.empty()) {
    json history = json::array();
    for (const auto& event : entry.history) {
      json e = {{"actor", event.actor}, {"action", event.action}, {"at", event.timestamp}};
      if (event.corrected_update) e["corrected_update"] = *event.corrected_update;
      history.push_back(std::move(e));
    }
    j["history"] = std::move(history);
  }
  return j.dump();
}

ManifestEntry entry_from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("malformed manifest line: ") + ex.what());
  }
  ManifestEntry entry;
  entry.sample.id = j.value("id", "");
  if (j.contains("video")) entry.sample.video = video_from_json(j["video"]);
  entry.sample.hypothesis = j.value("hypothesis", "");
  if (j.contains("update")) entry.sample.update = j["update"].get<std::string>();
  if (j.contains("gold_label")) {
    const std::string token = j["gold_label"].get<std::string>();
    if (token == "Strengthener") {
      entry.sample.gold_label = Label::Strengthener;
    } else if (token == "Weakener") {
      entry.sample.gold_label = Label::Weakener;
    } else {
      entry.sample.gold_label = Label::Neutral;
    }
  }
  if (j.contains("gold_goal")) {
    entry.sample.gold_goal = j["gold_goal"].get<std::string>() == "Strengthener"
                                 ? Goal::Strengthener
                                 : Goal::Weakener;
  }
  if (j.contains("evidence_span")) {
    entry.evidence_span = TimeSpan{j["evidence_span"].value("start", 0.0),
                                   j["evidence_span"].value("end", 0.0)};
  }
  if (j.contains("source_video")) {
    entry.source_video = video_from_json(j["source_video"]);
  } else {
    entry.source_video = entry.sample.video;
  }
  entry.annotation_state = parse_annotation_state(j.value("state", "Finalized"));
  if (j.contains("history")) {
    for (const auto& e : j["history"]) {
      AnnotationEvent event;
      event.actor = e.value("actor", "");
      event.action = e.value("action", "");
      event.timestamp = e.value("at", "");
      if (e.contains("corrected_update")) {
        event.corrected_update = e["corrected_update"].get<std::string>();
      }
      entry.history.push_back(std::move(event));
    }
  }
  return entry;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest: " + path);
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](std::string& media_path) {
    if (media_path.empty() || fs::path(media_path).is_absolute()) return;
    if (media_path.find("://") != std::string::npos) return;
    media_path = (base / media_path).lexically_normal().string();
  };

  std::vector<ManifestEntry> manifest;
  std::string line;
  size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    try {
      manifest.push_back(entry_from_json_line(line));
    } catch (const ConfigError& ex) {
      throw ConfigError(path + ":" + std::to_string(line_number) + ": " + ex.what());
    }
    resolve(manifest.back().sample.video.path_or_uri);
    resolve(manifest.back().source_video.path_or_uri);
  }
  return manifest;
}

void save_manifest(const std::vector<ManifestEntry>& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write manifest: " + path);
  for (const auto& entry : manifest) out << entry_to_json_line(entry) << "\n";
}

std::vector<TrimResult> run_trim(const std::vector<ManifestEntry>& manifest,
                                 const std::string& trim_command,
                                 const std::string& probe_command,
                                 const std::string& output_dir, double min_keep_seconds) {
  if (trim_command.empty()) throw ConfigError("no trim command configured");
  fs::create_directories(output_dir);

  std::vector<TrimResult> results;
  for (const auto& entry : manifest) {
    if (!entry.evidence_span) continue;
    TrimResult result;
    result.sample_id = entry.sample.id;
    result.plan = plan_clip_edit(entry.source_video.duration_seconds, *entry.evidence_span,
                                 min_keep_seconds);
    const fs::path source(entry.source_video.path_or_uri);
    const fs::path output =
        fs::path(output_dir) / (entry.sample.id + source.extension().string());
    result.output_path = output.string();

    std::string cmd = trim_command;
    cmd = substitute(cmd, "{in}", shell_quote(entry.source_video.path_or_uri));
    cmd = substitute(cmd, "{out}", shell_quote(output.string()));
    cmd = substitute(cmd, "{start}", std::to_string(result.plan.keep.start));
    cmd = substitute(cmd, "{end}", std::to_string(result.plan.keep.end));
    if (std::system(cmd.c_str()) != 0) {
      throw Error("trim command failed for sample " + entry.sample.id + ": " + cmd);
    }

    if (!probe_command.empty()) {
      std::string probe = substitute(probe_command, "{in}", shell_quote(output.string()));
      FILE* pipe = ::popen(probe.c_str(), "r");
      if (!pipe) throw Error("probe command failed to start: " + probe);
      char buffer[128] = {0};
      std::string captured;
      size_t n = 0;
      while ((n = ::fread(buffer, 1, sizeof(buffer), pipe)) > 0) captured.append(buffer, n);
      if (::pclose(pipe) != 0) {
        throw Error("probe command failed for sample " + entry.sample.id);
      }
      try {
        result.measured_duration = std::stod(captured);
      } catch (const std::exception&) {
        throw Error("probe command output not a duration: " + captured.substr(0, 40));
      }
      result.duration_ok =
          std::fabs(*result.measured_duration - result.plan.keep.length()) <= 0.1;
    }
    results.push_back(std::move(result));
  }
  return results;
}

}  // namespace dve::dataset
