#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dve/core.hpp"

// Benchmark tooling: manifest schema and validation, the evidence-removal
// clip-edit rule, dataset statistics, and the three-annotator workflow
// state machine. Actual media trimming is delegated to a configured
// external command; this module computes plans and verifies durations.

namespace dve::dataset {

class InvalidSpan : public Error {
 public:
  explicit InvalidSpan(const std::string& message) : Error(message) {}
};

class DegenerateKeep : public Error {
 public:
  explicit DegenerateKeep(const std::string& message) : Error(message) {}
};

class EmptyManifest : public Error {
 public:
  explicit EmptyManifest(const std::string& message) : Error(message) {}
};

class IllegalTransition : public Error {
 public:
  explicit IllegalTransition(const std::string& message) : Error(message) {}
};

struct TimeSpan {
  double start = 0.0;
  double end = 0.0;
  double length() const { return end - start; }
};

enum class EditRule { prefix_kept, suffix_kept, longer_of_two };

std::string edit_rule_name(EditRule rule);

// The evidence-removal decision for one video: which contiguous interval
// survives as the neutral premise.
struct ClipEditPlan {
  TimeSpan keep;
  TimeSpan removed;
  EditRule rule_applied = EditRule::longer_of_two;
};

// Evidence at the start keeps the suffix; evidence at the end keeps the
// prefix; interior evidence keeps the longer remainder, earlier segment on
// ties. Kept segments shorter than min_keep_seconds are rejected.
ClipEditPlan plan_clip_edit(double duration, TimeSpan evidence, double min_keep_seconds = 1.0);

enum class AnnotationState { Drafted, Reviewed, Finalized };
enum class AnnotationAction { submit_draft, review_pass, review_correct, finalize };

std::string annotation_state_name(AnnotationState state);
AnnotationState parse_annotation_state(const std::string& name);
std::string annotation_action_name(AnnotationAction action);

struct AnnotationEvent {
  std::string actor;   // annotator_1 / annotator_2 / annotator_3
  std::string action;
  std::string timestamp;  // ISO-8601 UTC
  std::optional<std::string> corrected_update;
};

struct ManifestEntry {
  Sample sample;
  std::optional<TimeSpan> evidence_span;
  VideoRef source_video;
  AnnotationState annotation_state = AnnotationState::Drafted;
  std::vector<AnnotationEvent> history;
};

// Drafted --(review_pass|review_correct)--> Reviewed --(finalize)--> Finalized.
// submit_draft re-records the draft while Drafted; everything else is
// IllegalTransition. review_correct may carry a corrected update text.
ManifestEntry advance_annotation(const ManifestEntry& entry, AnnotationAction action,
                                 std::optional<std::string> corrected_update = std::nullopt,
                                 std::optional<std::string> timestamp = std::nullopt);

struct DatasetStats {
  long long total = 0;
  long long strengtheners = 0;
  long long weakeners = 0;
  double avg_hypothesis_words = 0.0;
  double avg_update_words = 0.0;
  double avg_duration_seconds = 0.0;
  long long unique_videos = 0;
};

// Over Finalized entries; word counts by whitespace tokenization. Sums are
// accumulated over value-sorted copies so the result is independent of
// entry order.
DatasetStats compute_stats(const std::vector<ManifestEntry>& manifest);

long long count_words(const std::string& text);

struct Violation {
  std::string kind;       // duplicate_id / invalid_span / missing_field / label_imbalance / ...
  std::string sample_id;  // empty for manifest-wide violations
  std::string message;
};

// Every invariant violation in the manifest; empty means valid.
std::vector<Violation> validate_manifest(const std::vector<ManifestEntry>& manifest);

// Line-delimited manifest records, one entry per line.
std::vector<ManifestEntry> load_manifest(const std::string& path);
void save_manifest(const std::vector<ManifestEntry>& manifest, const std::string& path);
ManifestEntry entry_from_json_line(const std::string& line);
std::string entry_to_json_line(const ManifestEntry& entry);

struct TrimResult {
  std::string sample_id;
  std::string output_path;
  ClipEditPlan plan;
  std::optional<double> measured_duration;  // absent when no probe command configured
  bool duration_ok = true;
};

// Renders the trim command per plan ({in} {out} {start} {end}) and runs it;
// when probe_command is set, re-measures the output and flags durations
// off by more than 0.1s.
std::vector<TrimResult> run_trim(const std::vector<ManifestEntry>& manifest,
                                 const std::string& trim_command,
                                 const std::string& probe_command,
                                 const std::string& output_dir,
                                 double min_keep_seconds = 1.0);

}  // namespace dve::dataset
