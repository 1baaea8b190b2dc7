#pragma once

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

// Core vocabulary for the defeasible video entailment harness: labels,
// goals, samples, prompt templates, and the canonical label parser that
// every pipeline stage funnels its model output through.

namespace dve {

// Base class for every error raised by the harness.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& message) : std::runtime_error(message) {}
};

class NoLabelFound : public Error {
 public:
  explicit NoLabelFound(const std::string& message) : Error(message) {}
};

class AmbiguousLabel : public Error {
 public:
  explicit AmbiguousLabel(const std::string& message) : Error(message) {}
};

class MissingSlot : public Error {
 public:
  MissingSlot(const std::string& template_name, std::vector<std::string> slots);
  const std::vector<std::string>& slots() const { return slots_; }

 private:
  std::vector<std::string> slots_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error(message) {}
};

// Predicted update type. Neutral is a parse-only outcome: gold data is
// restricted to Strengthener/Weakener.
enum class Label { Strengthener, Weakener, Neutral };

// Requested direction for the generation task. Never Neutral.
enum class Goal { Strengthener, Weakener };

std::string format_label(Label label);
std::string format_goal(Goal goal);
Label to_label(Goal goal);

struct VideoRef {
  std::string path_or_uri;
  double duration_seconds = 0.0;
  bool audio_present = false;
};

// One benchmark triple. Classification samples carry update + gold_label;
// generation samples carry gold_goal. A sample may carry all three and be
// usable for both tasks.
struct Sample {
  std::string id;
  VideoRef video;
  std::string hypothesis;
  std::optional<std::string> update;
  std::optional<Label> gold_label;
  std::optional<Goal> gold_goal;
};

// The two counterfactual perspectives produced for one sample.
struct RationalePair {
  std::string weakener_rationale;
  std::string strengthener_rationale;
};

// How parse_label scans free-form model output.
//
// Precedence: lines containing an answer marker are scanned from the last
// line upward; within the first such line that carries a label token, the
// token closest after the marker wins. If no marker line resolves it, the
// whole text is scanned; opposing tokens at that level are ambiguous
// unless tie-breaking is enabled (last occurrence wins).
struct ParsePolicy {
  // Matched case-insensitively as stems, so "weakens"/"weakener"/"weakened"
  // all hit the weakener token.
  std::string strengthener_token = "strengthen";
  std::string weakener_token = "weaken";
  std::string neutral_token = "neutral";
  bool allow_neutral = false;
  bool tie_break_last_occurrence = false;
  std::vector<std::string> answer_markers = {"answer"};
};

Label parse_label(const std::string& raw, const ParsePolicy& policy = {});

// A prompt with `{slot}` markers. required_slots comes from the template
// index; rendering additionally requires a binding for every marker that
// actually occurs in the body.
struct PromptTemplate {
  std::string name;
  std::string body;
  std::set<std::string> required_slots;
};

using SlotBindings = std::map<std::string, std::string>;

// Single-pass substitution: a binding value containing `{x}` is emitted
// verbatim, never re-substituted.
std::string render_prompt(const PromptTemplate& tmpl, const SlotBindings& bindings);

// Slot names occurring in a template body, in order of first occurrence.
std::vector<std::string> extract_slots(const std::string& body);

// A named set of prompt templates loaded from an asset directory
// (index.json + one text file per template).
class TemplateSet {
 public:
  static TemplateSet load(const std::string& dir);

  const std::string& name() const { return name_; }
  bool has(const std::string& template_name) const;
  const PromptTemplate& get(const std::string& template_name) const;
  std::string render(const std::string& template_name, const SlotBindings& bindings) const;
  std::vector<std::string> template_names() const;

 private:
  std::string name_;
  std::map<std::string, PromptTemplate> templates_;
};

}  // namespace dve
