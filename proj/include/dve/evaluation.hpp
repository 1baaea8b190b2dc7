#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dve/backends.hpp"
#include "dve/core.hpp"

// Scoring: confusion-matrix classification metrics with SRatio, the
// eight-category judge protocol for generated updates, and majority-vote
// aggregation for three-annotator evaluation.

namespace dve::eval {

class EmptyInput : public Error {
 public:
  explicit EmptyInput(const std::string& message) : Error(message) {}
};

class NoCategoryFound : public Error {
 public:
  explicit NoCategoryFound(const std::string& message) : Error(message) {}
};

// Strengthener is the positive class throughout.
struct ConfusionMatrix {
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  long long tn = 0;
  long long excluded = 0;

  long long scored() const { return tp + fp + fn + tn; }
};

enum class Averaging { binary_strengthener, weighted };

std::string averaging_name(Averaging mode);
Averaging parse_averaging(const std::string& name);

// All values are percentages in [0,100], kept at full precision; rounding
// to two decimals happens only in the report writers.
struct ClassificationReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double sratio = 0.0;
  Averaging averaging = Averaging::binary_strengthener;
  long long excluded = 0;
  // Metrics whose denominator was zero and were reported as 0.
  std::vector<std::string> zero_division;
  ConfusionMatrix confusion;
};

// Tallies predictions against gold with positive=Strengthener. Neutral
// predictions go to `excluded`. Gold must be Strengthener or Weakener.
ConfusionMatrix compute_confusion(const std::vector<std::pair<Label, Label>>& pred_gold);

ClassificationReport classification_metrics(const ConfusionMatrix& cm, Averaging averaging);

// 100 * (#Strengthener predictions) / (#scored), Neutral excluded.
double sratio(const std::vector<Label>& predictions);

// Judge categories for generated updates. C1 is the on-target outcome;
// C2..C8 are the failure modes.
enum class JudgeCategory { C1 = 1, C2, C3, C4, C5, C6, C7, C8 };

constexpr std::array<JudgeCategory, 8> kAllCategories = {
    JudgeCategory::C1, JudgeCategory::C2, JudgeCategory::C3, JudgeCategory::C4,
    JudgeCategory::C5, JudgeCategory::C6, JudgeCategory::C7, JudgeCategory::C8};

std::string category_token(JudgeCategory category);  // "C1".."C8"
std::string category_name(JudgeCategory category);   // "Good", "Neutral", ...
JudgeCategory parse_category(const std::string& raw);

struct JudgeReport {
  std::map<JudgeCategory, double> distribution;  // percentages, full precision
  long long n = 0;
  long long excluded = 0;
};

// One judge call per update. The goal rides along with the description,
// hypothesis, and update because C1/C3/C4 are defined relative to the
// target update type.
JudgeCategory judge_update(backends::Invoker& invoker, const TemplateSet& templates,
                           const std::string& description, const std::string& hypothesis,
                           const std::string& update, Goal goal,
                           const backends::BackendSpec& judge,
                           backends::AuditTrail* audit = nullptr);

struct JudgeInput {
  std::string sample_id;
  std::string description;
  std::string hypothesis;
  std::string update;
  Goal goal = Goal::Strengthener;
};

struct JudgeFailure {
  std::string sample_id;
  std::string error;
};

struct JudgeRunOutcome {
  JudgeReport report;
  std::vector<std::pair<std::string, JudgeCategory>> per_sample;  // id -> category
  std::vector<JudgeFailure> failures;
};

// Judges every input; per-input failures are excluded and counted, never
// fatal. EmptyInput when nothing was scorable.
JudgeRunOutcome judge_all(backends::Invoker& invoker, const TemplateSet& templates,
                          const std::vector<JudgeInput>& inputs,
                          const backends::BackendSpec& judge, int concurrency = 1);

// Exactly three annotator votes for one update.
struct VoteSet {
  std::array<JudgeCategory, 3> votes;
};

// The category appearing at least twice; nullopt when all three differ
// (reported as Unresolved, never tie-broken).
std::optional<JudgeCategory> majority_vote(const VoteSet& votes);

// Half-up rounding used at every report boundary.
double round2(double value);

}  // namespace dve::eval
