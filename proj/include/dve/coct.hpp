#pragma once

#include <atomic>
#include <optional>
#include <string>
#include <vector>

#include "dve/backends.hpp"
#include "dve/core.hpp"

// The counterfactual-chain classification pipeline: dual opposing
// rationales from the VLMM, an ASR-fused video description, and an LLM
// refinement/selection pass, plus the two ablated variants and the
// single-call baseline.

namespace dve::coct {

class SplitFailure : public Error {
 public:
  explicit SplitFailure(const std::string& message) : Error(message) {}
};

class EmptyDescription : public Error {
 public:
  explicit EmptyDescription(const std::string& message) : Error(message) {}
};

// Visual description, transcript, and their LLM merge for one video.
struct DescriptionBundle {
  std::string raw_description;
  std::string transcript;
  std::string fused_description;
};

struct Verdict {
  Label label = Label::Neutral;
  std::string refined_weakener_rationale;
  std::string refined_strengthener_rationale;
  std::string selector_raw_output;
};

enum class Ablation { full, no_refined_description, no_counterfactual };

std::string ablation_name(Ablation ablation);
Ablation parse_ablation(const std::string& name);

struct PredictionRecord {
  std::string sample_id;
  Verdict verdict;
  RationalePair rationales;
  DescriptionBundle descriptions;
  Ablation ablation = Ablation::full;
  bool baseline = false;
  backends::AuditTrail backend_calls;
};

std::string prediction_record_to_json_line(const PredictionRecord& record);
PredictionRecord prediction_record_from_json_line(const std::string& line);

// Invocation context shared by every stage.
struct Runtime {
  backends::Invoker& invoker;
  const TemplateSet& templates;
};

struct PipelineBackends {
  backends::BackendSpec vlmm;
  backends::BackendSpec llm;
  backends::BackendSpec asr;
};

struct ClassifyOptions {
  Ablation ablation = Ablation::full;
  // One two-section VLMM call by default; two perspective-specific calls
  // when set.
  bool two_call_rationales = false;
  ParsePolicy parse_policy;
};

// One VLMM call producing both counterfactual perspectives, split on the
// WEAKENER/STRENGTHENER section headers (two calls in two_calls mode).
RationalePair gen_rationales(Runtime& rt, const VideoRef& video, const std::string& hypothesis,
                             const std::string& update, const backends::BackendSpec& vlmm,
                             bool two_calls = false, backends::AuditTrail* audit = nullptr);

std::string describe_video(Runtime& rt, const VideoRef& video,
                           const backends::BackendSpec& vlmm,
                           backends::AuditTrail* audit = nullptr);

// Empty string (and no backend call) when the video has no audio track.
std::string transcribe(Runtime& rt, const VideoRef& video, const backends::BackendSpec& asr,
                       backends::AuditTrail* audit = nullptr);

// LLM merge of transcript and raw description; skipped (D = D') when the
// transcript is empty.
std::string fuse_description(Runtime& rt, const std::string& transcript,
                             const std::string& raw_description,
                             const backends::BackendSpec& llm,
                             backends::AuditTrail* audit = nullptr);

Verdict refine_select(Runtime& rt, const RationalePair& rationales,
                      const std::string& description, const std::string& hypothesis,
                      const std::string& update, const backends::BackendSpec& llm,
                      const ParsePolicy& policy = {}, backends::AuditTrail* audit = nullptr);

PredictionRecord classify(Runtime& rt, const Sample& sample, const PipelineBackends& backends,
                          const ClassifyOptions& options = {});

// Single VLMM call with the baseline classification prompt.
PredictionRecord classify_baseline(Runtime& rt, const Sample& sample,
                                   const backends::BackendSpec& vlmm,
                                   const ParsePolicy& policy = {});

struct SampleFailure {
  std::string sample_id;
  std::string error;
};

template <typename Record>
struct BatchOutcome {
  std::vector<Record> records;
  std::vector<SampleFailure> failures;
  bool interrupted = false;
};

// Concurrent per-sample execution. Stage errors abort only their sample;
// results come back sorted by sample id regardless of completion order.
template <typename Record, typename Fn>
BatchOutcome<Record> run_batch(const std::vector<Sample>& samples, int concurrency, Fn fn,
                               std::atomic<bool>* cancel = nullptr);

}  // namespace dve::coct

#include "dve/run_batch_impl.hpp"
