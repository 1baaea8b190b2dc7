#pragma once

#include <string>

#include "dve/coct.hpp"
#include "dve/core.hpp"

// Goal-directed update generation: a VLMM drafts a candidate update, then
// an LLM rewrites it against the fused video description, hypothesis, and
// goal. The description/transcript/fusion stages are shared with the
// classification pipeline, so a warm cache covers both.

namespace dve::gen {

class EmptyDraft : public Error {
 public:
  explicit EmptyDraft(const std::string& message) : Error(message) {}
};

class EmptyRefinement : public Error {
 public:
  explicit EmptyRefinement(const std::string& message) : Error(message) {}
};

struct GenerationRecord {
  std::string sample_id;
  Goal goal = Goal::Strengthener;
  std::string hypothesis;  // carried so judge runs need no manifest join
  std::string draft_update;
  std::string refined_update;
  coct::DescriptionBundle descriptions;
  backends::AuditTrail backend_calls;
};

std::string generation_record_to_json_line(const GenerationRecord& record);
GenerationRecord generation_record_from_json_line(const std::string& line);

struct GenerateOptions {
  // Skip the VLMM draft and run the refinement prompt without it.
  bool draft_free = false;
};

// One VLMM call with the baseline generation prompt; returns the candidate
// update.
std::string draft_update(coct::Runtime& rt, const VideoRef& video,
                         const std::string& hypothesis, Goal goal,
                         const backends::BackendSpec& vlmm,
                         backends::AuditTrail* audit = nullptr);

// One LLM call rewriting the draft; the response is returned verbatim.
std::string refine_update(coct::Runtime& rt, const std::string& description,
                          const std::string& hypothesis, const std::string& draft, Goal goal,
                          const backends::BackendSpec& llm,
                          backends::AuditTrail* audit = nullptr);

GenerationRecord generate(coct::Runtime& rt, const Sample& sample,
                          const coct::PipelineBackends& backends,
                          const GenerateOptions& options = {});

}  // namespace dve::gen
