#include "dve/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <mutex>
#include <thread>

namespace dve::eval {

namespace {

std::string to_lower(const std::string& text) {
  std::string lowered = text;
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return lowered;
}

// Positions of standalone C1..C8 tokens ("C" + digit, not embedded in a
// longer alphanumeric run).
std::vector<std::pair<size_t, JudgeCategory>> scan_categories(const std::string& text) {
  std::vector<std::pair<size_t, JudgeCategory>> hits;
  for (size_t i = 0; i + 1 < text.size(); ++i) {
    if (text[i] != 'C' && text[i] != 'c') continue;
    char d = text[i + 1];
    if (d < '1' || d > '8') continue;
    if (i > 0 && (std::isalnum(static_cast<unsigned char>(text[i - 1])) || text[i - 1] == '_'))
      continue;
    if (i + 2 < text.size() &&
        (std::isalnum(static_cast<unsigned char>(text[i + 2])) || text[i + 2] == '_'))
      continue;
    hits.emplace_back(i, static_cast<JudgeCategory>(d - '0'));
  }
  return hits;
}

}  // namespace

std::string averaging_name(Averaging mode) {
  return mode == Averaging::binary_strengthener ? "binary_strengthener" : "weighted";
}

Averaging parse_averaging(const std::string& name) {
  if (name == "binary" || name == "binary_strengthener") return Averaging::binary_strengthener;
  if (name == "weighted") return Averaging::weighted;
  throw ConfigError("unknown averaging mode: " + name);
}

double round2(double value) { return std::round(value * 100.0) / 100.0; }

ConfusionMatrix compute_confusion(const std::vector<std::pair<Label, Label>>& pred_gold) {
  ConfusionMatrix cm;
  for (const auto& [pred, gold] : pred_gold) {
    if (gold == Label::Neutral) {
      throw Error("gold label must be Strengthener or Weakener");
    }
    if (pred == Label::Neutral) {
      ++cm.excluded;
      continue;
    }
    if (gold == Label::Strengthener) {
      pred == Label::Strengthener ? ++cm.tp : ++cm.fn;
    } else {
      pred == Label::Weakener ? ++cm.tn : ++cm.fp;
    }
  }
  if (cm.scored() == 0) {
    throw EmptyInput("no scorable prediction/gold pairs");
  }
  return cm;
}

ClassificationReport classification_metrics(const ConfusionMatrix& cm, Averaging averaging) {
  ClassificationReport report;
  report.averaging = averaging;
  report.excluded = cm.excluded;
  report.confusion = cm;

  const double n = static_cast<double>(cm.scored());
  if (cm.scored() == 0) throw EmptyInput("empty confusion matrix");

  auto ratio = [&](long long num, long long den, const char* metric) -> double {
    if (den == 0) {
      report.zero_division.push_back(metric);
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };

  const double accuracy_fraction = static_cast<double>(cm.tp + cm.tn) / n;
  report.accuracy = 100.0 * accuracy_fraction;
  report.sratio = 100.0 * static_cast<double>(cm.tp + cm.fp) / n;

  double precision = 0.0;
  double recall = 0.0;
  if (averaging == Averaging::binary_strengthener) {
    precision = ratio(cm.tp, cm.tp + cm.fp, "precision");
    recall = ratio(cm.tp, cm.tp + cm.fn, "recall");
  } else {
    const long long support_s = cm.tp + cm.fn;
    const long long support_w = cm.fp + cm.tn;
    const double prec_s = ratio(cm.tp, cm.tp + cm.fp, "precision");
    const double prec_w = ratio(cm.tn, cm.tn + cm.fn, "precision");
    precision = (static_cast<double>(support_s) * prec_s +
                 static_cast<double>(support_w) * prec_w) /
                n;
    // Support-weighted recall telescopes: each class contributes exactly
    // its correct count, so it is the accuracy fraction, computed through
    // the identical expression to keep the identity bit-exact.
    recall = accuracy_fraction;
  }
  report.precision = 100.0 * precision;
  report.recall = 100.0 * recall;
  report.f1 = (precision + recall) > 0.0
                  ? 100.0 * (2.0 * precision * recall / (precision + recall))
                  : 0.0;
  return report;
}

double sratio(const std::vector<Label>& predictions) {
  long long strengtheners = 0;
  long long scored = 0;
  for (Label label : predictions) {
    if (label == Label::Neutral) continue;
    ++scored;
    if (label == Label::Strengthener) ++strengtheners;
  }
  if (scored == 0) throw EmptyInput("no scored predictions for sratio");
  return 100.0 * static_cast<double>(strengtheners) / static_cast<double>(scored);
}

std::string category_token(JudgeCategory category) {
  return "C" + std::to_string(static_cast<int>(category));
}

std::string category_name(JudgeCategory category) {
  switch (category) {
    case JudgeCategory::C1: return "Good";
    case JudgeCategory::C2: return "Neutral";
    case JudgeCategory::C3: return "Weakener instead of Strengthener";
    case JudgeCategory::C4: return "Strengthener instead of Weakener";
    case JudgeCategory::C5: return "Restating the Premise";
    case JudgeCategory::C6: return "Restating the Hypothesis";
    case JudgeCategory::C7: return "Contradicting the Premise";
    case JudgeCategory::C8: return "Nonsensical or Other";
  }
  throw Error("unknown judge category");
}

JudgeCategory parse_category(const std::string& raw) {
  // Marker lines ("category"/"answer") scanned bottom-up take precedence,
  // mirroring parse_label; otherwise the last token in the text wins.
  const std::string lowered = to_lower(raw);
  std::vector<std::string> lines;
  size_t start = 0;
  while (start <= raw.size()) {
    auto end = raw.find('\n', start);
    if (end == std::string::npos) {
      lines.push_back(raw.substr(start));
      break;
    }
    lines.push_back(raw.substr(start, end - start));
    start = end + 1;
  }
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    const std::string line_lower = to_lower(*it);
    auto marker = line_lower.find("category");
    if (marker == std::string::npos) marker = line_lower.find("answer");
    if (marker == std::string::npos) continue;
    auto hits = scan_categories(*it);
    for (const auto& [pos, category] : hits) {
      if (pos >= marker) return category;
    }
    if (!hits.empty()) return hits.front().second;
  }
  auto hits = scan_categories(raw);
  if (hits.empty()) {
    throw NoCategoryFound("no category token in: " + raw.substr(0, 120));
  }
  return hits.back().second;
}

JudgeCategory judge_update(backends::Invoker& invoker, const TemplateSet& templates,
                           const std::string& description, const std::string& hypothesis,
                           const std::string& update, Goal goal,
                           const backends::BackendSpec& judge, backends::AuditTrail* audit) {
  if (description.empty() || hypothesis.empty() || update.empty()) {
    throw Error("judge_update requires non-empty description, hypothesis, and update");
  }
  backends::ModelRequest req;
  req.prompt = templates.render("judge", {{"description", description},
                                          {"hypothesis", hypothesis},
                                          {"update", update},
                                          {"goal", format_goal(goal)}});
  const auto response = invoker.invoke(judge, req, audit);
  return parse_category(response.text);
}

JudgeRunOutcome judge_all(backends::Invoker& invoker, const TemplateSet& templates,
                          const std::vector<JudgeInput>& inputs,
                          const backends::BackendSpec& judge, int concurrency) {
  JudgeRunOutcome outcome;
  std::vector<std::optional<JudgeCategory>> results(inputs.size());
  std::vector<std::optional<JudgeFailure>> failures(inputs.size());

  std::atomic<size_t> next{0};
  auto worker = [&] {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= inputs.size()) break;
      const auto& input = inputs[i];
      try {
        results[i] = judge_update(invoker, templates, input.description, input.hypothesis,
                                  input.update, input.goal, judge);
      } catch (const std::exception& ex) {
        failures[i] = JudgeFailure{input.sample_id, ex.what()};
      }
    }
  };
  const int threads = std::max(1, std::min<int>(concurrency, static_cast<int>(inputs.size())));
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::map<JudgeCategory, long long> counts;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (results[i]) {
      ++counts[*results[i]];
      outcome.per_sample.emplace_back(inputs[i].sample_id, *results[i]);
    } else if (failures[i]) {
      outcome.failures.push_back(*failures[i]);
    }
  }
  const long long scored = static_cast<long long>(outcome.per_sample.size());
  if (scored == 0) throw EmptyInput("no scorable generation records for judging");

  outcome.report.n = scored;
  outcome.report.excluded = static_cast<long long>(outcome.failures.size());
  for (JudgeCategory category : kAllCategories) {
    const long long count = counts.count(category) ? counts[category] : 0;
    outcome.report.distribution[category] =
        100.0 * static_cast<double>(count) / static_cast<double>(scored);
  }
  return outcome;
}

std::optional<JudgeCategory> majority_vote(const VoteSet& votes) {
  for (JudgeCategory candidate : votes.votes) {
    int count = 0;
    for (JudgeCategory vote : votes.votes) {
      if (vote == candidate) ++count;
    }
    if (count >= 2) return candidate;
  }
  return std::nullopt;
}

}  // namespace dve::eval
