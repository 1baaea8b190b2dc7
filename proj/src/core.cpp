#include "dve/core.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace dve {

namespace {

using json = nlohmann::json;

std::string to_lower(std::string_view text) {
  std::string lowered(text);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return lowered;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string::size_type start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

struct TokenHit {
  Label label;
  std::string::size_type pos;
};

// All stem occurrences of the policy's tokens in `lowered`, by position.
std::vector<TokenHit> scan_tokens(const std::string& lowered, const ParsePolicy& policy) {
  std::vector<TokenHit> hits;
  auto collect = [&](const std::string& token, Label label) {
    const std::string stem = to_lower(token);
    if (stem.empty()) return;
    std::string::size_type pos = 0;
    while ((pos = lowered.find(stem, pos)) != std::string::npos) {
      hits.push_back({label, pos});
      pos += 1;
    }
  };
  collect(policy.strengthener_token, Label::Strengthener);
  collect(policy.weakener_token, Label::Weakener);
  if (policy.allow_neutral) collect(policy.neutral_token, Label::Neutral);
  std::sort(hits.begin(), hits.end(),
            [](const TokenHit& a, const TokenHit& b) { return a.pos < b.pos; });
  return hits;
}

}  // namespace

MissingSlot::MissingSlot(const std::string& template_name, std::vector<std::string> slots)
    : Error([&] {
        std::string message = "template '" + template_name + "' missing slot binding(s):";
        for (const auto& slot : slots) message += " " + slot;
        return message;
      }()),
      slots_(std::move(slots)) {}

std::string format_label(Label label) {
  switch (label) {
    case Label::Strengthener: return "Strengthener";
    case Label::Weakener: return "Weakener";
    case Label::Neutral: return "Neutral";
  }
  throw Error("unknown label value");
}

std::string format_goal(Goal goal) {
  return goal == Goal::Strengthener ? "Strengthener" : "Weakener";
}

Label to_label(Goal goal) {
  return goal == Goal::Strengthener ? Label::Strengthener : Label::Weakener;
}

Label parse_label(const std::string& raw, const ParsePolicy& policy) {
  const std::string lowered = to_lower(raw);

  // Pass 1: answer-marker lines, scanned bottom-up. The token nearest
  // after the marker wins, so "Answer: Weakener (not ...)" is unambiguous.
  const auto lines = split_lines(lowered);
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    std::string::size_type marker_pos = std::string::npos;
    for (const auto& marker : policy.answer_markers) {
      auto pos = it->find(to_lower(marker));
      if (pos != std::string::npos && (marker_pos == std::string::npos || pos < marker_pos)) {
        marker_pos = pos;
      }
    }
    if (marker_pos == std::string::npos) continue;
    auto hits = scan_tokens(*it, policy);
    TokenHit const* best = nullptr;
    for (const auto& hit : hits) {
      if (hit.pos < marker_pos) continue;
      if (!best || hit.pos < best->pos) best = &hit;
    }
    if (!best && !hits.empty()) best = &hits.front();
    if (best) return best->label;
  }

  // Pass 2: whole text.
  auto hits = scan_tokens(lowered, policy);
  if (hits.empty()) {
    throw NoLabelFound("no label token found in: " + raw.substr(0, 120));
  }
  bool all_same = std::all_of(hits.begin(), hits.end(),
                              [&](const TokenHit& h) { return h.label == hits.front().label; });
  if (all_same) return hits.front().label;
  if (policy.tie_break_last_occurrence) return hits.back().label;
  throw AmbiguousLabel("opposing label tokens with equal precedence in: " + raw.substr(0, 120));
}

std::vector<std::string> extract_slots(const std::string& body) {
  std::vector<std::string> slots;
  std::set<std::string> seen;
  for (std::string::size_type i = 0; i < body.size(); ++i) {
    if (body[i] != '{') continue;
    auto close = body.find('}', i + 1);
    if (close == std::string::npos) break;
    std::string name = body.substr(i + 1, close - i - 1);
    if (name.empty()) continue;
    bool valid = (std::isalpha(static_cast<unsigned char>(name[0])) || name[0] == '_') &&
                 std::all_of(name.begin(), name.end(), [](unsigned char c) {
                   return std::isalnum(c) || c == '_';
                 });
    if (!valid) continue;
    if (seen.insert(name).second) slots.push_back(name);
    i = close;
  }
  return slots;
}

std::string render_prompt(const PromptTemplate& tmpl, const SlotBindings& bindings) {
  std::vector<std::string> missing;
  for (const auto& slot : tmpl.required_slots) {
    if (!bindings.count(slot)) missing.push_back(slot);
  }
  for (const auto& slot : extract_slots(tmpl.body)) {
    if (!bindings.count(slot) && !tmpl.required_slots.count(slot)) missing.push_back(slot);
  }
  if (!missing.empty()) throw MissingSlot(tmpl.name, std::move(missing));

  std::string out;
  out.reserve(tmpl.body.size());
  for (std::string::size_type i = 0; i < tmpl.body.size(); ++i) {
    if (tmpl.body[i] == '{') {
      auto close = tmpl.body.find('}', i + 1);
      if (close != std::string::npos) {
        std::string name = tmpl.body.substr(i + 1, close - i - 1);
        auto binding = bindings.find(name);
        if (binding != bindings.end()) {
          out += binding->second;
          i = close;
          continue;
        }
      }
    }
    out += tmpl.body[i];
  }
  return out;
}

bool TemplateSet::has(const std::string& template_name) const {
  return templates_.count(template_name) > 0;
}

const PromptTemplate& TemplateSet::get(const std::string& template_name) const {
  auto it = templates_.find(template_name);
  if (it == templates_.end()) {
    throw ConfigError("template set '" + name_ + "' has no template '" + template_name + "'");
  }
  return it->second;
}

std::string TemplateSet::render(const std::string& template_name,
                                const SlotBindings& bindings) const {
  return render_prompt(get(template_name), bindings);
}

std::vector<std::string> TemplateSet::template_names() const {
  std::vector<std::string> names;
  names.reserve(templates_.size());
  for (const auto& [name, tmpl] : templates_) names.push_back(name);
  return names;
}

TemplateSet TemplateSet::load(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  const fs::path index_path = root / "index.json";
  std::ifstream index_file(index_path);
  if (!index_file) {
    throw ConfigError("cannot open template index: " + index_path.string());
  }
  json index;
  try {
    index_file >> index;
  } catch (const json::exception& ex) {
    throw ConfigError("malformed template index " + index_path.string() + ": " + ex.what());
  }

  TemplateSet set;
  set.name_ = index.value("name", root.filename().string());
  if (!index.contains("templates") || !index["templates"].is_array()) {
    throw ConfigError("template index missing 'templates' array: " + index_path.string());
  }
  for (const auto& entry : index["templates"]) {
    PromptTemplate tmpl;
    tmpl.name = entry.at("name").get<std::string>();
    const fs::path body_path = root / entry.at("file").get<std::string>();
    std::ifstream body_file(body_path);
    if (!body_file) {
      throw ConfigError("cannot open template body: " + body_path.string());
    }
    std::ostringstream buffer;
    buffer << body_file.rdbuf();
    tmpl.body = buffer.str();
    for (const auto& slot : entry.value("required_slots", json::array())) {
      tmpl.required_slots.insert(slot.get<std::string>());
    }
    if (set.templates_.count(tmpl.name)) {
      throw ConfigError("duplicate template name in index: " + tmpl.name);
    }
    set.templates_.emplace(tmpl.name, std::move(tmpl));
  }
  return set;
}

}  // namespace dve
