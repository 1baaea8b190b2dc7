#include <doctest.h>

#include <random>

#include "dve/core.hpp"

using namespace dve;

TEST_SUITE_BEGIN("core");

TEST_CASE("format_label produces canonical tokens") {
  CHECK(format_label(Label::Strengthener) == "Strengthener");
  CHECK(format_label(Label::Weakener) == "Weakener");
  CHECK(format_label(Label::Neutral) == "Neutral");
}

TEST_CASE("parse_label handles exact canonical tokens") {
  CHECK(parse_label("Strengthener") == Label::Strengthener);
  CHECK(parse_label("Weakener") == Label::Weakener);
}

TEST_CASE("parse_label prefers the final answer line") {
  CHECK(parse_label("Final answer: Weakener. The update removes the stated motive.") ==
        Label::Weakener);
  // Chatty output: both tokens in the body, the answer line decides.
  CHECK(parse_label("It could be a strengthener or a weakener.\nANSWER: Strengthener") ==
        Label::Strengthener);
  // Within the answer line, the token after the marker wins.
  CHECK(parse_label("Answer: Weakener (not Strengthener)") == Label::Weakener);
  // The last answer line wins over earlier ones.
  CHECK(parse_label("Answer: Strengthener\nRevised answer: Weakener") == Label::Weakener);
}

TEST_CASE("parse_label matches token stems") {
  CHECK(parse_label("I think it weakens") == Label::Weakener);
  CHECK(parse_label("clearly strengthens the claim") == Label::Strengthener);
}

TEST_CASE("parse_label errors") {
  CHECK_THROWS_AS(parse_label("The scene is ambiguous."), NoLabelFound);
  CHECK_THROWS_AS(parse_label("it strengthens and weakens"), AmbiguousLabel);

  ParsePolicy tie_break;
  tie_break.tie_break_last_occurrence = true;
  CHECK(parse_label("it strengthens and weakens", tie_break) == Label::Weakener);
}

TEST_CASE("parse_label returns Neutral only when the policy enables it") {
  CHECK_THROWS_AS(parse_label("the update is neutral here"), NoLabelFound);
  ParsePolicy policy;
  policy.allow_neutral = true;
  CHECK(parse_label("the update is neutral here", policy) == Label::Neutral);
}

TEST_CASE("parse/format round-trip for all labels") {
  ParsePolicy policy;
  policy.allow_neutral = true;
  for (Label label : {Label::Strengthener, Label::Weakener, Label::Neutral}) {
    CHECK(parse_label(format_label(label), policy) == label);
  }
}

TEST_CASE("render_prompt substitutes every occurrence") {
  PromptTemplate tmpl{"t", "H: {h}\nU: {u}", {"h", "u"}};
  CHECK(render_prompt(tmpl, {{"h", "He left."}, {"u", "He waved."}}) ==
        "H: He left.\nU: He waved.");

  PromptTemplate repeated{"r", "{h}{h}", {"h"}};
  CHECK(render_prompt(repeated, {{"h", "x"}}) == "xx");
}

TEST_CASE("render_prompt reports missing slots") {
  PromptTemplate tmpl{"t", "D: {d}", {"d"}};
  try {
    render_prompt(tmpl, {});
    FAIL("expected MissingSlot");
  } catch (const MissingSlot& ex) {
    REQUIRE(ex.slots().size() == 1);
    CHECK(ex.slots()[0] == "d");
  }
}

TEST_CASE("render_prompt requires bindings for markers beyond required_slots") {
  // A stray marker in the body must not survive rendering.
  PromptTemplate tmpl{"t", "a {x} b {y}", {"x"}};
  CHECK_THROWS_AS(render_prompt(tmpl, {{"x", "1"}}), MissingSlot);
  CHECK(render_prompt(tmpl, {{"x", "1"}, {"y", "2"}}) == "a 1 b 2");
}

TEST_CASE("render_prompt is single-pass") {
  PromptTemplate tmpl{"t", "v={v}", {"v"}};
  CHECK(render_prompt(tmpl, {{"v", "{v}"}}) == "v={v}");
}

TEST_CASE("extract_slots finds each marker once, in order") {
  auto slots = extract_slots("a {one} b {two} c {one} {not valid} {_ok}");
  REQUIRE(slots.size() == 3);
  CHECK(slots[0] == "one");
  CHECK(slots[1] == "two");
  CHECK(slots[2] == "_ok");
}

TEST_CASE("shipped template set loads and renders") {
  auto templates = TemplateSet::load(std::string(DVE_SOURCE_DIR) + "/templates/default");
  CHECK(templates.name() == "default");
  CHECK(templates.has("rationale_generation"));
  CHECK(templates.has("judge"));

  auto rendered = templates.render("classification_baseline",
                                   {{"hypothesis", "He is sad."}, {"update", "He smiles."}});
  CHECK(rendered.find("He is sad.") != std::string::npos);
  CHECK(rendered.find("He smiles.") != std::string::npos);
  CHECK(rendered.find('{') == std::string::npos);

  CHECK_THROWS_AS(templates.get("missing_template"), ConfigError);
  CHECK_THROWS_AS(templates.render("classification_baseline", {{"hypothesis", "x"}}),
                  MissingSlot);
}

TEST_CASE("render_prompt is injective in bindings on the shipped templates") {
  auto templates = TemplateSet::load(std::string(DVE_SOURCE_DIR) + "/templates/default");
  std::mt19937 rng(20240811);
  auto random_word = [&] {
    static const char* words[] = {"red", "blue", "walks", "sits", "door", "open",
                                  "talks", "night", "car", "laughs", "cries", "gift"};
    std::uniform_int_distribution<size_t> pick(0, 11);
    std::string text = words[pick(rng)];
    text += " ";
    text += words[pick(rng)];
    return text;
  };

  for (const auto& name : templates.template_names()) {
    const auto& tmpl = templates.get(name);
    auto slots = extract_slots(tmpl.body);
    if (slots.empty()) continue;
    std::vector<std::pair<SlotBindings, std::string>> seen;
    for (int i = 0; i < 40; ++i) {
      SlotBindings bindings;
      for (const auto& slot : slots) bindings[slot] = random_word();
      auto rendered = render_prompt(tmpl, bindings);
      for (const auto& [other_bindings, other_rendered] : seen) {
        if (other_bindings != bindings) {
          CHECK(other_rendered != rendered);
        } else {
          CHECK(other_rendered == rendered);
        }
      }
      seen.emplace_back(std::move(bindings), std::move(rendered));
    }
  }
}

TEST_SUITE_END();
