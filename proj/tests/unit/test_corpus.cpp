#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "selfplay/corpus.hpp"
#include "selfplay/evaluation.hpp"

using namespace selfplay;

namespace {

std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

AnnotatedDialogue two_turn_dialogue() {
  AnnotatedDialogue d;
  d.id = "reg";
  d.goal.domains["hotel"].constraints = {{"area", "north"}, {"price", "cheap"}};
  d.domains = {"hotel"};
  AnnotatedTurn a;
  a.user_utterance = split_tokens("a hotel in the [value_hotel_area]");
  a.user_act = DialogueAct::parse("hotel-inform-area");
  a.belief.slots[{"hotel", "area"}] = "north";
  a.system_act = DialogueAct::parse("hotel-request-price");
  a.system_utterance = split_tokens("what price range ?");
  AnnotatedTurn b = a;
  b.user_utterance = split_tokens("[value_hotel_price] please");
  b.user_act = DialogueAct::parse("hotel-inform-price");
  b.belief.slots = {{{"hotel", "price"}, "cheap"}};
  d.turns = {a, b};
  return d;
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("generation is deterministic for a seed") {
    const auto& kb = fixtures::toy_kb();
    const auto a = generate_toy_corpus(kb, 15, 3);
    const auto b = generate_toy_corpus(kb, 15, 3);
    const auto c = generate_toy_corpus(kb, 15, 4);
    CHECK(nlohmann::json(a) == nlohmann::json(b));
    CHECK(nlohmann::json(a) != nlohmann::json(c));
    CHECK(sample_goal(kb, 9) == sample_goal(kb, 9));
  }

  TEST_CASE("generated goals are valid and involve one or two domains") {
    const auto& kb = fixtures::toy_kb();
    for (std::uint64_t s = 0; s < 200; ++s) {
      const auto g = sample_goal(kb, s);
      CHECK_NOTHROW(validate_goal(g, kb.ontology));
      CHECK(g.domains.size() >= 1);
      CHECK(g.domains.size() <= 2);
    }
  }

  TEST_CASE("the rule system succeeds on every generated dialogue") {
    const auto& kb = fixtures::toy_kb();
    const auto corpus = generate_toy_corpus(kb, 100, 21);
    std::size_t ok = 0;
    for (const auto& d : corpus) {
      const auto log = annotated_to_log(d, kb);
      INFO(d.id);
      CHECK(log.outcome.success);
      ok += log.outcome.success;
      CHECK(d.turns.size() <= GeneratorConfig{}.max_turns);
      CHECK(d.turns.back().user_act.terminal());
    }
    CHECK(ok == corpus.size());
  }

  TEST_CASE("every domain appears in at least a fifth of the dialogues") {
    const auto& kb = fixtures::toy_kb();
    const auto corpus = generate_toy_corpus(kb, 300, 5);
    std::map<std::string, std::size_t> involved;
    std::size_t multi = 0;
    for (const auto& d : corpus) {
      for (const auto& dom : d.domains) ++involved[dom];
      multi += d.domains.size() > 1;
    }
    for (const auto& dom : kb.ontology.domains()) CHECK(involved[dom] >= corpus.size() / 5);
    CHECK(multi > 0);
    CHECK(multi < corpus.size());
  }

  TEST_CASE("unsatisfiable goals are relaxed during the dialogue") {
    const auto& kb = fixtures::toy_kb();
    GeneratorConfig cfg;
    cfg.unsatisfiable = 1.0;
    std::size_t relaxed = 0;
    for (const auto& d : generate_toy_corpus(kb, 30, 8, cfg))
      for (const auto& t : d.turns) relaxed += t.goal_relaxed.size();
    CHECK(relaxed > 0);
  }

  TEST_CASE("corpora round-trip through JSONL without warnings") {
    const auto& kb = fixtures::toy_kb();
    const auto path = temp_file("selfplay_corpus_test.jsonl");
    save_corpus(fixtures::toy_corpus(), path);
    const auto back = load_corpus(path, kb.ontology);
    CHECK(back.warnings.empty());
    CHECK(nlohmann::json(back.dialogues) == nlohmann::json(fixtures::toy_corpus()));
    CHECK(back.word_counts.size() > 10);
  }

  TEST_CASE("empty, missing and malformed corpora are data errors") {
    const auto& o = fixtures::toy_kb().ontology;
    std::istringstream empty("\n\n");
    CHECK_THROWS_AS(parse_corpus(empty, o), DataError);
    CHECK_THROWS_AS(load_corpus("/nonexistent/corpus.jsonl", o), DataError);
    std::istringstream junk("{\"id\": \"x\"");
    CHECK_THROWS_AS(parse_corpus(junk, o), DataError);
  }

  TEST_CASE("schema errors name the offending line") {
    const auto& o = fixtures::toy_kb().ontology;
    auto d = two_turn_dialogue();
    d.turns[0].belief.slots[{"hotel", "area"}] = "moon";
    std::istringstream in(nlohmann::json(two_turn_dialogue()).dump() + "\n" + nlohmann::json(d).dump() + "\n");
    try {
      parse_corpus(in, o, "mem");
      FAIL("expected a data error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("mem line 2") != std::string::npos);
    }
  }

  TEST_CASE("belief regressions without a deletion are warnings") {
    const auto& o = fixtures::toy_kb().ontology;
    auto d = two_turn_dialogue();
    const auto warnings = check_dialogue(d, o);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("hotel-area") != std::string::npos);
    d.turns[1].user_act.add({"hotel", Intent::kInform, "area"});
    CHECK(check_dialogue(d, o).empty());
    std::istringstream in(nlohmann::json(two_turn_dialogue()).dump());
    CHECK(parse_corpus(in, o).warnings.size() == 1);
  }

  TEST_CASE("lexicalised corpus turns use belief values") {
    const auto& kb = fixtures::toy_kb();
    const auto d = two_turn_dialogue();
    CHECK(join_tokens(lexicalize_user_turn(kb, d, 0)) == "a hotel in the north");
    CHECK(lexicalize_user_turn(kb, d, 1) == lexicalize_user_turn(kb, d, 1));
  }

  TEST_CASE("full splits partition the corpus") {
    const auto corpus = generate_toy_corpus(fixtures::toy_kb(), 100, 6);
    const auto s = make_splits(corpus, {}, 1);
    CHECK(s.dev.size() == 10);
    CHECK(s.test.size() == 10);
    CHECK(s.source.size() == 80);
    std::set<std::string> ids;
    for (const auto* part : {&s.source, &s.dev, &s.test})
      for (const auto& d : *part) ids.insert(d.id);
    CHECK(ids.size() == 100);
    CHECK(nlohmann::json(make_splits(corpus, {}, 1).test) == nlohmann::json(s.test));
  }

  TEST_CASE("domain adaptation keeps the target out of the source") {
    const auto corpus = generate_toy_corpus(fixtures::toy_kb(), 200, 7);
    SplitSpec spec{SplitMode::kDomainAdaptation, "restaurant", 12};
    const auto s = make_splits(corpus, spec, 2);
    CHECK(s.adaptation.size() == 12);
    for (const auto& d : s.source) CHECK(d.domains.count("restaurant") == 0);
    for (const auto& d : s.source_dev) CHECK(d.domains.count("restaurant") == 0);
    for (const auto& d : s.adaptation) CHECK(d.domains.count("restaurant") == 1);
    for (const auto& d : s.dev) CHECK(involves_target(d, spec));
    for (const auto& d : s.test) CHECK(involves_target(d, spec));
    std::set<std::string> ids;
    std::size_t total = 0;
    for (const auto* part : {&s.source, &s.adaptation, &s.dev, &s.test, &s.source_dev})
      for (const auto& d : *part) {
        ids.insert(d.id);
        ++total;
      }
    CHECK(ids.size() == total);
    spec.n_adapt = 100000;
    CHECK_THROWS_AS(make_splits(corpus, spec, 2), DataError);
  }

  TEST_CASE("single-to-multi adapts on the exact domain combination") {
    const auto corpus = generate_toy_corpus(fixtures::toy_kb(), 200, 7);
    SplitSpec spec{SplitMode::kSingleToMulti, "hotel+restaurant", 5};
    const auto s = make_splits(corpus, spec, 3);
    for (const auto& d : s.source) CHECK(d.domains.size() == 1);
    for (const auto& d : s.adaptation) CHECK(d.domains == std::set<std::string>{"hotel", "restaurant"});
    for (const auto& d : s.test) CHECK(d.domains.size() == 2);
    CHECK_THROWS_AS(make_splits(corpus, {SplitMode::kSingleToMulti, "hotel", 5}, 3), DataError);
    CHECK(parse_split_mode("single_to_multi") == SplitMode::kSingleToMulti);
    CHECK_THROWS_AS(parse_split_mode("random"), ParseError);
  }
}
