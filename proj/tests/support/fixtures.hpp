#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "selfplay/agents.hpp"
#include "selfplay/corpus.hpp"
#include "selfplay/ontology.hpp"

namespace fixtures {

inline std::string data_path(const std::string& name) { return std::string(SELFPLAY_DATA_DIR) + "/" + name; }

inline const selfplay::KnowledgeBase& toy_kb() {
  static const selfplay::KnowledgeBase kb = selfplay::load_knowledge_base(data_path("toy_ontology.json"));
  return kb;
}

/// Two domains with three slots each and four hotels.
inline nlohmann::json small_world_json() {
  return nlohmann::json::parse(R"({
    "domains": {
      "hotel": {"slots": [
        {"name": "area", "kind": "informable", "values": ["north", "south", "centre"]},
        {"name": "price", "kind": "informable", "values": ["cheap", "expensive"]},
        {"name": "phone", "kind": "requestable", "values": ["111", "222", "333", "444"]}
      ]},
      "restaurant": {"slots": [
        {"name": "area", "kind": "informable", "values": ["north", "south", "centre"]},
        {"name": "food", "kind": "informable", "values": ["thai", "french", "british food"]},
        {"name": "phone", "kind": "requestable", "values": ["555", "666"]}
      ]}
    },
    "entities": [
      {"id": "h3", "domain": "hotel", "attributes": {"area": "north", "price": "cheap", "phone": "333"}},
      {"id": "h1", "domain": "hotel", "attributes": {"area": "north", "price": "expensive", "phone": "111"}},
      {"id": "h2", "domain": "hotel", "attributes": {"area": "south", "price": "cheap", "phone": "222"}},
      {"id": "h4", "domain": "hotel", "attributes": {"area": "north", "price": "cheap", "phone": "444"}},
      {"id": "r1", "domain": "restaurant", "attributes": {"area": "centre", "food": "thai", "phone": "555"}},
      {"id": "r2", "domain": "restaurant", "attributes": {"area": "north", "food": "british food", "phone": "666"}}
    ]
  })");
}

inline std::vector<selfplay::Tokens> corpus_words(const std::vector<selfplay::AnnotatedDialogue>& corpus) {
  std::vector<selfplay::Tokens> out;
  for (const auto& d : corpus)
    for (const auto& t : d.turns) {
      out.push_back(t.user_utterance);
      out.push_back(t.system_utterance);
    }
  return out;
}

inline const std::vector<selfplay::AnnotatedDialogue>& toy_corpus() {
  static const auto corpus = selfplay::generate_toy_corpus(toy_kb(), 40, 11);
  return corpus;
}

/// A small joint model over the toy world.
inline selfplay::JointModel tiny_model(std::size_t hidden = 6, std::size_t embed = 5, std::uint64_t seed = 1) {
  selfplay::ModelConfig c;
  c.hidden = hidden;
  c.embed = embed;
  c.init_scale = 0.3;
  return selfplay::JointModel(toy_kb(), selfplay::build_word_vocab(toy_kb().ontology, corpus_words(toy_corpus())), c,
                              seed);
}

}  // namespace fixtures
