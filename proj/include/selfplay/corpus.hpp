#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "selfplay/dialogue_state.hpp"

namespace selfplay {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AnnotatedTurn {
  Tokens user_utterance;    // delexicalised
  DialogueAct user_act;
  BeliefState belief;       // cumulative, after the user utterance
  DialogueAct system_act;
  Tokens system_utterance;  // delexicalised
  /// Goal constraints the user relaxed to dontcare before this turn.
  std::vector<SlotKey> goal_relaxed;
};

struct AnnotatedDialogue {
  std::string id;
  UserGoal goal;  // as at the start of the dialogue
  std::vector<AnnotatedTurn> turns;
  std::set<std::string> domains;
};

void to_json(nlohmann::json& j, const AnnotatedDialogue& d);
void from_json(const nlohmann::json& j, AnnotatedDialogue& d);

struct Corpus {
  std::vector<AnnotatedDialogue> dialogues;
  std::vector<std::string> warnings;
  std::map<std::string, std::size_t> word_counts;
};

/// Validates every dialogue against the ontology. Schema violations throw
/// DataError naming the line; belief regressions become warnings.
Corpus load_corpus(const std::string& path, const Ontology& ontology);
Corpus parse_corpus(std::istream& in, const Ontology& ontology, const std::string& name = "<stream>");
void save_corpus(const std::vector<AnnotatedDialogue>& dialogues, const std::string& path);

/// Warnings for one dialogue (belief regressions without a deletion).
std::vector<std::string> check_dialogue(const AnnotatedDialogue& d, const Ontology& ontology);

/// Surface forms of turn `t`: user placeholders take the turn's belief
/// values, system placeholders the first entity matching that belief.
Tokens lexicalize_user_turn(const KnowledgeBase& kb, const AnnotatedDialogue& d, std::size_t t);
Tokens lexicalize_system_turn(const KnowledgeBase& kb, const AnnotatedDialogue& d, std::size_t t);

/// Goal after applying the relaxations logged up to and including turn `t`.
UserGoal goal_at_turn(const AnnotatedDialogue& d, std::size_t t);

struct GeneratorConfig {
  double repeat_noise = 0.1;
  double multi_domain = 0.4;
  double unsatisfiable = 0.2;
  double request_prob = 0.6;
  std::size_t max_turns = 20;
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);

/// Samples a goal: one or two domains, each either copying an entity's
/// informables or an unmatched combination, plus random requests.
UserGoal sample_goal(const KnowledgeBase& kb, std::uint64_t seed, const GeneratorConfig& cfg = {});

/// One dialogue between the agenda user and the rule system.
AnnotatedDialogue generate_dialogue(const KnowledgeBase& kb, const UserGoal& goal, std::uint64_t seed,
                                    const GeneratorConfig& cfg = {});

std::vector<AnnotatedDialogue> generate_toy_corpus(const KnowledgeBase& kb, std::size_t n, std::uint64_t seed,
                                                   const GeneratorConfig& cfg = {});

enum class SplitMode { kFull, kDomainAdaptation, kSingleToMulti };

std::string_view to_string(SplitMode mode);
SplitMode parse_split_mode(std::string_view s);

struct SplitSpec {
  SplitMode mode = SplitMode::kFull;
  /// Domain, or domains joined by '+', for the transfer modes.
  std::string target;
  std::size_t n_adapt = 0;
  double dev_fraction = 0.1;
  double test_fraction = 0.1;
};

struct Splits {
  std::vector<AnnotatedDialogue> source;
  std::vector<AnnotatedDialogue> adaptation;
  std::vector<AnnotatedDialogue> dev;
  std::vector<AnnotatedDialogue> test;
  /// Dev dialogues outside the target, for measuring source retention.
  std::vector<AnnotatedDialogue> source_dev;
};

Splits make_splits(const std::vector<AnnotatedDialogue>& corpus, const SplitSpec& spec, std::uint64_t seed);

/// True when the dialogue's domains involve the split target.
bool involves_target(const AnnotatedDialogue& d, const SplitSpec& spec);

}  // namespace selfplay
