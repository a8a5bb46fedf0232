#pragma once

#include <compare>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "selfplay/ontology.hpp"

namespace selfplay {

enum class Intent { kInform, kRequest, kOffer, kBook, kAnswer, kBye, kGreet };

inline constexpr std::string_view kGeneralDomain = "general";
inline constexpr std::string_view kEndOfAct = "<eos>";
inline constexpr std::string_view kNoSlot = "none";

std::string_view to_string(Intent intent);
Intent parse_intent(std::string_view s);
const std::vector<Intent>& all_intents();

/// "domain-intent-slot"; slot is "none" when the act names no slot.
struct ActToken {
  std::string domain;
  Intent intent = Intent::kInform;
  std::string slot{kNoSlot};

  std::string str() const;
  static ActToken parse(std::string_view s);
  bool has_slot() const { return slot != kNoSlot; }
  SlotKey key() const { return {domain, slot}; }

  friend auto operator<=>(const ActToken&, const ActToken&) = default;
  friend bool operator==(const ActToken&, const ActToken&) = default;
};

/// Ordered act-token sequence. The end marker is implicit in `tokens` and
/// explicit in the rendered form.
struct DialogueAct {
  std::vector<ActToken> tokens;

  /// Appends unless the token is already present.
  bool add(ActToken token);
  bool contains(const ActToken& token) const;
  bool has_intent(Intent intent) const;
  std::vector<ActToken> with_intent(Intent intent) const;
  bool empty() const { return tokens.empty(); }
  /// True when the act contains a bye token.
  bool terminal() const { return has_intent(Intent::kBye); }
  /// Domain of the last domain-specific token, or empty.
  std::string last_domain() const;

  std::vector<std::string> token_strings() const;
  /// Tokens followed by the end marker, space separated.
  std::string render() const;
  /// Accepts the rendered form; the trailing end marker is optional.
  /// Throws ParseError on malformed or duplicate tokens.
  static DialogueAct parse(std::string_view s);

  friend bool operator==(const DialogueAct&, const DialogueAct&) = default;
};

struct DomainGoal {
  std::map<std::string, std::string> constraints;
  std::set<std::string> requests;

  friend bool operator==(const DomainGoal&, const DomainGoal&) = default;
};

struct UserGoal {
  std::map<std::string, DomainGoal> domains;

  std::vector<std::string> domain_names() const;
  friend bool operator==(const UserGoal&, const UserGoal&) = default;
};

/// Throws ValidationError when a slot or value is not in the ontology or the
/// goal has no domain.
void validate_goal(const UserGoal& goal, const Ontology& ontology);
ValueSource value_source(const UserGoal& goal);

/// Binary progress vector over the domain-slot index.
struct GoalState {
  std::vector<int> bits;
  friend bool operator==(const GoalState&, const GoalState&) = default;
};

struct BeliefState {
  std::map<SlotKey, std::string> slots;

  /// Constraints of one domain as a slot -> value map.
  std::map<std::string, std::string> constraints(std::string_view domain) const;
  friend bool operator==(const BeliefState&, const BeliefState&) = default;
};

struct SummaryBelief {
  std::vector<int> bits;
  friend bool operator==(const SummaryBelief&, const SummaryBelief&) = default;
};

/// One DST prediction: a slot key with a value, "none" meaning deletion.
using SlotValue = std::pair<SlotKey, std::string>;

struct BeliefDiagnostics {
  std::size_t skipped_unknown = 0;
};

GoalState init_goal_state(const UserGoal& goal, const Ontology& ontology);
/// Turns off every entry named by an inform or request token.
GoalState update_goal_state(const GoalState& state, const DialogueAct& prev_user_act, const Ontology& ontology);
/// Overwrites, deletes ("none") or skips (unknown key, tallied) each pair.
BeliefState update_belief(const BeliefState& belief, const std::vector<SlotValue>& dst_output,
                          const Ontology& ontology, BeliefDiagnostics* diagnostics = nullptr);
SummaryBelief summarize_belief(const BeliefState& belief, const Ontology& ontology);

struct TurnRewards {
  double ds = 0.0;
  double us = 0.0;
  friend bool operator==(const TurnRewards&, const TurnRewards&) = default;
};

struct TurnDiagnostics {
  bool user_act_truncated = false;
  bool system_act_truncated = false;
  bool user_utterance_truncated = false;
  bool system_utterance_truncated = false;
  std::size_t dst_skipped = 0;
  friend bool operator==(const TurnDiagnostics&, const TurnDiagnostics&) = default;
};

struct Turn {
  int index = 0;
  Tokens user_utterance;
  Tokens system_utterance;
  Tokens user_utterance_delex;
  Tokens system_utterance_delex;
  DialogueAct user_act;
  DialogueAct system_act;
  BeliefState belief;
  /// Goal state the user policy saw when producing `user_act`.
  GoalState goal_state_snapshot;
  MatchResult match_result;
  std::string active_domain;
  TurnRewards rewards;
  std::vector<double> user_act_logprobs;
  std::vector<double> system_act_logprobs;
  /// Entity offered per domain this turn; empty id when an offer had no entity.
  std::map<std::string, std::string> offered;
  /// Values the system gave for answered attributes.
  std::map<SlotKey, std::string> answers;
  /// Values the user conveyed with its inform tokens.
  std::map<SlotKey, std::string> user_informed;
  /// Constraints the user relaxed to dontcare before this turn.
  std::vector<SlotKey> goal_relaxed;
  TurnDiagnostics diagnostics;
};

struct DialogueOutcome {
  std::map<std::string, bool> informed;
  bool success = false;
  friend bool operator==(const DialogueOutcome&, const DialogueOutcome&) = default;
};

struct DialogueLog {
  std::string id;
  /// Final goal, after any relaxations.
  UserGoal goal;
  UserGoal initial_goal;
  std::vector<Turn> turns;
  DialogueOutcome outcome;
};

void to_json(nlohmann::json& j, const ActToken& t);
void to_json(nlohmann::json& j, const DialogueAct& a);
void from_json(const nlohmann::json& j, DialogueAct& a);
void to_json(nlohmann::json& j, const UserGoal& g);
void from_json(const nlohmann::json& j, UserGoal& g);
nlohmann::json belief_to_json(const BeliefState& b);
BeliefState belief_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const MatchResult& m);
void from_json(const nlohmann::json& j, MatchResult& m);
void to_json(nlohmann::json& j, const Turn& t);
void from_json(const nlohmann::json& j, Turn& t);
void to_json(nlohmann::json& j, const DialogueLog& d);
void from_json(const nlohmann::json& j, DialogueLog& d);

/// One dialogue per line.
void save_dialogue_logs(const std::vector<DialogueLog>& logs, const std::string& path);
std::vector<DialogueLog> load_dialogue_logs(const std::string& path);

}  // namespace selfplay
