#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "selfplay/dialogue_state.hpp"

namespace selfplay {

enum class RewardMode { kDialogue, kTurn };

std::string_view to_string(RewardMode mode);
RewardMode parse_reward_mode(std::string_view s);

/// Positive and negative value of one reward component.
struct RewardPair {
  double pos = 0.0;
  double neg = 0.0;
  friend bool operator==(const RewardPair&, const RewardPair&) = default;
};

struct RewardConfig {
  struct Ds {
    RewardPair req{0.0, -1.0};
    RewardPair pro{0.0, -5.0};
    RewardPair ans{2.5, -5.0};
  } ds;
  struct Us {
    RewardPair req{0.0, -1.0};
    RewardPair inf{1.0, -1.0};
    RewardPair ans{1.0, -1.0};
  } us;
  double turn_penalty = -0.05;
  double success_reward = 1.0;
  RewardMode mode = RewardMode::kTurn;

  /// Throws ValidationError when any value leaves [-5, 5] or the penalty is positive.
  void validate() const;

  /// The tuned presets for the two RL variants.
  static RewardConfig rl_ds();
  static RewardConfig rl_joint();
  static RewardConfig dialogue_level();
};

void to_json(nlohmann::json& j, const RewardConfig& c);
void from_json(const nlohmann::json& j, RewardConfig& c);

/// Everything a turn reward may look at. History sets hold the state before
/// the current turn.
struct TurnContext {
  DialogueAct user_act;
  DialogueAct system_act;
  /// System act of the previous turn; its requests are pending for the user.
  DialogueAct prev_system_act;
  BeliefState belief;
  MatchResult match_result;
  std::string active_domain;
  UserGoal goal;
  /// Values carried by the user's inform tokens this turn.
  std::map<SlotKey, std::string> user_informed;
  /// Entity offered this turn, per domain.
  std::map<std::string, std::string> offered;
  /// Values the system gave for answered attributes this turn.
  std::map<SlotKey, std::string> answers;

  std::set<SlotKey> ds_requested;
  std::set<std::string> ds_provided;
  /// Most recent offer per domain, before this turn.
  std::map<std::string, std::string> last_offer;
  std::set<SlotKey> us_requested;
  std::set<std::pair<SlotKey, std::string>> us_informed;
};

/// Monotone bookkeeping across the turns of one dialogue.
class RewardTracker {
 public:
  /// Fills the history fields of `ctx` from turns seen so far.
  void fill_history(TurnContext& ctx) const;
  /// Records the current turn after its rewards have been computed.
  void observe(const TurnContext& ctx);

 private:
  std::set<SlotKey> ds_requested_;
  std::set<std::string> ds_provided_;
  std::map<std::string, std::string> last_offer_;
  std::set<SlotKey> us_requested_;
  std::set<std::pair<SlotKey, std::string>> us_informed_;
};

/// Which turn-reward components fired, and with which sign.
enum class Firing { kNone, kPositive, kNegative };

struct DsFirings {
  Firing req = Firing::kNone;
  Firing pro = Firing::kNone;
  Firing ans = Firing::kNone;
};

struct UsFirings {
  Firing req = Firing::kNone;
  Firing inf = Firing::kNone;
  Firing ans = Firing::kNone;
};

/// True when every goal informable of the active domain is in the belief,
/// the query has at least one match and no entity provided earlier is
/// among the matches.
bool provision_due(const TurnContext& ctx, const KnowledgeBase& kb);

/// Entity an answer in `domain` must agree with: this turn's offer, else
/// the latest earlier offer; empty when none.
std::string reference_entity(const TurnContext& ctx, const std::string& domain);

DsFirings ds_firings(const TurnContext& ctx, const KnowledgeBase& kb);
UsFirings us_firings(const TurnContext& ctx);

double ds_turn_reward(const TurnContext& ctx, const KnowledgeBase& kb, const RewardConfig& cfg);
double us_turn_reward(const TurnContext& ctx, const RewardConfig& cfg);

/// Per-turn shared rewards: the penalty on every turn plus the success reward
/// on the last turn of a successful dialogue.
std::vector<TurnRewards> dialogue_level_rewards(const DialogueLog& log, const RewardConfig& cfg);

}  // namespace selfplay
