#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "selfplay/dialogue_state.hpp"

namespace selfplay {

// Environment rules shared by the corpus generator and self-play rollouts.

/// Query for one domain using the belief's constraints in that domain.
MatchResult query_belief(const KnowledgeBase& kb, const BeliefState& belief, const std::string& domain);

/// First entity matched per domain that has at least one belief constraint.
std::map<std::string, const Entity*> first_matches(const KnowledgeBase& kb, const BeliefState& belief);

/// Values the system lexicalises from: the first matching entity of every
/// constrained domain.
ValueSource system_value_source(const KnowledgeBase& kb, const BeliefState& belief);

/// Values the user lexicalises from: goal constraints, with dontcare for
/// informable slots outside the goal.
ValueSource user_value_source(const Ontology& ontology, const UserGoal& goal);

struct SystemEffects {
  std::map<std::string, std::string> offered;
  std::map<SlotKey, std::string> answers;
};

/// Entities offered and attribute values given by a system act, resolved
/// against the belief-filtered database.
SystemEffects system_effects(const KnowledgeBase& kb, const BeliefState& belief, const DialogueAct& system_act);

/// Values carried by the user's inform tokens.
std::map<SlotKey, std::string> user_informed_values(const Ontology& ontology, const UserGoal& goal,
                                                    const DialogueAct& user_act);

/// If the goal constraints of `domain` already in the belief match no entity,
/// replaces the lowest-index such constraint that is not dontcare with dontcare
/// and returns its key.
std::optional<SlotKey> relax_goal(const KnowledgeBase& kb, const BeliefState& belief, const std::string& domain,
                                  UserGoal& goal);

}  // namespace selfplay
