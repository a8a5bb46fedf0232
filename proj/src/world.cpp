#include "selfplay/world.hpp"

namespace selfplay {

MatchResult query_belief(const KnowledgeBase& kb, const BeliefState& belief, const std::string& domain) {
  if (domain.empty() || !kb.ontology.has_domain(domain)) return MatchResult{};
  return query(kb.ontology, kb.entities, domain, belief.constraints(domain));
}

std::map<std::string, const Entity*> first_matches(const KnowledgeBase& kb, const BeliefState& belief) {
  std::map<std::string, const Entity*> out;
  for (const auto& domain : kb.ontology.domains()) {
    auto constraints = belief.constraints(domain);
    if (constraints.empty()) continue;
    MatchResult m = query(kb.ontology, kb.entities, domain, constraints);
    if (m.count > 0) out[domain] = kb.find_entity(m.entities.front());
  }
  return out;
}

ValueSource system_value_source(const KnowledgeBase& kb, const BeliefState& belief) {
  ValueSource src;
  for (const auto& [domain, entity] : first_matches(kb, belief)) {
    for (const auto& [k, v] : value_source(*entity)) src[k] = v;
  }
  return src;
}

ValueSource user_value_source(const Ontology& ontology, const UserGoal& goal) {
  ValueSource src = value_source(goal);
  for (const auto& domain : ontology.domains()) {
    for (const auto& slot : ontology.informable_slots(domain)) src.try_emplace({domain, slot}, std::string(kDontCare));
  }
  return src;
}

SystemEffects system_effects(const KnowledgeBase& kb, const BeliefState& belief, const DialogueAct& system_act) {
  SystemEffects fx;
  const auto firsts = first_matches(kb, belief);
  for (const auto& t : system_act.tokens) {
    if (t.domain == kGeneralDomain) continue;
    auto it = firsts.find(t.domain);
    const Entity* entity = it == firsts.end() ? nullptr : it->second;
    if (t.intent == Intent::kOffer) {
      fx.offered[t.domain] = entity ? entity->id : std::string{};
    } else if (t.intent == Intent::kAnswer && t.has_slot()) {
      const std::string* v = entity ? entity->attribute(t.slot) : nullptr;
      fx.answers[t.key()] = v ? *v : std::string{};
    }
  }
  return fx;
}

std::map<SlotKey, std::string> user_informed_values(const Ontology& ontology, const UserGoal& goal,
                                                    const DialogueAct& user_act) {
  std::map<SlotKey, std::string> out;
  const ValueSource src = user_value_source(ontology, goal);
  for (const auto& t : user_act.tokens) {
    if (t.intent != Intent::kInform || !t.has_slot()) continue;
    auto it = src.find(t.key());
    out[t.key()] = it == src.end() ? std::string(kDontCare) : it->second;
  }
  return out;
}

std::optional<SlotKey> relax_goal(const KnowledgeBase& kb, const BeliefState& belief, const std::string& domain,
                                  UserGoal& goal) {
  auto g = goal.domains.find(domain);
  if (g == goal.domains.end()) return std::nullopt;
  std::map<std::string, std::string> stated;
  for (const auto& [slot, value] : g->second.constraints)
    if (belief.slots.count({domain, slot})) stated[slot] = value;
  if (stated.empty()) return std::nullopt;
  if (query(kb.ontology, kb.entities, domain, stated).count > 0) return std::nullopt;

  std::optional<SlotKey> chosen;
  std::size_t best = kb.ontology.size();
  for (const auto& [slot, value] : stated) {
    if (value == kDontCare) continue;
    auto idx = kb.ontology.index_of(domain, slot);
    if (idx && *idx < best) {
      best = *idx;
      chosen = SlotKey{domain, slot};
    }
  }
  if (chosen) g->second.constraints[chosen->second] = std::string(kDontCare);
  return chosen;
}

}  // namespace selfplay
