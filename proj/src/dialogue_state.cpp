#include "selfplay/dialogue_state.hpp"

#include <algorithm>
#include <fstream>

namespace selfplay {

using nlohmann::json;

std::string_view to_string(Intent intent) {
  switch (intent) {
    case Intent::kInform: return "inform";
    case Intent::kRequest: return "request";
    case Intent::kOffer: return "offer";
    case Intent::kBook: return "book";
    case Intent::kAnswer: return "answer";
    case Intent::kBye: return "bye";
    case Intent::kGreet: return "greet";
  }
  return "inform";
}

Intent parse_intent(std::string_view s) {
  for (Intent i : all_intents())
    if (to_string(i) == s) return i;
  throw ParseError("unknown intent '" + std::string(s) + "'");
}

const std::vector<Intent>& all_intents() {
  static const std::vector<Intent> intents{Intent::kInform, Intent::kRequest, Intent::kOffer, Intent::kBook,
                                           Intent::kAnswer, Intent::kBye,     Intent::kGreet};
  return intents;
}

std::string ActToken::str() const { return domain + "-" + std::string(to_string(intent)) + "-" + slot; }

ActToken ActToken::parse(std::string_view s) {
  const auto a = s.find('-');
  const auto b = a == std::string_view::npos ? a : s.find('-', a + 1);
  if (a == std::string_view::npos || b == std::string_view::npos || a == 0 || b == a + 1 || b + 1 >= s.size()) {
    throw ParseError("malformed act token '" + std::string(s) + "'");
  }
  ActToken t;
  t.domain = std::string(s.substr(0, a));
  t.intent = parse_intent(s.substr(a + 1, b - a - 1));
  t.slot = std::string(s.substr(b + 1));
  return t;
}

bool DialogueAct::add(ActToken token) {
  if (contains(token)) return false;
  tokens.push_back(std::move(token));
  return true;
}

bool DialogueAct::contains(const ActToken& token) const {
  return std::find(tokens.begin(), tokens.end(), token) != tokens.end();
}

bool DialogueAct::has_intent(Intent intent) const {
  return std::any_of(tokens.begin(), tokens.end(), [&](const ActToken& t) { return t.intent == intent; });
}

std::vector<ActToken> DialogueAct::with_intent(Intent intent) const {
  std::vector<ActToken> out;
  for (const auto& t : tokens)
    if (t.intent == intent) out.push_back(t);
  return out;
}

std::string DialogueAct::last_domain() const {
  for (auto it = tokens.rbegin(); it != tokens.rend(); ++it)
    if (it->domain != kGeneralDomain) return it->domain;
  return {};
}

std::vector<std::string> DialogueAct::token_strings() const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.str());
  return out;
}

std::string DialogueAct::render() const {
  std::string out;
  for (const auto& t : tokens) {
    out += t.str();
    out += ' ';
  }
  out += kEndOfAct;
  return out;
}

DialogueAct DialogueAct::parse(std::string_view s) {
  DialogueAct act;
  const Tokens parts = split_tokens(s);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i] == kEndOfAct) {
      if (i + 1 != parts.size()) throw ParseError("act: tokens after end marker in '" + std::string(s) + "'");
      break;
    }
    if (!act.add(ActToken::parse(parts[i]))) {
      throw ParseError("act: duplicate token '" + parts[i] + "'");
    }
  }
  return act;
}

// ---------------------------------------------------------------- goals

std::vector<std::string> UserGoal::domain_names() const {
  std::vector<std::string> out;
  for (const auto& [d, _] : domains) out.push_back(d);
  return out;
}

void validate_goal(const UserGoal& goal, const Ontology& ontology) {
  if (goal.domains.empty()) throw ValidationError("goal: no active domain");
  for (const auto& [domain, g] : goal.domains) {
    if (!ontology.has_domain(domain)) throw ValidationError("goal: unknown domain '" + domain + "'");
    for (const auto& [slot, value] : g.constraints) {
      const SlotSpec* spec = ontology.find_slot(domain, slot);
      if (!spec) throw ValidationError("goal: unknown slot '" + domain + "-" + slot + "'");
      if (value != kDontCare && std::find(spec->values.begin(), spec->values.end(), value) == spec->values.end()) {
        throw ValidationError("goal: value '" + value + "' not in ontology for '" + domain + "-" + slot + "'");
      }
    }
    for (const auto& slot : g.requests) {
      if (!ontology.find_slot(domain, slot)) {
        throw ValidationError("goal: unknown requested slot '" + domain + "-" + slot + "'");
      }
    }
  }
}

ValueSource value_source(const UserGoal& goal) {
  ValueSource src;
  for (const auto& [domain, g] : goal.domains)
    for (const auto& [slot, value] : g.constraints) src[{domain, slot}] = value;
  return src;
}

std::map<std::string, std::string> BeliefState::constraints(std::string_view domain) const {
  std::map<std::string, std::string> out;
  for (const auto& [key, value] : slots)
    if (key.first == domain) out[key.second] = value;
  return out;
}

GoalState init_goal_state(const UserGoal& goal, const Ontology& ontology) {
  GoalState s;
  s.bits.assign(ontology.size(), 0);
  for (const auto& [domain, g] : goal.domains) {
    for (const auto& [slot, _] : g.constraints)
      if (auto i = ontology.index_of(domain, slot)) s.bits[*i] = 1;
    for (const auto& slot : g.requests)
      if (auto i = ontology.index_of(domain, slot)) s.bits[*i] = 1;
  }
  return s;
}

GoalState update_goal_state(const GoalState& state, const DialogueAct& prev_user_act, const Ontology& ontology) {
  GoalState out = state;
  for (const auto& t : prev_user_act.tokens) {
    if (t.intent != Intent::kInform && t.intent != Intent::kRequest) continue;
    if (!t.has_slot()) continue;
    if (auto i = ontology.index_of(t.domain, t.slot); i && *i < out.bits.size()) out.bits[*i] = 0;
  }
  return out;
}

BeliefState update_belief(const BeliefState& belief, const std::vector<SlotValue>& dst_output,
                          const Ontology& ontology, BeliefDiagnostics* diagnostics) {
  BeliefState out = belief;
  for (const auto& [key, value] : dst_output) {
    const SlotSpec* spec = ontology.find_slot(key.first, key.second);
    const bool known_value = value == kDontCare || value == kNoneValue ||
                             (spec && std::find(spec->values.begin(), spec->values.end(), value) != spec->values.end());
    if (!spec || !known_value) {
      if (diagnostics) ++diagnostics->skipped_unknown;
      continue;
    }
    if (value == kNoneValue) {
      out.slots.erase(key);
    } else {
      out.slots[key] = value;
    }
  }
  return out;
}

SummaryBelief summarize_belief(const BeliefState& belief, const Ontology& ontology) {
  SummaryBelief s;
  s.bits.assign(ontology.size(), 0);
  for (const auto& [key, _] : belief.slots)
    if (auto i = ontology.index_of(key)) s.bits[*i] = 1;
  return s;
}

// ---------------------------------------------------------------- JSON

namespace {

json slot_map_to_json(const std::map<SlotKey, std::string>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[slot_key_string(k)] = v;
  return j;
}

std::map<SlotKey, std::string> slot_map_from_json(const json& j) {
  std::map<SlotKey, std::string> m;
  for (const auto& [k, v] : j.items()) {
    auto key = parse_slot_key(k);
    if (!key) throw ParseError("malformed domain-slot key '" + k + "'");
    m[*key] = v.get<std::string>();
  }
  return m;
}

}  // namespace

void to_json(json& j, const ActToken& t) { j = t.str(); }

void to_json(json& j, const DialogueAct& a) { j = a.render(); }

void from_json(const json& j, DialogueAct& a) { a = DialogueAct::parse(j.get<std::string>()); }

void to_json(json& j, const UserGoal& g) {
  j = json::object();
  for (const auto& [domain, dg] : g.domains) {
    j[domain] = {{"constraints", dg.constraints}, {"requests", dg.requests}};
  }
}

void from_json(const json& j, UserGoal& g) {
  g.domains.clear();
  for (const auto& [domain, body] : j.items()) {
    DomainGoal dg;
    dg.constraints = body.at("constraints").get<std::map<std::string, std::string>>();
    dg.requests = body.at("requests").get<std::set<std::string>>();
    g.domains[domain] = std::move(dg);
  }
}

json belief_to_json(const BeliefState& b) { return slot_map_to_json(b.slots); }

BeliefState belief_from_json(const json& j) { return BeliefState{slot_map_from_json(j)}; }

void to_json(json& j, const MatchResult& m) {
  j = {{"entities", m.entities}, {"count", m.count}, {"bucket", m.bucket}};
}

void from_json(const json& j, MatchResult& m) {
  m.entities = j.at("entities").get<std::vector<std::string>>();
  m.count = j.at("count").get<std::size_t>();
  m.bucket = j.at("bucket").get<MatchBucket>();
}

void to_json(json& j, const Turn& t) {
  json relaxed = json::array();
  for (const auto& k : t.goal_relaxed) relaxed.push_back(slot_key_string(k));
  j = json{{"index", t.index},
           {"user_utterance", join_tokens(t.user_utterance)},
           {"system_utterance", join_tokens(t.system_utterance)},
           {"user_utterance_delex", join_tokens(t.user_utterance_delex)},
           {"system_utterance_delex", join_tokens(t.system_utterance_delex)},
           {"user_act", t.user_act},
           {"system_act", t.system_act},
           {"belief", belief_to_json(t.belief)},
           {"goal_state_snapshot", t.goal_state_snapshot.bits},
           {"match_result", t.match_result},
           {"active_domain", t.active_domain},
           {"rewards", {{"ds", t.rewards.ds}, {"us", t.rewards.us}}},
           {"user_act_logprobs", t.user_act_logprobs},
           {"system_act_logprobs", t.system_act_logprobs},
           {"offered", t.offered},
           {"answers", slot_map_to_json(t.answers)},
           {"user_informed", slot_map_to_json(t.user_informed)},
           {"goal_relaxed", relaxed},
           {"diagnostics",
            {{"user_act_truncated", t.diagnostics.user_act_truncated},
             {"system_act_truncated", t.diagnostics.system_act_truncated},
             {"user_utterance_truncated", t.diagnostics.user_utterance_truncated},
             {"system_utterance_truncated", t.diagnostics.system_utterance_truncated},
             {"dst_skipped", t.diagnostics.dst_skipped}}}};
}

void from_json(const json& j, Turn& t) {
  t.index = j.at("index").get<int>();
  t.user_utterance = split_tokens(j.at("user_utterance").get<std::string>());
  t.system_utterance = split_tokens(j.at("system_utterance").get<std::string>());
  t.user_utterance_delex = split_tokens(j.value("user_utterance_delex", std::string{}));
  t.system_utterance_delex = split_tokens(j.value("system_utterance_delex", std::string{}));
  t.user_act = j.at("user_act").get<DialogueAct>();
  t.system_act = j.at("system_act").get<DialogueAct>();
  t.belief = belief_from_json(j.at("belief"));
  t.goal_state_snapshot.bits = j.at("goal_state_snapshot").get<std::vector<int>>();
  t.match_result = j.at("match_result").get<MatchResult>();
  t.active_domain = j.value("active_domain", std::string{});
  t.rewards.ds = j.at("rewards").at("ds").get<double>();
  t.rewards.us = j.at("rewards").at("us").get<double>();
  t.user_act_logprobs = j.value("user_act_logprobs", std::vector<double>{});
  t.system_act_logprobs = j.value("system_act_logprobs", std::vector<double>{});
  t.offered = j.value("offered", std::map<std::string, std::string>{});
  t.answers = slot_map_from_json(j.value("answers", json::object()));
  t.user_informed = slot_map_from_json(j.value("user_informed", json::object()));
  t.goal_relaxed.clear();
  for (const auto& k : j.value("goal_relaxed", json::array())) {
    auto key = parse_slot_key(k.get<std::string>());
    if (!key) throw ParseError("malformed relaxed key");
    t.goal_relaxed.push_back(*key);
  }
  if (j.contains("diagnostics")) {
    const auto& d = j["diagnostics"];
    t.diagnostics.user_act_truncated = d.value("user_act_truncated", false);
    t.diagnostics.system_act_truncated = d.value("system_act_truncated", false);
    t.diagnostics.user_utterance_truncated = d.value("user_utterance_truncated", false);
    t.diagnostics.system_utterance_truncated = d.value("system_utterance_truncated", false);
    t.diagnostics.dst_skipped = d.value("dst_skipped", std::size_t{0});
  }
}

void to_json(json& j, const DialogueLog& d) {
  j = json{{"id", d.id},
           {"goal", d.goal},
           {"initial_goal", d.initial_goal},
           {"turns", d.turns},
           {"outcome", {{"informed", d.outcome.informed}, {"success", d.outcome.success}}}};
}

void from_json(const json& j, DialogueLog& d) {
  d.id = j.value("id", std::string{});
  d.goal = j.at("goal").get<UserGoal>();
  d.initial_goal = j.contains("initial_goal") ? j["initial_goal"].get<UserGoal>() : d.goal;
  d.turns = j.at("turns").get<std::vector<Turn>>();
  d.outcome.informed = j.at("outcome").at("informed").get<std::map<std::string, bool>>();
  d.outcome.success = j.at("outcome").at("success").get<bool>();
}

void save_dialogue_logs(const std::vector<DialogueLog>& logs, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ParseError("cannot open '" + path + "' for writing");
  for (const auto& log : logs) os << json(log).dump() << '\n';
}

std::vector<DialogueLog> load_dialogue_logs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::vector<DialogueLog> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line).get<DialogueLog>());
    } catch (const json::exception& e) {
      throw ParseError("'" + path + "' line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace selfplay
