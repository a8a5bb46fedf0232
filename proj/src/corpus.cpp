#include "selfplay/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "selfplay/rng.hpp"
#include "selfplay/world.hpp"

namespace selfplay {

using nlohmann::json;

// ---------------------------------------------------------------- JSON

void to_json(json& j, const AnnotatedDialogue& d) {
  json turns = json::array();
  for (const auto& t : d.turns) {
    json relaxed = json::array();
    for (const auto& k : t.goal_relaxed) relaxed.push_back(slot_key_string(k));
    json jt{{"user_utt", join_tokens(t.user_utterance)},
            {"user_act", t.user_act.render()},
            {"belief", belief_to_json(t.belief)},
            {"system_act", t.system_act.render()},
            {"system_utt", join_tokens(t.system_utterance)}};
    if (!relaxed.empty()) jt["goal_relaxed"] = relaxed;
    turns.push_back(std::move(jt));
  }
  j = json{{"id", d.id}, {"goal", d.goal}, {"domains", d.domains}, {"turns", turns}};
}

void from_json(const json& j, AnnotatedDialogue& d) {
  d.id = j.at("id").get<std::string>();
  d.goal = j.at("goal").get<UserGoal>();
  d.turns.clear();
  for (const auto& jt : j.at("turns")) {
    AnnotatedTurn t;
    t.user_utterance = split_tokens(jt.at("user_utt").get<std::string>());
    t.user_act = DialogueAct::parse(jt.at("user_act").get<std::string>());
    t.belief = belief_from_json(jt.at("belief"));
    t.system_act = DialogueAct::parse(jt.at("system_act").get<std::string>());
    t.system_utterance = split_tokens(jt.at("system_utt").get<std::string>());
    for (const auto& k : jt.value("goal_relaxed", json::array())) {
      auto key = parse_slot_key(k.get<std::string>());
      if (!key) throw ParseError("malformed goal_relaxed key");
      t.goal_relaxed.push_back(*key);
    }
    d.turns.push_back(std::move(t));
  }
  if (j.contains("domains")) {
    d.domains = j["domains"].get<std::set<std::string>>();
  } else {
    d.domains.clear();
    for (const auto& name : d.goal.domain_names()) d.domains.insert(name);
  }
}

std::vector<std::string> check_dialogue(const AnnotatedDialogue& d, const Ontology& ontology) {
  std::vector<std::string> warnings;
  validate_goal(d.goal, ontology);
  if (d.turns.empty()) throw DataError("dialogue '" + d.id + "' has no turns");
  for (const auto& domain : d.domains)
    if (!ontology.has_domain(domain)) throw DataError("dialogue '" + d.id + "': unknown domain '" + domain + "'");

  BeliefState prev;
  for (std::size_t t = 0; t < d.turns.size(); ++t) {
    const auto& turn = d.turns[t];
    for (const auto& [key, value] : turn.belief.slots) {
      const SlotSpec* spec = ontology.find_slot(key.first, key.second);
      if (!spec || (value != kDontCare &&
                    std::find(spec->values.begin(), spec->values.end(), value) == spec->values.end())) {
        throw DataError("dialogue '" + d.id + "' turn " + std::to_string(t) + ": belief entry " +
                        slot_key_string(key) + "=" + value + " not in ontology");
      }
    }
    for (const auto& [key, value] : prev.slots) {
      if (turn.belief.slots.count(key)) continue;
      const bool deleted = turn.user_act.contains({key.first, Intent::kInform, key.second});
      if (!deleted) {
        warnings.push_back("dialogue '" + d.id + "' turn " + std::to_string(t) + ": belief lost " +
                           slot_key_string(key) + " without a deletion");
      }
    }
    prev = turn.belief;
  }
  return warnings;
}

Corpus parse_corpus(std::istream& in, const Ontology& ontology, const std::string& name) {
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    AnnotatedDialogue d;
    try {
      d = json::parse(line).get<AnnotatedDialogue>();
      auto w = check_dialogue(d, ontology);
      corpus.warnings.insert(corpus.warnings.end(), w.begin(), w.end());
    } catch (const std::exception& e) {
      throw DataError(name + " line " + std::to_string(lineno) + ": " + e.what());
    }
    for (const auto& t : d.turns) {
      for (const auto& w : t.user_utterance) ++corpus.word_counts[w];
      for (const auto& w : t.system_utterance) ++corpus.word_counts[w];
    }
    corpus.dialogues.push_back(std::move(d));
  }
  if (corpus.dialogues.empty()) throw DataError(name + ": corpus is empty");
  return corpus;
}

Corpus load_corpus(const std::string& path, const Ontology& ontology) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus '" + path + "'");
  return parse_corpus(in, ontology, path);
}

void save_corpus(const std::vector<AnnotatedDialogue>& dialogues, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write corpus '" + path + "'");
  for (const auto& d : dialogues) os << json(d).dump() << '\n';
}

Tokens lexicalize_user_turn(const KnowledgeBase& kb, const AnnotatedDialogue& d, std::size_t t) {
  const auto& turn = d.turns.at(t);
  return lexicalize(turn.user_utterance, turn.belief.slots, kb.ontology, derive_seed(stable_hash(d.id), t, 1));
}

Tokens lexicalize_system_turn(const KnowledgeBase& kb, const AnnotatedDialogue& d, std::size_t t) {
  const auto& turn = d.turns.at(t);
  return lexicalize(turn.system_utterance, system_value_source(kb, turn.belief), kb.ontology,
                    derive_seed(stable_hash(d.id), t, 2));
}

UserGoal goal_at_turn(const AnnotatedDialogue& d, std::size_t t) {
  UserGoal goal = d.goal;
  for (std::size_t i = 0; i <= t && i < d.turns.size(); ++i) {
    for (const auto& key : d.turns[i].goal_relaxed) {
      auto g = goal.domains.find(key.first);
      if (g != goal.domains.end()) g->second.constraints[key.second] = std::string(kDontCare);
    }
  }
  return goal;
}

void to_json(json& j, const GeneratorConfig& c) {
  j = json{{"repeat_noise", c.repeat_noise},
           {"multi_domain", c.multi_domain},
           {"unsatisfiable", c.unsatisfiable},
           {"request_prob", c.request_prob},
           {"max_turns", c.max_turns}};
}

void from_json(const json& j, GeneratorConfig& c) {
  c.repeat_noise = j.value("repeat_noise", c.repeat_noise);
  c.multi_domain = j.value("multi_domain", c.multi_domain);
  c.unsatisfiable = j.value("unsatisfiable", c.unsatisfiable);
  c.request_prob = j.value("request_prob", c.request_prob);
  c.max_turns = j.value("max_turns", c.max_turns);
}

// ---------------------------------------------------------------- generator

namespace {

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& options) {
  return options[rng.index(options.size())];
}

std::string join_phrases(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += " and ";
    out += parts[i];
  }
  return out;
}

std::string slot_phrase(const std::string& slot) {
  if (slot == "price") return "price range";
  if (slot == "phone") return "phone number";
  if (slot == "food") return "type of food";
  return slot;
}

std::string user_inform_phrase(Rng& rng, const std::string& domain, const std::string& slot, bool dontcare) {
  const std::string p = placeholder(domain, slot);
  if (dontcare) return pick(rng, std::vector<std::string>{p + " " + slot_phrase(slot) + " is fine",
                                                          "i do not mind , " + p + " " + slot_phrase(slot)});
  if (slot == "area") return pick(rng, std::vector<std::string>{"in the " + p, "in the " + p + " area"});
  if (slot == "price") return pick(rng, std::vector<std::string>{"in the " + p + " price range", "something " + p});
  if (slot == "stars") return pick(rng, std::vector<std::string>{"with " + p + " stars", "rated " + p + " stars"});
  if (slot == "food") return pick(rng, std::vector<std::string>{"serving " + p + " food", "that serves " + p + " food"});
  return "with " + slot_phrase(slot) + " " + p;
}

std::string system_request_phrase(Rng& rng, const std::string& slot) {
  if (slot == "area") return pick(rng, std::vector<std::string>{"which area do you prefer", "what area would you like"});
  if (slot == "price") return pick(rng, std::vector<std::string>{"what price range are you looking for",
                                                                "do you have a price range in mind"});
  if (slot == "stars") return pick(rng, std::vector<std::string>{"how many stars should it have",
                                                                "what star rating would you like"});
  if (slot == "food") return pick(rng, std::vector<std::string>{"what type of food would you like",
                                                               "which cuisine do you prefer"});
  return "what " + slot_phrase(slot) + " would you like";
}

std::string system_answer_phrase(const std::string& domain, const std::string& slot) {
  const std::string p = placeholder(domain, slot);
  if (slot == "address") return "the address is " + p;
  if (slot == "phone") return "the phone number is " + p;
  if (slot == "name") return "it is called " + p;
  return "the " + slot_phrase(slot) + " is " + p;
}

Tokens realise_user(Rng& rng, const DialogueAct& act, const UserGoal& goal, bool opens_domain) {
  if (act.terminal()) {
    return split_tokens(pick(rng, std::vector<std::string>{"thank you , goodbye .", "thanks , that is all ."}));
  }
  std::string domain = act.last_domain();
  std::vector<std::string> informs, requests;
  for (const auto& t : act.tokens) {
    if (!t.has_slot()) continue;
    if (t.intent == Intent::kInform) {
      std::string value{kDontCare};
      if (auto g = goal.domains.find(t.domain); g != goal.domains.end())
        if (auto c = g->second.constraints.find(t.slot); c != g->second.constraints.end()) value = c->second;
      informs.push_back(user_inform_phrase(rng, t.domain, t.slot, value == kDontCare));
    } else if (t.intent == Intent::kRequest) {
      requests.push_back(slot_phrase(t.slot));
    }
  }
  std::string text;
  if (!informs.empty()) {
    if (opens_domain) {
      text = pick(rng, std::vector<std::string>{"i am looking for a " + domain + " ", "i need a " + domain + " "});
    } else {
      text = pick(rng, std::vector<std::string>{"i would like the " + domain + " ", "the " + domain + " should be "});
    }
    text += join_phrases(informs) + " .";
  }
  if (!requests.empty()) {
    if (!text.empty()) text += " ";
    text += pick(rng, std::vector<std::string>{"can i have the ", "what is the "}) + join_phrases(requests) + " ?";
  }
  return split_tokens(text);
}

Tokens realise_system(Rng& rng, const DialogueAct& act) {
  if (act.terminal()) {
    return split_tokens(pick(rng, std::vector<std::string>{"you are welcome , goodbye .", "have a nice day ."}));
  }
  std::vector<std::string> sentences;
  std::vector<std::string> requests, answers;
  for (const auto& t : act.tokens) {
    const std::string& d = t.domain;
    switch (t.intent) {
      case Intent::kInform:
        if (!t.has_slot()) {
          sentences.push_back(pick(rng, std::vector<std::string>{"sorry , there is no " + d + " matching your request .",
                                                                 "i am sorry , i could not find such a " + d + " ."}));
        }
        break;
      case Intent::kOffer:
        sentences.push_back(pick(
            rng, std::vector<std::string>{
                     placeholder(d, "name") + " is a " + placeholder(d, "price") + " " + d + " in the " +
                         placeholder(d, "area") + " .",
                     "i recommend " + placeholder(d, "name") + " , it is in the " + placeholder(d, "area") + " ."}));
        break;
      case Intent::kRequest:
        if (t.has_slot()) requests.push_back(system_request_phrase(rng, t.slot));
        break;
      case Intent::kAnswer:
        if (t.has_slot()) answers.push_back(system_answer_phrase(d, t.slot));
        break;
      default:
        break;
    }
  }
  if (!answers.empty()) sentences.push_back(join_phrases(answers) + " .");
  if (!requests.empty()) sentences.push_back(join_phrases(requests) + " ?");
  std::string text;
  for (const auto& s : sentences) text += (text.empty() ? "" : " ") + s;
  return split_tokens(text);
}

DialogueAct rule_system_act(const KnowledgeBase& kb, const BeliefState& belief, const DialogueAct& user_act) {
  DialogueAct act;
  if (user_act.terminal()) {
    act.add({std::string(kGeneralDomain), Intent::kBye, std::string(kNoSlot)});
    return act;
  }
  const std::string d = user_act.last_domain();
  if (d.empty()) return act;
  const auto requests = user_act.with_intent(Intent::kRequest);
  if (!requests.empty()) {
    for (const auto& r : requests)
      if (r.has_slot()) act.add({r.domain, Intent::kAnswer, r.slot});
    return act;
  }
  MatchResult m = query_belief(kb, belief, d);
  if (m.count == 0) {
    act.add({d, Intent::kInform, std::string(kNoSlot)});
    return act;
  }
  for (const auto& slot : kb.ontology.informable_slots(d))
    if (!belief.slots.count({d, slot})) act.add({d, Intent::kRequest, slot});
  if (act.empty()) act.add({d, Intent::kOffer, "name"});
  return act;
}

}  // namespace

UserGoal sample_goal(const KnowledgeBase& kb, std::uint64_t seed, const GeneratorConfig& cfg) {
  Rng rng(seed);
  const auto& domains = kb.ontology.domains();
  std::vector<std::string> chosen;
  if (domains.size() >= 2 && rng.bernoulli(cfg.multi_domain)) {
    chosen = domains;
    while (chosen.size() > 2) chosen.erase(chosen.begin() + static_cast<long>(rng.index(chosen.size())));
  } else {
    chosen.push_back(pick(rng, domains));
  }

  UserGoal goal;
  for (const auto& d : chosen) {
    DomainGoal g;
    std::vector<const Entity*> pool;
    for (const auto& e : kb.entities)
      if (e.domain == d) pool.push_back(&e);
    const auto informables = kb.ontology.informable_slots(d);
    if (!pool.empty() && !rng.bernoulli(cfg.unsatisfiable)) {
      const Entity* e = pool[rng.index(pool.size())];
      for (const auto& s : informables) g.constraints[s] = *e->attribute(s);
    } else {
      for (int attempt = 0; attempt < 100; ++attempt) {
        g.constraints.clear();
        for (const auto& s : informables) g.constraints[s] = pick(rng, kb.ontology.find_slot(d, s)->values);
        if (query(kb.ontology, kb.entities, d, g.constraints).count == 0) break;
      }
    }
    for (const auto& s : kb.ontology.requestable_slots(d)) {
      if (s == "name") continue;
      if (rng.bernoulli(cfg.request_prob)) g.requests.insert(s);
    }
    goal.domains[d] = std::move(g);
  }
  return goal;
}

AnnotatedDialogue generate_dialogue(const KnowledgeBase& kb, const UserGoal& initial, std::uint64_t seed,
                                    const GeneratorConfig& cfg) {
  Rng rng(seed);
  AnnotatedDialogue out;
  out.goal = initial;
  for (const auto& d : initial.domain_names()) out.domains.insert(d);

  UserGoal goal = initial;
  const std::vector<std::string> order = goal.domain_names();
  std::size_t current = 0;
  BeliefState belief;
  DialogueAct prev_system;
  std::optional<SlotKey> relaxed;
  std::map<std::string, std::vector<std::string>> informed;
  std::set<std::string> requested;

  auto value_of = [&](const std::string& d, const std::string& s) {
    const auto& c = goal.domains[d].constraints;
    auto it = c.find(s);
    return it == c.end() ? std::string(kDontCare) : it->second;
  };

  for (std::size_t t = 0; t < cfg.max_turns; ++t) {
    AnnotatedTurn turn;
    DialogueAct user;
    bool opens_domain = false;
    std::string d = order[current];
    auto inform = [&](const std::string& dom, const std::string& slot) {
      user.add({dom, Intent::kInform, slot});
      auto& v = informed[dom];
      if (std::find(v.begin(), v.end(), slot) == v.end()) v.push_back(slot);
    };
    auto open_domain = [&](const std::string& dom) {
      std::vector<std::string> remaining;
      for (const auto& [slot, _] : goal.domains[dom].constraints) remaining.push_back(slot);
      for (std::size_t i = remaining.size(); i > 1; --i) std::swap(remaining[i - 1], remaining[rng.index(i)]);
      const std::size_t k = std::min<std::size_t>(remaining.size(), rng.bernoulli(0.5) ? 2 : 1);
      for (std::size_t i = 0; i < k; ++i) inform(dom, remaining[i]);
      opens_domain = true;
    };

    const std::string d0 = d;
    const std::vector<std::string> before = informed[d];
    std::vector<ActToken> sys_requests;
    for (const auto& r : prev_system.with_intent(Intent::kRequest))
      if (r.domain == d && r.has_slot()) sys_requests.push_back(r);
    const bool offered = prev_system.contains({d, Intent::kOffer, "name"});
    const bool answered = prev_system.has_intent(Intent::kAnswer);

    if (relaxed) {
      turn.goal_relaxed.push_back(*relaxed);
      inform(relaxed->first, relaxed->second);
      for (const auto& r : sys_requests) inform(d, r.slot);
      relaxed.reset();
    } else if (!sys_requests.empty()) {
      for (const auto& r : sys_requests) inform(d, r.slot);
    } else if (offered && !requested.count(d) && !goal.domains[d].requests.empty()) {
      for (const auto& s : goal.domains[d].requests) user.add({d, Intent::kRequest, s});
      requested.insert(d);
    } else if (offered || answered) {
      ++current;
      if (current == order.size()) {
        user.add({std::string(kGeneralDomain), Intent::kBye, std::string(kNoSlot)});
      } else {
        d = order[current];
        open_domain(d);
      }
    } else if (informed[d].empty()) {
      open_domain(d);
    } else {
      user.add({std::string(kGeneralDomain), Intent::kBye, std::string(kNoSlot)});
    }

    if (!user.terminal() && t > 0 && d == d0 && !before.empty() && rng.bernoulli(cfg.repeat_noise)) {
      const std::string& slot = before[rng.index(before.size())];
      user.add({d, Intent::kInform, slot});
    }

    for (const auto& tok : user.tokens)
      if (tok.intent == Intent::kInform && tok.has_slot()) belief.slots[tok.key()] = value_of(tok.domain, tok.slot);

    turn.user_act = user;
    turn.user_utterance = realise_user(rng, user, goal, opens_domain);
    turn.belief = belief;
    turn.system_act = rule_system_act(kb, belief, user);
    turn.system_utterance = realise_system(rng, turn.system_act);
    out.turns.push_back(turn);

    if (user.terminal()) break;
    const std::string active = user.last_domain();
    if (!active.empty()) relaxed = relax_goal(kb, belief, active, goal);
    prev_system = turn.system_act;
  }
  return out;
}

std::vector<AnnotatedDialogue> generate_toy_corpus(const KnowledgeBase& kb, std::size_t n, std::uint64_t seed,
                                                   const GeneratorConfig& cfg) {
  if (kb.ontology.domains().size() < 2) throw DataError("generator needs an ontology with at least two domains");
  std::vector<AnnotatedDialogue> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    UserGoal goal = sample_goal(kb, derive_seed(seed, i, 1), cfg);
    AnnotatedDialogue d = generate_dialogue(kb, goal, derive_seed(seed, i, 2), cfg);
    char id[32];
    std::snprintf(id, sizeof id, "toy_%05zu", i);
    d.id = id;
    out.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------- splits

std::string_view to_string(SplitMode mode) {
  switch (mode) {
    case SplitMode::kFull: return "full";
    case SplitMode::kDomainAdaptation: return "domain_adaptation";
    case SplitMode::kSingleToMulti: return "single_to_multi";
  }
  return "full";
}

SplitMode parse_split_mode(std::string_view s) {
  if (s == "full") return SplitMode::kFull;
  if (s == "domain_adaptation") return SplitMode::kDomainAdaptation;
  if (s == "single_to_multi") return SplitMode::kSingleToMulti;
  throw ParseError("unknown split mode '" + std::string(s) + "'");
}

namespace {

std::set<std::string> target_domains(const SplitSpec& spec) {
  std::set<std::string> out;
  std::stringstream ss(spec.target);
  std::string part;
  while (std::getline(ss, part, '+'))
    if (!part.empty()) out.insert(part);
  return out;
}

}  // namespace

bool involves_target(const AnnotatedDialogue& d, const SplitSpec& spec) {
  const auto target = target_domains(spec);
  switch (spec.mode) {
    case SplitMode::kFull: return true;
    case SplitMode::kDomainAdaptation:
      return std::any_of(target.begin(), target.end(), [&](const std::string& t) { return d.domains.count(t) > 0; });
    case SplitMode::kSingleToMulti: return d.domains == target;
  }
  return false;
}

Splits make_splits(const std::vector<AnnotatedDialogue>& corpus, const SplitSpec& spec, std::uint64_t seed) {
  if (spec.mode != SplitMode::kFull && target_domains(spec).empty()) throw DataError("split target is empty");
  if (spec.mode == SplitMode::kSingleToMulti && target_domains(spec).size() < 2) {
    throw DataError("single_to_multi needs a multi-domain target such as 'hotel+restaurant'");
  }
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x5117));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

  const auto n_dev = static_cast<std::size_t>(spec.dev_fraction * static_cast<double>(corpus.size()));
  const auto n_test = static_cast<std::size_t>(spec.test_fraction * static_cast<double>(corpus.size()));
  std::vector<AnnotatedDialogue> train, dev, test;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& d = corpus[order[k]];
    if (k < n_dev) dev.push_back(d);
    else if (k < n_dev + n_test) test.push_back(d);
    else train.push_back(d);
  }

  Splits s;
  if (spec.mode == SplitMode::kFull) {
    s.source = std::move(train);
    s.dev = std::move(dev);
    s.test = std::move(test);
    return s;
  }

  std::vector<AnnotatedDialogue> candidates;
  for (auto& d : train) {
    const bool target = involves_target(d, spec);
    if (spec.mode == SplitMode::kDomainAdaptation) {
      if (target) candidates.push_back(std::move(d));
      else s.source.push_back(std::move(d));
    } else {
      if (target) candidates.push_back(std::move(d));
      else if (d.domains.size() == 1) s.source.push_back(std::move(d));
    }
  }
  if (candidates.size() < spec.n_adapt) {
    throw DataError("only " + std::to_string(candidates.size()) + " adaptation candidates for target '" +
                    spec.target + "', need " + std::to_string(spec.n_adapt));
  }
  s.adaptation.assign(candidates.begin(), candidates.begin() + static_cast<long>(spec.n_adapt));
  for (auto& d : dev) {
    if (involves_target(d, spec)) s.dev.push_back(d);
    else if (spec.mode == SplitMode::kDomainAdaptation || d.domains.size() == 1) s.source_dev.push_back(d);
  }
  for (auto& d : test)
    if (involves_target(d, spec)) s.test.push_back(d);
  return s;
}

}  // namespace selfplay
