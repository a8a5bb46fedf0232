#include "selfplay/rewards.hpp"

#include <algorithm>
#include <cmath>

namespace selfplay {

using nlohmann::json;

std::string_view to_string(RewardMode mode) { return mode == RewardMode::kTurn ? "turn" : "dialogue"; }

RewardMode parse_reward_mode(std::string_view s) {
  if (s == "turn") return RewardMode::kTurn;
  if (s == "dialogue") return RewardMode::kDialogue;
  throw ParseError("unknown reward mode '" + std::string(s) + "'");
}

namespace {

void check_range(const std::string& name, double v) {
  if (!std::isfinite(v) || v < -5.0 || v > 5.0) {
    throw ValidationError("reward '" + name + "' = " + std::to_string(v) + " outside [-5, 5]");
  }
}

json pair_json(const RewardPair& p) { return json::array({p.pos, p.neg}); }

RewardPair pair_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw ParseError("reward pair must be [pos, neg]");
  return {j[0].get<double>(), j[1].get<double>()};
}

double value_of(Firing f, const RewardPair& p) {
  switch (f) {
    case Firing::kPositive: return p.pos;
    case Firing::kNegative: return p.neg;
    case Firing::kNone: return 0.0;
  }
  return 0.0;
}

Firing judge(bool applicable, bool good) {
  if (!applicable) return Firing::kNone;
  return good ? Firing::kPositive : Firing::kNegative;
}

}  // namespace

void RewardConfig::validate() const {
  const std::pair<const char*, const RewardPair*> pairs[] = {
      {"ds.req", &ds.req}, {"ds.pro", &ds.pro}, {"ds.ans", &ds.ans},
      {"us.req", &us.req}, {"us.inf", &us.inf}, {"us.ans", &us.ans}};
  for (const auto& [name, p] : pairs) {
    check_range(std::string(name) + ".pos", p->pos);
    check_range(std::string(name) + ".neg", p->neg);
  }
  check_range("turn_penalty", turn_penalty);
  check_range("success_reward", success_reward);
  if (turn_penalty > 0.0) throw ValidationError("turn_penalty must be <= 0");
}

RewardConfig RewardConfig::rl_ds() {
  RewardConfig c;
  c.us = {{0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}};
  return c;
}

RewardConfig RewardConfig::rl_joint() { return RewardConfig{}; }

RewardConfig RewardConfig::dialogue_level() {
  RewardConfig c;
  c.mode = RewardMode::kDialogue;
  return c;
}

void to_json(json& j, const RewardConfig& c) {
  j = json{{"mode", std::string(to_string(c.mode))},
           {"turn_penalty", c.turn_penalty},
           {"success_reward", c.success_reward},
           {"ds", {{"req", pair_json(c.ds.req)}, {"pro", pair_json(c.ds.pro)}, {"ans", pair_json(c.ds.ans)}}},
           {"us", {{"req", pair_json(c.us.req)}, {"inf", pair_json(c.us.inf)}, {"ans", pair_json(c.us.ans)}}}};
}

void from_json(const json& j, RewardConfig& c) {
  if (j.contains("mode")) c.mode = parse_reward_mode(j["mode"].get<std::string>());
  c.turn_penalty = j.value("turn_penalty", c.turn_penalty);
  c.success_reward = j.value("success_reward", c.success_reward);
  if (j.contains("ds")) {
    const auto& d = j["ds"];
    if (d.contains("req")) c.ds.req = pair_from(d["req"]);
    if (d.contains("pro")) c.ds.pro = pair_from(d["pro"]);
    if (d.contains("ans")) c.ds.ans = pair_from(d["ans"]);
  }
  if (j.contains("us")) {
    const auto& u = j["us"];
    if (u.contains("req")) c.us.req = pair_from(u["req"]);
    if (u.contains("inf")) c.us.inf = pair_from(u["inf"]);
    if (u.contains("ans")) c.us.ans = pair_from(u["ans"]);
  }
  c.validate();
}

void RewardTracker::fill_history(TurnContext& ctx) const {
  ctx.ds_requested = ds_requested_;
  ctx.ds_provided = ds_provided_;
  ctx.last_offer = last_offer_;
  ctx.us_requested = us_requested_;
  ctx.us_informed = us_informed_;
}

void RewardTracker::observe(const TurnContext& ctx) {
  for (const auto& t : ctx.system_act.tokens)
    if (t.intent == Intent::kRequest && t.has_slot()) ds_requested_.insert(t.key());
  for (const auto& [domain, id] : ctx.offered) {
    if (id.empty()) continue;
    ds_provided_.insert(id);
    last_offer_[domain] = id;
  }
  for (const auto& t : ctx.user_act.tokens) {
    if (!t.has_slot()) continue;
    if (t.intent == Intent::kRequest) us_requested_.insert(t.key());
    if (t.intent == Intent::kInform) {
      auto it = ctx.user_informed.find(t.key());
      us_informed_.insert({t.key(), it == ctx.user_informed.end() ? std::string{} : it->second});
    }
  }
}

bool provision_due(const TurnContext& ctx, const KnowledgeBase&) {
  auto g = ctx.goal.domains.find(ctx.active_domain);
  if (g == ctx.goal.domains.end()) return false;
  for (const auto& [slot, _] : g->second.constraints)
    if (!ctx.belief.slots.count({ctx.active_domain, slot})) return false;
  if (ctx.match_result.count == 0) return false;
  for (const auto& id : ctx.match_result.entities)
    if (ctx.ds_provided.count(id)) return false;
  return true;
}

std::string reference_entity(const TurnContext& ctx, const std::string& domain) {
  if (auto it = ctx.offered.find(domain); it != ctx.offered.end() && !it->second.empty()) return it->second;
  if (auto it = ctx.last_offer.find(domain); it != ctx.last_offer.end()) return it->second;
  return {};
}

DsFirings ds_firings(const TurnContext& ctx, const KnowledgeBase& kb) {
  DsFirings f;

  bool any_request = false, repeated = false;
  for (const auto& t : ctx.system_act.tokens) {
    if (t.intent != Intent::kRequest || !t.has_slot()) continue;
    any_request = true;
    if (ctx.ds_requested.count(t.key())) repeated = true;
  }
  f.req = judge(any_request, !repeated);

  if (provision_due(ctx, kb)) {
    auto it = ctx.offered.find(ctx.active_domain);
    const bool ok = it != ctx.offered.end() && !it->second.empty() &&
                    std::find(ctx.match_result.entities.begin(), ctx.match_result.entities.end(), it->second) !=
                        ctx.match_result.entities.end();
    f.pro = judge(true, ok);
  }

  bool pending = false, all_correct = true;
  for (const auto& t : ctx.user_act.tokens) {
    if (t.intent != Intent::kRequest || !t.has_slot()) continue;
    pending = true;
    const ActToken answer{t.domain, Intent::kAnswer, t.slot};
    auto given = ctx.answers.find(t.key());
    const Entity* ref = kb.find_entity(reference_entity(ctx, t.domain));
    const std::string* truth = ref ? ref->attribute(t.slot) : nullptr;
    if (!ctx.system_act.contains(answer) || given == ctx.answers.end() || !truth || *truth != given->second) {
      all_correct = false;
    }
  }
  f.ans = judge(pending, all_correct);
  return f;
}

UsFirings us_firings(const TurnContext& ctx) {
  UsFirings f;

  bool any_inform = false, repeated_inform = false;
  bool any_request = false, repeated_request = false;
  for (const auto& t : ctx.user_act.tokens) {
    if (!t.has_slot()) continue;
    if (t.intent == Intent::kInform) {
      any_inform = true;
      auto it = ctx.user_informed.find(t.key());
      const std::string value = it == ctx.user_informed.end() ? std::string{} : it->second;
      if (ctx.us_informed.count({t.key(), value})) repeated_inform = true;
    } else if (t.intent == Intent::kRequest) {
      any_request = true;
      if (ctx.us_requested.count(t.key())) repeated_request = true;
    }
  }
  f.inf = judge(any_inform, !repeated_inform);
  f.req = judge(any_request, !repeated_request);

  bool pending = false, all_correct = true;
  for (const auto& t : ctx.prev_system_act.tokens) {
    if (t.intent != Intent::kRequest || !t.has_slot()) continue;
    pending = true;
    std::string expected{kDontCare};
    if (auto g = ctx.goal.domains.find(t.domain); g != ctx.goal.domains.end()) {
      if (auto c = g->second.constraints.find(t.slot); c != g->second.constraints.end()) expected = c->second;
    }
    auto given = ctx.user_informed.find(t.key());
    if (!ctx.user_act.contains({t.domain, Intent::kInform, t.slot}) || given == ctx.user_informed.end() ||
        given->second != expected) {
      all_correct = false;
    }
  }
  f.ans = judge(pending, all_correct);
  return f;
}

double ds_turn_reward(const TurnContext& ctx, const KnowledgeBase& kb, const RewardConfig& cfg) {
  const DsFirings f = ds_firings(ctx, kb);
  return value_of(f.req, cfg.ds.req) + value_of(f.pro, cfg.ds.pro) + value_of(f.ans, cfg.ds.ans);
}

double us_turn_reward(const TurnContext& ctx, const RewardConfig& cfg) {
  const UsFirings f = us_firings(ctx);
  return value_of(f.req, cfg.us.req) + value_of(f.inf, cfg.us.inf) + value_of(f.ans, cfg.us.ans);
}

std::vector<TurnRewards> dialogue_level_rewards(const DialogueLog& log, const RewardConfig& cfg) {
  std::vector<TurnRewards> out(log.turns.size(), TurnRewards{cfg.turn_penalty, cfg.turn_penalty});
  if (!out.empty() && log.outcome.success) {
    out.back().ds += cfg.success_reward;
    out.back().us += cfg.success_reward;
  }
  return out;
}

}  // namespace selfplay
