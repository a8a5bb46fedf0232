#include "selfplay/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "selfplay/world.hpp"

namespace selfplay {

using nlohmann::json;

DialogueOutcome compute_outcome(const DialogueLog& log, const KnowledgeBase& kb) {
  DialogueOutcome out;
  bool all_success = !log.goal.domains.empty();
  for (const auto& [domain, g] : log.goal.domains) {
    std::string last;
    for (const auto& turn : log.turns) {
      auto it = turn.offered.find(domain);
      if (it != turn.offered.end() && !it->second.empty()) last = it->second;
    }
    const Entity* e = kb.find_entity(last);
    bool informed = e != nullptr && e->domain == domain;
    if (informed) {
      for (const auto& [slot, value] : g.constraints) {
        if (value == kDontCare) continue;
        const std::string* actual = e->attribute(slot);
        if (!actual || *actual != value) informed = false;
      }
    }
    bool answered = informed;
    if (informed) {
      for (const auto& slot : g.requests) {
        const std::string* truth = e->attribute(slot);
        bool found = false;
        for (const auto& turn : log.turns) {
          auto a = turn.answers.find({domain, slot});
          if (a != turn.answers.end() && truth && a->second == *truth) found = true;
        }
        if (!found) answered = false;
      }
    }
    out.informed[domain] = informed;
    all_success = all_success && answered;
  }
  out.success = all_success;
  return out;
}

namespace {

bool all_informed(const DialogueOutcome& o) {
  if (o.informed.empty()) return false;
  return std::all_of(o.informed.begin(), o.informed.end(), [](const auto& kv) { return kv.second; });
}

}  // namespace

std::pair<double, double> task_metrics(std::span<const DialogueLog> logs, const KnowledgeBase& kb) {
  if (logs.empty()) return {0.0, 0.0};
  std::size_t informed = 0, success = 0;
  for (const auto& log : logs) {
    DialogueOutcome o = compute_outcome(log, kb);
    if (all_informed(o)) ++informed;
    if (o.success) ++success;
  }
  const double n = static_cast<double>(logs.size());
  return {informed / n, success / n};
}

double bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references) {
  if (hypotheses.size() != references.size()) {
    throw ContractError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses but " +
                        std::to_string(references.size()) + " references");
  }
  constexpr int kOrder = 4;
  std::array<double, kOrder> matches{}, totals{};
  double hyp_len = 0.0, ref_len = 0.0;
  for (std::size_t k = 0; k < hypotheses.size(); ++k) {
    const Tokens& h = hypotheses[k];
    const Tokens& r = references[k];
    hyp_len += static_cast<double>(h.size());
    ref_len += static_cast<double>(r.size());
    for (int n = 1; n <= kOrder; ++n) {
      if (h.size() < static_cast<std::size_t>(n)) continue;
      std::map<std::vector<std::string>, int> ref_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[{r.begin() + i, r.begin() + i + n}];
      std::map<std::vector<std::string>, int> hyp_counts;
      for (std::size_t i = 0; i + n <= h.size(); ++i) ++hyp_counts[{h.begin() + i, h.begin() + i + n}];
      for (const auto& [gram, count] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += std::min(count, it->second);
      }
      totals[n - 1] += static_cast<double>(h.size() - n + 1);
    }
  }
  if (hyp_len == 0.0 || matches[0] == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < kOrder; ++n) {
    const double p = matches[n] > 0.0 ? matches[n] / totals[n] : 1.0 / (totals[n] + 1.0);
    log_sum += std::log(p) / kOrder;
  }
  const double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return bp * std::exp(log_sum);
}

double combined(double inform, double success, double bleu_score) { return 0.5 * (inform + success) + bleu_score; }

std::vector<UserGoal> goals_per_turn(const DialogueLog& log) {
  std::vector<UserGoal> out;
  UserGoal goal = log.initial_goal.domains.empty() ? log.goal : log.initial_goal;
  for (const auto& turn : log.turns) {
    for (const auto& key : turn.goal_relaxed) {
      auto g = goal.domains.find(key.first);
      if (g != goal.domains.end()) g->second.constraints[key.second] = std::string(kDontCare);
    }
    out.push_back(goal);
  }
  return out;
}

std::vector<TurnContext> turn_contexts(const DialogueLog& log, const KnowledgeBase& kb) {
  std::vector<TurnContext> out;
  const auto goals = goals_per_turn(log);
  RewardTracker tracker;
  for (std::size_t t = 0; t < log.turns.size(); ++t) {
    const Turn& turn = log.turns[t];
    TurnContext ctx;
    ctx.user_act = turn.user_act;
    ctx.system_act = turn.system_act;
    if (t > 0) ctx.prev_system_act = log.turns[t - 1].system_act;
    ctx.belief = turn.belief;
    ctx.active_domain = turn.active_domain;
    ctx.match_result = query_belief(kb, turn.belief, turn.active_domain);
    ctx.goal = goals[t];
    ctx.user_informed = turn.user_informed;
    ctx.offered = turn.offered;
    ctx.answers = turn.answers;
    tracker.fill_history(ctx);
    tracker.observe(ctx);
    out.push_back(std::move(ctx));
  }
  return out;
}

ErrorReport error_analysis(std::span<const DialogueLog> logs, const KnowledgeBase& kb) {
  ErrorReport r;
  for (const auto& log : logs) {
    const auto ctxs = turn_contexts(log, kb);

    bool any_due = false, missed = false;
    for (std::size_t t = 0; t < ctxs.size(); ++t) {
      if (!provision_due(ctxs[t], kb)) continue;
      any_due = true;
      const std::string& d = ctxs[t].active_domain;
      bool offered_later = false;
      for (std::size_t u = t; u < ctxs.size() && !offered_later; ++u) {
        auto it = ctxs[u].offered.find(d);
        offered_later = it != ctxs[u].offered.end() && !it->second.empty();
      }
      if (!offered_later) missed = true;
    }
    if (any_due) {
      ++r.miss_ent.denominator;
      if (missed) ++r.miss_ent.numerator;
    }

    for (std::size_t t = 0; t < ctxs.size(); ++t) {
      const TurnContext& c = ctxs[t];
      for (const auto& tok : c.user_act.tokens) {
        if (!tok.has_slot()) continue;
        if (tok.intent == Intent::kRequest) {
          ++r.wrong_ans.denominator;
          const Entity* ref = kb.find_entity(reference_entity(c, tok.domain));
          const std::string* truth = ref ? ref->attribute(tok.slot) : nullptr;
          auto given = c.answers.find(tok.key());
          const bool correct = c.system_act.contains({tok.domain, Intent::kAnswer, tok.slot}) &&
                               given != c.answers.end() && truth && *truth == given->second;
          if (!correct) ++r.wrong_ans.numerator;

          ++r.rep_att.denominator;
          if (c.us_requested.count(tok.key())) ++r.rep_att.numerator;
        } else if (tok.intent == Intent::kInform) {
          ++r.rep_att.denominator;
          auto v = c.user_informed.find(tok.key());
          const std::string value = v == c.user_informed.end() ? std::string{} : v->second;
          if (c.us_informed.count({tok.key(), value})) ++r.rep_att.numerator;
        }
      }
      for (const auto& tok : c.system_act.tokens) {
        if (tok.intent != Intent::kRequest || !tok.has_slot()) continue;
        ++r.miss_ans.denominator;
        bool answered = false;
        for (std::size_t u = t + 1; u < ctxs.size() && !answered; ++u)
          answered = ctxs[u].user_act.contains({tok.domain, Intent::kInform, tok.slot});
        if (!answered) ++r.miss_ans.numerator;
      }
    }
  }
  return r;
}

ExplorationReport exploration_stats(std::span<const DialogueLog> logs, const Ontology& ontology) {
  std::map<std::vector<int>, std::pair<std::set<std::string>, std::set<std::string>>> states;
  ExplorationReport r;
  auto key_of = [](const DialogueAct& a) {
    std::string s;
    for (const auto& t : a.tokens) s += t.str() + " ";
    return s;
  };
  for (const auto& log : logs) {
    for (const auto& turn : log.turns) {
      ++r.turns;
      auto& entry = states[summarize_belief(turn.belief, ontology).bits];
      entry.first.insert(key_of(turn.system_act));
      entry.second.insert(key_of(turn.user_act));
    }
  }
  r.unique_states = states.size();
  if (!states.empty()) {
    double ds = 0.0, us = 0.0;
    for (const auto& [_, acts] : states) {
      ds += static_cast<double>(acts.first.size());
      us += static_cast<double>(acts.second.size());
    }
    r.ds_avg_actions_per_state = ds / static_cast<double>(states.size());
    r.us_avg_actions_per_state = us / static_cast<double>(states.size());
  }
  return r;
}

DialogueLog annotated_to_log(const AnnotatedDialogue& d, const KnowledgeBase& kb) {
  DialogueLog log;
  log.id = d.id;
  log.initial_goal = d.goal;
  std::string domain;
  for (std::size_t t = 0; t < d.turns.size(); ++t) {
    const AnnotatedTurn& at = d.turns[t];
    Turn turn;
    turn.index = static_cast<int>(t);
    turn.user_utterance_delex = at.user_utterance;
    turn.system_utterance_delex = at.system_utterance;
    turn.user_utterance = lexicalize_user_turn(kb, d, t);
    turn.system_utterance = lexicalize_system_turn(kb, d, t);
    turn.user_act = at.user_act;
    turn.system_act = at.system_act;
    turn.belief = at.belief;
    if (auto ud = at.user_act.last_domain(); !ud.empty()) domain = ud;
    turn.active_domain = domain;
    turn.match_result = query_belief(kb, at.belief, domain);
    SystemEffects fx = system_effects(kb, at.belief, at.system_act);
    turn.offered = fx.offered;
    turn.answers = fx.answers;
    for (const auto& tok : at.user_act.tokens) {
      if (tok.intent != Intent::kInform || !tok.has_slot()) continue;
      auto it = at.belief.slots.find(tok.key());
      turn.user_informed[tok.key()] = it == at.belief.slots.end() ? std::string(kDontCare) : it->second;
    }
    turn.goal_relaxed = at.goal_relaxed;
    log.turns.push_back(std::move(turn));
  }
  log.goal = goal_at_turn(d, d.turns.empty() ? 0 : d.turns.size() - 1);
  log.outcome = compute_outcome(log, kb);
  return log;
}

std::vector<DialogueLog> corpus_eval_logs(const JointModel& model, std::span<const AnnotatedDialogue> test,
                                          BeliefMode mode, std::vector<Tokens>* hypotheses,
                                          std::vector<Tokens>* references) {
  const KnowledgeBase& kb = model.kb();
  std::vector<DialogueLog> logs;
  for (const auto& d : test) {
    DialogueLog log;
    log.id = d.id;
    log.initial_goal = d.goal;
    ContextState ctx = ContextState::zeros(model.config().hidden);
    BeliefState belief;
    std::string ds_domain, user_domain;
    Tokens heard;
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      const AnnotatedTurn& at = d.turns[t];
      ctx = listen_user(model, ctx, heard);
      const Tokens user = lexicalize_user_turn(kb, d, t);
      const std::uint64_t seed = derive_seed(stable_hash(d.id), t, 3);
      DsTurnOutput out = ds_turn(model, ctx, user, belief, ds_domain, DecodeMode::kGreedy, seed, mode, &at.belief);
      ctx = out.context;
      belief = out.belief;
      ds_domain = out.domain;
      if (auto ud = at.user_act.last_domain(); !ud.empty()) user_domain = ud;

      Turn turn;
      turn.index = static_cast<int>(t);
      turn.user_utterance = user;
      turn.user_utterance_delex = at.user_utterance;
      turn.user_act = at.user_act;
      turn.system_act = out.act;
      turn.system_utterance = out.utterance;
      turn.system_utterance_delex = out.utterance_delex;
      turn.system_act_logprobs = out.act_logprobs;
      turn.belief = out.belief;
      turn.match_result = out.match;
      turn.active_domain = user_domain;
      SystemEffects fx = system_effects(kb, out.belief, out.act);
      turn.offered = fx.offered;
      turn.answers = fx.answers;
      turn.goal_relaxed = at.goal_relaxed;
      turn.diagnostics = out.diagnostics;
      for (const auto& tok : at.user_act.tokens) {
        if (tok.intent != Intent::kInform || !tok.has_slot()) continue;
        auto it = at.belief.slots.find(tok.key());
        turn.user_informed[tok.key()] = it == at.belief.slots.end() ? std::string(kDontCare) : it->second;
      }
      log.turns.push_back(std::move(turn));

      if (hypotheses) hypotheses->push_back(out.utterance_delex);
      if (references) references->push_back(at.system_utterance);
      heard = lexicalize_system_turn(kb, d, t);
    }
    log.goal = goal_at_turn(d, d.turns.empty() ? 0 : d.turns.size() - 1);
    log.outcome = compute_outcome(log, kb);
    logs.push_back(std::move(log));
  }
  return logs;
}

MetricsReport corpus_eval(const JointModel& model, std::span<const AnnotatedDialogue> test, BeliefMode mode) {
  std::vector<Tokens> hyps, refs;
  const auto logs = corpus_eval_logs(model, test, mode, &hyps, &refs);
  MetricsReport r = selfplay_metrics(logs, model.kb());
  r.bleu = bleu(hyps, refs);
  r.bleu_pairs = hyps.size();
  r.combined = combined(100.0 * r.inform, 100.0 * r.success, 100.0 * r.bleu);
  return r;
}

MetricsReport selfplay_metrics(std::span<const DialogueLog> logs, const KnowledgeBase& kb) {
  MetricsReport r;
  r.dialogues = logs.size();
  for (const auto& log : logs) {
    DialogueOutcome o = compute_outcome(log, kb);
    if (all_informed(o)) ++r.informed;
    if (o.success) ++r.successful;
  }
  if (r.dialogues > 0) {
    r.inform = static_cast<double>(r.informed) / static_cast<double>(r.dialogues);
    r.success = static_cast<double>(r.successful) / static_cast<double>(r.dialogues);
  }
  r.combined = combined(100.0 * r.inform, 100.0 * r.success, 100.0 * r.bleu);
  return r;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("spearman: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) return 0.0;
  auto ranks = [n](std::span<const double> v) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

json to_json(const MetricsReport& r) {
  return json{{"inform", r.inform},         {"success", r.success},     {"bleu", r.bleu},
              {"combined", r.combined},     {"dialogues", r.dialogues}, {"informed", r.informed},
              {"successful", r.successful}, {"bleu_pairs", r.bleu_pairs}};
}

namespace {

json rate_json(const Rate& r) {
  return json{{"rate", r.value()}, {"numerator", r.numerator}, {"denominator", r.denominator}};
}

}  // namespace

json to_json(const ErrorReport& r) {
  return json{{"ds", {{"miss_ent", rate_json(r.miss_ent)}, {"wrong_ans", rate_json(r.wrong_ans)}}},
              {"us", {{"rep_att", rate_json(r.rep_att)}, {"miss_ans", rate_json(r.miss_ans)}}}};
}

json to_json(const ExplorationReport& r) {
  return json{{"unique_states", r.unique_states},
              {"turns", r.turns},
              {"ds_avg_actions_per_state", r.ds_avg_actions_per_state},
              {"us_avg_actions_per_state", r.us_avg_actions_per_state}};
}

std::string outcomes_csv(std::span<const DialogueLog> logs) {
  std::ostringstream os;
  os << "id,turns,informed,success\n";
  for (const auto& log : logs) {
    bool informed = all_informed(log.outcome);
    os << log.id << ',' << log.turns.size() << ',' << (informed ? 1 : 0) << ',' << (log.outcome.success ? 1 : 0)
       << '\n';
  }
  return os.str();
}

}  // namespace selfplay
