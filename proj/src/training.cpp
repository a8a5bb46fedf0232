#include "selfplay/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "selfplay/world.hpp"

namespace selfplay {

using nlohmann::json;

std::string_view to_string(RlTarget t) { return t == RlTarget::kDs ? "ds" : "joint"; }

RlTarget parse_rl_target(std::string_view s) {
  if (s == "ds") return RlTarget::kDs;
  if (s == "joint") return RlTarget::kJoint;
  throw ValidationError("unknown RL target '" + std::string(s) + "' (expected ds or joint)");
}

std::string_view to_string(FinetuneMode m) { return m == FinetuneMode::kNaive ? "naive" : "ewc"; }

FinetuneMode parse_finetune_mode(std::string_view s) {
  if (s == "naive") return FinetuneMode::kNaive;
  if (s == "ewc") return FinetuneMode::kEwc;
  throw ValidationError("unknown finetune mode '" + std::string(s) + "' (expected naive or ewc)");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"sl",
            {{"lr", c.sl.lr},
             {"batch", c.sl.batch},
             {"patience", c.sl.patience},
             {"max_epochs", c.sl.max_epochs},
             {"dev_goals", c.sl.dev_goals}}},
           {"rl",
            {{"lr", c.rl.lr},
             {"batch", c.rl.batch},
             {"epochs", c.rl.epochs},
             {"gamma", c.rl.gamma},
             {"target", std::string(to_string(c.rl.target))},
             {"reward", c.rl.reward}}},
           {"ewc", {{"lambda", c.ewc.lambda}, {"fisher_batch", c.ewc.fisher_batch}}},
           {"max_turns", c.max_turns},
           {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  if (j.contains("sl")) {
    const json& s = j.at("sl");
    c.sl.lr = s.value("lr", c.sl.lr);
    c.sl.batch = s.value("batch", c.sl.batch);
    c.sl.patience = s.value("patience", c.sl.patience);
    c.sl.max_epochs = s.value("max_epochs", c.sl.max_epochs);
    c.sl.dev_goals = s.value("dev_goals", c.sl.dev_goals);
  }
  if (j.contains("rl")) {
    const json& r = j.at("rl");
    c.rl.lr = r.value("lr", c.rl.lr);
    c.rl.batch = r.value("batch", c.rl.batch);
    c.rl.epochs = r.value("epochs", c.rl.epochs);
    c.rl.gamma = r.value("gamma", c.rl.gamma);
    if (r.contains("target")) c.rl.target = parse_rl_target(r.at("target").get<std::string>());
    if (r.contains("reward")) c.rl.reward = r.at("reward").get<RewardConfig>();
  }
  if (j.contains("ewc")) {
    c.ewc.lambda = j.at("ewc").value("lambda", c.ewc.lambda);
    c.ewc.fisher_batch = j.at("ewc").value("fisher_batch", c.ewc.fisher_batch);
  }
  c.max_turns = j.value("max_turns", c.max_turns);
  c.seed = j.value("seed", c.seed);

  if (!(c.sl.lr > 0.0) || !(c.rl.lr > 0.0)) throw ValidationError("learning rates must be positive");
  if (c.sl.batch == 0 || c.rl.batch == 0 || c.ewc.fisher_batch == 0) throw ValidationError("batch sizes must be positive");
  if (!(c.rl.gamma >= 0.0 && c.rl.gamma <= 1.0)) throw ValidationError("gamma must lie in [0, 1]");
  if (!(c.ewc.lambda >= 0.0)) throw ValidationError("ewc lambda must be non-negative");
  if (c.max_turns == 0) throw ValidationError("max_turns must be positive");
  c.rl.reward.validate();
}

std::vector<double> return_schedule(double reward, std::size_t length, double gamma) {
  std::vector<double> out(length);
  for (std::size_t i = 1; i <= length; ++i) {
    double g = 1.0;
    for (std::size_t k = 0; k < length - i; ++k) g *= gamma;
    out[i - 1] = g * reward;
  }
  return out;
}

json to_json(const LossBatch& b) {
  return json{{"l_dst", b.l_dst},       {"l_pol_ds", b.l_pol_ds}, {"l_nlg_ds", b.l_nlg_ds}, {"l_pol_us", b.l_pol_us},
              {"l_nlg_us", b.l_nlg_us}, {"ds", b.ds()},           {"us", b.us()},           {"total", b.total()},
              {"dialogues", b.dialogues}};
}

std::vector<GoalState> corpus_goal_states(const AnnotatedDialogue& d, const Ontology& ontology) {
  std::vector<GoalState> out;
  GoalState state = init_goal_state(d.goal, ontology);
  for (const auto& turn : d.turns) {
    for (const auto& key : turn.goal_relaxed)
      if (auto i = ontology.index_of(key)) state.bits[*i] = 1;
    out.push_back(state);
    state = update_goal_state(state, turn.user_act, ontology);
  }
  return out;
}

std::vector<SlotValue> dst_targets(const AnnotatedTurn& turn, const Ontology& ontology) {
  std::map<std::size_t, SlotValue> ordered;
  for (const auto& tok : turn.user_act.tokens) {
    if (tok.intent != Intent::kInform || !tok.has_slot()) continue;
    auto i = ontology.index_of(tok.key());
    if (!i) continue;
    auto it = turn.belief.slots.find(tok.key());
    ordered[*i] = {tok.key(), it == turn.belief.slots.end() ? std::string(kDontCare) : it->second};
  }
  std::vector<SlotValue> out;
  for (auto& [_, sv] : ordered) out.push_back(std::move(sv));
  return out;
}

std::vector<ReplayTurn> prepare_replay(const JointModel& m, const AnnotatedDialogue& d) {
  try {
    const KnowledgeBase& kb = m.kb();
    const auto goal_states = corpus_goal_states(d, m.ontology());
    std::vector<ReplayTurn> out;
    std::string domain;
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      const AnnotatedTurn& at = d.turns[t];
      ReplayTurn r;
      r.user_utterance = lexicalize_user_turn(kb, d, t);
      r.system_utterance = lexicalize_system_turn(kb, d, t);
      r.user_act_ids = act_ids(m, at.user_act);
      r.system_act_ids = act_ids(m, at.system_act);
      r.user_word_ids = m.words().encode(at.user_utterance);
      r.user_word_ids.push_back(Vocab::kEos);
      r.system_word_ids = m.words().encode(at.system_utterance);
      r.system_word_ids.push_back(Vocab::kEos);
      r.dst_targets = dst_targets(at, m.ontology());
      dst_target_ids(m, r.dst_targets);
      domain = ds_active_domain(r.dst_targets, domain);
      r.belief = at.belief;
      r.match = domain.empty() ? MatchResult{} : query_belief(kb, at.belief, domain);
      r.goal_state = goal_states[t];
      out.push_back(std::move(r));
    }
    return out;
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError("dialogue " + d.id + ": " + e.what());
  }
}

namespace {

LossBatch losses_of(const JointModel& m, const std::vector<const std::vector<ReplayTurn>*>& batch, Gradients* grads) {
  LossBatch out;
  out.dialogues = batch.size();
  if (grads && grads->size() == 0) *grads = Gradients(m.params());
  for (const auto* turns : batch) {
    Tape tape(&m.params(), grads != nullptr);
    ReplayTerms terms = replay_dialogue(tape, m, *turns);
    out.l_dst += terms.l_dst.item();
    out.l_pol_ds += terms.l_pol_ds.item();
    out.l_nlg_ds += terms.l_nlg_ds.item();
    out.l_pol_us += terms.l_pol_us.item();
    out.l_nlg_us += terms.l_nlg_us.item();
    if (grads) {
      const Tensor parts[] = {terms.l_dst, terms.l_pol_ds, terms.l_nlg_ds, terms.l_pol_us, terms.l_nlg_us};
      Tensor loss = scale(sum(parts), 1.0 / static_cast<double>(batch.size()));
      tape.backward(loss, *grads);
    }
  }
  return out;
}

void add_loss(LossBatch& acc, const LossBatch& b) {
  acc.l_dst += b.l_dst;
  acc.l_pol_ds += b.l_pol_ds;
  acc.l_nlg_ds += b.l_nlg_ds;
  acc.l_pol_us += b.l_pol_us;
  acc.l_nlg_us += b.l_nlg_us;
  acc.dialogues += b.dialogues;
}

void reset_optimizer(ParamStore& params) {
  for (ParamId id = 0; id < params.size(); ++id) {
    Param& p = params[id];
    std::fill(p.adam_m.begin(), p.adam_m.end(), 0.0);
    std::fill(p.adam_v.begin(), p.adam_v.end(), 0.0);
    p.adam_step = 0;
  }
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  return order;
}

}  // namespace

LossBatch sl_losses(const JointModel& m, std::span<const std::vector<ReplayTurn>> batch, Gradients* grads) {
  std::vector<const std::vector<ReplayTurn>*> ptrs;
  for (const auto& d : batch) ptrs.push_back(&d);
  return losses_of(m, ptrs, grads);
}

LossBatch sl_losses(const JointModel& m, std::span<const AnnotatedDialogue> batch, Gradients* grads) {
  std::vector<std::vector<ReplayTurn>> prepared;
  for (const auto& d : batch) prepared.push_back(prepare_replay(m, d));
  return sl_losses(m, std::span<const std::vector<ReplayTurn>>(prepared), grads);
}

FisherDiag fisher_estimate(const JointModel& m, std::span<const AnnotatedDialogue> corpus, const EwcConfig& cfg) {
  if (corpus.empty()) throw DataError("fisher_estimate: empty corpus");
  if (cfg.fisher_batch == 0) throw ContractError("fisher_estimate: batch size must be positive");
  FisherDiag f;
  f.anchor = snapshot(m.params());
  for (const auto& a : f.anchor) f.fisher.emplace_back(a.size(), 0.0);
  std::vector<std::vector<ReplayTurn>> prepared;
  for (const auto& d : corpus) prepared.push_back(prepare_replay(m, d));
  std::size_t batches = 0;
  for (std::size_t start = 0; start < prepared.size(); start += cfg.fisher_batch) {
    const std::size_t n = std::min(cfg.fisher_batch, prepared.size() - start);
    Gradients g(m.params());
    sl_losses(m, std::span<const std::vector<ReplayTurn>>(prepared).subspan(start, n), &g);
    for (ParamId id = 0; id < g.size(); ++id) {
      if (!g.touched(id)) continue;
      const auto& gi = g.at(id);
      for (std::size_t k = 0; k < gi.size(); ++k) f.fisher[id][k] += gi[k] * gi[k];
    }
    ++batches;
  }
  for (auto& v : f.fisher)
    for (double& x : v) x /= static_cast<double>(batches);
  return f;
}

namespace {

void check_fisher(const ParamStore& params, const FisherDiag& f) {
  if (f.fisher.size() != params.size() || f.anchor.size() != params.size())
    throw ContractError("ewc: Fisher has " + std::to_string(f.fisher.size()) + " arrays, model has " +
                        std::to_string(params.size()));
  for (ParamId id = 0; id < params.size(); ++id) {
    if (f.fisher[id].size() != params[id].value.size() || f.anchor[id].size() != params[id].value.size())
      throw ContractError("ewc: shape mismatch for '" + params[id].name + "'");
  }
}

}  // namespace

double ewc_penalty(const ParamStore& params, const FisherDiag& f, double lambda) {
  check_fisher(params, f);
  double total = 0.0;
  for (ParamId id = 0; id < params.size(); ++id) {
    const auto& v = params[id].value;
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double d = v[k] - f.anchor[id][k];
      total += f.fisher[id][k] * d * d;
    }
  }
  return 0.5 * lambda * total;
}

void ewc_gradient(const ParamStore& params, const FisherDiag& f, double lambda, Gradients& grads) {
  check_fisher(params, f);
  if (grads.size() == 0) grads = Gradients(params);
  std::vector<double> g;
  for (ParamId id = 0; id < params.size(); ++id) {
    const auto& v = params[id].value;
    g.assign(v.size(), 0.0);
    for (std::size_t k = 0; k < v.size(); ++k) g[k] = lambda * f.fisher[id][k] * (v[k] - f.anchor[id][k]);
    grads.accumulate(id, g);
  }
}

json to_json(const SlReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) epochs.push_back({{"epoch", e.epoch}, {"loss", to_json(e.loss)}, {"dev_success", e.dev_success}});
  return json{{"epochs", epochs},
              {"best_epoch", r.best_epoch},
              {"best_dev_success", r.best_dev_success},
              {"stopped_early", r.stopped_early}};
}

std::vector<UserGoal> goals_of(std::span<const AnnotatedDialogue> dialogues) {
  std::vector<UserGoal> out;
  for (const auto& d : dialogues) out.push_back(d.goal);
  return out;
}

std::vector<std::vector<double>> snapshot(const ParamStore& params) {
  std::vector<std::vector<double>> out;
  for (const auto& p : params) out.push_back(p.value);
  return out;
}

void restore(ParamStore& params, const std::vector<std::vector<double>>& values) {
  if (values.size() != params.size()) throw ContractError("restore: parameter count mismatch");
  for (ParamId id = 0; id < params.size(); ++id) {
    if (values[id].size() != params[id].value.size())
      throw ContractError("restore: shape mismatch for '" + params[id].name + "'");
    params[id].value = values[id];
  }
}

SlReport sl_train(JointModel& m, std::span<const AnnotatedDialogue> train, std::span<const AnnotatedDialogue> dev,
                  const TrainConfig& cfg, const SlOptions& options) {
  if (train.empty()) throw DataError("sl_train: empty training corpus");
  if (options.ewc) check_fisher(m.params(), *options.ewc);
  std::vector<std::vector<ReplayTurn>> prepared;
  prepared.reserve(train.size());
  for (const auto& d : train) prepared.push_back(prepare_replay(m, d));
  std::vector<UserGoal> dev_goals = goals_of(dev);
  if (cfg.sl.dev_goals > 0 && dev_goals.size() > cfg.sl.dev_goals) dev_goals.resize(cfg.sl.dev_goals);

  SlReport report;
  auto best = snapshot(m.params());
  std::size_t since_best = 0;
  const AdamConfig adam{cfg.sl.lr};
  for (std::size_t epoch = 1; epoch <= cfg.sl.max_epochs; ++epoch) {
    SlEpoch rec;
    rec.epoch = epoch;
    const auto order = shuffled(prepared.size(), derive_seed(cfg.seed, epoch, 101));
    for (std::size_t start = 0; start < order.size(); start += cfg.sl.batch) {
      std::vector<const std::vector<ReplayTurn>*> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.sl.batch); ++k)
        batch.push_back(&prepared[order[k]]);
      Gradients grads(m.params());
      add_loss(rec.loss, losses_of(m, batch, &grads));
      if (options.ewc) ewc_gradient(m.params(), *options.ewc, options.ewc_lambda, grads);
      adam_update(m.params(), grads, adam);
    }
    rec.dev_success = dev_goals.empty() ? 0.0 : selfplay_success(m, dev_goals, cfg.max_turns);
    report.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);

    if (epoch == 1 || rec.dev_success > report.best_dev_success) {
      report.best_epoch = epoch;
      report.best_dev_success = rec.dev_success;
      best = snapshot(m.params());
      since_best = 0;
    } else if (++since_best >= cfg.sl.patience) {
      report.stopped_early = true;
      break;
    }
  }
  restore(m.params(), best);
  return report;
}

Episode rollout(const JointModel& m, const UserGoal& initial_goal, std::uint64_t seed, const RolloutOptions& options) {
  const KnowledgeBase& kb = m.kb();
  Episode ep;
  DialogueLog& log = ep.log;
  log.initial_goal = initial_goal;
  UserGoal goal = initial_goal;
  GoalState goal_state = init_goal_state(goal, m.ontology());
  ContextState ctx = ContextState::zeros(m.config().hidden);
  BeliefState belief;
  Tokens heard;
  std::string ds_domain, user_domain;
  std::vector<SlotKey> pending;

  for (std::size_t t = 0; t < options.max_turns; ++t) {
    for (const auto& key : pending)
      if (auto i = m.ontology().index_of(key)) goal_state.bits[*i] = 1;

    UsTurnOutput us = us_turn(m, ctx, heard, goal, goal_state, options.mode, derive_seed(seed, t, 1));
    DsTurnOutput ds = ds_turn(m, us.context, us.utterance, belief, ds_domain, options.mode, derive_seed(seed, t, 2));
    if (auto d = us.act.last_domain(); !d.empty()) user_domain = d;

    Turn turn;
    turn.index = static_cast<int>(t);
    turn.user_utterance = us.utterance;
    turn.user_utterance_delex = us.utterance_delex;
    turn.system_utterance = ds.utterance;
    turn.system_utterance_delex = ds.utterance_delex;
    turn.user_act = us.act;
    turn.system_act = ds.act;
    turn.belief = ds.belief;
    turn.goal_state_snapshot = goal_state;
    turn.match_result = ds.match;
    turn.active_domain = user_domain;
    turn.user_act_logprobs = us.act_logprobs;
    turn.system_act_logprobs = ds.act_logprobs;
    SystemEffects fx = system_effects(kb, ds.belief, ds.act);
    turn.offered = std::move(fx.offered);
    turn.answers = std::move(fx.answers);
    turn.user_informed = us.informed;
    turn.goal_relaxed = pending;
    turn.diagnostics = us.diagnostics;
    turn.diagnostics.system_act_truncated = ds.diagnostics.system_act_truncated;
    turn.diagnostics.system_utterance_truncated = ds.diagnostics.system_utterance_truncated;
    turn.diagnostics.dst_skipped = ds.diagnostics.dst_skipped;

    ReplayTurn r;
    r.user_utterance = us.utterance;
    r.system_utterance = ds.utterance;
    r.user_act_ids = us.act_ids;
    r.system_act_ids = ds.act_ids;
    r.belief = ds.belief;
    r.match = ds.match;
    r.goal_state = goal_state;
    ep.replay.push_back(std::move(r));
    log.turns.push_back(std::move(turn));

    ctx = ds.context;
    belief = ds.belief;
    ds_domain = ds.domain;
    heard = ds.utterance;
    goal_state = us.goal_state;
    pending.clear();
    if (us.act.terminal()) break;
    if (!user_domain.empty()) {
      if (auto k = relax_goal(kb, belief, user_domain, goal)) pending.push_back(*k);
    }
  }

  log.goal = goal;
  log.outcome = compute_outcome(log, kb);
  if (options.reward.mode == RewardMode::kTurn) {
    const auto contexts = turn_contexts(log, kb);
    for (std::size_t t = 0; t < contexts.size(); ++t) {
      log.turns[t].rewards.ds = ds_turn_reward(contexts[t], kb, options.reward);
      log.turns[t].rewards.us = us_turn_reward(contexts[t], options.reward);
    }
  } else {
    const auto rewards = dialogue_level_rewards(log, options.reward);
    for (std::size_t t = 0; t < rewards.size(); ++t) log.turns[t].rewards = rewards[t];
  }
  return ep;
}

std::vector<DialogueLog> run_selfplay(const JointModel& m, std::span<const UserGoal> goals, std::uint64_t seed,
                                      const RolloutOptions& options) {
  std::vector<DialogueLog> out;
  out.reserve(goals.size());
  for (std::size_t i = 0; i < goals.size(); ++i) {
    DialogueLog log = rollout(m, goals[i], derive_seed(seed, i, 5), options).log;
    log.id = "selfplay_" + std::to_string(i);
    out.push_back(std::move(log));
  }
  return out;
}

double selfplay_success(const JointModel& m, std::span<const UserGoal> goals, std::size_t max_turns) {
  if (goals.empty()) return 0.0;
  RolloutOptions opts;
  opts.mode = DecodeMode::kGreedy;
  opts.max_turns = max_turns;
  const auto logs = run_selfplay(m, goals, 0, opts);
  std::size_t ok = 0;
  for (const auto& log : logs) ok += log.outcome.success ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(goals.size());
}

bool rl_selects(const Param& p, RlTarget target) {
  if (in_section(p, "ctx")) return true;
  if (in_section(p, "ds")) return !in_section(p, "ds.dst");
  return target == RlTarget::kJoint && in_section(p, "us");
}

double reinforce_gradients(const JointModel& m, std::span<const Episode> batch, const RlConfig& cfg,
                           Gradients& grads) {
  if (grads.size() == 0) grads = Gradients(m.params());
  const bool joint = cfg.target == RlTarget::kJoint;
  double total = 0.0;
  for (const auto& ep : batch) {
    if (ep.replay.size() != ep.log.turns.size()) throw ContractError("reinforce: episode without replay data");
    for (std::size_t t = 0; t < ep.replay.size(); ++t) {
      const Turn& turn = ep.log.turns[t];
      if (turn.system_act_logprobs.size() != ep.replay[t].system_act_ids.size() ||
          (joint && turn.user_act_logprobs.size() != ep.replay[t].user_act_ids.size()))
        throw ContractError("reinforce: log " + ep.log.id + " turn " + std::to_string(t) + " lacks act logprobs");
    }
    bool any = false;
    for (const auto& turn : ep.log.turns) any = any || turn.rewards.ds != 0.0 || (joint && turn.rewards.us != 0.0);
    if (!any) continue;

    Tape tape(&m.params());
    ReplayOptions opts;
    opts.dst = false;
    opts.ds_nlg = false;
    opts.us_nlg = false;
    opts.us_policy = joint;
    ReplayTerms terms = replay_dialogue(tape, m, ep.replay, opts);
    std::vector<Tensor> parts;
    auto add_terms = [&](const std::vector<Tensor>& nll, double reward) {
      if (reward == 0.0) return;
      const auto schedule = return_schedule(reward, nll.size(), cfg.gamma);
      for (std::size_t i = 0; i < nll.size(); ++i) parts.push_back(scale(nll[i], schedule[i]));
    };
    for (std::size_t t = 0; t < ep.replay.size(); ++t) {
      add_terms(terms.ds_act_nll[t], ep.log.turns[t].rewards.ds);
      if (joint) add_terms(terms.us_act_nll[t], ep.log.turns[t].rewards.us);
    }
    if (parts.empty()) continue;
    Tensor loss = sum(parts);
    total += loss.item();
    tape.backward(scale(loss, 1.0 / static_cast<double>(batch.size())), grads);
  }
  return total;
}

void reinforce_update(JointModel& m, std::span<const Episode> batch, const RlConfig& cfg) {
  Gradients grads(m.params());
  reinforce_gradients(m, batch, cfg, grads);
  if (grads.squared_norm() == 0.0) return;
  adam_update(m.params(), grads, AdamConfig{cfg.lr}, [&](const Param& p) { return rl_selects(p, cfg.target); });
}

json to_json(const RlReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"mean_turn_reward", e.mean_turn_reward},
                      {"mean_ds_reward", e.mean_ds_reward},
                      {"mean_us_reward", e.mean_us_reward},
                      {"train_success", e.train_success},
                      {"dev_success", e.dev_success}});
  }
  return json{{"epochs", epochs}};
}

std::string rl_epochs_csv(const RlReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,mean_turn_reward,mean_ds_reward,mean_us_reward,train_success,dev_success\n";
  for (const auto& e : r.epochs) {
    os << e.epoch << ',' << e.mean_turn_reward << ',' << e.mean_ds_reward << ',' << e.mean_us_reward << ','
       << e.train_success << ',' << e.dev_success << '\n';
  }
  return os.str();
}

RlReport rl_train(JointModel& m, std::span<const UserGoal> train_goals, std::span<const UserGoal> dev_goals,
                  const TrainConfig& cfg, const RlOptions& options) {
  if (train_goals.empty()) throw DataError("rl_train: no training goals");
  cfg.rl.reward.validate();
  reset_optimizer(m.params());
  RlReport report;
  RolloutOptions ro;
  ro.mode = DecodeMode::kSample;
  ro.max_turns = cfg.max_turns;
  ro.reward = cfg.rl.reward;
  for (std::size_t epoch = 1; epoch <= cfg.rl.epochs; ++epoch) {
    RlEpoch rec;
    rec.epoch = epoch;
    std::size_t turns = 0, successes = 0;
    const auto order = shuffled(train_goals.size(), derive_seed(cfg.seed, epoch, 201));
    for (std::size_t start = 0; start < order.size(); start += cfg.rl.batch) {
      std::vector<Episode> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.rl.batch); ++k) {
        Episode ep = rollout(m, train_goals[order[k]], derive_seed(cfg.seed, epoch * 1000003 + k, 202), ro);
        for (const auto& t : ep.log.turns) {
          rec.mean_ds_reward += t.rewards.ds;
          rec.mean_us_reward += t.rewards.us;
          ++turns;
        }
        successes += ep.log.outcome.success ? 1 : 0;
        batch.push_back(std::move(ep));
      }
      reinforce_update(m, batch, cfg.rl);
      if (options.keep_interactions)
        for (auto& ep : batch) report.interactions.push_back(std::move(ep.log));
    }
    if (turns > 0) {
      rec.mean_ds_reward /= static_cast<double>(turns);
      rec.mean_us_reward /= static_cast<double>(turns);
    }
    rec.mean_turn_reward = rec.mean_ds_reward + rec.mean_us_reward;
    rec.train_success = static_cast<double>(successes) / static_cast<double>(train_goals.size());
    rec.dev_success = dev_goals.empty() ? 0.0 : selfplay_success(m, dev_goals, cfg.max_turns);
    report.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  return report;
}

FinetuneReport finetune(JointModel& m, std::span<const AnnotatedDialogue> adaptation,
                        std::span<const AnnotatedDialogue> dev, FinetuneMode mode, const FisherDiag* fisher,
                        bool with_rl, const TrainConfig& cfg) {
  if (mode == FinetuneMode::kEwc && !fisher) throw ContractError("finetune: ewc mode needs a Fisher estimate");
  reset_optimizer(m.params());
  SlOptions opts;
  if (mode == FinetuneMode::kEwc) {
    opts.ewc = fisher;
    opts.ewc_lambda = cfg.ewc.lambda;
  }
  FinetuneReport report;
  report.sl = sl_train(m, adaptation, dev, cfg, opts);
  if (with_rl) {
    const auto train_goals = goals_of(adaptation);
    const auto dev_goals = goals_of(dev);
    report.rl = rl_train(m, train_goals, dev_goals, cfg);
  }
  return report;
}

}  // namespace selfplay
