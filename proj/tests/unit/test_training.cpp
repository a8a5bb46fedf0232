#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "selfplay/training.hpp"

using namespace selfplay;

namespace {

std::vector<AnnotatedDialogue> first_dialogues(std::size_t n) {
  const auto& c = fixtures::toy_corpus();
  return {c.begin(), c.begin() + static_cast<long>(n)};
}

UserGoal goal_of(std::size_t i) { return fixtures::toy_corpus().at(i).goal; }

void zero_params(ParamStore& ps) {
  for (ParamId id = 0; id < ps.size(); ++id)
    for (auto& v : ps[id].value) v = 0.0;
}

double max_drift(const ParamStore& ps, const std::vector<std::vector<double>>& anchor) {
  double d = 0.0;
  for (ParamId id = 0; id < ps.size(); ++id)
    for (std::size_t k = 0; k < anchor[id].size(); ++k) d = std::max(d, std::abs(ps[id].value[k] - anchor[id][k]));
  return d;
}

// Sum over turns of schedule-weighted act nll, evaluated without a tape.
double reinforce_objective(const JointModel& m, const Episode& ep, double gamma, bool joint) {
  Tape tape(&m.params(), false);
  const auto terms = replay_dialogue(tape, m, ep.replay, {false, true, false, joint, false});
  double total = 0.0;
  for (std::size_t t = 0; t < ep.replay.size(); ++t) {
    const auto ds = return_schedule(ep.log.turns[t].rewards.ds, terms.ds_act_nll[t].size(), gamma);
    for (std::size_t i = 0; i < ds.size(); ++i) total += ds[i] * terms.ds_act_nll[t][i].item();
    if (!joint) continue;
    const auto us = return_schedule(ep.log.turns[t].rewards.us, terms.us_act_nll[t].size(), gamma);
    for (std::size_t i = 0; i < us.size(); ++i) total += us[i] * terms.us_act_nll[t][i].item();
  }
  return total;
}

Episode sampled_episode(const JointModel& m, std::uint64_t seed, std::size_t max_turns = 3) {
  RolloutOptions opts;
  opts.max_turns = max_turns;
  return rollout(m, goal_of(0), seed, opts);
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("return schedule examples") {
    CHECK(return_schedule(1.0, 3, 0.5) == std::vector<double>{0.25, 0.5, 1.0});
    CHECK(return_schedule(-5.0, 1, 0.9) == std::vector<double>{-5.0});
    CHECK(return_schedule(2.5, 4, 0.0) == std::vector<double>{0.0, 0.0, 0.0, 2.5});
    CHECK(return_schedule(2.0, 2, 1.0) == std::vector<double>{2.0, 2.0});
  }

  TEST_CASE("return schedule equals a power loop on the full grid") {
    for (double gamma : {0.0, 0.5, 0.9, 1.0})
      for (std::size_t n = 1; n <= 12; ++n)
        for (double r : {-5.0, -1.0, 0.0, 1.0, 2.5}) {
          const auto got = return_schedule(r, n, gamma);
          REQUIRE(got.size() == n);
          for (std::size_t i = 1; i <= n; ++i) {
            double g = 1.0;
            for (std::size_t k = i; k < n; ++k) g *= gamma;
            CHECK(got[i - 1] == g * r);
          }
        }
  }

  TEST_CASE("a model with zero weights scores every token at log V") {
    JointModel m = fixtures::tiny_model();
    zero_params(m.params());
    const auto d = first_dialogues(1);
    const auto turns = prepare_replay(m, d[0]);
    std::size_t slot_terms = 0, value_terms = 0, ds_acts = 0, us_acts = 0, ds_words = 0, us_words = 0;
    for (const auto& t : turns) {
      slot_terms += t.dst_targets.size() + 1;
      value_terms += t.dst_targets.size();
      ds_acts += t.system_act_ids.size();
      us_acts += t.user_act_ids.size();
      ds_words += t.system_word_ids.size();
      us_words += t.user_word_ids.size();
    }
    const auto loss = sl_losses(m, std::span<const AnnotatedDialogue>(d));
    const double lw = std::log(static_cast<double>(m.words().size()));
    const double la = std::log(static_cast<double>(m.acts().size()));
    CHECK(loss.l_dst == doctest::Approx(slot_terms * std::log(static_cast<double>(m.slots().size())) +
                                        value_terms * std::log(static_cast<double>(m.values().size())))
                            .epsilon(1e-12));
    CHECK(loss.l_pol_ds == doctest::Approx(ds_acts * la).epsilon(1e-12));
    CHECK(loss.l_pol_us == doctest::Approx(us_acts * la).epsilon(1e-12));
    CHECK(loss.l_nlg_ds == doctest::Approx(ds_words * lw).epsilon(1e-12));
    CHECK(loss.l_nlg_us == doctest::Approx(us_words * lw).epsilon(1e-12));
    CHECK(loss.total() == doctest::Approx(loss.ds() + loss.us()));
    CHECK(loss.dialogues == 1);
  }

  TEST_CASE("one SL step produces gradients for both agents and the context") {
    const JointModel m = fixtures::tiny_model();
    const auto d = first_dialogues(2);
    Gradients g(m.params());
    sl_losses(m, std::span<const AnnotatedDialogue>(d), &g);
    bool ds = false, us = false, ctx = false, dst = false;
    for (ParamId id = 0; id < m.params().size(); ++id) {
      if (!g.touched(id)) continue;
      ds = ds || in_section(m.params()[id], "ds");
      us = us || in_section(m.params()[id], "us");
      ctx = ctx || in_section(m.params()[id], "ctx");
      dst = dst || in_section(m.params()[id], "ds.dst");
    }
    CHECK(ds);
    CHECK(us);
    CHECK(ctx);
    CHECK(dst);
  }

  TEST_CASE("batch gradients are the mean of per-dialogue gradients") {
    const JointModel m = fixtures::tiny_model();
    const auto d = first_dialogues(2);
    Gradients both(m.params()), a(m.params()), b(m.params());
    sl_losses(m, std::span<const AnnotatedDialogue>(d), &both);
    sl_losses(m, std::span<const AnnotatedDialogue>(d).subspan(0, 1), &a);
    sl_losses(m, std::span<const AnnotatedDialogue>(d).subspan(1, 1), &b);
    const ParamId id = m.context().weight;
    for (std::size_t k = 0; k < both.at(id).size(); ++k)
      CHECK(both.at(id)[k] == doctest::Approx(0.5 * (a.at(id)[k] + b.at(id)[k])).epsilon(1e-9));
  }

  TEST_CASE("SL memorises a handful of dialogues") {
    JointModel m = fixtures::tiny_model(8, 8, 3);
    const auto train = first_dialogues(10);
    TrainConfig cfg;
    cfg.sl.lr = 0.01;
    cfg.sl.batch = 2;
    cfg.sl.max_epochs = 5;
    cfg.sl.patience = 100;
    const auto report = sl_train(m, train, {}, cfg);
    REQUIRE(report.epochs.size() == 5);
    int increases = 0;
    for (std::size_t e = 1; e < report.epochs.size(); ++e)
      increases += report.epochs[e].loss.total() >= report.epochs[e - 1].loss.total();
    CHECK(increases <= 1);
    CHECK(report.epochs.back().loss.total() < 0.8 * report.epochs.front().loss.total());
  }

  TEST_CASE("SL stops after the patience runs out and restores the best epoch") {
    JointModel m = fixtures::tiny_model();
    const auto train = first_dialogues(4);
    const auto dev = first_dialogues(2);
    TrainConfig cfg;
    cfg.sl.lr = 0.001;
    cfg.sl.batch = 4;
    cfg.sl.max_epochs = 10;
    cfg.sl.patience = 2;
    cfg.max_turns = 4;
    std::vector<std::vector<double>> after_first;
    SlOptions opts;
    opts.on_epoch = [&](const SlEpoch& e) {
      if (e.epoch == 1) after_first = snapshot(m.params());
    };
    const auto report = sl_train(m, train, dev, cfg, opts);
    REQUIRE(report.epochs.front().dev_success == 0.0);
    CHECK(report.stopped_early);
    CHECK(report.epochs.size() == 3);
    CHECK(report.best_epoch == 1);
    CHECK(snapshot(m.params()) == after_first);
    CHECK_THROWS_AS(sl_train(m, {}, dev, cfg), DataError);
  }

  TEST_CASE("rollouts are deterministic, bounded and start with the user") {
    const JointModel m = fixtures::tiny_model();
    RolloutOptions opts;
    opts.max_turns = 5;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto a = rollout(m, goal_of(seed), seed, opts);
      const auto b = rollout(m, goal_of(seed), seed, opts);
      CHECK(nlohmann::json(std::vector<DialogueLog>{a.log}) == nlohmann::json(std::vector<DialogueLog>{b.log}));
      CHECK(a.log.turns.size() >= 1);
      CHECK(a.log.turns.size() <= 5);
      CHECK(a.replay.size() == a.log.turns.size());
      for (std::size_t t = 0; t + 1 < a.log.turns.size(); ++t) CHECK_FALSE(a.log.turns[t].user_act.terminal());
      // The first user turn hears nothing from a zero context.
      const auto goal = goal_of(seed);
      const auto first = us_turn(m, ContextState::zeros(m.config().hidden), {}, goal,
                                 init_goal_state(goal, m.ontology()), DecodeMode::kSample, derive_seed(seed, 0, 1));
      CHECK(first.act_ids == a.replay[0].user_act_ids);
      CHECK(a.log.turns[0].user_utterance == first.utterance);
    }
  }

  TEST_CASE("REINFORCE gradients match finite differences of the weighted log-likelihood") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      JointModel m = fixtures::tiny_model(4, 3, seed);
      Episode ep = sampled_episode(m, seed);
      for (std::size_t t = 0; t < ep.log.turns.size(); ++t) ep.log.turns[t].rewards = {t % 2 ? -1.0 : 2.5, 1.0};
      for (bool joint : {false, true}) {
        RlConfig cfg;
        cfg.gamma = 0.9;
        cfg.target = joint ? RlTarget::kJoint : RlTarget::kDs;
        Gradients g(m.params());
        const std::vector<Episode> batch{ep};
        const double value = reinforce_gradients(m, batch, cfg, g);
        CHECK(value == doctest::Approx(reinforce_objective(m, ep, cfg.gamma, joint)).epsilon(1e-10));
        Rng rng(seed);
        double worst = 0.0;
        for (ParamId id = 0; id < m.params().size(); ++id) {
          auto& v = m.params()[id].value;
          const std::size_t i = rng.index(v.size());
          const double saved = v[i];
          v[i] = saved + 1e-4;
          const double up = reinforce_objective(m, ep, cfg.gamma, joint);
          v[i] = saved - 1e-4;
          const double down = reinforce_objective(m, ep, cfg.gamma, joint);
          v[i] = saved;
          const double analytic = g.touched(id) ? g.at(id)[i] : 0.0;
          worst = std::max(worst, gradcheck::relative_error(analytic, (up - down) / 2e-4));
        }
        CHECK(worst < 1e-4);
      }
    }
  }

  TEST_CASE("REINFORCE gradients scale with the reward and are averaged over the batch") {
    const JointModel m = fixtures::tiny_model();
    Episode ep = sampled_episode(m, 7);
    for (auto& t : ep.log.turns) t.rewards = {1.0, 0.0};
    Episode twice = ep;
    for (auto& t : twice.log.turns) t.rewards = {2.0, 0.0};
    RlConfig cfg;
    Gradients g1(m.params()), g2(m.params()), gb(m.params());
    reinforce_gradients(m, std::vector<Episode>{ep}, cfg, g1);
    reinforce_gradients(m, std::vector<Episode>{twice}, cfg, g2);
    reinforce_gradients(m, std::vector<Episode>{ep, twice}, cfg, gb);
    const ParamId id = m.ds().policy.output.bias;
    for (std::size_t k = 0; k < g1.at(id).size(); ++k) {
      CHECK(g2.at(id)[k] == doctest::Approx(2.0 * g1.at(id)[k]).epsilon(1e-10));
      CHECK(gb.at(id)[k] == doctest::Approx(1.5 * g1.at(id)[k]).epsilon(1e-10));
    }
  }

  TEST_CASE("zero rewards leave the parameters unchanged") {
    JointModel m = fixtures::tiny_model();
    Episode ep = sampled_episode(m, 3);
    for (auto& t : ep.log.turns) t.rewards = {0.0, 0.0};
    const auto before = snapshot(m.params());
    reinforce_update(m, std::vector<Episode>{ep}, RlConfig{});
    CHECK(snapshot(m.params()) == before);
  }

  TEST_CASE("RL updates only the selected sections") {
    JointModel m = fixtures::tiny_model();
    Episode ep = sampled_episode(m, 3);
    for (auto& t : ep.log.turns) t.rewards = {1.0, -1.0};
    const auto before = snapshot(m.params());
    RlConfig cfg;
    cfg.lr = 0.01;
    cfg.target = RlTarget::kDs;
    reinforce_update(m, std::vector<Episode>{ep}, cfg);
    bool ds_moved = false;
    for (ParamId id = 0; id < m.params().size(); ++id) {
      const Param& p = m.params()[id];
      if (in_section(p, "us") || in_section(p, "ds.dst")) CHECK(p.value == before[id]);
      if (in_section(p, "ds.pol") && p.value != before[id]) ds_moved = true;
    }
    CHECK(ds_moved);
    for (const auto& p : m.params()) {
      CHECK(rl_selects(p, RlTarget::kJoint) == !in_section(p, "ds.dst"));
      CHECK(rl_selects(p, RlTarget::kDs) == (!in_section(p, "ds.dst") && !in_section(p, "us")));
    }
  }

  TEST_CASE("missing act log-probabilities are a contract error") {
    const JointModel m = fixtures::tiny_model();
    Episode ep = sampled_episode(m, 3);
    ep.log.turns[0].system_act_logprobs.clear();
    Gradients g(m.params());
    CHECK_THROWS_AS(reinforce_gradients(m, std::vector<Episode>{ep}, RlConfig{}, g), ContractError);
    Episode bare = sampled_episode(m, 3);
    bare.replay.clear();
    CHECK_THROWS_AS(reinforce_gradients(m, std::vector<Episode>{bare}, RlConfig{}, g), ContractError);
  }

  TEST_CASE("the Fisher diagonal is the mean squared per-dialogue gradient") {
    const JointModel m = fixtures::tiny_model();
    const auto d = first_dialogues(3);
    const auto f = fisher_estimate(m, d, EwcConfig{});
    CHECK(f.anchor == snapshot(m.params()));
    std::vector<Gradients> per;
    for (std::size_t i = 0; i < d.size(); ++i) {
      per.emplace_back(m.params());
      sl_losses(m, std::span<const AnnotatedDialogue>(d).subspan(i, 1), &per.back());
    }
    for (ParamId id = 0; id < m.params().size(); ++id) {
      for (std::size_t k = 0; k < f.fisher[id].size(); ++k) {
        double want = 0.0;
        for (const auto& g : per)
          if (g.touched(id)) want += g.at(id)[k] * g.at(id)[k];
        want /= 3.0;
        CHECK(f.fisher[id][k] >= 0.0);
        if (std::abs(f.fisher[id][k] - want) > 1e-12 * std::max(1.0, want)) {
          CHECK(f.fisher[id][k] == doctest::Approx(want));
        }
      }
    }
    CHECK_THROWS_AS(fisher_estimate(m, {}, EwcConfig{}), DataError);
  }

  TEST_CASE("EWC penalty examples") {
    const JointModel m = fixtures::tiny_model();
    FisherDiag f;
    f.anchor = snapshot(m.params());
    for (const auto& a : f.anchor) f.fisher.emplace_back(a.size(), 0.0);
    CHECK(ewc_penalty(m.params(), f, 1.0) == 0.0);
    f.fisher[0][0] = 1.0;
    f.anchor[0][0] -= 1.0;
    CHECK(ewc_penalty(m.params(), f, 1.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(ewc_penalty(m.params(), f, 0.0) == 0.0);
    f.fisher.pop_back();
    CHECK_THROWS_AS(ewc_penalty(m.params(), f, 1.0), ContractError);
  }

  TEST_CASE("EWC gradient is the derivative of the penalty") {
    JointModel m = fixtures::tiny_model();
    FisherDiag f;
    f.anchor = snapshot(m.params());
    Rng rng(5);
    for (auto& a : f.anchor) {
      f.fisher.emplace_back();
      for (auto& x : a) {
        x += rng.uniform(-0.5, 0.5);
        f.fisher.back().push_back(rng.uniform(0.0, 2.0));
      }
    }
    Gradients g(m.params());
    ewc_gradient(m.params(), f, 3.0, g);
    for (ParamId id = 0; id < m.params().size(); id += 3) {
      auto& v = m.params()[id].value;
      const double saved = v[0];
      v[0] = saved + 1e-6;
      const double up = ewc_penalty(m.params(), f, 3.0);
      v[0] = saved - 1e-6;
      const double down = ewc_penalty(m.params(), f, 3.0);
      v[0] = saved;
      CHECK(g.at(id)[0] == doctest::Approx((up - down) / 2e-6).epsilon(1e-6));
    }
  }

  TEST_CASE("a huge EWC weight pins the parameters to the anchor") {
    const auto adapt = first_dialogues(6);
    TrainConfig cfg;
    cfg.sl.lr = 0.01;
    cfg.sl.batch = 3;
    cfg.sl.max_epochs = 3;
    cfg.sl.patience = 100;
    cfg.ewc.lambda = 1e6;

    const auto anchor = snapshot(fixtures::tiny_model().params());
    // Without dev goals the first epoch is restored, so drift is read after every epoch.
    JointModel free_model = fixtures::tiny_model();
    JointModel pinned = fixtures::tiny_model();
    FisherDiag f;
    f.anchor = anchor;
    for (const auto& a : anchor) f.fisher.emplace_back(a.size(), 1.0);
    double free_drift = 0.0, pinned_drift = 0.0;
    SlOptions free_opts, pinned_opts;
    free_opts.on_epoch = [&](const SlEpoch&) { free_drift = max_drift(free_model.params(), anchor); };
    pinned_opts.ewc = &f;
    pinned_opts.ewc_lambda = cfg.ewc.lambda;
    pinned_opts.on_epoch = [&](const SlEpoch&) { pinned_drift = max_drift(pinned.params(), anchor); };
    sl_train(free_model, adapt, {}, cfg, free_opts);
    sl_train(pinned, adapt, {}, cfg, pinned_opts);
    CHECK(free_drift > 0.02);
    CHECK(pinned_drift < 0.25 * free_drift);
  }

  TEST_CASE("EWC fine-tuning without a Fisher estimate is a contract error") {
    JointModel m = fixtures::tiny_model();
    const auto adapt = first_dialogues(2);
    CHECK_THROWS_AS(finetune(m, adapt, {}, FinetuneMode::kEwc, nullptr, false, TrainConfig{}), ContractError);
    CHECK(parse_finetune_mode("naive") == FinetuneMode::kNaive);
    CHECK_THROWS_AS(parse_finetune_mode("frozen"), ValidationError);
  }

  TEST_CASE("training configs round-trip and validate") {
    TrainConfig c;
    c.sl.lr = 0.005;
    c.rl.target = RlTarget::kDs;
    c.rl.reward = RewardConfig::rl_ds();
    c.seed = 9;
    const nlohmann::json j = c;
    const auto back = j.get<TrainConfig>();
    CHECK(nlohmann::json(back) == j);
    auto bad = j;
    bad["rl"]["gamma"] = 1.5;
    CHECK_THROWS_AS(bad.get<TrainConfig>(), ValidationError);
    bad = j;
    bad["sl"]["batch"] = 0;
    CHECK_THROWS_AS(bad.get<TrainConfig>(), ValidationError);
    CHECK(nlohmann::json::object().get<TrainConfig>().sl.patience == 3);
  }

  TEST_CASE("corpus goal states and DST targets") {
    const Ontology& o = fixtures::toy_kb().ontology;
    for (const auto& d : first_dialogues(10)) {
      const auto states = corpus_goal_states(d, o);
      REQUIRE(states.size() == d.turns.size());
      if (d.turns.front().goal_relaxed.empty()) CHECK(states.front() == init_goal_state(d.goal, o));
      for (const auto& t : d.turns) {
        const auto targets = dst_targets(t, o);
        for (std::size_t i = 1; i < targets.size(); ++i)
          CHECK(*o.index_of(targets[i - 1].first) < *o.index_of(targets[i].first));
        for (const auto& [key, value] : targets) CHECK(t.user_act.contains({key.first, Intent::kInform, key.second}));
      }
    }
  }

  TEST_CASE("unencodable dialogues are data errors naming the dialogue") {
    const JointModel m = fixtures::tiny_model();
    auto d = first_dialogues(1)[0];
    d.id = "broken_one";
    d.turns[0].user_act.add({"hotel", Intent::kInform, "parking"});
    try {
      prepare_replay(m, d);
      FAIL("expected a data error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("broken_one") != std::string::npos);
    }
  }
}
