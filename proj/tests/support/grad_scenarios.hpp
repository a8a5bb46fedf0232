#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "selfplay/agents.hpp"
#include "selfplay/nn.hpp"
#include "selfplay/rng.hpp"
#include "selfplay/training.hpp"

namespace grad_scenarios {

inline void keep_worst(gradcheck::Result& acc, const gradcheck::Result& r) {
  acc.checked += r.checked;
  if (r.max_error >= acc.max_error) {
    acc.max_error = r.max_error;
    acc.worst = r.worst;
  }
}

/// Every tensor primitive composed into one scalar loss.
inline gradcheck::Result primitives(std::uint64_t seeds = 20) {
  using namespace selfplay;
  gradcheck::Result acc;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    Rng rng(seed);
    auto random_values = [&](std::size_t n) {
      std::vector<double> v(n);
      for (auto& x : v) x = rng.uniform(-1.0, 1.0);
      return v;
    };
    ParamStore ps;
    ParamId a = ps.add("a", Shape::matrix(3, 4), random_values(12));
    ParamId b = ps.add("b", Shape::matrix(4, 2), random_values(8));
    ParamId v = ps.add("v", Shape::vector(3), random_values(3));
    ParamId e = ps.add("e", Shape::matrix(5, 3), random_values(15));
    const std::size_t target = rng.index(5);
    const std::size_t lookup = rng.index(5);
    auto build = [&](Tape& t) {
      Tensor A = t.param(a), B = t.param(b), V = t.param(v), E = t.param(e);
      Tensor ab = matmul(A, B);
      Tensor abt = transpose(ab);
      Tensor rows = add_rows(abt, V);
      Tensor r0 = row(rows, 0), r1 = row(rows, 1);
      Tensor m = mul(tanh(r0), sigmoid(r1));
      Tensor cat = concat({m, scale(V, 0.7), embed_lookup(E, lookup)});
      Tensor sl = slice(cat, 2, 5);
      Tensor st = stack(std::vector<Tensor>{sl, add(sl, sl)});
      Tensor logits = matmul(st, t.constant(Shape::matrix(5, 1), {0.3, -0.2, 0.5, 0.1, -0.4}));
      Tensor probs = softmax(slice(cat, 0, 5));
      const Tensor terms[] = {cross_entropy(probs, target), softmax_cross_entropy(sl, target), sum(logits)};
      return sum(terms);
    };
    keep_worst(acc, gradcheck::check(ps, build, 100, seed));
  }
  return acc;
}

/// An unrolled LSTM whose last state attends over all states.
inline gradcheck::Result lstm_attention(std::uint64_t seeds = 20) {
  using namespace selfplay;
  gradcheck::Result acc;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    ParamStore ps;
    auto lstm = nn::LstmParams::create(ps, "l", 3, 4);
    auto att = nn::AttentionParams::create(ps, "a", 4, 4, 3);
    auto out = nn::Linear::create(ps, "o", 8, 5);
    ps.init_uniform(seed, 0.6);
    Rng rng(seed + 50);
    std::vector<std::vector<double>> xs(4, std::vector<double>(3));
    for (auto& x : xs)
      for (auto& v : x) v = rng.uniform(-1, 1);
    const std::size_t target = rng.index(5);
    auto build = [&](Tape& t) {
      auto s = nn::zero_state(t, 4);
      std::vector<Tensor> states;
      for (const auto& x : xs) {
        s = nn::lstm_step(t, lstm, t.constant(Shape::vector(3), x), s);
        states.push_back(s.h);
      }
      auto mem = nn::prepare_memory(t, att, stack(states));
      auto r = nn::attend(t, att, s.h, mem);
      return softmax_cross_entropy(out(t, concat({s.h, r.context})), target);
    };
    keep_worst(acc, gradcheck::check(ps, build, 30, seed));
  }
  return acc;
}

/// The teacher-forced DS and US turn losses of a two-turn corpus dialogue.
struct TurnLossResults {
  gradcheck::Result system;
  gradcheck::Result user;
};

inline TurnLossResults turn_losses(std::uint64_t seeds = 20) {
  using namespace selfplay;
  AnnotatedDialogue d = fixtures::toy_corpus().front();
  if (d.turns.size() > 2) d.turns.resize(2);
  TurnLossResults acc;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    JointModel m = fixtures::tiny_model(4, 3, seed);
    const auto turns = prepare_replay(m, d);
    keep_worst(acc.system, gradcheck::check(
                               m.params(),
                               [&](Tape& tape) {
                                 auto t = replay_dialogue(tape, m, turns, {true, true, true, false, false});
                                 return add(add(t.l_dst, t.l_pol_ds), t.l_nlg_ds);
                               },
                               2, seed, {}, 1e-4));
    keep_worst(acc.user, gradcheck::check(
                             m.params(),
                             [&](Tape& tape) {
                               auto t = replay_dialogue(tape, m, turns, {false, false, false, true, true});
                               return add(t.l_pol_us, t.l_nlg_us);
                             },
                             2, seed + 100, {}, 1e-4));
  }
  return acc;
}

}  // namespace grad_scenarios
