#include <cmath>

#include "doctest.h"
#include "grad_scenarios.hpp"
#include "selfplay/nn.hpp"
#include "selfplay/rng.hpp"

using namespace selfplay;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void fill(ParamStore& ps, ParamId id, Rng& rng, double scale = 0.8) {
  for (auto& v : ps[id].value) v = rng.uniform(-scale, scale);
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("zero weights and zero state give half-open gates") {
    ParamStore ps;
    auto p = nn::LstmParams::create(ps, "l", 3, 2);
    for (auto& v : ps[p.weight].value) v = 0.0;
    for (auto& v : ps[p.bias].value) v = 0.0;
    Tape tape(&ps);
    auto s = nn::lstm_step(tape, p, tape.constant(Shape::vector(3), {1.0, -1.0, 2.0}), nn::zero_state(tape, 2));
    for (double v : s.c.data()) CHECK(v == 0.0);
    for (double v : s.h.data()) CHECK(v == 0.0);
  }

  TEST_CASE("unit cell state decays through a half-open forget gate") {
    ParamStore ps;
    auto p = nn::LstmParams::create(ps, "l", 1, 1);
    for (auto& v : ps[p.weight].value) v = 0.0;
    for (auto& v : ps[p.bias].value) v = 0.0;
    Tape tape(&ps);
    nn::LstmState prev{tape.constant(Shape::vector(1), {0.0}), tape.constant(Shape::vector(1), {1.0})};
    auto s = nn::lstm_step(tape, p, tape.constant(Shape::vector(1), {0.0}), prev);
    CHECK(s.c.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s.h.data()[0] == doctest::Approx(0.5 * std::tanh(0.5)).epsilon(1e-12));
    CHECK(s.h.data()[0] == doctest::Approx(0.2311).epsilon(1e-4));
  }

  TEST_CASE("scalar LSTM matches the gate equations") {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
      ParamStore ps;
      auto p = nn::LstmParams::create(ps, "l", 1, 1);
      fill(ps, p.weight, rng, 1.5);
      fill(ps, p.bias, rng, 1.5);
      const double x = rng.uniform(-2, 2), h = rng.uniform(-1, 1), c = rng.uniform(-2, 2);
      const auto& w = ps[p.weight].value;  // rows i, f, g, o; cols x, h
      const auto& b = ps[p.bias].value;
      auto pre = [&](int k) { return w[2 * k] * x + w[2 * k + 1] * h + b[k]; };
      const double c2 = sig(pre(1)) * c + sig(pre(0)) * std::tanh(pre(2));
      const double h2 = sig(pre(3)) * std::tanh(c2);

      Tape tape(&ps);
      nn::LstmState prev{tape.constant(Shape::vector(1), {h}), tape.constant(Shape::vector(1), {c})};
      auto s = nn::lstm_step(tape, p, tape.constant(Shape::vector(1), {x}), prev);
      CHECK(s.c.data()[0] == doctest::Approx(c2).epsilon(1e-12));
      CHECK(s.h.data()[0] == doctest::Approx(h2).epsilon(1e-12));
    }
  }

  TEST_CASE("linear layer is W x + b") {
    ParamStore ps;
    auto lin = nn::Linear::create(ps, "lin", 2, 2);
    ps[lin.weight].value = {1.0, 2.0, 3.0, 4.0};
    ps[lin.bias].value = {0.5, -0.5};
    Tape tape(&ps);
    Tensor y = lin(tape, tape.constant(Shape::vector(2), {1.0, -1.0}));
    CHECK(y.data()[0] == doctest::Approx(-0.5));
    CHECK(y.data()[1] == doctest::Approx(-1.5));
  }

  TEST_CASE("attention over one key returns that value") {
    ParamStore ps;
    auto a = nn::AttentionParams::create(ps, "att", 3, 2, 4);
    ps.init_uniform(2, 0.5);
    Tape tape(&ps);
    const Tensor keys[] = {tape.constant(Shape::vector(2), {0.3, -0.7})};
    const Tensor values[] = {tape.constant(Shape::vector(3), {1.0, 2.0, 3.0})};
    auto r = nn::attention(tape, a, tape.constant(Shape::vector(3), {0.1, 0.2, 0.3}), keys, values);
    CHECK(r.weights.data()[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(r.context.data()[2] == doctest::Approx(3.0).epsilon(1e-14));
  }

  TEST_CASE("identical keys share the weight equally") {
    ParamStore ps;
    auto a = nn::AttentionParams::create(ps, "att", 2, 2, 3);
    ps.init_uniform(3, 0.5);
    Tape tape(&ps);
    std::vector<Tensor> keys, values;
    for (int j = 0; j < 4; ++j) {
      keys.push_back(tape.constant(Shape::vector(2), {0.4, 0.1}));
      values.push_back(tape.constant(Shape::vector(2), {double(j), 1.0}));
    }
    auto r = nn::attention(tape, a, tape.constant(Shape::vector(2), {1.0, -1.0}), keys, values);
    for (double w : r.weights.data()) CHECK(w == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(r.context.data()[0] == doctest::Approx(1.5).epsilon(1e-12));
  }

  TEST_CASE("attention weights form a distribution") {
    Rng rng(8);
    for (int trial = 0; trial < 30; ++trial) {
      ParamStore ps;
      auto a = nn::AttentionParams::create(ps, "att", 3, 4, 5);
      ps.init_uniform(100 + trial, 2.0);
      Tape tape(&ps);
      std::vector<Tensor> keys;
      const std::size_t n = 1 + rng.index(8);
      for (std::size_t j = 0; j < n; ++j)
        keys.push_back(tape.constant(Shape::vector(4), {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3),
                                                        rng.uniform(-3, 3)}));
      auto r = nn::attention(tape, a, tape.constant(Shape::vector(3), {rng.uniform(-3, 3), 0.0, 1.0}), keys, keys);
      double total = 0.0;
      for (double w : r.weights.data()) {
        CHECK(w >= 0.0);
        total += w;
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }

  TEST_CASE("attention rejects empty and mismatched key sets") {
    ParamStore ps;
    auto a = nn::AttentionParams::create(ps, "att", 2, 2, 2);
    Tape tape(&ps);
    std::vector<Tensor> none;
    CHECK_THROWS_AS(nn::attention(tape, a, tape.zeros(Shape::vector(2)), none, none), ContractError);
    std::vector<Tensor> keys{tape.zeros(Shape::vector(2))};
    std::vector<Tensor> values{tape.zeros(Shape::vector(2)), tape.zeros(Shape::vector(2))};
    CHECK_THROWS_AS(nn::attention(tape, a, tape.zeros(Shape::vector(2)), keys, values), ContractError);
  }

  TEST_CASE("unrolled LSTM with attention matches central differences over 20 seeds") {
    const auto r = grad_scenarios::lstm_attention(20);
    INFO(r.worst);
    CHECK(r.max_error <= 1e-4);
  }
}
