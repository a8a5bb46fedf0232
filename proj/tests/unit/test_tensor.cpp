#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "grad_scenarios.hpp"
#include "selfplay/rng.hpp"
#include "selfplay/tensor.hpp"

using namespace selfplay;

namespace {

std::vector<double> random_values(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return v;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("softmax of equal logits is uniform") {
    Tape tape;
    Tensor p = softmax(tape.constant(Shape::vector(2), {0.0, 0.0}));
    CHECK(p.data()[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(p.data()[1] == doctest::Approx(0.5).epsilon(1e-15));
  }

  TEST_CASE("cross entropy of a uniform distribution is ln V") {
    Tape tape;
    for (std::size_t target = 0; target < 4; ++target) {
      Tensor ce = cross_entropy(tape.constant(Shape::vector(4), {0.25, 0.25, 0.25, 0.25}), target);
      CHECK(ce.item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
      CHECK(softmax_cross_entropy(tape.zeros(Shape::vector(4)), target).item() ==
            doctest::Approx(std::log(4.0)).epsilon(1e-14));
    }
  }

  TEST_CASE("identity matmul returns its argument") {
    Tape tape;
    Rng rng(3);
    Tensor eye = tape.constant(Shape::matrix(3, 3), {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const auto xs = random_values(rng, 6);
    Tensor x = tape.constant(Shape::matrix(3, 2), xs);
    Tensor y = matmul(eye, x);
    for (std::size_t i = 0; i < 6; ++i) CHECK(y.data()[i] == xs[i]);
  }

  TEST_CASE("shape mismatch names both shapes") {
    Tape tape;
    Tensor a = tape.zeros(Shape::matrix(2, 3));
    Tensor b = tape.zeros(Shape::matrix(2, 3));
    try {
      matmul(a, b);
      FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2,3]") != std::string::npos);
    }
    CHECK_THROWS_AS(add(tape.zeros(Shape::vector(2)), tape.zeros(Shape::vector(3))), DimensionError);
  }

  TEST_CASE("backward needs a scalar loss") {
    ParamStore ps;
    ParamId x = ps.add("x", Shape::vector(2), {1.0, 2.0});
    Tape tape(&ps);
    Gradients g(ps);
    CHECK_THROWS_AS(tape.backward(tape.param(x), g), ContractError);
  }

  TEST_CASE("square has gradient 2x") {
    ParamStore ps;
    ParamId x = ps.add("x", Shape::vector(1), {3.0});
    Tape tape(&ps);
    Tensor p = tape.param(x);
    Gradients g(ps);
    tape.backward(sum(mul(p, p)), g);
    CHECK(g.at(x)[0] == doctest::Approx(6.0).epsilon(1e-15));
  }

  TEST_CASE("softmax cross entropy gradient is p minus one-hot") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      ParamStore ps;
      ParamId z = ps.add("z", Shape::vector(5), random_values(rng, 5, 2.0));
      const std::size_t y = rng.index(5);
      Tape tape(&ps);
      Gradients g(ps);
      tape.backward(cross_entropy(softmax(tape.param(z)), y), g);
      const auto p = softmax_values(ps[z].value);
      for (std::size_t i = 0; i < 5; ++i) CHECK(g.at(z)[i] == doctest::Approx(p[i] - (i == y ? 1.0 : 0.0)).epsilon(1e-10));
    }
  }

  TEST_CASE("constants receive no gradient") {
    ParamStore ps;
    ParamId w = ps.add("w", Shape::vector(2), {0.5, -0.5});
    Tape tape(&ps);
    Tensor c = tape.constant(Shape::vector(2), {1.0, 2.0});
    Tensor loss = sum(mul(tape.param(w), c));
    CHECK_FALSE(c.requires_grad());
    CHECK(loss.requires_grad());
  }

  TEST_CASE("every primitive matches central differences over 20 seeds") {
    const auto r = grad_scenarios::primitives(20);
    INFO(r.worst);
    CHECK(r.max_error <= 1e-4);
  }

  TEST_CASE("softmax lies on the simplex") {
    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
      const auto z = random_values(rng, 1 + rng.index(20), 30.0);
      const auto p = softmax_values(z);
      double total = 0.0;
      for (double x : p) {
        CHECK(x >= 0.0);
        total += x;
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }

  TEST_CASE("forward evaluation is bit-identical for identical inputs") {
    auto run = [] {
      ParamStore ps;
      ps.add("w", Shape::matrix(4, 4));
      ps.init_uniform(17, 0.5);
      Tape tape(&ps);
      Tensor x = tape.constant(Shape::matrix(4, 1), {0.1, 0.2, 0.3, 0.4});
      Tensor y = tanh(matmul(tape.param(0), x));
      return std::vector<double>(y.data().begin(), y.data().end());
    };
    CHECK(run() == run());
  }

  TEST_CASE("first Adam step moves by lr against the gradient sign") {
    ParamStore ps;
    ParamId w = ps.add("w", Shape::vector(3), {1.0, -2.0, 0.5});
    Gradients g(ps);
    const std::vector<double> grad{0.3, -4.0, 1e-3};
    g.accumulate(w, grad);
    const auto before = ps[w].value;
    adam_update(ps, g, AdamConfig{0.01});
    for (std::size_t i = 0; i < 3; ++i) {
      const double sign = grad[i] > 0 ? 1.0 : -1.0;
      CHECK(ps[w].value[i] - before[i] == doctest::Approx(-0.01 * sign).epsilon(1e-6));
    }
    CHECK(ps[w].adam_step == 1);
  }

  TEST_CASE("zero gradient leaves fresh parameters unchanged and decays moments") {
    ParamStore ps;
    ParamId w = ps.add("w", Shape::vector(2), {1.0, 2.0});
    Gradients zero(ps);
    zero.accumulate(w, std::vector<double>{0.0, 0.0});
    adam_update(ps, zero, AdamConfig{});
    CHECK(ps[w].value == std::vector<double>{1.0, 2.0});

    Gradients g(ps);
    g.accumulate(w, std::vector<double>{1.0, 1.0});
    adam_update(ps, g, AdamConfig{});
    const auto m = ps[w].adam_m;
    adam_update(ps, zero, AdamConfig{});
    CHECK(ps[w].adam_m[0] == doctest::Approx(0.9 * m[0]));
  }

  TEST_CASE("Adam updates replay deterministically") {
    auto run = [] {
      ParamStore ps;
      ParamId w = ps.add("w", Shape::vector(3), {0.1, 0.2, 0.3});
      for (int step = 0; step < 5; ++step) {
        Gradients g(ps);
        g.accumulate(w, std::vector<double>{0.5, -0.1, 0.01 * step});
        adam_update(ps, g, AdamConfig{});
      }
      return ps[w].value;
    };
    CHECK(run() == run());
  }

  TEST_CASE("Adam rejects gradients of the wrong shape") {
    ParamStore ps;
    ps.add("w", Shape::vector(2), {0.0, 0.0});
    ParamStore other;
    other.add("w", Shape::vector(3), {0.0, 0.0, 0.0});
    Gradients g(other);
    g.accumulate(0, std::vector<double>{1.0, 1.0, 1.0});
    CHECK_THROWS_AS(adam_update(ps, g, AdamConfig{}), DimensionError);
  }

  TEST_CASE("checkpoints round-trip and validate") {
    const auto dir = std::filesystem::temp_directory_path() / "selfplay_tensor_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "ck.bin").string();
    ParamStore ps;
    ps.add("a", Shape::matrix(2, 3));
    ps.add("b", Shape::vector(4));
    ps.init_uniform(4, 1.0);
    save_checkpoint(ps, path);

    ParamStore loaded;
    loaded.add("a", Shape::matrix(2, 3));
    loaded.add("b", Shape::vector(4));
    load_checkpoint(loaded, path);
    CHECK(loaded[0].value == ps[0].value);
    CHECK(loaded[1].value == ps[1].value);

    ParamStore wrong;
    wrong.add("a", Shape::matrix(3, 2));
    wrong.add("b", Shape::vector(4));
    CHECK_THROWS(load_checkpoint(wrong, path));

    std::ofstream(dir / "junk.bin") << "nope";
    CHECK_THROWS_AS(load_checkpoint(loaded, (dir / "junk.bin").string()), ContractError);
  }
}
