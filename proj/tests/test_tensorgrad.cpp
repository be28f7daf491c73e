#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "disco/adam.hpp"
#include "disco/rng.hpp"
#include "disco/tape.hpp"

using namespace disco;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.vec()) v = scale * rng.normal();
  return t;
}

// Central finite differences of a scalar-valued function of several input
// tensors; the independent oracle for every gradcheck in this file.
double fd_partial(const std::function<double(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> inputs, std::size_t which, std::size_t idx,
                  double h = 1e-5) {
  inputs[which][idx] += h;
  double up = f(inputs);
  inputs[which][idx] -= 2.0 * h;
  double down = f(inputs);
  return (up - down) / (2.0 * h);
}

void gradcheck(const std::function<Value(Tape&, const std::vector<Value>&)>& build,
               const std::vector<Tensor>& inputs, double tol = 1e-5) {
  Tape tape;
  std::vector<Value> vals;
  for (const Tensor& t : inputs) vals.push_back(tape.leaf(t));
  Value loss = build(tape, vals);
  tape.backward(loss);

  auto scalar_f = [&](const std::vector<Tensor>& xs) {
    Tape t2;
    std::vector<Value> vs;
    for (const Tensor& t : xs) vs.push_back(t2.leaf(t));
    return build(t2, vs).scalar();
  };

  for (std::size_t w = 0; w < inputs.size(); ++w) {
    Tensor g = tape.grad(vals[w].id);
    for (std::size_t i = 0; i < inputs[w].size(); ++i) {
      double fd = fd_partial(scalar_f, inputs, w, i);
      double denom = std::max({std::abs(fd), std::abs(g[i]), 1.0});
      INFO("input " << w << " index " << i << " analytic " << g[i] << " fd " << fd);
      CHECK(std::abs(g[i] - fd) / denom < tol);
    }
  }
}

}  // namespace

TEST_CASE("matmul forward hand arithmetic") {
  Tape tape;
  Value a = tape.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
  Value b = tape.leaf(Tensor({2, 1}, {1, 1}));
  Value c = tape.matmul(a, b);
  CHECK(c.tensor()[0] == 3.0);
  CHECK(c.tensor()[1] == 7.0);
}

TEST_CASE("softmax of uniform logits") {
  Tape tape;
  Value s = tape.softmax(tape.leaf(Tensor({1, 3}, {0, 0, 0})));
  for (int j = 0; j < 3; ++j) CHECK(s.tensor()[j] == Catch::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("affine identity case") {
  Tape tape;
  Value x = tape.leaf(Tensor({1, 2}, {5, -2}));
  Value w = tape.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
  Value b = tape.leaf(Tensor({2}, {0, 0}));
  Value y = tape.affine(x, w, b);
  CHECK(y.tensor()[0] == 5.0);
  CHECK(y.tensor()[1] == -2.0);
}

TEST_CASE("shape mismatch errors name the op") {
  Tape tape;
  Value a = tape.leaf(Tensor::zeros({2, 3}));
  Value b = tape.leaf(Tensor::zeros({3, 3}));
  CHECK_THROWS_WITH(tape.add(a, b), Catch::Matchers::ContainsSubstring("add") &&
                                        Catch::Matchers::ContainsSubstring("[2,3]"));
  CHECK_THROWS_WITH(tape.matmul(b, b.tape->leaf(Tensor::zeros({2, 2}))),
                    Catch::Matchers::ContainsSubstring("matmul"));
}

TEST_CASE("backward of sum(x*x) is 2x") {
  Tape tape;
  Value x = tape.leaf(Tensor({3}, {3, -1, 2}));
  Value loss = tape.sum(tape.mul(x, x));
  tape.backward(loss);
  Tensor g = tape.grad(x.id);
  CHECK(g[0] == Catch::Approx(6.0));
  CHECK(g[1] == Catch::Approx(-2.0));
  CHECK(g[2] == Catch::Approx(4.0));
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape tape;
  Value x = tape.leaf(Tensor::zeros({2, 2}));
  CHECK_THROWS_AS(tape.backward(x), TapeError);
}

TEST_CASE("parameters off the tape get zero gradient") {
  Tape tape;
  Value x = tape.leaf(Tensor({2}, {1, 2}));
  Value unused = tape.leaf(Tensor({2}, {5, 5}));
  tape.backward(tape.sum(x));
  Tensor g = tape.grad(unused.id);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
}

TEST_CASE("log-softmax gradient closed form") {
  // d/dlogits log_softmax(logits)[j] = onehot(j) - softmax(logits)
  Tape tape;
  Value logits = tape.leaf(Tensor({1, 3}, {1, 2, 3}));
  Value ls = tape.log_softmax(logits);
  tape.backward(tape.select(ls, 0));
  Tensor g = tape.grad(logits.id);
  Tensor sm = [&] {
    Tape t2;
    return t2.softmax(t2.leaf(Tensor({1, 3}, {1, 2, 3}))).tensor();
  }();
  CHECK(g[0] == Catch::Approx(1.0 - sm[0]).margin(1e-12));
  CHECK(g[1] == Catch::Approx(-sm[1]).margin(1e-12));
  CHECK(g[2] == Catch::Approx(-sm[2]).margin(1e-12));
}

TEST_CASE("gradcheck every op kind against finite differences") {
  Rng rng(7);

  SECTION("add/sub/mul/scale chain") {
    std::vector<Tensor> in = {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
    gradcheck([](Tape& t, const std::vector<Value>& v) {
      return t.sum(t.mul(t.scale(t.add(v[0], v[1]), 1.7), t.sub(v[0], v[1])));
    }, in);
  }
  SECTION("matmul") {
    std::vector<Tensor> in = {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
    gradcheck([](Tape& t, const std::vector<Value>& v) {
      return t.squared_l2(t.matmul(v[0], v[1]));
    }, in);
  }
  SECTION("affine + silu") {
    std::vector<Tensor> in = {random_tensor({5, 3}, rng), random_tensor({3, 4}, rng),
                              random_tensor({4}, rng)};
    gradcheck([](Tape& t, const std::vector<Value>& v) {
      return t.mean(t.silu(t.affine(v[0], v[1], v[2])));
    }, in);
  }
  SECTION("softmax") {
    std::vector<Tensor> in = {random_tensor({4, 5}, rng)};
    gradcheck([](Tape& t, const std::vector<Value>& v) {
      return t.squared_l2(t.softmax(v[0]));
    }, in);
  }
  SECTION("log_softmax") {
    std::vector<Tensor> in = {random_tensor({4, 5}, rng)};
    gradcheck([](Tape& t, const std::vector<Value>& v) {
      Value w = t.constant(Tensor({4, 5}, std::vector<double>(20, 0.3)));
      return t.sum(t.mul(t.log_softmax(v[0]), w));
    }, in);
  }
  SECTION("concat") {
    std::vector<Tensor> in = {random_tensor({3, 2}, rng), random_tensor({3, 4}, rng)};
    gradcheck([](Tape& t, const std::vector<Value>& v) {
      return t.squared_l2(t.concat(v[0], v[1]));
    }, in);
  }
  SECTION("mean and squared_l2") {
    std::vector<Tensor> in = {random_tensor({6}, rng)};
    gradcheck([](Tape& t, const std::vector<Value>& v) {
      return t.add(t.mean(t.mul(v[0], v[0])), t.scale(t.squared_l2(v[0]), 0.25));
    }, in);
  }
}

TEST_CASE("random 3-layer MLP gradient matches finite differences") {
  Rng rng(11);
  std::vector<Tensor> in = {
      random_tensor({4, 2}, rng),            // x
      random_tensor({2, 8}, rng, 0.5), random_tensor({8}, rng, 0.1),
      random_tensor({8, 8}, rng, 0.5), random_tensor({8}, rng, 0.1),
      random_tensor({8, 2}, rng, 0.5), random_tensor({2}, rng, 0.1),
  };
  gradcheck([](Tape& t, const std::vector<Value>& v) {
    Value h1 = t.silu(t.affine(v[0], v[1], v[2]));
    Value h2 = t.silu(t.affine(h1, v[3], v[4]));
    Value out = t.affine(h2, v[5], v[6]);
    return t.mean(t.mul(out, out));
  }, in);
}

TEST_CASE("determinism: identical seed gives bit-identical results") {
  auto run = [] {
    Rng rng(123);
    Tensor x = random_tensor({4, 4}, rng);
    Tape tape;
    Value v = tape.leaf(x);
    Value loss = tape.squared_l2(tape.silu(tape.matmul(v, v)));
    tape.backward(loss);
    return std::make_pair(loss.scalar(), tape.grad(v.id).vec());
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(5);
  Tensor x0 = random_tensor({3, 3}, rng);
  double a = 2.5, b = -0.75;

  auto grads = [&](double ca, double cb) {
    Tape tape;
    Value x = tape.leaf(x0);
    Value l1 = tape.squared_l2(tape.silu(x));
    Value l2 = tape.mean(tape.mul(x, x));
    tape.backward(tape.add(tape.scale(l1, ca), tape.scale(l2, cb)));
    return tape.grad(x.id);
  };

  Tensor ga = grads(1, 0), gb = grads(0, 1), gab = grads(a, b);
  for (std::size_t i = 0; i < gab.size(); ++i)
    CHECK(gab[i] == Catch::Approx(a * ga[i] + b * gb[i]).margin(1e-12));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  AdamState st;
  ParamMap params{{"p", Tensor({2}, {1.0, -2.0})}};
  GradMap grads{{"p", Tensor::zeros({2})}};
  adam_step(st, params, grads);
  CHECK(params["p"][0] == 1.0);
  CHECK(params["p"][1] == -2.0);
}

TEST_CASE("adam: first step with unit gradient") {
  // Bias correction makes the first step -lr * 1/(1+eps).
  AdamState st;
  ParamMap params{{"p", Tensor({1}, {0.0})}};
  GradMap grads{{"p", Tensor({1}, {1.0})}};
  adam_step(st, params, grads);
  CHECK(params["p"][0] == Catch::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-9));
  CHECK(st.step == 1);
}

TEST_CASE("adam: constant gradient keeps step magnitude near lr") {
  AdamState st;
  ParamMap params{{"p", Tensor({1}, {0.0})}};
  GradMap grads{{"p", Tensor({1}, {0.37})}};
  adam_step(st, params, grads);
  double d1 = std::abs(params["p"][0]);
  double before = params["p"][0];
  adam_step(st, params, grads);
  double d2 = std::abs(params["p"][0] - before);
  CHECK(d2 <= d1 * (1.0 + 1e-6));
}

TEST_CASE("adam: non-finite gradient names the parameter") {
  AdamState st;
  ParamMap params{{"weights.w1", Tensor({1}, {0.0})}};
  GradMap grads{{"weights.w1", Tensor({1}, {std::nan("")})}};
  CHECK_THROWS_WITH(adam_step(st, params, grads),
                    Catch::Matchers::ContainsSubstring("weights.w1"));
}
