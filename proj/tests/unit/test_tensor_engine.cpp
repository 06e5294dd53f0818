#include <doctest.h>

#include <cmath>
#include <random>

#include "rla/error.hpp"
#include "rla/ops.hpp"
#include "rla/verify.hpp"

using namespace rla;

namespace {

Tensor<double> ramp(Shape s) {
  Tensor<double> t(s);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(i);
  return t;
}

}  // namespace

TEST_CASE("tensor keeps data length equal to the shape volume") {
  const Tensor<double> t(Shape{2, 3, 4, 5});
  CHECK(t.numel() == 120);
  CHECK(t.data().size() == 120);
  CHECK_THROWS_AS(Tensor<double>(Shape{2, 3, 1, 1}, std::vector<double>(5)), ShapeError);
}

TEST_CASE("conv2d: identity 1x1 kernel returns the input") {
  std::mt19937_64 rng(1);
  Graph<double> g(GraphMode::eval);
  const auto x = Tensor<double>::randn(Shape{2, 3, 5, 5}, rng);
  Tensor<double> w(Shape{3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) w.at(c, c, 0, 0) = 1.0;
  const Var y = conv2d(g, g.input(x), g.input(w));
  CHECK(max_abs_diff(g.value(y), x) == 0.0);
}

TEST_CASE("conv2d: all-ones 3x3 kernel on a constant 3x3 input gives 9c") {
  Graph<double> g(GraphMode::eval);
  const Var y = conv2d(g, g.input(Tensor<double>::full(Shape{1, 1, 3, 3}, 0.7)),
                       g.input(Tensor<double>::full(Shape{1, 1, 3, 3}, 1.0)));
  CHECK(g.shape(y) == Shape{1, 1, 1, 1});
  CHECK(g.value(y)[0] == doctest::Approx(6.3).epsilon(1e-15));
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  std::mt19937_64 rng(2);
  for (const auto& [stride, pad] : {std::pair{1, 0}, std::pair{1, 1}, std::pair{2, 1}, std::pair{2, 0}}) {
    Graph<double> g(GraphMode::eval);
    const auto x = Tensor<double>::randn(Shape{2, 3, 8, 8}, rng);
    const auto w = Tensor<double>::randn(Shape{4, 3, 3, 3}, rng);
    const Var y = conv2d(g, g.input(x), g.input(w), ConvAttrs{stride, pad});
    const auto ref = verify::naive_conv2d(x, w, stride, pad);
    REQUIRE(g.shape(y) == ref.shape());
    CHECK(relative_l2_error(g.value(y), ref) <= 1e-12);
  }
}

TEST_CASE("conv2d shape errors name the dimensions") {
  Graph<double> g(GraphMode::eval);
  const Var x = g.input(Tensor<double>(Shape{1, 3, 4, 4}));
  const Var w = g.input(Tensor<double>(Shape{2, 5, 3, 3}));
  try {
    conv2d(g, x, w);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find('3') != std::string::npos);
    CHECK(msg.find('5') != std::string::npos);
  }
  CHECK_THROWS_AS(conv2d(g, x, g.input(Tensor<double>(Shape{2, 3, 3, 3})), ConvAttrs{0, 0}), ShapeError);
}

TEST_CASE("batchnorm2d train: constant channels map to beta") {
  Graph<double> g(GraphMode::train);
  Tensor<double> x(Shape{2, 2, 3, 3});
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t h = 0; h < 3; ++h)
      for (std::int64_t w = 0; w < 3; ++w) {
        x.at(n, 0, h, w) = 4.0;
        x.at(n, 1, h, w) = -1.5;
      }
  const Var y = batchnorm2d(g, g.input(x), g.input(Tensor<double>::full(Shape{2, 1, 1, 1}, 3.0)),
                            g.input(Tensor<double>(Shape{2, 1, 1, 1}, std::vector<double>{0.25, -2.0})),
                            static_cast<Tensor<double>*>(nullptr), static_cast<Tensor<double>*>(nullptr));
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t i = 0; i < 9; ++i) {
      CHECK(g.value(y).at(n, 0, i / 3, i % 3) == 0.25);
      CHECK(g.value(y).at(n, 1, i / 3, i % 3) == -2.0);
    }
}

TEST_CASE("batchnorm2d eval with unit running stats is the identity up to eps") {
  std::mt19937_64 rng(3);
  Graph<double> g(GraphMode::eval);
  const auto x = Tensor<double>::randn(Shape{2, 3, 4, 4}, rng);
  Tensor<double> mean(Shape{3, 1, 1, 1});
  Tensor<double> var = Tensor<double>::full(Shape{3, 1, 1, 1}, 1.0);
  const Var y = batchnorm2d(g, g.input(x), g.input(Tensor<double>::full(Shape{3, 1, 1, 1}, 1.0)),
                            g.input(Tensor<double>(Shape{3, 1, 1, 1})), &mean, &var);
  CHECK(max_abs_diff(g.value(y), x) <= 1e-5 * 5.0);
}

TEST_CASE("batchnorm2d train: per-channel output mean is beta and std is gamma") {
  std::mt19937_64 rng(4);
  Graph<double> g(GraphMode::train);
  const auto x = Tensor<double>::randn(Shape{4, 2, 5, 5}, rng, 3.0);
  const std::vector<double> gamma{1.7, 0.4};
  const std::vector<double> beta{-0.3, 2.0};
  Tensor<double> rm(Shape{2, 1, 1, 1});
  Tensor<double> rv = Tensor<double>::full(Shape{2, 1, 1, 1}, 1.0);
  const Var y = batchnorm2d(g, g.input(x), g.input(Tensor<double>(Shape{2, 1, 1, 1}, gamma)),
                            g.input(Tensor<double>(Shape{2, 1, 1, 1}, beta)), &rm, &rv);
  const Tensor<double>& v = g.value(y);
  for (std::int64_t c = 0; c < 2; ++c) {
    double s = 0, sq = 0, xs = 0, xsq = 0;
    const double m = 4 * 25;
    for (std::int64_t n = 0; n < 4; ++n)
      for (std::int64_t i = 0; i < 25; ++i) {
        const double o = v.at(n, c, i / 5, i % 5);
        const double in = x.at(n, c, i / 5, i % 5);
        s += o;
        sq += o * o;
        xs += in;
        xsq += in * in;
      }
    const double mean = s / m;
    CHECK(mean == doctest::Approx(beta[c]).epsilon(1e-5));
    CHECK(std::sqrt(sq / m - mean * mean) == doctest::Approx(gamma[c]).epsilon(1e-5));
    // Running stats move 10% of the way to the batch statistics (unbiased variance).
    const double bmean = xs / m;
    const double bvar = (xsq / m - bmean * bmean) * m / (m - 1);
    CHECK(rm[c] == doctest::Approx(0.1 * bmean).epsilon(1e-12));
    CHECK(rv[c] == doctest::Approx(0.9 + 0.1 * bvar).epsilon(1e-12));
  }
}

TEST_CASE("batchnorm2d rejects a single-image training batch") {
  Graph<double> g(GraphMode::train);
  CHECK_THROWS_AS(batchnorm2d(g, g.input(Tensor<double>(Shape{1, 2, 3, 3})),
                              g.input(Tensor<double>(Shape{2, 1, 1, 1})), g.input(Tensor<double>(Shape{2, 1, 1, 1})),
                              static_cast<Tensor<double>*>(nullptr), static_cast<Tensor<double>*>(nullptr)),
                  ValueError);
}

TEST_CASE("backward of sum(x) is all ones") {
  std::mt19937_64 rng(5);
  Graph<double> g(GraphMode::train);
  const Var x = g.input(Tensor<double>::randn(Shape{2, 3, 2, 2}, rng), true);
  g.backward(weighted_sum(g, x));
  const auto grad = g.grad(x);
  for (const double v : grad.data()) CHECK(v == 1.0);
}

TEST_CASE("backward on a non-existent loss node is a state error") {
  Graph<double> g(GraphMode::train);
  CHECK_THROWS_AS(g.backward(Var{}), StateError);
  CHECK_THROWS_AS(g.backward(Var{3}), StateError);
}

TEST_CASE("shared parameter gradient equals the sum of two unshared clones") {
  std::mt19937_64 rng(6);
  const auto x = Tensor<double>::randn(Shape{2, 4, 3, 3}, rng);
  const auto w = Tensor<double>::randn(Shape{4, 4, 1, 1}, rng);
  const auto proj = Tensor<double>::randn(Shape{2, 4, 3, 3}, rng);

  ParamStore<double> shared;
  const ParamId a = shared.create("a", w, ParamRole::conv_weight);
  const ParamId b = shared.alias("b", a);
  ParamStore<double> split;
  const ParamId c1 = split.create("c1", w, ParamRole::conv_weight);
  const ParamId c2 = split.create("c2", w, ParamRole::conv_weight);

  const auto run = [&](ParamStore<double>& store, ParamId p, ParamId q) {
    Graph<double> g(GraphMode::train, &store);
    const Var h = tanh(g, conv2d(g, g.input(x), g.parameter(p)));
    g.backward(weighted_sum(g, conv2d(g, h, g.parameter(q)), proj));
  };
  run(shared, a, b);
  run(split, c1, c2);
  const auto gs = shared.tensor(a).grad();
  const auto g1 = split.tensor(c1).grad();
  const auto g2 = split.tensor(c2).grad();
  CHECK(shared.group_of(a) == shared.group_of(b));
  for (std::size_t i = 0; i < gs.size(); ++i) CHECK(std::abs(gs[i] - (g1[i] + g2[i])) <= 1e-10);
}

TEST_CASE("pooling and reduction examples") {
  Graph<double> g(GraphMode::eval);
  const Var p = avgpool2d(g, g.input(ramp(Shape{1, 1, 4, 4})));
  const std::vector<double> expect{2.5, 4.5, 10.5, 12.5};
  for (int i = 0; i < 4; ++i) CHECK(g.value(p)[i] == expect[i]);

  const Var gp = global_avgpool(g, g.input(Tensor<double>::full(Shape{2, 3, 5, 5}, 1.25)));
  CHECK(g.shape(gp) == Shape{2, 3, 1, 1});
  for (const double v : g.value(gp).data()) CHECK(v == doctest::Approx(1.25).epsilon(1e-15));

  const Var m = maxpool2d(g, g.input(ramp(Shape{1, 1, 4, 4})), PoolAttrs{2, 2, 0});
  const std::vector<double> mexpect{5, 7, 13, 15};
  for (int i = 0; i < 4; ++i) CHECK(g.value(m)[i] == mexpect[i]);
}

TEST_CASE("softmax_xent of equal logits over 10 classes is ln 10") {
  Graph<double> g(GraphMode::eval);
  const std::vector<std::int64_t> labels{0, 9, 4};
  const Var l = softmax_xent(g, g.input(Tensor<double>::full(Shape{3, 10, 1, 1}, 0.3)),
                             std::span<const std::int64_t>(labels));
  CHECK(g.value(l)[0] == doctest::Approx(std::log(10.0)).epsilon(1e-14));
  const std::vector<std::int64_t> bad{0, 10, 4};
  CHECK_THROWS_AS(softmax_xent(g, g.input(Tensor<double>(Shape{3, 10, 1, 1})), std::span<const std::int64_t>(bad)),
                  ValueError);
}

TEST_CASE("concat requires matching batch and spatial sizes") {
  Graph<double> g(GraphMode::eval);
  const std::vector<Var> parts{g.input(Tensor<double>(Shape{2, 3, 4, 4})), g.input(Tensor<double>(Shape{2, 1, 4, 3}))};
  CHECK_THROWS_AS(concat_channels(g, std::span<const Var>(parts)), ShapeError);
}

TEST_CASE("property: inferred shapes equal executed shapes") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> dim(1, 6);
  for (int trial = 0; trial < 40; ++trial) {
    Graph<double> g(GraphMode::eval);
    const Shape xs{dim(rng), dim(rng), dim(rng) + 3, dim(rng) + 3};
    const Shape ws{dim(rng), xs.c, 3, 3};
    const ConvAttrs ca{dim(rng) % 2 + 1, dim(rng) % 2};
    const Var x = g.input(Tensor<double>::randn(xs, rng));
    const Var y = conv2d(g, x, g.input(Tensor<double>::randn(ws, rng)), ca);
    const std::vector<Shape> in{xs, ws};
    CHECK(infer_shape(OpKind::conv2d, in, ca) == g.value(y).shape());
    const PoolAttrs pa{2, 2, 0};
    const Var p = avgpool2d(g, x, pa);
    const std::vector<Shape> pin{xs};
    CHECK(infer_shape(OpKind::avgpool2d, pin, pa) == g.value(p).shape());
  }
}

TEST_CASE("property: bias-free linear ops are linear") {
  std::mt19937_64 rng(8);
  const double a = 0.7;
  const double b = -1.3;
  const auto x = Tensor<double>::randn(Shape{2, 3, 6, 6}, rng);
  const auto y = Tensor<double>::randn(Shape{2, 3, 6, 6}, rng);
  const auto w = Tensor<double>::randn(Shape{4, 3, 3, 3}, rng);
  const auto lw = Tensor<double>::randn(Shape{5, 108, 1, 1}, rng);
  Tensor<double> mix(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) mix[i] = a * x[i] + b * y[i];

  using Fn = std::function<Var(Graph<double>&, Var)>;
  const std::vector<std::pair<const char*, Fn>> fns{
      {"conv2d", [&](Graph<double>& g, Var v) { return conv2d(g, v, g.input(w), ConvAttrs{1, 1}); }},
      {"avgpool2d", [](Graph<double>& g, Var v) { return avgpool2d(g, v); }},
      {"add", [&](Graph<double>& g, Var v) { return add(g, v, v); }},
      {"concat", [](Graph<double>& g, Var v) {
         const std::vector<Var> p{v, v};
         return concat_channels(g, std::span<const Var>(p));
       }},
      {"linear", [&](Graph<double>& g, Var v) { return linear(g, v, g.input(lw)); }},
  };
  for (const auto& [name, f] : fns) {
    CAPTURE(name);
    Graph<double> g(GraphMode::eval);
    const Tensor<double>& fm = g.value(f(g, g.input(mix)));
    const Tensor<double>& fx = g.value(f(g, g.input(x)));
    const Tensor<double>& fy = g.value(f(g, g.input(y)));
    double worst = 0.0;
    for (std::int64_t i = 0; i < fm.numel(); ++i) worst = std::max(worst, std::abs(fm[i] - (a * fx[i] + b * fy[i])));
    CHECK(worst <= 1e-10);
  }
}

TEST_CASE("values stay finite for finite inputs") {
  std::mt19937_64 rng(9);
  Graph<double> g(GraphMode::train);
  const Var x = g.input(Tensor<double>::randn(Shape{2, 3, 4, 4}, rng, 50.0), true);
  const Var y = tanh(g, relu(g, x));
  const std::vector<std::int64_t> labels{0, 1};
  const Var l = softmax_xent(g, linear(g, y, g.input(Tensor<double>::randn(Shape{2, 48, 1, 1}, rng, 30.0))),
                             std::span<const std::int64_t>(labels));
  g.backward(l);
  CHECK_FALSE(g.first_nonfinite().has_value());
  CHECK(g.grad(x).all_finite());
}

TEST_CASE("every op kind passes the finite-difference gradient check") {
  const auto report = verify::gradcheck_suite();
  for (const auto& c : report.checks) {
    CAPTURE(c.name);
    CAPTURE(c.detail);
    CHECK(c.measured <= 1e-4);
  }
}

TEST_CASE("relu propagates NaN") {
  Graph<double> g(GraphMode::eval);
  const Var y = relu(g, g.input(Tensor<double>(Shape{1, 1, 1, 3}, std::vector<double>{-1.0, std::nan(""), 2.0})));
  CHECK(g.value(y)[0] == 0.0);
  CHECK(std::isnan(g.value(y)[1]));
  CHECK(g.value(y)[2] == 2.0);
  CHECK(g.first_nonfinite().has_value());
}
