#include <doctest.h>

#include <random>

#include "rla/aggregation.hpp"
#include "rla/error.hpp"
#include "rla/model_zoo.hpp"
#include "rla/ops.hpp"
#include "rla/verify.hpp"

using namespace rla;

namespace {

// A residual block whose branch is one conv over the block input.
struct ToyBlock {
  ParamId weight;
  BlockFn<double> fn(int pad = 1) const {
    const ParamId w = weight;
    return [w, pad](Graph<double>& g, Var in, Var x_prev) {
      const Var y = conv2d(g, in, g.parameter(w), ConvAttrs{1, pad});
      return BlockOutputs{y, x_prev, add(g, x_prev, y)};
    };
  }
};

struct ToyStage {
  ParamStore<double> store;
  RlaStage stage;
  std::vector<ToyBlock> blocks;
  RlaConfig cfg;

  ToyStage(int n_blocks, std::int64_t channels, int k, RlaConfig c, std::uint64_t seed = 1) : cfg(c) {
    cfg.k = k;
    std::mt19937_64 rng(seed);
    stage = make_rla_stage(store, "s", 1, n_blocks, channels, k, std::nullopt, cfg, rng);
    for (int b = 0; b < n_blocks; ++b) {
      const std::int64_t in = channels + (cfg.exchange ? k : 0);
      blocks.push_back(ToyBlock{store.create("block" + std::to_string(b),
                                             Tensor<double>::randn(Shape{channels, in, 3, 3}, rng, 0.2),
                                             ParamRole::conv_weight)});
    }
  }
};

Tensor<double> dirac3x3(std::int64_t k) {
  Tensor<double> t(Shape{k, k, 3, 3});
  for (std::int64_t c = 0; c < k; ++c) t.at(c, c, 1, 1) = 1.0;
  return t;
}

}  // namespace

TEST_CASE("variant table: odd variants add before the recurrent conv") {
  CHECK(wiring_of(RlaVariant::v1).tap == RlaTap::residual);
  CHECK(wiring_of(RlaVariant::v1).merge == RlaMerge::add_then_recurrent);
  CHECK(wiring_of(RlaVariant::v2).merge == RlaMerge::recurrent_then_add);
  CHECK(wiring_of(RlaVariant::v3).tap == RlaTap::output);
  CHECK(wiring_of(RlaVariant::v6).tap == RlaTap::shortcut);
  for (const auto v : {RlaVariant::v1, RlaVariant::v2, RlaVariant::v3, RlaVariant::v4, RlaVariant::v5, RlaVariant::v6}) {
    CHECK(parse_variant(to_string(v)) == v);
  }
  CHECK_THROWS_AS(parse_variant("v7"), ValueError);
}

TEST_CASE("shared stages alias one g1/g2 buffer, unshared stages own one per block") {
  RlaConfig shared;
  ToyStage a(4, 8, 3, shared);
  std::set<std::int32_t> g1;
  std::set<std::int32_t> bn;
  for (int b = 0; b < 4; ++b) {
    g1.insert(a.store.group_of(a.stage.conv1x1[b]));
    bn.insert(a.store.group_of(a.stage.bn[b].gamma));
  }
  CHECK(g1.size() == 1);
  CHECK(bn.size() == 4);

  RlaConfig unshared;
  unshared.sharing = Sharing::unshared;
  ToyStage u(4, 8, 3, unshared);
  std::set<std::int32_t> ug;
  for (int b = 0; b < 4; ++b) ug.insert(u.store.group_of(u.stage.conv3x3[b]));
  CHECK(ug.size() == 4);
}

TEST_CASE("zero block weights and zero hidden state: skip is identity and h stays zero") {
  ToyStage ts(1, 4, 2, RlaConfig{});
  ts.store.tensor(ts.blocks[0].weight).fill(0.0);
  std::mt19937_64 rng(2);
  Graph<double> g(GraphMode::eval, &ts.store);
  const auto x = Tensor<double>::randn(Shape{2, 4, 5, 5}, rng);
  const RlaStep s = rla_block_forward(g, g.input(x), g.input(Tensor<double>(Shape{2, 2, 5, 5})),
                                      ts.blocks[0].fn(), ts.stage, 0, ts.cfg);
  CHECK(max_abs_diff(g.value(s.x), x) == 0.0);
  for (const double v : g.value(s.h).data()) CHECK(v == 0.0);
}

TEST_CASE("linear mode with identity g1 and Dirac g2 accumulates the residuals") {
  RlaConfig cfg;
  cfg.linear_mode = true;
  ToyStage ts(6, 1, 1, cfg);
  ts.store.tensor(ts.stage.conv1x1[0]).fill(1.0);
  ts.store.tensor(ts.stage.conv3x3[0]) = dirac3x3(1);
  std::mt19937_64 rng(3);
  Graph<double> g(GraphMode::eval, &ts.store);
  Var x = g.input(Tensor<double>::randn(Shape{2, 1, 6, 6}, rng));
  Var h = g.input(Tensor<double>(Shape{2, 1, 6, 6}));
  Tensor<double> running(Shape{2, 1, 6, 6});
  for (int b = 0; b < 6; ++b) {
    const RlaStep s = rla_block_forward(g, x, h, ts.blocks[b].fn(), ts.stage, b, ts.cfg);
    const Tensor<double>& y = g.value(s.residual);
    for (std::int64_t i = 0; i < y.numel(); ++i) running[i] += y[i];
    CHECK(max_abs_diff(g.value(s.h), running) == 0.0);
    x = s.x;
    h = s.h;
  }
}

TEST_CASE("linear-mode hidden state equals the brute-force composition sum") {
  for (const auto variant : {RlaVariant::v1, RlaVariant::v2}) {
    RlaConfig cfg;
    cfg.linear_mode = true;
    cfg.variant = variant;
    ToyStage ts(10, 6, 3, cfg, 11);
    std::mt19937_64 rng(4);
    Graph<double> g(GraphMode::eval, &ts.store);
    Var x = g.input(Tensor<double>::randn(Shape{2, 6, 5, 5}, rng));
    Var h = g.input(Tensor<double>(Shape{2, 3, 5, 5}));
    std::vector<Tensor<double>> taps;
    std::vector<Tensor<double>> hidden;
    for (int b = 0; b < 10; ++b) {
      const RlaStep s = rla_block_forward(g, x, h, ts.blocks[b].fn(), ts.stage, b, ts.cfg);
      taps.push_back(g.value(s.residual));
      hidden.push_back(g.value(s.h));
      x = s.x;
      h = s.h;
    }
    const auto expected = verify::linear_aggregation_oracle(taps, ts.store.tensor(ts.stage.conv1x1[0]),
                                                            ts.store.tensor(ts.stage.conv3x3[0]),
                                                            variant == RlaVariant::v1);
    for (std::size_t t = 0; t < hidden.size(); ++t) CHECK(relative_l2_error(hidden[t], expected[t]) <= 1e-5);
  }
}

TEST_CASE("one-block stage reduces to h1 = g2(g1(y1))") {
  RlaConfig cfg;
  cfg.linear_mode = true;
  ToyStage ts(1, 4, 2, cfg);
  std::mt19937_64 rng(5);
  Graph<double> g(GraphMode::eval, &ts.store);
  const RlaStep s = rla_block_forward(g, g.input(Tensor<double>::randn(Shape{1, 4, 4, 4}, rng)),
                                      g.input(Tensor<double>(Shape{1, 2, 4, 4})), ts.blocks[0].fn(), ts.stage, 0,
                                      ts.cfg);
  const auto ref = verify::naive_conv2d(verify::naive_conv2d(g.value(s.residual), ts.store.tensor(ts.stage.conv1x1[0])),
                                        ts.store.tensor(ts.stage.conv3x3[0]), 1, 1);
  CHECK(relative_l2_error(g.value(s.h), ref) <= 1e-12);
}

TEST_CASE("mismatched hidden state is rejected with stage and block") {
  ToyStage ts(3, 4, 2, RlaConfig{});
  Graph<double> g(GraphMode::eval, &ts.store);
  try {
    rla_block_forward(g, g.input(Tensor<double>(Shape{1, 4, 4, 4})), g.input(Tensor<double>(Shape{1, 2, 4, 3})),
                      ts.blocks[2].fn(), ts.stage, 2, ts.cfg);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("stage 1") != std::string::npos);
    CHECK(msg.find("block 2") != std::string::npos);
  }
}

TEST_CASE("stage transition pools the hidden state by two") {
  ToyStage ts(1, 4, 4, RlaConfig{});
  Graph<double> g(GraphMode::eval, &ts.store);
  const Var c = rla_stage_transition(g, g.input(Tensor<double>::full(Shape{1, 4, 8, 8}, 0.375)), ts.stage, 4, 4);
  for (const double v : g.value(c).data()) CHECK(v == 0.375);

  Tensor<double> r(Shape{1, 4, 8, 8});
  for (std::int64_t i = 0; i < r.numel(); ++i) r[i] = static_cast<double>(i);
  const Var rin = g.input(r);
  CHECK(max_abs_diff(g.value(rla_stage_transition(g, rin, ts.stage, 4, 4)), g.value(avgpool2d(g, rin))) == 0.0);

  const Var z = rla_stage_transition(g, g.input(Tensor<double>(Shape{1, 4, 8, 8})), ts.stage, 4, 4);
  for (const double v : g.value(z).data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(rla_stage_transition(g, rin, ts.stage, 3, 3), ShapeError);
}

TEST_CASE("head: zero hidden state ignores the hidden-state classifier columns") {
  std::mt19937_64 rng(6);
  ParamStore<double> store;
  const ParamId w = store.create("w", Tensor<double>::randn(Shape{10, 20, 1, 1}, rng), ParamRole::linear_weight);
  const ParamId b = store.create("b", Tensor<double>::randn(Shape{10, 1, 1, 1}, rng), ParamRole::bias);
  Tensor<double> masked = store.tensor(w);
  for (std::int64_t o = 0; o < 10; ++o)
    for (std::int64_t c = 16; c < 20; ++c) masked.at(o, c, 0, 0) = 0.0;
  const ParamId wm = store.create("wm", masked, ParamRole::linear_weight);

  Graph<double> g(GraphMode::eval, &store);
  const Var x = g.input(Tensor<double>::randn(Shape{3, 16, 4, 4}, rng));
  const Var h0 = g.input(Tensor<double>(Shape{3, 4, 4, 4}));
  const Var hr = g.input(Tensor<double>::randn(Shape{3, 4, 4, 4}, rng));
  CHECK(max_abs_diff(g.value(rla_head(g, x, h0, w, b)), g.value(rla_head(g, x, hr, wm, b))) <= 1e-14);
}

TEST_CASE("head: zero classifier returns the bias; CIFAR final shapes") {
  std::mt19937_64 rng(7);
  ParamStore<double> store;
  const ParamId w = store.create("w", Tensor<double>(Shape{10, 268, 1, 1}), ParamRole::linear_weight);
  const ParamId b = store.create("b", Tensor<double>::randn(Shape{10, 1, 1, 1}, rng), ParamRole::bias);
  Graph<double> g(GraphMode::eval, &store);
  const Var logits = rla_head(g, g.input(Tensor<double>::randn(Shape{2, 256, 8, 8}, rng)),
                              g.input(Tensor<double>::randn(Shape{2, 12, 8, 8}, rng)), w, b);
  CHECK(g.shape(logits) == Shape{2, 10, 1, 1});
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t k = 0; k < 10; ++k) CHECK(g.value(logits).at(n, k, 0, 0) == store.tensor(b)[k]);
  CHECK_THROWS_AS(rla_head(g, g.input(Tensor<double>(Shape{2, 256, 8, 8})), g.input(Tensor<double>(Shape{2, 12, 4, 4})),
                           w, b),
                  ShapeError);
}

namespace {

struct DenseFixture {
  ParamStore<double> store;
  std::vector<DenseLayer> unshared;
  std::vector<DenseLayer> shared;
  SharedBank bank;
  static constexpr std::int64_t c0 = 5;
  static constexpr std::int64_t growth = 3;
  static constexpr std::int64_t width = 6;

  explicit DenseFixture(int layers) {
    std::mt19937_64 rng(8);
    for (int i = 0; i + 1 < layers; ++i) {
      bank.convs.push_back(add_conv(store, "bank." + std::to_string(i + 1), Shape{width, growth, 1, 1}, rng));
    }
    for (int t = 0; t < layers; ++t) {
      const std::string p = "l" + std::to_string(t);
      const std::int64_t in = c0 + t * growth;
      DenseLayer u{add_batchnorm(store, p + ".bn1", in), add_conv(store, p + ".conv1", Shape{width, in, 1, 1}, rng),
                   add_batchnorm(store, p + ".bn2", width), add_conv(store, p + ".conv3", Shape{growth, width, 3, 3}, rng)};
      DenseLayer s = u;
      s.conv1 = add_conv(store, p + ".conv1s", Shape{width, c0, 1, 1}, rng);
      unshared.push_back(u);
      shared.push_back(s);
    }
  }
};

}  // namespace

TEST_CASE("dense layer 1: all three modes agree when only x0 exists") {
  DenseFixture f(1);
  // Make the x0 slices identical across the two parameter sets.
  f.store.tensor(f.shared[0].conv1) = f.store.tensor(f.unshared[0].conv1);
  std::mt19937_64 rng(9);
  const auto x0 = Tensor<double>::randn(Shape{2, DenseFixture::c0, 4, 4}, rng);
  std::vector<Tensor<double>> outs;
  for (const DenseMode m : {DenseMode::dense_unshared, DenseMode::by_lag, DenseMode::by_ordinal}) {
    Graph<double> g(GraphMode::eval, &f.store);
    DenseBuffer buf{m, g.input(x0), {}};
    outs.push_back(g.value(dense_layer_forward(g, buf, m == DenseMode::dense_unshared ? f.unshared[0] : f.shared[0],
                                               m == DenseMode::dense_unshared ? nullptr : &f.bank)));
    CHECK(buf.slots.size() == 1);
  }
  CHECK(max_abs_diff(outs[0], outs[1]) == 0.0);
  CHECK(max_abs_diff(outs[0], outs[2]) == 0.0);
}

TEST_CASE("buffer orders: by_lag most recent first, by_ordinal chronological") {
  DenseBuffer lag{DenseMode::by_lag, Var{0}, {}};
  DenseBuffer ord{DenseMode::by_ordinal, Var{0}, {}};
  for (int i = 1; i <= 3; ++i) {
    lag.push(Var{i});
    ord.push(Var{i});
  }
  CHECK(lag.ordered_inputs() == std::vector<Var>{Var{0}, Var{3}, Var{2}, Var{1}});
  CHECK(ord.ordered_inputs() == std::vector<Var>{Var{0}, Var{1}, Var{2}, Var{3}});
}

TEST_CASE("by_lag with zero shared convs depends only on the x0 path") {
  DenseFixture f(4);
  for (const ParamId id : f.bank.convs) f.store.tensor(id).fill(0.0);
  std::mt19937_64 rng(10);
  const auto x0 = Tensor<double>::randn(Shape{2, DenseFixture::c0, 4, 4}, rng);
  std::vector<Tensor<double>> last;
  for (double scale : {1.0, -3.0}) {
    Graph<double> g(GraphMode::eval, &f.store);
    DenseBuffer buf{DenseMode::by_lag, g.input(x0), {}};
    for (int t = 0; t < 3; ++t) {
      buf.push(g.input(Tensor<double>::randn(Shape{2, DenseFixture::growth, 4, 4}, rng, scale)));
    }
    last.push_back(g.value(dense_layer_forward(g, buf, f.shared[3], &f.bank)));
  }
  CHECK(max_abs_diff(last[0], last[1]) == 0.0);
}

TEST_CASE("shared dense layer equals the explicit sum of per-source convs") {
  DenseFixture f(4);
  std::mt19937_64 rng(11);
  for (const DenseMode mode : {DenseMode::by_lag, DenseMode::by_ordinal}) {
    Graph<double> g(GraphMode::eval, &f.store);
    DenseBuffer buf{mode, g.input(Tensor<double>::randn(Shape{2, DenseFixture::c0, 4, 4}, rng)), {}};
    for (int t = 0; t < 3; ++t) buf.push(g.input(Tensor<double>::randn(Shape{2, DenseFixture::growth, 4, 4}, rng)));
    const auto inputs = buf.ordered_inputs();
    const Var out = dense_layer_forward(g, buf, f.shared[3], &f.bank);

    // Reference: BN-ReLU each source with its channel slice of bn1, then
    // Conv1_0 on x0 plus Conv1_s on the s-th source, summed.
    const Tensor<double>& gamma = f.store.tensor(f.shared[3].bn1.gamma);
    const Tensor<double>& beta = f.store.tensor(f.shared[3].bn1.beta);
    const Tensor<double>& mean = f.store.tensor(f.shared[3].bn1.mean);
    const Tensor<double>& var = f.store.tensor(f.shared[3].bn1.var);
    Tensor<double> sum(Shape{2, DenseFixture::width, 4, 4});
    std::int64_t off = 0;
    for (std::size_t s = 0; s < inputs.size(); ++s) {
      Tensor<double> a = g.value(inputs[s]);
      const Shape sh = a.shape();
      for (std::int64_t n = 0; n < sh.n; ++n)
        for (std::int64_t c = 0; c < sh.c; ++c)
          for (std::int64_t i = 0; i < 16; ++i) {
            double& v = a.at(n, c, i / 4, i % 4);
            v = gamma[off + c] * (v - mean[off + c]) / std::sqrt(var[off + c] + 1e-5) + beta[off + c];
            v = std::max(v, 0.0);
          }
      const ParamId w = s == 0 ? f.shared[3].conv1 : f.bank.convs[s - 1];
      const auto part = verify::naive_conv2d(a, f.store.tensor(w));
      for (std::int64_t i = 0; i < sum.numel(); ++i) sum[i] += part[i];
      off += sh.c;
    }
    const BnIds& bn2 = f.shared[3].bn2;
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t c = 0; c < DenseFixture::width; ++c)
        for (std::int64_t i = 0; i < 16; ++i) {
          double& v = sum.at(n, c, i / 4, i % 4);
          v = f.store.tensor(bn2.gamma)[c] * (v - f.store.tensor(bn2.mean)[c]) /
                  std::sqrt(f.store.tensor(bn2.var)[c] + 1e-5) +
              f.store.tensor(bn2.beta)[c];
          v = std::max(v, 0.0);
        }
    const auto expected = verify::naive_conv2d(sum, f.store.tensor(f.shared[3].conv3), 1, 1);
    CHECK(relative_l2_error(g.value(out), expected) <= 1e-10);
  }
}

TEST_CASE("dense_unshared conv1 equals the sum of its channel-slice convs") {
  DenseFixture f(4);
  std::mt19937_64 rng(12);
  std::vector<Tensor<double>> inputs{Tensor<double>::randn(Shape{2, DenseFixture::c0, 4, 4}, rng)};
  for (int t = 0; t < 3; ++t) inputs.push_back(Tensor<double>::randn(Shape{2, DenseFixture::growth, 4, 4}, rng));
  CHECK(conv1_partition_check(f.store.tensor(f.unshared[3].conv1), inputs) <= 1e-5);
}

TEST_CASE("shared dense layer beyond the bank is rejected") {
  DenseFixture f(3);
  f.bank.convs.pop_back();
  Graph<double> g(GraphMode::eval, &f.store);
  DenseBuffer buf{DenseMode::by_lag, g.input(Tensor<double>(Shape{1, DenseFixture::c0, 2, 2})), {}};
  buf.push(g.input(Tensor<double>(Shape{1, DenseFixture::growth, 2, 2})));
  buf.push(g.input(Tensor<double>(Shape{1, DenseFixture::growth, 2, 2})));
  CHECK_THROWS_AS(dense_layer_forward(g, buf, f.shared[2], &f.bank), ValueError);
}

TEST_CASE("partition identity examples") {
  std::mt19937_64 rng(13);
  const auto w = Tensor<double>::randn(Shape{8, 48, 1, 1}, rng);
  const std::vector<Tensor<double>> zeros(4, Tensor<double>(Shape{2, 12, 5, 5}));
  CHECK(conv1_partition_check(w, zeros) == 0.0);
  const std::vector<Tensor<double>> single{Tensor<double>::randn(Shape{2, 48, 5, 5}, rng)};
  CHECK(conv1_partition_check(w, single) == 0.0);
  std::vector<Tensor<double>> four;
  for (int i = 0; i < 4; ++i) four.push_back(Tensor<double>::randn(Shape{2, 12, 5, 5}, rng));
  CHECK(conv1_partition_check(w, four) <= 1e-10);
  four.pop_back();
  CHECK_THROWS_AS(conv1_partition_check(w, four), ShapeError);
}

TEST_CASE("partition suite: both routes within 1e-10 over 50 draws") {
  const auto r = verify::partition_suite(50, 99);
  for (const auto& c : r.checks) {
    CAPTURE(c.name);
    CHECK(c.passed);
  }
}

TEST_CASE("property: zero image keeps the linear-mode hidden state at zero through a stage") {
  ModelSpec spec = ModelSpec::from_name("rla-resnet164");
  spec.blocks = 3;
  spec.rla.linear_mode = true;
  const Model<double> model(spec);
  Graph<double> g(GraphMode::eval, const_cast<ParamStore<double>*>(&model.params()));
  ForwardRecord rec;
  model.forward(g, g.input(Tensor<double>(model.input_shape(2))), &rec);
  for (const Var h : rec.hidden.at(0)) {
    for (const double v : g.value(h).data()) CHECK(v == 0.0);
  }
}

TEST_CASE("no-exchange blocks see only x; the head still receives h") {
  RlaConfig cfg;
  cfg.exchange = false;
  ToyStage ts(1, 4, 2, cfg);
  std::mt19937_64 rng(14);
  Graph<double> g(GraphMode::eval, &ts.store);
  const auto x = Tensor<double>::randn(Shape{1, 4, 4, 4}, rng);
  const RlaStep a = rla_block_forward(g, g.input(x), g.input(Tensor<double>(Shape{1, 2, 4, 4})), ts.blocks[0].fn(),
                                      ts.stage, 0, ts.cfg);
  const RlaStep b = rla_block_forward(g, g.input(x), g.input(Tensor<double>::randn(Shape{1, 2, 4, 4}, rng)),
                                      ts.blocks[0].fn(), ts.stage, 0, ts.cfg);
  CHECK(max_abs_diff(g.value(a.x), g.value(b.x)) == 0.0);
  CHECK(max_abs_diff(g.value(a.h), g.value(b.h)) > 0.0);
}
