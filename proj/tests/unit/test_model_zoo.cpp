#include <doctest.h>

#include <cmath>
#include <random>

#include "rla/error.hpp"
#include "rla/model_zoo.hpp"
#include "rla/ops.hpp"

using namespace rla;

namespace {

template <typename T>
ForwardRecord run(const Model<T>& model, const Tensor<T>& images, Tensor<T>* logits = nullptr,
                  GraphMode mode = GraphMode::eval) {
  Graph<T> g(mode, const_cast<ParamStore<T>*>(&model.params()));
  ForwardRecord rec;
  const Var out = model.forward(g, g.input(images), &rec);
  if (logits) *logits = g.value(out);
  return rec;
}

}  // namespace

TEST_CASE("named models and depths") {
  CHECK(Model<double>(ModelSpec::from_name("resnet110")).depth() == 110);
  CHECK(Model<double>(ModelSpec::from_name("resnet164")).depth() == 164);
  CHECK(Model<double>(ModelSpec::from_name("densenet-bc100")).depth() == 100);
  CHECK(ModelSpec::from_name("rla-resnet164").rla.k == 12);
  CHECK_THROWS_AS(ModelSpec::from_name("vgg16"), ValueError);
}

TEST_CASE("section outputs match the architecture tables") {
  for (const char* name : {"resnet110", "resnet164", "densenet-bc100"}) {
    CAPTURE(name);
    const ModelSpec spec = ModelSpec::from_name(name);
    const Model<double> model(spec);
    Graph<double> g(GraphMode::eval, const_cast<ParamStore<double>*>(&model.params()));
    ForwardRecord rec;
    std::mt19937_64 rng(1);
    model.forward(g, g.input(Tensor<double>::randn(model.input_shape(2), rng)), &rec);
    const auto& table = architecture_table(spec.family);
    auto expect = [&](const std::string& section, Var v) {
      for (const auto& row : table) {
        if (row.section != section) continue;
        CAPTURE(section);
        CHECK(g.shape(v) == Shape{2, row.channels, row.resolution, row.resolution});
      }
    };
    expect("stem", rec.stem);
    for (std::size_t s = 0; s < rec.stage_outputs.size(); ++s) expect("stage" + std::to_string(s + 1), rec.stage_outputs[s]);
    expect("pool", rec.pooled);
    expect("fc", rec.logits);
  }
}

TEST_CASE("ImageNet-shape ResNet-50 ends in 1000 logits") {
  ModelSpec spec = ModelSpec::from_name("resnet50");
  const Model<float> model(spec);
  std::mt19937_64 rng(2);
  Tensor<float> logits;
  const auto rec = run(model, Tensor<float>::randn(model.input_shape(1), rng), &logits);
  (void)rec;
  CHECK(logits.shape() == Shape{1, 1000, 1, 1});
}

TEST_CASE("RLA-ResNet-164 blocks read C + k channels and emit k-channel hidden states") {
  const Model<double> model(ModelSpec::from_name("rla-resnet164"));
  const auto& store = model.params();
  const auto& stages = model.res_stages();
  REQUIRE(stages.size() == 3);
  CHECK(store.tensor(stages[0].blocks[0].conv[0]).shape().c == 16 + 12);
  CHECK(store.tensor(stages[0].blocks[1].conv[0]).shape().c == 64 + 12);
  CHECK(store.tensor(stages[2].blocks[5].conv[0]).shape().c == 256 + 12);
  CHECK(stages[0].blocks.size() == 18);

  std::mt19937_64 rng(3);
  Graph<double> g(GraphMode::eval, const_cast<ParamStore<double>*>(&store));
  ForwardRecord rec;
  model.forward(g, g.input(Tensor<double>::randn(model.input_shape(1), rng)), &rec);
  for (std::size_t s = 0; s < 3; ++s) {
    REQUIRE(rec.hidden[s].size() == 18);
    const std::int64_t r = 32 >> s;
    CHECK(g.shape(rec.hidden[s].back()) == Shape{1, 12, r, r});
  }
  CHECK(g.shape(rec.pooled) == Shape{1, 268, 1, 1});
}

TEST_CASE("per-stage k override sets the hidden width of each stage") {
  ModelSpec spec = ModelSpec::from_name("rla-resnet164");
  spec.blocks = 2;
  spec.rla.stage_k = {4, 8, 16};
  const Model<double> model(spec);
  for (std::size_t s = 0; s < 3; ++s) CHECK(model.res_stages()[s].rla->k == spec.rla.stage_k[s]);
}

TEST_CASE("CIFAR backbones normalize before each conv, ResNet-50 after") {
  const auto check = [](const Model<float>& model, bool pre) {
    const auto& store = model.params();
    for (const auto& stage : model.res_stages()) {
      for (const auto& block : stage.blocks) {
        for (std::size_t i = 0; i < block.conv.size(); ++i) {
          const Shape w = store.tensor(block.conv[i]).shape();
          CHECK(store.tensor(block.bn[i].gamma).shape().n == (pre ? w.c : w.n));
        }
      }
    }
  };
  ModelSpec cifar = ModelSpec::from_name("rla-resnet164");
  cifar.blocks = 2;
  check(Model<float>(cifar), true);
  ModelSpec r50 = ModelSpec::from_name("resnet50");
  r50.blocks = 1;
  check(Model<float>(r50), false);
}

TEST_CASE("recurrent unit order: post-activation hidden states are tanh-bounded") {
  for (const ActivationOrder order : {ActivationOrder::pre_act, ActivationOrder::post_act}) {
    ModelSpec spec = ModelSpec::from_name("rla-resnet164");
    spec.blocks = 2;
    spec.rla.order = order;
    Model<double> model(spec);
    auto& store = model.params();
    for (const auto& stage : model.res_stages()) {
      Tensor<double>& g2 = store.tensor(stage.rla->conv3x3[0]);
      for (double& v : g2.data()) v *= 50.0;
    }
    std::mt19937_64 rng(5);
    Graph<double> g(GraphMode::eval, &store);
    ForwardRecord rec;
    model.forward(g, g.input(Tensor<double>::randn(model.input_shape(2), rng)), &rec);
    double peak = 0.0;
    for (const auto& stage : rec.hidden)
      for (const Var h : stage)
        for (const double v : g.value(h).data()) peak = std::max(peak, std::abs(v));
    CAPTURE(to_string(order));
    if (order == ActivationOrder::post_act) {
      CHECK(peak <= 1.0);
    } else {
      CHECK(peak > 1.0);
    }
  }
}

TEST_CASE("eval mode: identical rows give identical logits and batch order is preserved") {
  ModelSpec spec = ModelSpec::from_name("rla-resnet164");
  spec.blocks = 2;
  const Model<double> model(spec);
  std::mt19937_64 rng(4);
  const auto one = Tensor<double>::randn(Shape{1, 3, 32, 32}, rng);
  const auto two = Tensor<double>::randn(Shape{1, 3, 32, 32}, rng);
  Tensor<double> batch(Shape{3, 3, 32, 32});
  const std::int64_t n = one.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    batch[i] = one[i];
    batch[n + i] = two[i];
    batch[2 * n + i] = one[i];
  }
  Tensor<double> logits;
  run(model, batch, &logits);
  Tensor<double> swapped(Shape{3, 3, 32, 32});
  for (std::int64_t i = 0; i < n; ++i) {
    swapped[i] = two[i];
    swapped[n + i] = one[i];
    swapped[2 * n + i] = one[i];
  }
  Tensor<double> logits_swapped;
  run(model, swapped, &logits_swapped);
  for (std::int64_t k = 0; k < 10; ++k) {
    CHECK(logits.at(0, k, 0, 0) == logits.at(2, k, 0, 0));
    CHECK(logits.at(0, k, 0, 0) == doctest::Approx(logits_swapped.at(1, k, 0, 0)).epsilon(1e-12));
    CHECK(logits.at(1, k, 0, 0) == doctest::Approx(logits_swapped.at(0, k, 0, 0)).epsilon(1e-12));
  }
}

TEST_CASE("a zero image gives finite logits on every named model") {
  for (const char* name : {"resnet110", "rla-resnet110", "resnet164", "rla-resnet164", "densenet-bc100",
                           "shared-lag-densenet", "shared-ordinal-densenet"}) {
    CAPTURE(name);
    const Model<float> model(ModelSpec::from_name(name));
    Tensor<float> logits;
    run(model, Tensor<float>(model.input_shape(1)), &logits);
    for (const float v : logits.data()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("invalid specs are rejected") {
  ModelSpec spec = ModelSpec::from_name("resnet164");
  spec.aggregation = Aggregation::shared_lag;
  CHECK_THROWS_AS(spec.validate(), ValueError);
  spec = ModelSpec::from_name("densenet-bc100");
  spec.aggregation = Aggregation::rla;
  CHECK_THROWS_AS(spec.validate(), ValueError);
  spec = ModelSpec::from_name("rla-resnet164");
  spec.rla.k = 0;
  CHECK_THROWS_AS(spec.validate(), ValueError);
  spec.rla.k = 12;
  spec.rla.stage_k = {1, 2, 3, 4};
  CHECK_THROWS_AS(spec.validate(), ValueError);
  spec.rla.stage_k.clear();
  spec.classes = 0;
  CHECK_THROWS_AS(Model<double>{spec}, ValueError);
}

TEST_CASE("wrong input shape names the model") {
  ModelSpec spec = ModelSpec::from_name("rla-resnet164");
  spec.blocks = 1;
  const Model<double> model(spec);
  Graph<double> g(GraphMode::eval, const_cast<ParamStore<double>*>(&model.params()));
  try {
    model.forward(g, g.input(Tensor<double>(Shape{1, 1, 32, 32})));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("rla-resnet164") != std::string::npos);
  }
  Graph<double> unbound(GraphMode::eval);
  CHECK_THROWS_AS(model.forward(unbound, unbound.input(Tensor<double>(model.input_shape(1)))), StateError);
}

TEST_CASE("config round trip reproduces the ModelSpec and the parameters") {
  ModelSpec spec = ModelSpec::from_name("rla-resnet164");
  spec.blocks = 2;
  spec.rla.k = 8;
  spec.rla.variant = RlaVariant::v4;
  spec.rla.sharing = Sharing::unshared;
  spec.seed = 77;
  const Config cfg = spec.to_config();
  const ModelSpec back = ModelSpec::from_config(Config::parse(cfg.serialize()));
  CHECK(back.to_config().serialize() == cfg.serialize());
  const Model<double> a(spec);
  const Model<double> b(back);
  REQUIRE(a.params().entry_count() == b.params().entry_count());
  for (std::size_t i = 0; i < a.params().entry_count(); ++i) {
    const ParamId id{static_cast<std::int32_t>(i)};
    CHECK(max_abs_diff(a.params().tensor(id), b.params().tensor(id)) == 0.0);
  }
}
