#include "rla/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "rla/analysis.hpp"
#include "rla/error.hpp"
#include "rla/ops.hpp"
#include "rla/timeseries.hpp"

namespace rla::verify {

Tensor<double> naive_conv2d(const Tensor<double>& x, const Tensor<double>& w, int stride, int padding) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  if (xs.c != ws.c) throw ShapeError("naive_conv2d: input has " + std::to_string(xs.c) + " channels, kernel " + std::to_string(ws.c));
  const std::int64_t ho = (xs.h + 2 * padding - ws.h) / stride + 1;
  const std::int64_t wo = (xs.w + 2 * padding - ws.w) / stride + 1;
  Tensor<double> out(Shape{xs.n, ws.n, ho, wo});
  for (std::int64_t n = 0; n < xs.n; ++n)
    for (std::int64_t co = 0; co < ws.n; ++co)
      for (std::int64_t oy = 0; oy < ho; ++oy)
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (std::int64_t ci = 0; ci < xs.c; ++ci)
            for (std::int64_t ky = 0; ky < ws.h; ++ky)
              for (std::int64_t kx = 0; kx < ws.w; ++kx) {
                const std::int64_t iy = oy * stride + ky - padding;
                const std::int64_t ix = ox * stride + kx - padding;
                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                acc += x.at(n, ci, iy, ix) * w.at(co, ci, ky, kx);
              }
          out.at(n, co, oy, ox) = acc;
        }
  return out;
}

bool Report::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

void Report::add(std::string name, double measured, double tolerance, std::string detail) {
  // NaN never passes.
  checks.push_back(Check{std::move(name), measured <= tolerance, measured, tolerance, std::move(detail)});
}

void Report::add_flag(std::string name, bool ok, std::string detail) {
  checks.push_back(Check{std::move(name), ok, ok ? 0.0 : 1.0, 0.0, std::move(detail)});
}

void Report::append(const Report& other) {
  checks.insert(checks.end(), other.checks.begin(), other.checks.end());
}

std::string Report::text() const {
  std::string out;
  char buf[96];
  for (const auto& c : checks) {
    out += c.passed ? "PASS  " : "FAIL  ";
    out += c.name;
    std::snprintf(buf, sizeof buf, "  %.3g <= %.3g", c.measured, c.tolerance);
    out += buf;
    if (!c.detail.empty()) out += "  " + c.detail;
    out += '\n';
  }
  return out;
}

GradcheckStats gradcheck(ParamStore<double>& store, const Objective& objective, int samples,
                         double step, std::uint64_t seed, double floor) {
  store.zero_grad();
  objective(store, true);
  std::mt19937_64 rng(seed);
  GradcheckStats stats;
  for (std::int32_t gi = 0; gi < static_cast<std::int32_t>(store.group_count()); ++gi) {
    auto& group = store.group(gi);
    if (!is_learnable(group.role)) continue;
    ++stats.groups;
    const auto n = group.tensor.numel();
    std::vector<double> analytic(static_cast<std::size_t>(n), 0.0);
    if (group.tensor.has_grad()) {
      const auto gspan = group.tensor.grad();
      std::copy(gspan.begin(), gspan.end(), analytic.begin());
    }
    std::vector<std::int64_t> coords(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), 0);
    if (n > samples) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(samples));
    }
    for (const std::int64_t i : coords) {
      double& w = group.tensor[i];
      const double saved = w;
      w = saved + step;
      const double fp = objective(store, false);
      w = saved - step;
      const double fm = objective(store, false);
      w = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[static_cast<std::size_t>(i)];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++stats.coordinates;
      if (!(rel <= stats.max_rel_error)) {
        stats.max_rel_error = std::isnan(rel) ? INFINITY : rel;
        stats.worst = store.members(gi).front() + "[" + std::to_string(i) + "]";
      }
    }
  }
  return stats;
}

std::vector<Tensor<double>> linear_aggregation_oracle(const std::vector<Tensor<double>>& taps,
                                                      const Tensor<double>& g1,
                                                      const Tensor<double>& g2,
                                                      bool add_then_recurrent) {
  const int pad = static_cast<int>(g2.shape().h / 2);
  // chains[i][m] = g2^m(g1(tap^{i+1})), extended on demand; each term of the
  // sum is read from here instead of being recomputed for every t.
  std::vector<std::vector<Tensor<double>>> chains;
  chains.reserve(taps.size());
  for (const auto& y : taps) chains.push_back({naive_conv2d(y, g1)});
  const auto power = [&](std::size_t i, std::size_t m) -> const Tensor<double>& {
    auto& chain = chains[i];
    while (chain.size() <= m) chain.push_back(naive_conv2d(chain.back(), g2, 1, pad));
    return chain[m];
  };
  std::vector<Tensor<double>> out;
  for (std::size_t t = 1; t <= taps.size(); ++t) {
    Tensor<double> sum(chains[0][0].shape());
    for (std::size_t j = 1; j <= t; ++j) {
      const Tensor<double>& term = power(t - j, add_then_recurrent ? j : j - 1);
      for (std::int64_t i = 0; i < sum.numel(); ++i) sum[i] += term[i];
    }
    out.push_back(std::move(sum));
  }
  return out;
}

Report partition_suite(int draws, std::uint64_t seed) {
  Report r;
  r.suite = "partition";
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> parts_dist(1, 6);
  std::uniform_int_distribution<int> ch_dist(1, 16);
  std::uniform_int_distribution<int> spatial_dist(3, 9);
  std::uniform_int_distribution<int> cout_dist(1, 24);
  std::bernoulli_distribution three(0.5);
  double worst_core = 0.0;
  double worst_naive = 0.0;
  for (int d = 0; d < draws; ++d) {
    const int parts = parts_dist(rng);
    const std::int64_t n = 2;
    const std::int64_t hw = spatial_dist(rng);
    const std::int64_t ksz = three(rng) ? 3 : 1;
    std::vector<Tensor<double>> inputs;
    std::int64_t total = 0;
    for (int p = 0; p < parts; ++p) {
      const std::int64_t c = ch_dist(rng);
      inputs.push_back(Tensor<double>::randn(Shape{n, c, hw, hw}, rng));
      total += c;
    }
    const auto w = Tensor<double>::randn(Shape{cout_dist(rng), total, ksz, ksz}, rng);
    worst_core = std::max(worst_core, conv1_partition_check(w, inputs));

    // Independent route: explicit concat, whole-kernel naive conv, and the
    // sum of naive convs over the kernel's channel slices.
    Tensor<double> cat(Shape{n, total, hw, hw});
    std::int64_t off = 0;
    for (const auto& x : inputs) {
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t c = 0; c < x.shape().c; ++c)
          for (std::int64_t y = 0; y < hw; ++y)
            for (std::int64_t xx = 0; xx < hw; ++xx) cat.at(b, off + c, y, xx) = x.at(b, c, y, xx);
      off += x.shape().c;
    }
    const int pad = static_cast<int>(ksz / 2);
    const Tensor<double> whole = naive_conv2d(cat, w, 1, pad);
    Tensor<double> sum(whole.shape());
    off = 0;
    for (const auto& x : inputs) {
      Tensor<double> slice(Shape{w.shape().n, x.shape().c, ksz, ksz});
      for (std::int64_t o = 0; o < w.shape().n; ++o)
        for (std::int64_t c = 0; c < x.shape().c; ++c)
          for (std::int64_t ky = 0; ky < ksz; ++ky)
            for (std::int64_t kx = 0; kx < ksz; ++kx) slice.at(o, c, ky, kx) = w.at(o, off + c, ky, kx);
      const Tensor<double> part = naive_conv2d(x, slice, 1, pad);
      for (std::int64_t i = 0; i < sum.numel(); ++i) sum[i] += part[i];
      off += x.shape().c;
    }
    worst_naive = std::max(worst_naive, max_abs_diff(whole, sum));
  }
  r.add("partition identity, aggregation core (" + std::to_string(draws) + " draws)", worst_core, 1e-10);
  r.add("partition identity, naive convolution (" + std::to_string(draws) + " draws)", worst_naive, 1e-10);
  return r;
}

Report linear_identity_suite(int seeds, int blocks, std::uint64_t first_seed) {
  Report r;
  r.suite = "linear-identity";
  for (int s = 0; s < seeds; ++s) {
    ModelSpec spec = ModelSpec::from_name("rla-resnet164");
    spec.blocks = blocks;
    spec.rla.linear_mode = true;
    spec.seed = first_seed + static_cast<std::uint64_t>(s);
    const Model<double> model(spec);
    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    Graph<double> g(GraphMode::eval, const_cast<ParamStore<double>*>(&model.params()));
    ForwardRecord rec;
    model.forward(g, g.input(Tensor<double>::randn(model.input_shape(2), rng)), &rec);

    const RlaStage& stage = *model.res_stages().at(0).rla;
    const RlaWiring wiring = wiring_of(spec.rla.variant);
    std::vector<Tensor<double>> taps;
    for (const Var y : rec.residual.at(0)) taps.push_back(g.value(y));
    const auto expected = linear_aggregation_oracle(taps, model.params().tensor(stage.conv1x1.at(0)),
                                                    model.params().tensor(stage.conv3x3.at(0)),
                                                    wiring.merge == RlaMerge::add_then_recurrent);
    double worst = 0.0;
    for (std::size_t t = 0; t < expected.size(); ++t) {
      worst = std::max(worst, relative_l2_error(g.value(rec.hidden.at(0).at(t)), expected[t]));
    }
    r.add("linear-mode aggregation identity, seed " + std::to_string(spec.seed) + ", t<=" +
              std::to_string(blocks),
          worst, 1e-5);
  }
  return r;
}

namespace {

std::int64_t numel_of(const ParamStore<double>& store, ParamId id) { return store.tensor(id).numel(); }

}  // namespace

Report share_structure_suite(const Model<double>& model) {
  Report r;
  r.suite = "share-structure";
  const ModelSpec& spec = model.spec();
  const ParamStore<double>& store = model.params();
  const auto plan = spec.stage_plan();

  if (spec.aggregation == Aggregation::rla) {
    std::set<std::int32_t> seen_shared;
    for (std::size_t s = 0; s < model.res_stages().size(); ++s) {
      const RlaStage& st = *model.res_stages()[s].rla;
      const std::string sn = "stage" + std::to_string(s + 1);
      const std::int64_t k = spec.rla.k_for(s);
      r.add_flag(sn + " recurrent unit spans every block", st.blocks() == plan[s].blocks,
                 std::to_string(st.blocks()) + " of " + std::to_string(plan[s].blocks));
      bool shapes = true;
      for (int b = 0; b < st.blocks(); ++b) {
        shapes = shapes && store.tensor(st.conv1x1[b]).shape() == Shape{k, st.tap_channels, 1, 1} &&
                 store.tensor(st.conv3x3[b]).shape() == Shape{k, k, 3, 3};
      }
      r.add_flag(sn + " g1/g2 shapes", shapes);
      for (const auto* sites : {&st.conv1x1, &st.conv3x3}) {
        std::set<std::int32_t> groups;
        for (const ParamId id : *sites) groups.insert(store.group_of(id));
        const std::string what = sn + (sites == &st.conv1x1 ? " g1" : " g2");
        if (spec.rla.sharing == Sharing::shared) {
          r.add_flag(what + " sites alias one buffer", groups.size() == 1,
                     std::to_string(groups.size()) + " share groups");
          r.add_flag(what + " buffer private to the stage", seen_shared.insert(*groups.begin()).second);
        } else {
          r.add_flag(what + " sites own separate buffers", groups.size() == sites->size(),
                     std::to_string(groups.size()) + " share groups for " + std::to_string(sites->size()) + " blocks");
        }
      }
      std::set<std::int32_t> bn_groups;
      for (const BnIds& bn : st.bn) bn_groups.insert(store.group_of(bn.gamma));
      r.add_flag(sn + " recurrent BN is per block", bn_groups.size() == st.bn.size());
    }

    // Sharing accounting and variant invariance, on freshly built siblings.
    ModelSpec other = spec;
    other.rla.sharing = spec.rla.sharing == Sharing::shared ? Sharing::unshared : Sharing::shared;
    const Model<double> sibling(other);
    const std::int64_t shared_count =
        spec.rla.sharing == Sharing::shared ? store.learnable_count() : sibling.params().learnable_count();
    const std::int64_t unshared_count =
        spec.rla.sharing == Sharing::shared ? sibling.params().learnable_count() : store.learnable_count();
    std::int64_t extra = 0;
    for (const ResStage& rs : model.res_stages()) {
      extra += static_cast<std::int64_t>(rs.rla->blocks() - 1) *
               (numel_of(store, rs.rla->conv1x1[0]) + numel_of(store, rs.rla->conv3x3[0]));
    }
    r.add("shared + (blocks-1) * shared sizes == unshared",
          static_cast<double>(std::llabs(shared_count + extra - unshared_count)), 0.0,
          std::to_string(shared_count) + " + " + std::to_string(extra) + " vs " + std::to_string(unshared_count));

    std::set<std::int64_t> counts;
    for (const RlaVariant v : {RlaVariant::v1, RlaVariant::v2, RlaVariant::v3, RlaVariant::v4,
                               RlaVariant::v5, RlaVariant::v6}) {
      ModelSpec vs = spec;
      vs.rla.variant = v;
      counts.insert(Model<double>(vs).params().learnable_count());
    }
    r.add_flag("variants v1-v6 have equal parameter counts", counts.size() == 1,
               std::to_string(counts.size()) + " distinct totals");
  } else if (spec.aggregation == Aggregation::shared_lag || spec.aggregation == Aggregation::shared_ordinal) {
    std::set<std::int32_t> all_bank;
    for (std::size_t s = 0; s < model.dense_stages().size(); ++s) {
      const DenseStage& ds = model.dense_stages()[s];
      const std::string sn = "stage" + std::to_string(s + 1);
      r.add_flag(sn + " bank holds one conv per lag/ordinal",
                 static_cast<int>(ds.bank.convs.size()) == plan[s].blocks - 1,
                 std::to_string(ds.bank.convs.size()) + " convs");
      std::set<std::int32_t> groups;
      bool shapes = true;
      for (const ParamId id : ds.bank.convs) {
        groups.insert(store.group_of(id));
        all_bank.insert(store.group_of(id));
        shapes = shapes && store.tensor(id).shape().c == store.tensor(ds.layers.back().conv3).shape().n;
      }
      r.add_flag(sn + " bank convs own separate buffers", groups.size() == ds.bank.convs.size());
      r.add_flag(sn + " bank input width equals growth", shapes);
      const std::int64_t c0 = store.tensor(ds.layers.front().conv1).shape().c;
      bool x0_only = true;
      for (const DenseLayer& l : ds.layers) x0_only = x0_only && store.tensor(l.conv1).shape().c == c0;
      r.add_flag(sn + " per-layer conv1 reads only x0", x0_only);
    }
    std::size_t bank_total = 0;
    for (const DenseStage& ds : model.dense_stages()) bank_total += ds.bank.convs.size();
    r.add_flag("bank buffers private to their stage", all_bank.size() == bank_total);
  } else {
    r.add_flag("model has shared aggregation sites", false,
               std::string("aggregation '") + to_string(spec.aggregation) + "' shares nothing");
  }
  return r;
}

Report aggregation_suite(const Model<double>& model, int identity_seeds) {
  Report r = share_structure_suite(model);
  r.suite = "aggregation";
  if (identity_seeds > 0) r.append(linear_identity_suite(identity_seeds));
  return r;
}

namespace {

// Inputs registered as learnable entries so one routine checks every
// input and parameter gradient of an op.
struct OpCase {
  std::string name;
  ParamStore<double> store;
  GraphMode mode = GraphMode::train;
  std::function<Var(Graph<double>&, const ParamStore<double>&)> build;
};

ParamId add_input(ParamStore<double>& s, const std::string& name, Tensor<double> t,
                  ParamRole role = ParamRole::conv_weight) {
  return s.create(name, std::move(t), role);
}

// Values bounded away from zero so ReLU kinks stay outside the step.
Tensor<double> away_from_zero(Shape shape, std::mt19937_64& rng) {
  Tensor<double> t = Tensor<double>::uniform(shape, rng, 0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    if (sign(rng)) t[i] = -t[i];
  }
  return t;
}

// Distinct values spaced 0.05 apart so max-pool winners are unique.
Tensor<double> distinct(Shape shape, std::mt19937_64& rng) {
  Tensor<double> t(shape);
  std::vector<std::int64_t> order(static_cast<std::size_t>(t.numel()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = 0.05 * static_cast<double>(order[static_cast<std::size_t>(i)]) - 1.0;
  return t;
}

// Objective: a fixed random projection of the op output (or the output
// itself when it is already a scalar loss).
Objective projected(const OpCase& c, std::uint64_t seed, bool scalar) {
  return [&c, seed, scalar](ParamStore<double>& store, bool with_backward) {
    Graph<double> g(c.mode, &store);
    Var out = c.build(g, store);
    if (!scalar) {
      std::mt19937_64 rng(seed);
      out = weighted_sum(g, out, Tensor<double>::randn(g.shape(out), rng));
    }
    const double v = g.value(out)[0];
    if (with_backward) g.backward(out);
    return v;
  };
}

Objective model_objective(const Model<double>& model, std::uint64_t input_seed) {
  return [&model, input_seed](ParamStore<double>& store, bool with_backward) {
    std::mt19937_64 rng(input_seed);
    Graph<double> g(GraphMode::train, &store);
    const Var logits = model.forward(g, g.input(Tensor<double>::randn(Shape{2, 3, 8, 8}, rng)));
    const std::vector<std::int64_t> labels{1, 7};
    const Var loss = softmax_xent(g, logits, std::span<const std::int64_t>(labels));
    const double v = g.value(loss)[0];
    if (with_backward) g.backward(loss);
    return v;
  };
}

// Smallest nonzero |input| over every ReLU of one forward pass at the
// objective's evaluation point. Exact zeros come from constant channels
// (the zero initial hidden state); a per-channel constant is removed by the
// conv and train-mode BN that follow, so those kinks are flat.
double relu_margin(const Model<double>& model, std::uint64_t input_seed) {
  std::mt19937_64 rng(input_seed);
  Graph<double> g(GraphMode::train, const_cast<ParamStore<double>*>(&model.params()));
  model.forward(g, g.input(Tensor<double>::randn(Shape{2, 3, 8, 8}, rng)));
  double margin = INFINITY;
  for (std::int32_t i = 0; i < static_cast<std::int32_t>(g.size()); ++i) {
    const auto& node = g.node(Var{i});
    if (node.kind != OpKind::relu) continue;
    for (const double v : g.value(node.inputs.front()).data()) {
      if (v != 0.0) margin = std::min(margin, std::abs(v));
    }
  }
  return margin;
}

}  // namespace

Report gradcheck_suite(int samples, double step, std::uint64_t seed) {
  Report r;
  r.suite = "gradcheck";
  std::mt19937_64 rng(seed);
  std::vector<std::unique_ptr<OpCase>> cases;
  const auto make = [&](std::string name) {
    cases.push_back(std::make_unique<OpCase>());
    cases.back()->name = std::move(name);
    return cases.back().get();
  };

  {
    OpCase* c = make("conv2d 3x3 stride 2 pad 1 with bias");
    const auto x = add_input(c->store, "x", Tensor<double>::randn(Shape{2, 3, 7, 7}, rng));
    const auto w = add_input(c->store, "w", Tensor<double>::randn(Shape{4, 3, 3, 3}, rng));
    const auto b = add_input(c->store, "b", Tensor<double>::randn(Shape{4, 1, 1, 1}, rng), ParamRole::bias);
    c->build = [=](Graph<double>& g, const ParamStore<double>&) {
      return conv2d(g, g.parameter(x), g.parameter(w), ConvAttrs{2, 1}, g.parameter(b));
    };
  }
  {
    OpCase* c = make("conv2d 1x1");
    const auto x = add_input(c->store, "x", Tensor<double>::randn(Shape{2, 5, 4, 4}, rng));
    const auto w = add_input(c->store, "w", Tensor<double>::randn(Shape{3, 5, 1, 1}, rng));
    c->build = [=](Graph<double>& g, const ParamStore<double>&) {
      return conv2d(g, g.parameter(x), g.parameter(w));
    };
  }
  {
    OpCase* c = make("batchnorm2d train");
    const auto x = add_input(c->store, "x", Tensor<double>::randn(Shape{3, 4, 3, 3}, rng));
    const auto ga = add_input(c->store, "gamma", Tensor<double>::uniform(Shape{4, 1, 1, 1}, rng, 0.5, 1.5), ParamRole::bn_scale);
    const auto be = add_input(c->store, "beta", Tensor<double>::randn(Shape{4, 1, 1, 1}, rng), ParamRole::bn_shift);
    c->build = [=](Graph<double>& g, const ParamStore<double>&) {
      return batchnorm2d(g, g.parameter(x), g.parameter(ga), g.parameter(be), static_cast<Tensor<double>*>(nullptr),
                         static_cast<Tensor<double>*>(nullptr));
    };
  }
  {
    OpCase* c = make("batchnorm2d eval");
    const auto x = add_input(c->store, "x", Tensor<double>::randn(Shape{2, 4, 3, 3}, rng));
    const auto ga = add_input(c->store, "gamma", Tensor<double>::uniform(Shape{4, 1, 1, 1}, rng, 0.5, 1.5), ParamRole::bn_scale);
    const auto be = add_input(c->store, "beta", Tensor<double>::randn(Shape{4, 1, 1, 1}, rng), ParamRole::bn_shift);
    const auto mean = add_input(c->store, "mean", Tensor<double>::randn(Shape{4, 1, 1, 1}, rng), ParamRole::running_mean);
    const auto var = add_input(c->store, "var", Tensor<double>::uniform(Shape{4, 1, 1, 1}, rng, 0.5, 2.0), ParamRole::running_var);
    c->mode = GraphMode::eval;
    c->build = [=](Graph<double>& g, const ParamStore<double>& s) {
      auto& ms = const_cast<ParamStore<double>&>(s);
      return batchnorm2d(g, g.parameter(x), g.parameter(ga), g.parameter(be), &ms.tensor(mean), &ms.tensor(var));
    };
  }
  {
    OpCase* c = make("relu");
    const auto x = add_input(c->store, "x", away_from_zero(Shape{2, 3, 4, 4}, rng));
    c->build = [=](Graph<double>& g, const ParamStore<double>&) { return relu(g, g.parameter(x)); };
  }
  {
    OpCase* c = make("tanh");
    const auto x = add_input(c->store, "x", Tensor<double>::randn(Shape{2, 3, 4, 4}, rng));
    c->build = [=](Graph<double>& g, const ParamStore<double>&) { return tanh(g, g.parameter(x)); };
  }
  {
    OpCase* c = make("add");
    const auto a = add_input(c->store, "a", Tensor<double>::randn(Shape{2, 3, 4, 4}, rng));
    const auto b = add_input(c->store, "b", Tensor<double>::randn(Shape{2, 3, 4, 4}, rng));
    c->build = [=](Graph<double>& g, const ParamStore<double>&) { return add(g, g.parameter(a), g.parameter(b)); };
  }
  {
    OpCase* c = make("concat_channels");
    const auto a = add_input(c->store, "a", Tensor<double>::randn(Shape{2, 3, 4, 4}, rng));
    const auto b = add_input(c->store, "b", Tensor<double>::randn(Shape{2, 1, 4, 4}, rng));
    const auto d = add_input(c->store, "c", Tensor<double>::randn(Shape{2, 5, 4, 4}, rng));
    c->build = [=](Graph<double>& g, const ParamStore<double>&) {
      const std::vector<Var> parts{g.parameter(a), g.parameter(b), g.parameter(d)};
      return concat_channels(g, std::span<const Var>(parts));
    };
  }
  {
    OpCase* c = make("avgpool2d 2/2, 3/2 pad 1 and 3/3");
    const auto x = add_input(c->store, "x", Tensor<double>::randn(Shape{2, 3, 6, 6}, rng));
    c->build = [=](Graph<double>& g, const ParamStore<double>&) {
      const Var p = g.parameter(x);
      return add(g, avgpool2d(g, avgpool2d(g, p, PoolAttrs{2, 2, 0}), PoolAttrs{3, 2, 1}),
                 avgpool2d(g, p, PoolAttrs{3, 3, 0}));
    };
  }
  {
    OpCase* c = make("maxpool2d 3/2 pad 1");
    const auto x = add_input(c->store, "x", distinct(Shape{2, 2, 6, 6}, rng));
    c->build = [=](Graph<double>& g, const ParamStore<double>&) {
      return maxpool2d(g, g.parameter(x), PoolAttrs{3, 2, 1});
    };
  }
  {
    OpCase* c = make("global_avgpool");
    const auto x = add_input(c->store, "x", Tensor<double>::randn(Shape{2, 3, 5, 5}, rng));
    c->build = [=](Graph<double>& g, const ParamStore<double>&) { return global_avgpool(g, g.parameter(x)); };
  }
  {
    OpCase* c = make("linear with bias");
    const auto x = add_input(c->store, "x", Tensor<double>::randn(Shape{3, 5, 2, 2}, rng));
    const auto w = add_input(c->store, "w", Tensor<double>::randn(Shape{6, 20, 1, 1}, rng), ParamRole::linear_weight);
    const auto b = add_input(c->store, "b", Tensor<double>::randn(Shape{6, 1, 1, 1}, rng), ParamRole::bias);
    c->build = [=](Graph<double>& g, const ParamStore<double>&) {
      return linear(g, g.parameter(x), g.parameter(w), g.parameter(b));
    };
  }
  {
    OpCase* c = make("weighted_sum");
    const auto x = add_input(c->store, "x", Tensor<double>::randn(Shape{2, 3, 3, 3}, rng));
    c->build = [=](Graph<double>& g, const ParamStore<double>&) { return g.parameter(x); };
  }
  {
    OpCase* c = make("shared 1x1 conv used at two sites");
    const auto x = add_input(c->store, "x", Tensor<double>::randn(Shape{2, 4, 3, 3}, rng));
    const auto w = add_input(c->store, "site1", Tensor<double>::randn(Shape{4, 4, 1, 1}, rng));
    const auto w2 = c->store.alias("site2", w);
    c->build = [=](Graph<double>& g, const ParamStore<double>&) {
      const Var first = conv2d(g, g.parameter(x), g.parameter(w));
      return conv2d(g, tanh(g, first), g.parameter(w2));
    };
  }
  for (const auto& c : cases) {
    const std::uint64_t proj_seed = rng();
    const auto stats = gradcheck(c->store, projected(*c, proj_seed, false), samples, step, rng());
    r.add("gradcheck " + c->name, stats.max_rel_error, 1e-4,
          std::to_string(stats.coordinates) + " coords, worst " + stats.worst);
  }

  OpCase xent;
  xent.name = "softmax_xent";
  {
    const auto z = add_input(xent.store, "logits", Tensor<double>::randn(Shape{4, 5, 1, 1}, rng));
    xent.build = [=](Graph<double>& g, const ParamStore<double>&) {
      static const std::vector<std::int64_t> labels{0, 3, 4, 1};
      return softmax_xent(g, g.parameter(z), std::span<const std::int64_t>(labels));
    };
    const auto stats = gradcheck(xent.store, projected(xent, 0, true), samples, step, rng());
    r.add("gradcheck softmax_xent", stats.max_rel_error, 1e-4, std::to_string(stats.coordinates) + " coords");
  }

  for (const char* name : {"rla-resnet164", "shared-lag-densenet"}) {
    ModelSpec spec = ModelSpec::from_name(name);
    spec.blocks = spec.aggregation == Aggregation::rla ? 1 : 3;
    spec.seed = seed;
    Model<double> model(spec);
    // Central differences are only valid away from ReLU kinks: the input
    // is redrawn until every ReLU input clears the margin.
    constexpr double kMargin = 1e-4;
    std::uint64_t input_seed = seed + 17;
    for (int tries = 0; tries < 100 && relu_margin(model, input_seed) < kMargin; ++tries) ++input_seed;
    const double margin = relu_margin(model, input_seed);
    const auto stats = gradcheck(model.params(), model_objective(model, input_seed), samples, step, seed + 5);
    r.add("gradcheck " + std::string(name) + " (" + std::to_string(spec.blocks) + " per stage, all parameters)",
          margin < kMargin ? INFINITY : stats.max_rel_error, 1e-4,
          std::to_string(stats.groups) + " groups, " + std::to_string(stats.coordinates) + " coords, input seed " +
              std::to_string(input_seed) + ", worst " + stats.worst);
  }
  return r;
}

Report arma_suite(int max_lag, double grid_step) {
  Report r;
  r.suite = "arma";
  std::vector<double> grid;
  for (int i = 0;; ++i) {
    const double v = -0.9 + i * grid_step;
    if (v > 0.9 + 1e-9) break;
    grid.push_back(std::round(v * 1e9) / 1e9);
  }
  double impulse = 0.0;
  double residual = 0.0;
  double inverse = 0.0;
  for (const double beta : grid) {
    for (const double gamma : grid) {
      const ArmaParams p{beta, gamma};
      const auto sim = arma_impulse_response(p, max_lag);
      const auto closed = arma_impulse_closed_form(p, max_lag);
      for (std::size_t i = 0; i < sim.size(); ++i) impulse = std::max(impulse, std::abs(sim[i] - closed[i]));
      residual = std::max(residual, arma_expansion_residual(p, max_lag));
      const auto ar_sim = arma_ar_simulated(p, max_lag);
      const auto ar = arma_ar_coefficients(p, max_lag);
      for (std::size_t i = 0; i < ar.size(); ++i) inverse = std::max(inverse, std::abs(ar_sim[i] - ar[i]));
    }
  }
  const std::string g = std::to_string(grid.size()) + "^2 grid, lags <= " + std::to_string(max_lag);
  r.add("ARMA impulse response vs closed form", impulse, 1e-12, g);
  r.add("ARMA AR(inf) expansion residual", residual, 1e-12, g);
  r.add("ARMA inverse filter vs AR coefficients", inverse, 1e-12, g);

  double rec = 0.0;
  for (const double alpha : grid)
    for (const double gamma : grid)
      for (const double b1 : grid)
        for (const double b2 : grid) {
          const RecurrenceParams p{alpha, gamma, b1, b2};
          const auto sim = recurrence_expand(p, max_lag);
          const auto closed = recurrence_closed_form(p, max_lag);
          for (std::size_t i = 0; i < sim.size(); ++i) rec = std::max(rec, std::abs(sim[i] - closed[i]));
        }
  r.add("recurrence basis expansion vs closed form", rec, 1e-12,
        std::to_string(grid.size()) + "^4 grid, T = " + std::to_string(max_lag));
  return r;
}

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"partition", "aggregation", "gradcheck", "arma", "all"};
  return names;
}

Report run_suite(const std::string& name, const Model<double>& model) {
  if (name == "partition") return partition_suite();
  if (name == "aggregation") return aggregation_suite(model);
  if (name == "gradcheck") return gradcheck_suite();
  if (name == "arma") return arma_suite();
  if (name == "all") {
    Report r;
    r.suite = "all";
    for (const auto& n : suite_names()) {
      if (n != "all") r.append(run_suite(n, model));
    }
    return r;
  }
  throw ValueError("unknown verify suite '" + name + "'");
}

}  // namespace rla::verify
