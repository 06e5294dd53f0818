#include "rla/model_zoo.hpp"

#include <cmath>
#include <sstream>

#include "rla/error.hpp"
#include "rla/ops.hpp"

namespace rla {

const char* to_string(Family f) {
  switch (f) {
    case Family::resnet110: return "resnet110";
    case Family::resnet164: return "resnet164";
    case Family::densenet_bc100: return "densenet_bc100";
    case Family::resnet50_shape: return "resnet50_shape";
  }
  return "?";
}

const char* to_string(Aggregation a) {
  switch (a) {
    case Aggregation::none: return "none";
    case Aggregation::rla: return "rla";
    case Aggregation::dense: return "dense";
    case Aggregation::shared_lag: return "shared_lag";
    case Aggregation::shared_ordinal: return "shared_ordinal";
  }
  return "?";
}

namespace {

constexpr int kGrowth = 12;
constexpr int kBottleneckWidth = 4 * kGrowth;
constexpr int kDenseStemChannels = 2 * kGrowth;

struct NamedModel {
  const char* name;
  Family family;
  Aggregation aggregation;
};

constexpr NamedModel kNamedModels[] = {
    {"resnet110", Family::resnet110, Aggregation::none},
    {"rla-resnet110", Family::resnet110, Aggregation::rla},
    {"resnet164", Family::resnet164, Aggregation::none},
    {"rla-resnet164", Family::resnet164, Aggregation::rla},
    {"densenet-bc100", Family::densenet_bc100, Aggregation::dense},
    {"shared-lag-densenet", Family::densenet_bc100, Aggregation::shared_lag},
    {"shared-ordinal-densenet", Family::densenet_bc100, Aggregation::shared_ordinal},
    {"resnet50", Family::resnet50_shape, Aggregation::none},
    {"rla-resnet50", Family::resnet50_shape, Aggregation::rla},
};

int default_k(Family f) {
  switch (f) {
    case Family::resnet110: return 4;
    case Family::resnet50_shape: return 32;
    default: return 12;
  }
}

bool is_resnet(Family f) { return f != Family::densenet_bc100; }

// Per-stage bottleneck (or basic) widths and default block counts.
std::vector<std::int64_t> stage_widths(Family f) {
  if (f == Family::resnet50_shape) return {64, 128, 256, 512};
  return {16, 32, 64};
}

std::vector<int> default_blocks(Family f) {
  switch (f) {
    case Family::resnet50_shape: return {3, 4, 6, 3};
    case Family::densenet_bc100: return {16, 16, 16};
    default: return {18, 18, 18};
  }
}

int expansion(Family f) { return f == Family::resnet110 ? 1 : 4; }

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ValueError("cannot parse '" + item + "' as an integer in list '" + text + "'");
    }
  }
  return out;
}

}  // namespace

ModelSpec ModelSpec::from_name(const std::string& name) {
  for (const auto& m : kNamedModels) {
    if (name == m.name) {
      ModelSpec s;
      s.family = m.family;
      s.aggregation = m.aggregation;
      s.rla.k = default_k(m.family);
      s.classes = m.family == Family::resnet50_shape ? 1000 : 10;
      return s;
    }
  }
  std::string known;
  for (const auto& m : kNamedModels) known += std::string(known.empty() ? "" : ", ") + m.name;
  throw ValueError("unknown model '" + name + "' (known: " + known + ")");
}

std::string ModelSpec::name() const {
  for (const auto& m : kNamedModels) {
    if (m.family == family && m.aggregation == aggregation) return m.name;
  }
  return std::string(to_string(family)) + "+" + to_string(aggregation);
}

const std::set<std::string>& ModelSpec::config_keys() {
  static const std::set<std::string> keys{"model",   "k",        "stage_k", "variant",
                                          "order",   "sharing",  "linear_mode",
                                          "exchange", "classes", "blocks",  "seed"};
  return keys;
}

ModelSpec ModelSpec::from_config(const Config& cfg) {
  ModelSpec s = from_name(cfg.get_string("model", "rla-resnet164"));
  s.rla.k = static_cast<int>(cfg.get_int("k", s.rla.k));
  if (const auto v = cfg.get("stage_k")) s.rla.stage_k = parse_int_list(*v);
  if (const auto v = cfg.get("variant")) s.rla.variant = parse_variant(*v);
  if (const auto v = cfg.get("order")) s.rla.order = parse_activation_order(*v);
  if (const auto v = cfg.get("sharing")) s.rla.sharing = parse_sharing(*v);
  s.rla.linear_mode = cfg.get_bool("linear_mode", s.rla.linear_mode);
  s.rla.exchange = cfg.get_bool("exchange", s.rla.exchange);
  s.classes = static_cast<int>(cfg.get_int("classes", s.classes));
  s.blocks = static_cast<int>(cfg.get_int("blocks", s.blocks));
  s.seed = cfg.get_u64("seed", s.seed);
  s.validate();
  return s;
}

Config ModelSpec::to_config() const {
  Config c;
  c.set("model", name());
  c.set("classes", std::to_string(classes));
  c.set("blocks", std::to_string(blocks));
  c.set("seed", std::to_string(seed));
  if (aggregation == Aggregation::rla) {
    c.set("k", std::to_string(rla.k));
    if (!rla.stage_k.empty()) {
      std::string list;
      for (const int v : rla.stage_k) list += (list.empty() ? "" : ",") + std::to_string(v);
      c.set("stage_k", list);
    }
    c.set("variant", to_string(rla.variant));
    c.set("order", to_string(rla.order));
    c.set("sharing", to_string(rla.sharing));
    c.set("linear_mode", rla.linear_mode ? "true" : "false");
    c.set("exchange", rla.exchange ? "true" : "false");
  }
  return c;
}

void ModelSpec::validate() const {
  if (is_resnet(family)) {
    if (aggregation != Aggregation::none && aggregation != Aggregation::rla) {
      throw ValueError(std::string("aggregation '") + to_string(aggregation) +
                       "' is not available for " + to_string(family));
    }
  } else if (aggregation == Aggregation::none || aggregation == Aggregation::rla) {
    throw ValueError(std::string("aggregation '") + to_string(aggregation) +
                     "' is not available for densenet_bc100");
  }
  if (classes < 1) throw ValueError("classes must be >= 1, got " + std::to_string(classes));
  if (blocks < 0) throw ValueError("blocks must be >= 0, got " + std::to_string(blocks));
  if (aggregation == Aggregation::rla) {
    rla.validate();
    if (rla.stage_k.size() > default_blocks(family).size()) {
      throw ValueError("stage_k lists more stages than " + std::string(to_string(family)) +
                       " has");
    }
  }
}

int ModelSpec::blocks_per_stage() const { return blocks; }

std::int64_t ModelSpec::input_resolution() const {
  return family == Family::resnet50_shape ? 224 : 32;
}

std::vector<StagePlan> ModelSpec::stage_plan() const {
  std::vector<int> counts = default_blocks(family);
  if (blocks > 0) counts.assign(counts.size(), blocks);
  std::vector<StagePlan> plan;
  if (family == Family::densenet_bc100) {
    std::int64_t c0 = 3 + kDenseStemChannels;
    std::int64_t res = 32;
    for (std::size_t s = 0; s < counts.size(); ++s) {
      const std::int64_t out = c0 + static_cast<std::int64_t>(counts[s]) * kGrowth;
      plan.push_back({counts[s], out, res});
      c0 = out / 2;
      res /= 2;
    }
    return plan;
  }
  const auto widths = stage_widths(family);
  std::int64_t res = family == Family::resnet50_shape ? 56 : 32;
  for (std::size_t s = 0; s < counts.size(); ++s) {
    if (s > 0) res /= 2;
    plan.push_back({counts[s], widths[s] * expansion(family), res});
  }
  return plan;
}

const std::vector<ArchRow>& architecture_table(Family family) {
  static const std::vector<ArchRow> r110{{"stem", 32, 16},  {"stage1", 32, 16},
                                         {"stage2", 16, 32}, {"stage3", 8, 64},
                                         {"pool", 1, 64},    {"fc", 1, 10}};
  static const std::vector<ArchRow> r164{{"stem", 32, 16},   {"stage1", 32, 64},
                                         {"stage2", 16, 128}, {"stage3", 8, 256},
                                         {"pool", 1, 256},    {"fc", 1, 10}};
  // Dense stage rows are dense-block outputs, before the transition layer.
  static const std::vector<ArchRow> d100{{"stem", 32, 27},    {"stage1", 32, 219},
                                         {"stage2", 16, 301}, {"stage3", 8, 342},
                                         {"pool", 1, 342},    {"fc", 1, 10}};
  static const std::vector<ArchRow> r50{{"stem", 56, 64},      {"stage1", 56, 256},
                                        {"stage2", 28, 512},   {"stage3", 14, 1024},
                                        {"stage4", 7, 2048},   {"pool", 1, 2048},
                                        {"fc", 1, 1000}};
  switch (family) {
    case Family::resnet110: return r110;
    case Family::resnet164: return r164;
    case Family::densenet_bc100: return d100;
    case Family::resnet50_shape: return r50;
  }
  throw ValueError("unknown family");
}

template <typename T>
Model<T>::Model(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  std::mt19937_64 rng(spec_.seed);
  if (is_resnet(spec_.family)) {
    build_resnet(rng);
  } else {
    build_densenet(rng);
  }
}

template <typename T>
Shape Model<T>::input_shape(std::int64_t batch) const {
  const std::int64_t r = spec_.input_resolution();
  return Shape{batch, 3, r, r};
}

namespace {

template <typename T>
void add_classifier(ParamStore<T>& store, std::int64_t in, int classes, std::mt19937_64& rng,
                    ParamId& weight, ParamId& bias) {
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in)));
  weight = store.create("fc.weight", Tensor<T>::uniform(Shape{classes, in, 1, 1}, rng, -bound, bound),
                        ParamRole::linear_weight);
  bias = store.create("fc.bias", Tensor<T>(Shape{classes, 1, 1, 1}), ParamRole::bias);
}

std::string stage_name(std::size_t s) { return "stage" + std::to_string(s + 1); }

}  // namespace

template <typename T>
void Model<T>::build_resnet(std::mt19937_64& rng) {
  const Family f = spec_.family;
  const bool post_act = f == Family::resnet50_shape;
  const bool use_rla = spec_.aggregation == Aggregation::rla;
  const RlaConfig& cfg = spec_.rla;
  const auto plan = spec_.stage_plan();
  const auto widths = stage_widths(f);
  const int exp = expansion(f);

  std::int64_t c = post_act ? 64 : 16;
  stem_conv_ = post_act ? add_conv(params_, "stem.conv", Shape{64, 3, 7, 7}, rng)
                        : add_conv(params_, "stem.conv", Shape{16, 3, 3, 3}, rng);
  stem_bn_ = add_batchnorm(params_, "stem.bn", c);
  depth_ = 1;

  for (std::size_t s = 0; s < plan.size(); ++s) {
    ResStage stage;
    const std::int64_t mid = widths[s];
    const std::int64_t out = mid * exp;
    const int k_here = use_rla ? cfg.k_for(s) : 0;
    const int k_entry = use_rla ? cfg.k_for(s == 0 ? 0 : s - 1) : 0;
    for (int b = 0; b < plan[s].blocks; ++b) {
      const std::string prefix = stage_name(s) + ".block" + std::to_string(b);
      ResBlockParams p;
      p.stride = (b == 0 && s > 0) ? 2 : 1;
      const std::int64_t in_total =
          c + ((use_rla && cfg.exchange) ? (b == 0 ? k_entry : k_here) : 0);
      std::vector<Shape> convs;
      if (f == Family::resnet110) {
        convs = {Shape{mid, in_total, 3, 3}, Shape{mid, mid, 3, 3}};
        p.conv_stride = {p.stride, 1};
        p.conv_padding = {1, 1};
      } else {
        convs = {Shape{mid, in_total, 1, 1}, Shape{mid, mid, 3, 3}, Shape{out, mid, 1, 1}};
        p.conv_stride = {1, p.stride, 1};
        p.conv_padding = {0, 1, 0};
      }
      for (std::size_t i = 0; i < convs.size(); ++i) {
        const std::string idx = std::to_string(i);
        // Pre-act BN sees the conv input; post-act BN sees its output.
        const std::int64_t bn_channels = post_act ? convs[i].n : convs[i].c;
        p.bn.push_back(add_batchnorm(params_, prefix + ".bn" + idx, bn_channels));
        p.conv.push_back(add_conv(params_, prefix + ".conv" + idx, convs[i], rng));
      }
      if (c != out || p.stride != 1) {
        p.projection = add_conv(params_, prefix + ".proj", Shape{out, c, 1, 1}, rng);
        if (post_act) p.projection_bn = add_batchnorm(params_, prefix + ".proj_bn", out);
      }
      depth_ += static_cast<int>(convs.size());
      stage.blocks.push_back(std::move(p));
      c = out;
    }
    if (use_rla) {
      std::optional<int> prev_k;
      if (s > 0) prev_k = cfg.k_for(s - 1);
      stage.rla = make_rla_stage(params_, stage_name(s) + ".rla", static_cast<int>(s),
                                 plan[s].blocks, out, k_here, prev_k, cfg, rng);
    }
    res_stages_.push_back(std::move(stage));
  }
  if (!post_act) final_bn_ = add_batchnorm(params_, "head.bn", c);
  std::int64_t head_in = c;
  if (use_rla) {
    const int k_last = cfg.k_for(plan.size() - 1);
    hidden_bn_ = add_batchnorm(params_, "head.h_bn", k_last);
    head_in += k_last;
  }
  add_classifier(params_, head_in, spec_.classes, rng, fc_weight_, fc_bias_);
  depth_ += 1;
}

template <typename T>
void Model<T>::build_densenet(std::mt19937_64& rng) {
  const auto plan = spec_.stage_plan();
  const bool shared = spec_.aggregation != Aggregation::dense;
  // The stem output is concatenated with the image: x0 has 3 + 2*growth channels.
  stem_conv_ = add_conv(params_, "stem.conv", Shape{kDenseStemChannels, 3, 3, 3}, rng);
  depth_ = 1;
  std::int64_t c0 = 3 + kDenseStemChannels;
  for (std::size_t s = 0; s < plan.size(); ++s) {
    DenseStage stage;
    const std::string sn = stage_name(s);
    const int layers = plan[s].blocks;
    if (shared) {
      for (int i = 0; i + 1 < layers; ++i) {
        stage.bank.convs.push_back(add_conv(params_, sn + ".bank." + std::to_string(i + 1),
                                            Shape{kBottleneckWidth, kGrowth, 1, 1}, rng));
      }
    }
    for (int t = 0; t < layers; ++t) {
      const std::string prefix = sn + ".layer" + std::to_string(t + 1);
      const std::int64_t in_total = c0 + static_cast<std::int64_t>(t) * kGrowth;
      DenseLayer layer;
      layer.bn1 = add_batchnorm(params_, prefix + ".bn1", in_total);
      layer.conv1 = add_conv(params_, prefix + ".conv1",
                             Shape{kBottleneckWidth, shared ? c0 : in_total, 1, 1}, rng);
      layer.bn2 = add_batchnorm(params_, prefix + ".bn2", kBottleneckWidth);
      layer.conv3 = add_conv(params_, prefix + ".conv3", Shape{kGrowth, kBottleneckWidth, 3, 3}, rng);
      stage.layers.push_back(layer);
      depth_ += 2;
    }
    const std::int64_t out = plan[s].channels;
    if (s + 1 < plan.size()) {
      stage.transition_bn = add_batchnorm(params_, sn + ".trans.bn", out);
      stage.transition_conv = add_conv(params_, sn + ".trans.conv", Shape{out / 2, out, 1, 1}, rng);
      depth_ += 1;
      c0 = out / 2;
    } else {
      c0 = out;
    }
    dense_stages_.push_back(std::move(stage));
  }
  final_bn_ = add_batchnorm(params_, "head.bn", c0);
  add_classifier(params_, c0, spec_.classes, rng, fc_weight_, fc_bias_);
  depth_ += 1;
}

template <typename T>
Var Model<T>::forward(Graph<T>& g, Var images, ForwardRecord* record) const {
  if (g.params() != &params_) {
    throw StateError("graph is not bound to this model's parameter store");
  }
  const Shape s = g.shape(images);
  if (s.c != 3 || s.h != s.w) {
    throw ShapeError(spec_.name() + " expects square 3-channel images (N,3,R,R), got " + s.str());
  }
  ForwardRecord local;
  ForwardRecord& rec = record != nullptr ? *record : local;
  rec = ForwardRecord{};
  const Var logits =
      is_resnet(spec_.family) ? forward_resnet(g, images, rec) : forward_densenet(g, images, rec);
  rec.logits = logits;
  return logits;
}

template <typename T>
BlockOutputs Model<T>::run_block(Graph<T>& g, const ResBlockParams& p, Var block_input,
                                 Var x_prev) const {
  const bool post_act = spec_.family == Family::resnet50_shape;
  Var a = block_input;
  for (std::size_t i = 0; i < p.conv.size(); ++i) {
    if (post_act) {
      a = apply_batchnorm(g, p.bn[i], apply_conv(g, p.conv[i], a, p.conv_stride[i], p.conv_padding[i]));
      if (i + 1 < p.conv.size()) a = relu(g, a);
    } else {
      a = apply_conv(g, p.conv[i], bn_relu(g, p.bn[i], a), p.conv_stride[i], p.conv_padding[i]);
    }
  }
  const Var y = a;
  Var shortcut = x_prev;
  if (p.projection) {
    shortcut = apply_conv(g, *p.projection, x_prev, p.stride, 0);
    if (p.projection_bn) shortcut = apply_batchnorm(g, *p.projection_bn, shortcut);
  }
  Var out = add(g, shortcut, y);
  if (post_act) out = relu(g, out);
  return BlockOutputs{y, shortcut, out};
}

template <typename T>
Var Model<T>::forward_resnet(Graph<T>& g, Var images, ForwardRecord& rec) const {
  const bool post_act = spec_.family == Family::resnet50_shape;
  const bool use_rla = spec_.aggregation == Aggregation::rla;
  const RlaConfig& cfg = spec_.rla;

  Var x;
  {
    ScopeGuard<T> scope(g, "stem");
    x = bn_relu(g, *stem_bn_, apply_conv(g, stem_conv_, images, post_act ? 2 : 1, post_act ? 3 : 1));
    if (post_act) x = maxpool2d(g, x, PoolAttrs{3, 2, 1});
  }
  rec.stem = x;

  Var h;
  if (use_rla) {
    const Shape xs = g.shape(x);
    const Shape hs{xs.n, cfg.k_for(0), xs.h, xs.w};
    h = g.tracing() ? g.input_shape(hs, "h0") : g.input(Tensor<T>(hs), false, "h0");
    rec.h0 = h;
  }

  for (std::size_t s = 0; s < res_stages_.size(); ++s) {
    const ResStage& stage = res_stages_[s];
    rec.hidden.emplace_back();
    rec.residual.emplace_back();
    for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
      ScopeGuard<T> scope(g, stage_name(s) + ".block" + std::to_string(b));
      const ResBlockParams& p = stage.blocks[b];
      if (use_rla) {
        const BlockFn<T> fn = [&](Graph<T>& gg, Var in, Var xp) { return run_block(gg, p, in, xp); };
        const RlaStep step = rla_block_forward(g, x, h, fn, *stage.rla, static_cast<int>(b), cfg);
        x = step.x;
        h = step.h;
        rec.hidden.back().push_back(h);
        rec.residual.back().push_back(step.residual);
      } else {
        const BlockOutputs out = run_block(g, p, x, x);
        x = out.output;
        rec.residual.back().push_back(out.residual);
      }
    }
    rec.stage_outputs.push_back(x);
  }

  ScopeGuard<T> scope(g, "head");
  if (final_bn_) x = bn_relu(g, *final_bn_, x);
  if (use_rla) {
    h = bn_relu(g, *hidden_bn_, h);
    const Var parts[] = {x, h};
    rec.pooled = global_avgpool(g, concat_channels(g, std::span<const Var>(parts)));
    return linear(g, rec.pooled, g.parameter(fc_weight_), g.parameter(fc_bias_));
  }
  rec.pooled = global_avgpool(g, x);
  return linear(g, rec.pooled, g.parameter(fc_weight_), g.parameter(fc_bias_));
}

template <typename T>
Var Model<T>::forward_densenet(Graph<T>& g, Var images, ForwardRecord& rec) const {
  DenseMode mode = DenseMode::dense_unshared;
  if (spec_.aggregation == Aggregation::shared_lag) mode = DenseMode::by_lag;
  if (spec_.aggregation == Aggregation::shared_ordinal) mode = DenseMode::by_ordinal;

  Var x0;
  {
    ScopeGuard<T> scope(g, "stem");
    const Var parts[] = {images, apply_conv(g, stem_conv_, images, 1, 1)};
    x0 = concat_channels(g, std::span<const Var>(parts));
  }
  rec.stem = x0;

  Var out;
  for (std::size_t s = 0; s < dense_stages_.size(); ++s) {
    const DenseStage& stage = dense_stages_[s];
    DenseBuffer buffer{mode, x0, {}};
    rec.residual.emplace_back();
    for (std::size_t t = 0; t < stage.layers.size(); ++t) {
      ScopeGuard<T> scope(g, stage_name(s) + ".layer" + std::to_string(t + 1));
      const SharedBank* bank = mode == DenseMode::dense_unshared ? nullptr : &stage.bank;
      rec.residual.back().push_back(dense_layer_forward(g, buffer, stage.layers[t], bank));
    }
    std::vector<Var> all{x0};
    all.insert(all.end(), buffer.slots.rbegin(), buffer.slots.rend());
    out = concat_channels(g, std::span<const Var>(all));
    rec.stage_outputs.push_back(out);
    if (stage.transition_conv) {
      ScopeGuard<T> scope(g, stage_name(s) + ".trans");
      x0 = avgpool2d(g, apply_conv(g, *stage.transition_conv, bn_relu(g, *stage.transition_bn, out)),
                     PoolAttrs{2, 2, 0});
    }
  }
  ScopeGuard<T> scope(g, "head");
  rec.pooled = global_avgpool(g, bn_relu(g, *final_bn_, out));
  return linear(g, rec.pooled, g.parameter(fc_weight_), g.parameter(fc_bias_));
}

template class Model<float>;
template class Model<double>;

}  // namespace rla
