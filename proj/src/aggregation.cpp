#include "rla/aggregation.hpp"

#include <algorithm>

#include "rla/error.hpp"
#include "rla/ops.hpp"

namespace rla {

RlaWiring wiring_of(RlaVariant variant) {
  switch (variant) {
    case RlaVariant::v1: return {RlaTap::residual, RlaMerge::add_then_recurrent};
    case RlaVariant::v2: return {RlaTap::residual, RlaMerge::recurrent_then_add};
    case RlaVariant::v3: return {RlaTap::output, RlaMerge::add_then_recurrent};
    case RlaVariant::v4: return {RlaTap::output, RlaMerge::recurrent_then_add};
    case RlaVariant::v5: return {RlaTap::shortcut, RlaMerge::add_then_recurrent};
    case RlaVariant::v6: return {RlaTap::shortcut, RlaMerge::recurrent_then_add};
  }
  throw ValueError("unknown RLA variant");
}

const char* to_string(RlaVariant v) {
  static constexpr const char* names[] = {"v1", "v2", "v3", "v4", "v5", "v6"};
  return names[static_cast<int>(v)];
}

const char* to_string(ActivationOrder v) {
  return v == ActivationOrder::pre_act ? "pre_act" : "post_act";
}

const char* to_string(Sharing v) { return v == Sharing::shared ? "shared" : "unshared"; }

const char* to_string(DenseMode m) {
  switch (m) {
    case DenseMode::dense_unshared: return "dense_unshared";
    case DenseMode::by_lag: return "by_lag";
    case DenseMode::by_ordinal: return "by_ordinal";
  }
  return "?";
}

namespace {

std::string normalized(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) {
    return c == '-' ? '_' : static_cast<char>(std::tolower(c));
  });
  return s;
}

}  // namespace

RlaVariant parse_variant(const std::string& text) {
  const std::string s = normalized(text);
  for (int i = 0; i < 6; ++i) {
    const auto v = static_cast<RlaVariant>(i);
    if (s == to_string(v)) return v;
  }
  throw ValueError("unknown RLA variant '" + text + "' (expected v1..v6)");
}

ActivationOrder parse_activation_order(const std::string& text) {
  const std::string s = normalized(text);
  if (s == "pre_act") return ActivationOrder::pre_act;
  if (s == "post_act") return ActivationOrder::post_act;
  throw ValueError("unknown activation order '" + text + "' (expected pre_act or post_act)");
}

Sharing parse_sharing(const std::string& text) {
  const std::string s = normalized(text);
  if (s == "shared") return Sharing::shared;
  if (s == "unshared") return Sharing::unshared;
  throw ValueError("unknown sharing mode '" + text + "' (expected shared or unshared)");
}

int RlaConfig::k_for(std::size_t stage) const {
  return stage < stage_k.size() ? stage_k[stage] : k;
}

void RlaConfig::validate() const {
  if (k < 1) throw ValueError("RLA channel k must be >= 1, got " + std::to_string(k));
  for (const int v : stage_k) {
    if (v < 1) throw ValueError("per-stage RLA channel must be >= 1, got " + std::to_string(v));
  }
}

template <typename T>
RlaStage make_rla_stage(ParamStore<T>& store, const std::string& prefix, int index, int blocks,
                        std::int64_t tap_channels, int k, std::optional<int> prev_k,
                        const RlaConfig& cfg, std::mt19937_64& rng) {
  if (blocks < 1) throw ValueError("an RLA stage needs at least one block");
  if (k < 1) throw ValueError("RLA channel k must be >= 1");
  RlaStage st;
  st.index = index;
  st.k = k;
  st.tap_channels = tap_channels;
  const Shape g1_shape{k, tap_channels, 1, 1};
  const Shape g2_shape{k, k, 3, 3};
  for (int b = 0; b < blocks; ++b) {
    const std::string g1_name = prefix + ".g1." + std::to_string(b);
    const std::string g2_name = prefix + ".g2." + std::to_string(b);
    if (cfg.sharing == Sharing::shared && b > 0) {
      st.conv1x1.push_back(store.alias(g1_name + ".weight", st.conv1x1.front()));
      st.conv3x3.push_back(store.alias(g2_name + ".weight", st.conv3x3.front()));
    } else {
      st.conv1x1.push_back(add_conv(store, g1_name, g1_shape, rng));
      st.conv3x3.push_back(add_conv(store, g2_name, g2_shape, rng));
    }
    st.bn.push_back(add_batchnorm(store, prefix + ".bn." + std::to_string(b), k));
  }
  if (prev_k && *prev_k != k) {
    st.entry_projection = add_conv(store, prefix + ".entry", Shape{k, *prev_k, 1, 1}, rng);
  }
  return st;
}

namespace {

// g2 with its activation sequence, or the bare conv in linear mode.
template <typename T>
Var recurrent_transform(Graph<T>& g, Var z, const RlaStage& st, int b, const RlaConfig& cfg) {
  const auto conv = [&](Var in) {
    return apply_conv(g, st.conv3x3[static_cast<std::size_t>(b)], in, 1, 1);
  };
  if (cfg.linear_mode) return conv(z);
  const BnIds& bn = st.bn[static_cast<std::size_t>(b)];
  if (cfg.order == ActivationOrder::pre_act) return conv(tanh(g, apply_batchnorm(g, bn, z)));
  return tanh(g, apply_batchnorm(g, bn, conv(z)));
}

std::string where(const RlaStage& st, int block) {
  return "stage " + std::to_string(st.index) + " block " + std::to_string(block);
}

}  // namespace

template <typename T>
RlaStep rla_block_forward(Graph<T>& g, Var x_prev, Var h_prev, const BlockFn<T>& block,
                          const RlaStage& st, int b, const RlaConfig& cfg) {
  if (b < 0 || b >= st.blocks()) {
    throw ValueError("block index " + std::to_string(b) + " outside stage " +
                     std::to_string(st.index) + " of " + std::to_string(st.blocks()) + " blocks");
  }
  const Shape xs = g.shape(x_prev);
  const Shape hs = g.shape(h_prev);
  if (hs.n != xs.n || hs.h != xs.h || hs.w != xs.w) {
    throw ShapeError("RLA " + where(st, b) + ": hidden state " + hs.str() +
                     " does not match features " + xs.str() + " in N, H or W");
  }
  if (b > 0 && hs.c != st.k) {
    throw ShapeError("RLA " + where(st, b) + ": hidden state has " + std::to_string(hs.c) +
                     " channels, expected k=" + std::to_string(st.k));
  }

  ScopeGuard<T> scope(g, "rla" + std::to_string(b));
  Var block_input = x_prev;
  if (cfg.exchange) {
    const Var parts[] = {h_prev, x_prev};
    block_input = concat_channels(g, std::span<const Var>(parts));
  }
  const BlockOutputs out = block(g, block_input, x_prev);

  const RlaWiring w = wiring_of(cfg.variant);
  const Var tap = w.tap == RlaTap::residual ? out.residual
                  : w.tap == RlaTap::output ? out.output
                                            : out.shortcut;
  const Shape ts = g.shape(tap);
  if (ts.c != st.tap_channels) {
    throw ShapeError("RLA " + where(st, b) + ": tapped signal has " + std::to_string(ts.c) +
                     " channels, g1 expects " + std::to_string(st.tap_channels));
  }

  Var h = h_prev;
  if (hs.h != ts.h || hs.w != ts.w) {
    h = rla_stage_transition(g, h, st, ts.h, ts.w);
  } else if (b == 0 && st.entry_projection) {
    h = apply_conv(g, *st.entry_projection, h);
  }
  if (g.shape(h).c != st.k) {
    throw ShapeError("RLA " + where(st, b) + ": hidden state has " +
                     std::to_string(g.shape(h).c) + " channels, expected k=" +
                     std::to_string(st.k));
  }

  const Var g1 = apply_conv(g, st.conv1x1[static_cast<std::size_t>(b)], tap);
  Var h_next;
  if (w.merge == RlaMerge::add_then_recurrent) {
    h_next = recurrent_transform(g, add(g, g1, h), st, b, cfg);
  } else {
    h_next = add(g, recurrent_transform(g, h, st, b, cfg), g1);
  }
  return RlaStep{out.output, h_next, out.residual};
}

template <typename T>
Var rla_stage_transition(Graph<T>& g, Var h, const RlaStage& next, std::int64_t target_h,
                         std::int64_t target_w) {
  const Shape hs = g.shape(h);
  if (hs.h != 2 * target_h || hs.w != 2 * target_w) {
    throw ShapeError("RLA stage " + std::to_string(next.index) + " entry: hidden state " +
                     hs.str() + " cannot be halved to " + std::to_string(target_h) + "x" +
                     std::to_string(target_w));
  }
  Var out = avgpool2d(g, h, PoolAttrs{2, 2, 0});
  if (next.entry_projection) out = apply_conv(g, *next.entry_projection, out);
  return out;
}

template <typename T>
Var rla_head(Graph<T>& g, Var x_final, Var h_final, ParamId weight, std::optional<ParamId> bias) {
  const Shape xs = g.shape(x_final);
  const Shape hs = g.shape(h_final);
  if (xs.n != hs.n || xs.h != hs.h || xs.w != hs.w) {
    throw ShapeError("RLA head: features " + xs.str() + " and hidden state " + hs.str() +
                     " differ in N, H or W");
  }
  const Var parts[] = {x_final, h_final};
  const Var pooled = global_avgpool(g, concat_channels(g, std::span<const Var>(parts)));
  std::optional<Var> b;
  if (bias) b = g.parameter(*bias);
  return linear(g, pooled, g.parameter(weight), b);
}

std::vector<Var> DenseBuffer::ordered_inputs() const {
  std::vector<Var> out{x0};
  if (mode == DenseMode::by_lag) {
    out.insert(out.end(), slots.begin(), slots.end());
  } else {
    out.insert(out.end(), slots.rbegin(), slots.rend());
  }
  return out;
}

template <typename T>
Var dense_layer_forward(Graph<T>& g, DenseBuffer& buffer, const DenseLayer& layer,
                        const SharedBank* bank) {
  const std::vector<Var> inputs = buffer.ordered_inputs();
  const Var z = inputs.size() == 1 ? inputs.front() : concat_channels(g, std::span<const Var>(inputs));
  const Var a = bn_relu(g, layer.bn1, z);
  Var c1;
  if (buffer.mode == DenseMode::dense_unshared) {
    c1 = apply_conv(g, layer.conv1, a);
  } else {
    const std::size_t needed = buffer.slots.size();
    const std::size_t have = bank == nullptr ? 0 : bank->convs.size();
    if (needed > have) {
      throw ValueError("dense layer " + std::to_string(needed + 1) + " needs shared conv " +
                       std::to_string(needed) + " but the bank holds " + std::to_string(have));
    }
    std::vector<Var> parts{g.parameter(layer.conv1)};
    for (std::size_t s = 0; s < needed; ++s) parts.push_back(g.parameter(bank->convs[s]));
    const Var w = parts.size() == 1 ? parts.front() : concat_channels(g, std::span<const Var>(parts));
    c1 = conv2d(g, a, w, ConvAttrs{1, 0}, std::nullopt, g.scoped("conv1"));
  }
  const Var x = apply_conv(g, layer.conv3, bn_relu(g, layer.bn2, c1), 1, 1);
  buffer.push(x);
  return x;
}

template <typename T>
Tensor<T> slice_in_channels(const Tensor<T>& weight, std::int64_t begin, std::int64_t count) {
  const Shape s = weight.shape();
  if (begin < 0 || count < 1 || begin + count > s.c) {
    throw ShapeError("channel slice [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside kernel " + s.str());
  }
  Tensor<T> out(Shape{s.n, count, s.h, s.w});
  const std::int64_t plane = s.plane();
  for (std::int64_t o = 0; o < s.n; ++o) {
    std::copy_n(weight.ptr() + (o * s.c + begin) * plane, count * plane,
                out.ptr() + o * count * plane);
  }
  return out;
}

double conv1_partition_check(const Tensor<double>& weight,
                             std::span<const Tensor<double>> inputs) {
  if (inputs.empty()) throw ValueError("conv1_partition_check: no inputs");
  std::int64_t total = 0;
  for (const auto& x : inputs) total += x.shape().c;
  if (total != weight.shape().c) {
    throw ShapeError("conv1_partition_check: inputs carry " + std::to_string(total) +
                     " channels, kernel expects " + std::to_string(weight.shape().c));
  }
  const int pad = static_cast<int>(weight.shape().h / 2);
  Graph<double> g(GraphMode::eval);
  std::vector<Var> xs;
  for (const auto& x : inputs) xs.push_back(g.input(x));
  const Var whole = conv2d(g, concat_channels(g, std::span<const Var>(xs)), g.input(weight),
                           ConvAttrs{1, pad});
  Var sum;
  std::int64_t offset = 0;
  for (std::size_t l = 0; l < xs.size(); ++l) {
    const std::int64_t c = inputs[l].shape().c;
    const Var part =
        conv2d(g, xs[l], g.input(slice_in_channels(weight, offset, c)), ConvAttrs{1, pad});
    sum = l == 0 ? part : add(g, sum, part);
    offset += c;
  }
  return max_abs_diff(g.value(whole), g.value(sum));
}

#define RLA_INSTANTIATE_AGG(T)                                                                 \
  template RlaStage make_rla_stage(ParamStore<T>&, const std::string&, int, int, std::int64_t, \
                                   int, std::optional<int>, const RlaConfig&,                  \
                                   std::mt19937_64&);                                          \
  template RlaStep rla_block_forward(Graph<T>&, Var, Var, const BlockFn<T>&, const RlaStage&,  \
                                     int, const RlaConfig&);                                   \
  template Var rla_stage_transition(Graph<T>&, Var, const RlaStage&, std::int64_t,             \
                                    std::int64_t);                                             \
  template Var rla_head(Graph<T>&, Var, Var, ParamId, std::optional<ParamId>);                 \
  template Var dense_layer_forward(Graph<T>&, DenseBuffer&, const DenseLayer&,                 \
                                   const SharedBank*);                                         \
  template Tensor<T> slice_in_channels(const Tensor<T>&, std::int64_t, std::int64_t);

RLA_INSTANTIATE_AGG(float)
RLA_INSTANTIATE_AGG(double)

#undef RLA_INSTANTIATE_AGG

}  // namespace rla
