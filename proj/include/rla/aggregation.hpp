#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rla/graph.hpp"
#include "rla/layers.hpp"
#include "rla/param_store.hpp"

namespace rla {

// Which block signal feeds the recurrent unit.
enum class RlaTap {
  residual,  // y^t, the residual branch output
  output,    // x^t = shortcut + y^t
  shortcut,  // the skip path entering the sum
};

// Order of the additive merge relative to the recurrent transform g2.
enum class RlaMerge {
  add_then_recurrent,  // h = g2(g1(tap) + h_prev)
  recurrent_then_add,  // h = g2(h_prev) + g1(tap)
};

enum class RlaVariant { v1, v2, v3, v4, v5, v6 };
enum class ActivationOrder { pre_act, post_act };
enum class Sharing { shared, unshared };

struct RlaWiring {
  RlaTap tap;
  RlaMerge merge;
};

// v1 = (residual, add-then-recurrent), v2 = (residual, recurrent-then-add),
// v3/v4 tap the block output, v5/v6 tap the shortcut; odd variants add
// before the recurrent transform.
RlaWiring wiring_of(RlaVariant variant);

const char* to_string(RlaVariant v);
const char* to_string(ActivationOrder v);
const char* to_string(Sharing v);
RlaVariant parse_variant(const std::string& text);
ActivationOrder parse_activation_order(const std::string& text);
Sharing parse_sharing(const std::string& text);

struct RlaConfig {
  int k = 12;
  // Optional per-stage override of k; empty means k everywhere.
  std::vector<int> stage_k;
  RlaVariant variant = RlaVariant::v1;
  ActivationOrder order = ActivationOrder::pre_act;
  Sharing sharing = Sharing::shared;
  // Replaces BN and tanh of the recurrent unit with the identity.
  bool linear_mode = false;
  // When false the hidden state is not concatenated into the blocks; the
  // head still receives it.
  bool exchange = true;

  int k_for(std::size_t stage) const;
  void validate() const;
};

// Parameters of the recurrent unit for one stage. In shared mode every
// block's conv1x1 / conv3x3 entry aliases one share group; in unshared mode
// each block owns its own. The BN is per block in both modes.
struct RlaStage {
  int index = 0;
  int k = 0;
  std::int64_t tap_channels = 0;
  std::vector<ParamId> conv1x1;  // g1: (k, tap_channels, 1, 1)
  std::vector<ParamId> conv3x3;  // g2: (k, k, 3, 3)
  std::vector<BnIds> bn;         // BN(k), one per block
  // (k, k_prev, 1, 1); present only when k changes at this stage's entry.
  std::optional<ParamId> entry_projection;

  int blocks() const { return static_cast<int>(conv1x1.size()); }
};

template <typename T>
RlaStage make_rla_stage(ParamStore<T>& store, const std::string& prefix, int index, int blocks,
                        std::int64_t tap_channels, int k, std::optional<int> prev_k,
                        const RlaConfig& cfg, std::mt19937_64& rng);

// The three signals a residual block exposes to the recurrent unit.
struct BlockOutputs {
  Var residual;
  Var shortcut;
  Var output;
};

// A backbone block. `block_input` feeds the residual branch (it is
// concat(h_prev, x_prev) when exchange is on); `x_prev` feeds the shortcut.
template <typename T>
using BlockFn = std::function<BlockOutputs(Graph<T>& g, Var block_input, Var x_prev)>;

struct RlaStep {
  Var x;
  Var h;
  Var residual;
};

// One block of the main path plus one step of the recurrent unit. When the
// block changes resolution, h_prev is pooled to the block's output size
// before the merge.
template <typename T>
RlaStep rla_block_forward(Graph<T>& g, Var x_prev, Var h_prev, const BlockFn<T>& block,
                          const RlaStage& stage, int block_index, const RlaConfig& cfg);

// 2x2 stride-2 average pool of h to (target_h, target_w), followed by the
// stage's entry projection when it has one.
template <typename T>
Var rla_stage_transition(Graph<T>& g, Var h, const RlaStage& next, std::int64_t target_h,
                         std::int64_t target_w);

// global_avgpool(concat(x, h)) -> linear.
template <typename T>
Var rla_head(Graph<T>& g, Var x_final, Var h_final, ParamId weight, std::optional<ParamId> bias);

enum class DenseMode { dense_unshared, by_lag, by_ordinal };

const char* to_string(DenseMode m);

// Feature store of one dense stage. Slots are most-recent-first:
// slots[0] = x^{t-1}, ..., slots.back() = x^1. Holds graph handles only.
struct DenseBuffer {
  DenseMode mode = DenseMode::dense_unshared;
  Var x0;
  std::vector<Var> slots;

  // Channel-ordered inputs of the next layer: x0 first, then by lag for
  // by_lag, chronological otherwise.
  std::vector<Var> ordered_inputs() const;
  void push(Var x) { slots.insert(slots.begin(), x); }
};

struct DenseLayer {
  BnIds bn1;       // over the full concatenated input
  ParamId conv1;   // dense_unshared: whole input; shared modes: the x0 slice
  BnIds bn2;
  ParamId conv3;   // 3x3, pad 1
};

// Shared 1x1 convs of a stage; entry s-1 serves lag s (by_lag) or
// ordinal s (by_ordinal).
struct SharedBank {
  std::vector<ParamId> convs;
};

// Computes x^t from the buffer and appends it. The shared modes run one
// conv over the ordered concat with a weight assembled from the x0 slice
// and the bank, which equals the sum of the per-source convs.
template <typename T>
Var dense_layer_forward(Graph<T>& g, DenseBuffer& buffer, const DenseLayer& layer,
                        const SharedBank* bank);

// Channel slice [begin, begin+count) of a (Cout, Cin, Kh, Kw) kernel.
template <typename T>
Tensor<T> slice_in_channels(const Tensor<T>& weight, std::int64_t begin, std::int64_t count);

// max |Conv1(concat(inputs)) - sum_l Conv1_l(inputs[l])| with Conv1_l the
// l-th channel slice of the kernel.
double conv1_partition_check(const Tensor<double>& weight,
                             std::span<const Tensor<double>> inputs);

}  // namespace rla
