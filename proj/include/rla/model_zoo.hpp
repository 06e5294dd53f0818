#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "rla/aggregation.hpp"
#include "rla/config.hpp"
#include "rla/graph.hpp"
#include "rla/layers.hpp"
#include "rla/param_store.hpp"

namespace rla {

enum class Family { resnet110, resnet164, densenet_bc100, resnet50_shape };
enum class Aggregation { none, rla, dense, shared_lag, shared_ordinal };

const char* to_string(Family f);
const char* to_string(Aggregation a);

struct StagePlan {
  int blocks = 0;               // residual blocks, or dense layers
  std::int64_t channels = 0;    // stage output channels
  std::int64_t resolution = 0;  // stage output height == width
};

struct ModelSpec {
  Family family = Family::resnet164;
  Aggregation aggregation = Aggregation::none;
  RlaConfig rla;
  int classes = 10;
  // Blocks (or dense layers) per stage; 0 keeps the family default.
  int blocks = 0;
  std::uint64_t seed = 0;

  // Accepts resnet110, rla-resnet110, resnet164, rla-resnet164,
  // densenet-bc100, shared-lag-densenet, shared-ordinal-densenet, resnet50
  // and rla-resnet50. RLA models get the family's default k.
  static ModelSpec from_name(const std::string& name);
  std::string name() const;

  // Keys: model, k, stage_k, variant, order, sharing, linear_mode,
  // exchange, classes, blocks, seed.
  static ModelSpec from_config(const Config& cfg);
  Config to_config() const;
  static const std::set<std::string>& config_keys();

  void validate() const;
  int blocks_per_stage() const;
  std::vector<StagePlan> stage_plan() const;
  std::int64_t input_resolution() const;
};

// One row of the embedded architecture table: output of a named section.
struct ArchRow {
  std::string section;  // "stem", "stage1".."stage4", "pool", "fc"
  std::int64_t resolution;
  std::int64_t channels;
};

// Expected section outputs of the default-depth, non-aggregated families,
// transcribed from their architecture tables.
const std::vector<ArchRow>& architecture_table(Family family);

struct ResBlockParams {
  // Pre-act blocks: bn[i] precedes conv[i]. Post-act blocks: bn[i] follows conv[i].
  std::vector<BnIds> bn;
  std::vector<ParamId> conv;
  std::vector<int> conv_stride;
  std::vector<int> conv_padding;
  std::optional<ParamId> projection;
  std::optional<BnIds> projection_bn;  // post-act only
  int stride = 1;
};

struct ResStage {
  std::vector<ResBlockParams> blocks;
  std::optional<RlaStage> rla;
};

struct DenseStage {
  std::vector<DenseLayer> layers;
  SharedBank bank;
  std::optional<BnIds> transition_bn;
  std::optional<ParamId> transition_conv;
};

// Handles of intermediate values from one forward pass.
struct ForwardRecord {
  Var stem;
  std::vector<Var> stage_outputs;
  std::vector<std::vector<Var>> hidden;    // RLA h after each block
  std::vector<std::vector<Var>> residual;  // y of each block
  Var h0;
  Var pooled;
  Var logits;
};

// A built network: parameters plus the wiring to evaluate it on a Graph.
template <typename T>
class Model {
 public:
  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  // images: (N, 3, R, R); R is normally input_shape()'s resolution. The
  // graph must be bound to params().
  Var forward(Graph<T>& g, Var images, ForwardRecord* record = nullptr) const;

  Shape input_shape(std::int64_t batch) const;
  // Weighted layers on the main path: stem, block/dense convs, transition
  // convs and the classifier. Projections and RLA convs are not counted.
  int depth() const { return depth_; }

  const std::vector<ResStage>& res_stages() const { return res_stages_; }
  const std::vector<DenseStage>& dense_stages() const { return dense_stages_; }

 private:
  void build_resnet(std::mt19937_64& rng);
  void build_densenet(std::mt19937_64& rng);
  Var forward_resnet(Graph<T>& g, Var images, ForwardRecord& rec) const;
  Var forward_densenet(Graph<T>& g, Var images, ForwardRecord& rec) const;
  BlockOutputs run_block(Graph<T>& g, const ResBlockParams& p, Var block_input, Var x_prev) const;

  ModelSpec spec_;
  ParamStore<T> params_;
  int depth_ = 0;

  ParamId stem_conv_;
  std::optional<BnIds> stem_bn_;
  std::vector<ResStage> res_stages_;
  std::vector<DenseStage> dense_stages_;
  std::optional<BnIds> final_bn_;
  std::optional<BnIds> hidden_bn_;
  ParamId fc_weight_;
  ParamId fc_bias_;
};

}  // namespace rla
