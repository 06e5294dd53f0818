#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rla/model_zoo.hpp"

namespace rla {

struct LayerStats {
  std::string name;
  std::string kind;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  std::int64_t elementwise = 0;
};

// Totals always equal the column sums of `layers`.
struct ModelStats {
  std::vector<LayerStats> layers;
  std::int64_t total_params = 0;
  std::int64_t total_macs = 0;
  std::int64_t total_elementwise = 0;
  std::int64_t resolution = 0;  // input height/width used for MACs; 0 if not counted

  // name,kind,params,macs,elementwise rows plus a trailing "total" row.
  std::string to_csv() const;
};

// Learnable scalars grouped by layer; share groups are counted once, under
// the name of their first member.
template <typename T>
ModelStats count_parameters(const Model<T>& model);

// Conv MACs = Cout*Cin*Kh*Kw*Ho*Wo, linear MACs = in*out, for one image at
// the given resolution; BN, activation, pooling and add work goes to the
// elementwise column. Parameters are filled in as by count_parameters.
template <typename T>
ModelStats count_macs(const Model<T>& model, std::int64_t resolution);

struct NormEntry {
  int index = 0;  // lag or ordinal (dense variants), block (unshared RLA), 1/2 for g1/g2
  std::string name;
  double l1 = 0.0;
};

struct StageNorms {
  int stage = 0;
  std::vector<NormEntry> entries;
};

// L1 norms of the shared 1x1 kernels per stage. Shared-Lag is indexed by
// lag, Shared-Ordinal by ordinal. Shared RLA reports its g1 (index 1) and
// g2 (index 2); unshared RLA reports g1 per block. Throws ValueError for
// models without shared convs.
template <typename T>
std::vector<StageNorms> extract_shared_norms(const Model<T>& model);

std::string norms_to_csv(const std::vector<StageNorms>& norms);

// Published parameter total for a configuration, in millions.
struct GoldenTarget {
  double millions = 0.0;
  double tolerance = 0.01;      // absolute, millions
  bool informational = false;  // reported, not gated
};

// Known targets: CIFAR ResNet-110/164 with and without RLA (k sweep,
// unshared, all six variants), DenseNet-BC-100 and its shared variants,
// and the ImageNet-shape ResNet-50 pair within 5%. Default blocks, pre-act,
// exchange on, non-linear mode only.
std::optional<GoldenTarget> golden_target(const ModelSpec& spec);

// y = a * exp(-b * x) fitted by least squares on log y; r_squared is the
// coefficient of determination on the log scale (0 for a constant series).
struct DecayFit {
  double a = 0.0;
  double b = 0.0;
  double r_squared = 0.0;
};

// Series indexed by x = 1, 2, ..., n. Needs n >= 3 positive values.
DecayFit fit_exponential(std::span<const double> series);
DecayFit fit_exponential(std::span<const double> x, std::span<const double> y);

}  // namespace rla
