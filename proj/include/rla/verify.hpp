#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rla/model_zoo.hpp"

namespace rla::verify {

// Zero-padded cross-correlation by direct nested loops. Shares no code with
// the engine's kernels; used as the reference side of conv checks.
Tensor<double> naive_conv2d(const Tensor<double>& x, const Tensor<double>& w, int stride = 1,
                            int padding = 0);

struct Check {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct Report {
  std::string suite;
  std::vector<Check> checks;

  bool passed() const;
  void add(std::string name, double measured, double tolerance, std::string detail = "");
  void add_flag(std::string name, bool ok, std::string detail = "");
  void append(const Report& other);
  // One "PASS|FAIL  name  measured <= tolerance  detail" line per check.
  std::string text() const;
};

// Scalar objective over the parameters of `store`, rebuilt on every call.
using Objective = std::function<double(ParamStore<double>& store, bool with_backward)>;

struct GradcheckStats {
  double max_rel_error = 0.0;
  std::string worst;  // "<entry name>[<flat index>]"
  int coordinates = 0;
  int groups = 0;
};

// Central differences against analytic gradients for every learnable share
// group: `samples` random coordinates per group (all when the group is
// smaller). Relative error |a - n| / max(|a|, |n|, floor).
GradcheckStats gradcheck(ParamStore<double>& store, const Objective& objective, int samples,
                         double step, std::uint64_t seed, double floor = 1e-6);

// Brute-force linear-mode hidden state of one stage:
// h^t = sum_{j=1}^{t} g2^{j-e} g1(tap^{t-j+1}) with e = 0 when the merge
// adds before the recurrent conv and e = 1 otherwise. g1 / g2 are applied
// with the naive convolution; returns h^1..h^T.
std::vector<Tensor<double>> linear_aggregation_oracle(const std::vector<Tensor<double>>& taps,
                                                      const Tensor<double>& g1,
                                                      const Tensor<double>& g2,
                                                      bool add_then_recurrent);

// Partition identity over `draws` random kernels and channel splits, by the
// aggregation core and independently by the naive convolution.
Report partition_suite(int draws = 50, std::uint64_t seed = 1);

// Linear-mode RLA hidden states of stage 1 of a `blocks`-deep
// rla-resnet164 against the brute-force sum, one check per seed.
Report linear_identity_suite(int seeds = 20, int blocks = 12, std::uint64_t first_seed = 1);

// Share-group layout of a built model: every shared RLA / bank site must
// alias one buffer per stage, unshared sites must not, and sizes must
// match the stage plan.
Report share_structure_suite(const Model<double>& model);

// Structural checks on `model` plus the linear-mode identity.
Report aggregation_suite(const Model<double>& model, int identity_seeds = 20);

// Every op kind on small random tensors, a share group used at two sites,
// and a truncated RLA-ResNet and Shared-Lag DenseNet end to end.
Report gradcheck_suite(int samples = 20, double step = 1e-5, std::uint64_t seed = 3);

// ARMA(1,1) and four-parameter recurrence expansions over a parameter grid.
Report arma_suite(int max_lag = 20, double grid_step = 0.1);

// Names accepted by run_suite: partition, aggregation, gradcheck, arma, all.
const std::vector<std::string>& suite_names();
Report run_suite(const std::string& name, const Model<double>& model);

}  // namespace rla::verify
