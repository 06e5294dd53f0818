#include "rla/analysis.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "rla/error.hpp"
#include "rla/ops.hpp"

namespace rla {

std::string ModelStats::to_csv() const {
  std::ostringstream os;
  os << "name,kind,params,macs,elementwise\n";
  for (const auto& l : layers) {
    os << l.name << ',' << l.kind << ',' << l.params << ',' << l.macs << ',' << l.elementwise
       << '\n';
  }
  os << "total,," << total_params << ',' << total_macs << ',' << total_elementwise << '\n';
  return os.str();
}

namespace {

std::string layer_of(const std::string& param_name) {
  const auto dot = param_name.rfind('.');
  return dot == std::string::npos ? param_name : param_name.substr(0, dot);
}

const char* layer_kind(ParamRole role) {
  switch (role) {
    case ParamRole::conv_weight: return "conv";
    case ParamRole::linear_weight:
    case ParamRole::bias: return "linear";
    default: return "batchnorm";
  }
}

}  // namespace

template <typename T>
ModelStats count_parameters(const Model<T>& model) {
  const ParamStore<T>& store = model.params();
  ModelStats stats;
  std::map<std::string, std::size_t> index;
  for (std::int32_t g = 0; g < static_cast<std::int32_t>(store.group_count()); ++g) {
    const auto& group = store.group(g);
    if (!is_learnable(group.role)) continue;
    const std::vector<std::string> members = store.members(g);
    if (members.empty()) continue;
    const std::string layer = layer_of(members.front());
    auto [it, inserted] = index.emplace(layer, stats.layers.size());
    if (inserted) stats.layers.push_back(LayerStats{layer, layer_kind(group.role), 0, 0, 0});
    stats.layers[it->second].params += group.tensor.numel();
    stats.total_params += group.tensor.numel();
  }
  return stats;
}

template <typename T>
ModelStats count_macs(const Model<T>& model, std::int64_t resolution) {
  if (resolution < 1) throw ValueError("resolution must be positive");
  ModelStats stats = count_parameters(model);
  stats.resolution = resolution;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < stats.layers.size(); ++i) index[stats.layers[i].name] = i;

  auto& store = const_cast<ParamStore<T>&>(model.params());
  Graph<T> g(GraphMode::trace, &store);
  model.forward(g, g.input_shape(Shape{1, 3, resolution, resolution}, "image"));

  std::int64_t elementwise = 0;
  for (std::int32_t i = 0; i < static_cast<std::int32_t>(g.size()); ++i) {
    const auto& node = g.node(Var{i});
    if (node.kind == OpKind::input || node.kind == OpKind::parameter) continue;
    std::vector<Shape> in;
    for (const Var v : node.inputs) in.push_back(g.shape(v));
    const std::int64_t macs = op_macs(node.kind, in, node.shape);
    elementwise += op_elementwise(node.kind, in, node.shape);
    if (macs == 0) continue;
    auto [it, inserted] = index.emplace(node.label, stats.layers.size());
    if (inserted) {
      stats.layers.push_back(LayerStats{node.label, to_string(node.kind), 0, 0, 0});
    }
    stats.layers[it->second].macs += macs;
    stats.total_macs += macs;
  }
  stats.layers.push_back(LayerStats{"elementwise", "elementwise", 0, 0, elementwise});
  stats.total_elementwise = elementwise;
  return stats;
}

template <typename T>
std::vector<StageNorms> extract_shared_norms(const Model<T>& model) {
  const ParamStore<T>& store = model.params();
  const auto l1 = [&](ParamId id) {
    double s = 0.0;
    for (const T v : store.tensor(id).data()) s += std::abs(static_cast<double>(v));
    return s;
  };
  const Aggregation agg = model.spec().aggregation;
  std::vector<StageNorms> out;
  if (agg == Aggregation::shared_lag || agg == Aggregation::shared_ordinal) {
    const auto& stages = model.dense_stages();
    for (std::size_t s = 0; s < stages.size(); ++s) {
      StageNorms sn{static_cast<int>(s + 1), {}};
      const auto& convs = stages[s].bank.convs;
      for (std::size_t i = 0; i < convs.size(); ++i) {
        sn.entries.push_back({static_cast<int>(i + 1), store.name(convs[i]), l1(convs[i])});
      }
      out.push_back(std::move(sn));
    }
    return out;
  }
  if (agg == Aggregation::rla) {
    const auto& stages = model.res_stages();
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const RlaStage& r = *stages[s].rla;
      StageNorms sn{static_cast<int>(s + 1), {}};
      if (model.spec().rla.sharing == Sharing::shared) {
        sn.entries.push_back({1, store.name(r.conv1x1.front()), l1(r.conv1x1.front())});
        sn.entries.push_back({2, store.name(r.conv3x3.front()), l1(r.conv3x3.front())});
      } else {
        for (std::size_t b = 0; b < r.conv1x1.size(); ++b) {
          sn.entries.push_back({static_cast<int>(b + 1), store.name(r.conv1x1[b]), l1(r.conv1x1[b])});
        }
      }
      out.push_back(std::move(sn));
    }
    return out;
  }
  throw ValueError("model '" + model.spec().name() + "' has no shared convolutions");
}

std::string norms_to_csv(const std::vector<StageNorms>& norms) {
  std::ostringstream os;
  os.precision(12);
  os << "stage,index,name,l1\n";
  for (const auto& s : norms) {
    for (const auto& e : s.entries) {
      os << s.stage << ',' << e.index << ',' << e.name << ',' << e.l1 << '\n';
    }
  }
  return os.str();
}

DecayFit fit_exponential(std::span<const double> series) {
  std::vector<double> x(series.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i + 1);
  return fit_exponential(x, series);
}

DecayFit fit_exponential(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValueError("fit_exponential: x and y lengths differ");
  if (y.size() < 3) {
    throw ValueError("fit_exponential needs at least 3 points, got " + std::to_string(y.size()));
  }
  const double n = static_cast<double>(y.size());
  std::vector<double> ly(y.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] > 0.0)) {
      throw ValueError("fit_exponential: value " + std::to_string(y[i]) + " at position " +
                       std::to_string(i) + " is not positive");
    }
    ly[i] = std::log(y[i]);
    mx += x[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = ly[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) throw ValueError("fit_exponential: x values are all equal");
  const double slope = sxy / sxx;
  DecayFit fit;
  fit.b = -slope;
  fit.a = std::exp(my - slope * mx);
  if (syy == 0.0) {
    fit.r_squared = 0.0;
    return fit;
  }
  double ss_res = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = ly[i] - (my + slope * (x[i] - mx));
    ss_res += r * r;
  }
  fit.r_squared = 1.0 - ss_res / syy;
  return fit;
}

#define RLA_INSTANTIATE_ANALYSIS(T)                                        \
  template ModelStats count_parameters(const Model<T>&);                   \
  template ModelStats count_macs(const Model<T>&, std::int64_t);           \
  template std::vector<StageNorms> extract_shared_norms(const Model<T>&);

RLA_INSTANTIATE_ANALYSIS(float)
RLA_INSTANTIATE_ANALYSIS(double)

#undef RLA_INSTANTIATE_ANALYSIS

std::optional<GoldenTarget> golden_target(const ModelSpec& spec) {
  if (spec.blocks != 0 || spec.rla.linear_mode || !spec.rla.exchange || !spec.rla.stage_k.empty()) {
    return std::nullopt;
  }
  const bool rla = spec.aggregation == Aggregation::rla;
  if (rla && spec.rla.order != ActivationOrder::pre_act) return std::nullopt;
  const bool shared = spec.rla.sharing == Sharing::shared;
  const auto target = [](double m) { return GoldenTarget{m, 0.01, false}; };
  switch (spec.family) {
    case Family::resnet164:
      if (spec.classes != 10) return std::nullopt;
      if (!rla) return spec.aggregation == Aggregation::none ? std::optional(target(1.72)) : std::nullopt;
      if (!shared) {
        if (spec.rla.k == 12 && spec.rla.variant == RlaVariant::v1) return target(1.90);
        return std::nullopt;
      }
      switch (spec.rla.k) {
        case 8: return target(1.73);
        case 12: return target(1.74);
        case 16: return target(1.75);
        case 24: return target(1.78);
        default: return std::nullopt;
      }
    case Family::resnet110:
      if (spec.aggregation == Aggregation::none) {
        if (spec.classes == 10) return target(1.73);
        if (spec.classes == 100) return target(1.74);
        return std::nullopt;
      }
      if (rla && shared && spec.rla.k == 4 && spec.rla.variant == RlaVariant::v1 && spec.classes == 10) {
        return target(1.80);
      }
      return std::nullopt;
    case Family::densenet_bc100:
      if (spec.classes != 10) return std::nullopt;
      if (spec.aggregation == Aggregation::dense) return target(0.80);
      if (spec.aggregation == Aggregation::shared_lag || spec.aggregation == Aggregation::shared_ordinal) {
        return target(0.60);
      }
      return std::nullopt;
    case Family::resnet50_shape: {
      if (spec.classes != 1000) return std::nullopt;
      const double m = spec.aggregation == Aggregation::none ? 24.37
                       : rla && shared && spec.rla.k == 32 ? 24.67
                                                           : 0.0;
      if (m == 0.0) return std::nullopt;
      return GoldenTarget{m, 0.05 * m, true};
    }
  }
  return std::nullopt;
}

}  // namespace rla
