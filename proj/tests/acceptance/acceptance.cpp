// One PASS/FAIL line per acceptance criterion. Supporting measurements are
// printed on "  #" lines above each verdict.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rla/analysis.hpp"
#include "rla/error.hpp"
#include "rla/training.hpp"
#include "rla/verify.hpp"

using namespace rla;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = true;
  std::vector<std::string> notes;

  void note(const std::string& s) { notes.push_back(s); }
  void require(bool ok, const std::string& s) {
    passed = passed && ok;
    notes.push_back(std::string(ok ? "ok   " : "MISS ") + s);
  }
};

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

void absorb(Outcome& o, const verify::Report& r) {
  for (const auto& c : r.checks) {
    if (!c.passed) o.require(false, c.name + "  " + fmt(c.measured, 3) + " > " + fmt(c.tolerance, 3) + "  " + c.detail);
  }
  double worst = 0.0;
  for (const auto& c : r.checks) worst = std::max(worst, c.measured);
  o.require(r.passed(), std::to_string(r.checks.size()) + " checks in suite '" + r.suite + "', worst measured " + fmt(worst, 3));
}

Outcome parameter_goldens() {
  Outcome o;
  struct Case {
    std::string label;
    ModelSpec spec;
  };
  std::vector<Case> cases;
  const auto named = [](const std::string& name) { return ModelSpec::from_name(name); };
  cases.push_back({"ResNet-164", named("resnet164")});
  for (const int k : {8, 12, 16, 24}) {
    ModelSpec s = named("rla-resnet164");
    s.rla.k = k;
    cases.push_back({"RLA-ResNet-164 k=" + std::to_string(k), s});
  }
  ModelSpec unshared = named("rla-resnet164");
  unshared.rla.sharing = Sharing::unshared;
  cases.push_back({"RLA-ResNet-164 unshared v1", unshared});
  for (const auto v : {RlaVariant::v2, RlaVariant::v3, RlaVariant::v4, RlaVariant::v5, RlaVariant::v6}) {
    ModelSpec s = named("rla-resnet164");
    s.rla.variant = v;
    cases.push_back({std::string("RLA-ResNet-164 ") + to_string(v), s});
  }
  cases.push_back({"ResNet-110", named("resnet110")});
  ModelSpec r110 = named("rla-resnet110");
  r110.rla.k = 4;
  cases.push_back({"RLA-ResNet-110 k=4", r110});
  cases.push_back({"DenseNet-BC-100", named("densenet-bc100")});
  cases.push_back({"Shared-Lag DenseNet", named("shared-lag-densenet")});
  cases.push_back({"Shared-Ordinal DenseNet", named("shared-ordinal-densenet")});
  cases.push_back({"ResNet-50", named("resnet50")});
  ModelSpec r50 = named("rla-resnet50");
  r50.rla.k = 32;
  cases.push_back({"RLA-ResNet-50 k=32", r50});

  for (const auto& c : cases) {
    const auto target = golden_target(c.spec);
    if (!target) {
      o.require(false, c.label + ": no target");
      continue;
    }
    const std::int64_t n = count_parameters(Model<float>(c.spec)).total_params;
    const double m = static_cast<double>(n) / 1e6;
    const bool ok = std::abs(m - target->millions) <= target->tolerance + 1e-12;
    const std::string line = c.label + ": " + std::to_string(n) + " vs " + fmt(target->millions) + "M +- " +
                             fmt(target->tolerance) + "M";
    if (target->informational) {
      o.note(std::string(ok ? "info " : "info MISS ") + line + " (not gated)");
    } else {
      o.require(ok, line);
    }
  }
  return o;
}

Outcome linear_identity() {
  Outcome o;
  absorb(o, verify::linear_identity_suite(20, 12, 1));
  return o;
}

Outcome partition_identity() {
  Outcome o;
  absorb(o, verify::partition_suite(50, 1));
  return o;
}

Outcome arma_equivalence() {
  Outcome o;
  absorb(o, verify::arma_suite(20, 0.1));
  return o;
}

Outcome gradient_checks() {
  Outcome o;
  absorb(o, verify::gradcheck_suite(20, 1e-5, 3));
  return o;
}

Outcome desk_training() {
  Outcome o;
  DataConfig data;
  data.subset = 5000;
  data.val_size = 5000;
  data.seed = 1;
  if (const char* dir = std::getenv("RLA_CIFAR10_DIR"); dir && *dir) {
    data.dir = dir;
    o.note("data: CIFAR-10 from " + data.dir.string());
  } else {
    data.synthetic = true;
    o.note("data: synthetic CIFAR-layout stand-in (set RLA_CIFAR10_DIR to use CIFAR-10)");
  }
  const PreparedData prepared = prepare_data(data);

  ModelSpec spec = ModelSpec::from_name("rla-resnet164");
  spec.blocks = 3;
  spec.rla.k = 12;
  spec.seed = 1;
  TrainConfig cfg;
  cfg.batch = 128;
  cfg.epochs = 5;
  cfg.seed = 1;

  Model<float> model(spec);
  const TrainResult r = train(model, prepared.train, prepared.val, prepared.normalizer, cfg, [&](const EpochLog& e) {
    std::cout << "  # epoch " << e.epoch << " lr " << fmt(e.lr) << " loss " << fmt(e.train_loss) << " val_acc "
              << fmt(e.val_acc) << std::endl;
  });
  const double first = r.log.front().train_loss;
  const double last = r.log.back().train_loss;
  o.require(last <= 0.5 * first, "final loss " + fmt(last) + " <= 50% of epoch-1 loss " + fmt(first));
  o.require(r.log.back().val_acc >= 0.35, "final val accuracy " + fmt(r.log.back().val_acc) + " >= 0.35");

  Model<float> again(spec);
  TrainConfig once = cfg;
  once.stop_after = 1;
  const TrainResult r2 = train(again, prepared.train, prepared.val, prepared.normalizer, once);
  o.require(r2.log.front().train_loss == first,
            "rerun epoch-1 loss " + fmt(r2.log.front().train_loss, 17) + " == " + fmt(first, 17));
  return o;
}

Outcome declared_out_of_scope(const fs::path& root) {
  Outcome o;
  std::ifstream readme(root / "README.md");
  const std::string text((std::istreambuf_iterator<char>(readme)), std::istreambuf_iterator<char>());
  o.require(text.find("## Not reproduced at desk scale") != std::string::npos, "README declares the unreproduced results");
  o.require(fs::exists(root / "tools" / "long_run.sh"), "long-run script present");
  o.require(fs::exists(root / "configs" / "full_cifar.cfg"), "full-protocol config present");
  return o;
}

Outcome norm_mechanics() {
  Outcome o;
  const Model<float> lag(ModelSpec::from_name("shared-lag-densenet"));
  const auto norms = extract_shared_norms(lag);
  o.require(norms.size() == 3, std::to_string(norms.size()) + " stages");
  for (const auto& s : norms) {
    o.require(s.entries.size() == 15, "stage " + std::to_string(s.stage) + ": " + std::to_string(s.entries.size()) + " entries");
  }
  std::vector<double> series;
  for (int l = 1; l <= 15; ++l) series.push_back(std::exp(-0.4 * l));
  const DecayFit f = fit_exponential(series);
  o.require(f.r_squared == 1.0 || std::abs(f.r_squared - 1.0) <= 1e-12, "R^2 = " + fmt(f.r_squared, 17));
  o.require(std::abs(f.b - 0.4) <= 1e-9, "b = " + fmt(f.b, 17));
  return o;
}

struct Criterion {
  int id;
  std::string title;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::set<int> only;
  std::string root = ".";
  app.add_option("--only", only, "run only these criteria");
  app.add_option("--root", root, "repository root (README, tools, configs)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "parameter golden totals", 10, parameter_goldens},
      {2, "linear-mode aggregation identity", 60, linear_identity},
      {3, "partition identity", 10, partition_identity},
      {4, "ARMA / recurrence equivalence", 5, arma_equivalence},
      {5, "gradient checks", 300, gradient_checks},
      {6, "desk-scale training smoke", 1800, desk_training},
      {7, "unreproducible results declared", 1, [&] { return declared_out_of_scope(root); }},
      {8, "norm-extraction mechanics", 5, norm_mechanics},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && only.count(c.id) == 0) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.require(secs <= c.budget_seconds, "runtime " + fmt(secs, 3) + " s <= " + fmt(c.budget_seconds) + " s");
    for (const auto& n : o.notes) std::cout << "  # " << n << '\n';
    std::cout << (o.passed ? "PASS" : "FAIL") << "  criterion " << c.id << "  " << c.title << "  (" << fmt(secs, 3)
              << " s)" << std::endl;
    if (!o.passed) ++failed;
  }
  std::cout << failed << " criteria failed\n";
  return failed == 0 ? 0 : 1;
}
