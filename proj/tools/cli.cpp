#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

#include "rla/analysis.hpp"
#include "rla/error.hpp"
#include "rla/timeseries.hpp"
#include "rla/training.hpp"
#include "rla/verify.hpp"

namespace rla::cli {
namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string millions(std::int64_t n) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.2fM", static_cast<double>(n) / 1e6);
  return buf;
}

std::set<std::string> unite(std::initializer_list<const std::set<std::string>*> sets) {
  std::set<std::string> out;
  for (const auto* s : sets) out.insert(s->begin(), s->end());
  return out;
}

const std::set<std::string>& count_keys() {
  static const std::set<std::string> keys = [] {
    auto k = ModelSpec::config_keys();
    k.insert("resolution");
    return k;
  }();
  return keys;
}

const std::set<std::string>& verify_keys() {
  static const std::set<std::string> keys = [] {
    auto k = ModelSpec::config_keys();
    k.insert({"suite", "inject_split"});
    return k;
  }();
  return keys;
}

const std::set<std::string>& eval_keys() {
  static const std::set<std::string> keys{"checkpoint", "data", "synthetic", "split", "eval_batch"};
  return keys;
}

const std::set<std::string>& norms_keys() {
  static const std::set<std::string> keys = [] {
    auto k = ModelSpec::config_keys();
    k.insert("checkpoint");
    return k;
  }();
  return keys;
}

const std::set<std::string>& fit_keys() {
  static const std::set<std::string> keys{"values", "norms_csv", "stage"};
  return keys;
}

const std::set<std::string>& ts_keys() {
  static const std::set<std::string> keys{"mode", "alpha", "beta", "gamma", "beta1", "beta2", "lags"};
  return keys;
}

// A subcommand: its key set, the --config file and --key overrides.
struct Command {
  CLI::App* app = nullptr;
  std::set<std::string> keys;
  std::string config_path;
  Config overrides;
  std::string csv_path;
  bool golden = false;

  Config resolve(std::ostream& err) const {
    Config cfg = config_path.empty() ? Config{} : Config::load(config_path);
    cfg.merge(overrides);
    cfg.reject_unknown(keys);
    err << "# resolved configuration (" << app->get_name() << ")\n" << cfg.serialize();
    return cfg;
  }
};

void register_keys(Command& cmd) {
  cmd.app->add_option("--config", cmd.config_path, "key=value configuration file");
  for (const std::string& key : cmd.keys) {
    std::string flags = "--" + key;
    if (key.find('_') != std::string::npos) {
      std::string dashed = key;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      flags += ",--" + dashed;
    }
    Config* ov = &cmd.overrides;
    cmd.app->add_option_function<std::string>(flags, [ov, key](const std::string& v) { ov->set(key, v); },
                                              "overrides '" + key + "'");
  }
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << text;
  if (!f) throw IoError("write to '" + path + "' failed");
}

int cmd_build(const Config& cfg, std::ostream& out) {
  const ModelSpec spec = ModelSpec::from_config(cfg);
  const Model<float> model(spec);
  Graph<float> g(GraphMode::trace, const_cast<ParamStore<float>*>(&model.params()));
  ForwardRecord rec;
  const Shape in = model.input_shape(1);
  model.forward(g, g.input_shape(in), &rec);
  out << "model " << spec.name() << '\n'
      << "depth " << model.depth() << '\n'
      << "parameters " << model.params().learnable_count() << '\n'
      << "input " << in.str() << '\n'
      << "stem " << g.shape(rec.stem).str() << '\n';
  for (std::size_t s = 0; s < rec.stage_outputs.size(); ++s) {
    out << "stage" << s + 1 << ' ' << g.shape(rec.stage_outputs[s]).str() << '\n';
    if (s < rec.hidden.size() && !rec.hidden[s].empty()) {
      out << "stage" << s + 1 << ".h " << g.shape(rec.hidden[s].back()).str() << '\n';
    }
  }
  out << "pooled " << g.shape(rec.pooled).str() << '\n' << "logits " << g.shape(rec.logits).str() << '\n';
  return kOk;
}

int cmd_count(const Command& cmd, const Config& cfg, std::ostream& out) {
  const ModelSpec spec = ModelSpec::from_config(cfg);
  const Model<float> model(spec);
  const std::int64_t res = cfg.get_int("resolution", model.input_shape(1).h);
  const ModelStats stats = count_macs(model, res);
  out << "model " << spec.name() << '\n'
      << "parameters " << stats.total_params << " (" << millions(stats.total_params) << ")\n"
      << "macs " << stats.total_macs << " at " << res << 'x' << res << '\n'
      << "elementwise " << stats.total_elementwise << '\n';
  if (!cmd.csv_path.empty()) write_file(cmd.csv_path, stats.to_csv());
  if (!cmd.golden) return kOk;
  const auto target = golden_target(spec);
  if (!target) throw ValueError("no golden parameter target for this configuration");
  const double got = static_cast<double>(stats.total_params) / 1e6;
  const bool ok = std::abs(got - target->millions) <= target->tolerance + 1e-12;
  out << "golden " << num(target->millions) << "M +- " << num(target->tolerance) << "M: "
      << (ok ? "PASS" : "FAIL") << (target->informational ? " (informational)" : "") << '\n';
  return ok || target->informational ? kOk : kVerificationFailed;
}

int cmd_verify(const Config& cfg, std::ostream& out) {
  const std::string suite = cfg.get_string("suite", "all");
  const auto& names = verify::suite_names();
  if (std::find(names.begin(), names.end(), suite) == names.end()) {
    throw ValueError("unknown suite '" + suite + "'");
  }
  Config model_cfg = cfg;
  if (!model_cfg.has("model")) model_cfg.set("model", "rla-resnet164");
  Model<double> model(ModelSpec::from_config(model_cfg));
  if (const auto name = cfg.get("inject_split")) {
    model.params().split(*name);
    out << "fault injected: '" << *name << "' split from its share group\n";
  }
  const verify::Report report = verify::run_suite(suite, model);
  out << report.text();
  const auto failed = std::count_if(report.checks.begin(), report.checks.end(),
                                    [](const verify::Check& c) { return !c.passed; });
  out << "verify " << suite << ": " << report.checks.size() << " checks, " << failed << " failed\n";
  return report.passed() ? kOk : kVerificationFailed;
}

int cmd_train(const Config& cfg, std::ostream& out, std::ostream& err) {
  const ModelSpec spec = ModelSpec::from_config(cfg);
  DataConfig dc = DataConfig::from_config(cfg);
  dc.classes = spec.classes;
  TrainConfig tc = TrainConfig::from_config(cfg);
  tc.manifest_extra = dc.to_config();
  const PreparedData data = prepare_data(dc);
  err << "# " << data.train.size() << " training / " << data.val.size() << " validation images\n";
  Model<float> model(spec);
  const TrainResult result = train(model, data.train, data.val, data.normalizer, tc, [&](const EpochLog& e) {
    err << "epoch " << e.epoch << " lr " << num(e.lr) << " train_loss " << num(e.train_loss) << " val_acc "
        << num(e.val_acc) << '\n';
  });
  out << training_log_csv(result.log);
  out << "best_val_acc " << num(result.best_val_acc) << " epoch " << result.best_epoch << '\n';
  return kOk;
}

int cmd_eval(const Config& cfg, std::ostream& out) {
  const auto ckpt = cfg.get("checkpoint");
  if (!ckpt) throw ValueError("eval needs --checkpoint");
  const CheckpointMeta meta = read_checkpoint_meta(*ckpt);
  Model<float> model(ModelSpec::from_config(meta.config));
  load_checkpoint(*ckpt, model);
  const std::string split = cfg.get_string("split", cfg.has("data") ? "test" : "val");
  Dataset data;
  if (split == "test") {
    const auto dir = cfg.get("data");
    if (!dir) throw ValueError("split=test needs --data DIR");
    data = load_cifar10(std::filesystem::path(*dir) / "test_batch.bin", model.spec().classes);
  } else if (split == "val") {
    Config dcfg = meta.config;
    for (const char* key : {"data", "synthetic"}) {
      if (const auto v = cfg.get(key)) dcfg.set(key, *v);
    }
    data = prepare_data(DataConfig::from_config(dcfg)).val;
  } else {
    throw ValueError("split must be 'test' or 'val', got '" + split + "'");
  }
  const EvalResult r = evaluate(model, data, meta.normalizer, static_cast<int>(cfg.get_int("eval_batch", 256)));
  out << "images " << data.size() << '\n'
      << "accuracy " << num(r.accuracy) << '\n'
      << "loss " << num(r.loss) << '\n'
      << "checkpoint_epoch " << meta.epoch << '\n';
  return kOk;
}

int cmd_norms(const Command& cmd, const Config& cfg, std::ostream& out) {
  std::optional<Model<float>> model;
  if (const auto ckpt = cfg.get("checkpoint")) {
    Config mcfg = read_checkpoint_meta(*ckpt).config;
    for (const auto& [k, v] : cfg.entries()) {
      if (k != "checkpoint") mcfg.set(k, v);
    }
    model.emplace(ModelSpec::from_config(mcfg));
    load_checkpoint(*ckpt, *model);
  } else {
    model.emplace(ModelSpec::from_config(cfg));
  }
  const std::string csv = norms_to_csv(extract_shared_norms(*model));
  if (!cmd.csv_path.empty()) write_file(cmd.csv_path, csv);
  out << csv;
  return kOk;
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValueError("cannot parse value '" + item + "'");
    }
  }
  return v;
}

// The l1 column of one stage of a norms CSV (stage,index,name,l1).
std::vector<double> norms_column(const std::string& path, int stage) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open norms CSV '" + path + "'");
  std::string line;
  std::getline(f, line);
  std::vector<double> v;
  while (std::getline(f, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4) throw IoError("malformed norms CSV line '" + line + "'");
    if (std::stoi(cells[0]) == stage) v.push_back(std::stod(cells[3]));
  }
  return v;
}

int cmd_fit(const Config& cfg, std::ostream& out) {
  std::vector<double> values;
  if (const auto v = cfg.get("values")) {
    values = parse_values(*v);
  } else if (const auto p = cfg.get("norms_csv")) {
    values = norms_column(*p, static_cast<int>(cfg.get_int("stage", 1)));
  } else {
    throw ValueError("fit-decay needs --values or --norms_csv");
  }
  const DecayFit fit = fit_exponential(values);
  out << "a,b,r_squared\n" << num(fit.a) << ',' << num(fit.b) << ',' << num(fit.r_squared) << '\n';
  return kOk;
}

int cmd_ts(const Config& cfg, std::ostream& out) {
  const std::string mode = cfg.get_string("mode", "arma");
  const int lags = static_cast<int>(cfg.get_int("lags", 10));
  if (lags < 1) throw ValueError("lags must be >= 1");
  if (mode == "arma") {
    const ArmaParams p{cfg.get_double("beta", 0.0), cfg.get_double("gamma", 0.0)};
    const auto c = arma_ar_coefficients(p, lags);
    out << "lag,coefficient\n";
    for (std::size_t l = 0; l < c.size(); ++l) out << l + 1 << ',' << num(c[l]) << '\n';
  } else if (mode == "impulse") {
    const ArmaParams p{cfg.get_double("beta", 0.0), cfg.get_double("gamma", 0.0)};
    const auto sim = arma_impulse_response(p, lags);
    const auto closed = arma_impulse_closed_form(p, lags);
    out << "t,simulated,closed_form\n";
    for (std::size_t t = 0; t < sim.size(); ++t) out << t << ',' << num(sim[t]) << ',' << num(closed[t]) << '\n';
  } else if (mode == "recurrence") {
    const RecurrenceParams p{cfg.get_double("alpha", 0.0), cfg.get_double("gamma", 0.0),
                             cfg.get_double("beta1", 0.0), cfg.get_double("beta2", 0.0)};
    const auto sim = recurrence_expand(p, lags);
    const auto closed = recurrence_closed_form(p, lags);
    out << "lag,simulated,closed_form\n";
    for (std::size_t l = 0; l < sim.size(); ++l) out << l + 1 << ',' << num(sim[l]) << ',' << num(closed[l]) << '\n';
  } else {
    throw ValueError("mode must be arma, impulse or recurrence, got '" + mode + "'");
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Recurrent layer aggregation toolkit", "rla"};
  app.require_subcommand(1);

  std::vector<std::unique_ptr<Command>> commands;
  const auto add = [&](const std::string& name, const std::string& help, std::set<std::string> keys) {
    auto c = std::make_unique<Command>();
    c->app = app.add_subcommand(name, help);
    c->keys = std::move(keys);
    register_keys(*c);
    commands.push_back(std::move(c));
    return commands.back().get();
  };
  Command* build = add("build", "build a model and print its section shapes", ModelSpec::config_keys());
  Command* count = add("count", "count parameters and MACs", count_keys());
  count->app->add_flag("--golden", count->golden, "check the published parameter total");
  count->app->add_option("--csv", count->csv_path, "write per-layer statistics as CSV");
  Command* verify = add("verify", "run property suites", verify_keys());
  Command* trainc = add("train", "train on CIFAR-10 or the synthetic stand-in",
                        unite({&ModelSpec::config_keys(), &TrainConfig::config_keys(), &DataConfig::config_keys()}));
  Command* eval = add("eval", "evaluate a checkpoint", eval_keys());
  Command* norms = add("norms", "L1 norms of shared 1x1 kernels", norms_keys());
  norms->app->add_option("--csv", norms->csv_path, "also write the norms CSV to this path");
  Command* fit = add("fit-decay", "fit y = a exp(-b l) with R^2 on the log scale", fit_keys());
  Command* ts = add("ts-expand", "ARMA / recurrence expansion coefficients", ts_keys());

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    for (const auto& c : commands) {
      if (!c->app->parsed()) continue;
      const Config cfg = c->resolve(err);
      if (c.get() == build) return cmd_build(cfg, out);
      if (c.get() == count) return cmd_count(*c, cfg, out);
      if (c.get() == verify) return cmd_verify(cfg, out);
      if (c.get() == trainc) return cmd_train(cfg, out, err);
      if (c.get() == eval) return cmd_eval(cfg, out);
      if (c.get() == norms) return cmd_norms(*c, cfg, out);
      if (c.get() == fit) return cmd_fit(cfg, out);
      if (c.get() == ts) return cmd_ts(cfg, out);
    }
  } catch (const IoError& e) {
    err << "rla: I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericError& e) {
    err << "rla: " << e.what() << '\n';
    return kVerificationFailed;
  } catch (const Error& e) {
    err << "rla: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "rla: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

}  // namespace rla::cli
