#include "rla/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "rla/error.hpp"
#include "rla/ops.hpp"

namespace rla {

std::span<const std::uint8_t> Dataset::image(std::size_t i) const {
  if (i >= size()) throw ValueError("image index " + std::to_string(i) + " out of range");
  return {pixels.data() + i * kCifarPixels, static_cast<std::size_t>(kCifarPixels)};
}

void Dataset::append(const Dataset& other) {
  if (!labels.empty() && other.classes != classes) {
    throw ValueError("cannot append datasets with different class counts");
  }
  classes = other.classes;
  pixels.insert(pixels.end(), other.pixels.begin(), other.pixels.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

Dataset load_cifar10(const std::filesystem::path& path, int classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open CIFAR file '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
    throw IoError("CIFAR file '" + path.string() + "' has " + std::to_string(bytes.size()) +
                  " bytes, not a positive multiple of " + std::to_string(kCifarRecord));
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  Dataset d;
  d.classes = classes;
  d.labels.resize(n);
  d.pixels.resize(n * kCifarPixels);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kCifarRecord;
    if (rec[0] >= classes) {
      throw IoError("CIFAR file '" + path.string() + "' record " + std::to_string(i) +
                    " has label " + std::to_string(rec[0]) + " >= " + std::to_string(classes));
    }
    d.labels[i] = rec[0];
    std::copy_n(rec + 1, kCifarPixels, d.pixels.data() + i * kCifarPixels);
  }
  return d;
}

Dataset load_cifar10_dir(const std::filesystem::path& dir, bool test) {
  if (test) return load_cifar10(dir / "test_batch.bin");
  Dataset d;
  for (int i = 1; i <= 5; ++i) d.append(load_cifar10(dir / ("data_batch_" + std::to_string(i) + ".bin")));
  return d;
}

void write_cifar10(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write CIFAR file '" + path.string() + "'");
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto label = static_cast<char>(data.labels[i]);
    out.write(&label, 1);
    const auto img = data.image(i);
    out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

Dataset synthetic_cifar(std::size_t count, int classes, std::uint64_t seed) {
  if (classes < 2 || classes > 255) throw ValueError("synthetic_cifar needs 2..255 classes");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  constexpr double kPi = 3.14159265358979323846;
  constexpr int kWaves = 3;
  // Class template: per channel, a base level plus a few low-frequency waves.
  struct Wave {
    double fy, fx, phase, amp;
  };
  std::vector<std::array<double, 3>> base(static_cast<std::size_t>(classes));
  std::vector<std::array<std::array<Wave, kWaves>, 3>> waves(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    for (int ch = 0; ch < 3; ++ch) {
      base[c][ch] = 100.0 + 56.0 * unit(rng);
      for (auto& w : waves[c][ch]) {
        w = Wave{1.0 + 2.0 * unit(rng), 1.0 + 2.0 * unit(rng), 2.0 * kPi * unit(rng),
                 10.0 + 25.0 * unit(rng)};
      }
    }
  }
  std::normal_distribution<double> noise(0.0, 90.0);
  std::uniform_int_distribution<int> shift(-8, 8);
  std::uniform_int_distribution<int> label_dist(0, classes - 1);
  Dataset d;
  d.classes = classes;
  d.labels.resize(count);
  d.pixels.resize(count * kCifarPixels);
  for (std::size_t i = 0; i < count; ++i) {
    const int c = label_dist(rng);
    const int sy = shift(rng);
    const int sx = shift(rng);
    const bool flip = unit(rng) < 0.5;
    const double gain = 0.7 + 0.6 * unit(rng);
    d.labels[i] = c;
    std::uint8_t* img = d.pixels.data() + i * kCifarPixels;
    for (int ch = 0; ch < 3; ++ch) {
      for (int y = 0; y < kCifarSide; ++y) {
        for (int x = 0; x < kCifarSide; ++x) {
          const double u = static_cast<double>(y + sy) / kCifarSide;
          const double v = static_cast<double>((flip ? kCifarSide - 1 - x : x) + sx) / kCifarSide;
          double p = base[c][ch];
          for (const auto& w : waves[c][ch]) p += w.amp * std::sin(2.0 * kPi * (w.fy * u + w.fx * v) + w.phase);
          p = 128.0 + gain * (p - 128.0) + noise(rng);
          img[(ch * kCifarSide + y) * kCifarSide + x] =
              static_cast<std::uint8_t>(std::clamp(std::lround(p), 0L, 255L));
        }
      }
    }
  }
  return d;
}

Split split_train_val(const Dataset& data, std::size_t val_size, std::uint64_t seed) {
  if (val_size >= data.size()) {
    throw ValueError("validation size " + std::to_string(val_size) + " leaves no training data out of " +
                     std::to_string(data.size()));
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  Split s;
  s.train.classes = s.val.classes = data.classes;
  const std::size_t n_train = data.size() - val_size;
  for (std::size_t k = 0; k < order.size(); ++k) {
    Dataset& dst = k < n_train ? s.train : s.val;
    const auto img = data.image(order[k]);
    dst.pixels.insert(dst.pixels.end(), img.begin(), img.end());
    dst.labels.push_back(data.labels[order[k]]);
  }
  return s;
}

Dataset take(const Dataset& data, std::size_t n) {
  if (n == 0 || n >= data.size()) return data;
  Dataset d;
  d.classes = data.classes;
  d.labels.assign(data.labels.begin(), data.labels.begin() + static_cast<std::ptrdiff_t>(n));
  d.pixels.assign(data.pixels.begin(), data.pixels.begin() + static_cast<std::ptrdiff_t>(n * kCifarPixels));
  return d;
}

Normalizer Normalizer::fit(const Dataset& train) {
  if (train.size() == 0) throw ValueError("cannot fit normalization on an empty dataset");
  Normalizer norm;
  const std::int64_t plane = kCifarSide * kCifarSide;
  for (int ch = 0; ch < 3; ++ch) {
    double sum = 0.0;
    double sq = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      const std::uint8_t* p = train.pixels.data() + i * kCifarPixels + ch * plane;
      for (std::int64_t k = 0; k < plane; ++k) {
        const double v = p[k] / 255.0;
        sum += v;
        sq += v * v;
      }
    }
    const double n = static_cast<double>(train.size() * plane);
    norm.mean[ch] = sum / n;
    norm.std[ch] = std::sqrt(std::max(sq / n - norm.mean[ch] * norm.mean[ch], 1e-12));
  }
  return norm;
}

const std::set<std::string>& DataConfig::config_keys() {
  static const std::set<std::string> keys{"data", "synthetic", "subset", "val_size", "seed", "classes"};
  return keys;
}

DataConfig DataConfig::from_config(const Config& cfg) {
  DataConfig d;
  d.dir = cfg.get_string("data", "");
  d.synthetic = cfg.get_bool("synthetic", d.synthetic);
  const auto subset = cfg.get_int("subset", 0);
  const auto val = cfg.get_int("val_size", static_cast<std::int64_t>(d.val_size));
  if (subset < 0 || val < 1) throw ValueError("subset must be >= 0 and val_size >= 1");
  d.subset = static_cast<std::size_t>(subset);
  d.val_size = static_cast<std::size_t>(val);
  d.seed = cfg.get_u64("seed", d.seed);
  d.classes = static_cast<int>(cfg.get_int("classes", d.classes));
  return d;
}

Config DataConfig::to_config() const {
  Config c;
  if (!dir.empty()) c.set("data", dir.string());
  c.set("synthetic", synthetic ? "true" : "false");
  c.set("subset", std::to_string(subset));
  c.set("val_size", std::to_string(val_size));
  c.set("seed", std::to_string(seed));
  c.set("classes", std::to_string(classes));
  return c;
}

PreparedData prepare_data(const DataConfig& cfg) {
  Dataset pool;
  if (cfg.synthetic) {
    const std::size_t n_train = cfg.subset > 0 ? cfg.subset : cfg.synthetic_train;
    pool = synthetic_cifar(n_train + cfg.val_size, cfg.classes, cfg.seed);
  } else {
    if (cfg.dir.empty()) throw ValueError("no data source: set a CIFAR-10 directory or synthetic=true");
    if (!std::filesystem::is_directory(cfg.dir)) {
      throw IoError("CIFAR-10 directory '" + cfg.dir.string() + "' does not exist");
    }
    pool = load_cifar10_dir(cfg.dir);
    if (cfg.classes != pool.classes) {
      throw ValueError("CIFAR-10 has 10 classes, configuration asks for " + std::to_string(cfg.classes));
    }
  }
  Split split = split_train_val(pool, cfg.val_size, cfg.seed);
  PreparedData out;
  out.train = take(split.train, cfg.subset);
  out.val = std::move(split.val);
  out.normalizer = Normalizer::fit(out.train);
  return out;
}

AugmentDraw draw_augment(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> offset(0, 8);
  std::bernoulli_distribution coin(0.5);
  AugmentDraw d;
  d.dy = offset(rng);
  d.dx = offset(rng);
  d.flip = coin(rng);
  return d;
}

void augment(std::span<const float> in, std::span<float> out, const AugmentDraw& draw) {
  if (static_cast<std::int64_t>(in.size()) != kCifarPixels ||
      static_cast<std::int64_t>(out.size()) != kCifarPixels) {
    throw ShapeError("augment expects (3,32,32) images");
  }
  if (draw.dy < 0 || draw.dy > 8 || draw.dx < 0 || draw.dx > 8) {
    throw ValueError("crop offset outside the 40x40 padded image");
  }
  const std::int64_t s = kCifarSide;
  for (std::int64_t ch = 0; ch < 3; ++ch) {
    for (std::int64_t y = 0; y < s; ++y) {
      const std::int64_t sy = y + draw.dy - 4;
      for (std::int64_t x = 0; x < s; ++x) {
        const std::int64_t cx = draw.flip ? s - 1 - x : x;
        const std::int64_t sx = cx + draw.dx - 4;
        const bool inside = sy >= 0 && sy < s && sx >= 0 && sx < s;
        out[static_cast<std::size_t>((ch * s + y) * s + x)] =
            inside ? in[static_cast<std::size_t>((ch * s + sy) * s + sx)] : 0.0f;
      }
    }
  }
}

template <typename T>
Tensor<T> make_batch(const Dataset& data, std::span<const std::size_t> indices,
                     const Normalizer& norm, std::mt19937_64* rng) {
  const auto n = static_cast<std::int64_t>(indices.size());
  Tensor<T> out(Shape{n, 3, kCifarSide, kCifarSide});
  std::vector<float> raw(kCifarPixels);
  std::vector<float> aug(kCifarPixels);
  const std::int64_t plane = kCifarSide * kCifarSide;
  for (std::int64_t b = 0; b < n; ++b) {
    const auto img = data.image(indices[static_cast<std::size_t>(b)]);
    for (std::int64_t k = 0; k < kCifarPixels; ++k) raw[k] = static_cast<float>(img[k]) / 255.0f;
    const std::vector<float>* src = &raw;
    if (rng != nullptr) {
      augment(raw, aug, draw_augment(*rng));
      src = &aug;
    }
    T* dst = out.ptr() + b * kCifarPixels;
    for (std::int64_t ch = 0; ch < 3; ++ch) {
      for (std::int64_t k = 0; k < plane; ++k) {
        const double v = (*src)[ch * plane + k];
        dst[ch * plane + k] = static_cast<T>((v - norm.mean[ch]) / norm.std[ch]);
      }
    }
  }
  return out;
}

namespace {

std::vector<int> parse_milestones(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ValueError("cannot parse milestone '" + item + "'");
    }
  }
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (const int x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
  return s;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

const std::set<std::string>& TrainConfig::config_keys() {
  static const std::set<std::string> keys{"batch",      "epochs",    "lr",        "momentum",
                                          "weight_decay", "lr_factor", "milestones", "seed",
                                          "augment",    "stop_after", "eval_batch", "log",
                                          "checkpoint"};
  return keys;
}

TrainConfig TrainConfig::from_config(const Config& cfg) {
  TrainConfig t;
  t.batch = static_cast<int>(cfg.get_int("batch", t.batch));
  t.epochs = static_cast<int>(cfg.get_int("epochs", t.epochs));
  t.lr = cfg.get_double("lr", t.lr);
  t.momentum = cfg.get_double("momentum", t.momentum);
  t.weight_decay = cfg.get_double("weight_decay", t.weight_decay);
  t.lr_factor = cfg.get_double("lr_factor", t.lr_factor);
  if (const auto m = cfg.get("milestones")) t.milestones = parse_milestones(*m);
  t.seed = cfg.get_u64("seed", t.seed);
  t.augment = cfg.get_bool("augment", t.augment);
  t.stop_after = static_cast<int>(cfg.get_int("stop_after", t.stop_after));
  t.eval_batch = static_cast<int>(cfg.get_int("eval_batch", t.eval_batch));
  t.log_path = cfg.get_string("log", "");
  t.checkpoint_path = cfg.get_string("checkpoint", "");
  t.validate();
  return t;
}

Config TrainConfig::to_config() const {
  Config c;
  c.set("batch", std::to_string(batch));
  c.set("epochs", std::to_string(epochs));
  c.set("lr", fmt_double(lr));
  c.set("momentum", fmt_double(momentum));
  c.set("weight_decay", fmt_double(weight_decay));
  c.set("lr_factor", fmt_double(lr_factor));
  c.set("milestones", join(resolved_milestones()));
  c.set("seed", std::to_string(seed));
  c.set("augment", augment ? "true" : "false");
  c.set("stop_after", std::to_string(stop_after));
  c.set("eval_batch", std::to_string(eval_batch));
  if (!log_path.empty()) c.set("log", log_path.string());
  if (!checkpoint_path.empty()) c.set("checkpoint", checkpoint_path.string());
  return c;
}

std::vector<int> TrainConfig::resolved_milestones() const {
  if (!milestones.empty()) return milestones;
  std::vector<int> out;
  for (const int m : {150, 225}) {
    const int scaled = static_cast<int>(static_cast<std::int64_t>(epochs) * m / 300);
    if (scaled > 0 && scaled < epochs && (out.empty() || scaled > out.back())) out.push_back(scaled);
  }
  return out;
}

void TrainConfig::validate() const {
  if (batch < 2) throw ValueError("batch must be >= 2 (batch norm), got " + std::to_string(batch));
  if (epochs < 1) throw ValueError("epochs must be >= 1, got " + std::to_string(epochs));
  if (!(lr > 0.0)) throw ValueError("lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ValueError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ValueError("weight_decay must be >= 0");
  if (!(lr_factor > 0.0)) throw ValueError("lr_factor must be positive");
  if (stop_after < 0) throw ValueError("stop_after must be >= 0");
  if (eval_batch < 1) throw ValueError("eval_batch must be >= 1");
  int prev = 0;
  for (const int m : resolved_milestones()) {
    if (m <= prev || m >= epochs) {
      throw ValueError("milestones must be strictly increasing within (0, epochs): " +
                       join(resolved_milestones()));
    }
    prev = m;
  }
}

LrSchedule::LrSchedule(double initial, std::vector<int> milestones, double factor)
    : initial_(initial), milestones_(std::move(milestones)), factor_(factor) {
  for (std::size_t i = 1; i < milestones_.size(); ++i) {
    if (milestones_[i] <= milestones_[i - 1]) throw ValueError("milestones must be strictly increasing");
  }
}

double LrSchedule::at(int epoch) const {
  double lr = initial_;
  for (const int m : milestones_) {
    if (epoch >= m) lr *= factor_;
  }
  return lr;
}

template <typename T>
void Sgd<T>::step(ParamStore<T>& store, double lr) {
  const auto groups = static_cast<std::int32_t>(store.group_count());
  if (velocity_.size() < static_cast<std::size_t>(groups)) velocity_.resize(static_cast<std::size_t>(groups));
  const T mu = static_cast<T>(momentum_);
  const T step = static_cast<T>(lr);
  for (std::int32_t gi = 0; gi < groups; ++gi) {
    auto& group = store.group(gi);
    if (!is_learnable(group.role) || !group.tensor.has_grad()) continue;
    const T wd = is_decayed(group.role) ? static_cast<T>(weight_decay_) : T(0);
    auto w = group.tensor.data();
    auto grad = group.tensor.grad();
    auto& v = velocity_[static_cast<std::size_t>(gi)];
    if (v.size() != w.size()) v.assign(w.size(), T(0));
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T g = grad[i] + wd * w[i];
      v[i] = mu * v[i] + g;
      w[i] -= step * (g + mu * v[i]);
    }
  }
}

template <typename T>
EvalResult evaluate(Model<T>& model, const Dataset& data, const Normalizer& norm, int batch) {
  if (data.size() == 0) throw ValueError("evaluate: empty dataset");
  if (batch < 1) throw ValueError("evaluate: batch must be >= 1");
  std::size_t correct = 0;
  double loss_sum = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch), data.size() - start);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), start);
    Graph<T> g(GraphMode::eval, &model.params());
    const Var logits = model.forward(g, g.input(make_batch<T>(data, idx, norm, nullptr)));
    const std::span<const std::int64_t> labels(data.labels.data() + start, n);
    const Var loss = softmax_xent(g, logits, labels);
    loss_sum += static_cast<double>(g.value(loss)[0]) * static_cast<double>(n);
    const Tensor<T>& z = g.value(logits);
    const std::int64_t k = z.shape().c;
    for (std::size_t r = 0; r < n; ++r) {
      const T* row = z.ptr() + static_cast<std::int64_t>(r) * k;
      const auto pred = std::max_element(row, row + k) - row;
      if (pred == labels[r]) ++correct;
    }
  }
  return EvalResult{static_cast<double>(correct) / static_cast<double>(data.size()),
                    loss_sum / static_cast<double>(data.size())};
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,lr,train_loss,val_acc\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << e.lr << ',' << e.train_loss << ',' << e.val_acc << '\n';
  }
  return os.str();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::seed_seq::result_type low32(std::uint64_t v) { return static_cast<std::uint32_t>(v); }
std::seed_seq::result_type high32(std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); }

}  // namespace

template <typename T>
TrainResult train(Model<T>& model, const Dataset& train_set, const Dataset& val_set,
                  const Normalizer& norm, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (train_set.size() < 2) throw ValueError("training needs at least 2 images");
  if (val_set.size() == 0) throw ValueError("training needs a non-empty validation set");
  if (train_set.classes != model.spec().classes) {
    throw ValueError("dataset has " + std::to_string(train_set.classes) + " classes, model " +
                     std::to_string(model.spec().classes));
  }
  const LrSchedule schedule(cfg.lr, cfg.resolved_milestones(), cfg.lr_factor);
  Sgd<T> opt(cfg.momentum, cfg.weight_decay);
  ParamStore<T>& store = model.params();
  const int run_epochs = cfg.stop_after > 0 ? std::min(cfg.stop_after, cfg.epochs) : cfg.epochs;

  TrainResult result;
  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 0; epoch < run_epochs; ++epoch) {
    std::seed_seq seq{low32(cfg.seed), high32(cfg.seed), static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = schedule.at(epoch);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::size_t step = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch), ++step) {
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), order.size() - start);
      if (n < 2) continue;
      const std::span<const std::size_t> idx(order.data() + start, n);
      std::vector<std::int64_t> labels(n);
      for (std::size_t i = 0; i < n; ++i) labels[i] = train_set.labels[idx[i]];

      Graph<T> g(GraphMode::train, &store);
      const Var images = g.input(make_batch<T>(train_set, idx, norm, cfg.augment ? &rng : nullptr));
      const Var loss = softmax_xent(g, model.forward(g, images), std::span<const std::int64_t>(labels));
      const double value = static_cast<double>(g.value(loss)[0]);
      if (!std::isfinite(value)) {
        std::string where = "no node holds a non-finite value";
        if (const auto bad = g.first_nonfinite()) {
          const auto& node = g.node(*bad);
          where = "first non-finite node: '" + node.label + "' (" + to_string(node.kind) + ")";
        }
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step) + "; " + where);
      }
      store.zero_grad();
      g.backward(loss, true);
      opt.step(store, lr);
      loss_sum += value * static_cast<double>(n);
      seen += n;
    }

    const EvalResult val = evaluate(model, val_set, norm, cfg.eval_batch);
    const EpochLog entry{epoch, lr, loss_sum / static_cast<double>(std::max<std::size_t>(seen, 1)),
                         val.accuracy};
    result.log.push_back(entry);
    if (val.accuracy > result.best_val_acc) {
      result.best_val_acc = val.accuracy;
      result.best_epoch = epoch;
      if (!cfg.checkpoint_path.empty()) {
        CheckpointMeta meta;
        meta.config = model.spec().to_config();
        meta.config.merge(cfg.to_config());
        meta.config.merge(cfg.manifest_extra);
        meta.normalizer = norm;
        meta.epoch = epoch;
        meta.val_acc = val.accuracy;
        save_checkpoint(cfg.checkpoint_path, model, meta);
      }
    }
    if (!cfg.log_path.empty()) write_text(cfg.log_path, training_log_csv(result.log));
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

namespace {

constexpr char kMagic[4] = {'R', 'L', 'A', 'C'};

template <typename U>
void put_le(std::string& buf, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  buf.append(bytes, sizeof(U));
}

template <typename U>
U get_le(const char* p) {
  char bytes[sizeof(U)];
  std::memcpy(bytes, p, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U value;
  std::memcpy(&value, bytes, sizeof(U));
  return value;
}

template <typename T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

struct RawCheckpoint {
  nlohmann::json manifest;
  std::string payload;
};

RawCheckpoint read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IoError("'" + path.string() + "' is not an RLAC checkpoint");
  }
  const auto version = get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint '" + path.string() + "' has unsupported version " + std::to_string(version));
  }
  const auto len = get_le<std::uint32_t>(bytes.data() + 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(len)) {
    throw IoError("checkpoint '" + path.string() + "' is truncated in its manifest");
  }
  RawCheckpoint raw;
  try {
    raw.manifest = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint '" + path.string() + "' has a malformed manifest: " + e.what());
  }
  raw.payload = bytes.substr(12 + len);
  return raw;
}

// Reads one tensor entry (which must carry a payload) as doubles.
std::vector<double> read_payload(const RawCheckpoint& raw, const nlohmann::json& entry,
                                 std::int64_t count) {
  const std::string dtype = entry.at("dtype").get<std::string>();
  const auto offset = entry.at("offset").get<std::uint64_t>();
  const std::size_t width = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
  if (width == 0) throw IoError("checkpoint tensor has unknown dtype '" + dtype + "'");
  if (offset + width * static_cast<std::uint64_t>(count) > raw.payload.size()) {
    throw IoError("checkpoint tensor '" + entry.at("name").get<std::string>() + "' runs past the payload");
  }
  std::vector<double> out(static_cast<std::size_t>(count));
  const char* p = raw.payload.data() + offset;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = width == 4 ? static_cast<double>(get_le<float>(p + i * 4)) : get_le<double>(p + i * 8);
  }
  return out;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model,
                     const CheckpointMeta& meta) {
  const ParamStore<T>& store = model.params();
  nlohmann::json tensors = nlohmann::json::array();
  std::string payload;
  std::vector<std::string> first_member(store.group_count());
  const auto add_payload = [&](const std::string& name, const char* dtype, Shape s,
                               const auto& values) {
    tensors.push_back({{"name", name},
                       {"dtype", dtype},
                       {"shape", {s.n, s.c, s.h, s.w}},
                       {"offset", payload.size()}});
    for (const auto v : values) put_le(payload, v);
  };
  for (std::int32_t i = 0; i < static_cast<std::int32_t>(store.entry_count()); ++i) {
    const ParamId id{i};
    const auto gi = static_cast<std::size_t>(store.group_of(id));
    const std::string& name = store.name(id);
    if (!first_member[gi].empty()) {
      tensors.push_back({{"name", name}, {"alias_of", first_member[gi]}});
      continue;
    }
    first_member[gi] = name;
    const Tensor<T>& t = store.tensor(id);
    add_payload(name, dtype_name<T>(), t.shape(), t.data());
  }
  add_payload("normalization.mean", "f64", Shape{3, 1, 1, 1}, meta.normalizer.mean);
  add_payload("normalization.std", "f64", Shape{3, 1, 1, 1}, meta.normalizer.std);

  const nlohmann::json manifest{{"config", meta.config.serialize()},
                                {"epoch", meta.epoch},
                                {"val_acc", meta.val_acc},
                                {"tensors", tensors}};
  const std::string text = manifest.dump();
  std::string file(kMagic, 4);
  put_le(file, kCheckpointVersion);
  put_le(file, static_cast<std::uint32_t>(text.size()));
  file += text;
  file += payload;

  const std::filesystem::path tmp = path.string() + ".tmp";
  write_text(tmp, file);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  const RawCheckpoint raw = read_raw(path);
  CheckpointMeta meta;
  try {
    meta.config = Config::parse(raw.manifest.at("config").get<std::string>(), path.string());
    meta.epoch = raw.manifest.at("epoch").get<int>();
    meta.val_acc = raw.manifest.at("val_acc").get<double>();
    for (const auto& e : raw.manifest.at("tensors")) {
      const std::string name = e.at("name").get<std::string>();
      if (name == "normalization.mean" || name == "normalization.std") {
        const auto v = read_payload(raw, e, 3);
        auto& dst = name == "normalization.mean" ? meta.normalizer.mean : meta.normalizer.std;
        std::copy(v.begin(), v.end(), dst.begin());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint '" + path.string() + "' manifest is incomplete: " + e.what());
  }
  return meta;
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, Model<T>& model) {
  const RawCheckpoint raw = read_raw(path);
  ParamStore<T>& store = model.params();
  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& e : raw.manifest.at("tensors")) by_name[e.at("name").get<std::string>()] = &e;

  std::vector<std::string> first_member(store.group_count());
  for (std::int32_t i = 0; i < static_cast<std::int32_t>(store.entry_count()); ++i) {
    const ParamId id{i};
    const std::string& name = store.name(id);
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ValueError("checkpoint lacks parameter '" + name + "'");
    const nlohmann::json& e = *it->second;
    const auto gi = static_cast<std::size_t>(store.group_of(id));
    const bool alias = e.contains("alias_of");
    if (!first_member[gi].empty()) {
      if (!alias || e.at("alias_of").get<std::string>() != first_member[gi]) {
        throw ValueError("checkpoint share structure differs at '" + name + "'");
      }
      continue;
    }
    if (alias) throw ValueError("checkpoint share structure differs at '" + name + "'");
    first_member[gi] = name;
    Tensor<T>& t = store.tensor(id);
    const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
    const Shape s = shape.size() == 4 ? Shape{shape[0], shape[1], shape[2], shape[3]} : Shape{};
    if (!(s == t.shape())) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + s.str() + ", model expects " +
                       t.shape().str());
    }
    const auto values = read_payload(raw, e, t.numel());
    for (std::int64_t k = 0; k < t.numel(); ++k) t[k] = static_cast<T>(values[static_cast<std::size_t>(k)]);
  }
  const std::size_t expected = store.entry_count() + 2;
  if (by_name.size() != expected) {
    throw ValueError("checkpoint holds " + std::to_string(by_name.size()) + " tensors, model expects " +
                     std::to_string(expected));
  }
}

#define RLA_INSTANTIATE_TRAINING(T)                                                             \
  template Tensor<T> make_batch(const Dataset&, std::span<const std::size_t>, const Normalizer&, \
                                std::mt19937_64*);                                              \
  template class Sgd<T>;                                                                        \
  template EvalResult evaluate(Model<T>&, const Dataset&, const Normalizer&, int);              \
  template TrainResult train(Model<T>&, const Dataset&, const Dataset&, const Normalizer&,      \
                             const TrainConfig&, const std::function<void(const EpochLog&)>&);  \
  template void save_checkpoint(const std::filesystem::path&, const Model<T>&,                  \
                                const CheckpointMeta&);                                         \
  template void load_checkpoint(const std::filesystem::path&, Model<T>&);

RLA_INSTANTIATE_TRAINING(float)
RLA_INSTANTIATE_TRAINING(double)

#undef RLA_INSTANTIATE_TRAINING

}  // namespace rla
