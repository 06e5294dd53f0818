#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rla/config.hpp"
#include "rla/model_zoo.hpp"

namespace rla {

inline constexpr std::int64_t kCifarSide = 32;
inline constexpr std::int64_t kCifarPixels = 3 * kCifarSide * kCifarSide;
inline constexpr std::int64_t kCifarRecord = 1 + kCifarPixels;

// Images as raw bytes in CIFAR layout (channel-planar R, G, B, each 32x32
// row-major), one label per image.
struct Dataset {
  std::vector<std::uint8_t> pixels;
  std::vector<std::int64_t> labels;
  int classes = 10;

  std::size_t size() const { return labels.size(); }
  std::span<const std::uint8_t> image(std::size_t i) const;
  void append(const Dataset& other);
};

// Parses one binary file of 3073-byte records (label byte first).
Dataset load_cifar10(const std::filesystem::path& path, int classes = 10);
// data_batch_1..5.bin (train) or test_batch.bin (test) under `dir`.
Dataset load_cifar10_dir(const std::filesystem::path& dir, bool test = false);
void write_cifar10(const std::filesystem::path& path, const Dataset& data);

// Learnable stand-in in CIFAR layout: each class has a smooth colour
// template; images are randomly shifted, mirrored and noised copies.
Dataset synthetic_cifar(std::size_t count, int classes, std::uint64_t seed);

struct Split {
  Dataset train;
  Dataset val;
};

// Seeded shuffle, then the last `val_size` images become the validation set.
Split split_train_val(const Dataset& data, std::size_t val_size, std::uint64_t seed);
// First n images (all when n == 0 or n >= size).
Dataset take(const Dataset& data, std::size_t n);

// Per-channel statistics of pixels scaled to [0, 1].
struct Normalizer {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};

  static Normalizer fit(const Dataset& train);
};

// Where training images come from and how they are split.
struct DataConfig {
  std::filesystem::path dir;  // CIFAR-10 binary directory
  bool synthetic = false;     // use synthetic_cifar instead of `dir`
  std::size_t subset = 0;     // training images kept after the split (0 = all)
  std::size_t val_size = 5000;
  std::size_t synthetic_train = 45000;  // synthetic pool size when subset == 0
  std::uint64_t seed = 0;
  int classes = 10;

  // Keys: data, synthetic, subset, val_size, seed, classes.
  static DataConfig from_config(const Config& cfg);
  Config to_config() const;
  static const std::set<std::string>& config_keys();
};

struct PreparedData {
  Dataset train;
  Dataset val;
  Normalizer normalizer;  // fitted on `train` only
};

// Loads (or synthesizes) the training pool, splits off val_size images with
// a seeded shuffle, keeps the first `subset` training images and fits the
// normalization on them.
PreparedData prepare_data(const DataConfig& cfg);

// Pad-4 crop window and mirror flag of one augmented image.
struct AugmentDraw {
  int dy = 4;  // crop offset in the 40x40 padded image, 0..8
  int dx = 4;
  bool flip = false;
};

AugmentDraw draw_augment(std::mt19937_64& rng);

// in/out: (3, 32, 32) planar floats before normalization. Pixels outside the
// source image are zero.
void augment(std::span<const float> in, std::span<float> out, const AugmentDraw& draw);

// Batch tensor of the given images: scale to [0,1], augment (when rng is
// non-null), then normalize.
template <typename T>
Tensor<T> make_batch(const Dataset& data, std::span<const std::size_t> indices,
                     const Normalizer& norm, std::mt19937_64* rng);

struct TrainConfig {
  int batch = 128;
  int epochs = 300;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lr_factor = 0.1;
  // Empty: {150, 225} scaled by epochs / 300.
  std::vector<int> milestones;
  std::uint64_t seed = 0;
  bool augment = true;
  // Run only the first `stop_after` epochs of the schedule (0 = all).
  int stop_after = 0;
  int eval_batch = 256;
  std::filesystem::path log_path;
  std::filesystem::path checkpoint_path;
  // Merged into the config stored in each checkpoint manifest.
  Config manifest_extra;

  // Keys: batch, epochs, lr, momentum, weight_decay, lr_factor, milestones,
  // seed, augment, stop_after, eval_batch, log, checkpoint.
  static TrainConfig from_config(const Config& cfg);
  Config to_config() const;
  static const std::set<std::string>& config_keys();

  std::vector<int> resolved_milestones() const;
  void validate() const;
};

// Piecewise-constant learning rate divided by `factor` at each milestone.
class LrSchedule {
 public:
  LrSchedule(double initial, std::vector<int> milestones, double factor);
  double at(int epoch) const;
  const std::vector<int>& milestones() const { return milestones_; }

 private:
  double initial_;
  std::vector<int> milestones_;
  double factor_;
};

// Nesterov SGD with L2 weight decay on conv and linear weights:
// g += wd * w;  v = mu * v + g;  w -= lr * (g + mu * v).
template <typename T>
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  // Applies one step to every learnable share group holding a gradient.
  void step(ParamStore<T>& store, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<T>> velocity_;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  double best_val_acc = -1.0;
  int best_epoch = -1;
};

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

template <typename T>
EvalResult evaluate(Model<T>& model, const Dataset& data, const Normalizer& norm, int batch);

// Mini-batch training. The batch order and augmentation of epoch e depend
// only on (seed, e). Writes the CSV log and the best-validation checkpoint
// when their paths are set. A non-finite loss raises NumericError naming the
// first node holding a non-finite value.
template <typename T>
TrainResult train(Model<T>& model, const Dataset& train_set, const Dataset& val_set,
                  const Normalizer& norm, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

std::string training_log_csv(const std::vector<EpochLog>& log);

// Checkpoint: "RLAC", u32 version, u32 manifest length, JSON manifest
// (config, normalization, epoch, val_acc, tensors with name / dtype / shape /
// offset or alias_of), then little-endian payloads.
struct CheckpointMeta {
  Config config;
  Normalizer normalizer;
  int epoch = -1;
  double val_acc = 0.0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model,
                     const CheckpointMeta& meta);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

// Overwrites every parameter and running statistic of `model` from the file;
// names, share structure and shapes must agree.
template <typename T>
void load_checkpoint(const std::filesystem::path& path, Model<T>& model);

}  // namespace rla
