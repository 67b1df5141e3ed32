#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "segadapt/checkpoint.hpp"
#include "segadapt/models.hpp"
#include "segadapt/optimizer.hpp"
#include "segadapt/volume.hpp"
#include "segadapt/weight_maps.hpp"

namespace segadapt {

using Rng = std::mt19937_64;

struct TrainConfig {
  std::filesystem::path images;
  std::filesystem::path labels;
  std::filesystem::path weights;  // optional precomputed weight volume
  std::filesystem::path out_dir;
  WeightSpec weighting{};
  int classes = 4;
  int batch = 2;
  int crop = 64;
  /// Epochs over the training slices.
  int iterations = 1;
  /// 0 derives ceil(train pixels / (batch * crop^2)).
  int steps_per_epoch = 0;
  double lr = 1e-4;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 42;
  bool jitter = false;
  /// Fraction of slices, taken from the end of the stack, held out.
  double val_frac = 0.1;
  int depth = 3;
  int base_channels = 16;
  /// Length of the jitter phase appended by finetune_binary.
  int jitter_epochs = 10;

  UNetConfig unet() const;
  void validate() const;
};

struct SliceSplit {
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> val;
};

/// Trailing floor(val_frac * z) slices become validation.
SliceSplit split_slices(std::uint32_t z, double val_frac);

struct Batch {
  Tensor<float> x;                  // (n, 1, crop, crop)
  std::vector<std::uint8_t> labels;  // n * crop * crop
  std::vector<float> weights;       // n * crop * crop
  std::vector<std::uint32_t> slices;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> offsets;  // (y, x)
};

/// Uniform slice choice from `train_slices` and uniform crop offsets. When
/// cfg.jitter is set each image crop is jittered with draws from
/// `jitter_rng`, which leaves the batch sequence itself unchanged.
Batch sample_batch(const Volume3D& images, const Volume3D& labels, const Volume3D& weights,
                   std::span<const std::uint32_t> train_slices, const TrainConfig& cfg, Rng& rng,
                   Rng* jitter_rng = nullptr);

/// clamp(gain * x + bias, 0, 1).
ImagePlane apply_jitter(const ImagePlane& x, float gain, float bias);
/// Draws gain ~ U(0.85, 1.15) and bias ~ U(-0.1, 0.1).
ImagePlane jitter(const ImagePlane& x, Rng& rng);

/// Labels with `classes` classes: a label volume with more classes is
/// binarized (boundary = 1) when classes == 2.
Volume3D prepare_labels(const Volume3D& labels, int classes);

/// Weight volume for training: the supplied one (normalized per slice) or one
/// derived from the labels with cfg.weighting.
Volume3D resolve_weights(const Volume3D& labels, const Volume3D* supplied, const WeightSpec& spec);

/// Argmax segmentation of a full slice; pads by edge replication to the
/// UNet's spatial multiple.
LabelPlane predict_slice(const ModelParams<float>& params, const ImagePlane& image);
Volume3D predict_volume(const ModelParams<float>& params, const Volume3D& images);

struct EpochRecord {
  int epoch = 0;
  long steps = 0;
  double train_loss = 0.0;
  double val_jaccard_mean = 0.0;
  std::vector<double> val_jaccard;
};

struct TrainResult {
  ModelParams<float> final_params;
  ModelParams<float> best_params;
  std::vector<EpochRecord> log;
  std::vector<double> step_losses;
};

/// Minimizes weighted cross-entropy with Adam/SGD for cfg.iterations epochs,
/// validating after each epoch. When no slice is held out the metrics are
/// computed on the training slices. Throws DivergedLoss on a non-finite loss.
TrainResult train_supervised(ModelParams<float> init, const Volume3D& images, const Volume3D& labels,
                             const Volume3D& weights, const TrainConfig& cfg);

std::string metrics_csv(const std::vector<EpochRecord>& log, int classes);

/// File-driven training: reads cfg paths, writes metrics.csv, best.ckpt and
/// final.ckpt into cfg.out_dir.
TrainResult run_train(const TrainConfig& cfg);

struct FinetuneResult {
  PartialLoadReport load_report;
  ModelParams<float> initial;  // after partial load
  std::optional<TrainResult> binary;  // M2 phase
  std::optional<TrainResult> jitter;  // M3 phase
  ModelParams<float> output;
};

/// Moves a trained segmentation net to the 2-class boundary task: every layer
/// but the classifier head is transferred, then training continues on
/// binarized labels, followed by a jitter phase when cfg.jitter is set.
FinetuneResult finetune_binary(const ModelParams<float>& base, const Volume3D& images, const Volume3D& labels,
                               const Volume3D* supplied_weights, const TrainConfig& cfg);

/// File-driven variant; writes m2.ckpt (and m3.ckpt with jitter), the partial
/// load report and metrics CSVs into cfg.out_dir.
FinetuneResult run_finetune(const std::filesystem::path& base_checkpoint, const TrainConfig& cfg);

// ---- adversarial adaptation -------------------------------------------------

struct AdaptConfig {
  std::filesystem::path source_labels;
  std::filesystem::path target_images;
  /// Read only for reporting target Jaccard; absent is fine.
  std::filesystem::path target_labels;
  std::filesystem::path pretrained;
  std::filesystem::path out_dir;
  double disc_lr = 1e-4;
  double gen_lr = 1e-6;
  int steps_per_epoch = 20;
  int epochs = 5;
  int d_steps = 1;
  int g_steps = 1;
  int batch = 2;
  /// Smaller than the slice so crops differ.
  int crop = 32;
  std::uint64_t seed = 42;
  bool jitter = false;
  /// Trailing fraction of slices (at least one) reserved for the probe set.
  double probe_frac = 0.25;
  int probe_crops = 16;
  /// Real maps are (1 - s) * onehot + s / C.
  float label_smoothing = 0.1f;
  DiscConfig disc{};

  void validate() const;
};

struct AdaptEpochRecord {
  int epoch = 0;
  double d_loss_real = 0.0;
  double d_loss_fake = 0.0;
  double g_loss = 0.0;
  double d_probe_acc = 0.0;
  double tgt_jaccard_boundary = -1.0;
};

struct AdaptResult {
  ModelParams<float> segmenter;
  ModelParams<float> discriminator;
  std::vector<AdaptEpochRecord> log;
  /// Discriminator losses of the very first update (L2, L3).
  double first_d_loss_real = 0.0;
  double first_d_loss_fake = 0.0;
};

struct AdaptHooks {
  /// Boundary Jaccard of the current segmenter on the target, or -1. Reporting
  /// only; nothing it returns feeds a gradient.
  std::function<double(const ModelParams<float>&)> target_report;
  std::function<void(int epoch, const ModelParams<float>&)> on_epoch;
};

/// Unsupervised adaptation of a binary segmenter. Per step the discriminator
/// minimizes L2 + L3 (real = smoothed one-hot source labels, fake = softmax of
/// the frozen segmenter on target crops), then the segmenter minimizes the
/// non-saturating bce(D(fake), real) with the discriminator frozen. The
/// supervised source loss is never used. Only target images are seen.
AdaptResult adapt_adversarial(ModelParams<float> segmenter, const Volume3D& source_labels,
                              const Volume3D& target_images, const AdaptConfig& cfg, const AdaptHooks& hooks = {});

std::string adapt_metrics_csv(const std::vector<AdaptEpochRecord>& log);

/// Boundary (class 1) Jaccard pooled over all slices.
double boundary_jaccard(const ModelParams<float>& params, const Volume3D& images, const Volume3D& labels);

/// File-driven variant: loads the pretrained checkpoint (MissingPretrained if
/// absent), writes adapted.ckpt, disc.ckpt, metrics.csv and per-epoch target
/// predictions as PGM into cfg.out_dir.
AdaptResult run_adapt(const AdaptConfig& cfg);

}  // namespace segadapt
