#include "segadapt/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "segadapt/metrics.hpp"

namespace segadapt {

UNetConfig TrainConfig::unet() const {
  UNetConfig u;
  u.num_classes = classes;
  u.depth = depth;
  u.base_channels = base_channels;
  return u;
}

void TrainConfig::validate() const {
  unet().validate();
  if (batch < 1) throw Error(Errc::BadConfig, "batch must be >= 1");
  if (crop < 1 || crop % unet().spatial_multiple() != 0) {
    throw Error(Errc::BadConfig, "crop " + std::to_string(crop) + " must be a positive multiple of " +
                                     std::to_string(unet().spatial_multiple()));
  }
  if (iterations < 0 || steps_per_epoch < 0 || jitter_epochs < 0) {
    throw Error(Errc::BadConfig, "iteration counts must be non-negative");
  }
  if (!(lr > 0.0)) throw Error(Errc::BadConfig, "learning rate must be > 0");
  if (!(val_frac >= 0.0 && val_frac < 1.0)) throw Error(Errc::BadConfig, "val_frac must be in [0, 1)");
}

SliceSplit split_slices(std::uint32_t z, double val_frac) {
  const auto held = std::uint32_t(std::floor(val_frac * double(z)));
  if (held >= z) throw Error(Errc::BadConfig, "validation split leaves no training slices");
  SliceSplit s;
  for (std::uint32_t i = 0; i < z; ++i) (i < z - held ? s.train : s.val).push_back(i);
  return s;
}

ImagePlane apply_jitter(const ImagePlane& x, float gain, float bias) {
  return (gain * x + bias).max(0.0f).min(1.0f);
}

ImagePlane jitter(const ImagePlane& x, Rng& rng) {
  const float gain = float(std::uniform_real_distribution<double>(0.85, 1.15)(rng));
  const float bias = float(std::uniform_real_distribution<double>(-0.1, 0.1)(rng));
  return apply_jitter(x, gain, bias);
}

namespace {

void check_pair(const Volume3D& images, const Volume3D& labels) {
  if (images.dtype() != DType::F32Scalar) throw Error(Errc::InvariantViolation, "images must be an F32 volume");
  if (labels.dtype() != DType::U8Label) throw Error(Errc::InvariantViolation, "labels must be a U8 label volume");
  if (!(images.dims() == labels.dims())) throw Error(Errc::ShapeMismatch, "image and label volumes differ in size");
}

struct StepFailure {};

[[noreturn]] void diverged(const ModelParams<float>& params, const std::filesystem::path& out_dir,
                           const std::string& why) {
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    save_checkpoint(params, out_dir / "diverged.ckpt");
  }
  throw Error(Errc::DivergedLoss, why);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::IoFailure, "cannot write " + path.string());
  out << text;
}

Volume3D read_typed(const std::filesystem::path& path, DType want, const char* what) {
  if (path.empty()) throw Error(Errc::BadConfig, std::string("missing path for ") + what);
  Volume3D v = read_volume(path);
  if (v.dtype() != want) throw Error(Errc::InvariantViolation, path.string() + " has the wrong dtype for " + what);
  return v;
}

}  // namespace

Batch sample_batch(const Volume3D& images, const Volume3D& labels, const Volume3D& weights,
                   std::span<const std::uint32_t> train_slices, const TrainConfig& cfg, Rng& rng, Rng* jitter_rng) {
  check_pair(images, labels);
  if (!(weights.dims() == images.dims())) throw Error(Errc::ShapeMismatch, "weight volume differs in size");
  if (train_slices.empty()) throw Error(Errc::BadConfig, "no training slices");
  const Dims3 d = images.dims();
  const Index crop = cfg.crop;
  if (crop > Index(d.y) || crop > Index(d.x)) {
    throw Error(Errc::CropLargerThanSlice, "crop " + std::to_string(crop) + " exceeds slice " +
                                              std::to_string(d.y) + "x" + std::to_string(d.x));
  }
  const Index n = cfg.batch;
  const Index plane = crop * crop;
  Batch b;
  b.x = Tensor<float>(Shape{n, 1, crop, crop});
  b.labels.resize(std::size_t(n * plane));
  b.weights.resize(std::size_t(n * plane));
  auto img = images.scalar_data();
  auto lab = labels.label_data();
  auto wts = weights.scalar_data();
  std::uniform_int_distribution<std::size_t> pick_slice(0, train_slices.size() - 1);
  std::uniform_int_distribution<Index> pick_y(0, Index(d.y) - crop);
  std::uniform_int_distribution<Index> pick_x(0, Index(d.x) - crop);
  for (Index i = 0; i < n; ++i) {
    const std::uint32_t z = train_slices[pick_slice(rng)];
    const Index oy = pick_y(rng);
    const Index ox = pick_x(rng);
    b.slices.push_back(z);
    b.offsets.emplace_back(oy, ox);
    const std::size_t base = z * d.plane();
    ImagePlane crop_img(crop, crop);
    for (Index y = 0; y < crop; ++y) {
      const std::size_t row = base + std::size_t(oy + y) * d.x + std::size_t(ox);
      for (Index x = 0; x < crop; ++x) {
        const std::size_t dst = std::size_t(i * plane + y * crop + x);
        crop_img(y, x) = img[row + std::size_t(x)];
        b.labels[dst] = lab[row + std::size_t(x)];
        b.weights[dst] = wts[row + std::size_t(x)];
      }
    }
    if (cfg.jitter && jitter_rng) crop_img = jitter(crop_img, *jitter_rng);
    std::copy_n(crop_img.data(), plane, b.x.data() + i * plane);
  }
  return b;
}

Volume3D prepare_labels(const Volume3D& labels, int classes) {
  if (labels.dtype() != DType::U8Label) throw Error(Errc::InvariantViolation, "labels must be a U8 label volume");
  if (labels.classes() == classes) return labels;
  if (classes == 2) {
    std::vector<std::uint8_t> data(labels.label_data().begin(), labels.label_data().end());
    for (auto& v : data) v = v == 1 ? 1 : 0;
    return Volume3D::labels(labels.dims(), 2, std::move(data));
  }
  if (labels.classes() < classes) {
    return Volume3D::labels(labels.dims(), std::uint8_t(classes),
                            {labels.label_data().begin(), labels.label_data().end()});
  }
  throw Error(Errc::LabelOutOfRange, "label volume has " + std::to_string(labels.classes()) +
                                         " classes, model expects " + std::to_string(classes));
}

Volume3D resolve_weights(const Volume3D& labels, const Volume3D* supplied, const WeightSpec& spec) {
  if (!supplied) return weight_volume(labels, spec);
  if (supplied->dtype() != DType::F32Scalar || !(supplied->dims() == labels.dims())) {
    throw Error(Errc::ShapeMismatch, "weight volume must be F32 and match the labels");
  }
  std::vector<ImagePlane> planes;
  for (std::uint32_t z = 0; z < labels.dims().z; ++z) {
    const ImagePlane w = supplied->image_plane(z);
    if ((w < 0.0f).any()) throw Error(Errc::InvariantViolation, "negative loss weight");
    planes.push_back(normalize_weights(w, spec.floor));
  }
  return Volume3D::from_image_planes(planes);
}

LabelPlane predict_slice(const ModelParams<float>& params, const ImagePlane& image) {
  const UNetConfig cfg = infer_unet_config(params);
  const Index m = cfg.spatial_multiple();
  const Index h = image.rows(), w = image.cols();
  const Index ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
  Tensor<float> x(Shape{1, 1, ph, pw});
  for (Index y = 0; y < ph; ++y) {
    for (Index xx = 0; xx < pw; ++xx) x.data()[y * pw + xx] = image(std::min(y, h - 1), std::min(xx, w - 1));
  }
  Graph<float> g;
  const Tensor<float> logits = unet_forward(g, params, x);
  const Index c = cfg.num_classes, hw = ph * pw;
  LabelPlane out(h, w);
  for (Index y = 0; y < h; ++y) {
    for (Index xx = 0; xx < w; ++xx) {
      const Index px = y * pw + xx;
      Index best = 0;
      for (Index ch = 1; ch < c; ++ch) {
        if (logits.data()[ch * hw + px] > logits.data()[best * hw + px]) best = ch;
      }
      out(y, xx) = std::uint8_t(best);
    }
  }
  return out;
}

namespace {

ModelParams<float> inference_copy(const ModelParams<float>& params) {
  ModelParams<float> frozen = params.clone();
  frozen.set_requires_grad(false);
  return frozen;
}

ConfusionMatrix evaluate(const ModelParams<float>& params, const Volume3D& images, const Volume3D& labels,
                         std::span<const std::uint32_t> slices, int classes) {
  const ModelParams<float> frozen = inference_copy(params);
  ConfusionMatrix m = ConfusionMatrix::Zero(classes, classes);
  for (std::uint32_t z : slices) accumulate_confusion(m, predict_slice(frozen, images.image_plane(z)), labels.label_plane(z));
  return m;
}

}  // namespace

Volume3D predict_volume(const ModelParams<float>& params, const Volume3D& images) {
  const ModelParams<float> frozen = inference_copy(params);
  std::vector<LabelPlane> planes;
  for (std::uint32_t z = 0; z < images.dims().z; ++z) planes.push_back(predict_slice(frozen, images.image_plane(z)));
  return Volume3D::from_label_planes(planes, std::uint8_t(infer_unet_config(params).num_classes));
}

TrainResult train_supervised(ModelParams<float> init, const Volume3D& images, const Volume3D& labels,
                             const Volume3D& weights, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.iterations < 1) throw Error(Errc::BadConfig, "iterations must be >= 1");
  check_pair(images, labels);
  if (labels.classes() != cfg.classes) {
    throw Error(Errc::BadConfig, "label volume has " + std::to_string(labels.classes()) + " classes, config says " +
                                     std::to_string(cfg.classes));
  }
  if (infer_unet_config(init).num_classes != cfg.classes) throw Error(Errc::BadConfig, "model head does not match classes");

  const SliceSplit split = split_slices(images.dims().z, cfg.val_frac);
  const auto& eval_slices = split.val.empty() ? split.train : split.val;
  const Dims3 d = images.dims();
  const long steps = cfg.steps_per_epoch > 0
                         ? cfg.steps_per_epoch
                         : long((split.train.size() * d.plane() + std::size_t(cfg.batch * cfg.crop * cfg.crop) - 1) /
                                std::size_t(cfg.batch * cfg.crop * cfg.crop));

  TrainResult result;
  ModelParams<float> params = std::move(init);
  params.set_requires_grad(true);
  params.clear_grads();
  Optimizer<float> opt(cfg.optimizer, cfg.lr);
  Rng rng(cfg.seed);
  Rng jitter_rng(cfg.seed ^ 0x6a69747465720000ULL);
  double best = -1.0;
  long total_steps = 0;

  for (int epoch = 1; epoch <= cfg.iterations; ++epoch) {
    double loss_sum = 0.0;
    for (long s = 0; s < steps; ++s) {
      const Batch b = sample_batch(images, labels, weights, split.train, cfg, rng, &jitter_rng);
      double loss_value = 0.0;
      try {
        Graph<float> g;
        const Tensor<float> logits = unet_forward(g, params, b.x);
        const Tensor<float> loss = weighted_cross_entropy(g, logits, std::span<const std::uint8_t>(b.labels),
                                                          std::span<const float>(b.weights));
        loss_value = loss.item();
        g.backward(loss);
        for (const auto& [name, p] : params) ensure_finite_grad(p, name.c_str());
      } catch (const Error& e) {
        if (e.code() != Errc::NonFiniteValue) throw;
        diverged(params, cfg.out_dir, e.what());
      }
      if (!std::isfinite(loss_value)) diverged(params, cfg.out_dir, "non-finite training loss");
      opt.step(params);
      result.step_losses.push_back(loss_value);
      loss_sum += loss_value;
      ++total_steps;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.steps = total_steps;
    rec.train_loss = loss_sum / double(steps);
    const ConfusionMatrix m = evaluate(params, images, labels, eval_slices, cfg.classes);
    rec.val_jaccard = per_class_jaccard(m);
    rec.val_jaccard_mean = mean_jaccard(m);
    if (rec.val_jaccard_mean > best) {
      best = rec.val_jaccard_mean;
      result.best_params = params.clone();
    }
    result.log.push_back(std::move(rec));
  }
  result.final_params = std::move(params);
  return result;
}

std::string metrics_csv(const std::vector<EpochRecord>& log, int classes) {
  std::ostringstream out;
  out << "epoch,train_loss,val_jaccard_mean";
  for (int c = 0; c < classes; ++c) out << ",val_jaccard_class_" << c;
  out << '\n';
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  for (const auto& r : log) {
    out << r.epoch << ',' << num(r.train_loss) << ',' << num(r.val_jaccard_mean);
    for (double j : r.val_jaccard) out << ',' << num(j);
    out << '\n';
  }
  return out.str();
}

TrainResult run_train(const TrainConfig& cfg) {
  cfg.validate();
  const Volume3D images = read_typed(cfg.images, DType::F32Scalar, "images");
  const Volume3D labels = prepare_labels(read_typed(cfg.labels, DType::U8Label, "labels"), cfg.classes);
  std::optional<Volume3D> supplied;
  if (!cfg.weights.empty()) supplied = read_typed(cfg.weights, DType::F32Scalar, "weights");
  const Volume3D weights = resolve_weights(labels, supplied ? &*supplied : nullptr, cfg.weighting);

  TrainResult result = train_supervised(build_unet<float>(cfg.unet(), cfg.seed), images, labels, weights, cfg);
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    write_text(cfg.out_dir / "metrics.csv", metrics_csv(result.log, cfg.classes));
    save_checkpoint(result.best_params, cfg.out_dir / "best.ckpt");
    save_checkpoint(result.final_params, cfg.out_dir / "final.ckpt");
  }
  return result;
}

FinetuneResult finetune_binary(const ModelParams<float>& base, const Volume3D& images, const Volume3D& labels,
                               const Volume3D* supplied_weights, const TrainConfig& base_cfg) {
  if (base_cfg.classes != 2) throw Error(Errc::BadConfig, "finetune_binary needs classes = 2");
  // The network layout follows the base checkpoint.
  TrainConfig cfg = base_cfg;
  const UNetConfig layout = infer_unet_config(base);
  cfg.depth = layout.depth;
  cfg.base_channels = layout.base_channels;
  cfg.validate();
  const Volume3D binary = prepare_labels(labels, 2);
  const Volume3D weights = resolve_weights(binary, supplied_weights, cfg.weighting);

  FinetuneResult result;
  // Entries that do not transfer keep this fresh initialisation.
  result.initial = build_unet<float>(cfg.unet(), cfg.seed ^ 0x5eedf00dULL);
  result.load_report = transfer_matching(base, result.initial);
  result.output = result.initial.clone();

  if (cfg.iterations > 0) {
    TrainConfig phase = cfg;
    phase.jitter = false;
    result.binary = train_supervised(result.output.clone(), images, binary, weights, phase);
    result.output = result.binary->final_params.clone();
  }
  if (cfg.jitter && cfg.jitter_epochs > 0) {
    TrainConfig phase = cfg;
    phase.jitter = true;
    phase.iterations = cfg.jitter_epochs;
    phase.seed = cfg.seed + 1;
    result.jitter = train_supervised(result.output.clone(), images, binary, weights, phase);
    result.output = result.jitter->final_params.clone();
  }
  return result;
}

FinetuneResult run_finetune(const std::filesystem::path& base_checkpoint, const TrainConfig& cfg) {
  if (base_checkpoint.empty() || !std::filesystem::exists(base_checkpoint)) {
    throw Error(Errc::MissingPretrained, "base checkpoint not found: " + base_checkpoint.string());
  }
  const ModelParams<float> base = load_checkpoint(base_checkpoint);
  const Volume3D images = read_typed(cfg.images, DType::F32Scalar, "images");
  const Volume3D labels = read_typed(cfg.labels, DType::U8Label, "labels");
  std::optional<Volume3D> supplied;
  if (!cfg.weights.empty()) supplied = read_typed(cfg.weights, DType::F32Scalar, "weights");

  FinetuneResult result = finetune_binary(base, images, labels, supplied ? &*supplied : nullptr, cfg);
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    std::string report = "transferred=";
    for (std::size_t i = 0; i < result.load_report.transferred.size(); ++i) {
      report += (i ? "," : "") + result.load_report.transferred[i];
    }
    report += "\nreinitialized=";
    for (std::size_t i = 0; i < result.load_report.reinitialized.size(); ++i) {
      report += (i ? "," : "") + result.load_report.reinitialized[i];
    }
    write_text(cfg.out_dir / "partial_load.txt", report + "\n");
    if (result.binary) {
      write_text(cfg.out_dir / "metrics_m2.csv", metrics_csv(result.binary->log, 2));
      save_checkpoint(result.binary->final_params, cfg.out_dir / "m2.ckpt");
    }
    if (result.jitter) {
      write_text(cfg.out_dir / "metrics_m3.csv", metrics_csv(result.jitter->log, 2));
      save_checkpoint(result.jitter->final_params, cfg.out_dir / "m3.ckpt");
    }
    save_checkpoint(result.output, cfg.out_dir / "final.ckpt");
  }
  return result;
}

}  // namespace segadapt
