#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "segadapt/metrics.hpp"
#include "segadapt/training.hpp"

namespace segadapt {

void AdaptConfig::validate() const {
  if (epochs < 0 || steps_per_epoch < 0 || d_steps < 0 || g_steps < 0) {
    throw Error(Errc::BadConfig, "adaptation step counts must be non-negative");
  }
  if (batch < 1 || crop < disc.min_size) {
    throw Error(Errc::BadConfig, "adaptation needs batch >= 1 and crop >= " + std::to_string(disc.min_size));
  }
  if (!(disc_lr > 0.0) || !(gen_lr > 0.0)) throw Error(Errc::BadConfig, "learning rates must be > 0");
  if (!(probe_frac >= 0.0 && probe_frac < 1.0) || probe_crops < 1) throw Error(Errc::BadConfig, "bad probe settings");
  if (!(label_smoothing >= 0.0f && label_smoothing < 1.0f)) throw Error(Errc::BadConfig, "bad label smoothing");
}

namespace {

using Crop = std::pair<std::uint32_t, std::pair<Index, Index>>;

Crop pick_crop(std::span<const std::uint32_t> slices, const Dims3& d, Index crop, Rng& rng) {
  if (crop > Index(d.y) || crop > Index(d.x)) throw Error(Errc::CropLargerThanSlice, "crop exceeds slice");
  std::uniform_int_distribution<std::size_t> pick_slice(0, slices.size() - 1);
  std::uniform_int_distribution<Index> pick_y(0, Index(d.y) - crop);
  std::uniform_int_distribution<Index> pick_x(0, Index(d.x) - crop);
  const std::uint32_t z = slices[pick_slice(rng)];
  const Index oy = pick_y(rng);
  const Index ox = pick_x(rng);
  return {z, {oy, ox}};
}

Tensor<float> image_batch(const Volume3D& images, std::span<const Crop> crops, Index crop) {
  const Dims3 d = images.dims();
  auto data = images.scalar_data();
  Tensor<float> x(Shape{Index(crops.size()), 1, crop, crop});
  for (std::size_t i = 0; i < crops.size(); ++i) {
    const auto& [z, off] = crops[i];
    for (Index y = 0; y < crop; ++y) {
      const std::size_t row = z * d.plane() + std::size_t(off.first + y) * d.x + std::size_t(off.second);
      std::copy_n(data.begin() + std::ptrdiff_t(row), crop, x.data() + (Index(i) * crop + y) * crop);
    }
  }
  return x;
}

/// Smoothed one-hot maps of source label crops.
Tensor<float> real_batch(const Volume3D& labels, std::span<const Crop> crops, Index crop, float smoothing) {
  const Dims3 d = labels.dims();
  const Index c = labels.classes();
  const float off_value = smoothing / float(c);
  const float on_value = 1.0f - smoothing + off_value;
  auto data = labels.label_data();
  Tensor<float> x(Shape{Index(crops.size()), c, crop, crop}, off_value);
  const Index hw = crop * crop;
  for (std::size_t i = 0; i < crops.size(); ++i) {
    const auto& [z, off] = crops[i];
    for (Index y = 0; y < crop; ++y) {
      const std::size_t row = z * d.plane() + std::size_t(off.first + y) * d.x + std::size_t(off.second);
      for (Index xx = 0; xx < crop; ++xx) {
        const Index label = data[row + std::size_t(xx)];
        x.data()[(Index(i) * c + label) * hw + y * crop + xx] = on_value;
      }
    }
  }
  return x;
}

SliceSplit probe_split(std::uint32_t z, double probe_frac) {
  SliceSplit s;
  if (z == 1) {
    s.train = {0};
    s.val = {0};
    return s;
  }
  const auto held = std::clamp<std::uint32_t>(std::uint32_t(std::floor(probe_frac * z)), 1, z - 1);
  for (std::uint32_t i = 0; i < z; ++i) (i < z - held ? s.train : s.val).push_back(i);
  return s;
}

void check_finite_loss(double v, const char* what) {
  if (!std::isfinite(v)) throw Error(Errc::DivergedLoss, std::string("non-finite ") + what);
}

}  // namespace

AdaptResult adapt_adversarial(ModelParams<float> segmenter, const Volume3D& source_labels,
                              const Volume3D& target_images, const AdaptConfig& cfg, const AdaptHooks& hooks) {
  cfg.validate();
  if (source_labels.dtype() != DType::U8Label) throw Error(Errc::InvariantViolation, "source labels must be U8");
  if (target_images.dtype() != DType::F32Scalar) throw Error(Errc::InvariantViolation, "target images must be F32");
  const UNetConfig ucfg = infer_unet_config(segmenter);
  const Volume3D real_labels = prepare_labels(source_labels, ucfg.num_classes);
  if (cfg.crop % ucfg.spatial_multiple() != 0) throw Error(Errc::BadConfig, "crop not divisible for this UNet");

  DiscConfig dcfg = cfg.disc;
  dcfg.in_channels = ucfg.num_classes;

  AdaptResult result;
  result.discriminator = build_discriminator<float>(dcfg, cfg.seed + 1);
  ModelParams<float>& seg = segmenter;
  ModelParams<float>& disc = result.discriminator;
  seg.clear_grads();

  Optimizer<float> d_opt(OptimizerKind::Adam, cfg.disc_lr);
  Optimizer<float> g_opt(OptimizerKind::Adam, cfg.gen_lr);
  Rng rng(cfg.seed);
  Rng jitter_rng(cfg.seed ^ 0x6a69747465720000ULL);
  Rng probe_rng(cfg.seed ^ 0x70726f6265000000ULL);

  const SliceSplit src = probe_split(real_labels.dims().z, cfg.probe_frac);
  const SliceSplit tgt = probe_split(target_images.dims().z, cfg.probe_frac);
  const Index crop = cfg.crop;

  std::vector<Crop> probe_real, probe_fake;
  for (int i = 0; i < cfg.probe_crops; ++i) probe_real.push_back(pick_crop(src.val, real_labels.dims(), crop, probe_rng));
  for (int i = 0; i < cfg.probe_crops; ++i) probe_fake.push_back(pick_crop(tgt.val, target_images.dims(), crop, probe_rng));
  const Tensor<float> probe_real_maps = real_batch(real_labels, probe_real, crop, cfg.label_smoothing);
  const Tensor<float> probe_images = image_batch(target_images, probe_fake, crop);

  auto target_crops = [&]() {
    std::vector<Crop> crops;
    for (int i = 0; i < cfg.batch; ++i) crops.push_back(pick_crop(tgt.train, target_images.dims(), crop, rng));
    Tensor<float> x = image_batch(target_images, crops, crop);
    if (cfg.jitter) {
      const Index plane = crop * crop;
      for (int i = 0; i < cfg.batch; ++i) {
        Eigen::Map<ImagePlane> img(x.data() + i * plane, crop, crop);
        img = jitter(ImagePlane(img), jitter_rng);
      }
    }
    return x;
  };

  // Fake maps with the segmenter frozen: nothing records a gradient.
  auto frozen_fake = [&](const Tensor<float>& images) {
    seg.set_requires_grad(false);
    Graph<float> g;
    Tensor<float> probs = softmax_channels(g, unet_forward(g, seg, images));
    seg.set_requires_grad(true);
    return probs;
  };

  bool first = true;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double real_sum = 0.0, fake_sum = 0.0, g_sum = 0.0;
    long d_count = 0, g_count = 0;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      for (int k = 0; k < cfg.d_steps; ++k) {
        std::vector<Crop> crops;
        for (int i = 0; i < cfg.batch; ++i) crops.push_back(pick_crop(src.train, real_labels.dims(), crop, rng));
        const Tensor<float> real = real_batch(real_labels, crops, crop, cfg.label_smoothing);
        const Tensor<float> fake = frozen_fake(target_crops());
        const std::vector<float> ones(std::size_t(cfg.batch), 1.0f), zeros(std::size_t(cfg.batch), 0.0f);
        Graph<float> g;
        const Tensor<float> l2 = bce_with_logits(g, disc_forward(g, disc, real, dcfg), std::span<const float>(ones));
        const Tensor<float> l3 = bce_with_logits(g, disc_forward(g, disc, fake, dcfg), std::span<const float>(zeros));
        check_finite_loss(l2.item(), "discriminator real loss");
        check_finite_loss(l3.item(), "discriminator fake loss");
        if (first) {
          result.first_d_loss_real = l2.item();
          result.first_d_loss_fake = l3.item();
          first = false;
        }
        g.backward(add(g, l2, l3));
        d_opt.step(disc);
        real_sum += l2.item();
        fake_sum += l3.item();
        ++d_count;
      }
      for (int k = 0; k < cfg.g_steps; ++k) {
        const Tensor<float> images = target_crops();
        const std::vector<float> ones(std::size_t(cfg.batch), 1.0f);
        disc.set_requires_grad(false);
        Graph<float> g;
        const Tensor<float> probs = softmax_channels(g, unet_forward(g, seg, images));
        const Tensor<float> loss = bce_with_logits(g, disc_forward(g, disc, probs, dcfg), std::span<const float>(ones));
        check_finite_loss(loss.item(), "generator loss");
        g.backward(loss);
        disc.set_requires_grad(true);
        g_opt.step(seg);
        g_sum += loss.item();
        ++g_count;
      }
    }

    AdaptEpochRecord rec;
    rec.epoch = epoch;
    rec.d_loss_real = d_count ? real_sum / double(d_count) : 0.0;
    rec.d_loss_fake = d_count ? fake_sum / double(d_count) : 0.0;
    rec.g_loss = g_count ? g_sum / double(g_count) : 0.0;
    {
      disc.set_requires_grad(false);
      const Tensor<float> fake = frozen_fake(probe_images);
      Graph<float> g;
      const Tensor<float> real_logits = disc_forward(g, disc, probe_real_maps, dcfg);
      const Tensor<float> fake_logits = disc_forward(g, disc, fake, dcfg);
      disc.set_requires_grad(true);
      int correct = 0;
      for (Index i = 0; i < real_logits.size(); ++i) correct += real_logits.data()[i] > 0.0f;
      for (Index i = 0; i < fake_logits.size(); ++i) correct += fake_logits.data()[i] <= 0.0f;
      rec.d_probe_acc = double(correct) / double(real_logits.size() + fake_logits.size());
    }
    if (hooks.target_report) rec.tgt_jaccard_boundary = hooks.target_report(seg);
    if (hooks.on_epoch) hooks.on_epoch(epoch, seg);
    result.log.push_back(rec);
  }
  seg.clear_grads();
  result.segmenter = std::move(seg);
  return result;
}

std::string adapt_metrics_csv(const std::vector<AdaptEpochRecord>& log) {
  std::ostringstream out;
  out << "epoch,d_loss_real,d_loss_fake,g_loss,d_probe_acc,tgt_jaccard_boundary\n";
  char buf[256];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.d_loss_real, r.d_loss_fake, r.g_loss,
                  r.d_probe_acc, r.tgt_jaccard_boundary);
    out << buf;
  }
  return out.str();
}

double boundary_jaccard(const ModelParams<float>& params, const Volume3D& images, const Volume3D& labels) {
  const Volume3D truth = prepare_labels(labels, 2);
  const Volume3D pred = predict_volume(params, images);
  if (!(pred.dims() == truth.dims())) throw Error(Errc::ShapeMismatch, "target labels do not match target images");
  ConfusionMatrix m = ConfusionMatrix::Zero(2, 2);
  for (std::uint32_t z = 0; z < pred.dims().z; ++z) accumulate_confusion(m, pred.label_plane(z), truth.label_plane(z));
  return jaccard(m, 1);
}

AdaptResult run_adapt(const AdaptConfig& cfg) {
  cfg.validate();
  if (cfg.pretrained.empty() || !std::filesystem::exists(cfg.pretrained)) {
    throw Error(Errc::MissingPretrained, "pretrained checkpoint not found: " + cfg.pretrained.string());
  }
  ModelParams<float> seg = load_checkpoint(cfg.pretrained);
  const Volume3D source_labels = read_volume(cfg.source_labels);
  const Volume3D target_images = read_volume(cfg.target_images);

  AdaptHooks hooks;
  // Target labels are opened by the reporter only, never by the loop.
  const std::filesystem::path label_path = cfg.target_labels;
  hooks.target_report = [label_path, &target_images](const ModelParams<float>& p) {
    if (label_path.empty() || !std::filesystem::exists(label_path)) return -1.0;
    return boundary_jaccard(p, target_images, read_volume(label_path));
  };
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    const std::filesystem::path out_dir = cfg.out_dir;
    hooks.on_epoch = [out_dir, &target_images](int epoch, const ModelParams<float>& p) {
      const Volume3D pred = predict_volume(p, target_images);
      for (std::uint32_t z = 0; z < pred.dims().z; ++z) {
        char name[64];
        std::snprintf(name, sizeof(name), "epoch%03d_slice%03u.pgm", epoch, z);
        export_pgm(pred.slice(z), out_dir / name);
      }
    };
  }

  AdaptResult result = adapt_adversarial(std::move(seg), source_labels, target_images, cfg, hooks);
  if (!cfg.out_dir.empty()) {
    std::ofstream csv(cfg.out_dir / "metrics.csv", std::ios::trunc);
    if (!csv) throw Error(Errc::IoFailure, "cannot write metrics.csv");
    csv << adapt_metrics_csv(result.log);
    std::ofstream log(cfg.out_dir / "run.log", std::ios::trunc);
    log << "# generator objective: non-saturating bce(D(softmax(S(x_tgt))), real) in place of maximizing L3\n"
        << "# discriminator real inputs: one-hot source labels smoothed by " << cfg.label_smoothing << "\n";
    for (const auto& r : result.log) {
      log << "epoch " << r.epoch << " d_real " << r.d_loss_real << " d_fake " << r.d_loss_fake << " g " << r.g_loss
          << " probe_acc " << r.d_probe_acc << "\n";
    }
    save_checkpoint(result.segmenter, cfg.out_dir / "adapted.ckpt");
    save_checkpoint(result.discriminator, cfg.out_dir / "disc.ckpt");
  }
  return result;
}

}  // namespace segadapt
