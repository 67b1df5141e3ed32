// segadapt command-line driver.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "segadapt/config.hpp"
#include "segadapt/grad_suite.hpp"
#include "segadapt/metrics.hpp"
#include "segadapt/synth.hpp"
#include "segadapt/training.hpp"

namespace fs = std::filesystem;
using namespace segadapt;

namespace {

constexpr int kUsage = 1;
constexpr int kFailure = 2;

struct Flags {
  std::string images, labels, weights, out, pred;
  std::string scheme;
  double ratio = 10.0;
  int window = 5;
  double sigma = 10.0;
  int classes = 4;
  int crop = 64;
  int batch = 2;
  int iters = 1;
  double lr = 1e-4;
  std::string opt = "adam";
  std::uint64_t seed = 42;
  std::string jitter = "off";
  std::string base_checkpoint, target_images, target_labels;
  int d_steps = 1, g_steps = 1, epochs = 5;
  double val_frac = 0.1;
  double disc_lr = AdaptConfig{}.disc_lr;
  double gen_lr = AdaptConfig{}.gen_lr;
  int adapt_steps = AdaptConfig{}.steps_per_epoch;
  int adapt_crop = AdaptConfig{}.crop;
  int steps_per_epoch = 0;
  int base_channels = 16;
  int depth = 3;
  int slices = 16;
  int size = 64;
};

CLI::Option* on_off(CLI::App* app, const std::string& name, std::string& v, const std::string& help) {
  return app->add_option(name, v, help)->check(CLI::IsMember({"on", "off"}));
}

void add_weight_flags(CLI::App* app, Flags& f) {
  app->add_option("--scheme", f.scheme, "entropy|distance|ratio|uniform")
      ->check(CLI::IsMember({"entropy", "distance", "ratio", "uniform"}));
  app->add_option("--ratio", f.ratio, "boundary:background weight ratio")->check(CLI::PositiveNumber);
  app->add_option("--window", f.window, "entropy window (odd)");
  app->add_option("--sigma", f.sigma, "Gaussian sigma for the distance scheme")->check(CLI::PositiveNumber);
}

void add_train_flags(CLI::App* app, Flags& f) {
  app->add_option("--images", f.images, "F32 image volume")->required();
  app->add_option("--labels", f.labels, "U8 label volume")->required();
  app->add_option("--weights", f.weights, "precomputed F32 weight volume");
  app->add_option("--out", f.out, "output directory")->required();
  add_weight_flags(app, f);
  app->add_option("--classes", f.classes, "number of classes");
  app->add_option("--crop", f.crop, "crop size");
  app->add_option("--batch", f.batch, "batch size");
  app->add_option("--iters", f.iters, "epochs over the training slices");
  app->add_option("--lr", f.lr, "learning rate");
  app->add_option("--opt", f.opt, "sgd|adam")->check(CLI::IsMember({"sgd", "adam"}));
  app->add_option("--seed", f.seed, "random seed");
  on_off(app, "--jitter", f.jitter, "photometric jitter");
  app->add_option("--val-frac", f.val_frac, "trailing fraction of slices held out");
  app->add_option("--steps-per-epoch", f.steps_per_epoch, "0 = derived from the data size");
  app->add_option("--base-channels", f.base_channels, "UNet width at the top level");
  app->add_option("--depth", f.depth, "UNet levels");
}

WeightSpec weight_spec(const Flags& f) {
  WeightSpec w;
  w.scheme = parse_scheme(f.scheme);
  w.ratio = float(f.ratio);
  w.window = f.window;
  w.sigma = float(f.sigma);
  return w;
}

TrainConfig train_config(const Flags& f) {
  TrainConfig c;
  c.images = f.images;
  c.labels = f.labels;
  c.weights = f.weights;
  c.out_dir = f.out;
  c.weighting = weight_spec(f);
  c.classes = f.classes;
  c.batch = f.batch;
  c.crop = f.crop;
  c.iterations = f.iters;
  c.steps_per_epoch = f.steps_per_epoch;
  c.lr = f.lr;
  c.optimizer = parse_optimizer(f.opt);
  c.seed = f.seed;
  c.jitter = f.jitter == "on";
  c.val_frac = f.val_frac;
  c.depth = f.depth;
  c.base_channels = f.base_channels;
  return c;
}

/// Every option of the subcommand with its resolved value.
KeyValues resolved(const CLI::App* sub) {
  KeyValues kv;
  kv["command"] = sub->get_name();
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "config") continue;
    std::string value;
    if (opt->count() > 0) {
      value = opt->results().back();
    } else {
      value = opt->get_default_str();
    }
    kv[name] = value;
  }
  return kv;
}

void write_manifest(const CLI::App* sub, const Flags& f) {
  KeyValues kv = resolved(sub);
  // Defaults that depend on the subcommand are filled in after parsing.
  if (kv.count("scheme")) kv["scheme"] = f.scheme;
  if (kv.count("classes")) kv["classes"] = std::to_string(f.classes);
  const fs::path dir = f.out.empty() ? fs::path(".") : fs::path(f.out);
  fs::create_directories(dir);
  write_key_values(kv, dir / "manifest.txt");
}

/// Splices key=value pairs from --config FILE in front of the command-line
/// flags, so flags given explicitly win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::string config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (config.empty() || out.empty()) return out;
  const KeyValues kv = read_key_values(config);
  if (auto it = kv.find("command"); it != kv.end() && it->second != out[0]) {
    throw CLI::ValidationError("--config", "config is for '" + it->second + "', not '" + out[0] + "'");
  }
  std::vector<std::string> spliced{out[0]};
  for (const auto& [k, v] : kv) {
    if (k == "command" || v.empty()) continue;
    spliced.push_back("--" + k);
    spliced.push_back(v);
  }
  spliced.insert(spliced.end(), out.begin() + 1, out.end());
  return spliced;
}

int cmd_make_synth(const Flags& f) {
  SynthConfig cfg;
  cfg.dims = Dims3{std::uint32_t(f.slices), std::uint32_t(f.size), std::uint32_t(f.size)};
  cfg.mode = parse_class_mode(f.classes);
  cfg.seed = f.seed;
  const fs::path out = f.out;
  fs::create_directories(out);
  cfg.style = DomainStyle::Source;
  const SynthVolumes src = generate(cfg);
  cfg.style = DomainStyle::Target;
  const SynthVolumes tgt = generate(cfg);
  write_volume(src.images, out / "source_images.vseg");
  write_volume(src.labels, out / "source_labels.vseg");
  write_volume(tgt.images, out / "target_images.vseg");
  write_volume(tgt.labels, out / "target_labels.vseg");
  std::printf("wrote %u slices of %dx%d to %s\n", cfg.dims.z, f.size, f.size, out.string().c_str());
  return 0;
}

int cmd_gen_weights(const Flags& f) {
  const Volume3D labels = read_volume(f.labels);
  const Volume3D w = weight_volume(labels, weight_spec(f));
  fs::create_directories(f.out);
  write_volume(w, fs::path(f.out) / "weights.vseg");
  std::printf("wrote %s weights for %u slices\n", f.scheme.c_str(), labels.dims().z);
  return 0;
}

void print_epochs(const std::vector<EpochRecord>& log) {
  for (const auto& r : log) {
    std::printf("epoch %d  steps %ld  loss %.5f  val mean jaccard %.4f\n", r.epoch, r.steps, r.train_loss,
                r.val_jaccard_mean);
  }
}

int cmd_train(const Flags& f) {
  const TrainResult r = run_train(train_config(f));
  print_epochs(r.log);
  return 0;
}

int cmd_finetune(const Flags& f) {
  const FinetuneResult r = run_finetune(f.base_checkpoint, train_config(f));
  std::printf("reinitialized:");
  for (const auto& n : r.load_report.reinitialized) std::printf(" %s", n.c_str());
  std::printf("\n");
  if (r.binary) print_epochs(r.binary->log);
  if (r.jitter) print_epochs(r.jitter->log);
  return 0;
}

int cmd_adapt(const Flags& f) {
  AdaptConfig c;
  c.source_labels = f.labels;
  c.target_images = f.target_images;
  c.target_labels = f.target_labels;
  c.pretrained = f.base_checkpoint;
  c.out_dir = f.out;
  c.gen_lr = f.gen_lr;
  c.disc_lr = f.disc_lr;
  c.steps_per_epoch = f.adapt_steps;
  c.epochs = f.epochs;
  c.d_steps = f.d_steps;
  c.g_steps = f.g_steps;
  c.batch = f.batch;
  c.crop = f.adapt_crop;
  c.seed = f.seed;
  c.jitter = f.jitter == "on";
  const AdaptResult r = run_adapt(c);
  for (const auto& e : r.log) {
    std::printf("epoch %d  L2 %.4f  L3 %.4f  G %.4f  probe acc %.3f  target boundary jaccard %.4f\n", e.epoch,
                e.d_loss_real, e.d_loss_fake, e.g_loss, e.d_probe_acc, e.tgt_jaccard_boundary);
  }
  return 0;
}

int cmd_predict(const Flags& f) {
  const ModelParams<float> params = load_checkpoint(f.base_checkpoint);
  const Volume3D images = read_volume(f.images);
  const Volume3D pred = predict_volume(params, images);
  const fs::path out = f.out;
  fs::create_directories(out);
  write_volume(pred, out / "pred_labels.vseg");
  for (std::uint32_t z = 0; z < pred.dims().z; ++z) {
    char name[32];
    std::snprintf(name, sizeof(name), "pred_%03u.pgm", z);
    export_pgm(pred.slice(z), out / name);
  }
  std::printf("predicted %u slices\n", pred.dims().z);
  return 0;
}

int cmd_eval(const Flags& f) {
  Volume3D pred = read_volume(f.pred);
  Volume3D gt = read_volume(f.labels);
  if (pred.dtype() != DType::U8Label || gt.dtype() != DType::U8Label) {
    throw Error(Errc::InvariantViolation, "eval needs two label volumes");
  }
  // scoring a multi-class volume as boundary vs rest
  pred = prepare_labels(pred, f.classes);
  gt = prepare_labels(gt, f.classes);
  if (!(pred.dims() == gt.dims())) throw Error(Errc::ShapeMismatch, "prediction and labels differ in size");
  const int classes = f.classes;
  std::string csv = "slice,jaccard_mean";
  for (int c = 0; c < classes; ++c) csv += ",jaccard_class_" + std::to_string(c);
  csv += "\n";
  char buf[64];
  auto row = [&](const std::string& key, const ConfusionMatrix& m) {
    csv += key;
    std::snprintf(buf, sizeof(buf), ",%.9g", mean_jaccard(m));
    csv += buf;
    for (double j : per_class_jaccard(m)) {
      std::snprintf(buf, sizeof(buf), ",%.9g", j);
      csv += buf;
    }
    csv += "\n";
  };
  ConfusionMatrix total = ConfusionMatrix::Zero(classes, classes);
  for (std::uint32_t z = 0; z < pred.dims().z; ++z) {
    const ConfusionMatrix m = confusion(pred.label_plane(z), gt.label_plane(z), classes);
    total += m;
    row(std::to_string(z), m);
  }
  row("all", total);
  fs::create_directories(f.out);
  std::ofstream(fs::path(f.out) / "eval.csv", std::ios::trunc) << csv;
  std::printf("mean jaccard %.4f\n", mean_jaccard(total));
  return 0;
}

int cmd_grad_check(const Flags& f) {
  bool ok = true;
  for (const auto& c : run_grad_suite(f.seed)) {
    const bool pass = c.report.max_rel_error < 1e-4;
    ok = ok && pass;
    std::printf("%-24s max rel error %.3e  (%ld coords, %ld kink-skipped)  %s\n", c.family.c_str(),
                c.report.max_rel_error, long(c.report.coords_checked), long(c.report.coords_skipped),
                pass ? "ok" : "FAIL");
  }
  return ok ? 0 : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric segmentation with class-imbalance weighting and adversarial adaptation", "segadapt"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  Flags f;

  auto* make_synth = app.add_subcommand("make-synth", "write a synthetic source/target volume pair");
  make_synth->add_option("--out", f.out, "output directory")->required();
  make_synth->add_option("--classes", f.classes, "4 or 2")->check(CLI::IsMember({4, 2}));
  make_synth->add_option("--seed", f.seed, "random seed");
  make_synth->add_option("--slices", f.slices, "number of slices")->check(CLI::PositiveNumber);
  make_synth->add_option("--size", f.size, "slice height and width")->check(CLI::PositiveNumber);

  auto* gen_weights = app.add_subcommand("gen-weights", "compute a weight volume from labels");
  gen_weights->add_option("--labels", f.labels, "U8 label volume")->required();
  gen_weights->add_option("--out", f.out, "output directory")->required();
  add_weight_flags(gen_weights, f);
  gen_weights->add_option("--seed", f.seed, "random seed");

  auto* train = app.add_subcommand("train", "supervised training with weighted cross-entropy");
  add_train_flags(train, f);

  auto* finetune = app.add_subcommand("finetune", "binary fine-tuning from a multi-class checkpoint");
  add_train_flags(finetune, f);
  finetune->add_option("--base-checkpoint", f.base_checkpoint, "multi-class checkpoint")->required();

  auto* adapt = app.add_subcommand("adapt", "unsupervised adversarial adaptation");
  adapt->add_option("--labels", f.labels, "source U8 label volume")->required();
  adapt->add_option("--target-images", f.target_images, "target F32 image volume")->required();
  adapt->add_option("--base-checkpoint", f.base_checkpoint, "pretrained binary segmenter")->required();
  adapt->add_option("--out", f.out, "output directory")->required();
  adapt->add_option("--target-labels", f.target_labels, "target labels, read for reporting only");
  adapt->add_option("--iters", f.adapt_steps, "steps per epoch");
  adapt->add_option("--epochs", f.epochs, "epochs");
  adapt->add_option("--d-steps", f.d_steps, "discriminator updates per step");
  adapt->add_option("--g-steps", f.g_steps, "segmenter updates per step");
  adapt->add_option("--lr", f.gen_lr, "segmenter learning rate");
  adapt->add_option("--disc-lr", f.disc_lr, "discriminator learning rate");
  adapt->add_option("--crop", f.adapt_crop, "crop size");
  adapt->add_option("--batch", f.batch, "batch size");
  adapt->add_option("--seed", f.seed, "random seed");
  on_off(adapt, "--jitter", f.jitter, "jitter target crops");

  auto* predict = app.add_subcommand("predict", "segment an image volume");
  predict->add_option("--images", f.images, "F32 image volume")->required();
  predict->add_option("--base-checkpoint", f.base_checkpoint, "segmenter checkpoint")->required();
  predict->add_option("--out", f.out, "output directory")->required();
  predict->add_option("--seed", f.seed, "random seed");

  auto* eval = app.add_subcommand("eval", "Jaccard scores of a prediction");
  eval->add_option("--pred", f.pred, "predicted U8 label volume")->required();
  eval->add_option("--labels", f.labels, "ground-truth U8 label volume")->required();
  eval->add_option("--classes", f.classes, "number of classes");
  eval->add_option("--out", f.out, "output directory")->required();
  eval->add_option("--seed", f.seed, "random seed");

  auto* grad_check = app.add_subcommand("grad-check", "finite-difference gradient checks at f64");
  grad_check->add_option("--seed", f.seed, "random seed");
  grad_check->add_option("--out", f.out, "directory for the manifest");

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    args = expand_config(args);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  if (name == "train" && f.scheme.empty()) f.scheme = "entropy";
  if (name == "finetune") {
    if (f.scheme.empty()) f.scheme = "distance";
    if (sub->get_option("--classes")->count() == 0) f.classes = 2;
  }
  if (f.scheme.empty()) f.scheme = "entropy";

  try {
    write_manifest(sub, f);
    if (name == "make-synth") return cmd_make_synth(f);
    if (name == "gen-weights") return cmd_gen_weights(f);
    if (name == "train") return cmd_train(f);
    if (name == "finetune") return cmd_finetune(f);
    if (name == "adapt") return cmd_adapt(f);
    if (name == "predict") return cmd_predict(f);
    if (name == "eval") return cmd_eval(f);
    return cmd_grad_check(f);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
  }
  return kFailure;
}
