#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "segadapt/config.hpp"
#include "segadapt/volume.hpp"
#include "segadapt/weight_maps.hpp"
#include "test_util.hpp"

using namespace segadapt;
namespace fs = std::filesystem;

namespace {

/// Runs the CLI with `args`, capturing stdout+stderr into `log`; returns the
/// exit status.
int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + SEGADAPT_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit 1 with help; runtime errors exit 2") {
    const auto dir = test_util::scratch_dir("cli_usage");
    CHECK(run_cli("", dir / "log") == 1);
    CHECK(run_cli("gen-weights --out " + q(dir), dir / "log") == 1);
    CHECK(slurp(dir / "log").find("--labels") != std::string::npos);
    CHECK(run_cli("make-synth --out " + q(dir) + " --bogus 3", dir / "log") == 1);
    CHECK(run_cli("train --images a --labels b --out " + q(dir) + " --scheme median", dir / "log") == 1);
    CHECK(run_cli("gen-weights --labels " + q(dir / "none.vseg") + " --out " + q(dir), dir / "log") == 2);
    CHECK(slurp(dir / "log").find("IoFailure") != std::string::npos);
  }

  TEST_CASE("make-synth and gen-weights match the oracle weights") {
    const auto dir = test_util::scratch_dir("cli_weights");
    REQUIRE(run_cli("make-synth --out " + q(dir) + " --classes 4 --slices 3 --size 32 --seed 5", dir / "log") == 0);
    for (const char* f : {"source_images.vseg", "source_labels.vseg", "target_images.vseg", "target_labels.vseg"}) {
      CHECK(fs::exists(dir / f));
    }
    REQUIRE(run_cli("gen-weights --labels " + q(dir / "source_labels.vseg") + " --out " + q(dir / "w") +
                        " --scheme entropy --window 5",
                    dir / "log") == 0);
    const Volume3D labels = read_volume(dir / "source_labels.vseg");
    const Volume3D w = read_volume(dir / "w" / "weights.vseg");
    REQUIRE(w.dims() == labels.dims());
    for (std::uint32_t z = 0; z < labels.dims().z; ++z) {
      const WeightMap want = normalize_weights(oracle::entropy(labels.label_plane(z), 5).cast<float>());
      CHECK((w.image_plane(z) - want).abs().maxCoeff() <= 1e-5f);
    }
    const KeyValues m = read_key_values(dir / "w" / "manifest.txt");
    CHECK(m.at("command") == "gen-weights");
    CHECK(m.at("scheme") == "entropy");
    CHECK(m.at("window") == "5");
  }

  TEST_CASE("train, predict and eval end to end; a manifest replays bit for bit") {
    const auto dir = test_util::scratch_dir("cli_train");
    REQUIRE(run_cli("make-synth --out " + q(dir) + " --classes 2 --slices 4 --size 32 --seed 9", dir / "log") == 0);
    const std::string common = "--images " + q(dir / "source_images.vseg") + " --labels " +
                               q(dir / "source_labels.vseg") +
                               " --classes 2 --crop 32 --batch 1 --iters 2 --steps-per-epoch 3 --base-channels 4"
                               " --depth 2 --scheme distance --sigma 3 --val-frac 0.25 --seed 3";
    REQUIRE(run_cli("train " + common + " --out " + q(dir / "a"), dir / "log") == 0);
    for (const char* f : {"metrics.csv", "best.ckpt", "final.ckpt", "manifest.txt"}) CHECK(fs::exists(dir / "a" / f));

    REQUIRE(run_cli("train --config " + q(dir / "a" / "manifest.txt") + " --out " + q(dir / "b"), dir / "log") == 0);
    CHECK(test_util::read_bytes(dir / "a" / "metrics.csv") == test_util::read_bytes(dir / "b" / "metrics.csv"));
    CHECK(test_util::read_bytes(dir / "a" / "final.ckpt") == test_util::read_bytes(dir / "b" / "final.ckpt"));
    CHECK(run_cli("predict --config " + q(dir / "a" / "manifest.txt") + " --out " + q(dir / "c"), dir / "log") == 1);

    REQUIRE(run_cli("predict --images " + q(dir / "target_images.vseg") + " --base-checkpoint " +
                        q(dir / "a" / "final.ckpt") + " --out " + q(dir / "p"),
                    dir / "log") == 0);
    CHECK(fs::exists(dir / "p" / "pred_003.pgm"));
    REQUIRE(run_cli("eval --pred " + q(dir / "p" / "pred_labels.vseg") + " --labels " +
                        q(dir / "target_labels.vseg") + " --classes 2 --out " + q(dir / "e"),
                    dir / "log") == 0);
    const std::string csv = slurp(dir / "e" / "eval.csv");
    CHECK(csv.rfind("slice,jaccard_mean,jaccard_class_0,jaccard_class_1\n", 0) == 0);
    CHECK(csv.find("\nall,") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
  }

  TEST_CASE("finetune and adapt run from files") {
    const auto dir = test_util::scratch_dir("cli_adapt");
    REQUIRE(run_cli("make-synth --out " + q(dir) + " --classes 4 --slices 4 --size 32 --seed 2", dir / "log") == 0);
    const std::string data = "--images " + q(dir / "source_images.vseg") + " --labels " + q(dir / "source_labels.vseg");
    const std::string small = " --crop 32 --batch 1 --iters 1 --steps-per-epoch 2 --base-channels 4 --depth 2";
    REQUIRE(run_cli("train " + data + small + " --classes 4 --out " + q(dir / "m1"), dir / "log") == 0);
    REQUIRE(run_cli("finetune " + data + small + " --base-checkpoint " + q(dir / "m1" / "final.ckpt") +
                        " --jitter on --out " + q(dir / "m3"),
                    dir / "log") == 0);
    CHECK(slurp(dir / "log").find("reinitialized: head.w head.b") != std::string::npos);
    const KeyValues m = read_key_values(dir / "m3" / "manifest.txt");
    CHECK(m.at("scheme") == "distance");
    CHECK(m.at("classes") == "2");
    REQUIRE(fs::exists(dir / "m3" / "m3.ckpt"));
    // four-class truth scored as boundary vs rest
    REQUIRE(run_cli("predict --images " + q(dir / "target_images.vseg") + " --base-checkpoint " +
                        q(dir / "m3" / "m3.ckpt") + " --out " + q(dir / "p"),
                    dir / "log") == 0);
    REQUIRE(run_cli("eval --pred " + q(dir / "p" / "pred_labels.vseg") + " --labels " +
                        q(dir / "target_labels.vseg") + " --classes 2 --out " + q(dir / "e"),
                    dir / "log") == 0);
    CHECK(slurp(dir / "e" / "eval.csv").rfind("slice,jaccard_mean,jaccard_class_0,jaccard_class_1\n", 0) == 0);

    REQUIRE(run_cli("adapt --labels " + q(dir / "source_labels.vseg") + " --target-images " +
                        q(dir / "target_images.vseg") + " --base-checkpoint " + q(dir / "m3" / "m3.ckpt") +
                        " --epochs 2 --iters 1 --crop 32 --batch 1 --out " + q(dir / "ad"),
                    dir / "log") == 0);
    for (const char* f : {"adapted.ckpt", "disc.ckpt", "metrics.csv", "run.log", "epoch001_slice000.pgm"}) {
      CHECK(fs::exists(dir / "ad" / f));
    }
    CHECK(run_cli("adapt --labels " + q(dir / "source_labels.vseg") + " --target-images " +
                      q(dir / "target_images.vseg") + " --base-checkpoint " + q(dir / "none.ckpt") + " --out " +
                      q(dir / "ad2"),
                  dir / "log") == 2);
    CHECK(slurp(dir / "log").find("MissingPretrained") != std::string::npos);
  }

  TEST_CASE("grad-check passes") {
    const auto dir = test_util::scratch_dir("cli_grad");
    CHECK(run_cli("grad-check --out " + q(dir), dir / "log") == 0);
    CHECK(slurp(dir / "log").find("FAIL") == std::string::npos);
  }
}
