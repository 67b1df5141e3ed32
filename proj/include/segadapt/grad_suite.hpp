#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segadapt/grad_check.hpp"

namespace segadapt {

struct LayerCheck {
  std::string family;
  GradCheckReport report;
};

/// Gradient checks at f64 on random 16x16 inputs: every layer type on its
/// own (a conv feeds each parameter-free layer so it has something to
/// differentiate), both losses, and the composed UNet + weighted CE and
/// discriminator + BCE graphs.
std::vector<LayerCheck> run_grad_suite(std::uint64_t seed = 42, GradCheckOptions opt = {});

}  // namespace segadapt
