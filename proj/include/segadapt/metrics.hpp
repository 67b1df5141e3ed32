#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "segadapt/volume.hpp"

namespace segadapt {

/// Entry (i, j) counts pixels with truth i predicted as j.
using ConfusionMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

ConfusionMatrix confusion(const LabelPlane& pred, const LabelPlane& gt, int classes);
/// Adds one more plane's counts into m.
void accumulate_confusion(ConfusionMatrix& m, const LabelPlane& pred, const LabelPlane& gt);

/// |pred=c and gt=c| / |pred=c or gt=c|; an empty union scores 1.
double jaccard(const LabelPlane& pred, const LabelPlane& gt, int c);
double jaccard(const ConfusionMatrix& m, int c);

double mean_jaccard(const LabelPlane& pred, const LabelPlane& gt, int classes);
double mean_jaccard(const ConfusionMatrix& m);
std::vector<double> per_class_jaccard(const ConfusionMatrix& m);

}  // namespace segadapt
