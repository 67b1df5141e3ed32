#include "segadapt/metrics.hpp"

#include <string>

namespace segadapt {

namespace {

void check_same(const LabelPlane& pred, const LabelPlane& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
    throw Error(Errc::ShapeMismatch, "prediction and ground truth differ in size");
  }
}

}  // namespace

void accumulate_confusion(ConfusionMatrix& m, const LabelPlane& pred, const LabelPlane& gt) {
  check_same(pred, gt);
  const Eigen::Index c = m.rows();
  for (Eigen::Index i = 0; i < gt.size(); ++i) {
    const int t = gt.data()[i];
    const int p = pred.data()[i];
    if (t >= c || p >= c) throw Error(Errc::LabelOutOfRange, "label outside " + std::to_string(c) + " classes");
    ++m(t, p);
  }
}

ConfusionMatrix confusion(const LabelPlane& pred, const LabelPlane& gt, int classes) {
  ConfusionMatrix m = ConfusionMatrix::Zero(classes, classes);
  accumulate_confusion(m, pred, gt);
  return m;
}

double jaccard(const ConfusionMatrix& m, int c) {
  const auto tp = m(c, c);
  const auto uni = m.row(c).sum() + m.col(c).sum() - tp;
  return uni == 0 ? 1.0 : double(tp) / double(uni);
}

double jaccard(const LabelPlane& pred, const LabelPlane& gt, int c) {
  check_same(pred, gt);
  const auto p = (pred == c);
  const auto t = (gt == c);
  const auto inter = (p && t).count();
  const auto uni = (p || t).count();
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

std::vector<double> per_class_jaccard(const ConfusionMatrix& m) {
  std::vector<double> out;
  for (int c = 0; c < m.rows(); ++c) out.push_back(jaccard(m, c));
  return out;
}

double mean_jaccard(const ConfusionMatrix& m) {
  double sum = 0.0;
  for (double j : per_class_jaccard(m)) sum += j;
  return sum / double(m.rows());
}

double mean_jaccard(const LabelPlane& pred, const LabelPlane& gt, int classes) {
  return mean_jaccard(confusion(pred, gt, classes));
}

}  // namespace segadapt
