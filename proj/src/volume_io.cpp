#include "segadapt/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace segadapt {

namespace {

constexpr char kMagic[] = "VSEG1\n";
constexpr std::size_t kMagicLen = 6;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[at + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw Error(Errc::IoFailure, "write failed for " + path.string());
}

void check_labels(std::span<const std::uint8_t> data, int classes) {
  for (auto v : data) {
    if (v >= classes) {
      throw Error(Errc::LabelOutOfRange,
                  "label " + std::to_string(v) + " >= class count " + std::to_string(classes));
    }
  }
}

void check_finite(std::span<const float> data) {
  for (auto v : data) {
    if (!std::isfinite(v)) throw Error(Errc::InvariantViolation, "non-finite scalar value");
  }
}

}  // namespace

// ---- Slice2D ---------------------------------------------------------------

Slice2D Slice2D::labels(LabelPlane data, int classes) {
  check_labels({data.data(), std::size_t(data.size())}, classes);
  Slice2D s;
  s.dtype_ = DType::U8Label;
  s.classes_ = classes;
  s.data_ = std::move(data);
  return s;
}

Slice2D Slice2D::image(ImagePlane data) {
  check_finite({data.data(), std::size_t(data.size())});
  Slice2D s;
  s.dtype_ = DType::F32Scalar;
  s.data_ = std::move(data);
  return s;
}

Eigen::Index Slice2D::rows() const {
  return std::visit([](const auto& p) { return p.rows(); }, data_);
}

Eigen::Index Slice2D::cols() const {
  return std::visit([](const auto& p) { return p.cols(); }, data_);
}

const LabelPlane& Slice2D::label_plane() const {
  if (dtype_ != DType::U8Label) throw Error(Errc::InvariantViolation, "slice is not a label slice");
  return std::get<LabelPlane>(data_);
}

const ImagePlane& Slice2D::image_plane() const {
  if (dtype_ != DType::F32Scalar) throw Error(Errc::InvariantViolation, "slice is not a scalar slice");
  return std::get<ImagePlane>(data_);
}

LabelPlane& Slice2D::label_plane() {
  return const_cast<LabelPlane&>(std::as_const(*this).label_plane());
}

ImagePlane& Slice2D::image_plane() {
  return const_cast<ImagePlane&>(std::as_const(*this).image_plane());
}

bool operator==(const Slice2D& a, const Slice2D& b) {
  if (a.dtype_ != b.dtype_ || a.classes_ != b.classes_ || a.rows() != b.rows() ||
      a.cols() != b.cols()) {
    return false;
  }
  if (a.dtype_ == DType::U8Label) return (a.label_plane() == b.label_plane()).all();
  const auto& pa = a.image_plane();
  const auto& pb = b.image_plane();
  return std::memcmp(pa.data(), pb.data(), std::size_t(pa.size()) * sizeof(float)) == 0;
}

// ---- Volume3D --------------------------------------------------------------

Volume3D Volume3D::labels(Dims3 dims, std::uint8_t classes, std::vector<std::uint8_t> data) {
  if (dims.z == 0 || dims.y == 0 || dims.x == 0) {
    throw Error(Errc::InvariantViolation, "volume dims must be positive");
  }
  if (data.size() != dims.count()) {
    throw Error(Errc::InvariantViolation, "label buffer length does not match dims");
  }
  if (classes == 0) throw Error(Errc::InvariantViolation, "label volume needs a class count");
  check_labels(data, classes);
  Volume3D v;
  v.dims_ = dims;
  v.dtype_ = DType::U8Label;
  v.classes_ = classes;
  v.labels_ = std::move(data);
  return v;
}

Volume3D Volume3D::scalars(Dims3 dims, std::vector<float> data) {
  if (dims.z == 0 || dims.y == 0 || dims.x == 0) {
    throw Error(Errc::InvariantViolation, "volume dims must be positive");
  }
  if (data.size() != dims.count()) {
    throw Error(Errc::InvariantViolation, "scalar buffer length does not match dims");
  }
  check_finite(data);
  Volume3D v;
  v.dims_ = dims;
  v.dtype_ = DType::F32Scalar;
  v.scalars_ = std::move(data);
  return v;
}

namespace {

template <typename T, typename PlaneT>
std::pair<Dims3, std::vector<T>> stack_planes(std::span<const PlaneT> planes) {
  if (planes.empty()) throw Error(Errc::InvariantViolation, "no planes to stack");
  Dims3 dims{std::uint32_t(planes.size()), std::uint32_t(planes[0].rows()),
             std::uint32_t(planes[0].cols())};
  std::vector<T> data;
  data.reserve(dims.count());
  for (const auto& p : planes) {
    if (p.rows() != planes[0].rows() || p.cols() != planes[0].cols()) {
      throw Error(Errc::ShapeMismatch, "planes differ in size");
    }
    data.insert(data.end(), p.data(), p.data() + p.size());
  }
  return {dims, std::move(data)};
}

}  // namespace

Volume3D Volume3D::from_label_planes(std::span<const LabelPlane> planes, std::uint8_t classes) {
  auto [dims, data] = stack_planes<std::uint8_t>(planes);
  return labels(dims, classes, std::move(data));
}

Volume3D Volume3D::from_image_planes(std::span<const ImagePlane> planes) {
  auto [dims, data] = stack_planes<float>(planes);
  return scalars(dims, std::move(data));
}

std::span<const std::uint8_t> Volume3D::label_data() const {
  if (dtype_ != DType::U8Label) throw Error(Errc::InvariantViolation, "volume is not a label volume");
  return labels_;
}

std::span<const float> Volume3D::scalar_data() const {
  if (dtype_ != DType::F32Scalar) throw Error(Errc::InvariantViolation, "volume is not a scalar volume");
  return scalars_;
}

void Volume3D::check_index(std::uint32_t z) const {
  if (z >= dims_.z) {
    throw Error(Errc::IndexOutOfRange,
                "slice " + std::to_string(z) + " outside [0, " + std::to_string(dims_.z) + ")");
  }
}

LabelPlane Volume3D::label_plane(std::uint32_t z) const {
  check_index(z);
  auto data = label_data();
  return Eigen::Map<const LabelPlane>(data.data() + z * dims_.plane(), dims_.y, dims_.x);
}

ImagePlane Volume3D::image_plane(std::uint32_t z) const {
  check_index(z);
  auto data = scalar_data();
  return Eigen::Map<const ImagePlane>(data.data() + z * dims_.plane(), dims_.y, dims_.x);
}

Slice2D Volume3D::slice(std::uint32_t z) const {
  if (dtype_ == DType::U8Label) return Slice2D::labels(label_plane(z), classes_);
  return Slice2D::image(image_plane(z));
}

bool operator==(const Volume3D& a, const Volume3D& b) {
  if (a.dims_ != b.dims_ || a.dtype_ != b.dtype_ || a.classes_ != b.classes_) return false;
  if (a.dtype_ == DType::U8Label) return a.labels_ == b.labels_;
  return std::memcmp(a.scalars_.data(), b.scalars_.data(), a.scalars_.size() * sizeof(float)) == 0;
}

// ---- VSEG ------------------------------------------------------------------

std::vector<std::uint8_t> encode_volume(const Volume3D& v) {
  const auto& d = v.dims();
  const std::size_t elem = v.dtype() == DType::U8Label ? 1 : 4;
  std::vector<std::uint8_t> out;
  out.reserve(kVsegHeaderBytes + d.count() * elem);
  out.insert(out.end(), kMagic, kMagic + kMagicLen);
  out.push_back(std::uint8_t(v.dtype()));
  out.push_back(v.dtype() == DType::U8Label ? v.classes() : 0);
  put_u32(out, d.z);
  put_u32(out, d.y);
  put_u32(out, d.x);
  if (v.dtype() == DType::U8Label) {
    auto data = v.label_data();
    out.insert(out.end(), data.begin(), data.end());
  } else {
    for (float f : v.scalar_data()) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

Volume3D decode_volume(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagicLen || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
    throw Error(Errc::BadMagic, "missing VSEG1 magic");
  }
  if (bytes.size() < kVsegHeaderBytes) throw Error(Errc::TruncatedFile, "header shorter than 20 bytes");
  const std::uint8_t code = bytes[6];
  if (code > 1) throw Error(Errc::BadDtypeCode, "dtype code " + std::to_string(code));
  const auto dtype = DType(code);
  const std::uint8_t classes = bytes[7];
  const Dims3 dims{get_u32(bytes, 8), get_u32(bytes, 12), get_u32(bytes, 16)};
  const std::size_t elem = dtype == DType::U8Label ? 1 : 4;
  const std::size_t payload = dims.count() * elem;
  if (bytes.size() - kVsegHeaderBytes < payload) {
    throw Error(Errc::TruncatedFile, "payload has " + std::to_string(bytes.size() - kVsegHeaderBytes) +
                                         " bytes, header promises " + std::to_string(payload));
  }
  auto body = bytes.subspan(kVsegHeaderBytes, payload);
  if (dtype == DType::U8Label) {
    return Volume3D::labels(dims, classes, {body.begin(), body.end()});
  }
  std::vector<float> data(dims.count());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::bit_cast<float>(get_u32(body, 4 * i));
  return Volume3D::scalars(dims, std::move(data));
}

Volume3D read_volume(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  return decode_volume(bytes);
}

void write_volume(const Volume3D& v, const std::filesystem::path& path) {
  if (v.dtype() == DType::F32Scalar) {
    check_finite(v.scalar_data());
  } else {
    check_labels(v.label_data(), v.classes());
  }
  write_all(path, encode_volume(v));
}

// ---- PGM -------------------------------------------------------------------

void export_pgm(const Slice2D& s, const std::filesystem::path& path) {
  const auto h = s.rows();
  const auto w = s.cols();
  std::vector<std::uint8_t> pixels(std::size_t(h * w));
  if (s.dtype() == DType::U8Label) {
    const auto& p = s.label_plane();
    std::copy(p.data(), p.data() + p.size(), pixels.begin());
  } else {
    const auto& p = s.image_plane();
    const float lo = p.minCoeff();
    const float hi = p.maxCoeff();
    if (hi > lo) {
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double t = (double(p.data()[i]) - lo) / (double(hi) - lo);
        pixels[std::size_t(i)] = std::uint8_t(std::lround(t * 255.0));
      }
    }
  }
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), pixels.begin(), pixels.end());
  write_all(path, bytes);
}

Slice2D import_pgm(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  std::size_t pos = 0;
  auto is_space = [](std::uint8_t c) { return c == ' ' || c == '\n' || c == '\r' || c == '\t'; };
  auto token = [&]() {
    while (pos < bytes.size() && is_space(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !is_space(bytes[pos])) t.push_back(char(bytes[pos++]));
    if (t.empty()) throw Error(Errc::BadPgmHeader, "unexpected end of header");
    return t;
  };
  auto number = [&]() {
    const auto t = token();
    if (!std::all_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; }) || t.size() > 9) {
      throw Error(Errc::BadPgmHeader, "bad header field '" + t + "'");
    }
    return std::stol(t);
  };
  if (token() != "P5") throw Error(Errc::BadPgmHeader, "not a binary P5 graymap");
  const long w = number();
  const long h = number();
  const long maxval = number();
  if (w <= 0 || h <= 0) throw Error(Errc::BadPgmHeader, "non-positive size");
  if (maxval != 255) throw Error(Errc::BadPgmHeader, "maxval must be 255");
  if (pos >= bytes.size() || !is_space(bytes[pos])) throw Error(Errc::BadPgmHeader, "missing separator");
  ++pos;
  if (bytes.size() - pos < std::size_t(w * h)) throw Error(Errc::IoFailure, "pixel data truncated");
  LabelPlane plane(h, w);
  std::copy_n(bytes.begin() + std::ptrdiff_t(pos), w * h, plane.data());
  const int classes = int(plane.maxCoeff()) + 1;
  return Slice2D::labels(std::move(plane), classes);
}

}  // namespace segadapt
