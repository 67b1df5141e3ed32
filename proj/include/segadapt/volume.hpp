#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "segadapt/error.hpp"

namespace segadapt {

/// Row-major 2D grid; (row, col) = (y, x).
template <typename T>
using Plane = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using LabelPlane = Plane<std::uint8_t>;
using ImagePlane = Plane<float>;

enum class DType : std::uint8_t { U8Label = 0, F32Scalar = 1 };

struct Dims3 {
  std::uint32_t z = 0, y = 0, x = 0;

  std::size_t count() const { return std::size_t(z) * y * x; }
  std::size_t plane() const { return std::size_t(y) * x; }
  friend bool operator==(const Dims3&, const Dims3&) = default;
};

/// One plane of a volume. Label slices carry their class count (up to 256 for
/// imported graymaps).
class Slice2D {
 public:
  static Slice2D labels(LabelPlane data, int classes);
  static Slice2D image(ImagePlane data);

  DType dtype() const { return dtype_; }
  int classes() const { return classes_; }
  Eigen::Index rows() const;
  Eigen::Index cols() const;

  const LabelPlane& label_plane() const;
  const ImagePlane& image_plane() const;
  LabelPlane& label_plane();
  ImagePlane& image_plane();

  friend bool operator==(const Slice2D& a, const Slice2D& b);

 private:
  DType dtype_ = DType::F32Scalar;
  int classes_ = 0;
  std::variant<LabelPlane, ImagePlane> data_;
};

/// Z x Y x X scalar grid, x fastest. Invariants are checked on construction:
/// buffer length matches the dims, labels are below the class count and
/// scalars are finite.
class Volume3D {
 public:
  Volume3D() = default;

  static Volume3D labels(Dims3 dims, std::uint8_t classes, std::vector<std::uint8_t> data);
  static Volume3D scalars(Dims3 dims, std::vector<float> data);
  static Volume3D from_label_planes(std::span<const LabelPlane> planes, std::uint8_t classes);
  static Volume3D from_image_planes(std::span<const ImagePlane> planes);

  const Dims3& dims() const { return dims_; }
  DType dtype() const { return dtype_; }
  std::uint8_t classes() const { return classes_; }

  std::span<const std::uint8_t> label_data() const;
  std::span<const float> scalar_data() const;

  /// Copy of plane z.
  Slice2D slice(std::uint32_t z) const;
  LabelPlane label_plane(std::uint32_t z) const;
  ImagePlane image_plane(std::uint32_t z) const;

  friend bool operator==(const Volume3D& a, const Volume3D& b);

 private:
  void check_index(std::uint32_t z) const;

  Dims3 dims_{};
  DType dtype_ = DType::F32Scalar;
  std::uint8_t classes_ = 0;
  std::vector<std::uint8_t> labels_;
  std::vector<float> scalars_;
};

inline Slice2D get_slice(const Volume3D& v, std::uint32_t z) { return v.slice(z); }

/// VSEG container: "VSEG1\n", dtype byte, class-count byte, u32 z/y/x, payload.
/// Little-endian throughout.
inline constexpr std::size_t kVsegHeaderBytes = 20;

Volume3D read_volume(const std::filesystem::path& path);
void write_volume(const Volume3D& v, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_volume(const Volume3D& v);
Volume3D decode_volume(std::span<const std::uint8_t> bytes);

/// Binary P5 graymap, maxval 255. Float slices are min-max rescaled; a
/// constant float slice exports as all zeros.
void export_pgm(const Slice2D& s, const std::filesystem::path& path);
Slice2D import_pgm(const std::filesystem::path& path);

}  // namespace segadapt
