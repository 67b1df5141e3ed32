#include "segadapt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace segadapt {

namespace {

constexpr char kMagic[] = "UNCK1\n";
constexpr std::size_t kMagicLen = 6;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(std::uint8_t(std::uint64_t(v) >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return T(v);
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(Errc::CorruptEntry, "checkpoint truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelParams<float>& params) {
  std::vector<std::uint8_t> out(kMagic, kMagic + kMagicLen);
  put_le<std::uint32_t>(out, std::uint32_t(params.size()));
  for (const auto& [name, t] : params) {
    if (name.size() > 0xFFFF) throw Error(Errc::InvariantViolation, "parameter name too long");
    put_le<std::uint16_t>(out, std::uint16_t(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    const Shape& s = t.shape();
    put_le<std::uint8_t>(out, std::uint8_t(s.rank()));
    for (int i = 0; i < s.rank(); ++i) put_le<std::uint32_t>(out, std::uint32_t(s[i]));
    for (Index i = 0; i < t.size(); ++i) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(t.data()[i]));
  }
  return out;
}

ModelParams<float> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagicLen || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
    throw Error(Errc::BadMagic, "missing UNCK1 magic");
  }
  Reader in(bytes.subspan(kMagicLen));
  const auto count = in.get<std::uint32_t>();
  ModelParams<float> params;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = in.get<std::uint16_t>();
    const auto name_bytes = in.take(len);
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto rank = in.get<std::uint8_t>();
    if (rank > 4) throw Error(Errc::CorruptEntry, "entry " + name + " has rank " + std::to_string(rank));
    std::array<Index, 4> d{1, 1, 1, 1};
    for (int i = 0; i < rank; ++i) d[std::size_t(i)] = in.get<std::uint32_t>();
    Shape shape;
    switch (rank) {
      case 0: shape = Shape{}; break;
      case 1: shape = Shape{d[0]}; break;
      case 2: shape = Shape{d[0], d[1]}; break;
      case 3: shape = Shape{d[0], d[1], d[2]}; break;
      default: shape = Shape{d[0], d[1], d[2], d[3]}; break;
    }
    Tensor<float>::Vector v(shape.size());
    for (Index i = 0; i < v.size(); ++i) v(i) = std::bit_cast<float>(in.get<std::uint32_t>());
    if (params.find(name)) throw Error(Errc::CorruptEntry, "duplicate entry " + name);
    params.add(std::move(name), Tensor<float>(shape, std::move(v), true));
  }
  return params;
}

void save_checkpoint(const ModelParams<float>& params, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw Error(Errc::IoFailure, "write failed for " + path.string());
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

PartialLoadReport transfer_matching(const ModelParams<float>& source, ModelParams<float>& target) {
  PartialLoadReport report;
  for (auto& [name, t] : target) {
    const auto* src = source.find(name);
    if (src && src->shape() == t.shape()) {
      t.value() = src->value();
      report.transferred.push_back(name);
    } else {
      report.reinitialized.push_back(name);
    }
  }
  return report;
}

PartialLoadReport load_checkpoint_partial(const std::filesystem::path& path, ModelParams<float>& target) {
  return transfer_matching(load_checkpoint(path), target);
}

}  // namespace segadapt
