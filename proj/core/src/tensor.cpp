#include "mst/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>

#include "mst/error.hpp"

namespace mst {

namespace {

constexpr std::array<char, 4> kTensorMagic = {'M', 'S', 'T', 'T'};
constexpr std::uint32_t kTensorVersion = 1;
// Guards against reading garbage extents from a corrupt stream.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;

template <typename U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> buf{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  out.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> buf{};
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!in) throw IoError("tensor stream truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw DimensionError("from_rows: no rows");
  const std::size_t cols = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t = matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kTensorMagic.data(), kTensorMagic.size());
  put_le<std::uint32_t>(out, kTensorVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_le<std::uint64_t>(out, e);
  for (double v : t.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw IoError("failed writing tensor");
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kTensorMagic) throw IoError("bad tensor magic");
  if (get_le<std::uint32_t>(in) != kTensorVersion) throw IoError("unsupported tensor version");
  const auto rank = get_le<std::uint32_t>(in);
  if (rank > 8) throw IoError("tensor rank too large");
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& e : shape) {
    const auto ext = get_le<std::uint64_t>(in);
    count *= ext;
    if (count > kMaxElements) throw IoError("tensor too large");
    e = static_cast<std::size_t>(ext);
  }
  std::vector<double> data(static_cast<std::size_t>(count));
  for (auto& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
  return Tensor(std::move(shape), std::move(data));
}

void write_named_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_tensor(out, t);
}

std::pair<std::string, Tensor> read_named_tensor(std::istream& in) {
  const auto len = get_le<std::uint32_t>(in);
  if (len > 4096) throw IoError("tensor name too long");
  std::string name(len, '\0');
  in.read(name.data(), len);
  if (!in) throw IoError("tensor stream truncated");
  return {std::move(name), read_tensor(in)};
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_tensor(in);
}

}  // namespace mst
