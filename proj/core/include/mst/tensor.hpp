#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mst {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Plain value type; differentiation lives
/// in Graph.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Extent of the last axis; 1 for rank 0.
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  /// Product of all leading axes (row count when viewed as a matrix).
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return std::span(data_).subspan(r * cols(), cols()); }
  std::span<const double> row(std::size_t r) const {
    return std::span(data_).subspan(r * cols(), cols());
  }

  void fill(double v);
  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

// Binary tensor format, little-endian:
//   bytes 0..3  magic "MSTT"
//   u32         format version (1)
//   u32         rank
//   u64 x rank  extents
//   f64 x prod  row-major values
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

// Named tensor sequence: u32 name length, name bytes, then one tensor record.
void write_named_tensor(std::ostream& out, const std::string& name, const Tensor& t);
std::pair<std::string, Tensor> read_named_tensor(std::istream& in);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace mst
