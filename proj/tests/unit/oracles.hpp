#pragma once

// Reference implementations used as test oracles. Plain loops over
// std::vector, deliberately sharing no code with the library kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "mst/random.hpp"
#include "mst/tensor.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const mst::Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  return m;
}

inline mst::Tensor random_tensor(mst::Shape shape, mst::Rng& rng, double lo = -1.0, double hi = 1.0) {
  mst::Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b.empty() ? 0 : b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < c[i].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  double m = -INFINITY;
  for (double v : x) m = std::max(m, v);
  std::vector<double> e(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += e[i] = std::exp(x[i] - m);
  for (double& v : e) v /= s;
  return e;
}

/// Windowed attention written position by position. A width of 2N-1 or
/// more covers the whole sequence.
inline Mat window_attention(const Mat& q, const Mat& k, const Mat& v, std::size_t width) {
  const std::size_t n = q.size();
  const long r = static_cast<long>((width - 1) / 2);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
  Mat out(n, std::vector<double>(v[0].size(), 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    const long lo = std::max(0L, static_cast<long>(j) - r);
    const long hi = std::min(static_cast<long>(n) - 1, static_cast<long>(j) + r);
    std::vector<double> logits;
    for (long t = lo; t <= hi; ++t) {
      double dot = 0.0;
      for (std::size_t c = 0; c < q[j].size(); ++c) dot += q[j][c] * k[t][c];
      logits.push_back(dot * scale);
    }
    const auto w = softmax(logits);
    for (long t = lo; t <= hi; ++t)
      for (std::size_t c = 0; c < v[0].size(); ++c) out[j][c] += w[t - lo] * v[t][c];
  }
  return out;
}

inline std::vector<double> layer_norm(const std::vector<double>& x, const std::vector<double>& gain,
                                      const std::vector<double>& bias, double eps) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gain[i] * (x[i] - mean) / std::sqrt(var + eps) + bias[i];
  return y;
}

/// Central difference of a scalar function of a flat vector.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) d = std::max(d, std::abs(a[i][j] - b[i][j]));
  return d;
}

}  // namespace oracle
