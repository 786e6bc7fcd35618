#include "mst/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <limits>

#include <cblas.h>

#include "mst/error.hpp"

namespace mst {

namespace {

// Row-major C = op(A) * op(B) + beta * C with C m x n and inner extent k.
// Pinned to one BLAS thread: parallel GEMM may change summation order.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double beta, double* c) {
  static const bool single_threaded = [] {
#ifdef OPENBLAS_VERSION
    openblas_set_num_threads(1);
#endif
    return true;
  }();
  (void)single_threaded;
  const auto lda = static_cast<int>(trans_a ? m : k);
  const auto ldb = static_cast<int>(trans_b ? k : n);
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a, lda, b, ldb, beta,
              c, static_cast<int>(n));
}

}  // namespace

const Tensor& Var::value() const { return graph_->value(id_); }
const Tensor& Var::grad() const { return graph_->grad_or_zero(id_); }
bool Var::requires_grad() const { return graph_->requires_grad(id_); }

Var Graph::input(Tensor value, bool requires_grad) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return make_var(nodes_.size() - 1);
}

Var Graph::param(const Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return make_var(it->second);
  Node n;
  n.external = &p.value;
  n.requires_grad = track_;
  nodes_.push_back(std::move(n));
  const std::size_t id = nodes_.size() - 1;
  param_nodes_.emplace(&p, id);
  bound_params_.push_back(&p);
  return make_var(id);
}

Var Graph::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  n.leaf = false;
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](std::size_t i) { return nodes_[i].requires_grad; });
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return make_var(nodes_.size() - 1);
}

void Graph::backward(Var root) {
  if (root.graph_ != this) throw std::invalid_argument("backward: root belongs to another graph");
  if (value(root.id_).size() != 1) {
    throw DimensionError("backward: root must be scalar, got " + shape_string(value(root.id_).shape()));
  }
  for (auto& n : nodes_) {
    if (!n.leaf) n.grad = Tensor();
  }
  grad(root.id_)[0] += 1.0;
  for (std::size_t id = root.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.leaf || !n.requires_grad || n.grad.empty()) continue;
    n.backward(*this, id);
  }
}

void Graph::accumulate_param_grads(std::span<Parameter* const> params, double scale) const {
  for (Parameter* p : params) {
    const Tensor* g = param_grad(*p);
    if (!g) continue;
    if (p->grad.shape() != p->value.shape()) p->zero_grad();
    for (std::size_t i = 0; i < g->size(); ++i) p->grad[i] += scale * (*g)[i];
  }
}

const Tensor* Graph::param_grad(const Parameter& p) const {
  auto it = param_nodes_.find(&p);
  if (it == param_nodes_.end()) return nullptr;
  const Node& n = nodes_[it->second];
  if (n.grad.empty()) {
    zero_ = Tensor(n.value().shape());
    return &zero_;
  }
  return &n.grad;
}

void Graph::reset() {
  nodes_.clear();
  param_nodes_.clear();
  bound_params_.clear();
}

const Tensor& Graph::value(std::size_t id) const { return nodes_[id].value(); }

Tensor& Graph::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value().empty()) n.grad = Tensor(n.value().shape());
  return n.grad;
}

const Tensor& Graph::grad_or_zero(std::size_t id) const {
  const Node& n = nodes_[id];
  if (!n.grad.empty()) return n.grad;
  zero_ = Tensor(n.value().shape());
  return zero_;
}

// ---------------------------------------------------------------------------

namespace {

Graph& same_graph(Var a, Var b) {
  if (&a.graph() != &b.graph()) throw std::invalid_argument("operands belong to different graphs");
  return a.graph();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected rank-2, got " + shape_string(a.shape()));
}

// Elementwise unary op with derivative expressed through input and output.
template <typename F, typename DF>
Var unary(Var x, F f, DF df) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const std::size_t xi = x.id();
  return g.record(std::move(out), {xi}, [xi, df](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    const Tensor& xv = g.value(xi);
    const Tensor& yv = g.value(self);
    Tensor& gx = g.grad(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool vec = av.rank() == 1;
  if (!vec) require_matrix("matmul", av);
  require_matrix("matmul", bv);
  const std::size_t m = vec ? 1 : av.shape()[0];
  const std::size_t k = av.cols();
  const std::size_t n = bv.shape()[1];
  if (bv.shape()[0] != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(av.shape()) + " x " +
                         shape_string(bv.shape()));
  }
  Tensor out = vec ? Tensor({n}) : Tensor::matrix(m, n);
  gemm(false, false, m, n, k, av.data().data(), bv.data().data(), 0.0, out.data().data());
  const std::size_t ai = a.id(), bi = b.id();
  return g.record(std::move(out), {ai, bi}, [ai, bi, m, k, n](Graph& g, std::size_t self) {
    const double* dC = g.grad(self).data().data();
    if (g.requires_grad(ai)) {
      // dA += dC * B^T
      gemm(false, true, m, k, n, dC, g.value(bi).data().data(), 1.0, g.grad(ai).data().data());
    }
    if (g.requires_grad(bi)) {
      // dB += A^T * dC
      gemm(true, false, k, n, m, g.value(ai).data().data(), dC, 1.0, g.grad(bi).data().data());
    }
  });
}

Var transpose(Var a) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  require_matrix("transpose", av);
  const std::size_t r = av.shape()[0], c = av.shape()[1];
  Tensor out = Tensor::matrix(c, r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  const std::size_t ai = a.id();
  return g.record(std::move(out), {ai}, [ai, r, c](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor& ga = g.grad(ai);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga.at(i, j) += gy.at(j, i);
  });
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t ai = a.id(), bi = b.id();
  if (av.shape() == bv.shape()) {
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return g.record(std::move(out), {ai, bi}, [ai, bi](Graph& g, std::size_t self) {
      const Tensor& gy = g.grad(self);
      for (std::size_t in : {ai, bi}) {
        if (!g.requires_grad(in)) continue;
        Tensor& gx = g.grad(in);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
      }
    });
  }
  const bool broadcast = bv.size() == av.cols() && (bv.rank() == 1 || bv.rows() == 1) && av.rank() >= 1;
  if (!broadcast) {
    throw DimensionError("add: cannot combine " + shape_string(av.shape()) + " and " + shape_string(bv.shape()));
  }
  Tensor out = av;
  const std::size_t cols = av.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % cols];
  return g.record(std::move(out), {ai, bi}, [ai, bi, cols](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    if (g.requires_grad(ai)) {
      Tensor& ga = g.grad(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
    }
    if (g.requires_grad(bi)) {
      Tensor& gb = g.grad(bi);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i % cols] += gy[i];
    }
  });
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return g.record(std::move(out), {ai, bi}, [ai, bi](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    if (g.requires_grad(ai)) {
      Tensor& ga = g.grad(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
    }
    if (g.requires_grad(bi)) {
      Tensor& gb = g.grad(bi);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gy[i];
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return g.record(std::move(out), {ai, bi}, [ai, bi](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    const Tensor& av = g.value(ai);
    const Tensor& bv = g.value(bi);
    if (g.requires_grad(ai)) {
      Tensor& ga = g.grad(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (g.requires_grad(bi)) {
      Tensor& gb = g.grad(bi);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var abs(Var a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softmax_rows(Var x) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  if (xv.empty()) throw DimensionError("softmax_rows: empty input");
  Tensor out(xv.shape());
  const std::size_t n = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto in = xv.row(r);
    auto o = out.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : in) mx = std::max(mx, v);
    // std::max drops NaN when it is the second argument; restore propagation.
    for (double v : in)
      if (std::isnan(v)) mx = v;
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (double& v : o) v /= z;
  }
  const std::size_t xi = x.id();
  return g.record(std::move(out), {xi}, [xi, n](Graph& g, std::size_t self) {
    const Tensor& y = g.value(self);
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(xi);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[r * n + j] * gy[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (gy[r * n + j] - dot);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = same_graph(x, gain);
  same_graph(x, bias);
  const Tensor& xv = x.value();
  const std::size_t d = xv.cols();
  if (gain.value().size() != d || bias.value().size() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.value().shape()) + "/" +
                         shape_string(bias.value().shape()) + " do not match width " + std::to_string(d));
  }
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t rows = xv.rows();
  Tensor out(xv.shape());
  // Normalized values and inverse std are kept for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = xv.row(r);
    double mu = 0.0;
    for (double v : in) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : in) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (in[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  const std::size_t xi = x.id(), gi = gain.id(), bi = bias.id();
  return g.record(std::move(out), {xi, gi, bi}, [=](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    const Tensor& gv = g.value(gi);
    if (g.requires_grad(gi) || g.requires_grad(bi)) {
      Tensor* gg = g.requires_grad(gi) ? &g.grad(gi) : nullptr;
      Tensor* gb = g.requires_grad(bi) ? &g.grad(bi) : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
          if (gg) (*gg)[j] += gy[r * d + j] * (*xhat)[r * d + j];
          if (gb) (*gb)[j] += gy[r * d + j];
        }
      }
    }
    if (!g.requires_grad(xi)) return;
    Tensor& gx = g.grad(xi);
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t r = 0; r < rows; ++r) {
      double mean_dh = 0.0, mean_dh_h = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double dh = gy[r * d + j] * gv[j];
        mean_dh += dh;
        mean_dh_h += dh * (*xhat)[r * d + j];
      }
      mean_dh *= inv_d;
      mean_dh_h *= inv_d;
      for (std::size_t j = 0; j < d; ++j) {
        const double dh = gy[r * d + j] * gv[j];
        gx[r * d + j] += (*inv_std)[r] * (dh - mean_dh - (*xhat)[r * d + j] * mean_dh_h);
      }
    }
  });
}

Var concat_last(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_last: no operands");
  Graph& g = parts.front().graph();
  const Tensor& first = parts.front().value();
  const std::size_t rows = first.rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (const Var& p : parts) {
    same_graph(parts.front(), p);
    const Tensor& v = p.value();
    if (v.rank() != first.rank() || v.rows() != rows ||
        !std::equal(v.shape().begin(), v.shape().end() - 1, first.shape().begin())) {
      throw DimensionError("concat_last: leading extents differ, " + shape_string(first.shape()) + " vs " +
                           shape_string(v.shape()));
    }
    ids.push_back(p.id());
    widths.push_back(v.cols());
    total += v.cols();
  }
  Shape shape = first.shape();
  shape.back() = total;
  Tensor out(shape);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.row(r).begin(), widths[k], out.row(r).begin() + static_cast<std::ptrdiff_t>(off));
    off += widths[k];
  }
  return g.record(std::move(out), ids, [ids, widths, rows, total](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (g.requires_grad(ids[k])) {
        Tensor& gx = g.grad(ids[k]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[k]; ++j) gx[r * widths[k] + j] += gy[r * total + off + j];
      }
      off += widths[k];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  Graph& g = parts.front().graph();
  const std::size_t cols = parts.front().value().cols();
  std::vector<std::size_t> ids, sizes;
  std::vector<double> data;
  for (const Var& p : parts) {
    same_graph(parts.front(), p);
    const Tensor& v = p.value();
    if (v.rank() > 2 || v.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch, " + shape_string(parts.front().value().shape()) +
                           " vs " + shape_string(v.shape()));
    }
    ids.push_back(p.id());
    sizes.push_back(v.size());
    data.insert(data.end(), v.values().begin(), v.values().end());
  }
  const std::size_t rows = data.size() / cols;
  return g.record(Tensor({rows, cols}, std::move(data)), ids, [ids, sizes](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (g.requires_grad(ids[k])) {
        Tensor& gx = g.grad(ids[k]);
        for (std::size_t i = 0; i < sizes[k]; ++i) gx[i] += gy[off + i];
      }
      off += sizes[k];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Graph& g = x.graph();
  if (shape_size(shape) != x.value().size()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  const std::size_t xi = x.id();
  return g.record(x.value().reshaped(std::move(shape)), {xi}, [xi](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
  });
}

Var slice_rows(Var x, std::size_t lo, std::size_t hi) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  require_matrix("slice_rows", xv);
  if (lo >= hi || hi > xv.shape()[0]) {
    throw DimensionError("slice_rows: range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                         ") invalid for " + shape_string(xv.shape()));
  }
  const std::size_t cols = xv.cols();
  std::vector<double> data(xv.values().begin() + static_cast<std::ptrdiff_t>(lo * cols),
                           xv.values().begin() + static_cast<std::ptrdiff_t>(hi * cols));
  const std::size_t xi = x.id();
  return g.record(Tensor({hi - lo, cols}, std::move(data)), {xi}, [xi, lo, cols](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[lo * cols + i] += gy[i];
  });
}

Var slice_cols(Var x, std::size_t lo, std::size_t hi) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  require_matrix("slice_cols", xv);
  const std::size_t cols = xv.cols(), rows = xv.rows();
  if (lo >= hi || hi > cols) {
    throw DimensionError("slice_cols: range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                         ") invalid for " + shape_string(xv.shape()));
  }
  const std::size_t w = hi - lo;
  Tensor out = Tensor::matrix(rows, w);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w; ++j) out.at(r, j) = xv.at(r, lo + j);
  const std::size_t xi = x.id();
  return g.record(std::move(out), {xi}, [xi, lo, w, cols, rows](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(xi);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) gx[r * cols + lo + j] += gy[r * w + j];
  });
}

Var max_over_positions(Var x) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  require_matrix("max_over_positions", xv);
  const std::size_t rows = xv.rows(), d = xv.cols();
  Tensor out({d});
  std::vector<std::size_t> arg(d, 0);
  for (std::size_t j = 0; j < d; ++j) {
    double best = xv.at(0, j);
    for (std::size_t r = 1; r < rows; ++r) {
      if (xv.at(r, j) > best) {
        best = xv.at(r, j);
        arg[j] = r;
      }
    }
    out[j] = best;
  }
  const std::size_t xi = x.id();
  return g.record(std::move(out), {xi}, [xi, arg = std::move(arg), d](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(xi);
    for (std::size_t j = 0; j < d; ++j) gx[arg[j] * d + j] += gy[j];
  });
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  Graph& g = table.graph();
  const Tensor& tv = table.value();
  require_matrix("gather_rows", tv);
  const std::size_t n = tv.shape()[0], d = tv.cols();
  if (ids.empty()) throw DimensionError("gather_rows: empty id list");
  Tensor out = Tensor::matrix(ids.size(), d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= n) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[r]) + " out of range for table " +
                           shape_string(tv.shape()));
    }
    std::copy_n(tv.row(ids[r]).begin(), d, out.row(r).begin());
  }
  const std::size_t ti = table.id();
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return g.record(std::move(out), {ti}, [ti, idv = std::move(idv), d](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor& gt = g.grad(ti);
    for (std::size_t r = 0; r < idv.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) gt[idv[r] * d + j] += gy[r * d + j];
  });
}

Var dropout(Var x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must be in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  auto mask = std::make_shared<std::vector<double>>(xv.size());
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    (*mask)[i] = rng.uniform() < p ? 0.0 : keep_scale;
    out[i] = xv[i] * (*mask)[i];
  }
  const std::size_t xi = x.id();
  return g.record(std::move(out), {xi}, [xi, mask](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * (*mask)[i];
  });
}

Var sum(Var x) {
  Graph& g = x.graph();
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const std::size_t xi = x.id();
  return g.record(Tensor({1}, {s}), {xi}, [xi](Graph& g, std::size_t self) {
    const double gy = g.grad(self)[0];
    Tensor& gx = g.grad(xi);
    for (double& v : gx.values()) v += gy;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var mse_loss(Var pred, Var target) {
  Graph& g = same_graph(pred, target);
  require_same_shape("mse_loss", pred.value(), target.value());
  const Tensor& pv = pred.value();
  const Tensor& tv = target.value();
  const double inv_n = 1.0 / static_cast<double>(pv.size());
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) s += (pv[i] - tv[i]) * (pv[i] - tv[i]);
  const std::size_t pi = pred.id(), ti = target.id();
  return g.record(Tensor({1}, {s * inv_n}), {pi, ti}, [pi, ti, inv_n](Graph& g, std::size_t self) {
    const double gy = g.grad(self)[0];
    const Tensor& pv = g.value(pi);
    const Tensor& tv = g.value(ti);
    if (g.requires_grad(pi)) {
      Tensor& gp = g.grad(pi);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += gy * 2.0 * inv_n * (pv[i] - tv[i]);
    }
    if (g.requires_grad(ti)) {
      Tensor& gt = g.grad(ti);
      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= gy * 2.0 * inv_n * (pv[i] - tv[i]);
    }
  });
}

Var cross_entropy(Var logits, std::size_t label) {
  Graph& g = logits.graph();
  const Tensor& lv = logits.value();
  if (lv.rank() != 1) throw DimensionError("cross_entropy: logits must be rank-1, got " + shape_string(lv.shape()));
  if (label >= lv.size()) {
    throw DimensionError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                         std::to_string(lv.size()) + " classes");
  }
  double mx = lv[0];
  for (double v : lv.values()) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : lv.values()) z += std::exp(v - mx);
  const double log_z = mx + std::log(z);
  const std::size_t li = logits.id();
  return g.record(Tensor({1}, {log_z - lv[label]}), {li}, [li, label, log_z](Graph& g, std::size_t self) {
    const double gy = g.grad(self)[0];
    const Tensor& lv = g.value(li);
    Tensor& gl = g.grad(li);
    for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += gy * std::exp(lv[i] - log_z);
    gl[label] -= gy;
  });
}

Var window_attention(Var q, Var k, Var v, std::size_t width, Tensor* weights) {
  Graph& g = same_graph(q, k);
  same_graph(q, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require_matrix("window_attention", qv);
  require_same_shape("window_attention", qv, kv);
  if (vv.rank() != 2 || vv.rows() != qv.rows()) {
    throw DimensionError("window_attention: value rows " + shape_string(vv.shape()) + " vs queries " +
                         shape_string(qv.shape()));
  }
  if (width == 0 || width % 2 == 0) {
    throw std::invalid_argument("window_attention: width must be odd and positive, got " + std::to_string(width));
  }
  const std::size_t n = qv.rows(), dh = qv.cols(), dv = vv.cols();
  const std::size_t radius = (width - 1) / 2;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // Row j's weights live at probs[offset[j] ...], covering keys lo[j]..hi[j].
  auto lo = std::make_shared<std::vector<std::size_t>>(n);
  auto offset = std::make_shared<std::vector<std::size_t>>(n + 1, 0);
  for (std::size_t j = 0; j < n; ++j) {
    (*lo)[j] = j > radius ? j - radius : 0;
    const std::size_t hi = std::min(n - 1, j + std::min(radius, n));
    (*offset)[j + 1] = (*offset)[j] + (hi - (*lo)[j] + 1);
  }
  auto probs = std::make_shared<std::vector<double>>((*offset)[n]);

  Tensor out = Tensor::matrix(n, dv);
  const double* Q = qv.data().data();
  const double* K = kv.data().data();
  const double* V = vv.data().data();
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t l = (*lo)[j];
    const std::size_t cnt = (*offset)[j + 1] - (*offset)[j];
    double* p = probs->data() + (*offset)[j];
    const double* qj = Q + j * dh;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < cnt; ++t) {
      const double* kt = K + (l + t) * dh;
      double s = 0.0;
      for (std::size_t c = 0; c < dh; ++c) s += qj[c] * kt[c];
      p[t] = s * inv_sqrt;
      mx = std::max(mx, p[t]);
    }
    double z = 0.0;
    for (std::size_t t = 0; t < cnt; ++t) {
      p[t] = std::exp(p[t] - mx);
      z += p[t];
    }
    double* oj = out.data().data() + j * dv;
    for (std::size_t t = 0; t < cnt; ++t) {
      p[t] /= z;
      const double* vt = V + (l + t) * dv;
      for (std::size_t c = 0; c < dv; ++c) oj[c] += p[t] * vt[c];
    }
  }
  if (weights) {
    *weights = Tensor::matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t cnt = (*offset)[j + 1] - (*offset)[j];
      for (std::size_t t = 0; t < cnt; ++t) weights->at(j, (*lo)[j] + t) = (*probs)[(*offset)[j] + t];
    }
  }

  const std::size_t qi = q.id(), ki = k.id(), vi = v.id();
  return g.record(std::move(out), {qi, ki, vi}, [=](Graph& g, std::size_t self) {
    const double* dO = g.grad(self).data().data();
    const double* Q = g.value(qi).data().data();
    const double* K = g.value(ki).data().data();
    const double* V = g.value(vi).data().data();
    double* dQ = g.requires_grad(qi) ? g.grad(qi).data().data() : nullptr;
    double* dK = g.requires_grad(ki) ? g.grad(ki).data().data() : nullptr;
    double* dV = g.requires_grad(vi) ? g.grad(vi).data().data() : nullptr;
    std::vector<double> ds;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t l = (*lo)[j];
      const std::size_t cnt = (*offset)[j + 1] - (*offset)[j];
      const double* p = probs->data() + (*offset)[j];
      const double* doj = dO + j * dv;
      ds.assign(cnt, 0.0);
      double dot = 0.0;
      for (std::size_t t = 0; t < cnt; ++t) {
        const double* vt = V + (l + t) * dv;
        double dp = 0.0;
        for (std::size_t c = 0; c < dv; ++c) dp += doj[c] * vt[c];
        ds[t] = dp;
        dot += p[t] * dp;
        if (dV) {
          double* dvt = dV + (l + t) * dv;
          for (std::size_t c = 0; c < dv; ++c) dvt[c] += p[t] * doj[c];
        }
      }
      const double* qj = Q + j * dh;
      for (std::size_t t = 0; t < cnt; ++t) {
        const double dlogit = p[t] * (ds[t] - dot) * inv_sqrt;
        if (dQ) {
          const double* kt = K + (l + t) * dh;
          double* dqj = dQ + j * dh;
          for (std::size_t c = 0; c < dh; ++c) dqj[c] += dlogit * kt[c];
        }
        if (dK) {
          double* dkt = dK + (l + t) * dh;
          for (std::size_t c = 0; c < dh; ++c) dkt[c] += dlogit * qj[c];
        }
      }
    }
  });
}

}  // namespace mst
