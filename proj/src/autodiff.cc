// kasr/autodiff.cc

// Copyright 2026  The kasr Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "kasr/autodiff.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "kasr/common.h"

namespace kasr {

std::string ShapeString(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

size_t NumElements(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= static_cast<size_t>(d);
  return n;
}

namespace {

[[noreturn]] void ShapeMismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + ShapeString(a) + " and " +
                   ShapeString(b));
}

void RequireMatrix(const char* op, const Tensor& t) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " + ShapeString(t.shape()));
}

// Rows/cols view of a rank-1 or rank-2 tensor (a vector is one row).
int Rows(const Shape& s) { return s.size() == 2 ? s[0] : 1; }
int Cols(const Shape& s) { return s.empty() ? 1 : s.back(); }

}  // namespace

Tensor Tensor::Constant(Shape shape, std::vector<double> values) {
  if (NumElements(shape) != values.size())
    throw ShapeError("tensor of shape " + ShapeString(shape) + " given " +
                     std::to_string(values.size()) + " values");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::Leaf(Shape shape, std::vector<double> values) {
  if (NumElements(shape) != values.size())
    throw ShapeError("tensor of shape " + ShapeString(shape) + " given " +
                     std::to_string(values.size()) + " values");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = true;
  return Tensor(std::move(node));
}

Tensor Tensor::Zeros(Shape shape) {
  const size_t n = NumElements(shape);
  return Constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::Scalar(double v) { return Constant({}, {v}); }

Tensor Tensor::FromOp(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                      BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  for (const Tensor& in : inputs) node->requires_grad = node->requires_grad || in.requires_grad();
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (const Tensor& in : inputs) node->inputs.push_back(in.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + ShapeString(shape()));
  return node_->value[0];
}

Tensor MatMul(const Tensor& a, const Tensor& b) {
  RequireMatrix("matmul", a);
  RequireMatrix("matmul", b);
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) ShapeMismatch("matmul", a.shape(), b.shape());
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (int i = 0; i < m; ++i) {
    double* row = out.data() + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = A[static_cast<size_t>(i) * k + p];
      if (av == 0.0) continue;
      const double* brow = B + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return Tensor::FromOp(
      {m, n}, std::move(out), {a, b},
      [m, k, n](const Node& self, std::span<const double> g, std::span<std::vector<double>* const> gin) {
        const double* A = self.inputs[0]->value.data();
        const double* B = self.inputs[1]->value.data();
        if (gin[0]) {
          double* dA = gin[0]->data();
          for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
              const double* brow = B + static_cast<size_t>(p) * n;
              const double* grow = g.data() + static_cast<size_t>(i) * n;
              double acc = 0.0;
              for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
              dA[static_cast<size_t>(i) * k + p] += acc;
            }
        }
        if (gin[1]) {
          double* dB = gin[1]->data();
          for (int i = 0; i < m; ++i) {
            const double* grow = g.data() + static_cast<size_t>(i) * n;
            for (int p = 0; p < k; ++p) {
              const double av = A[static_cast<size_t>(i) * k + p];
              if (av == 0.0) continue;
              double* drow = dB + static_cast<size_t>(p) * n;
              for (int j = 0; j < n; ++j) drow[j] += av * grow[j];
            }
          }
        }
      });
}

Tensor Add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.values());
    for (size_t i = 0; i < out.size(); ++i) out[i] += b.at(static_cast<int>(i));
    return Tensor::FromOp(a.shape(), std::move(out), {a, b},
                          [](const Node&, std::span<const double> g, std::span<std::vector<double>* const> gin) {
                            for (auto* buf : gin)
                              if (buf)
                                for (size_t i = 0; i < g.size(); ++i) (*buf)[i] += g[i];
                          });
  }
  if (a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1)) {
    const int rows = a.dim(0), cols = a.dim(1);
    std::vector<double> out(a.values());
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) out[static_cast<size_t>(r) * cols + c] += b.at(c);
    return Tensor::FromOp(
        a.shape(), std::move(out), {a, b},
        [rows, cols](const Node&, std::span<const double> g, std::span<std::vector<double>* const> gin) {
          if (gin[0])
            for (size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
          if (gin[1])
            for (int r = 0; r < rows; ++r)
              for (int c = 0; c < cols; ++c) (*gin[1])[c] += g[static_cast<size_t>(r) * cols + c];
        });
  }
  ShapeMismatch("add", a.shape(), b.shape());
}

Tensor Sub(const Tensor& a, const Tensor& b) { return Add(a, Scale(b, -1.0)); }

Tensor Mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) ShapeMismatch("mul", a.shape(), b.shape());
  std::vector<double> out(a.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i];
  return Tensor::FromOp(a.shape(), std::move(out), {a, b},
                        [](const Node& self, std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          const auto& av = self.inputs[0]->value;
                          const auto& bv = self.inputs[1]->value;
                          if (gin[0])
                            for (size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * bv[i];
                          if (gin[1])
                            for (size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * av[i];
                        });
}

Tensor Scale(const Tensor& a, double s) {
  std::vector<double> out(a.values());
  for (double& v : out) v *= s;
  return Tensor::FromOp(a.shape(), std::move(out), {a},
                        [s](const Node&, std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          for (size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += s * g[i];
                        });
}

Tensor Transpose(const Tensor& a) {
  RequireMatrix("transpose", a);
  const int r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.numel());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(j) * r + i] = a.at(i, j);
  return Tensor::FromOp({c, r}, std::move(out), {a},
                        [r, c](const Node&, std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          for (int i = 0; i < r; ++i)
                            for (int j = 0; j < c; ++j)
                              (*gin[0])[static_cast<size_t>(i) * c + j] += g[static_cast<size_t>(j) * r + i];
                        });
}

Tensor Concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const int rank = parts[0].rank();
  if (rank < 1 || rank > 2 || axis < 0 || axis >= rank)
    throw ShapeError("concat: bad axis " + std::to_string(axis) + " for shape " + ShapeString(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank) ShapeMismatch("concat", first, p.shape());
    for (int d = 0; d < rank; ++d)
      if (d != axis && p.dim(d) != first[d]) ShapeMismatch("concat", first, p.shape());
    out_shape[axis] += p.dim(axis);
  }
  const int rows = Rows(out_shape), cols = Cols(out_shape);
  std::vector<double> out(NumElements(out_shape));
  // Offsets of each part along `axis`.
  std::vector<int> offsets;
  int off = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    const int pr = Rows(p.shape()), pc = Cols(p.shape());
    for (int i = 0; i < pr; ++i)
      for (int j = 0; j < pc; ++j) {
        const int oi = (rank == 2 && axis == 0) ? i + off : i;
        const int oj = (rank == 1 || axis == 1) ? j + off : j;
        out[static_cast<size_t>(oi) * cols + oj] = p.values()[static_cast<size_t>(i) * pc + j];
      }
    off += p.dim(axis);
  }
  (void)rows;
  return Tensor::FromOp(
      out_shape, std::move(out), parts,
      [offsets, rank, axis, cols](const Node& self, std::span<const double> g,
                                  std::span<std::vector<double>* const> gin) {
        for (size_t k = 0; k < gin.size(); ++k) {
          if (!gin[k]) continue;
          const Shape& ps = self.inputs[k]->shape;
          const int pr = Rows(ps), pc = Cols(ps);
          for (int i = 0; i < pr; ++i)
            for (int j = 0; j < pc; ++j) {
              const int oi = (rank == 2 && axis == 0) ? i + offsets[k] : i;
              const int oj = (rank == 1 || axis == 1) ? j + offsets[k] : j;
              (*gin[k])[static_cast<size_t>(i) * pc + j] += g[static_cast<size_t>(oi) * cols + oj];
            }
        }
      });
}

Tensor Slice(const Tensor& a, int axis, int start, int length) {
  const int rank = a.rank();
  if (rank < 1 || rank > 2 || axis < 0 || axis >= rank)
    throw ShapeError("slice: bad axis " + std::to_string(axis) + " for shape " + ShapeString(a.shape()));
  if (start < 0 || length < 0 || start + length > a.dim(axis))
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of bounds for shape " + ShapeString(a.shape()));
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  const int in_cols = Cols(a.shape());
  const int out_rows = Rows(out_shape), out_cols = Cols(out_shape);
  const bool along_rows = rank == 2 && axis == 0;
  std::vector<double> out(NumElements(out_shape));
  for (int i = 0; i < out_rows; ++i)
    for (int j = 0; j < out_cols; ++j) {
      const int si = along_rows ? i + start : i;
      const int sj = along_rows ? j : j + start;
      out[static_cast<size_t>(i) * out_cols + j] = a.values()[static_cast<size_t>(si) * in_cols + sj];
    }
  return Tensor::FromOp(
      out_shape, std::move(out), {a},
      [=](const Node&, std::span<const double> g, std::span<std::vector<double>* const> gin) {
        for (int i = 0; i < out_rows; ++i)
          for (int j = 0; j < out_cols; ++j) {
            const int si = along_rows ? i + start : i;
            const int sj = along_rows ? j : j + start;
            (*gin[0])[static_cast<size_t>(si) * in_cols + sj] += g[static_cast<size_t>(i) * out_cols + j];
          }
      });
}

namespace {

// Visits each 1-D lane of a rank-1/2 tensor along `axis`: calls fn(offset,
// stride, length) per lane.
template <typename Fn>
void ForEachLane(const Shape& shape, int axis, Fn&& fn) {
  if (shape.size() == 1) {
    if (axis != 0) throw ShapeError("bad axis " + std::to_string(axis) + " for shape " + ShapeString(shape));
    fn(size_t{0}, size_t{1}, shape[0]);
    return;
  }
  if (shape.size() != 2 || axis < 0 || axis > 1)
    throw ShapeError("bad axis " + std::to_string(axis) + " for shape " + ShapeString(shape));
  const int rows = shape[0], cols = shape[1];
  if (axis == 1) {
    for (int r = 0; r < rows; ++r) fn(static_cast<size_t>(r) * cols, size_t{1}, cols);
  } else {
    for (int c = 0; c < cols; ++c) fn(static_cast<size_t>(c), static_cast<size_t>(cols), rows);
  }
}

}  // namespace

Tensor Softmax(const Tensor& a, int axis) {
  std::vector<double> out(a.numel());
  const auto& x = a.values();
  ForEachLane(a.shape(), axis, [&](size_t off, size_t stride, int len) {
    double mx = -INFINITY;
    for (int i = 0; i < len; ++i) mx = std::max(mx, x[off + i * stride]);
    double z = 0.0;
    for (int i = 0; i < len; ++i) {
      const double e = std::exp(x[off + i * stride] - mx);
      out[off + i * stride] = e;
      z += e;
    }
    for (int i = 0; i < len; ++i) out[off + i * stride] /= z;
  });
  const Shape shape = a.shape();
  return Tensor::FromOp(shape, std::move(out), {a},
                        [shape, axis](const Node& self, std::span<const double> g,
                                      std::span<std::vector<double>* const> gin) {
                          const auto& y = self.value;
                          ForEachLane(shape, axis, [&](size_t off, size_t stride, int len) {
                            double dot = 0.0;
                            for (int i = 0; i < len; ++i) dot += g[off + i * stride] * y[off + i * stride];
                            for (int i = 0; i < len; ++i) {
                              const size_t k = off + i * stride;
                              (*gin[0])[k] += y[k] * (g[k] - dot);
                            }
                          });
                        });
}

Tensor LogSoftmax(const Tensor& a, int axis) {
  std::vector<double> out(a.numel());
  const auto& x = a.values();
  ForEachLane(a.shape(), axis, [&](size_t off, size_t stride, int len) {
    double mx = -INFINITY;
    for (int i = 0; i < len; ++i) mx = std::max(mx, x[off + i * stride]);
    double z = 0.0;
    for (int i = 0; i < len; ++i) z += std::exp(x[off + i * stride] - mx);
    const double lse = mx + std::log(z);
    for (int i = 0; i < len; ++i) out[off + i * stride] = x[off + i * stride] - lse;
  });
  const Shape shape = a.shape();
  return Tensor::FromOp(shape, std::move(out), {a},
                        [shape, axis](const Node& self, std::span<const double> g,
                                      std::span<std::vector<double>* const> gin) {
                          const auto& y = self.value;
                          ForEachLane(shape, axis, [&](size_t off, size_t stride, int len) {
                            double gsum = 0.0;
                            for (int i = 0; i < len; ++i) gsum += g[off + i * stride];
                            for (int i = 0; i < len; ++i) {
                              const size_t k = off + i * stride;
                              (*gin[0])[k] += g[k] - std::exp(y[k]) * gsum;
                            }
                          });
                        });
}

Tensor LayerNorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1 || x.rank() > 2) throw ShapeError("layer_norm: bad shape " + ShapeString(x.shape()));
  const int rows = Rows(x.shape()), cols = Cols(x.shape());
  if (gain.rank() != 1 || gain.dim(0) != cols) ShapeMismatch("layer_norm", x.shape(), gain.shape());
  if (bias.rank() != 1 || bias.dim(0) != cols) ShapeMismatch("layer_norm", x.shape(), bias.shape());
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  const auto& xv = x.values();
  for (int r = 0; r < rows; ++r) {
    const double* row = xv.data() + static_cast<size_t>(r) * cols;
    double mean = 0.0;
    for (int c = 0; c < cols; ++c) mean += row[c];
    mean /= cols;
    double var = 0.0;
    for (int c = 0; c < cols; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= cols;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < cols; ++c) {
      const size_t k = static_cast<size_t>(r) * cols + c;
      xhat[k] = (row[c] - mean) * inv_std[r];
      out[k] = xhat[k] * gain.at(c) + bias.at(c);
    }
  }
  return Tensor::FromOp(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const Node& self, std::span<const double> g, std::span<std::vector<double>* const> gin) {
        const auto& gamma = self.inputs[1]->value;
        std::vector<double> dxhat(cols);
        for (int r = 0; r < rows; ++r) {
          const size_t base = static_cast<size_t>(r) * cols;
          if (gin[1])
            for (int c = 0; c < cols; ++c) (*gin[1])[c] += g[base + c] * xhat[base + c];
          if (gin[2])
            for (int c = 0; c < cols; ++c) (*gin[2])[c] += g[base + c];
          if (gin[0]) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (int c = 0; c < cols; ++c) {
              dxhat[c] = g[base + c] * gamma[c];
              mean_d += dxhat[c];
              mean_dx += dxhat[c] * xhat[base + c];
            }
            mean_d /= cols;
            mean_dx /= cols;
            for (int c = 0; c < cols; ++c)
              (*gin[0])[base + c] += inv_std[r] * (dxhat[c] - mean_d - xhat[base + c] * mean_dx);
          }
        }
      });
}

Tensor Gelu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) {
    const double x = a.values()[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  }
  return Tensor::FromOp(a.shape(), std::move(out), {a},
                        [](const Node& self, std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          const auto& xv = self.inputs[0]->value;
                          for (size_t i = 0; i < g.size(); ++i) {
                            const double x = xv[i];
                            const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
                            const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
                            (*gin[0])[i] += g[i] * (cdf + x * pdf);
                          }
                        });
}

Tensor EmbeddingLookup(const Tensor& table, std::span<const int> ids) {
  RequireMatrix("embedding_lookup", table);
  const int vocab = table.dim(0), width = table.dim(1);
  const int n = static_cast<int>(ids.size());
  std::vector<double> out(static_cast<size_t>(n) * width);
  for (int i = 0; i < n; ++i) {
    if (ids[i] < 0 || ids[i] >= vocab)
      throw ShapeError("embedding_lookup: id " + std::to_string(ids[i]) + " outside table of shape " +
                       ShapeString(table.shape()));
    std::copy_n(table.values().begin() + static_cast<size_t>(ids[i]) * width, width,
                out.begin() + static_cast<size_t>(i) * width);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return Tensor::FromOp({n, width}, std::move(out), {table},
                        [idv = std::move(idv), width](const Node&, std::span<const double> g,
                                                      std::span<std::vector<double>* const> gin) {
                          for (size_t i = 0; i < idv.size(); ++i)
                            for (int c = 0; c < width; ++c)
                              (*gin[0])[static_cast<size_t>(idv[i]) * width + c] += g[i * width + c];
                        });
}

Tensor Sum(const Tensor& a, int axis) {
  Shape out_shape;
  if (a.rank() == 2) out_shape = {axis == 0 ? a.dim(1) : a.dim(0)};
  std::vector<double> out(NumElements(out_shape), 0.0);
  int lane = 0;
  ForEachLane(a.shape(), axis, [&](size_t off, size_t stride, int len) {
    double s = 0.0;
    for (int i = 0; i < len; ++i) s += a.values()[off + i * stride];
    out[lane++] = s;
  });
  const Shape in_shape = a.shape();
  return Tensor::FromOp(out_shape, std::move(out), {a},
                        [in_shape, axis](const Node&, std::span<const double> g,
                                         std::span<std::vector<double>* const> gin) {
                          int lane = 0;
                          ForEachLane(in_shape, axis, [&](size_t off, size_t stride, int len) {
                            for (int i = 0; i < len; ++i) (*gin[0])[off + i * stride] += g[lane];
                            ++lane;
                          });
                        });
}

Tensor Mean(const Tensor& a, int axis) {
  const int len = a.rank() == 1 ? a.dim(0) : a.dim(axis);
  if (len == 0) throw ShapeError("mean over an empty axis of shape " + ShapeString(a.shape()));
  return Scale(Sum(a, axis), 1.0 / len);
}

Tensor SumAll(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return Tensor::FromOp({}, {s}, {a},
                        [](const Node&, std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          for (double& v : *gin[0]) v += g[0];
                        });
}

Tensor MeanAll(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  return Scale(SumAll(a), 1.0 / static_cast<double>(a.numel()));
}

const std::vector<double>* Gradients::Find(const Tensor& leaf) const {
  auto it = grads_.find(leaf.node());
  return it == grads_.end() ? nullptr : &it->second;
}

Tensor Gradients::Of(const Tensor& leaf) const {
  if (const auto* g = Find(leaf)) return Tensor::Constant(leaf.shape(), *g);
  return Tensor::Zeros(leaf.shape());
}

Gradients Backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ArgumentError("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? ShapeString(loss.shape()) : std::string("<undefined>")));
  Gradients result;
  if (!loss.requires_grad()) return result;

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<const Node*> order;
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<const Node*, size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<const Node*, std::vector<double>> grads;
  grads[loss.node()] = {1.0};
  std::vector<std::vector<double>*> gin;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node* node = *it;
    auto git = grads.find(node);
    if (git == grads.end()) continue;
    if (!node->backward) {
      result.grads_[node] = std::move(git->second);
      grads.erase(git);
      continue;
    }
    gin.assign(node->inputs.size(), nullptr);
    for (size_t i = 0; i < node->inputs.size(); ++i) {
      const Node* in = node->inputs[i].get();
      if (!in->requires_grad) continue;
      auto& buf = grads[in];
      if (buf.empty()) buf.assign(in->value.size(), 0.0);
      gin[i] = &buf;
    }
    // Re-find: inserting input buffers may rehash the map.
    git = grads.find(node);
    node->backward(*node, git->second, gin);
    grads.erase(git);
  }
  return result;
}

double GradCheck(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point, double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw ArgumentError("grad_check: eps must be in [1e-6, 1e-3]");
  const Tensor x = Tensor::Leaf(point.shape(), point.values());
  const Tensor y = fn(x);
  if (y.numel() != 1) throw ArgumentError("grad_check: function must return a scalar, got shape " +
                                          ShapeString(y.shape()));
  const Tensor analytic = Backward(y).Of(x);
  double worst = 0.0;
  std::vector<double> probe(point.values());
  for (size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = fn(Tensor::Constant(point.shape(), probe)).item();
    probe[i] = orig - eps;
    const double down = fn(Tensor::Constant(point.shape(), probe)).item();
    probe[i] = orig;
    const double fd = (up - down) / (2.0 * eps);
    const double ad = analytic.at(static_cast<int>(i));
    worst = std::max(worst, std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd)));
  }
  return worst;
}

void ParameterStore::Add(const std::string& name, Tensor value, bool trainable) {
  if (Has(name)) throw StateError("duplicate parameter '" + name + "'");
  if (!value.requires_grad()) value = Tensor::Leaf(value.shape(), value.values());
  entries_.emplace(name, Entry{std::move(value), trainable});
}

const Tensor& ParameterStore::Get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw StateError("no parameter named '" + name + "'");
  return it->second.value;
}

void ParameterStore::Set(const std::string& name, Tensor value) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw StateError("no parameter named '" + name + "'");
  if (value.shape() != it->second.value.shape())
    throw ShapeError("parameter '" + name + "': shape " + ShapeString(value.shape()) + " does not match " +
                     ShapeString(it->second.value.shape()));
  if (!value.requires_grad()) value = Tensor::Leaf(value.shape(), value.values());
  it->second.value = std::move(value);
}

void ParameterStore::SetTrainable(const std::string& name, bool trainable) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw StateError("no parameter named '" + name + "'");
  it->second.trainable = trainable;
}

bool ParameterStore::IsTrainable(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw StateError("no parameter named '" + name + "'");
  return it->second.trainable;
}

std::vector<std::string> ParameterStore::Names() const {
  std::vector<std::string> names;
  for (const auto& [name, _] : entries_) names.push_back(name);
  return names;
}

size_t ParameterStore::TotalElements() const {
  size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.value.numel();
  return n;
}

size_t ParameterStore::TrainableElements() const {
  size_t n = 0;
  for (const auto& [_, e] : entries_)
    if (e.trainable) n += e.value.numel();
  return n;
}

void OptimizerStep(ParameterStore& params, const Gradients& grads, OptimizerState& state) {
  const AdamConfig& cfg = state.config;
  // Validate every gradient before touching any parameter.
  double sq_norm = 0.0;
  for (const auto& [name, entry] : params.entries()) {
    if (!entry.trainable) continue;
    if (const auto* g = grads.Find(entry.value)) {
      for (double v : *g) {
        if (!std::isfinite(v)) throw DivergedError("non-finite gradient for parameter '" + name + "'");
        sq_norm += v * v;
      }
    }
  }
  double clip = 1.0;
  if (cfg.max_grad_norm > 0.0 && std::sqrt(sq_norm) > cfg.max_grad_norm)
    clip = cfg.max_grad_norm / std::sqrt(sq_norm);

  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const std::string& name : params.Names()) {
    if (!params.IsTrainable(name)) continue;
    const Tensor& p = params.Get(name);
    const size_t n = p.numel();
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.empty()) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
    }
    if (m.size() != n) throw ShapeError("optimizer moments do not match parameter '" + name + "'");
    const std::vector<double>* g = grads.Find(p);
    const bool decay = cfg.weight_decay > 0.0 && p.rank() == 2;
    std::vector<double> updated(p.values());
    for (size_t i = 0; i < n; ++i) {
      const double gi = g ? (*g)[i] * clip : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      double delta = cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      if (decay) delta += cfg.lr * cfg.weight_decay * updated[i];
      updated[i] -= delta;
    }
    params.Set(name, Tensor::Leaf(p.shape(), std::move(updated)));
  }
}

}  // namespace kasr
