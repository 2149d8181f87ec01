// kasr/autodiff.h

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

// Dense float64 tensors (rank 0, 1 or 2) with reverse-mode differentiation.
//
// A Tensor is an immutable handle on a graph node.  Every op whose inputs
// require gradients records the node's inputs and a vector-Jacobian product;
// Backward() walks the recorded graph from a scalar loss in reverse
// topological order and returns the gradients of the leaves as a separate
// map, so forward values are never touched and Backward() may be repeated.
//
// Broadcasting is limited to adding a rank-1 bias to every row of a matrix.

#ifndef KASR_AUTODIFF_H_
#define KASR_AUTODIFF_H_

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace kasr {

using Shape = std::vector<int>;

std::string ShapeString(const Shape& s);
size_t NumElements(const Shape& s);

struct Node;

/// Receives the gradient of the node's output and adds the vector-Jacobian
/// products into the gradient buffers of its inputs (nullptr for inputs that
/// do not require gradients).
using BackwardFn = std::function<void(const Node& self, std::span<const double> grad_out,
                                      std::span<std::vector<double>* const> grad_in)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<const Node>> inputs;
  BackwardFn backward;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor Constant(Shape shape, std::vector<double> values);
  /// A leaf that requires gradients.
  static Tensor Leaf(Shape shape, std::vector<double> values);
  static Tensor Zeros(Shape shape);
  static Tensor Scalar(double v);
  /// Result of a custom op.  `backward` is kept only if some input requires
  /// gradients.
  static Tensor FromOp(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                       BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int axis) const { return node_->shape.at(axis); }
  size_t numel() const { return node_->value.size(); }
  std::span<const double> data() const { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }
  double item() const;
  double at(int i) const { return node_->value[i]; }
  double at(int r, int c) const { return node_->value[static_cast<size_t>(r) * node_->shape[1] + c]; }
  bool requires_grad() const { return node_->requires_grad; }
  const Node* node() const { return node_.get(); }
  const std::shared_ptr<const Node>& shared_node() const { return node_; }

  /// Same values, cut from the graph.
  Tensor Detach() const { return Constant(shape(), values()); }

 private:
  explicit Tensor(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  std::shared_ptr<const Node> node_;
};

// Primitive ops.  Shape mismatches throw ShapeError with both shapes.
Tensor MatMul(const Tensor& a, const Tensor& b);
/// Elementwise sum; `b` may also be a rank-1 bias matching a's last axis.
Tensor Add(const Tensor& a, const Tensor& b);
Tensor Sub(const Tensor& a, const Tensor& b);
Tensor Mul(const Tensor& a, const Tensor& b);
Tensor Scale(const Tensor& a, double s);
Tensor Transpose(const Tensor& a);
Tensor Concat(const std::vector<Tensor>& parts, int axis);
Tensor Slice(const Tensor& a, int axis, int start, int length);
Tensor Softmax(const Tensor& a, int axis);
Tensor LogSoftmax(const Tensor& a, int axis);
/// Row-wise normalisation of a matrix (or a vector) over its last axis.
Tensor LayerNorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-9);
/// Exact GELU, x * Phi(x).
Tensor Gelu(const Tensor& a);
Tensor EmbeddingLookup(const Tensor& table, std::span<const int> ids);
Tensor Mean(const Tensor& a, int axis);
Tensor Sum(const Tensor& a, int axis);
Tensor SumAll(const Tensor& a);
Tensor MeanAll(const Tensor& a);

/// Gradients of the leaves reached from a loss.
class Gradients {
 public:
  /// Zeros of the right shape for a leaf the loss does not depend on.
  Tensor Of(const Tensor& leaf) const;
  const std::vector<double>* Find(const Tensor& leaf) const;

 private:
  friend Gradients Backward(const Tensor& loss);
  std::unordered_map<const Node*, std::vector<double>> grads_;
};

/// Reverse-mode sweep from a scalar loss.  Throws ArgumentError for
/// non-scalar losses.
Gradients Backward(const Tensor& loss);

/// Max over coordinates of |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|) with
/// central differences of step `eps` (in [1e-6, 1e-3]).
double GradCheck(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point, double eps);

/// Named parameters.  Iteration order is the name order, which fixes the
/// order of every per-parameter loop (optimizer, checkpoints, counting).
class ParameterStore {
 public:
  struct Entry {
    Tensor value;
    bool trainable = true;
  };

  void Add(const std::string& name, Tensor value, bool trainable = true);
  bool Has(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& Get(const std::string& name) const;
  void Set(const std::string& name, Tensor value);
  void SetTrainable(const std::string& name, bool trainable);
  bool IsTrainable(const std::string& name) const;
  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::vector<std::string> Names() const;
  size_t TotalElements() const;
  size_t TrainableElements() const;

 private:
  std::map<std::string, Entry> entries_;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// Global gradient-norm clip over trainable parameters; 0 disables.
  double max_grad_norm = 0.0;
};

struct OptimizerState {
  AdamConfig config;
  int64_t step = 0;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
};

/// One Adam step with bias correction over the trainable parameters.
/// Decoupled weight decay touches only matrices.  Throws DivergedError
/// naming the first parameter with a non-finite gradient.
void OptimizerStep(ParameterStore& params, const Gradients& grads, OptimizerState& state);

}  // namespace kasr

#endif  // KASR_AUTODIFF_H_
