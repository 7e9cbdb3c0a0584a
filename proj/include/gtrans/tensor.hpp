#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "gtrans/errors.hpp"

namespace gtrans {

using Scalar = double;

// Dense row-major tensor of doubles with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, Scalar fill);
  Tensor(std::vector<int> shape, std::vector<Scalar> values);

  static Tensor zeros(const std::vector<int>& shape) { return Tensor(shape); }
  static Tensor full(const std::vector<int>& shape, Scalar v) { return {shape, v}; }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Scalar& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  Scalar operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 2-D accessors (row-major).
  Scalar& at(int r, int c) { return data_[static_cast<size_t>(r) * dim(1) + c]; }
  Scalar at(int r, int c) const { return data_[static_cast<size_t>(r) * dim(1) + c]; }

  void fill(Scalar v);
  Scalar max_value() const;
  Scalar sum() const;
  bool all_finite() const;

 private:
  std::vector<int> shape_;
  std::vector<Scalar> data_;
};

int64_t numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

Tensor randu(const std::vector<int>& shape, Scalar lo, Scalar hi, std::mt19937_64& rng);
Tensor randn(const std::vector<int>& shape, Scalar mean, Scalar stddev, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Reverse-mode autograd over a dynamic tape.
// ---------------------------------------------------------------------------

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily during backward()
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward_fn;  // accumulates into inputs' grads

  void ensure_grad();
};

// Handle to a tape node. Cheap to copy; a default-constructed Var is "absent".
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& val() const { return node_->value; }
  Tensor& val() { return node_->value; }
  Tensor& grad() { return node_->grad; }
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  void zero_grad();

  NodePtr node() const { return node_; }
  static Var wrap(NodePtr n);

 private:
  NodePtr node_;
};

bool grad_enabled();

// Disables tape recording for its lifetime (single-threaded model).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  bool prev;
};

// Runs reverse-mode accumulation from a scalar root.
void backward(const Var& root);

// ---- elementwise / linear algebra ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Scalar s);
Var matmul(const Var& a, const Var& b);  // (m,k)x(k,n)
Var transpose(const Var& a);             // 2-D
Var relu(const Var& a);
Var sum_all(const Var& a);  // -> shape {1}

// Broadcast adds over a 2-D operand.
Var add_rowvec(const Var& m, const Var& v);  // v has dim(1) entries, added to each row
Var add_colvec(const Var& m, const Var& v);  // v has dim(0) entries, added to each column

// softmax_cols normalizes each column (weights over rows); softmax_rows each row.
Var softmax_cols(const Var& a);
Var softmax_rows(const Var& a);

// Per-column layer normalization over the row axis with learnable gain/offset.
Var layer_norm_cols(const Var& x, const Var& gain, const Var& offset, Scalar eps = 1e-5);

Var reshape(const Var& a, std::vector<int> shape);
Var slice_cols(const Var& a, int c0, int c1);
Var concat_cols(const std::vector<Var>& parts);

// Extracts image n of an (N,C,H,W) batch as a (C, H*W) matrix.
Var slice_image(const Var& x, int n);

// ---- conv-net ops; x is (N,C,H,W) ----
Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad);
Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                 Tensor& running_var, bool training, Scalar momentum = 0.1,
                 Scalar eps = 1e-5);
Var max_pool2d(const Var& x, int kernel, int stride, int pad);

}  // namespace gtrans
