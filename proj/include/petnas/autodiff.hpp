#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace petnas {

namespace detail {

struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> data;   // row-major
  std::vector<double> grad;   // empty until a gradient contribution lands
  bool requires_grad = false;

  int size() const { return static_cast<int>(data.size()); }
  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense tensor of 64-bit floats with value semantics over a shared payload.
// Rank 0 (shape {}) holds a single scalar. Gradients accumulate additively
// into a lazily allocated buffer of the same shape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int size() const { return impl_->size(); }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int rows() const;  // rank-2 only
  int cols() const;  // rank-2 only

  std::vector<double>& values() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }
  double item() const;  // scalar tensors only

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::vector<double>& grad() { return impl_->grad_buffer(); }
  const std::vector<double>& grad_view() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  // Deep copy of values (no grad, same flags).
  Tensor clone() const;

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Reverse-mode tape. While a Tape is in scope it is the active tape for the
// current thread and every differentiable op records a backward closure onto
// it. Single use: after backward() the tape is spent. Replaying visits each
// recorded op exactly once, in reverse recording order, with a fixed
// accumulation order, so gradients are bit-reproducible.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> step);
  void backward(const Tensor& loss);

  static Tape* active();
  size_t op_count() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
  bool spent_ = false;
};

std::string shape_string(const std::vector<int>& shape);

// --- differentiable ops ---------------------------------------------------

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m,k] x [n,k]^T -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// Same shape, or b broadcast over the last axis (bias style).
Tensor add(const Tensor& a, const Tensor& b);
// Elementwise product, same shape.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);
// tanh approximation
Tensor gelu(const Tensor& a);
// Softmax over the last axis of a rank-2 tensor.
Tensor softmax_rows(const Tensor& a);
// Normalizes over the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
// Mean negative log-likelihood over the batch, max-stabilized.
// logits: [batch, classes]; labels: class indices.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar
// Row i of a rank-2 tensor as [1, n].
Tensor take_row(const Tensor& a, int row);
// k tensors of shape [1, n] -> [k, n].
Tensor stack_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, int start, int len);
Tensor concat_cols(const std::vector<Tensor>& parts);
// table: [vocab, dim]; ids indexes rows -> [len(ids), dim].
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace petnas
