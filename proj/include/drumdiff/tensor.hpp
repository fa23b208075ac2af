#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "drumdiff/rng.hpp"

namespace drumdiff {

// Dense row-major tensor with reverse-mode autodiff. Values are always
// double; the graph is a DAG of shared nodes built as ops execute and torn
// down when the last Tensor handle goes away.
struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily on first backward touch
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;  // scatters node.grad to parents
  const char* op = "";

  std::size_t size() const { return value.size(); }
  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : n_(std::move(n)) {}

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double v, bool requires_grad = false);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);

  bool defined() const { return n_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return n_->shape; }
  std::size_t size() const { return n_->value.size(); }
  std::size_t rows() const { return n_->shape.at(0); }
  std::size_t cols() const { return n_->shape.at(1); }

  double* data() { return n_->value.data(); }
  const double* data() const { return n_->value.data(); }
  std::vector<double>& values() { return n_->value; }
  const std::vector<double>& values() const { return n_->value; }
  double item() const;
  double at(std::size_t r, std::size_t c) const { return n_->value[r * cols() + c]; }

  bool requires_grad() const { return n_->requires_grad; }
  std::vector<double>& grad() { return n_->ensure_grad(); }
  const std::vector<double>& grad_ref() const { return n_->grad; }
  void zero_grad() { n_->grad.assign(n_->value.size(), 0.0); }

  // Reverse-mode sweep from a scalar. Seeds d(this)/d(this)=1 and walks the
  // graph in reverse topological order.
  void backward() const;

  std::shared_ptr<TensorNode> node() const { return n_; }

 private:
  std::shared_ptr<TensorNode> n_;
};

// When false, ops record no parents and produce requires_grad=false results.
// Used by samplers and evaluation loops to avoid retaining graphs.
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  bool prev;
};

// ---- primitive ops ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_rowvec(const Tensor& x, const Tensor& v);  // x:(m,n) + v:(n)
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor gelu(const Tensor& x);
// x:(n,c_in), w:(c_out,c_in,k) with odd k, b:(c_out); same-length zero padding.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx);
// out = x with y added into rows [offset, offset+y.rows)
Tensor add_rows_at(const Tensor& x, const Tensor& y, std::size_t offset);
// Rotary position transform applied per head; row r gets position pos0+r.
Tensor rope(const Tensor& x, int heads, std::size_t pos0 = 0, double base = 10000.0);
// Fused scaled-dot-product attention over `heads` heads (no projections).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                 bool causal = false);
Tensor mean_all(const Tensor& x);
Tensor sum_all(const Tensor& x);

// Raw matmul kernels shared by forward and backward paths. C is
// overwritten when accumulate=false. Deterministic for any thread count:
// each output element is reduced by a single thread in a fixed order.
void mm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate);
void mm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate);  // c(m,n) = a(m,k) * b(n,k)^T
void mm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate);  // c(m,n) = a(k,m)^T * b(k,n)

}  // namespace drumdiff
