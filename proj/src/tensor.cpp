#include "drumdiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "drumdiff/common.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace drumdiff {

namespace {

thread_local bool g_grad_enabled = true;

std::size_t numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::shared_ptr<TensorNode> make_node(std::vector<std::size_t> shape) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value.assign(numel(n->shape), 0.0);
  return n;
}

void check(bool ok, const char* msg) {
  if (!ok) throw DrumdiffError(msg);
}

// Wires parents/backprop only while grads are enabled and some input needs them.
Tensor finish(std::shared_ptr<TensorNode> out,
              std::vector<std::shared_ptr<TensorNode>> parents,
              std::function<void(TensorNode&)> backprop, const char* op) {
  out->op = op;
  if (g_grad_enabled) {
    bool needs = false;
    for (auto& p : parents)
      if (p->requires_grad) needs = true;
    if (needs) {
      out->requires_grad = true;
      out->parents = std::move(parents);
      out->backprop = std::move(backprop);
    }
  }
  return Tensor(std::move(out));
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  auto n = make_node(std::move(shape));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v, bool requires_grad) {
  auto n = make_node(std::move(shape));
  std::fill(n->value.begin(), n->value.end(), v);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> data,
                    bool requires_grad) {
  check(numel(shape) == data.size(), "tensor: data length does not match shape");
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

Tensor Tensor::randn(std::vector<std::size_t> shape, Rng& rng, double stddev,
                     bool requires_grad) {
  auto n = make_node(std::move(shape));
  for (double& x : n->value) x = rng.normal() * stddev;
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

double Tensor::item() const {
  check(n_ && n_->value.size() == 1, "tensor: item() on non-scalar");
  return n_->value[0];
}

void Tensor::backward() const {
  check(n_ && n_->value.size() == 1, "tensor: backward() needs a scalar");
  // Post-order DFS for a reverse-topological schedule.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.push_back({n_.get(), 0});
  seen.insert(n_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p->backprop && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  n_->ensure_grad();
  n_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backprop) {
      for (auto& p : node->parents) p->ensure_grad();
      node->backprop(*node);
    }
  }
}

// ---- matmul kernels ----

namespace {
constexpr std::size_t kOmpThreshold = 64 * 64 * 64;
}

void mm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate) {
  const bool par = m * k * n >= kOmpThreshold && m > 1;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    double* ci = c + i * n;
    if (!accumulate) std::fill(ci, ci + n, 0.0);
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void mm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate) {
  const bool par = m * k * n >= kOmpThreshold && m > 1;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      if (accumulate)
        ci[j] += s;
      else
        ci[j] = s;
    }
  }
}

void mm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate) {
  const bool par = m * k * n >= kOmpThreshold && m > 1;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    double* ci = c + i * n;
    if (!accumulate) std::fill(ci, ci + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p * m + i];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// ---- ops ----

Tensor add(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "add: shape mismatch");
  auto out = make_node(a.shape());
  for (std::size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = a.data()[i] + b.data()[i];
  auto an = a.node(), bn = b.node();
  return finish(
      out, {an, bn},
      [an, bn](TensorNode& o) {
        if (an->requires_grad)
          for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
        if (bn->requires_grad)
          for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i];
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "sub: shape mismatch");
  auto out = make_node(a.shape());
  for (std::size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = a.data()[i] - b.data()[i];
  auto an = a.node(), bn = b.node();
  return finish(
      out, {an, bn},
      [an, bn](TensorNode& o) {
        if (an->requires_grad)
          for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
        if (bn->requires_grad)
          for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] -= o.grad[i];
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "mul: shape mismatch");
  auto out = make_node(a.shape());
  for (std::size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = a.data()[i] * b.data()[i];
  auto an = a.node(), bn = b.node();
  return finish(
      out, {an, bn},
      [an, bn](TensorNode& o) {
        if (an->requires_grad)
          for (std::size_t i = 0; i < o.grad.size(); ++i)
            an->grad[i] += o.grad[i] * bn->value[i];
        if (bn->requires_grad)
          for (std::size_t i = 0; i < o.grad.size(); ++i)
            bn->grad[i] += o.grad[i] * an->value[i];
      },
      "mul");
}

Tensor scale(const Tensor& a, double c) {
  auto out = make_node(a.shape());
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.data()[i] * c;
  auto an = a.node();
  return finish(
      out, {an},
      [an, c](TensorNode& o) {
        if (an->requires_grad)
          for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * c;
      },
      "scale");
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  check(x.shape().size() == 2, "add_rowvec: x must be 2-D");
  check(v.size() == x.cols(), "add_rowvec: v length != x cols");
  auto out = make_node(x.shape());
  const std::size_t m = x.rows(), n = x.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out->value[i * n + j] = x.data()[i * n + j] + v.data()[j];
  auto xn = x.node(), vn = v.node();
  return finish(
      out, {xn, vn},
      [xn, vn, m, n](TensorNode& o) {
        if (xn->requires_grad)
          for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
        if (vn->requires_grad)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) vn->grad[j] += o.grad[i * n + j];
      },
      "add_rowvec");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.shape().size() == 2 && b.shape().size() == 2, "matmul: inputs must be 2-D");
  check(a.cols() == b.rows(), "matmul: inner dimensions differ");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  auto out = make_node({m, n});
  mm_nn(a.data(), b.data(), out->value.data(), m, k, n, false);
  auto an = a.node(), bn = b.node();
  return finish(
      out, {an, bn},
      [an, bn, m, k, n](TensorNode& o) {
        if (an->requires_grad)
          mm_nt(o.grad.data(), bn->value.data(), an->grad.data(), m, n, k, true);
        if (bn->requires_grad)
          mm_tn(an->value.data(), o.grad.data(), bn->grad.data(), k, m, n, true);
      },
      "matmul");
}

Tensor softmax_rows(const Tensor& x) {
  check(x.shape().size() == 2, "softmax: input must be 2-D");
  const std::size_t m = x.rows(), n = x.cols();
  auto out = make_node(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.data() + i * n;
    double* oi = out->value.data() + i * n;
    double mx = xi[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      s += oi[j];
    }
    for (std::size_t j = 0; j < n; ++j) oi[j] /= s;
  }
  auto xn = x.node();
  return finish(
      out, {xn},
      [xn, m, n](TensorNode& o) {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < m; ++i) {
          const double* oi = o.value.data() + i * n;
          const double* gi = o.grad.data() + i * n;
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += gi[j] * oi[j];
          double* xi = xn->grad.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) xi[j] += oi[j] * (gi[j] - dot);
        }
      },
      "softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  check(x.shape().size() == 2, "layer_norm: input must be 2-D");
  const std::size_t m = x.rows(), n = x.cols();
  check(gain.size() == n && bias.size() == n, "layer_norm: affine size mismatch");
  auto out = make_node(x.shape());
  auto stats = std::make_shared<std::vector<double>>(2 * m);  // mean, inv_std per row
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xi[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * i] = mean;
    (*stats)[2 * i + 1] = inv;
    double* oi = out->value.data() + i * n;
    for (std::size_t j = 0; j < n; ++j)
      oi[j] = (xi[j] - mean) * inv * gain.data()[j] + bias.data()[j];
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return finish(
      out, {xn, gn, bn},
      [xn, gn, bn, stats, m, n](TensorNode& o) {
        for (std::size_t i = 0; i < m; ++i) {
          const double mean = (*stats)[2 * i];
          const double inv = (*stats)[2 * i + 1];
          const double* xi = xn->value.data() + i * n;
          const double* gi = o.grad.data() + i * n;
          // dxhat, plus reductions for the mean/var terms
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double xhat = (xi[j] - mean) * inv;
            const double dxhat = gi[j] * gn->value[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            if (gn->requires_grad) gn->grad[j] += gi[j] * xhat;
            if (bn->requires_grad) bn->grad[j] += gi[j];
          }
          if (xn->requires_grad) {
            const double nn = static_cast<double>(n);
            double* xg = xn->grad.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) {
              const double xhat = (xi[j] - mean) * inv;
              const double dxhat = gi[j] * gn->value[j];
              xg[j] += inv * (dxhat - sum_dxhat / nn - xhat * sum_dxhat_xhat / nn);
            }
          }
        }
      },
      "layer_norm");
}

Tensor gelu(const Tensor& x) {
  auto out = make_node(x.shape());
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  for (std::size_t i = 0; i < out->value.size(); ++i) {
    const double v = x.data()[i];
    out->value[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  auto xn = x.node();
  return finish(
      out, {xn},
      [xn, inv_sqrt2, inv_sqrt2pi](TensorNode& o) {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          const double v = xn->value[i];
          const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
          const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
          xn->grad[i] += o.grad[i] * (cdf + v * pdf);
        }
      },
      "gelu");
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
  check(x.shape().size() == 2, "conv1d: x must be 2-D");
  check(w.shape().size() == 3, "conv1d: w must be (c_out, c_in, k)");
  const std::size_t n = x.rows(), cin = x.cols();
  const std::size_t cout = w.shape()[0], wcin = w.shape()[1], kw = w.shape()[2];
  check(wcin == cin, "conv1d: channel mismatch");
  check(kw % 2 == 1, "conv1d: kernel width must be odd");
  check(b.size() == cout, "conv1d: bias size mismatch");
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kw / 2);
  auto out = make_node({n, cout});
  for (std::size_t i = 0; i < n; ++i) {
    double* oi = out->value.data() + i * cout;
    for (std::size_t co = 0; co < cout; ++co) {
      double s = b.data()[co];
      const double* wco = w.data() + co * cin * kw;
      for (std::ptrdiff_t dk = -half; dk <= half; ++dk) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) + dk;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
        const double* xs = x.data() + src * cin;
        const double* wk = wco + (dk + half);
        for (std::size_t ci = 0; ci < cin; ++ci) s += wk[ci * kw] * xs[ci];
      }
      oi[co] = s;
    }
  }
  auto xn = x.node(), wn = w.node(), bn = b.node();
  return finish(
      out, {xn, wn, bn},
      [xn, wn, bn, n, cin, cout, kw, half](TensorNode& o) {
        for (std::size_t i = 0; i < n; ++i) {
          const double* gi = o.grad.data() + i * cout;
          for (std::size_t co = 0; co < cout; ++co) {
            const double g = gi[co];
            if (g == 0.0) continue;
            if (bn->requires_grad) bn->grad[co] += g;
            for (std::ptrdiff_t dk = -half; dk <= half; ++dk) {
              const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) + dk;
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
              const std::size_t koff = static_cast<std::size_t>(dk + half);
              for (std::size_t ci = 0; ci < cin; ++ci) {
                const std::size_t widx = (co * cin + ci) * kw + koff;
                if (wn->requires_grad)
                  wn->grad[widx] += g * xn->value[src * cin + ci];
                if (xn->requires_grad)
                  xn->grad[src * cin + ci] += g * wn->value[widx];
              }
            }
          }
        }
      },
      "conv1d");
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  check(a.shape().size() == 2 && b.shape().size() == 2, "concat_rows: inputs must be 2-D");
  check(a.cols() == b.cols(), "concat_rows: column mismatch");
  const std::size_t ma = a.rows(), mb = b.rows(), n = a.cols();
  auto out = make_node({ma + mb, n});
  std::copy(a.data(), a.data() + ma * n, out->value.data());
  std::copy(b.data(), b.data() + mb * n, out->value.data() + ma * n);
  auto an = a.node(), bn = b.node();
  return finish(
      out, {an, bn},
      [an, bn, ma, mb, n](TensorNode& o) {
        if (an->requires_grad)
          for (std::size_t i = 0; i < ma * n; ++i) an->grad[i] += o.grad[i];
        if (bn->requires_grad)
          for (std::size_t i = 0; i < mb * n; ++i) bn->grad[i] += o.grad[ma * n + i];
      },
      "concat_rows");
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  check(x.shape().size() == 2, "slice_rows: input must be 2-D");
  check(start + count <= x.rows(), "slice_rows: range out of bounds");
  const std::size_t n = x.cols();
  auto out = make_node({count, n});
  std::copy(x.data() + start * n, x.data() + (start + count) * n, out->value.data());
  auto xn = x.node();
  return finish(
      out, {xn},
      [xn, start, count, n](TensorNode& o) {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < count * n; ++i) xn->grad[start * n + i] += o.grad[i];
      },
      "slice_rows");
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  check(x.shape().size() == 2, "gather_rows: input must be 2-D");
  const std::size_t n = x.cols();
  auto out = make_node({idx.size(), n});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    check(idx[i] < x.rows(), "gather_rows: index out of bounds");
    std::copy(x.data() + idx[i] * n, x.data() + (idx[i] + 1) * n,
              out->value.data() + i * n);
  }
  auto xn = x.node();
  auto indices = std::make_shared<std::vector<std::size_t>>(idx);
  return finish(
      out, {xn},
      [xn, indices, n](TensorNode& o) {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < indices->size(); ++i) {
          const std::size_t r = (*indices)[i];
          for (std::size_t j = 0; j < n; ++j) xn->grad[r * n + j] += o.grad[i * n + j];
        }
      },
      "gather_rows");
}

Tensor add_rows_at(const Tensor& x, const Tensor& y, std::size_t offset) {
  check(x.shape().size() == 2 && y.shape().size() == 2, "add_rows_at: inputs must be 2-D");
  check(x.cols() == y.cols(), "add_rows_at: column mismatch");
  check(offset + y.rows() <= x.rows(), "add_rows_at: rows out of bounds");
  const std::size_t n = x.cols(), my = y.rows();
  auto out = make_node(x.shape());
  out->value = x.values();
  for (std::size_t i = 0; i < my * n; ++i) out->value[offset * n + i] += y.data()[i];
  auto xn = x.node(), yn = y.node();
  return finish(
      out, {xn, yn},
      [xn, yn, offset, my, n](TensorNode& o) {
        if (xn->requires_grad)
          for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
        if (yn->requires_grad)
          for (std::size_t i = 0; i < my * n; ++i) yn->grad[i] += o.grad[offset * n + i];
      },
      "add_rows_at");
}

Tensor rope(const Tensor& x, int heads, std::size_t pos0, double base) {
  check(x.shape().size() == 2, "rope: input must be 2-D");
  const std::size_t m = x.rows(), d = x.cols();
  check(d % static_cast<std::size_t>(heads) == 0, "rope: dim not divisible by heads");
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  check(dh % 2 == 0, "rope: head dim must be even");
  auto out = make_node(x.shape());
  // Precompute per (row, pair) sines/cosines; shared with backward.
  auto trig = std::make_shared<std::vector<double>>(m * dh);  // cos,sin interleaved
  for (std::size_t r = 0; r < m; ++r) {
    const double pos = static_cast<double>(pos0 + r);
    for (std::size_t j = 0; j < dh / 2; ++j) {
      const double theta =
          pos * std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(dh));
      (*trig)[r * dh + 2 * j] = std::cos(theta);
      (*trig)[r * dh + 2 * j + 1] = std::sin(theta);
    }
  }
  for (std::size_t r = 0; r < m; ++r)
    for (int h = 0; h < heads; ++h)
      for (std::size_t j = 0; j < dh / 2; ++j) {
        const double c = (*trig)[r * dh + 2 * j];
        const double s = (*trig)[r * dh + 2 * j + 1];
        const std::size_t i0 = r * d + h * dh + 2 * j;
        const double x0 = x.data()[i0], x1 = x.data()[i0 + 1];
        out->value[i0] = x0 * c - x1 * s;
        out->value[i0 + 1] = x0 * s + x1 * c;
      }
  auto xn = x.node();
  return finish(
      out, {xn},
      [xn, trig, m, d, dh, heads](TensorNode& o) {
        if (!xn->requires_grad) return;
        for (std::size_t r = 0; r < m; ++r)
          for (int h = 0; h < heads; ++h)
            for (std::size_t j = 0; j < dh / 2; ++j) {
              const double c = (*trig)[r * dh + 2 * j];
              const double s = (*trig)[r * dh + 2 * j + 1];
              const std::size_t i0 = r * d + h * dh + 2 * j;
              const double g0 = o.grad[i0], g1 = o.grad[i0 + 1];
              xn->grad[i0] += g0 * c + g1 * s;
              xn->grad[i0 + 1] += -g0 * s + g1 * c;
            }
      },
      "rope");
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                 bool causal) {
  check(q.shape().size() == 2 && k.shape().size() == 2 && v.shape().size() == 2,
        "attention: inputs must be 2-D");
  check(q.cols() == k.cols() && k.cols() == v.cols(), "attention: dim mismatch");
  check(k.rows() == v.rows(), "attention: key/value length mismatch");
  const std::size_t lq = q.rows(), lk = k.rows(), d = q.cols();
  check(d % static_cast<std::size_t>(heads) == 0, "attention: dim not divisible by heads");
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  auto out = make_node({lq, d});
  auto probs = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(heads) * lq * lk);
  const bool par = static_cast<std::size_t>(heads) * lq * lk * dh >= 32768;
#pragma omp parallel for schedule(static) if (par)
  for (int h = 0; h < heads; ++h) {
    const std::size_t hoff = static_cast<std::size_t>(h) * dh;
    double* ph = probs->data() + static_cast<std::size_t>(h) * lq * lk;
    for (std::size_t i = 0; i < lq; ++i) {
      const double* qi = q.data() + i * d + hoff;
      double* pi = ph + i * lk;
      double mx = -1e300;
      for (std::size_t j = 0; j < lk; ++j) {
        if (causal && j > i) {
          pi[j] = -1e300;
          continue;
        }
        const double* kj = k.data() + j * d + hoff;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
        pi[j] = s * sc;
        mx = std::max(mx, pi[j]);
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < lk; ++j) {
        if (causal && j > i) {
          pi[j] = 0.0;
          continue;
        }
        pi[j] = std::exp(pi[j] - mx);
        sum += pi[j];
      }
      double* oi = out->value.data() + i * d + hoff;
      for (std::size_t c = 0; c < dh; ++c) oi[c] = 0.0;
      for (std::size_t j = 0; j < lk; ++j) {
        pi[j] /= sum;
        const double* vj = v.data() + j * d + hoff;
        for (std::size_t c = 0; c < dh; ++c) oi[c] += pi[j] * vj[c];
      }
    }
  }
  auto qn = q.node(), kn = k.node(), vn = v.node();
  return finish(
      out, {qn, kn, vn},
      [qn, kn, vn, probs, heads, lq, lk, d, dh, sc](TensorNode& o) {
        std::vector<double> dp(lk);
        for (int h = 0; h < heads; ++h) {
          const std::size_t hoff = static_cast<std::size_t>(h) * dh;
          const double* ph = probs->data() + static_cast<std::size_t>(h) * lq * lk;
          for (std::size_t i = 0; i < lq; ++i) {
            const double* pi = ph + i * lk;
            const double* gi = o.grad.data() + i * d + hoff;
            // dV += P^T dO ; dP = dO V^T
            double dot = 0.0;
            for (std::size_t j = 0; j < lk; ++j) {
              const double* vj = vn->value.data() + j * d + hoff;
              double s = 0.0;
              for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
              dp[j] = s;
              dot += s * pi[j];
              if (vn->requires_grad) {
                double* vg = vn->grad.data() + j * d + hoff;
                for (std::size_t c = 0; c < dh; ++c) vg[c] += pi[j] * gi[c];
              }
            }
            // dS = P o (dP - dot); dQ += dS K sc ; dK += dS^T Q sc
            const double* qi = qn->value.data() + i * d + hoff;
            double* qg = qn->requires_grad ? qn->grad.data() + i * d + hoff : nullptr;
            for (std::size_t j = 0; j < lk; ++j) {
              const double ds = pi[j] * (dp[j] - dot) * sc;
              if (ds == 0.0) continue;
              const double* kj = kn->value.data() + j * d + hoff;
              if (qg)
                for (std::size_t c = 0; c < dh; ++c) qg[c] += ds * kj[c];
              if (kn->requires_grad) {
                double* kg = kn->grad.data() + j * d + hoff;
                for (std::size_t c = 0; c < dh; ++c) kg[c] += ds * qi[c];
              }
            }
          }
        }
      },
      "attention");
}

Tensor mean_all(const Tensor& x) {
  auto out = make_node({1});
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x.data()[i];
  const double inv = 1.0 / static_cast<double>(x.size());
  out->value[0] = s * inv;
  auto xn = x.node();
  return finish(
      out, {xn},
      [xn, inv](TensorNode& o) {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += o.grad[0] * inv;
      },
      "mean_all");
}

Tensor sum_all(const Tensor& x) {
  auto out = make_node({1});
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x.data()[i];
  out->value[0] = s;
  auto xn = x.node();
  return finish(
      out, {xn},
      [xn](TensorNode& o) {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += o.grad[0];
      },
      "sum_all");
}

}  // namespace drumdiff
