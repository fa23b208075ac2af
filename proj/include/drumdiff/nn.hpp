#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "drumdiff/tensor.hpp"

namespace drumdiff {

// Named parameter tensors plus per-parameter AdamW state. Iteration order is
// creation order, which is deterministic for a fixed model layout.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) != 0; }
  const std::vector<std::string>& names() const { return order_; }
  std::size_t total_parameters() const;

  void zero_grad();
  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }

  struct Moments {
    std::vector<double> m, v;
  };
  Moments& moments(const std::string& name) { return state_[name]; }

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor> params_;
  std::map<std::string, Moments> state_;
  std::int64_t step_ = 0;
};

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// One decoupled-weight-decay Adam step over every parameter in the store.
// Throws naming the parameter if its gradient is non-finite.
void adamw_step(ParamStore& params, const AdamWConfig& cfg);

// Max over coordinates of |autodiff - central difference| / max(1, |cd|).
// f must build a scalar from x with gradients enabled.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                  double h = 1e-5);

// ---- tensor container file ----
// Layout: magic "DDTF", uint32 LE header length, UTF-8 JSON header, then the
// tensors' raw float64 little-endian data back to back in header order.
// Header: {"format":"drumdiff-tensors","version":1,
//          "tensors":[{"name":...,"shape":[...],"dtype":"f64"},...],
//          "meta":{...}}
void save_tensor_file(const std::string& path,
                      const std::vector<std::pair<std::string, const std::vector<double>*>>& tensors,
                      const std::vector<std::vector<std::size_t>>& shapes,
                      const nlohmann::json& meta);

struct TensorFile {
  struct Entry {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> data;
  };
  std::vector<Entry> tensors;
  nlohmann::json meta;
  const Entry* find(const std::string& name) const;
};
TensorFile load_tensor_file(const std::string& path);

// Checkpoint = params ("p/<name>") + optimizer moments ("m/", "v/") + meta.
void save_checkpoint(const std::string& path, const ParamStore& params,
                     const nlohmann::json& meta);
nlohmann::json load_checkpoint(const std::string& path, ParamStore& params);

// ---- layers ----

struct Linear {
  Tensor w, b;
  static Linear create(ParamStore& ps, const std::string& prefix, std::size_t in,
                       std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const { return add_rowvec(matmul(x, w), b); }
};

struct LayerNormLayer {
  Tensor g, b;
  static LayerNormLayer create(ParamStore& ps, const std::string& prefix, std::size_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, g, b); }
};

// Multi-head attention with Q/K/V/out projections. With rotary enabled the
// rotation is applied to projected q and k using their row positions.
struct MhaLayer {
  Linear wq, wk, wv, wo;
  int heads = 1;
  bool rotary = false;
  static MhaLayer create(ParamStore& ps, const std::string& prefix, std::size_t dim,
                         int heads, bool rotary, Rng& rng);
  Tensor operator()(const Tensor& q_in, const Tensor& kv_in, bool causal = false,
                    std::size_t q_pos0 = 0, std::size_t kv_pos0 = 0) const;
};

// Free-function form used by tests and the spec-level contract: projections
// passed explicitly (identity projections reproduce plain attention).
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const Tensor& wq, const Tensor& wk, const Tensor& wv,
                            const Tensor& wo, int heads, bool causal = false);

struct MlpLayer {
  Linear fc1, fc2;
  static MlpLayer create(ParamStore& ps, const std::string& prefix, std::size_t dim,
                         std::size_t hidden, Rng& rng);
  Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
};

// Pre-LN transformer block; self-attention when kv==x, cross otherwise.
struct TransformerBlock {
  LayerNormLayer ln1, ln2;
  MhaLayer attn;
  MlpLayer mlp;
  static TransformerBlock create(ParamStore& ps, const std::string& prefix,
                                 std::size_t dim, int heads, std::size_t hidden,
                                 bool rotary, Rng& rng);
  Tensor self(const Tensor& x, std::size_t pos0 = 0) const;
  Tensor cross(const Tensor& x, const Tensor& kv) const;
};

// Sinusoidal feature row (1 x dim): half sines, half cosines, log-spaced
// frequencies from 1 down to 1/10000.
Tensor sinusoidal_features(double x, std::size_t dim);

}  // namespace drumdiff
