#include "drumdiff/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "drumdiff/common.hpp"

namespace drumdiff {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (params_.count(name)) throw DrumdiffError("param already registered: " + name);
  order_.push_back(name);
  auto [it, ok] = params_.emplace(name, std::move(t));
  it->second.node()->requires_grad = true;
  state_[name].m.assign(it->second.size(), 0.0);
  state_[name].v.assign(it->second.size(), 0.0);
  return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw DrumdiffError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw DrumdiffError("unknown parameter: " + name);
  return it->second;
}

std::size_t ParamStore::total_parameters() const {
  std::size_t n = 0;
  for (auto& [k, t] : params_) n += t.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& name : order_) params_.at(name).zero_grad();
}

void adamw_step(ParamStore& params, const AdamWConfig& cfg) {
  const std::int64_t t = params.step() + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (const auto& name : params.names()) {
    Tensor& p = params.get(name);
    const std::vector<double>& g = p.grad();
    for (double gv : g)
      if (!std::isfinite(gv))
        throw DrumdiffError("non-finite gradient in parameter: " + name);
    auto& st = params.moments(name);
    double* pv = p.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g[i];
      st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      pv[i] *= (1.0 - cfg.lr * cfg.weight_decay);
      pv[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
  params.set_step(t);
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, double h) {
  x.node()->requires_grad = true;
  x.zero_grad();
  Tensor loss = f(x);
  loss.backward();
  std::vector<double> autodiff = x.grad();
  NoGradGuard no_grad;  // central differences only need values
  double worst = 0.0;
  double* xv = x.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = xv[i];
    xv[i] = keep + h;
    const double fp = f(x).item();
    xv[i] = keep - h;
    const double fm = f(x).item();
    xv[i] = keep;
    const double cd = (fp - fm) / (2.0 * h);
    if (!std::isfinite(cd) || !std::isfinite(autodiff[i]))
      throw DrumdiffError("grad_check: non-finite value");
    const double err = std::abs(autodiff[i] - cd) / std::max(1.0, std::abs(cd));
    worst = std::max(worst, err);
  }
  return worst;
}

// ---- tensor container ----

namespace {
constexpr char kMagic[4] = {'D', 'D', 'T', 'F'};

void require_little_endian() {
  const std::uint32_t probe = 1;
  if (*reinterpret_cast<const unsigned char*>(&probe) != 1)
    throw DrumdiffError("tensor file io requires a little-endian host");
}
}  // namespace

void save_tensor_file(
    const std::string& path,
    const std::vector<std::pair<std::string, const std::vector<double>*>>& tensors,
    const std::vector<std::vector<std::size_t>>& shapes, const nlohmann::json& meta) {
  require_little_endian();
  nlohmann::json header;
  header["format"] = "drumdiff-tensors";
  header["version"] = 1;
  header["tensors"] = nlohmann::json::array();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    nlohmann::json e;
    e["name"] = tensors[i].first;
    e["shape"] = shapes[i];
    e["dtype"] = "f64";
    header["tensors"].push_back(e);
  }
  header["meta"] = meta;
  const std::string hs = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DrumdiffError("cannot open for writing: " + path);
  out.write(kMagic, 4);
  const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (auto& [name, vec] : tensors)
    out.write(reinterpret_cast<const char*>(vec->data()),
              static_cast<std::streamsize>(vec->size() * sizeof(double)));
  if (!out) throw DrumdiffError("write failed: " + path);
}

TensorFile load_tensor_file(const std::string& path) {
  require_little_endian();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DrumdiffError("cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw DrumdiffError("not a drumdiff tensor file: " + path);
  std::uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 4);
  std::string hs(hlen, '\0');
  in.read(hs.data(), hlen);
  if (!in) throw DrumdiffError("truncated tensor file header: " + path);
  nlohmann::json header = nlohmann::json::parse(hs);
  if (header.value("version", 0) != 1)
    throw DrumdiffError("unsupported tensor file version in " + path);
  TensorFile tf;
  tf.meta = header.value("meta", nlohmann::json::object());
  for (auto& e : header.at("tensors")) {
    TensorFile::Entry entry;
    entry.name = e.at("name").get<std::string>();
    entry.shape = e.at("shape").get<std::vector<std::size_t>>();
    std::size_t n = 1;
    for (std::size_t d : entry.shape) n *= d;
    entry.data.resize(n);
    in.read(reinterpret_cast<char*>(entry.data.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw DrumdiffError("truncated tensor payload: " + entry.name);
    tf.tensors.push_back(std::move(entry));
  }
  return tf;
}

const TensorFile::Entry* TensorFile::find(const std::string& name) const {
  for (auto& e : tensors)
    if (e.name == name) return &e;
  return nullptr;
}

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const nlohmann::json& meta) {
  std::vector<std::pair<std::string, const std::vector<double>*>> tensors;
  std::vector<std::vector<std::size_t>> shapes;
  auto& mut = const_cast<ParamStore&>(params);
  for (const auto& name : params.names()) {
    const Tensor& p = params.get(name);
    tensors.push_back({"p/" + name, &p.values()});
    shapes.push_back(p.shape());
    auto& st = mut.moments(name);
    tensors.push_back({"m/" + name, &st.m});
    shapes.push_back({st.m.size()});
    tensors.push_back({"v/" + name, &st.v});
    shapes.push_back({st.v.size()});
  }
  nlohmann::json full_meta = meta;
  full_meta["optimizer_step"] = params.step();
  save_tensor_file(path, tensors, shapes, full_meta);
}

nlohmann::json load_checkpoint(const std::string& path, ParamStore& params) {
  TensorFile tf = load_tensor_file(path);
  for (const auto& name : params.names()) {
    const auto* pe = tf.find("p/" + name);
    if (!pe) throw DrumdiffError("checkpoint missing parameter: " + name);
    Tensor& p = params.get(name);
    if (pe->data.size() != p.size())
      throw DrumdiffError("checkpoint shape mismatch for: " + name);
    p.values() = pe->data;
    auto& st = params.moments(name);
    if (const auto* me = tf.find("m/" + name)) st.m = me->data;
    if (const auto* ve = tf.find("v/" + name)) st.v = ve->data;
  }
  params.set_step(tf.meta.value("optimizer_step", 0));
  return tf.meta;
}

// ---- layers ----

Linear Linear::create(ParamStore& ps, const std::string& prefix, std::size_t in,
                      std::size_t out, Rng& rng) {
  Linear l;
  const double std = 1.0 / std::sqrt(static_cast<double>(in));
  l.w = ps.add(prefix + ".w", Tensor::randn({in, out}, rng, std));
  l.b = ps.add(prefix + ".b", Tensor::zeros({out}));
  return l;
}

LayerNormLayer LayerNormLayer::create(ParamStore& ps, const std::string& prefix,
                                      std::size_t dim) {
  LayerNormLayer l;
  l.g = ps.add(prefix + ".g", Tensor::full({dim}, 1.0));
  l.b = ps.add(prefix + ".b", Tensor::zeros({dim}));
  return l;
}

MhaLayer MhaLayer::create(ParamStore& ps, const std::string& prefix, std::size_t dim,
                          int heads, bool rotary, Rng& rng) {
  MhaLayer l;
  l.heads = heads;
  l.rotary = rotary;
  l.wq = Linear::create(ps, prefix + ".q", dim, dim, rng);
  l.wk = Linear::create(ps, prefix + ".k", dim, dim, rng);
  l.wv = Linear::create(ps, prefix + ".v", dim, dim, rng);
  l.wo = Linear::create(ps, prefix + ".o", dim, dim, rng);
  return l;
}

Tensor MhaLayer::operator()(const Tensor& q_in, const Tensor& kv_in, bool causal,
                            std::size_t q_pos0, std::size_t kv_pos0) const {
  Tensor q = wq(q_in);
  Tensor k = wk(kv_in);
  Tensor v = wv(kv_in);
  if (rotary) {
    q = rope(q, heads, q_pos0);
    k = rope(k, heads, kv_pos0);
  }
  return wo(attention(q, k, v, heads, causal));
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const Tensor& wq, const Tensor& wk, const Tensor& wv,
                            const Tensor& wo, int heads, bool causal) {
  return matmul(attention(matmul(q, wq), matmul(k, wk), matmul(v, wv), heads, causal),
                wo);
}

MlpLayer MlpLayer::create(ParamStore& ps, const std::string& prefix, std::size_t dim,
                          std::size_t hidden, Rng& rng) {
  MlpLayer l;
  l.fc1 = Linear::create(ps, prefix + ".fc1", dim, hidden, rng);
  l.fc2 = Linear::create(ps, prefix + ".fc2", hidden, dim, rng);
  return l;
}

TransformerBlock TransformerBlock::create(ParamStore& ps, const std::string& prefix,
                                          std::size_t dim, int heads, std::size_t hidden,
                                          bool rotary, Rng& rng) {
  TransformerBlock b;
  b.ln1 = LayerNormLayer::create(ps, prefix + ".ln1", dim);
  b.ln2 = LayerNormLayer::create(ps, prefix + ".ln2", dim);
  b.attn = MhaLayer::create(ps, prefix + ".attn", dim, heads, rotary, rng);
  b.mlp = MlpLayer::create(ps, prefix + ".mlp", dim, hidden, rng);
  return b;
}

Tensor TransformerBlock::self(const Tensor& x, std::size_t pos0) const {
  Tensor n = ln1(x);
  Tensor h = add(x, attn(n, n, false, pos0, pos0));
  return add(h, mlp(ln2(h)));
}

Tensor TransformerBlock::cross(const Tensor& x, const Tensor& kv) const {
  Tensor h = add(x, attn(ln1(x), kv));
  return add(h, mlp(ln2(h)));
}

Tensor sinusoidal_features(double x, std::size_t dim) {
  if (dim % 2 != 0) throw DrumdiffError("sinusoidal_features: dim must be even");
  const std::size_t half = dim / 2;
  std::vector<double> f(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq =
        half > 1 ? std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half - 1))
                 : 1.0;
    f[i] = std::sin(x * freq);
    f[half + i] = std::cos(x * freq);
  }
  return Tensor::from({1, dim}, std::move(f));
}

}  // namespace drumdiff
