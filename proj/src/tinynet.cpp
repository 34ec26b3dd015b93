#include "combo/tinynet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace combo::nn {

using nlohmann::json;

double activate(double x, Act act) {
  switch (act) {
    case Act::silu: return x / (1.0 + std::exp(-x));
    case Act::tanh_act: return std::tanh(x);
    case Act::relu: return x > 0.0 ? x : 0.0;
  }
  return x;
}

double activate_grad(double x, Act act) {
  switch (act) {
    case Act::silu: {
      double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 + x * (1.0 - s));
    }
    case Act::tanh_act: {
      double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Act::relu: return x > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

int NetworkSpec::output_dim() const {
  int dim = input_dim;
  for (const auto& l : layers)
    if (l.kind == LayerSpec::Kind::dense) dim = l.out;
  return dim;
}

void NetworkSpec::validate() const {
  if (input_dim <= 0) throw std::invalid_argument("network: input_dim must be positive");
  if ((cond_dim > 0) != (cond_embed_dim > 0))
    throw std::invalid_argument("network: cond_dim and cond_embed_dim must be set together");
  int dim = input_dim;
  for (size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    std::string where = "layer " + std::to_string(i);
    switch (l.kind) {
      case LayerSpec::Kind::dense:
        if (l.in != dim) throw std::invalid_argument(where + ": dense input mismatch");
        if (l.out <= 0) throw std::invalid_argument(where + ": dense output must be positive");
        dim = l.out;
        break;
      case LayerSpec::Kind::act:
        break;
      case LayerSpec::Kind::film:
        if (cond_dim <= 0) throw std::invalid_argument(where + ": film needs a condition input");
        if (l.out != dim) throw std::invalid_argument(where + ": film width mismatch");
        break;
    }
  }
}

NetworkSpec NetworkSpec::mlp(int in, const std::vector<int>& hidden, int out, Act act) {
  NetworkSpec spec;
  spec.input_dim = in;
  int dim = in;
  for (int h : hidden) {
    spec.layers.push_back({LayerSpec::Kind::dense, dim, h, act});
    spec.layers.push_back({LayerSpec::Kind::act, 0, 0, act});
    dim = h;
  }
  spec.layers.push_back({LayerSpec::Kind::dense, dim, out, act});
  spec.validate();
  return spec;
}

NetworkSpec NetworkSpec::conditioned_mlp(int in, int cond, int cond_embed,
                                         const std::vector<int>& hidden, int out, Act act) {
  NetworkSpec spec;
  spec.input_dim = in;
  spec.cond_dim = cond;
  spec.cond_embed_dim = cond_embed;
  spec.cond_act = act;
  int dim = in;
  for (int h : hidden) {
    spec.layers.push_back({LayerSpec::Kind::dense, dim, h, act});
    spec.layers.push_back({LayerSpec::Kind::film, cond_embed, h, act});
    spec.layers.push_back({LayerSpec::Kind::act, 0, 0, act});
    dim = h;
  }
  spec.layers.push_back({LayerSpec::Kind::dense, dim, out, act});
  spec.validate();
  return spec;
}

namespace {

DenseParams make_dense(int in, int out, std::mt19937_64& rng) {
  DenseParams d;
  d.W = Tensor(in, out);
  d.b = Tensor(1, out);
  fill_gaussian(d.W, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  return d;
}

}  // namespace

Network::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  std::mt19937_64 rng(seed);
  if (spec_.cond_dim > 0) cond_enc_ = make_dense(spec_.cond_dim, spec_.cond_embed_dim, rng);
  if (spec_.input_skip) {
    if (spec_.output_dim() > spec_.input_dim)
      throw std::invalid_argument("network: input_skip needs output_dim <= input_dim");
    skip_scale_ = Tensor(1, spec_.output_dim());
    skip_scale_->fill(1.0);
  }
  for (const auto& l : spec_.layers) {
    if (l.kind == LayerSpec::Kind::dense)
      dense_.push_back(make_dense(l.in, l.out, rng));
    else if (l.kind == LayerSpec::Kind::film)
      dense_.push_back(make_dense(spec_.cond_embed_dim, 2 * l.out, rng));
  }
}

std::vector<Tensor*> Network::parameters() {
  std::vector<Tensor*> out;
  if (cond_enc_) {
    out.push_back(&cond_enc_->W);
    out.push_back(&cond_enc_->b);
  }
  if (skip_scale_) out.push_back(&*skip_scale_);
  for (auto& d : dense_) {
    out.push_back(&d.W);
    out.push_back(&d.b);
  }
  return out;
}

std::vector<const Tensor*> Network::parameters() const {
  std::vector<const Tensor*> out;
  if (cond_enc_) {
    out.push_back(&cond_enc_->W);
    out.push_back(&cond_enc_->b);
  }
  if (skip_scale_) out.push_back(&*skip_scale_);
  for (const auto& d : dense_) {
    out.push_back(&d.W);
    out.push_back(&d.b);
  }
  return out;
}

size_t Network::n_params() const {
  size_t n = 0;
  for (const Tensor* t : parameters()) n += t->size();
  return n;
}

void Network::init_grads(Workspace& ws) const {
  auto params = parameters();
  ws.grads.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    if (ws.grads[i].shape != params[i]->shape) ws.grads[i] = Tensor(params[i]->shape);
    else ws.grads[i].fill(0.0);
  }
}

Tensor Network::forward(const Tensor& x, Workspace& ws) const {
  return forward(x, Tensor(), ws);
}

Tensor Network::forward(const Tensor& x, const Tensor& cond, Workspace& ws) const {
  if (x.cols() != spec_.input_dim)
    throw std::invalid_argument("network forward: input dim " + std::to_string(x.cols()) +
                                " != expected " + std::to_string(spec_.input_dim));
  ws.cache.clear();
  ws.ran_forward = true;
  if (cond_enc_) {
    if (cond.cols() != spec_.cond_dim)
      throw std::invalid_argument("network forward: condition dim mismatch");
    if (cond.rows() * std::max(1, spec_.cond_group) != x.rows())
      throw std::invalid_argument("network forward: condition row grouping mismatch");
    ws.cond_in = cond;
    ws.cond_pre = matmul(cond, cond_enc_->W);
    for (int r = 0; r < ws.cond_pre.rows(); ++r)
      for (int c = 0; c < ws.cond_pre.cols(); ++c) ws.cond_pre.at(r, c) += cond_enc_->b.at(0, c);
    ws.cond_embed = ws.cond_pre;
    for (double& v : ws.cond_embed.v) v = activate(v, spec_.cond_act);
    ws.dcond_embed = Tensor(ws.cond_embed.rows(), ws.cond_embed.cols());
  }
  if (skip_scale_) ws.skip_in = x;
  Tensor h = x;
  size_t dense_idx = 0;
  for (const auto& l : spec_.layers) {
    ws.cache.push_back(h);
    switch (l.kind) {
      case LayerSpec::Kind::dense: {
        const DenseParams& d = dense_[dense_idx++];
        Tensor y = matmul(h, d.W);
        for (int r = 0; r < y.rows(); ++r)
          for (int c = 0; c < y.cols(); ++c) y.at(r, c) += d.b.at(0, c);
        h = std::move(y);
        break;
      }
      case LayerSpec::Kind::act: {
        for (double& v : h.v) v = activate(v, l.act);
        break;
      }
      case LayerSpec::Kind::film: {
        const DenseParams& d = dense_[dense_idx++];
        Tensor st = matmul(ws.cond_embed, d.W);
        for (int r = 0; r < st.rows(); ++r)
          for (int c = 0; c < st.cols(); ++c) st.at(r, c) += d.b.at(0, c);
        int w = l.out;
        int group = std::max(1, spec_.cond_group);
        Tensor y(h.rows(), w);
        for (int r = 0; r < h.rows(); ++r) {
          const double* srow = st.row(r / group);
          for (int c = 0; c < w; ++c)
            y.at(r, c) = h.at(r, c) * (1.0 + srow[c]) + srow[w + c];
        }
        ws.cache.push_back(st);  // film scale/shift cached behind the input
        h = std::move(y);
        break;
      }
    }
  }
  if (skip_scale_) {
    for (int r = 0; r < h.rows(); ++r)
      for (int c = 0; c < h.cols(); ++c) h.at(r, c) += skip_scale_->at(0, c) * x.at(r, c);
  }
  return h;
}

Tensor Network::backward(const Tensor& output_grad, Workspace& ws) const {
  if (!ws.ran_forward) throw std::runtime_error("backward called before forward");
  if (ws.grads.empty()) init_grads(ws);
  auto add_bias_grad = [](Tensor& gb, const Tensor& dy) {
    for (int r = 0; r < dy.rows(); ++r)
      for (int c = 0; c < dy.cols(); ++c) gb.at(0, c) += dy.at(r, c);
  };

  size_t grad_base = (cond_enc_ ? 2 : 0) + (skip_scale_ ? 1 : 0);
  // Map dense storage index -> grad slot.
  Tensor dy = output_grad;
  Tensor skip_dx;
  if (skip_scale_) {
    size_t slot = cond_enc_ ? 2 : 0;
    Tensor& gs = ws.grads[slot];
    skip_dx = Tensor(dy.rows(), spec_.input_dim);
    for (int r = 0; r < dy.rows(); ++r)
      for (int c = 0; c < dy.cols(); ++c) {
        gs.at(0, c) += dy.at(r, c) * ws.skip_in.at(r, c);
        skip_dx.at(r, c) = dy.at(r, c) * skip_scale_->at(0, c);
      }
  }
  int dense_idx = static_cast<int>(dense_.size());
  size_t cache_idx = ws.cache.size();
  if (cond_enc_) ws.dcond_embed.fill(0.0);

  for (int li = static_cast<int>(spec_.layers.size()) - 1; li >= 0; --li) {
    const auto& l = spec_.layers[li];
    switch (l.kind) {
      case LayerSpec::Kind::dense: {
        --dense_idx;
        const Tensor& x_in = ws.cache[--cache_idx];
        const DenseParams& d = dense_[dense_idx];
        Tensor gW = matmul_transpose_a(x_in, dy);
        Tensor& gw_slot = ws.grads[grad_base + 2 * dense_idx];
        for (size_t i = 0; i < gW.v.size(); ++i) gw_slot.v[i] += gW.v[i];
        add_bias_grad(ws.grads[grad_base + 2 * dense_idx + 1], dy);
        dy = matmul_transpose_b(dy, d.W);
        break;
      }
      case LayerSpec::Kind::act: {
        const Tensor& pre = ws.cache[--cache_idx];
        for (size_t i = 0; i < dy.v.size(); ++i) dy.v[i] *= activate_grad(pre.v[i], l.act);
        break;
      }
      case LayerSpec::Kind::film: {
        --dense_idx;
        const Tensor& st = ws.cache[--cache_idx];
        const Tensor& x_in = ws.cache[--cache_idx];
        const DenseParams& d = dense_[dense_idx];
        int w = l.out;
        int group = std::max(1, spec_.cond_group);
        Tensor dst(st.rows(), 2 * w);
        Tensor dx(dy.rows(), w);
        for (int r = 0; r < dy.rows(); ++r) {
          const double* srow = st.row(r / group);
          double* drow = dst.row(r / group);
          for (int c = 0; c < w; ++c) {
            double g = dy.at(r, c);
            dx.at(r, c) = g * (1.0 + srow[c]);
            drow[c] += g * x_in.at(r, c);
            drow[w + c] += g;
          }
        }
        Tensor gW = matmul_transpose_a(ws.cond_embed, dst);
        Tensor& gw_slot = ws.grads[grad_base + 2 * dense_idx];
        for (size_t i = 0; i < gW.v.size(); ++i) gw_slot.v[i] += gW.v[i];
        add_bias_grad(ws.grads[grad_base + 2 * dense_idx + 1], dst);
        Tensor dce = matmul_transpose_b(dst, d.W);
        for (size_t i = 0; i < dce.v.size(); ++i) ws.dcond_embed.v[i] += dce.v[i];
        dy = std::move(dx);
        break;
      }
    }
  }

  if (cond_enc_) {
    Tensor dpre = ws.dcond_embed;
    for (size_t i = 0; i < dpre.v.size(); ++i)
      dpre.v[i] *= activate_grad(ws.cond_pre.v[i], spec_.cond_act);
    Tensor gW = matmul_transpose_a(ws.cond_in, dpre);
    for (size_t i = 0; i < gW.v.size(); ++i) ws.grads[0].v[i] += gW.v[i];
    add_bias_grad(ws.grads[1], dpre);
  }
  if (skip_scale_)
    for (size_t i = 0; i < dy.v.size(); ++i) dy.v[i] += skip_dx.v[i];
  return dy;
}

void AdamState::init(const std::vector<Tensor*>& params) {
  m.clear();
  v.clear();
  for (const Tensor* p : params) {
    m.emplace_back(p->shape);
    v.emplace_back(p->shape);
  }
  step = 0;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, const AdamConfig& cfg) {
  if (state.m.size() != params.size()) {
    std::vector<Tensor*> mutable_params = params;
    state.init(mutable_params);
  }
  state.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (!p.same_shape(g)) throw std::invalid_argument("adam_step: grad shape mismatch");
    for (size_t k = 0; k < p.v.size(); ++k) {
      double gv = g.v[k];
      if (!std::isfinite(gv))
        throw std::runtime_error("adam_step: non-finite gradient at step " +
                                 std::to_string(state.step));
      state.m[i].v[k] = cfg.beta1 * state.m[i].v[k] + (1.0 - cfg.beta1) * gv;
      state.v[i].v[k] = cfg.beta2 * state.v[i].v[k] + (1.0 - cfg.beta2) * gv * gv;
      double mhat = state.m[i].v[k] / bc1;
      double vhat = state.v[i].v[k] / bc2;
      p.v[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

GradCheckReport grad_check(Network& net, const LossFn& loss, double tolerance) {
  GradCheckReport report;
  std::vector<Tensor> analytic;
  loss(net, &analytic);
  auto params = net.parameters();
  if (analytic.size() != params.size())
    throw std::invalid_argument("grad_check: loss returned wrong gradient count");
  const double h = 1e-5;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    for (size_t k = 0; k < p.v.size(); ++k) {
      double saved = p.v[k];
      p.v[k] = saved + h;
      double up = loss(net, nullptr);
      p.v[k] = saved - h;
      double down = loss(net, nullptr);
      p.v[k] = saved;
      double fd = (up - down) / (2.0 * h);
      double an = analytic[pi].v[k];
      double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1.0});
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = static_cast<int>(pi);
        report.worst_index = k;
      }
      report.n_checked += 1;
    }
  }
  report.pass = report.max_rel_error < tolerance;
  return report;
}

Tensor time_embedding(const std::vector<int>& t, int dim) {
  if (dim % 2 != 0) throw std::invalid_argument("time_embedding: dim must be even");
  Tensor out(static_cast<int>(t.size()), dim);
  int half = dim / 2;
  for (size_t r = 0; r < t.size(); ++r) {
    for (int k = 0; k < half; ++k) {
      double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / half);
      out.at(static_cast<int>(r), 2 * k) = std::sin(t[r] * freq);
      out.at(static_cast<int>(r), 2 * k + 1) = std::cos(t[r] * freq);
    }
  }
  return out;
}

// --- serialization ---------------------------------------------------------

namespace {

json spec_to_json(const NetworkSpec& spec) {
  json layers = json::array();
  for (const auto& l : spec.layers)
    layers.push_back({{"kind", static_cast<int>(l.kind)},
                      {"in", l.in},
                      {"out", l.out},
                      {"act", static_cast<int>(l.act)}});
  return json{{"input_dim", spec.input_dim},
              {"cond_dim", spec.cond_dim},
              {"cond_embed_dim", spec.cond_embed_dim},
              {"cond_act", static_cast<int>(spec.cond_act)},
              {"input_skip", spec.input_skip},
              {"cond_group", spec.cond_group},
              {"layers", layers}};
}

NetworkSpec spec_from_json(const json& j) {
  NetworkSpec spec;
  spec.input_dim = j.at("input_dim").get<int>();
  spec.cond_dim = j.at("cond_dim").get<int>();
  spec.cond_embed_dim = j.at("cond_embed_dim").get<int>();
  spec.cond_act = static_cast<Act>(j.at("cond_act").get<int>());
  spec.input_skip = j.value("input_skip", false);
  spec.cond_group = j.value("cond_group", 1);
  for (const auto& lj : j.at("layers")) {
    LayerSpec l;
    l.kind = static_cast<LayerSpec::Kind>(lj.at("kind").get<int>());
    l.in = lj.at("in").get<int>();
    l.out = lj.at("out").get<int>();
    l.act = static_cast<Act>(lj.at("act").get<int>());
    spec.layers.push_back(l);
  }
  return spec;
}

constexpr char kMagic[4] = {'T', 'N', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::vector<std::uint8_t> Network::serialize() const {
  std::string desc = spec_to_json(spec_).dump();
  std::vector<std::uint8_t> out;
  auto push_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  };
  out.insert(out.end(), kMagic, kMagic + 4);
  push_u32(kVersion);
  push_u32(static_cast<std::uint32_t>(desc.size()));
  out.insert(out.end(), desc.begin(), desc.end());
  for (const Tensor* p : parameters()) {
    size_t off = out.size();
    out.resize(off + p->v.size() * sizeof(double));
    std::memcpy(out.data() + off, p->v.data(), p->v.size() * sizeof(double));
  }
  return out;
}

Network Network::deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  auto read_u32 = [&](size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[off + i]) << (8 * i);
    return v;
  };
  std::uint32_t version = read_u32(4);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: version mismatch (" + std::to_string(version) + ")");
  std::uint32_t desc_len = read_u32(8);
  if (bytes.size() < 12 + desc_len) throw std::runtime_error("checkpoint: truncated descriptor");
  std::string desc(bytes.begin() + 12, bytes.begin() + 12 + desc_len);
  Network net(spec_from_json(json::parse(desc)), 0);
  size_t off = 12 + desc_len;
  for (Tensor* p : net.parameters()) {
    size_t need = p->v.size() * sizeof(double);
    if (bytes.size() < off + need) throw std::runtime_error("checkpoint: truncated parameters");
    std::memcpy(p->v.data(), bytes.data() + off, need);
    off += need;
  }
  if (off != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes");
  return net;
}

void Network::save(const std::string& path) const {
  auto bytes = serialize();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

Network Network::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace combo::nn
