#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "combo/tensor.hpp"

namespace combo::nn {

enum class Act : int { silu = 0, tanh_act = 1, relu = 2 };

struct LayerSpec {
  enum class Kind : int { dense = 0, act = 1, film = 2 };
  Kind kind = Kind::dense;
  int in = 0;
  int out = 0;
  Act act = Act::silu;
};

/// Architecture descriptor. A network is a layer sequence over the main
/// input; when cond_dim > 0 a conditioning vector is embedded once by a
/// dense+activation encoder and every film layer applies a feature-wise
/// scale-shift computed from that embedding.
struct NetworkSpec {
  int input_dim = 0;
  int cond_dim = 0;
  int cond_embed_dim = 0;
  Act cond_act = Act::silu;
  /// Residual tap: adds skip_scale[d] * x[:, d] to output dim d. Lets a
  /// narrow trunk carry the identity component of a denoiser.
  bool input_skip = false;
  /// One conditioning row serves this many consecutive input rows; the
  /// cell-shared denoiser sets it to the cell count so scale/shift vectors
  /// are computed once per sample.
  int cond_group = 1;
  std::vector<LayerSpec> layers;

  int output_dim() const;
  void validate() const;

  static NetworkSpec mlp(int in, const std::vector<int>& hidden, int out, Act act = Act::silu);
  static NetworkSpec conditioned_mlp(int in, int cond, int cond_embed,
                                     const std::vector<int>& hidden, int out,
                                     Act act = Act::silu);
};

struct DenseParams {
  Tensor W;  // [in x out]
  Tensor b;  // [1 x out]
};

/// Per-call scratch: cached activations for backward plus gradient buffers
/// in canonical parameter order. Forward passes on a shared const Network
/// are safe as long as each thread owns its Workspace.
struct Workspace {
  std::vector<Tensor> cache;
  Tensor cond_in, cond_pre, cond_embed, dcond_embed;
  std::vector<Tensor> grads;
  Tensor skip_in;
  bool ran_forward = false;
};

class Network {
 public:
  Network() = default;
  Network(NetworkSpec spec, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  int input_dim() const { return spec_.input_dim; }
  int output_dim() const { return spec_.output_dim(); }

  Tensor forward(const Tensor& x, const Tensor& cond, Workspace& ws) const;
  Tensor forward(const Tensor& x, Workspace& ws) const;

  /// Reverse-mode pass; accumulates parameter gradients into ws.grads and
  /// returns the gradient with respect to the main input.
  Tensor backward(const Tensor& output_grad, Workspace& ws) const;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  size_t n_params() const;
  void init_grads(Workspace& ws) const;

  void save(const std::string& path) const;
  static Network load(const std::string& path);
  std::vector<std::uint8_t> serialize() const;
  static Network deserialize(const std::vector<std::uint8_t>& bytes);

 private:
  NetworkSpec spec_;
  std::optional<DenseParams> cond_enc_;
  std::optional<Tensor> skip_scale_;  // [1 x output_dim] when input_skip
  std::vector<DenseParams> dense_;    // one entry per dense/film layer, in order
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m, v;
  long step = 0;
  void init(const std::vector<Tensor*>& params);
};

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, const AdamConfig& cfg);

/// loss(net, grads_out): returns the scalar loss; when grads_out != nullptr
/// it must also fill analytic parameter gradients in canonical order.
using LossFn = std::function<double(Network&, std::vector<Tensor>*)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  size_t n_checked = 0;
  int worst_param = -1;
  size_t worst_index = 0;
  bool pass = false;
};

/// Central finite differences (step 1e-5) against analytic gradients for
/// every parameter; relative error |a-f| / max(|a|, |f|, 1).
GradCheckReport grad_check(Network& net, const LossFn& loss, double tolerance);

/// Sinusoidal embedding of integer diffusion steps, rows parallel to `t`.
Tensor time_embedding(const std::vector<int>& t, int dim);

double activate(double x, Act act);
double activate_grad(double x, Act act);

}  // namespace combo::nn
