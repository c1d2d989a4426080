// End-to-end model assembly.
//
// Per window: temporal attention over timepoints and spatial attention over
// regions read the same raw window; the head-averaged spatial scores become
// the sparsified dynamic adjacency; fused node features run through the
// shared GCN; each window pools to one token; the token sequence runs
// through the transformer encoder, pools, and hits the MLP head for two
// class logits. Deterministic given parameters and input.
#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dgnc/attention.hpp"
#include "dgnc/common.hpp"
#include "dgnc/config.hpp"
#include "dgnc/data.hpp"
#include "dgnc/dyngraph.hpp"
#include "dgnc/encoder.hpp"
#include "dgnc/tensor.hpp"

namespace dgnc {

template <typename Real>
struct MlpHead {
  Tensor<Real> w1, b1, w2, b2;  // d_model -> hidden (ReLU) -> 2 logits

  static MlpHead init(std::size_t d_model, std::size_t hidden, Rng& rng) {
    MlpHead m;
    auto xavier = [&rng](std::size_t in, std::size_t out) {
      const double a = std::sqrt(6.0 / static_cast<double>(in + out));
      std::vector<Real> v(in * out);
      for (auto& x : v) x = static_cast<Real>(rng.uniform(-a, a));
      return Tensor<Real>::from_data({in, out}, std::move(v), true);
    };
    m.w1 = xavier(d_model, hidden);
    m.b1 = Tensor<Real>::zeros({hidden}, true);
    m.w2 = xavier(hidden, 2);
    m.b2 = Tensor<Real>::zeros({2}, true);
    return m;
  }

  Tensor<Real> forward(const Tensor<Real>& x) const {
    auto hidden = relu(add_rowvec(matmul(x, w1), b1));
    return add_rowvec(matmul(hidden, w2), b2);
  }

  std::vector<std::pair<std::string, Tensor<Real>>> named(const std::string& prefix) const {
    return {{prefix + ".w1", w1}, {prefix + ".b1", b1}, {prefix + ".w2", w2}, {prefix + ".b2", b2}};
  }
};

// Fixed per-group seed streams: initialization is reproducible regardless of
// construction order.
namespace seed_stream {
constexpr std::uint64_t temporal_attention = 1;
constexpr std::uint64_t spatial_attention = 2;
constexpr std::uint64_t gcn = 3;
constexpr std::uint64_t pool = 4;
constexpr std::uint64_t encoder = 5;
constexpr std::uint64_t mlp = 6;
}  // namespace seed_stream

template <typename Real>
struct ModelParams {
  AttentionParams<Real> temporal;  // tokens = P timepoints, input_dim = V
  AttentionParams<Real> spatial;   // tokens = V regions,    input_dim = P
  GcnParams<Real> gcn;
  PoolParams<Real> pool;
  EncoderParams<Real> encoder;
  MlpHead<Real> mlp;
  std::size_t regions = 0;

  static ModelParams init(const Config& cfg, std::size_t regions) {
    cfg.validate();
    if (cfg.effective_sparsity(regions) > regions) {
      throw ConfigError("model: sparsity_k exceeds region count " + std::to_string(regions));
    }
    ModelParams p;
    p.regions = regions;
    Rng r_t = Rng::stream(cfg.seed, seed_stream::temporal_attention);
    p.temporal = AttentionParams<Real>::init(regions, cfg.d_model, cfg.heads, r_t);
    Rng r_s = Rng::stream(cfg.seed, seed_stream::spatial_attention);
    p.spatial = AttentionParams<Real>::init(cfg.window_size, cfg.d_model, cfg.heads, r_s);
    Rng r_g = Rng::stream(cfg.seed, seed_stream::gcn);
    p.gcn = GcnParams<Real>::init(cfg.d_model, cfg.d_gcn, cfg.gcn_depth, r_g);
    Rng r_p = Rng::stream(cfg.seed, seed_stream::pool);
    p.pool = PoolParams<Real>::init(cfg.d_gcn, cfg.d_model, r_p);
    Rng r_e = Rng::stream(cfg.seed, seed_stream::encoder);
    p.encoder = EncoderParams<Real>::init(cfg.encoder_config(), r_e);
    Rng r_m = Rng::stream(cfg.seed, seed_stream::mlp);
    p.mlp = MlpHead<Real>::init(cfg.d_model, cfg.mlp_hidden, r_m);
    return p;
  }

  // Fixed-order registry used by the optimizer, checkpoints, and grad checks.
  std::vector<std::pair<std::string, Tensor<Real>>> named() const {
    std::vector<std::pair<std::string, Tensor<Real>>> out;
    for (auto& kv : temporal.named("temporal_attn")) out.push_back(kv);
    for (auto& kv : spatial.named("spatial_attn")) out.push_back(kv);
    for (auto& kv : gcn.named("gcn")) out.push_back(kv);
    for (auto& kv : pool.named("pool")) out.push_back(kv);
    for (auto& kv : encoder.named("encoder")) out.push_back(kv);
    for (auto& kv : mlp.named("mlp")) out.push_back(kv);
    return out;
  }

  void zero_grad() const {
    for (auto& [name, t] : named()) t.node()->grad.assign(t.numel(), Real(0));
  }
};

// Normalizes and windows one subject's series: the model-facing input.
template <typename Real>
WindowSet<Real> prepare_signal(const BoldSignal<Real>& signal, const Config& cfg) {
  return window(zscore_normalize(signal), cfg.window_size);
}

// Forward over prepared windows. Returns the 1x2 logit row.
template <typename Real>
Tensor<Real> forward_windows(const WindowSet<Real>& ws, const ModelParams<Real>& params,
                             const Config& cfg) {
  if (ws.windows.empty()) {
    throw ContractError("forward_windows: empty window set");
  }
  const std::size_t v = ws.windows[0].cols();
  const std::size_t k = cfg.effective_sparsity(v);
  std::vector<Tensor<Real>> tokens;
  for (const auto& win : ws.windows) {
    auto temp = temporal_attention(win, params.temporal);
    auto spat = spatial_attention(win, params.spatial);
    auto adjacency = sparsify(build_adjacency(mean_scores(spat)), k);
    auto fused = fuse_node_features(spat.features, temp.features);
    auto h = gcn_stack(fused, adjacency, params.gcn);
    tokens.push_back(pool_nodes(h, params.pool));
  }
  auto seq = concat(tokens, 0);
  auto encoded = encoder_forward(seq, cfg.encoder_config(), params.encoder);
  return params.mlp.forward(pool_sequence(encoded));
}

// Full pipeline on a raw signal: z-score, window, forward.
template <typename Real>
Tensor<Real> model_forward(const BoldSignal<Real>& signal, const ModelParams<Real>& params,
                           const Config& cfg) {
  return forward_windows(prepare_signal(signal, cfg), params, cfg);
}

}  // namespace dgnc
