// Window-token sequence encoder.
//
// Each window's node embeddings are mean-pooled and projected to one
// d_model token; the token sequence (one per window, temporal order) runs
// through pre-norm transformer blocks (self-attention + 2-layer ReLU
// feed-forward, both residual), with sinusoidal positional encodings added
// once before layer 1 when enabled; a final mean over tokens yields the
// sequence representation. No CLS token, no masking.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dgnc/attention.hpp"
#include "dgnc/common.hpp"
#include "dgnc/tensor.hpp"

namespace dgnc {

struct EncoderConfig {
  std::size_t num_layers = 5;
  std::size_t num_heads = 4;
  std::size_t d_model = 64;
  std::size_t d_ff = 256;  // feed-forward width, conventionally 4*d_model
  bool sinusoidal = true;

  void validate() const {
    if (num_layers == 0 || num_heads == 0 || d_model == 0 || d_ff == 0) {
      throw ConfigError("encoder: layer/head/width settings must be positive");
    }
    if (d_model % num_heads != 0) {
      throw ConfigError("encoder: d_model " + std::to_string(d_model) +
                        " not divisible by num_heads " + std::to_string(num_heads));
    }
  }
};

// Mean over node rows followed by a learned projection to d_model.
template <typename Real>
struct PoolParams {
  Tensor<Real> weight;  // d_gcn x d_model
  Tensor<Real> bias;    // 1 x d_model

  static PoolParams init(std::size_t d_gcn, std::size_t d_model, Rng& rng) {
    PoolParams p;
    const double a = std::sqrt(6.0 / static_cast<double>(d_gcn + d_model));
    std::vector<Real> v(d_gcn * d_model);
    for (auto& x : v) x = static_cast<Real>(rng.uniform(-a, a));
    p.weight = Tensor<Real>::from_data({d_gcn, d_model}, std::move(v), true);
    p.bias = Tensor<Real>::zeros({1, d_model}, true);
    return p;
  }

  std::vector<std::pair<std::string, Tensor<Real>>> named(const std::string& prefix) const {
    return {{prefix + ".weight", weight}, {prefix + ".bias", bias}};
  }
};

template <typename Real>
Tensor<Real> pool_nodes(const Tensor<Real>& node_embeddings, const PoolParams<Real>& params) {
  return add(matmul(mean_over_axis(node_embeddings, 0), params.weight), params.bias);
}

template <typename Real>
struct EncoderLayerParams {
  AttentionParams<Real> attn;
  Tensor<Real> ln1_gain, ln1_bias;  // pre-attention norm
  Tensor<Real> ln2_gain, ln2_bias;  // pre-feed-forward norm
  Tensor<Real> ff_w1, ff_b1, ff_w2, ff_b2;
};

template <typename Real>
struct EncoderParams {
  std::vector<EncoderLayerParams<Real>> layers;

  static EncoderParams init(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    EncoderParams p;
    auto xavier = [&rng](std::size_t in, std::size_t out) {
      const double a = std::sqrt(6.0 / static_cast<double>(in + out));
      std::vector<Real> v(in * out);
      for (auto& x : v) x = static_cast<Real>(rng.uniform(-a, a));
      return Tensor<Real>::from_data({in, out}, std::move(v), true);
    };
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      EncoderLayerParams<Real> layer;
      layer.attn = AttentionParams<Real>::init(cfg.d_model, cfg.d_model, cfg.num_heads, rng);
      layer.ln1_gain = Tensor<Real>::filled({cfg.d_model}, Real(1), true);
      layer.ln1_bias = Tensor<Real>::zeros({cfg.d_model}, true);
      layer.ln2_gain = Tensor<Real>::filled({cfg.d_model}, Real(1), true);
      layer.ln2_bias = Tensor<Real>::zeros({cfg.d_model}, true);
      layer.ff_w1 = xavier(cfg.d_model, cfg.d_ff);
      layer.ff_b1 = Tensor<Real>::zeros({cfg.d_ff}, true);
      layer.ff_w2 = xavier(cfg.d_ff, cfg.d_model);
      layer.ff_b2 = Tensor<Real>::zeros({cfg.d_model}, true);
      p.layers.push_back(std::move(layer));
    }
    return p;
  }

  std::vector<std::pair<std::string, Tensor<Real>>> named(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor<Real>>> out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string lp = prefix + ".layer" + std::to_string(l);
      for (auto& kv : layers[l].attn.named(lp + ".attn")) out.push_back(kv);
      out.emplace_back(lp + ".ln1_gain", layers[l].ln1_gain);
      out.emplace_back(lp + ".ln1_bias", layers[l].ln1_bias);
      out.emplace_back(lp + ".ln2_gain", layers[l].ln2_gain);
      out.emplace_back(lp + ".ln2_bias", layers[l].ln2_bias);
      out.emplace_back(lp + ".ff_w1", layers[l].ff_w1);
      out.emplace_back(lp + ".ff_b1", layers[l].ff_b1);
      out.emplace_back(lp + ".ff_w2", layers[l].ff_w2);
      out.emplace_back(lp + ".ff_b2", layers[l].ff_b2);
    }
    return out;
  }
};

// PE[pos][2i] = sin(pos / 10000^(2i/d)), PE[pos][2i+1] = cos(same). Constant.
template <typename Real>
Tensor<Real> sinusoidal_encoding(std::size_t n, std::size_t d_model) {
  Tensor<Real> pe = Tensor<Real>::zeros({n, d_model});
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / d_model);
      pe.at(pos, i) = static_cast<Real>(std::sin(angle));
      if (i + 1 < d_model) pe.at(pos, i + 1) = static_cast<Real>(std::cos(angle));
    }
  }
  return pe;
}

template <typename Real>
Tensor<Real> encoder_forward(const Tensor<Real>& tokens, const EncoderConfig& cfg,
                             const EncoderParams<Real>& params) {
  detail::require_rank2(tokens, "encoder_forward");
  if (tokens.cols() != cfg.d_model) {
    throw ShapeError("encoder_forward: token width " + shape_str(tokens.shape()) +
                     " does not match d_model " + std::to_string(cfg.d_model));
  }
  Tensor<Real> x = cfg.sinusoidal
                       ? add(tokens, sinusoidal_encoding<Real>(tokens.rows(), cfg.d_model))
                       : tokens;
  for (const auto& layer : params.layers) {
    auto attended = self_attention(layer_norm(x, layer.ln1_gain, layer.ln1_bias), layer.attn);
    x = add(x, attended.features);
    auto z = layer_norm(x, layer.ln2_gain, layer.ln2_bias);
    auto hidden = relu(add_rowvec(matmul(z, layer.ff_w1), layer.ff_b1));
    x = add(x, add_rowvec(matmul(hidden, layer.ff_w2), layer.ff_b2));
  }
  return x;
}

// Mean over the token rows: the sequence representation fed to the head.
template <typename Real>
Tensor<Real> pool_sequence(const Tensor<Real>& encoded) {
  return mean_over_axis(encoded, 0);
}

}  // namespace dgnc
