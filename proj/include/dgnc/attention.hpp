// Multi-head self-attention over either axis of a temporal window.
//
// Temporal attention treats a window's P timepoints as tokens; spatial
// attention treats the V regions as tokens (it reads the transposed window,
// so each region's P-long profile is one token). Per head the scaled scores
// S_h = Q K^T / sqrt(d_k) are returned un-softmaxed: the spatial ones seed
// the dynamic adjacency downstream. No bias terms in the projections.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dgnc/common.hpp"
#include "dgnc/tensor.hpp"

namespace dgnc {

template <typename Real>
struct AttentionParams {
  std::vector<Tensor<Real>> w_q, w_k, w_v;  // per head: input_dim x d_k
  Tensor<Real> w_o;                         // heads*d_k x d_model
  std::size_t heads = 0;
  std::size_t d_k = 0;
  std::size_t input_dim = 0;
  std::size_t d_model = 0;

  // Xavier-uniform init: bounds sqrt(6/(fan_in+fan_out)) keep score logits
  // O(1) for unit-variance inputs.
  static AttentionParams init(std::size_t input_dim, std::size_t d_model, std::size_t heads,
                              Rng& rng) {
    if (heads == 0 || d_model % heads != 0) {
      throw ConfigError("attention: d_model " + std::to_string(d_model) +
                        " must be divisible by heads " + std::to_string(heads));
    }
    AttentionParams p;
    p.heads = heads;
    p.d_k = d_model / heads;
    p.input_dim = input_dim;
    p.d_model = d_model;
    auto xavier = [&rng](std::size_t in, std::size_t out) {
      const double a = std::sqrt(6.0 / static_cast<double>(in + out));
      std::vector<Real> v(in * out);
      for (auto& x : v) x = static_cast<Real>(rng.uniform(-a, a));
      return Tensor<Real>::from_data({in, out}, std::move(v), true);
    };
    for (std::size_t h = 0; h < heads; ++h) {
      p.w_q.push_back(xavier(input_dim, p.d_k));
      p.w_k.push_back(xavier(input_dim, p.d_k));
      p.w_v.push_back(xavier(input_dim, p.d_k));
    }
    p.w_o = xavier(heads * p.d_k, d_model);
    return p;
  }

  std::vector<std::pair<std::string, Tensor<Real>>> named(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor<Real>>> out;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::string hp = prefix + ".head" + std::to_string(h);
      out.emplace_back(hp + ".w_q", w_q[h]);
      out.emplace_back(hp + ".w_k", w_k[h]);
      out.emplace_back(hp + ".w_v", w_v[h]);
    }
    out.emplace_back(prefix + ".w_o", w_o);
    return out;
  }
};

template <typename Real>
struct AttentionOutput {
  Tensor<Real> features;              // tokens x d_model
  std::vector<Tensor<Real>> scores;   // per head: tokens x tokens, scaled, pre-softmax
};

// Per head: Q = X W_Q, K = X W_K, V = X W_V; S = Q K^T / sqrt(d_k);
// head output = softmax_rows(S) V. Heads are concatenated and projected.
template <typename Real>
AttentionOutput<Real> self_attention(const Tensor<Real>& x, const AttentionParams<Real>& params) {
  detail::require_rank2(x, "self_attention");
  if (x.cols() != params.input_dim) {
    throw ShapeError("self_attention: input shape " + shape_str(x.shape()) +
                     " does not match parameter input_dim " + std::to_string(params.input_dim));
  }
  const Real inv_sqrt_dk = Real(1) / std::sqrt(static_cast<Real>(params.d_k));
  AttentionOutput<Real> out;
  std::vector<Tensor<Real>> head_outputs;
  for (std::size_t h = 0; h < params.heads; ++h) {
    auto q = matmul(x, params.w_q[h]);
    auto k = matmul(x, params.w_k[h]);
    auto v = matmul(x, params.w_v[h]);
    auto s = scale(matmul(q, transpose(k)), inv_sqrt_dk);
    out.scores.push_back(s);
    head_outputs.push_back(matmul(softmax_rows(s), v));
  }
  out.features = matmul(concat(head_outputs, 1), params.w_o);
  return out;
}

// Tokens are the window's P timepoints.
template <typename Real>
AttentionOutput<Real> temporal_attention(const Tensor<Real>& window_px_v,
                                         const AttentionParams<Real>& params) {
  return self_attention(window_px_v, params);
}

// Tokens are the V regions: attends over the transposed window, producing
// V x d_model features and per-head V x V scores for the adjacency.
template <typename Real>
AttentionOutput<Real> spatial_attention(const Tensor<Real>& window_px_v,
                                        const AttentionParams<Real>& params) {
  return self_attention(transpose(window_px_v), params);
}

// Head-averaged score matrix, the minimal multi-head reconciliation for the
// single score matrix the adjacency construction expects.
template <typename Real>
Tensor<Real> mean_scores(const AttentionOutput<Real>& out) {
  Tensor<Real> acc = out.scores[0];
  for (std::size_t h = 1; h < out.scores.size(); ++h) acc = add(acc, out.scores[h]);
  return scale(acc, Real(1) / static_cast<Real>(out.scores.size()));
}

}  // namespace dgnc
