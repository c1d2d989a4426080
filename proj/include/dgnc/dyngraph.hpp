// Dynamic graph construction and the shared graph convolution.
//
// The head-averaged spatial attention scores become a weighted adjacency
// A_t = sigmoid(scores) with entries in (0,1); row-wise top-k sparsification
// enforces the edge budget (forward-time mask, gradient flows only through
// kept entries); the GCN applies the symmetric renormalization
// H = ReLU(D^{-1/2} (A+I) D^{-1/2} F W) with self-loops guaranteeing positive
// degrees. A_t stays asymmetric; degrees are row sums of A+I.
#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "dgnc/common.hpp"
#include "dgnc/tensor.hpp"

namespace dgnc {

template <typename Real>
struct GcnParams {
  std::vector<Tensor<Real>> weights;  // depth entries: d_in x d_gcn, then d_gcn x d_gcn

  static GcnParams init(std::size_t d_in, std::size_t d_gcn, std::size_t depth, Rng& rng) {
    if (depth == 0) throw ConfigError("gcn: depth must be >= 1");
    GcnParams p;
    for (std::size_t l = 0; l < depth; ++l) {
      const std::size_t in = l == 0 ? d_in : d_gcn;
      const double a = std::sqrt(6.0 / static_cast<double>(in + d_gcn));
      std::vector<Real> v(in * d_gcn);
      for (auto& x : v) x = static_cast<Real>(rng.uniform(-a, a));
      p.weights.push_back(Tensor<Real>::from_data({in, d_gcn}, std::move(v), true));
    }
    return p;
  }

  std::vector<std::pair<std::string, Tensor<Real>>> named(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor<Real>>> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.emplace_back(prefix + ".layer" + std::to_string(l) + ".weight", weights[l]);
    }
    return out;
  }
};

// A_t = sigmoid(scores): every entry strictly in (0,1), differentiable back
// into the attention projections.
template <typename Real>
Tensor<Real> build_adjacency(const Tensor<Real>& scores) {
  detail::require_rank2(scores, "build_adjacency");
  if (scores.rows() != scores.cols()) {
    throw ShapeError("build_adjacency: scores must be square, got " + shape_str(scores.shape()));
  }
  return sigmoid(scores);
}

// Row indices of the k largest entries; ties keep the lower column index.
template <typename Real>
std::vector<std::size_t> topk_indices(const Real* row, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [row](std::size_t a, std::size_t b) {
    if (row[a] != row[b]) return row[a] > row[b];
    return a < b;
  });
  idx.resize(k);
  return idx;
}

// Keeps the k largest entries per row, zeroing the rest. The mask is fixed at
// forward time; backward multiplies by it, so pruned edges get no gradient.
template <typename Real>
Tensor<Real> sparsify(const Tensor<Real>& a, std::size_t k) {
  detail::require_rank2(a, "sparsify");
  const std::size_t n = a.cols();
  if (k < 1 || k > n) {
    throw ContractError("sparsify: k=" + std::to_string(k) + " out of range [1," +
                        std::to_string(n) + "]");
  }
  Tensor<Real> mask = Tensor<Real>::zeros({a.rows(), n});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const Real* row = a.values().data() + i * n;
    for (std::size_t j : topk_indices(row, n, k)) {
      mask.at(i, j) = Real(1);
      if (PathSignature::enabled) PathSignature::fold(i * n + j);
    }
  }
  return mul(a, mask);
}

// One graph convolution: Ahat = A + I, Dhat = diag(row sums),
// H = ReLU(Dhat^{-1/2} Ahat Dhat^{-1/2} F W).
template <typename Real>
Tensor<Real> gcn_forward(const Tensor<Real>& node_features, const Tensor<Real>& adjacency,
                         const Tensor<Real>& weight) {
  detail::require_rank2(node_features, "gcn_forward");
  detail::require_rank2(adjacency, "gcn_forward");
  if (adjacency.rows() != adjacency.cols() || adjacency.rows() != node_features.rows()) {
    throw ShapeError("gcn_forward: adjacency " + shape_str(adjacency.shape()) +
                     " incompatible with node features " + shape_str(node_features.shape()));
  }
  auto ahat = add(adjacency, Tensor<Real>::identity(adjacency.rows()));
  auto inv_sqrt_deg = rsqrt(sum_over_axis(ahat, 1));  // V x 1, entries >= 1
  auto normalized = scale_cols(scale_rows(ahat, inv_sqrt_deg), inv_sqrt_deg);
  return relu(matmul(matmul(normalized, node_features), weight));
}

// Applies the (shared) stack of GCN layers over one graph.
template <typename Real>
Tensor<Real> gcn_stack(const Tensor<Real>& node_features, const Tensor<Real>& adjacency,
                       const GcnParams<Real>& params) {
  Tensor<Real> h = node_features;
  for (const auto& w : params.weights) h = gcn_forward(h, adjacency, w);
  return h;
}

// Fuses the two attention paths into GCN node features: the temporal output
// (P x d_model) is mean-pooled over timepoints and added to every spatial
// feature row. Minimal differentiable fusion; both attentions influence the
// graph stage.
template <typename Real>
Tensor<Real> fuse_node_features(const Tensor<Real>& spatial_features,
                                const Tensor<Real>& temporal_features) {
  return add_rowvec(spatial_features, mean_over_axis(temporal_features, 0));
}

}  // namespace dgnc
