// Gradient-fidelity verification suite: central finite differences against
// the analytic adjoints, per module and end to end. Runs in 64-bit mode on
// deterministic synthetic inputs derived from the config seed.
#pragma once

#include <string>
#include <vector>

#include "dgnc/attention.hpp"
#include "dgnc/common.hpp"
#include "dgnc/config.hpp"
#include "dgnc/data.hpp"
#include "dgnc/dyngraph.hpp"
#include "dgnc/encoder.hpp"
#include "dgnc/model.hpp"
#include "dgnc/tensor.hpp"
#include "dgnc/training.hpp"

namespace dgnc {

struct ModuleGradCheck {
  std::string module;
  GradCheckReport<double> report;
  std::size_t probe_redraws = 0;  // inputs discarded because an FD probe crossed a kink
};

namespace seed_stream {
constexpr std::uint64_t verify_inputs = 9000;
}

namespace detail {

// A central difference straddling a ReLU or top-k decision boundary is not a
// derivative estimate, so a probe input where that happens proves nothing
// either way. Inputs come from a deterministic stream; redraw until the
// whole check runs kink-free (bounded; the crossing-free probability per
// draw is high at these scales). The accepted report covers every entry.
template <typename MakeCheck>
ModuleGradCheck run_kink_free(const std::string& module, MakeCheck&& make_check,
                              std::size_t max_attempts = 32) {
  ModuleGradCheck best{module, {}, 0};
  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    GradCheckReport<double> report = make_check(attempt);
    if (report.kink_crossings == 0) {
      return ModuleGradCheck{module, report, attempt};
    }
    if (attempt == 0 || report.kink_crossings < best.report.kink_crossings) {
      best = ModuleGradCheck{module, report, attempt + 1};
    }
  }
  return best;
}

}  // namespace detail

// Checks attention, dyngraph (adjacency + sparsify + GCN), encoder, and the
// MLP head in isolation, then the full model pipeline over all parameters.
inline std::vector<ModuleGradCheck> run_gradcheck_suite(const Config& cfg, double h = 1e-3) {
  cfg.validate();
  std::vector<ModuleGradCheck> results;
  Rng irng = Rng::stream(cfg.seed, seed_stream::verify_inputs);
  auto random_matrix = [&irng](std::size_t r, std::size_t c) {
    std::vector<double> v(r * c);
    for (auto& x : v) x = irng.uniform(-1.0, 1.0);
    return Tensor<double>::from_data({r, c}, std::move(v));
  };
  auto scalarize = [](const Tensor<double>& y) { return sum_all(mul(y, y)); };
  ModelParams<double> params = ModelParams<double>::init(cfg, cfg.regions);

  results.push_back(detail::run_kink_free("attention", [&](std::size_t) {
    auto x = random_matrix(cfg.window_size, cfg.regions);
    auto f = [&] {
      auto out = temporal_attention(x, params.temporal);
      auto s = scalarize(out.features);
      for (const auto& sc : out.scores) s = add(s, scalarize(sc));
      return s;
    };
    return grad_check<double>(f, params.temporal.named("temporal_attn"), h);
  }));

  results.push_back(detail::run_kink_free("dyngraph", [&](std::size_t) {
    auto win = random_matrix(cfg.window_size, cfg.regions);
    const std::size_t k = cfg.effective_sparsity(cfg.regions);
    auto f = [&] {
      auto spat = spatial_attention(win, params.spatial);
      auto adjacency = sparsify(build_adjacency(mean_scores(spat)), k);
      return scalarize(gcn_stack(spat.features, adjacency, params.gcn));
    };
    auto named = params.spatial.named("spatial_attn");
    for (auto& kv : params.gcn.named("gcn")) named.push_back(kv);
    return grad_check<double>(f, named, h);
  }));

  results.push_back(detail::run_kink_free("encoder", [&](std::size_t) {
    const std::size_t n = std::max<std::size_t>(2, cfg.timepoints / cfg.window_size);
    auto seq = random_matrix(n, cfg.d_model);
    auto f = [&] {
      return scalarize(encoder_forward(seq, cfg.encoder_config(), params.encoder));
    };
    return grad_check<double>(f, params.encoder.named("encoder"), h);
  }));

  results.push_back(detail::run_kink_free("mlp_head", [&](std::size_t) {
    auto x = random_matrix(1, cfg.d_model);
    auto f = [&] { return cross_entropy(params.mlp.forward(x), 1); };
    return grad_check<double>(f, params.mlp.named("mlp"), h);
  }));

  results.push_back(detail::run_kink_free("full_model", [&](std::size_t attempt) {
    auto ds = synth_generate<double>(1, cfg.regions, cfg.timepoints, 1.0,
                                     (cfg.seed ^ 0x5eedf00dULL) + attempt, cfg.window_size);
    auto ws = prepare_signal(ds.subjects[0], cfg);
    auto f = [&] { return cross_entropy(forward_windows(ws, params, cfg), ds.labels[0]); };
    return grad_check<double>(f, params.named(), h);
  }));

  return results;
}

}  // namespace dgnc
