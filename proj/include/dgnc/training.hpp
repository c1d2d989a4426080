// Classification head plumbing: cross-entropy loss, Adam with bias
// correction, reduce-on-plateau scheduling, threshold/rank metrics, and the
// end-to-end train / evaluate loops. Everything is deterministic given the
// seed: shuffles come from seeded streams and all reductions run in fixed
// subject order.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "dgnc/common.hpp"
#include "dgnc/config.hpp"
#include "dgnc/data.hpp"
#include "dgnc/model.hpp"
#include "dgnc/tensor.hpp"

namespace dgnc {

// -(log softmax(logits))[label] in stable log-sum-exp form. logits is a
// 1 x C row; the adjoint is softmax(logits) - onehot(label).
template <typename Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, int label) {
  detail::require_rank2(logits, "cross_entropy");
  if (logits.rows() != 1 || logits.cols() < 2) {
    throw ContractError("cross_entropy: expected a 1xC logit row with C >= 2, got " +
                        shape_str(logits.shape()));
  }
  if (label < 0 || static_cast<std::size_t>(label) >= logits.cols()) {
    throw ContractError("cross_entropy: label " + std::to_string(label) + " out of range");
  }
  const std::size_t c = logits.cols();
  Real mx = logits.values()[0];
  for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.values()[j]);
  Real sum_exp = Real(0);
  for (std::size_t j = 0; j < c; ++j) sum_exp += std::exp(logits.values()[j] - mx);
  const Real lse = mx + std::log(sum_exp);
  const bool rec = detail::recording<Real>({&logits});
  Tensor<Real> loss = make_op_output<Real>({1, 1}, rec);
  loss.values()[0] = lse - logits.values()[label];
  if (rec) {
    auto ln = logits.node(), on = loss.node();
    Tape<Real>::active()->push("cross_entropy", [ln, on, label, mx, sum_exp, c] {
      if (on->grad.empty() || !ln->requires_grad) return;
      ln->ensure_grad();
      const Real g = on->grad[0];
      for (std::size_t j = 0; j < c; ++j) {
        const Real p = std::exp(ln->value[j] - mx) / sum_exp;
        ln->grad[j] += g * (p - (static_cast<int>(j) == label ? Real(1) : Real(0)));
      }
    });
  }
  return loss;
}

// --------------------------------------------------------------------------
// Adam with bias correction; state starts at zeros, t at 0.

template <typename Real>
struct AdamState {
  std::vector<std::vector<Real>> m, v;  // parallel to the parameter registry
  std::size_t t = 0;

  static AdamState init(const std::vector<std::pair<std::string, Tensor<Real>>>& params) {
    AdamState s;
    for (const auto& [name, p] : params) {
      s.m.emplace_back(p.numel(), Real(0));
      s.v.emplace_back(p.numel(), Real(0));
    }
    return s;
  }
};

template <typename Real>
void adam_step(const std::vector<std::pair<std::string, Tensor<Real>>>& params,
               AdamState<Real>& state, Real lr, Real beta1, Real beta2, Real epsilon) {
  ++state.t;
  const Real bc1 = Real(1) - std::pow(beta1, static_cast<Real>(state.t));
  const Real bc2 = Real(1) - std::pow(beta2, static_cast<Real>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].second;
    const auto& g = p.node()->grad;
    if (g.empty()) continue;  // no gradient reached this tensor this step
    auto& m = state.m[i];
    auto& v = state.v[i];
    auto& x = p.node()->value;
    for (std::size_t j = 0; j < x.size(); ++j) {
      m[j] = beta1 * m[j] + (Real(1) - beta1) * g[j];
      v[j] = beta2 * v[j] + (Real(1) - beta2) * g[j] * g[j];
      const Real mhat = m[j] / bc1;
      const Real vhat = v[j] / bc2;
      x[j] -= lr * mhat / (std::sqrt(vhat) + epsilon);
    }
  }
}

// --------------------------------------------------------------------------
// Reduce-on-plateau (mode=min). An epoch improving best by >= min_improvement
// resets the streak; otherwise the counter grows, and once it exceeds
// patience the rate is multiplied by factor and the counter resets. The rate
// never drops below 1e-7.

template <typename Real>
struct PlateauState {
  Real lr;
  Real factor;
  std::size_t patience;
  Real min_improvement;
  Real best = std::numeric_limits<Real>::infinity();
  std::size_t counter = 0;
  static constexpr Real floor = Real(1e-7);
};

template <typename Real>
Real plateau_step(PlateauState<Real>& state, Real epoch_val_loss) {
  if (state.best - epoch_val_loss >= state.min_improvement) {
    state.best = epoch_val_loss;
    state.counter = 0;
  } else {
    ++state.counter;
    if (state.counter > state.patience) {
      state.lr = std::max(state.lr * state.factor, PlateauState<Real>::floor);
      state.counter = 0;
    }
  }
  return state.lr;
}

// --------------------------------------------------------------------------
// Metrics. Class 1 is positive; prediction threshold 0.5 with ties to class
// 0. AUC is rank-based with midranks for ties, equal to the pairwise count
// (score_pos > score_neg, half credit for ties) / (n_pos * n_neg).

struct Metrics {
  double accuracy = 0;
  double auc = 0;
  double recall = 0;
  double precision = 0;
  bool auc_degenerate = false;  // single-class label set; auc reported as 0.5
};

inline Metrics compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw ContractError("compute_metrics: scores and labels must be nonempty and equal-length");
  }
  const std::size_t n = scores.size();
  std::size_t tp = 0, fp = 0, fn = 0, correct = 0, n_pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw ContractError("compute_metrics: labels must be binary");
    }
    const int pred = scores[i] > 0.5 ? 1 : 0;
    correct += pred == labels[i];
    n_pos += labels[i];
    tp += pred == 1 && labels[i] == 1;
    fp += pred == 1 && labels[i] == 0;
    fn += pred == 0 && labels[i] == 1;
  }
  Metrics m;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  m.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  m.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    m.auc = 0.5;
    m.auc_degenerate = true;
    return m;
  }
  // midrank sum of positives: AUC = (R_pos - n_pos(n_pos+1)/2) / (n_pos*n_neg)
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j + 1);  // ranks are 1-based
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) rank_sum_pos += midrank;
    }
    i = j + 1;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  m.auc = u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
  return m;
}

// --------------------------------------------------------------------------
// Training loop.

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double train_acc = 0;  // running accuracy of the pre-update forward passes
  double val_loss = 0;
  double val_acc = 0;
  double lr = 0;  // rate after the scheduler saw this epoch
};

template <typename Real>
struct TrainResult {
  ModelParams<Real> params;
  std::vector<EpochRecord> history;
};

namespace seed_stream {
constexpr std::uint64_t val_split = 100;
constexpr std::uint64_t epoch_shuffle_base = 1000;
}  // namespace seed_stream

template <typename Real>
double subject_probability_class1(const WindowSet<Real>& ws, const ModelParams<Real>& params,
                                  const Config& cfg) {
  NoGradScope off;
  auto logits = forward_windows(ws, params, cfg);
  const Real a = logits.values()[0], b = logits.values()[1];
  const Real mx = std::max(a, b);
  const Real ea = std::exp(a - mx), eb = std::exp(b - mx);
  return static_cast<double>(eb / (ea + eb));
}

template <typename Real>
Metrics evaluate_windows(const std::vector<WindowSet<Real>>& prepared,
                         const std::vector<int>& labels, const std::vector<std::size_t>& split,
                         const ModelParams<Real>& params, const Config& cfg) {
  if (split.empty()) {
    throw ContractError("evaluate: empty split");
  }
  std::vector<double> scores;
  std::vector<int> split_labels;
  for (std::size_t idx : split) {
    scores.push_back(subject_probability_class1(prepared[idx], params, cfg));
    split_labels.push_back(labels[idx]);
  }
  return compute_metrics(scores, split_labels);
}

// Deterministic metrics over the named split of the dataset.
template <typename Real>
Metrics evaluate(const ModelParams<Real>& params, const LabeledDataset<Real>& dataset,
                 const std::vector<std::size_t>& split, const Config& cfg) {
  if (split.empty()) {
    throw ContractError("evaluate: empty split");
  }
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t idx : split) {
    auto ws = prepare_signal(dataset.subjects[idx], cfg);
    scores.push_back(subject_probability_class1(ws, params, cfg));
    labels.push_back(dataset.labels[idx]);
  }
  return compute_metrics(scores, labels);
}

// Mini-batch training: gradients averaged over the batch, Adam updates, the
// plateau scheduler stepped once per epoch on validation loss (a held-out
// fraction of the train split; when that rounds to zero subjects the
// scheduler monitors training loss). Throws DivergenceError on non-finite
// loss.
template <typename Real>
TrainResult<Real> train(const LabeledDataset<Real>& dataset, const Config& cfg) {
  cfg.validate();
  if (dataset.train_indices.empty()) {
    throw ContractError("train: empty train split");
  }
  const std::size_t v = dataset.regions();

  // held-out validation subjects for scheduler monitoring
  std::vector<std::size_t> pool = dataset.train_indices;
  Rng vrng = Rng::stream(cfg.seed, seed_stream::val_split);
  vrng.shuffle(pool);
  const std::size_t n_val =
      static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(pool.size()));
  std::vector<std::size_t> val_idx(pool.begin(), pool.begin() + n_val);
  std::vector<std::size_t> fit_idx(pool.begin() + n_val, pool.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(fit_idx.begin(), fit_idx.end());

  // windows are immutable per subject; prepare once
  std::vector<WindowSet<Real>> prepared(dataset.subjects.size());
  for (std::size_t i = 0; i < dataset.subjects.size(); ++i) {
    prepared[i] = prepare_signal(dataset.subjects[i], cfg);
  }

  TrainResult<Real> result;
  result.params = ModelParams<Real>::init(cfg, v);
  auto registry = result.params.named();
  AdamState<Real> adam = AdamState<Real>::init(registry);
  PlateauState<Real> sched{static_cast<Real>(cfg.lr), static_cast<Real>(cfg.scheduler_factor),
                           cfg.scheduler_patience, static_cast<Real>(cfg.min_improvement)};

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = fit_idx;
    Rng erng = Rng::stream(cfg.seed, seed_stream::epoch_shuffle_base + epoch);
    erng.shuffle(order);

    double epoch_loss = 0;
    std::size_t epoch_correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      result.params.zero_grad();
      double batch_loss = 0;
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t idx = order[b];
        Tape<Real> tape;
        auto logits = forward_windows(prepared[idx], result.params, cfg);
        auto loss = cross_entropy(logits, dataset.labels[idx]);
        const double lv = static_cast<double>(loss.values()[0]);
        if (!std::isfinite(lv)) {
          throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                ", subject " + dataset.subjects[idx].subject_id);
        }
        batch_loss += lv;
        const int pred = logits.values()[1] > logits.values()[0] ? 1 : 0;
        epoch_correct += pred == dataset.labels[idx];
        tape.backward(loss);
      }
      // average over the batch
      const Real inv = Real(1) / static_cast<Real>(stop - start);
      for (auto& [name, p] : registry) {
        auto& g = p.node()->grad;
        for (auto& gv : g) gv *= inv;
      }
      adam_step(registry, adam, sched.lr, static_cast<Real>(cfg.adam_beta1),
                static_cast<Real>(cfg.adam_beta2), static_cast<Real>(cfg.adam_epsilon));
      epoch_loss += batch_loss;
    }
    epoch_loss /= static_cast<double>(order.size());
    const double epoch_acc = static_cast<double>(epoch_correct) / static_cast<double>(order.size());

    double val_loss = epoch_loss;
    double val_acc = epoch_acc;
    if (!val_idx.empty()) {
      val_loss = 0;
      std::size_t val_correct = 0;
      NoGradScope off;
      for (std::size_t idx : val_idx) {
        auto logits = forward_windows(prepared[idx], result.params, cfg);
        val_loss += static_cast<double>(cross_entropy(logits, dataset.labels[idx]).values()[0]);
        const int pred = logits.values()[1] > logits.values()[0] ? 1 : 0;
        val_correct += pred == dataset.labels[idx];
      }
      val_loss /= static_cast<double>(val_idx.size());
      val_acc = static_cast<double>(val_correct) / static_cast<double>(val_idx.size());
    }
    if (!std::isfinite(val_loss)) {
      throw DivergenceError("train: non-finite validation loss at epoch " + std::to_string(epoch));
    }
    const double lr_after = static_cast<double>(plateau_step(sched, static_cast<Real>(val_loss)));
    result.history.push_back(EpochRecord{epoch, epoch_loss, epoch_acc, val_loss, val_acc, lr_after});
  }
  return result;
}

// Verification-mode startup assertion: every parameter tensor receives a
// nonzero gradient on generic input (no dead branch in the wiring).
template <typename Real>
std::vector<std::string> dead_parameters(const ModelParams<Real>& params, const Config& cfg,
                                         std::uint64_t probe_seed = 424242) {
  auto ds = synth_generate<Real>(2, params.regions, cfg.window_size * 2, 1.0, probe_seed,
                                 cfg.window_size);
  params.zero_grad();
  {
    Tape<Real> tape;
    Tensor<Real> total;
    for (std::size_t i = 0; i < 2; ++i) {
      auto logits = forward_windows(prepare_signal(ds.subjects[i], cfg), params, cfg);
      auto loss = cross_entropy(logits, ds.labels[i]);
      total = i == 0 ? loss : add(total, loss);
    }
    tape.backward(total);
  }
  std::vector<std::string> dead;
  for (auto& [name, p] : params.named()) {
    double norm = 0;
    for (Real g : p.node()->grad) norm += static_cast<double>(g) * static_cast<double>(g);
    if (norm == 0.0) dead.push_back(name);
  }
  return dead;
}

}  // namespace dgnc
