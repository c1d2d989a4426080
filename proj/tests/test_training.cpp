#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include "dgnc/checkpoint.hpp"
#include "dgnc/training.hpp"
#include "testutil.hpp"

using dgnc::Config;
using dgnc::Metrics;
using dgnc::ModelParams;
using dgnc::Tensor;

namespace {

using T = Tensor<double>;

Config tiny_config() {
  Config cfg;
  cfg.regions = 6;
  cfg.window_size = 4;
  cfg.timepoints = 12;  // 3 windows
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.d_model = 8;
  cfg.d_gcn = 8;
  cfg.d_ff = 16;
  cfg.gcn_depth = 1;
  cfg.mlp_hidden = 8;
  cfg.seed = 7;
  return cfg;
}

// Brute-force pairwise AUC: the oracle route, O(n_pos * n_neg).
double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

TEST(CrossEntropy, UniformLogitsGiveLogTwo) {
  auto l = T::from_data({1, 2}, {0, 0});
  EXPECT_NEAR(dgnc::cross_entropy(l, 0).values()[0], std::log(2.0), 1e-15);
  EXPECT_NEAR(dgnc::cross_entropy(l, 1).values()[0], std::log(2.0), 1e-15);
}

TEST(CrossEntropy, ConfidentCorrectIsTiny) {
  auto l = T::from_data({1, 2}, {10, -10});
  const double loss = dgnc::cross_entropy(l, 0).values()[0];
  EXPECT_NEAR(loss, std::exp(-20.0), 1e-12);
  EXPECT_GT(loss, 0.0);
}

TEST(CrossEntropy, MatchesNaiveFormulaForModerateLogits) {
  dgnc::Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const double a = rng.uniform(-4, 4), b = rng.uniform(-4, 4);
    const int label = static_cast<int>(rng.below(2));
    auto l = T::from_data({1, 2}, {a, b});
    const double naive =
        -std::log(std::exp(label == 0 ? a : b) / (std::exp(a) + std::exp(b)));
    EXPECT_NEAR(dgnc::cross_entropy(l, label).values()[0], naive, 1e-12);
  }
}

TEST(CrossEntropy, GradCheck) {
  dgnc::Rng rng(5);
  auto w = testutil::random_tensor({3, 2}, rng, true);
  auto x = testutil::random_tensor({1, 3}, rng);
  auto report = dgnc::grad_check<double>(
      [&] { return dgnc::cross_entropy(dgnc::matmul(x, w), 1); }, {{"w", w}});
  EXPECT_LT(report.max_rel_err, 1e-4);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  auto p = T::from_data({1, 2}, {1.0, -2.0}, true);
  p.zero_grad();
  p.node()->grad = {0.3, -0.7};
  std::vector<std::pair<std::string, T>> params{{"p", p}};
  auto state = dgnc::AdamState<double>::init(params);
  dgnc::adam_step(params, state, 0.001, 0.9, 0.999, 1e-8);
  // bias-corrected mhat/sqrt(vhat) = g/|g| up to epsilon
  EXPECT_NEAR(p.values()[0], 1.0 - 0.001, 1e-6);
  EXPECT_NEAR(p.values()[1], -2.0 + 0.001, 1e-6);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  auto p = T::from_data({1, 2}, {1.5, 2.5}, true);
  p.zero_grad();
  std::vector<std::pair<std::string, T>> params{{"p", p}};
  auto state = dgnc::AdamState<double>::init(params);
  for (int s = 0; s < 5; ++s) dgnc::adam_step(params, state, 0.01, 0.9, 0.999, 1e-8);
  EXPECT_EQ(p.values(), (std::vector<double>{1.5, 2.5}));
}

TEST(Adam, ThreeStepsMatchScalarOracle) {
  // independent scalar Adam on f(x) = x^2 from x = 1
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double x_ref = 1.0, m = 0, v = 0;
  std::vector<double> ref;
  for (int t = 1; t <= 3; ++t) {
    const double g = 2.0 * x_ref;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    x_ref -= lr * mhat / (std::sqrt(vhat) + eps);
    ref.push_back(x_ref);
  }

  auto p = T::from_data({1, 1}, {1.0}, true);
  std::vector<std::pair<std::string, T>> params{{"x", p}};
  auto state = dgnc::AdamState<double>::init(params);
  for (int t = 0; t < 3; ++t) {
    p.zero_grad();
    p.node()->grad = {2.0 * p.values()[0]};
    dgnc::adam_step(params, state, lr, b1, b2, eps);
    EXPECT_NEAR(p.values()[0], ref[t], 1e-12) << "step " << t + 1;
  }
}

TEST(Plateau, StrictImprovementKeepsRate) {
  dgnc::PlateauState<double> s{0.001, 0.1, 5, 1e-4};
  for (int e = 0; e < 10; ++e) {
    EXPECT_EQ(dgnc::plateau_step(s, 1.0 - 0.1 * e), 0.001);
  }
}

TEST(Plateau, SixFlatEpochsDropAtSeven) {
  // best at epoch 1, then six non-improving epochs: the drop fires at epoch 7
  dgnc::PlateauState<double> s{0.001, 0.1, 5, 1e-4};
  EXPECT_EQ(dgnc::plateau_step(s, 1.0), 0.001);  // epoch 1 (best)
  for (int e = 2; e <= 6; ++e) EXPECT_EQ(dgnc::plateau_step(s, 1.0), 0.001) << "epoch " << e;
  EXPECT_DOUBLE_EQ(dgnc::plateau_step(s, 1.0), 1e-4);  // epoch 7
  // counter reset; six more flat epochs give the second drop
  for (int e = 8; e <= 12; ++e) EXPECT_DOUBLE_EQ(dgnc::plateau_step(s, 1.0), 1e-4);
  EXPECT_DOUBLE_EQ(dgnc::plateau_step(s, 1.0), 1e-5);  // epoch 13
}

TEST(Plateau, TinyImprovementDoesNotResetStreak) {
  dgnc::PlateauState<double> s{0.001, 0.1, 2, 1e-4};
  dgnc::plateau_step(s, 1.0);
  dgnc::plateau_step(s, 1.0 - 1e-6);  // below min_improvement
  dgnc::plateau_step(s, 1.0 - 2e-6);
  EXPECT_DOUBLE_EQ(dgnc::plateau_step(s, 1.0 - 3e-6), 1e-4);
}

TEST(Plateau, NonIncreasingStepFunctionWithExactFactor) {
  dgnc::Rng rng(17);
  dgnc::PlateauState<double> s{0.001, 0.1, 3, 1e-4};
  double prev = s.lr;
  for (int e = 0; e < 60; ++e) {
    const double lr = dgnc::plateau_step(s, 0.5 + rng.uniform(-0.2, 0.2));
    EXPECT_LE(lr, prev);
    if (lr != prev) EXPECT_DOUBLE_EQ(lr, std::max(prev * 0.1, 1e-7));
    prev = lr;
  }
}

TEST(Plateau, RateNeverFallsBelowFloor) {
  dgnc::PlateauState<double> s{1e-6, 0.1, 0, 1e-4};
  dgnc::plateau_step(s, 1.0);
  for (int e = 0; e < 5; ++e) dgnc::plateau_step(s, 1.0);
  EXPECT_GE(s.lr, 1e-7);
}

TEST(Metrics, PerfectSeparation) {
  auto m = dgnc::compute_metrics({0.9, 0.1}, {1, 0});
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.auc, 1.0);
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_FALSE(m.auc_degenerate);
}

TEST(Metrics, AllTiedScoresGiveHalfAuc) {
  auto m = dgnc::compute_metrics({0.4, 0.4}, {1, 0});
  EXPECT_EQ(m.auc, 0.5);
}

TEST(Metrics, ThreePointDerivedCase) {
  // pos scores {0.8, 0.4}, neg {0.6}: pairs (0.8>0.6)=1, (0.4>0.6)=0 -> 0.5
  auto m = dgnc::compute_metrics({0.8, 0.6, 0.4}, {1, 0, 1});
  EXPECT_EQ(m.auc, 0.5);
}

TEST(Metrics, MatchesPairwiseOracleExactly) {
  dgnc::Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(19);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool has0 = false, has1 = false;
    for (std::size_t i = 0; i < n; ++i) {
      // quantized scores force ties regularly
      scores[i] = static_cast<double>(rng.below(8)) / 8.0;
      labels[i] = static_cast<int>(rng.below(2));
      (labels[i] ? has1 : has0) = true;
    }
    if (!has0 || !has1) continue;
    const auto m = dgnc::compute_metrics(scores, labels);
    EXPECT_EQ(m.auc, pairwise_auc(scores, labels)) << "trial " << trial;
  }
}

TEST(Metrics, ZeroDenominatorsDefinedAsZero) {
  // everything predicted negative: no TP, no FP
  auto m = dgnc::compute_metrics({0.1, 0.2}, {1, 0});
  EXPECT_EQ(m.recall, 0.0);
  EXPECT_EQ(m.precision, 0.0);
}

TEST(Metrics, SingleClassFlagsDegenerateAuc) {
  auto m = dgnc::compute_metrics({0.9, 0.8}, {1, 1});
  EXPECT_EQ(m.auc, 0.5);
  EXPECT_TRUE(m.auc_degenerate);
}

TEST(Metrics, TieAtThresholdPredictsClassZero) {
  auto m = dgnc::compute_metrics({0.5}, {0});
  EXPECT_EQ(m.accuracy, 1.0);
}

TEST(ModelForward, TinyConfigShapeAndFiniteness) {
  auto cfg = tiny_config();
  auto params = ModelParams<double>::init(cfg, cfg.regions);
  auto ds = dgnc::synth_generate<double>(2, cfg.regions, cfg.timepoints, 1.0, 3, cfg.window_size);
  auto logits = dgnc::model_forward(ds.subjects[0], params, cfg);
  ASSERT_EQ(logits.shape(), (std::vector<std::size_t>{1, 2}));
  for (double v : logits.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(ModelForward, DuplicateInputGivesIdenticalLogits) {
  auto cfg = tiny_config();
  auto params = ModelParams<double>::init(cfg, cfg.regions);
  auto ds = dgnc::synth_generate<double>(1, cfg.regions, cfg.timepoints, 1.0, 5, cfg.window_size);
  auto a = dgnc::model_forward(ds.subjects[0], params, cfg);
  auto b = dgnc::model_forward(ds.subjects[0], params, cfg);
  EXPECT_EQ(a.values(), b.values());
}

TEST(ModelForward, FullPipelineGradCheck) {
  auto cfg = tiny_config();
  auto params = ModelParams<double>::init(cfg, cfg.regions);
  auto ds = dgnc::synth_generate<double>(1, cfg.regions, cfg.timepoints, 1.0, 9, cfg.window_size);
  auto ws = dgnc::prepare_signal(ds.subjects[0], cfg);
  auto report = dgnc::grad_check<double>(
      [&] { return dgnc::cross_entropy(dgnc::forward_windows(ws, params, cfg), 1); },
      params.named());
  EXPECT_LT(report.max_rel_err, 1e-4) << report.worst_param << "[" << report.worst_index << "]";
}

TEST(ModelForward, NoDeadParameters) {
  auto cfg = tiny_config();
  auto params = ModelParams<double>::init(cfg, cfg.regions);
  auto dead = dgnc::dead_parameters(params, cfg);
  EXPECT_TRUE(dead.empty()) << (dead.empty() ? "" : dead.front());
}

TEST(Train, DeterministicHistoryAcrossRuns) {
  auto cfg = tiny_config();
  cfg.epochs = 4;
  cfg.batch_size = 2;
  cfg.val_fraction = 0.25;
  auto ds = dgnc::synth_generate<double>(8, cfg.regions, cfg.timepoints, 1.5, 21, cfg.window_size);
  auto r1 = dgnc::train(ds, cfg);
  auto r2 = dgnc::train(ds, cfg);
  ASSERT_EQ(r1.history.size(), r2.history.size());
  for (std::size_t e = 0; e < r1.history.size(); ++e) {
    EXPECT_EQ(std::memcmp(&r1.history[e], &r2.history[e], sizeof(dgnc::EpochRecord)), 0);
  }
  auto p1 = r1.params.named(), p2 = r2.params.named();
  for (std::size_t i = 0; i < p1.size(); ++i) {
    EXPECT_EQ(p1[i].second.values(), p2[i].second.values()) << p1[i].first;
  }
}

TEST(Train, LossDecreasesOnTinyOverfit) {
  auto cfg = tiny_config();
  cfg.epochs = 30;
  cfg.batch_size = 4;
  cfg.val_fraction = 0.0;
  cfg.lr = 0.003;
  auto ds = dgnc::synth_generate<double>(4, cfg.regions, cfg.timepoints * 2, 2.0, 33,
                                         cfg.window_size);
  auto res = dgnc::train(ds, cfg);
  EXPECT_LT(res.history.back().train_loss, 0.5 * res.history.front().train_loss);
}

TEST(Train, EmptySplitRejected) {
  auto cfg = tiny_config();
  dgnc::LabeledDataset<double> ds;
  EXPECT_THROW(dgnc::train(ds, cfg), dgnc::ContractError);
}

TEST(Train, ForcedPlateauShowsFactorDropInHistory) {
  auto cfg = tiny_config();
  cfg.epochs = 8;
  cfg.min_improvement = 1e9;  // nothing ever counts as improvement
  cfg.val_fraction = 0.0;
  auto ds = dgnc::synth_generate<double>(4, cfg.regions, cfg.timepoints, 1.0, 41, cfg.window_size);
  auto res = dgnc::train(ds, cfg);
  EXPECT_DOUBLE_EQ(res.history[5].lr, cfg.lr);         // counter = 5 at epoch 6
  EXPECT_DOUBLE_EQ(res.history[6].lr, cfg.lr * 0.1);   // counter exceeds patience at epoch 7
  EXPECT_DOUBLE_EQ(res.history[7].lr, cfg.lr * 0.1);
}

TEST(Evaluate, UntrainedModelNearChanceOverSeeds) {
  auto cfg = tiny_config();
  auto ds = dgnc::synth_generate<double>(32, cfg.regions, cfg.timepoints, 1.0, 55,
                                         cfg.window_size, 0.0);
  double acc = 0;
  const int seeds = 8;
  for (int s = 0; s < seeds; ++s) {
    Config c = cfg;
    c.seed = 100 + s;
    auto params = ModelParams<double>::init(c, c.regions);
    acc += dgnc::evaluate(params, ds, ds.test_indices, c).accuracy;
  }
  acc /= seeds;
  EXPECT_GT(acc, 0.35);
  EXPECT_LT(acc, 0.65);
}

TEST(Evaluate, DeterministicAndRejectsEmptySplit) {
  auto cfg = tiny_config();
  auto params = ModelParams<double>::init(cfg, cfg.regions);
  auto ds = dgnc::synth_generate<double>(6, cfg.regions, cfg.timepoints, 1.0, 77, cfg.window_size,
                                         0.5);
  auto m1 = dgnc::evaluate(params, ds, ds.train_indices, cfg);
  auto m2 = dgnc::evaluate(params, ds, ds.train_indices, cfg);
  EXPECT_EQ(m1.accuracy, m2.accuracy);
  EXPECT_EQ(m1.auc, m2.auc);
  EXPECT_EQ(m1.recall, m2.recall);
  EXPECT_EQ(m1.precision, m2.precision);
  EXPECT_THROW(dgnc::evaluate(params, ds, {}, cfg), dgnc::ContractError);
}

TEST(Checkpoint, RoundTripRestoresExactValues) {
  testutil::ScratchDir dir("ckpt");
  auto cfg = tiny_config();
  auto params = ModelParams<double>::init(cfg, cfg.regions);
  const std::string path = (dir.path() / "model.ckpt").string();
  dgnc::save_checkpoint(path, cfg, params.named());
  auto loaded = dgnc::load_checkpoint(path);
  auto restored = dgnc::restore_model<double>(loaded, path);
  auto a = params.named(), b = restored.named();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].second.values(), b[i].second.values()) << a[i].first;
  }
  // identical saves are byte-identical
  const std::string path2 = (dir.path() / "model2.ckpt").string();
  dgnc::save_checkpoint(path2, cfg, params.named());
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  EXPECT_EQ(c1, c2);
}

TEST(Checkpoint, ShapeMismatchRejected) {
  testutil::ScratchDir dir("ckpt_mismatch");
  auto cfg = tiny_config();
  auto params = ModelParams<double>::init(cfg, cfg.regions);
  const std::string path = (dir.path() / "model.ckpt").string();
  // save under a config that claims a different region count
  Config other = cfg;
  other.regions = cfg.regions + 2;
  dgnc::save_checkpoint(path, other, params.named());
  auto loaded = dgnc::load_checkpoint(path);
  EXPECT_THROW(dgnc::restore_model<double>(loaded, path), dgnc::CheckpointError);
}

TEST(Train, FloatModeRunsEndToEnd) {
  // reduced-precision training mode: the whole pipeline instantiated for float
  dgnc::Config cfg = tiny_config();
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.val_fraction = 0.0;
  auto ds = dgnc::synth_generate<float>(4, cfg.regions, cfg.timepoints, 1.0, 5, cfg.window_size);
  auto res = dgnc::train(ds, cfg);
  ASSERT_EQ(res.history.size(), 2u);
  for (const auto& rec : res.history) EXPECT_TRUE(std::isfinite(rec.train_loss));
  auto m = dgnc::evaluate(res.params, ds, ds.train_indices, cfg);
  EXPECT_GE(m.accuracy, 0.0);
  EXPECT_LE(m.accuracy, 1.0);
}

TEST(Train, DistinctTapesOnDistinctThreadsMatchSerial) {
  // model replicas with their own tapes may run concurrently; results must
  // be bit-identical to the single-threaded computation
  auto cfg = tiny_config();
  auto ds = dgnc::synth_generate<double>(2, cfg.regions, cfg.timepoints, 1.0, 31, cfg.window_size);
  auto grads_for = [&](std::size_t subject) {
    auto params = ModelParams<double>::init(cfg, cfg.regions);
    dgnc::Tape<double> tape;
    auto loss = dgnc::cross_entropy(dgnc::model_forward(ds.subjects[subject], params, cfg),
                                    ds.labels[subject]);
    tape.backward(loss);
    std::vector<std::vector<double>> grads;
    for (auto& [name, p] : params.named()) grads.push_back(p.node()->grad);
    return grads;
  };
  auto serial0 = grads_for(0);
  auto serial1 = grads_for(1);
  std::vector<std::vector<double>> threaded0, threaded1;
  std::thread t0([&] { threaded0 = grads_for(0); });
  std::thread t1([&] { threaded1 = grads_for(1); });
  t0.join();
  t1.join();
  EXPECT_EQ(serial0, threaded0);
  EXPECT_EQ(serial1, threaded1);
}

TEST(Checkpoint, BadMagicRejected) {
  testutil::ScratchDir dir("ckpt_magic");
  const std::string path = (dir.path() / "bogus.ckpt").string();
  std::ofstream f(path, std::ios::binary);
  f << "NOTDG" << std::string(64, '\0');
  f.close();
  EXPECT_THROW(dgnc::load_checkpoint(path), dgnc::CheckpointError);
}

}  // namespace
