#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "dgnc/tensor.hpp"
#include "testutil.hpp"

using dgnc::Tensor;
using dgnc::Tape;

namespace {

using T = Tensor<double>;

T mat(std::size_t r, std::size_t c, std::vector<double> v, bool rg = false) {
  return T::from_data({r, c}, std::move(v), rg);
}

TEST(Matmul, IdentityCase) {
  auto y = dgnc::matmul(T::identity(2), mat(2, 2, {1, 2, 3, 4}));
  EXPECT_EQ(y.values(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, HandExpandedProducts) {
  // [[1,2],[3,4]] x [[5,6],[7,8]]: row-by-column dot products give
  // [1*5+2*7, 1*6+2*8; 3*5+4*7, 3*6+4*8] = [[19,22],[43,50]].
  auto y = dgnc::matmul(mat(2, 2, {1, 2, 3, 4}), mat(2, 2, {5, 6, 7, 8}));
  EXPECT_EQ(y.values(), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, ZeroAnnihilator) {
  dgnc::Rng rng(7);
  auto y = dgnc::matmul(T::zeros({2, 3}), testutil::random_tensor({3, 4}, rng));
  EXPECT_EQ(y.shape(), (std::vector<std::size_t>{2, 4}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    dgnc::matmul(T::zeros({2, 3}), T::zeros({4, 5}));
    FAIL() << "expected ShapeError";
  } catch (const dgnc::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[4x5]"), std::string::npos);
  }
}

TEST(Matmul, MatchesNaiveReference) {
  dgnc::Rng rng(11);
  auto a = testutil::random_tensor({3, 5}, rng);
  auto b = testutil::random_tensor({5, 4}, rng);
  auto c = dgnc::matmul(a, b);
  auto ref = testutil::naive_matmul(a.values(), b.values(), 3, 5, 4);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(c.values()[i], ref[i], 1e-12);
}

TEST(SoftmaxRows, UniformRow) {
  auto y = dgnc::softmax_rows(mat(1, 3, {0, 0, 0}));
  for (double v : y.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(SoftmaxRows, ClosedFormRow) {
  auto y = dgnc::softmax_rows(mat(1, 2, {0.0, std::log(2.0)}));
  EXPECT_NEAR(y.values()[0], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(y.values()[1], 2.0 / 3.0, 1e-12);
}

TEST(SoftmaxRows, LargeEntriesDoNotOverflow) {
  auto y = dgnc::softmax_rows(mat(1, 2, {1000.0, 1000.0}));
  EXPECT_NEAR(y.values()[0], 0.5, 1e-12);
  EXPECT_NEAR(y.values()[1], 0.5, 1e-12);
  for (double v : y.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(SoftmaxRows, RowsSumToOneProperty) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    dgnc::Rng rng(seed);
    auto x = testutil::random_tensor({6, 9}, rng, false, 30.0);
    auto y = dgnc::softmax_rows(x);
    for (std::size_t i = 0; i < 6; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < 9; ++j) {
        EXPECT_GE(y.at(i, j), 0.0);
        sum += y.at(i, j);
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Sigmoid, SymmetryPointAndSaturation) {
  auto y = dgnc::sigmoid(mat(1, 3, {0.0, 50.0, -50.0}));
  EXPECT_EQ(y.values()[0], 0.5);
  EXPECT_NEAR(y.values()[1], 1.0, 1e-12);
  // strictly inside (0,1) even when saturated
  EXPECT_LT(y.values()[1], 1.0);
  EXPECT_GT(y.values()[2], 0.0);
}

TEST(Sigmoid, OddSymmetry) {
  auto y = dgnc::sigmoid(mat(1, 2, {1.7, -1.7}));
  EXPECT_NEAR(y.values()[0] + y.values()[1], 1.0, 1e-12);
}

TEST(Sigmoid, StrictlyInsideUnitInterval) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    dgnc::Rng rng(seed);
    auto x = testutil::random_tensor({4, 4}, rng, false, 200.0);
    auto y = dgnc::sigmoid(x);
    for (double v : y.values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Elementwise, ReluDefinition) {
  auto y = dgnc::relu(mat(1, 3, {-1, 0, 2}));
  EXPECT_EQ(y.values(), (std::vector<double>{0, 0, 2}));
}

TEST(Elementwise, MeanOverRows) {
  auto y = dgnc::mean_over_axis(mat(2, 2, {2, 4, 6, 8}), 0);
  EXPECT_EQ(y.shape(), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(y.values(), (std::vector<double>{4, 6}));
}

TEST(Elementwise, MeanOverColumns) {
  auto y = dgnc::mean_over_axis(mat(2, 2, {2, 4, 6, 8}), 1);
  EXPECT_EQ(y.shape(), (std::vector<std::size_t>{2, 1}));
  EXPECT_EQ(y.values(), (std::vector<double>{3, 7}));
}

TEST(Elementwise, TransposeRoundTrip) {
  auto x = mat(2, 3, {1, 2, 3, 4, 5, 6});
  auto t = dgnc::transpose(x);
  EXPECT_EQ(t.shape(), (std::vector<std::size_t>{3, 2}));
  EXPECT_EQ(t.values(), (std::vector<double>{1, 4, 2, 5, 3, 6}));
  EXPECT_EQ(dgnc::transpose(t).values(), x.values());
}

TEST(Elementwise, ConcatBothAxes) {
  auto a = mat(1, 2, {1, 2});
  auto b = mat(1, 2, {3, 4});
  auto rows = dgnc::concat<double>({a, b}, 0);
  EXPECT_EQ(rows.shape(), (std::vector<std::size_t>{2, 2}));
  EXPECT_EQ(rows.values(), (std::vector<double>{1, 2, 3, 4}));
  auto cols = dgnc::concat<double>({a, b}, 1);
  EXPECT_EQ(cols.shape(), (std::vector<std::size_t>{1, 4}));
  EXPECT_EQ(cols.values(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Elementwise, LayerNormConstantRowIsZero) {
  auto gain = T::filled({3}, 1.0);
  auto bias = T::zeros({3});
  auto y = dgnc::layer_norm(mat(1, 3, {5, 5, 5}), gain, bias);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Elementwise, LayerNormNormalizesRows) {
  dgnc::Rng rng(3);
  auto x = testutil::random_tensor({4, 8}, rng);
  auto y = dgnc::layer_norm(x, T::filled({8}, 1.0), T::zeros({8}));
  for (std::size_t i = 0; i < 4; ++i) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < 8; ++j) mean += y.at(i, j);
    mean /= 8;
    for (std::size_t j = 0; j < 8; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
    var /= 8;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-3);  // epsilon shifts variance slightly below 1
  }
}

TEST(Elementwise, ShapeMismatchErrors) {
  EXPECT_THROW(dgnc::add(T::zeros({2, 2}), T::zeros({2, 3})), dgnc::ShapeError);
  EXPECT_THROW(dgnc::mul(T::zeros({2, 2}), T::zeros({3, 2})), dgnc::ShapeError);
  EXPECT_THROW(dgnc::add_rowvec(T::zeros({2, 2}), T::zeros({3})), dgnc::ShapeError);
}

// --- backward ---------------------------------------------------------------

TEST(Backward, LinearMap) {
  auto x = mat(1, 3, {1, 2, 3}, true);
  Tape<double> tape;
  auto loss = dgnc::sum_all(dgnc::scale(x, 2.0));
  tape.backward(loss);
  EXPECT_EQ(x.grad(), (std::vector<double>{2, 2, 2}));
}

TEST(Backward, Quadratic) {
  auto x = mat(1, 1, {3}, true);
  Tape<double> tape;
  auto loss = dgnc::sum_all(dgnc::mul(x, x));
  tape.backward(loss);
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, NonScalarLossRejected) {
  auto x = mat(1, 2, {1, 2}, true);
  Tape<double> tape;
  auto y = dgnc::scale(x, 2.0);
  EXPECT_THROW(tape.backward(y), dgnc::ContractError);
}

TEST(Backward, EmptyTapeRejected) {
  Tape<double> tape;
  EXPECT_THROW(tape.backward(T::scalar(1.0)), dgnc::ContractError);
}

TEST(Backward, FanOutSumsBothPaths) {
  // x used twice: loss = sum(x*a) + sum(x*b). Gradient must equal the sum of
  // the two single-use gradients a and b.
  auto x = mat(1, 3, {0.5, -1.0, 2.0}, true);
  auto a = mat(1, 3, {1, 2, 3});
  auto b = mat(1, 3, {10, 20, 30});
  {
    Tape<double> tape;
    auto loss = dgnc::add(dgnc::sum_all(dgnc::mul(x, a)), dgnc::sum_all(dgnc::mul(x, b)));
    tape.backward(loss);
  }
  EXPECT_EQ(x.grad(), (std::vector<double>{11, 22, 33}));

  // single-use decomposition
  auto x2 = mat(1, 3, {0.5, -1.0, 2.0}, true);
  {
    Tape<double> tape;
    auto loss = dgnc::sum_all(dgnc::mul(x2, a));
    tape.backward(loss);
  }
  std::vector<double> first = x2.grad();
  x2.zero_grad();
  {
    Tape<double> tape;
    auto loss = dgnc::sum_all(dgnc::mul(x2, b));
    tape.backward(loss);
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(x.grad()[i], first[i] + x2.grad()[i]);
}

TEST(Backward, FrozenTensorNeverAccumulates) {
  auto x = mat(1, 2, {1, 2}, true);
  auto w = mat(1, 2, {3, 4});  // requires_grad = false
  Tape<double> tape;
  auto loss = dgnc::sum_all(dgnc::mul(x, w));
  tape.backward(loss);
  EXPECT_TRUE(w.grad().empty());
  EXPECT_EQ(x.grad(), (std::vector<double>{3, 4}));
}

TEST(Backward, MatchesIndependentFiniteDifference) {
  // Keeps the library grad_check honest on one composite: FD computed here
  // with plain doubles, no library harness involved.
  dgnc::Rng rng(5);
  auto w = testutil::random_tensor({3, 3}, rng, true);
  auto x = testutil::random_tensor({2, 3}, rng);
  auto run = [&]() {
    auto h = dgnc::softmax_rows(dgnc::matmul(x, w));
    return dgnc::sum_all(dgnc::mul(h, h));
  };
  {
    Tape<double> tape;
    auto loss = run();
    tape.backward(loss);
  }
  const double h = 1e-3;
  for (std::size_t i = 0; i < w.numel(); ++i) {
    const double keep = w.values()[i];
    double fp, fm;
    {
      dgnc::NoGradScope off;
      w.values()[i] = keep + h;
      fp = run().values()[0];
      w.values()[i] = keep - h;
      fm = run().values()[0];
      w.values()[i] = keep;
    }
    const double numeric = (fp - fm) / (2 * h);
    EXPECT_NEAR(w.grad()[i], numeric, 1e-6);
  }
}

// --- grad_check harness ------------------------------------------------------

TEST(GradCheck, MatmulSoftmaxChain) {
  dgnc::Rng rng(17);
  auto w = testutil::random_tensor({4, 4}, rng, true);
  auto x = testutil::random_tensor({3, 4}, rng);
  auto report = dgnc::grad_check<double>(
      [&] {
        auto y = dgnc::softmax_rows(dgnc::matmul(x, w));
        return dgnc::sum_all(dgnc::mul(y, y));
      },
      {{"w", w}});
  EXPECT_LT(report.max_rel_err, 1e-4);
}

TEST(GradCheck, EveryOpOverTenSeeds) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    dgnc::Rng rng(seed);
    auto a = testutil::random_tensor({3, 4}, rng, true);
    auto b = testutil::random_tensor({3, 4}, rng, true);
    auto w = testutil::random_tensor({4, 3}, rng, true);
    auto rowv = testutil::random_tensor({4}, rng, true);
    auto colv = testutil::random_tensor({3}, rng, true);
    auto gain = testutil::random_tensor({4}, rng, true);
    auto bias = testutil::random_tensor({4}, rng, true);
    auto pos = testutil::random_tensor({3, 4}, rng, true);
    for (auto& v : pos.values()) v = std::abs(v) + 0.5;  // rsqrt domain

    auto scalarize = [](const Tensor<double>& y) {
      return dgnc::sum_all(dgnc::mul(y, y));
    };
    std::vector<std::pair<std::string, std::function<Tensor<double>()>>> cases = {
        {"matmul", [&] { return scalarize(dgnc::matmul(a, w)); }},
        {"softmax_rows", [&] { return scalarize(dgnc::softmax_rows(a)); }},
        {"sigmoid", [&] { return scalarize(dgnc::sigmoid(a)); }},
        {"add", [&] { return scalarize(dgnc::add(a, b)); }},
        {"sub", [&] { return scalarize(dgnc::sub(a, b)); }},
        {"mul", [&] { return scalarize(dgnc::mul(a, b)); }},
        {"scale", [&] { return scalarize(dgnc::scale(a, -1.7)); }},
        {"relu", [&] { return scalarize(dgnc::relu(a)); }},
        {"rsqrt", [&] { return scalarize(dgnc::rsqrt(pos)); }},
        {"transpose", [&] { return scalarize(dgnc::transpose(a)); }},
        {"mean_axis0", [&] { return scalarize(dgnc::mean_over_axis(a, 0)); }},
        {"mean_axis1", [&] { return scalarize(dgnc::mean_over_axis(a, 1)); }},
        {"sum_axis0", [&] { return scalarize(dgnc::sum_over_axis(a, 0)); }},
        {"scale_rows", [&] { return scalarize(dgnc::scale_rows(a, colv)); }},
        {"scale_cols", [&] { return scalarize(dgnc::scale_cols(a, rowv)); }},
        {"add_rowvec", [&] { return scalarize(dgnc::add_rowvec(a, rowv)); }},
        {"concat0", [&] { return scalarize(dgnc::concat<double>({a, b}, 0)); }},
        {"concat1", [&] { return scalarize(dgnc::concat<double>({a, b}, 1)); }},
        {"layer_norm", [&] { return scalarize(dgnc::layer_norm(a, gain, bias)); }},
    };
    std::vector<std::pair<std::string, Tensor<double>>> params = {
        {"a", a}, {"b", b}, {"w", w}, {"rowv", rowv}, {"colv", colv},
        {"gain", gain}, {"bias", bias}, {"pos", pos}};
    for (auto& [name, f] : cases) {
      auto report = dgnc::grad_check<double>(f, params);
      EXPECT_LT(report.max_rel_err, 1e-4)
          << "op " << name << " seed " << seed << " worst " << report.worst_param;
    }
  }
}

TEST(GradCheck, FrozenTensorSkipped) {
  dgnc::Rng rng(23);
  auto w = testutil::random_tensor({3, 3}, rng, true);
  auto frozen = testutil::random_tensor({3, 3}, rng, false);
  auto x = testutil::random_tensor({2, 3}, rng);
  auto report = dgnc::grad_check<double>(
      [&] { return dgnc::sum_all(dgnc::matmul(dgnc::matmul(x, frozen), w)); },
      {{"w", w}, {"frozen", frozen}});
  EXPECT_LT(report.max_rel_err, 1e-4);
  EXPECT_EQ(report.checked_entries, w.numel());  // only w probed
}

TEST(GradCheck, CatchesInjectedWrongAdjoint) {
  dgnc::Rng rng(29);
  auto w = testutil::random_tensor({3, 3}, rng, true);
  auto x = testutil::random_tensor({2, 3}, rng);
  dgnc::FaultInjection::sigmoid_adjoint_scale = 1.5;
  auto report = dgnc::grad_check<double>(
      [&] {
        auto y = dgnc::sigmoid(dgnc::matmul(x, w));
        return dgnc::sum_all(dgnc::mul(y, y));
      },
      {{"w", w}});
  dgnc::FaultInjection::reset();
  EXPECT_GT(report.max_rel_err, 1e-4);
  EXPECT_EQ(report.worst_param, "w");
}

TEST(Determinism, ForwardBitIdenticalAcrossRuns) {
  dgnc::Rng rng(31);
  auto x = testutil::random_tensor({5, 7}, rng);
  auto w = testutil::random_tensor({7, 6}, rng);
  auto run = [&] {
    return dgnc::softmax_rows(dgnc::matmul(x, w)).values();
  };
  auto first = run();
  auto second = run();
  ASSERT_EQ(first.size(), second.size());
  EXPECT_EQ(0, std::memcmp(first.data(), second.data(), first.size() * sizeof(double)));
}

TEST(Precision, FloatModeCompiles) {
  // 32-bit training mode: the whole engine instantiates for float.
  using Tf = Tensor<float>;
  auto x = Tf::from_data({2, 2}, {1.f, 2.f, 3.f, 4.f}, true);
  Tape<float> tape;
  auto loss = dgnc::sum_all(dgnc::mul(dgnc::sigmoid(x), x));
  tape.backward(loss);
  EXPECT_EQ(x.grad().size(), 4u);
  EXPECT_TRUE(std::isfinite(x.grad()[0]));
}

}  // namespace
