#include <gtest/gtest.h>

#include <filesystem>

#include "sparsepose/motiongen.hpp"
#include "sparsepose/online.hpp"
#include "sparsepose/pipeline.hpp"
#include "test_util.hpp"

using namespace sparsepose;
using namespace sparsepose::net;

namespace {

Matrix<double> random_inputs(int steps, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  return Matrix<double>::NullaryExpr(steps, kInputDim, [&](Eigen::Index, Eigen::Index) { return n(rng); });
}

std::vector<Pose> random_poses(int steps, std::mt19937_64& rng) {
  std::vector<Pose> out;
  for (int t = 0; t < steps; ++t) out.push_back(sptest::random_pose(rng, 40));
  return out;
}

ModelConfig toy(int embed = 8, int hidden = 8, int layers = 2) {
  ModelConfig c = ModelConfig::toy(embed, hidden);
  c.layers = layers;
  return c;
}

}  // namespace

TEST(ParameterCount, DefaultConfiguration) {
  const ModelConfig c;
  EXPECT_EQ(parameter_count(c), 10'680'976u);
  // embed, LSTM layer 1, LSTM layer 2, head
  EXPECT_EQ(parameter_count(c), 31'232u + 4'202'496u + 6'299'648u + 147'600u);
  EXPECT_EQ(ModelWeights<float>::zeros(c).parameter_count(), 10'680'976u);
}

TEST(ParameterCount, FormulaMatchesAllocatedTensors) {
  for (int layers : {1, 2, 3})
    for (bool bi : {false, true})
      for (int h : {4, 17}) {
        ModelConfig c = toy(9, h, layers);
        c.bidirectional = bi;
        const auto w = ModelWeights<double>::zeros(c);
        std::size_t allocated = 0;
        for (const auto* t : w.tensors()) allocated += static_cast<std::size_t>(t->size());
        EXPECT_EQ(parameter_count(c), allocated);
      }
}

TEST(Forward, ZeroWeightsGiveHeadBias) {
  auto w = ModelWeights<double>::zeros(toy());
  std::mt19937_64 rng(1);
  w.head_b = Matrix<double>::Random(kPoseDim, 1);
  const Matrix<double> out = forward(w, random_inputs(7, rng));
  for (Eigen::Index t = 0; t < out.rows(); ++t) EXPECT_EQ(out.row(t), w.head_b.col(0).transpose());
}

TEST(Forward, ShapeMismatchThrows) {
  const auto w = ModelWeights<double>::zeros(toy());
  EXPECT_THROW(forward(w, Matrix<double>(Matrix<double>::Zero(5, 59))), ShapeMismatch);
  EXPECT_THROW(forward(w, Matrix<double>(0, kInputDim)), ShapeMismatch);
}

TEST(Forward, ReversedInputSwapsDirections) {
  const ModelConfig c = toy(8, 8, 1);
  const auto w = ModelWeights<double>::initialize(c, 2);
  auto swapped = w;
  std::swap(swapped.lstm[0], swapped.lstm[1]);
  std::mt19937_64 rng(3);
  const int steps = 9;
  const Matrix<double> x = random_inputs(steps, rng);
  const Matrix<double> xr = x.colwise().reverse();
  Activations<double> a, b;
  forward_batch(w, Matrix<double>(x.transpose()), steps, 1, a);
  forward_batch(swapped, Matrix<double>(xr.transpose()), steps, 1, b);
  for (int t = 0; t < steps; ++t) {
    EXPECT_LT((b.dirs[0].hidden.col(t) - a.dirs[1].hidden.col(steps - 1 - t)).norm(), 1e-12);
    EXPECT_LT((b.dirs[1].hidden.col(t) - a.dirs[0].hidden.col(steps - 1 - t)).norm(), 1e-12);
  }
}

TEST(Forward, DirectionalCausality) {
  const auto w = ModelWeights<double>::initialize(toy(), 4);
  std::mt19937_64 rng(5);
  const int steps = 10, k = 5;
  const Matrix<double> x = random_inputs(steps, rng);
  Matrix<double> future_zeroed = x, past_zeroed = x;
  future_zeroed.bottomRows(steps - k - 1).setZero();
  past_zeroed.topRows(k).setZero();
  Activations<double> a, f, p;
  forward_batch(w, Matrix<double>(x.transpose()), steps, 1, a);
  forward_batch(w, Matrix<double>(future_zeroed.transpose()), steps, 1, f);
  forward_batch(w, Matrix<double>(past_zeroed.transpose()), steps, 1, p);
  for (int t = 0; t < steps; ++t) {
    if (t <= k) EXPECT_EQ(a.dirs[0].hidden.col(t), f.dirs[0].hidden.col(t)) << t;
    if (t >= k) EXPECT_EQ(a.dirs[1].hidden.col(t), p.dirs[1].hidden.col(t)) << t;
  }
  EXPECT_NE(a.dirs[1].hidden.col(0), f.dirs[1].hidden.col(0));
}

TEST(Forward, MaskedSlotsContributeNothing) {
  const auto w = ModelWeights<double>::initialize(toy(), 6);
  const auto frames = synthesize_imu(generate_motion(MotionKind::Walk, 1.0, 1), default_skeleton());
  std::vector<ImuFrame> other = frames;
  for (auto& f : other) f[Location::LeftPocket].accel += Vec3(5, -3, 1);
  const LocationMask mask = LocationMask::of({Location::Head, Location::RightWrist});
  Matrix<double> xa(frames.size(), kInputDim), xb(frames.size(), kInputDim);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    xa.row(t) = scale_and_flatten(frames[t], mask).transpose();
    xb.row(t) = scale_and_flatten(other[t], mask).transpose();
  }
  EXPECT_EQ(forward(w, xa), forward(w, xb));
}

TEST(Loss, ZeroAtGroundTruthAndNonNegative) {
  const Skeleton skel = default_skeleton();
  std::mt19937_64 rng(7);
  const auto gt = random_poses(4, rng);
  Matrix<double> pred(4, kPoseDim);
  for (int t = 0; t < 4; ++t) pred.row(t) = encode_pose(gt[t]).transpose();
  EXPECT_NEAR(loss(pred, gt, skel), 0.0, 1e-20);
  std::normal_distribution<double> n(0.0, 0.3);
  for (int k = 0; k < 20; ++k) {
    const Matrix<double> noisy = pred + Matrix<double>::NullaryExpr(4, kPoseDim, [&](Eigen::Index, Eigen::Index) { return n(rng); });
    EXPECT_GT(loss(noisy, gt, skel), 0.0);
  }
}

TEST(Loss, LeafChannelPerturbationIsPurelyQuadratic) {
  // A leaf joint's rotation moves no joint position, so only the 6D term changes.
  const Skeleton skel = default_skeleton();
  std::mt19937_64 rng(8);
  const int steps = 3;
  const auto gt = random_poses(steps, rng);
  Matrix<double> pred(steps, kPoseDim);
  for (int t = 0; t < steps; ++t) pred.row(t) = encode_pose(gt[t]).transpose();
  pred += 0.01 * Matrix<double>::Random(steps, kPoseDim);
  const double base = loss(pred, gt, skel);
  const int channel = 6 * joint::kLeftHand + 1;
  for (double eps : {1e-3, 1e-2, 0.1}) {
    Matrix<double> p = pred;
    p(1, channel) += eps;
    const double d = pred(1, channel) - encode_pose(gt[1])[channel];
    const double analytic = ((d + eps) * (d + eps) - d * d) / (steps * kPoseDim);
    EXPECT_NEAR(loss(p, gt, skel) - base, analytic, 1e-8);
  }
}

TEST(Backward, MatchesCentralDifferences) {
  const ModelConfig c = toy(8, 8, 2);
  const Skeleton skel = default_skeleton();
  std::mt19937_64 rng(9);
  auto w = ModelWeights<double>::initialize(c, 10);
  const Matrix<double> x = random_inputs(6, rng);
  const auto gt = random_poses(6, rng);
  const auto [l, grad] = loss_and_gradient(w, x, gt, skel);
  EXPECT_NEAR(l, loss(forward(w, x), gt, skel), 1e-12);
  const double h = 1e-4;
  double worst = 0.0;
  auto params = w.tensors();
  const auto grads = grad.tensors();
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (Eigen::Index i = 0; i < params[k]->size(); ++i) {
      double& v = params[k]->data()[i];
      const double saved = v;
      v = saved + h;
      const double lp = loss(forward(w, x), gt, skel);
      v = saved - h;
      const double lm = loss(forward(w, x), gt, skel);
      v = saved;
      const double numeric = (lp - lm) / (2 * h);
      const double analytic = grads[k]->data()[i];
      worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6}));
    }
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Backward, ZeroNetworkHasZeroHeadWeightGradient) {
  const ModelConfig c = toy();
  auto w = ModelWeights<double>::zeros(c);
  w.head_b = encode_pose(Pose::identity());
  std::mt19937_64 rng(11);
  const auto [l, grad] = loss_and_gradient(w, Matrix<double>::Zero(5, kInputDim), random_poses(5, rng), default_skeleton());
  EXPECT_GT(l, 0.0);
  EXPECT_TRUE(grad.head_w.isZero(0.0));
  EXPECT_FALSE(grad.head_b.isZero(0.0));
}

TEST(Backward, MaskedChannelsGiveZeroEmbedColumns) {
  const auto w = ModelWeights<double>::initialize(toy(), 12);
  std::mt19937_64 rng(13);
  Matrix<double> x = random_inputs(6, rng);
  for (Location l : {Location::LeftPocket, Location::Head}) x.middleCols(12 * index_of(l), 12).setZero();
  const auto [l, grad] = loss_and_gradient(w, x, random_poses(6, rng), default_skeleton());
  for (int col = 0; col < kInputDim; ++col) {
    const bool masked = (col / 12 == index_of(Location::LeftPocket)) || (col / 12 == index_of(Location::Head));
    EXPECT_EQ(grad.embed_w.col(col).isZero(0.0), masked) << col;
  }
}

TEST(Train, OverfitsSingleWindow) {
  const Skeleton skel = default_skeleton();
  const ImuDataset ds = synthesize_dataset(generate_motion(MotionKind::Walk, 2.0, 3), skel, LocationMask::all());
  const auto data = training_sequences(ds);
  TrainConfig cfg;
  cfg.batch = 1;
  cfg.lr = 3e-3;
  cfg.epochs = 1000;
  cfg.max_steps = 200;
  cfg.seed = 1;
  const auto r = train<double>(std::span<const TrainingSequence>(data), toy(32, 32), cfg, skel);
  ASSERT_EQ(r.steps, 200);
  EXPECT_LE(r.step_loss.back() * 100.0, r.step_loss.front());
}

TEST(Train, DeterministicAndFinite) {
  const Skeleton skel = default_skeleton();
  const ImuDataset ds = synthesize_dataset(generate_motion(MotionKind::ArmSwing, 3.0, 4), skel);
  const auto data = training_sequences(ds);
  TrainConfig cfg;
  cfg.batch = 8;
  cfg.window = 25;
  cfg.epochs = 2;
  cfg.seed = 5;
  const auto a = train<float>(std::span<const TrainingSequence>(data), toy(), cfg, skel);
  const auto b = train<float>(std::span<const TrainingSequence>(data), toy(), cfg, skel);
  EXPECT_EQ(a.epoch_loss.size(), 2u);
  EXPECT_EQ(a.step_loss, b.step_loss);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  for (double v : a.step_loss) EXPECT_TRUE(std::isfinite(v));
  cfg.seed = 6;
  const auto c = train<float>(std::span<const TrainingSequence>(data), toy(), cfg, skel);
  EXPECT_NE(a.step_loss, c.step_loss);
}

TEST(Train, EmptyDatasetThrows) {
  std::vector<TrainingSequence> none;
  EXPECT_THROW(train<float>(std::span<const TrainingSequence>(none), toy(), TrainConfig{}, default_skeleton()), EmptyDataset);
}

TEST(Windows, NonOverlappingChunks) {
  std::mt19937_64 rng(14);
  std::vector<TrainingSequence> data = {{random_inputs(300, rng), random_poses(300, rng)},
                                        {random_inputs(40, rng), random_poses(40, rng)}};
  const auto windows = make_windows(std::span<const TrainingSequence>(data), 125, default_skeleton());
  ASSERT_EQ(windows.size(), 3u);  // 2 full windows, short tail dropped, short sequence kept whole
  EXPECT_EQ(windows[0].steps, 125);
  EXPECT_EQ(windows[1].inputs.col(0), data[0].inputs.row(125).transpose());
  EXPECT_EQ(windows[2].steps, 40);
}

TEST(Online, MatchesForwardOnWindow) {
  const auto w = ModelWeights<double>::initialize(toy(), 15);
  std::mt19937_64 rng(16);
  const int window = 10;
  const Matrix<double> x = random_inputs(25, rng);
  OnlineEstimator<double> est(w, window);
  for (int t = 0; t < 25; ++t) {
    const PoseVector out = est.push_raw(x.row(t).transpose());
    Matrix<double> win = Matrix<double>::Zero(window, kInputDim);
    for (int s = 0; s < window; ++s)
      if (t - window + 1 + s >= 0) win.row(s) = x.row(t - window + 1 + s);
    EXPECT_LT((out - forward(w, win).row(window - 1).transpose()).norm(), 1e-12) << t;
  }
}

TEST(Online, ConstantInputGivesConstantOutput) {
  const auto w = ModelWeights<double>::initialize(toy(), 17);
  std::mt19937_64 rng(18);
  const InputVector x = random_inputs(1, rng).row(0).transpose();
  OnlineEstimator<double> est(w, 8);
  for (int t = 0; t < 8; ++t) est.push_raw(x);
  const PoseVector steady = est.push_raw(x);
  for (int t = 0; t < 5; ++t) EXPECT_EQ(est.push_raw(x), steady);
}

TEST(Online, BatchedPredictionEqualsTickByTick) {
  const auto w = ModelWeights<double>::initialize(toy(), 19);
  std::mt19937_64 rng(20);
  const Matrix<double> x = random_inputs(30, rng);
  const Matrix<double> batched = predict_online(w, x, 12, 7);
  OnlineEstimator<double> est(w, 12);
  for (int t = 0; t < 30; ++t) EXPECT_LT((batched.row(t).transpose() - est.push_raw(x.row(t).transpose())).norm(), 1e-12);
}

TEST(Online, FastPathTracksExactPath) {
  for (int layers : {1, 2}) {
    const auto w = ModelWeights<float>::initialize(toy(24, 24, layers), 21);
    std::mt19937_64 rng(22);
    const Matrix<double> x = random_inputs(60, rng, 0.5);
    OnlineEstimator<float> exact(w, 20);
    FastOnlineEstimator fast(w, 20);
    double worst = 0.0;
    for (int t = 0; t < 60; ++t)
      worst = std::max(worst, (exact.push_raw(x.row(t).transpose()) - fast.push_raw(x.row(t).transpose())).cwiseAbs().maxCoeff());
    EXPECT_LT(worst, 1e-4) << layers;
    fast.reset();
    exact.reset();
    EXPECT_LT((exact.push_raw(x.row(0).transpose()) - fast.push_raw(x.row(0).transpose())).cwiseAbs().maxCoeff(), 1e-4);
  }
}

TEST(WeightFile, RoundTripAndRejection) {
  const ModelConfig c = toy(6, 5);
  const auto w = ModelWeights<float>::initialize(c, 23);
  const auto bytes = encode_weights(w);
  const auto back = decode_weights<float>(bytes, &c);
  const auto a = w.tensors();
  const auto b = back.tensors();
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(*a[k], *b[k]);

  auto corrupt = bytes;
  corrupt[corrupt.size() / 2] ^= 0x10;
  EXPECT_THROW(decode_weights<float>(corrupt), FormatError);
  EXPECT_THROW(decode_weights<float>(std::span(bytes).first(bytes.size() - 1)), FormatError);
  const ModelConfig other = toy(6, 6);
  EXPECT_THROW(decode_weights<float>(bytes, &other), ShapeMismatch);

  const auto path = std::filesystem::temp_directory_path() / "sparsepose_weights_test.spnw";
  save_weights(path.string(), w);
  EXPECT_EQ(load_weights<float>(path.string()).head_b, w.head_b);
  std::filesystem::remove(path);
}
