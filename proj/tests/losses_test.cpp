#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mpnet/gradcheck.hpp"
#include "mpnet/losses.hpp"
#include "mpnet/model.hpp"

using namespace mpnet;

namespace {

LabeledBatch batch_of(std::vector<int> semantic, std::vector<int> instance,
                      const Tensor& coords) {
  Block b;
  b.points = Tensor(coords.rows, 6);
  for (int i = 0; i < coords.rows; ++i)
    for (int j = 0; j < 3; ++j) b.points.at(i, j) = coords.at(i, j);
  b.semantic = std::move(semantic);
  b.instance = std::move(instance);
  b.scene_indices.resize(b.semantic.size());
  return LabeledBatch::from_block(b);
}

Block random_block(int n, int classes, int instances, std::mt19937_64& rng) {
  Block b;
  b.points = Tensor(n, 6);
  std::uniform_real_distribution<double> coord(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, classes - 1);
  std::uniform_int_distribution<int> ins(0, instances - 1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 6; ++j) b.points.at(i, j) = coord(rng);
    b.semantic.push_back(cls(rng));
    b.instance.push_back(ins(rng) * 17 + 3);  // sparse raw ids
  }
  for (int k = 0; k < instances; ++k) b.instance[k % n] = k * 17 + 3;
  b.scene_indices.resize(n);
  return b;
}

}  // namespace

TEST(LabeledBatch, DensifiesInFirstAppearanceOrder) {
  Tensor coords = Tensor::from_rows(
      {{0, 0, 0}, {2, 0, 0}, {1, 1, 1}, {4, 0, 0}, {3, 3, 3}});
  LabeledBatch lb = batch_of({0, 1, 0, 1, 0}, {9, 4, 9, 4, 7}, coords);
  EXPECT_EQ(lb.num_instances, 3);
  EXPECT_EQ(lb.instance, (std::vector<int>{0, 1, 0, 1, 2}));
  // centroid of raw id 9 = mean of rows 0 and 2
  EXPECT_DOUBLE_EQ(lb.centroids.at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(lb.centroids.at(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(lb.centroids.at(1, 0), 3.0);
  EXPECT_DOUBLE_EQ(lb.centroids.at(2, 0), 3.0);
  EXPECT_EQ(lb.instance_sizes(), (std::vector<int>{2, 2, 1}));
}

TEST(Squash, NormIsLengthDamped) {
  Graph g;
  Tensor v = Tensor::from_rows({{1.0, 0.0}, {0.0, 0.0}, {3.0, 4.0}});
  const Tensor& s = g.value(squash_rows(g, g.input(v)));
  // |v|=1: squashed norm 1/2, direction preserved
  EXPECT_NEAR(s.at(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(s.at(0, 1), 0.0, 1e-15);
  // zero vector maps to zero
  EXPECT_EQ(s.at(1, 0), 0.0);
  EXPECT_EQ(s.at(1, 1), 0.0);
  // |v|=5: squashed norm 25/26
  const double n = std::hypot(s.at(2, 0), s.at(2, 1));
  EXPECT_NEAR(n, 25.0 / 26.0, 1e-12);
}

TEST(Classify, ZeroVectorGivesUniformAndLnC) {
  Graph g;
  Graph::Id v = g.input(Tensor::zeros(4, 6));
  ClassifyResult r = squash_classify(g, v, {0, 1, 2, 5}, true);
  const Tensor& p = g.value(r.probs);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p.data[i], 1.0 / 6, 1e-15);
  EXPECT_NEAR(g.value(r.loss).at(0, 0), std::log(6.0), 1e-12);
}

TEST(Classify, NoSquashIsPlainSoftmaxCrossEntropy) {
  std::mt19937_64 rng(1);
  Tensor v = uniform_tensor(5, 3, -2.0, 2.0, rng);
  std::vector<int> y = {0, 2, 1, 0, 2};
  Graph g;
  ClassifyResult r = squash_classify(g, g.input(v), y, false);
  double manual = 0.0;
  for (int i = 0; i < 5; ++i) {
    double mx = std::max({v.at(i, 0), v.at(i, 1), v.at(i, 2)});
    double z = 0.0;
    for (int j = 0; j < 3; ++j) z += std::exp(v.at(i, j) - mx);
    manual += -(v.at(i, y[i]) - mx - std::log(z));
  }
  manual /= 5.0;
  EXPECT_NEAR(g.value(r.loss).at(0, 0), manual, 1e-12);
}

TEST(Focal, GammaZeroEqualsCrossEntropyExactly) {
  std::mt19937_64 rng(2);
  Tensor v = uniform_tensor(7, 4, -2.0, 2.0, rng);
  std::vector<int> y = {0, 1, 2, 3, 0, 1, 2};
  Graph g;
  Graph::Id probs = g.row_softmax(g.input(v));
  Graph::Id ce =
      g.scale(g.mean_all(g.log_clamped(g.gather_label(probs, y))), -1.0);
  Graph::Id fl = focal_loss(g, probs, y, 0.0);
  EXPECT_EQ(g.value(fl).at(0, 0), g.value(ce).at(0, 0));
}

TEST(Focal, HalfProbabilityGammaTwo) {
  Graph g;
  // two equal logits: p_y = 0.5
  Graph::Id probs = g.row_softmax(g.input(Tensor::zeros(1, 2)));
  Graph::Id fl = focal_loss(g, probs, {0}, 2.0);
  EXPECT_NEAR(g.value(fl).at(0, 0), 0.17328679513998632, 1e-15);
}

TEST(Focal, CertainPredictionContributesZero) {
  Graph g;
  Tensor p = Tensor::from_rows({{1.0, 0.0, 0.0}});
  Graph::Id fl = focal_loss(g, g.input(p), {0}, 2.0);
  EXPECT_EQ(g.value(fl).at(0, 0), 0.0);
}

TEST(Discriminative, HandCaseIsExactlyFour) {
  Graph g;
  Tensor e = Tensor::from_rows({{0.0}, {0.0}, {1.0}, {1.0}});
  LabeledBatch lb = batch_of({0, 0, 0, 0}, {0, 0, 1, 1},
                             Tensor::zeros(4, 3));
  Graph::Id loss = discriminative_loss(g, g.input(e), lb, 0.5, 1.5);
  EXPECT_EQ(g.value(loss).at(0, 0), 4.0);
}

TEST(Discriminative, SingleTightInstanceIsZero) {
  Graph g;
  Tensor e = Tensor::full(5, 3, 0.7);
  LabeledBatch lb = batch_of({0, 0, 0, 0, 0}, {4, 4, 4, 4, 4}, Tensor::zeros(5, 3));
  Graph::Id loss = discriminative_loss(g, g.input(e), lb, 0.5, 1.5);
  EXPECT_EQ(g.value(loss).at(0, 0), 0.0);
}

TEST(Discriminative, SatisfiedHingesGiveZero) {
  Graph g;
  // two tight clusters 4 apart; sigma_v 0.5, 2*sigma_d = 3
  Tensor e = Tensor::from_rows({{0.0, 0.1}, {0.0, -0.1}, {4.0, 0.1}, {4.0, -0.1}});
  LabeledBatch lb = batch_of({0, 0, 0, 0}, {0, 0, 1, 1}, Tensor::zeros(4, 3));
  Graph::Id loss = discriminative_loss(g, g.input(e), lb, 0.5, 1.5);
  EXPECT_EQ(g.value(loss).at(0, 0), 0.0);
}

TEST(Discriminative, TranslationInvariance) {
  std::mt19937_64 rng(3);
  Tensor e = uniform_tensor(12, 4, -1.0, 1.0, rng);
  Tensor shifted = e;
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 4; ++j) shifted.at(i, j) += (j + 1) * 2.5;
  std::vector<int> sem(12, 0), ins;
  for (int i = 0; i < 12; ++i) ins.push_back(i % 3);
  LabeledBatch lb = batch_of(sem, ins, Tensor::zeros(12, 3));
  Graph g;
  const double a = g.value(discriminative_loss(g, g.input(e), lb, 0.5, 1.5)).at(0, 0);
  const double b =
      g.value(discriminative_loss(g, g.input(shifted), lb, 0.5, 1.5)).at(0, 0);
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(Discriminative, PushWeaklyDecreasesWithSeparation) {
  std::vector<int> sem(4, 0), ins = {0, 0, 1, 1};
  LabeledBatch lb = batch_of(sem, ins, Tensor::zeros(4, 3));
  double prev = 1e30;
  for (double sep = 0.2; sep < 3.2; sep += 0.3) {
    Graph g;
    Tensor e = Tensor::from_rows({{0.0}, {0.0}, {sep}, {sep}});
    const double v = g.value(discriminative_loss(g, g.input(e), lb, 0.5, 1.5)).at(0, 0);
    EXPECT_LE(v, prev + 1e-12);
    prev = v;
  }
  EXPECT_EQ(prev, 0.0);  // fully separated by the end
}

TEST(SemanticRegularizer, ThreeCentroidCaseIsZero) {
  Graph g;
  // distances: own 1, others 2 and 4; margin 5 -> max(0, 1-6+5) = 0
  Tensor f = Tensor::from_rows({{0.0}});
  Tensor c = Tensor::from_rows({{1.0}, {-2.0}, {4.0}});
  Graph::Id r = semantic_regularizer(g, g.input(f), g.input(c), {0}, 5.0);
  EXPECT_EQ(g.value(r).at(0, 0), 0.0);
}

TEST(SemanticRegularizer, EquidistantPairGivesMargin) {
  Graph g;
  Tensor f = Tensor::from_rows({{0.0, 0.0}});
  Tensor c = Tensor::from_rows({{1.0, 0.0}, {-1.0, 0.0}});
  Graph::Id r = semantic_regularizer(g, g.input(f), g.input(c), {0}, 5.0);
  EXPECT_EQ(g.value(r).at(0, 0), 5.0);
}

TEST(SemanticRegularizer, CentroidHitWithFarOthersIsZero) {
  Graph g;
  Tensor f = Tensor::from_rows({{0.0, 0.0}});
  Tensor c = Tensor::from_rows({{0.0, 0.0}, {6.0, 0.0}});
  Graph::Id r = semantic_regularizer(g, g.input(f), g.input(c), {0}, 5.0);
  EXPECT_EQ(g.value(r).at(0, 0), 0.0);
}

TEST(InstanceRegularizer, PerfectPredictionIsZeroAndUnitOffsetIsOne) {
  std::mt19937_64 rng(4);
  CentroidHead head(4, 6, rng);
  // force G to output exactly zero
  head.w0.tensor = Tensor::zeros(4, 6);
  head.w1.tensor = Tensor::zeros(6, 3);
  head.b1.tensor = Tensor::zeros(1, 3);

  Tensor coords = Tensor::zeros(1, 3);  // centroid (0,0,0)
  LabeledBatch lb = batch_of({0}, {0}, coords);
  Graph g;
  Graph::Id r =
      instance_regularizer(g, g.input(Tensor::zeros(1, 4)), head, lb);
  EXPECT_EQ(g.value(r).at(0, 0), 0.0);

  head.b1.tensor = Tensor::from_rows({{1.0, 0.0, 0.0}});  // off by unit vector
  Graph g2;
  Graph::Id r2 =
      instance_regularizer(g2, g2.input(Tensor::zeros(1, 4)), head, lb);
  EXPECT_EQ(g2.value(r2).at(0, 0), 1.0);
}

TEST(InstanceRegularizer, MatchesBruteForceDoubleLoop) {
  std::mt19937_64 rng(5);
  CentroidHead head(4, 6, rng);
  Tensor coords = Tensor::from_rows(
      {{0.1, 0.2, 0.3}, {0.5, 0.5, 0.5}, {0.9, 0.1, 0.4}, {0.2, 0.8, 0.6}});
  LabeledBatch lb = batch_of({0, 0, 1, 1}, {0, 0, 1, 1}, coords);
  Tensor feats = uniform_tensor(4, 4, -1.0, 1.0, rng);

  Graph g;
  Graph::Id fid = g.input(feats);
  Graph::Id r = instance_regularizer(g, fid, head, lb);

  // brute force: recompute G through the graph, then the double loop
  Graph g2;
  Graph::Id h = g2.relu(g2.affine(g2.input(feats), g2.param(head.w0), g2.param(head.b0)));
  const Tensor& pred = g2.value(g2.affine(h, g2.param(head.w1), g2.param(head.b1)));
  double want = 0.0;
  for (int k = 0; k < lb.num_instances; ++k) {
    double inner = 0.0;
    int nk = 0;
    for (int n = 0; n < 4; ++n) {
      if (lb.instance[n] != k) continue;
      ++nk;
      for (int j = 0; j < 3; ++j) {
        const double d = pred.at(n, j) - lb.centroids.at(k, j);
        inner += d * d;
      }
    }
    want += inner / nk;
  }
  want /= lb.num_instances;
  EXPECT_NEAR(g.value(r).at(0, 0), want, 1e-12);
}

TEST(Objective, ZeroLambdaLeavesCentroidHeadUntouched) {
  ModelConfig mc;
  mc.encoder.hidden = {8, 12};
  mc.encoder.shared_dim = 16;
  mc.encoder.feature_dim = 8;
  mc.num_classes = 4;
  mc.slots_per_class = 3;
  LossConfig lc;
  lc.embed_dim = 4;
  lc.lambda_ins = 0.0;
  Model model(mc, lc, 99);

  std::mt19937_64 rng(6);
  Block b = random_block(24, 4, 3, rng);
  LabeledBatch lb = LabeledBatch::from_block(b);
  Graph g;
  BlockForward f = forward_block(g, model, b.points, &lb);
  ASSERT_GE(f.total, 0);
  g.backward(f.total);
  ASSERT_TRUE(model.centroid_head.has_value());
  for (double v : *model.centroid_head->w0.tensor.grad) EXPECT_EQ(v, 0.0);
  for (double v : *model.centroid_head->w1.tensor.grad) EXPECT_EQ(v, 0.0);
  // but R_ins is still computed and finite
  EXPECT_TRUE(std::isfinite(g.value(f.r_ins).at(0, 0)));
}

TEST(Objective, AllLossesNonnegativeAndFinite) {
  ModelConfig mc;
  mc.encoder.hidden = {8, 12};
  mc.encoder.shared_dim = 16;
  mc.encoder.feature_dim = 8;
  mc.num_classes = 4;
  mc.slots_per_class = 3;
  LossConfig lc;
  lc.embed_dim = 4;
  Model model(mc, lc, 17);

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    Block b = random_block(20 + trial * 7, 4, 2 + trial % 3, rng);
    LabeledBatch lb = LabeledBatch::from_block(b);
    Graph g;
    BlockForward f = forward_block(g, model, b.points, &lb);
    for (Graph::Id id : {f.loss_ce, f.loss_dis, f.r_seg, f.r_ins, f.total}) {
      ASSERT_GE(id, 0);
      const double v = g.value(id).at(0, 0);
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0);
    }
  }
}

TEST(Objective, FullGradientMatchesFiniteDifferences) {
  ModelConfig mc;
  mc.encoder.hidden = {8, 12};
  mc.encoder.shared_dim = 16;
  mc.encoder.feature_dim = 8;
  mc.num_classes = 4;
  mc.slots_per_class = 3;
  LossConfig lc;
  lc.embed_dim = 4;
  Model model(mc, lc, 5);

  std::mt19937_64 rng(8);
  Block b = random_block(32, 4, 3, rng);
  LabeledBatch lb = LabeledBatch::from_block(b);
  auto loss_fn = [&](bool acc) {
    Graph g;
    BlockForward f = forward_block(g, model, b.points, &lb);
    if (acc) g.backward(f.total);
    return g.value(f.total).at(0, 0);
  };
  GradCheckOptions opts;
  opts.step = 1e-5;
  auto rep = finite_diff_check(model.parameters(), loss_fn, opts);
  EXPECT_LT(rep.max_rel_err, 1e-4)
      << rep.worst_param << "[" << rep.worst_row << "," << rep.worst_col
      << "] analytic " << rep.worst_analytic << " numeric " << rep.worst_numeric;
}

TEST(Objective, CorruptedGradientIsDetected) {
  ModelConfig mc;
  mc.encoder.hidden = {6};
  mc.encoder.shared_dim = 8;
  mc.encoder.feature_dim = 6;
  mc.num_classes = 3;
  mc.slots_per_class = 2;
  LossConfig lc;
  lc.embed_dim = 3;
  Model model(mc, lc, 11);

  std::mt19937_64 rng(9);
  Block b = random_block(12, 3, 2, rng);
  LabeledBatch lb = LabeledBatch::from_block(b);
  auto loss_fn = [&](bool acc) {
    Graph g;
    BlockForward f = forward_block(g, model, b.points, &lb);
    if (acc) {
      g.backward(f.total);
      (*model.fc_w.tensor.grad)[0] += 0.5;  // deliberate corruption
    }
    return g.value(f.total).at(0, 0);
  };
  auto rep = finite_diff_check(model.parameters(), loss_fn, {});
  EXPECT_GT(rep.max_rel_err, 1e-3);
  EXPECT_EQ(rep.worst_param, "fc.w");
}

TEST(Objective, BaselineModelHasNoMemoryParameters) {
  ModelConfig mc;
  mc.encoder.hidden = {8};
  mc.encoder.shared_dim = 8;
  mc.encoder.feature_dim = 6;
  mc.num_classes = 3;
  mc.use_ins_memory = false;
  mc.use_seg_memory = false;
  mc.use_r_seg = false;
  mc.use_r_ins = false;
  LossConfig lc;
  lc.embed_dim = 3;
  lc.use_squash = false;
  Model model(mc, lc, 1);
  for (Parameter* p : model.parameters())
    EXPECT_TRUE(p->name.rfind("mem.", 0) != 0 && p->name.rfind("g.", 0) != 0)
        << p->name;

  std::mt19937_64 rng(10);
  Block b = random_block(16, 3, 2, rng);
  LabeledBatch lb = LabeledBatch::from_block(b);
  Graph g;
  BlockForward f = forward_block(g, model, b.points, &lb);
  EXPECT_EQ(f.r_seg, -1);
  EXPECT_EQ(f.r_ins, -1);
  EXPECT_EQ(f.w_ins, -1);
  EXPECT_EQ(f.fhat_seg, f.f_seg);
  g.backward(f.total);  // trains end to end without memory
  EXPECT_TRUE(std::isfinite(g.value(f.total).at(0, 0)));
}

TEST(Objective, RegularizerFlagsRequireMemory) {
  ModelConfig mc;
  mc.use_seg_memory = false;
  mc.use_r_seg = true;
  LossConfig lc;
  EXPECT_THROW(Model(mc, lc, 1), std::invalid_argument);
}
