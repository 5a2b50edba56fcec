#pragma once

#include <vector>

#include "mpnet/graph.hpp"
#include "mpnet/scene.hpp"
#include "mpnet/tensor.hpp"

namespace mpnet {

struct LossConfig {
  double margin_m = 5.0;       // semantic regularizer relaxation margin
  double sigma_v = 0.5;        // pull hinge
  double sigma_d = 1.5;        // push hinge (applied as 2*sigma_d)
  double lambda_ins = 0.1;     // weight on the instance regularizer
  int embed_dim = 5;           // c'
  double focal_gamma = 2.0;
  bool use_squash = true;

  void validate() const {
    check_arg(sigma_d > sigma_v && sigma_v > 0.0,
              "LossConfig: need sigma_d > sigma_v > 0");
    check_arg(margin_m > 0.0, "LossConfig: margin_m must be positive");
    check_arg(lambda_ins >= 0.0, "LossConfig: lambda_ins must be nonnegative");
    check_arg(embed_dim > 0, "LossConfig: embed_dim must be positive");
    check_arg(focal_gamma >= 0.0, "LossConfig: focal_gamma must be nonnegative");
  }
};

// Labels for one block with instance ids re-densified per batch and the
// per-instance coordinate centroids the regressor is trained against.
struct LabeledBatch {
  std::vector<int> semantic;
  std::vector<int> instance;  // dense, 0..num_instances-1, first-appearance order
  int num_instances = 0;
  Tensor centroids;           // num_instances x 3, mean xyz per instance

  static LabeledBatch from_block(const Block& block) {
    LabeledBatch lb;
    lb.semantic = block.semantic;
    lb.instance.reserve(block.instance.size());
    std::vector<int> remap;
    for (int raw : block.instance) {
      int dense = -1;
      for (std::size_t k = 0; k < remap.size(); ++k)
        if (remap[k] == raw) { dense = static_cast<int>(k); break; }
      if (dense < 0) {
        dense = static_cast<int>(remap.size());
        remap.push_back(raw);
      }
      lb.instance.push_back(dense);
    }
    lb.num_instances = static_cast<int>(remap.size());
    lb.centroids = Tensor::zeros(lb.num_instances, 3);
    std::vector<int> counts(lb.num_instances, 0);
    for (std::size_t i = 0; i < lb.instance.size(); ++i) {
      const int k = lb.instance[i];
      ++counts[k];
      for (int j = 0; j < 3; ++j)
        lb.centroids.at(k, j) += block.points.at(static_cast<int>(i), j);
    }
    for (int k = 0; k < lb.num_instances; ++k)
      for (int j = 0; j < 3; ++j) lb.centroids.at(k, j) /= counts[k];
    return lb;
  }

  std::vector<int> instance_sizes() const {
    std::vector<int> n(num_instances, 0);
    for (int k : instance) ++n[k];
    return n;
  }
};

// Length-dampening nonlinearity: v -> v * |v| / (1 + |v|^2). Written as a
// product so the all-zero row maps to zero without a division.
inline Graph::Id squash_rows(Graph& g, Graph::Id v) {
  Graph::Id n = g.row_norm(v);
  Graph::Id factor = g.mul(n, g.reciprocal(g.add_scalar(g.mul(n, n), 1.0)));
  return g.mul_col(v, factor);
}

struct ClassifyResult {
  Graph::Id loss;
  Graph::Id probs;  // P x C simplex rows
};

// Cross-entropy on softmax of the (optionally squashed) class vector.
inline ClassifyResult squash_classify(Graph& g, Graph::Id class_vec,
                                      const std::vector<int>& labels,
                                      bool use_squash) {
  Graph::Id s = use_squash ? squash_rows(g, class_vec) : class_vec;
  Graph::Id probs = g.row_softmax(s);
  Graph::Id loss =
      g.scale(g.mean_all(g.log_clamped(g.gather_label(probs, labels))), -1.0);
  return {loss, probs};
}

// mean over points of -(1-p_y)^gamma * ln(p_y)
inline Graph::Id focal_loss(Graph& g, Graph::Id probs,
                            const std::vector<int>& labels, double gamma) {
  Graph::Id py = g.gather_label(probs, labels);
  Graph::Id onemp = g.add_scalar(g.scale(py, -1.0), 1.0);
  return g.scale(
      g.mean_all(g.mul(g.pow_const(onemp, gamma), g.log_clamped(py))), -1.0);
}

// constant K x P averaging matrix mapping embeddings to instance means
inline Graph::Id instance_means(Graph& g, Graph::Id embeddings,
                                const LabeledBatch& lb) {
  const int P = static_cast<int>(lb.instance.size());
  check_arg(g.value(embeddings).rows == P,
            "instance_means: label count does not match rows");
  const std::vector<int> sizes = lb.instance_sizes();
  Tensor avg = Tensor::zeros(lb.num_instances, P);
  for (int i = 0; i < P; ++i)
    avg.at(lb.instance[i], i) = 1.0 / sizes[lb.instance[i]];
  return g.matmul(g.constant(std::move(avg)), embeddings);
}

// Pull each embedding within sigma_v of its instance mean; push distinct
// instance means beyond 2*sigma_d. Hinges are squared; the push term is
// averaged over ordered pairs and vanishes for a single instance.
inline Graph::Id discriminative_loss(Graph& g, Graph::Id embeddings,
                                     const LabeledBatch& lb, double sigma_v,
                                     double sigma_d) {
  check_arg(lb.num_instances >= 1, "discriminative_loss: empty batch");
  const int P = static_cast<int>(lb.instance.size());
  const int K = lb.num_instances;
  Graph::Id mu = instance_means(g, embeddings, lb);

  Graph::Id dist =
      g.row_norm(g.sub(embeddings, g.gather_rows(mu, lb.instance)));
  Graph::Id hinge = g.relu(g.add_scalar(dist, -sigma_v));
  const std::vector<int> sizes = lb.instance_sizes();
  std::vector<double> w(P);
  for (int i = 0; i < P; ++i) w[i] = 1.0 / (static_cast<double>(K) * sizes[lb.instance[i]]);
  Graph::Id pull = g.weighted_sum(g.mul(hinge, hinge), std::move(w));
  if (K == 1) return pull;

  std::vector<int> ia, ib;
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j)
      if (i != j) { ia.push_back(i); ib.push_back(j); }
  Graph::Id pair_dist = g.row_norm(g.sub(g.gather_rows(mu, ia), g.gather_rows(mu, ib)));
  Graph::Id push_hinge = g.relu(g.add_scalar(g.scale(pair_dist, -1.0), 2.0 * sigma_d));
  Graph::Id push = g.scale(g.sum_all(g.mul(push_hinge, push_hinge)),
                           1.0 / (static_cast<double>(K) * (K - 1)));
  return g.add(pull, push);
}

// centroid regression head: 2-layer MLP to xyz
struct CentroidHead {
  Parameter w0, b0, w1, b1;

  CentroidHead() = default;
  CentroidHead(int in, int hidden, std::mt19937_64& rng)
      : w0("g.w0", glorot_uniform(in, hidden, rng)),
        b0("g.b0", uniform_tensor(1, hidden, -0.1, 0.1, rng)),
        w1("g.w1", glorot_uniform(hidden, 3, rng)),
        b1("g.b1", Tensor::zeros(1, 3)) {}

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&w0);
    out.push_back(&b0);
    out.push_back(&w1);
    out.push_back(&b1);
  }
};

// mean over instances of the mean squared centroid-prediction error
inline Graph::Id instance_regularizer(Graph& g, Graph::Id features,
                                      CentroidHead& head, const LabeledBatch& lb) {
  const int P = static_cast<int>(lb.instance.size());
  const int K = lb.num_instances;
  Graph::Id h = g.relu(g.affine(features, g.param(head.w0), g.param(head.b0)));
  Graph::Id pred = g.affine(h, g.param(head.w1), g.param(head.b1));
  Graph::Id diff = g.sub(pred, g.gather_rows(g.constant(lb.centroids), lb.instance));
  Graph::Id sq = g.row_sum(g.mul(diff, diff));
  const std::vector<int> sizes = lb.instance_sizes();
  std::vector<double> w(P);
  for (int i = 0; i < P; ++i) w[i] = 1.0 / (static_cast<double>(K) * sizes[lb.instance[i]]);
  return g.weighted_sum(sq, std::move(w));
}

// per point: [ |f - c_own| - sum_{j != own} |f - c_j| + margin ]_+, averaged
inline Graph::Id semantic_regularizer(Graph& g, Graph::Id features,
                                      Graph::Id summary,
                                      const std::vector<int>& labels,
                                      double margin) {
  const Tensor& f = g.value(features);
  const Tensor& c = g.value(summary);
  const int P = f.rows, C = c.rows;
  check_arg(static_cast<int>(labels.size()) == P,
            "semantic_regularizer: one label per row required");
  std::vector<int> point_rep(static_cast<std::size_t>(P) * C);
  std::vector<int> class_rep(static_cast<std::size_t>(P) * C);
  for (int i = 0; i < P; ++i)
    for (int j = 0; j < C; ++j) {
      point_rep[static_cast<std::size_t>(i) * C + j] = i;
      class_rep[static_cast<std::size_t>(i) * C + j] = j;
    }
  Graph::Id diff = g.sub(g.gather_rows(features, point_rep),
                         g.gather_rows(summary, class_rep));
  Graph::Id dist = g.reshape(g.row_norm(diff), P, C);
  Graph::Id own = g.gather_label(dist, labels);
  Graph::Id others = g.sub(g.row_sum(dist), own);
  Graph::Id term = g.relu(g.add_scalar(g.sub(own, others), margin));
  return g.mean_all(term);
}

}  // namespace mpnet
