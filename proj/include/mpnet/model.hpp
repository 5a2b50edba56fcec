#pragma once

#include <optional>
#include <random>
#include <vector>

#include "mpnet/encoder.hpp"
#include "mpnet/losses.hpp"
#include "mpnet/memory.hpp"
#include "mpnet/scene.hpp"

namespace mpnet {

struct ModelConfig {
  EncoderConfig encoder;
  int num_classes = kNumSceneClasses;
  int slots_per_class = 8;   // N_c; the full-scale preset raises this to 150
  double tau = 0.1;          // addressing softmax temperature
  int g_hidden = 32;         // centroid head width
  bool use_ins_memory = true;
  bool use_seg_memory = true;
  bool use_r_seg = true;
  bool use_r_ins = true;

  void validate() const {
    encoder.validate();
    check_arg(num_classes > 1, "ModelConfig: need at least two classes");
    check_arg(slots_per_class > 0, "ModelConfig: slots_per_class must be positive");
    check_arg(tau > 0.0, "ModelConfig: tau must be positive");
    check_arg(g_hidden > 0, "ModelConfig: g_hidden must be positive");
    check_arg(!use_r_seg || use_seg_memory,
              "ModelConfig: the semantic regularizer needs the semantic memory path");
    check_arg(!use_r_ins || use_ins_memory,
              "ModelConfig: the instance regularizer needs the instance memory path");
  }
};

// Every learnable in one place. Which members exist depends on the ablation
// flags, so a baseline checkpoint carries no memory rows at all.
struct Model {
  ModelConfig cfg;
  LossConfig loss;
  EncoderParams enc;
  DecoderParams dec_seg, dec_ins;
  std::optional<PrototypeMemory> memory;
  Parameter fc_w, fc_b;        // class vector head, D -> C
  Parameter embed_w, embed_b;  // discriminative embedding head, D -> c'
  std::optional<CentroidHead> centroid_head;

  Model() = default;
  Model(const ModelConfig& mc, const LossConfig& lc, std::uint64_t seed)
      : cfg(mc), loss(lc) {
    cfg.validate();
    loss.validate();
    std::mt19937_64 rng(seed);
    enc = EncoderParams(cfg.encoder, rng);
    dec_seg = DecoderParams("dec_seg", cfg.encoder.shared_dim,
                            cfg.encoder.feature_dim, rng);
    dec_ins = DecoderParams("dec_ins", cfg.encoder.shared_dim,
                            cfg.encoder.feature_dim, rng);
    if (cfg.use_ins_memory || cfg.use_seg_memory)
      memory.emplace(cfg.slots_per_class, cfg.num_classes,
                     cfg.encoder.feature_dim, rng);
    if (cfg.use_seg_memory) {
      // With the semantic reader on, class vectors are read from the convex
      // hull of the class summaries, and an affine head cannot tell which
      // summary belongs to which label. Starting column c on class c's own
      // initial prototype direction binds each summary row to its label;
      // random columns leave that permutation to chance and the rare classes
      // lose the race.
      const Tensor& m = memory->m.tensor;
      Tensor w = Tensor::zeros(cfg.encoder.feature_dim, cfg.num_classes);
      for (int c = 0; c < cfg.num_classes; ++c) {
        std::vector<double> mean(w.rows, 0.0);
        for (int s = 0; s < cfg.slots_per_class; ++s)
          for (int d = 0; d < w.rows; ++d)
            mean[d] += m.at(c * cfg.slots_per_class + s, d) / cfg.slots_per_class;
        double norm2 = 0.0;
        for (double v : mean) norm2 += v * v;
        const double inv = 1.0 / std::max(std::sqrt(norm2), Graph::kEpsNorm);
        for (int d = 0; d < w.rows; ++d) w.at(d, c) = mean[d] * inv;
      }
      fc_w = Parameter("fc.w", std::move(w));
    } else {
      fc_w = Parameter(
          "fc.w", glorot_uniform(cfg.encoder.feature_dim, cfg.num_classes, rng));
    }
    fc_b = Parameter("fc.b", Tensor::zeros(1, cfg.num_classes));
    embed_w = Parameter("embed.w",
                        glorot_uniform(cfg.encoder.feature_dim, loss.embed_dim, rng));
    embed_b = Parameter("embed.b", Tensor::zeros(1, loss.embed_dim));
    if (cfg.use_r_ins) centroid_head.emplace(cfg.encoder.feature_dim, cfg.g_hidden, rng);
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    enc.collect(out);
    dec_seg.collect(out);
    dec_ins.collect(out);
    if (memory) out.push_back(&memory->m);
    out.push_back(&fc_w);
    out.push_back(&fc_b);
    out.push_back(&embed_w);
    out.push_back(&embed_b);
    if (centroid_head) centroid_head->collect(out);
    return out;
  }

  void zero_grads() {
    for (Parameter* p : parameters()) p->zero_grad();
  }
};

// Node handles from one block's forward pass; loss ids are -1 when the
// corresponding term is disabled or no labels were supplied.
struct BlockForward {
  Graph::Id shared = -1;
  Graph::Id f_seg = -1, f_ins = -1;
  Graph::Id fhat_seg = -1, fhat_ins = -1;  // post-memory (or raw when off)
  Graph::Id w_ins = -1, alpha_seg = -1;    // addressing weights
  Graph::Id probs = -1;                    // P x C
  Graph::Id embed = -1;                    // P x c'
  Graph::Id loss_ce = -1, loss_dis = -1, r_seg = -1, r_ins = -1, total = -1;
};

// Shared encoder, two decoders, optional memory readers, classification and
// embedding heads; with labels, the full training objective
// total = classification + discriminative + R_seg + lambda * R_ins.
inline BlockForward forward_block(Graph& g, Model& model, const Tensor& points,
                                  const LabeledBatch* labels,
                                  bool use_focal = false) {
  BlockForward out;
  out.shared = encode(g, model.enc, model.cfg.encoder, points);
  out.f_seg = decode(g, model.dec_seg, out.shared);
  out.f_ins = decode(g, model.dec_ins, out.shared);

  Graph::Id mem_rows = -1, summary = -1;
  if (model.memory) {
    mem_rows = g.param(model.memory->m);
    summary = semantic_summary(g, mem_rows, model.cfg.slots_per_class,
                               model.cfg.num_classes);
  }
  if (model.cfg.use_ins_memory) {
    MemoryRead r = read_instance(g, out.f_ins, mem_rows, model.cfg.tau);
    out.w_ins = r.weights;
    out.fhat_ins = r.retrieved;
  } else {
    out.fhat_ins = out.f_ins;
  }
  if (model.cfg.use_seg_memory) {
    MemoryRead r = read_semantic(g, out.f_seg, summary, model.cfg.tau);
    out.alpha_seg = r.weights;
    out.fhat_seg = r.retrieved;
  } else {
    out.fhat_seg = out.f_seg;
  }

  Graph::Id class_vec =
      g.affine(out.fhat_seg, g.param(model.fc_w), g.param(model.fc_b));
  out.embed = g.affine(out.fhat_ins, g.param(model.embed_w), g.param(model.embed_b));

  if (!labels) {
    Graph::Id s = model.loss.use_squash ? squash_rows(g, class_vec) : class_vec;
    out.probs = g.row_softmax(s);
    return out;
  }

  if (use_focal) {
    out.probs = g.row_softmax(class_vec);  // focal baseline skips squashing
    out.loss_ce = focal_loss(g, out.probs, labels->semantic, model.loss.focal_gamma);
  } else {
    ClassifyResult cr =
        squash_classify(g, class_vec, labels->semantic, model.loss.use_squash);
    out.probs = cr.probs;
    out.loss_ce = cr.loss;
  }
  out.loss_dis = discriminative_loss(g, out.embed, *labels, model.loss.sigma_v,
                                     model.loss.sigma_d);
  Graph::Id total = g.add(out.loss_ce, out.loss_dis);
  if (model.cfg.use_r_seg) {
    out.r_seg = semantic_regularizer(g, out.fhat_seg, summary, labels->semantic,
                                     model.loss.margin_m);
    total = g.add(total, out.r_seg);
  }
  if (model.cfg.use_r_ins) {
    out.r_ins = instance_regularizer(g, out.fhat_ins, *model.centroid_head, *labels);
    total = g.add(total, g.scale(out.r_ins, model.loss.lambda_ins));
  }
  out.total = total;
  return out;
}

}  // namespace mpnet
