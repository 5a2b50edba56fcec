#pragma once

#include <random>

#include "mpnet/graph.hpp"
#include "mpnet/tensor.hpp"

namespace mpnet {

// Learnable prototype matrix M, N = slots_per_class * num_classes rows of
// width D, laid out class-blockwise: rows [c*N_c, (c+1)*N_c) serve class c.
struct PrototypeMemory {
  Parameter m;
  int slots_per_class = 0;
  int num_classes = 0;

  PrototypeMemory() = default;
  PrototypeMemory(int n_c, int classes, int dim, std::mt19937_64& rng)
      : slots_per_class(n_c), num_classes(classes) {
    check_arg(n_c > 0 && classes > 0 && dim > 0,
              "PrototypeMemory: all dimensions must be positive");
    Tensor init = uniform_tensor(n_c * classes, dim, -0.1, 0.1, rng);
    for (int i = 0; i < init.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < init.cols; ++j) s += init.at(i, j) * init.at(i, j);
      const double n = std::max(std::sqrt(s), Graph::kEpsNorm);
      for (int j = 0; j < init.cols; ++j) init.at(i, j) /= n;
    }
    m = Parameter("mem.m", std::move(init));
  }

  int num_slots() const { return slots_per_class * num_classes; }
  int dim() const { return m.tensor.cols; }
};

// Per-class mean over the class's block of memory rows; realized as a
// constant averaging matrix so gradients reach every row with weight 1/N_c.
inline Graph::Id semantic_summary(Graph& g, Graph::Id memory_rows,
                                  int slots_per_class, int num_classes) {
  const Tensor& m = g.value(memory_rows);
  check_arg(m.rows == slots_per_class * num_classes,
            "semantic_summary: memory has " + m.shape_str() + ", expected " +
                std::to_string(slots_per_class * num_classes) + " rows");
  Tensor avg = Tensor::zeros(num_classes, m.rows);
  for (int c = 0; c < num_classes; ++c)
    for (int j = 0; j < slots_per_class; ++j)
      avg.at(c, c * slots_per_class + j) = 1.0 / slots_per_class;
  return g.matmul(g.constant(std::move(avg)), memory_rows);
}

struct MemoryRead {
  Graph::Id weights;    // P x rows, simplex per row
  Graph::Id retrieved;  // P x D, convex combination of rows
};

// Soft addressing: softmax over cosine similarities scaled by 1/tau, then
// retrieval as the weighted sum of rows. Used against M (instance reader)
// and against the semantic summary (semantic reader).
inline MemoryRead read_rows(Graph& g, Graph::Id queries, Graph::Id rows, double tau) {
  check_arg(tau > 0.0, "read_rows: tau must be positive");
  Graph::Id sim = g.cosine_rows(queries, rows);
  Graph::Id w = g.row_softmax(g.scale(sim, 1.0 / tau));
  return {w, g.matmul(w, rows)};
}

inline MemoryRead read_instance(Graph& g, Graph::Id f_ins, Graph::Id memory_rows,
                                double tau) {
  return read_rows(g, f_ins, memory_rows, tau);
}

inline MemoryRead read_semantic(Graph& g, Graph::Id f_seg, Graph::Id summary,
                                double tau) {
  return read_rows(g, f_seg, summary, tau);
}

}  // namespace mpnet
