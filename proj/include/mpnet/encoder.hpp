#pragma once

#include <map>
#include <tuple>
#include <vector>

#include "mpnet/graph.hpp"
#include "mpnet/tensor.hpp"

namespace mpnet {

struct EncoderConfig {
  int input_dim = 6;              // x y z r g b
  std::vector<int> hidden = {32, 64};
  int shared_dim = 64;            // width handed to the branch decoders
  int feature_dim = 32;           // D, width of each branch output
  double grid_cell = 0.25;        // local pooling cell, meters

  void validate() const {
    check_arg(input_dim > 0, "EncoderConfig: input_dim must be positive");
    check_arg(!hidden.empty(), "EncoderConfig: hidden widths must be nonempty");
    for (int w : hidden)
      check_arg(w > 0, "EncoderConfig: hidden widths must be positive");
    check_arg(shared_dim > 0 && feature_dim > 0,
              "EncoderConfig: output widths must be positive");
    check_arg(grid_cell > 0.0, "EncoderConfig: grid_cell must be positive");
  }
};

// Cell ids for one-level grid pooling. Ids are compacted in first-appearance
// order; pooling then gathering by id makes the result order-equivariant.
inline std::vector<int> grid_cell_ids(const Tensor& points, double cell,
                                      int* num_cells_out) {
  check_arg(points.cols >= 3, "grid_cell_ids: points must carry xyz");
  std::map<std::tuple<int, int, int>, int> seen;
  std::vector<int> ids(points.rows);
  for (int i = 0; i < points.rows; ++i) {
    const std::tuple<int, int, int> key = {
        static_cast<int>(std::floor(points.at(i, 0) / cell)),
        static_cast<int>(std::floor(points.at(i, 1) / cell)),
        static_cast<int>(std::floor(points.at(i, 2) / cell))};
    auto [it, inserted] = seen.try_emplace(key, static_cast<int>(seen.size()));
    ids[i] = it->second;
  }
  *num_cells_out = static_cast<int>(seen.size());
  return ids;
}

// Per-point MLP stack, a local grid mean-pool, a global mean-pool, and a
// projection of the input/point/context concatenation back to shared_dim.
// Mean pooling keeps the context channels on the same scale as the
// per-point ones, so pooled context cannot drown the per-point identity
// that the cosine-addressed memory readers depend on.
struct EncoderParams {
  std::vector<Parameter> mlp_w, mlp_b;  // one pair per hidden layer
  Parameter proj_w, proj_b;

  EncoderParams() = default;
  EncoderParams(const EncoderConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    int in = cfg.input_dim;
    for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
      const int out = cfg.hidden[l];
      mlp_w.emplace_back("enc.w" + std::to_string(l), glorot_uniform(in, out, rng));
      mlp_b.emplace_back("enc.b" + std::to_string(l),
                         uniform_tensor(1, out, -0.1, 0.1, rng));
      in = out;
    }
    proj_w = Parameter("enc.proj_w",
                       glorot_uniform(cfg.input_dim + 3 * in, cfg.shared_dim, rng));
    proj_b = Parameter("enc.proj_b", uniform_tensor(1, cfg.shared_dim, -0.1, 0.1, rng));
  }

  void collect(std::vector<Parameter*>& out) {
    for (std::size_t l = 0; l < mlp_w.size(); ++l) {
      out.push_back(&mlp_w[l]);
      out.push_back(&mlp_b[l]);
    }
    out.push_back(&proj_w);
    out.push_back(&proj_b);
  }
};

inline Graph::Id encode(Graph& g, EncoderParams& params, const EncoderConfig& cfg,
                        const Tensor& points) {
  check_arg(points.rows > 0, "encode: empty batch");
  check_arg(points.cols == cfg.input_dim,
            "encode: batch width " + points.shape_str() + " does not match input_dim");
  check_arg(points.all_finite(), "encode: non-finite input");
  int num_cells = 0;
  const std::vector<int> cells = grid_cell_ids(points, cfg.grid_cell, &num_cells);

  Graph::Id x = g.input(points);
  Graph::Id h = x;
  for (std::size_t l = 0; l < params.mlp_w.size(); ++l)
    h = g.relu(g.affine(h, g.param(params.mlp_w[l]), g.param(params.mlp_b[l])));

  Graph::Id cell_pool = g.gather_rows(g.segment_mean(h, cells, num_cells), cells);
  const std::vector<int> all_zero(points.rows, 0);
  Graph::Id global_pool =
      g.gather_rows(g.segment_mean(h, all_zero, 1), all_zero);
  Graph::Id cat = g.concat_cols({x, h, cell_pool, global_pool});
  return g.relu(g.affine(cat, g.param(params.proj_w), g.param(params.proj_b)));
}

// Independent 2-layer per-point decoder; one instance per branch.
// Biases start away from zero: a dead hidden row must not park the next
// pre-activation exactly on the relu kink, and a point whose hidden row
// goes fully dead still emits a nonzero feature, keeping query norms clear
// of the cosine denominator clamp.
struct DecoderParams {
  Parameter w0, b0, w1, b1;

  DecoderParams() = default;
  DecoderParams(const std::string& prefix, int in, int out, std::mt19937_64& rng)
      : w0(prefix + ".w0", glorot_uniform(in, in, rng)),
        b0(prefix + ".b0", uniform_tensor(1, in, -0.1, 0.1, rng)),
        w1(prefix + ".w1", glorot_uniform(in, out, rng)),
        b1(prefix + ".b1", uniform_tensor(1, out, -0.1, 0.1, rng)) {}

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&w0);
    out.push_back(&b0);
    out.push_back(&w1);
    out.push_back(&b1);
  }
};

inline Graph::Id decode(Graph& g, DecoderParams& params, Graph::Id shared) {
  Graph::Id h = g.relu(g.affine(shared, g.param(params.w0), g.param(params.b0)));
  return g.affine(h, g.param(params.w1), g.param(params.b1));
}

}  // namespace mpnet
