#pragma once

#include <array>
#include <map>
#include <vector>

#include "mpnet/tensor.hpp"

namespace mpnet {

struct MeanShiftConfig {
  double bandwidth = 0.6;
  int max_iters = 100;
  double convergence_eps = 1e-4;
  double merge_radius = 0.3;  // bandwidth / 2
  int seed_limit = 4096;      // above this, seed from a bandwidth grid

  void validate() const {
    check_arg(bandwidth > 0.0, "MeanShiftConfig: bandwidth must be positive");
    check_arg(max_iters > 0, "MeanShiftConfig: max_iters must be positive");
    check_arg(convergence_eps > 0.0, "MeanShiftConfig: convergence_eps must be positive");
    check_arg(merge_radius > 0.0 && merge_radius <= bandwidth,
              "MeanShiftConfig: need 0 < merge_radius <= bandwidth");
    check_arg(seed_limit > 0, "MeanShiftConfig: seed_limit must be positive");
  }
};

struct InstancePrediction {
  std::vector<int> point_instance_ids;  // dense from 0
  std::vector<int> instance_classes;    // per instance
  std::vector<int> instance_sizes;
  std::vector<double> instance_confidence;  // majority vote fraction

  int num_instances() const { return static_cast<int>(instance_classes.size()); }

  void validate(int num_classes) const {
    const int k = num_instances();
    check_arg(static_cast<int>(instance_sizes.size()) == k &&
                  static_cast<int>(instance_confidence.size()) == k,
              "InstancePrediction: per-instance arrays disagree");
    std::vector<int> count(k, 0);
    for (int id : point_instance_ids) {
      check_arg(id >= 0 && id < k, "InstancePrediction: id out of range");
      ++count[id];
    }
    for (int i = 0; i < k; ++i) {
      check_arg(count[i] == instance_sizes[i] && count[i] > 0,
                "InstancePrediction: sizes wrong or empty instance");
      check_arg(instance_classes[i] >= 0 && instance_classes[i] < num_classes,
                "InstancePrediction: class out of range");
    }
  }
};

namespace detail {

inline double sq_dist(const std::vector<double>& data, int dim, int i,
                      const std::vector<double>& point) {
  double s = 0.0;
  for (int d = 0; d < dim; ++d) {
    const double diff = data[static_cast<std::size_t>(i) * dim + d] - point[d];
    s += diff * diff;
  }
  return s;
}

}  // namespace detail

// Flat-kernel mean shift. Converged modes are sorted lexicographically
// before merging, so the final labeling is independent of input order up
// to relabeling. Always yields a partition.
inline std::vector<int> mean_shift(const Tensor& embeddings,
                                   const MeanShiftConfig& cfg) {
  cfg.validate();
  const int P = embeddings.rows, D = embeddings.cols;
  check_arg(P >= 1, "mean_shift: need at least one point");
  check_arg(embeddings.all_finite(), "mean_shift: non-finite embeddings");
  const double bw2 = cfg.bandwidth * cfg.bandwidth;

  // seeds: every point, or one seed (cell mean) per occupied bandwidth cell
  std::vector<std::vector<double>> seeds;
  if (P <= cfg.seed_limit) {
    seeds.reserve(P);
    for (int i = 0; i < P; ++i) {
      std::vector<double> s(D);
      for (int d = 0; d < D; ++d) s[d] = embeddings.at(i, d);
      seeds.push_back(std::move(s));
    }
  } else {
    std::map<std::vector<int>, std::pair<std::vector<double>, int>> cells;
    for (int i = 0; i < P; ++i) {
      std::vector<int> key(D);
      for (int d = 0; d < D; ++d)
        key[d] = static_cast<int>(std::floor(embeddings.at(i, d) / cfg.bandwidth));
      auto& slot = cells[key];
      if (slot.first.empty()) slot.first.assign(D, 0.0);
      for (int d = 0; d < D; ++d) slot.first[d] += embeddings.at(i, d);
      ++slot.second;
    }
    for (auto& [key, slot] : cells) {
      for (double& v : slot.first) v /= slot.second;
      seeds.push_back(std::move(slot.first));
    }
  }

  // climb each seed to its mode
  for (auto& pos : seeds) {
    for (int it = 0; it < cfg.max_iters; ++it) {
      std::vector<double> mean(D, 0.0);
      int inside = 0;
      for (int i = 0; i < P; ++i) {
        if (detail::sq_dist(embeddings.data, D, i, pos) <= bw2) {
          for (int d = 0; d < D; ++d) mean[d] += embeddings.at(i, d);
          ++inside;
        }
      }
      if (inside == 0) break;
      double shift2 = 0.0;
      for (int d = 0; d < D; ++d) {
        mean[d] /= inside;
        const double diff = mean[d] - pos[d];
        shift2 += diff * diff;
      }
      pos = std::move(mean);
      if (shift2 <= cfg.convergence_eps * cfg.convergence_eps) break;
    }
  }

  // canonical merge: lexicographic order, first fit within merge_radius
  std::sort(seeds.begin(), seeds.end());
  std::vector<std::vector<double>> modes;
  const double mr2 = cfg.merge_radius * cfg.merge_radius;
  for (const auto& s : seeds) {
    bool absorbed = false;
    for (const auto& m : modes) {
      double d2 = 0.0;
      for (int d = 0; d < D; ++d) d2 += (s[d] - m[d]) * (s[d] - m[d]);
      if (d2 <= mr2) { absorbed = true; break; }
    }
    if (!absorbed) modes.push_back(s);
  }

  // nearest mode per point, ties to the lowest mode id
  std::vector<int> provisional(P);
  for (int i = 0; i < P; ++i) {
    int best = 0;
    double best_d2 = detail::sq_dist(embeddings.data, D, i, modes[0]);
    for (std::size_t m = 1; m < modes.size(); ++m) {
      const double d2 = detail::sq_dist(embeddings.data, D, i, modes[m]);
      if (d2 < best_d2) { best_d2 = d2; best = static_cast<int>(m); }
    }
    provisional[i] = best;
  }

  // drop modes that won no points, keep ids dense
  std::vector<int> remap(modes.size(), -1);
  int next = 0;
  for (int i = 0; i < P; ++i)
    if (remap[provisional[i]] < 0) {
      // first appearance order would depend on point order; keep mode order
      remap[provisional[i]] = 0;
    }
  for (std::size_t m = 0; m < modes.size(); ++m)
    remap[m] = remap[m] == 0 ? next++ : -1;
  std::vector<int> labels(P);
  for (int i = 0; i < P; ++i) labels[i] = remap[provisional[i]];
  return labels;
}

// Majority semantic vote per cluster; ties go to the smaller class id.
inline InstancePrediction assign_class(const std::vector<int>& cluster_ids,
                                       const std::vector<int>& point_classes,
                                       int num_classes) {
  check_arg(cluster_ids.size() == point_classes.size(),
            "assign_class: arrays must align");
  check_arg(!cluster_ids.empty(), "assign_class: empty input");
  int k = 0;
  for (int id : cluster_ids) {
    check_arg(id >= 0, "assign_class: negative cluster id");
    k = std::max(k, id + 1);
  }
  std::vector<std::vector<int>> votes(k, std::vector<int>(num_classes, 0));
  std::vector<int> sizes(k, 0);
  for (std::size_t i = 0; i < cluster_ids.size(); ++i) {
    const int c = point_classes[i];
    check_arg(c >= 0 && c < num_classes, "assign_class: class out of range");
    ++votes[cluster_ids[i]][c];
    ++sizes[cluster_ids[i]];
  }
  InstancePrediction pred;
  pred.point_instance_ids = cluster_ids;
  for (int id = 0; id < k; ++id) {
    check_arg(sizes[id] > 0, "assign_class: cluster ids not dense");
    int best = 0;
    for (int c = 1; c < num_classes; ++c)
      if (votes[id][c] > votes[id][best]) best = c;
    pred.instance_classes.push_back(best);
    pred.instance_sizes.push_back(sizes[id]);
    pred.instance_confidence.push_back(static_cast<double>(votes[id][best]) / sizes[id]);
  }
  return pred;
}

// ---- scene-level stitching ----

struct MergeGrid {
  double voxel = 0.05;  // meters
  void validate() const { check_arg(voxel > 0.0, "MergeGrid: voxel must be positive"); }
};

// One block's instance prediction in world coordinates.
struct MergeInput {
  double origin_x = 0.0, origin_y = 0.0;
  std::vector<std::array<double, 3>> world_xyz;  // per block point
  std::vector<int> instance_ids;                 // dense local ids
  std::vector<int> instance_classes;             // per local id
};

namespace detail {
using VoxelKey = std::array<int, 3>;

inline VoxelKey voxel_of(const std::array<double, 3>& p, double voxel) {
  return {static_cast<int>(std::floor(p[0] / voxel)),
          static_cast<int>(std::floor(p[1] / voxel)),
          static_cast<int>(std::floor(p[2] / voxel))};
}
}  // namespace detail

// Blocks are visited in snake order over the block grid (rows by origin_y,
// alternating origin_x direction). Each incoming local instance either joins
// the scene instance owning most of its already-claimed voxels (same class,
// ownership share >= iou_threshold) or opens a new id. Unclaimed voxels are
// then claimed first-writer. Scene points are finally labeled through the
// voxel map, searching outward in expanding shells where necessary, so every
// point receives exactly one scene-level id.
inline InstancePrediction block_merge(
    const std::vector<MergeInput>& blocks,
    const std::vector<std::array<double, 3>>& scene_xyz, const MergeGrid& grid,
    double iou_threshold) {
  grid.validate();
  check_arg(!blocks.empty(), "block_merge: no blocks");
  check_arg(!scene_xyz.empty(), "block_merge: empty scene");
  check_arg(iou_threshold >= 0.0 && iou_threshold <= 1.0,
            "block_merge: iou_threshold must be in [0,1]");
  for (const auto& b : blocks) {
    check_arg(b.world_xyz.size() == b.instance_ids.size(),
              "block_merge: block arrays disagree");
    for (int id : b.instance_ids)
      check_arg(id >= 0 && id < static_cast<int>(b.instance_classes.size()),
                "block_merge: local instance id out of range");
  }

  // snake order: rows by origin_y ascending, x alternating per row
  std::vector<int> order(blocks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (blocks[a].origin_y != blocks[b].origin_y)
      return blocks[a].origin_y < blocks[b].origin_y;
    return blocks[a].origin_x < blocks[b].origin_x;
  });
  {
    std::size_t row_start = 0;
    int row_index = 0;
    while (row_start < order.size()) {
      std::size_t row_end = row_start;
      while (row_end < order.size() &&
             blocks[order[row_end]].origin_y == blocks[order[row_start]].origin_y)
        ++row_end;
      if (row_index % 2 == 1)
        std::reverse(order.begin() + row_start, order.begin() + row_end);
      row_start = row_end;
      ++row_index;
    }
  }

  std::map<detail::VoxelKey, int> owner;
  std::vector<int> scene_class;  // per allocated scene id

  for (int bi : order) {
    const MergeInput& blk = blocks[bi];
    const int local_k = static_cast<int>(blk.instance_classes.size());
    // voxel sets per local instance, deduplicated
    std::vector<std::vector<detail::VoxelKey>> vox(local_k);
    for (std::size_t i = 0; i < blk.world_xyz.size(); ++i)
      vox[blk.instance_ids[i]].push_back(detail::voxel_of(blk.world_xyz[i], grid.voxel));
    for (auto& v : vox) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }

    for (int L = 0; L < local_k; ++L) {
      if (vox[L].empty()) continue;
      std::map<int, int> overlap;  // scene id -> shared voxel count
      int claimed = 0;
      for (const auto& key : vox[L]) {
        auto it = owner.find(key);
        if (it == owner.end()) continue;
        ++claimed;
        ++overlap[it->second];
      }
      int target = -1;
      if (claimed > 0) {
        int best_id = -1, best_count = 0;
        for (const auto& [id, count] : overlap)
          if (count > best_count) { best_count = count; best_id = id; }
        const double ratio = static_cast<double>(best_count) / claimed;
        if (ratio >= iou_threshold &&
            scene_class[best_id] == blk.instance_classes[L])
          target = best_id;
      }
      if (target < 0) {
        target = static_cast<int>(scene_class.size());
        scene_class.push_back(blk.instance_classes[L]);
      }
      for (const auto& key : vox[L]) owner.emplace(key, target);  // first writer
    }
  }

  // label every scene point through the voxel map
  InstancePrediction pred;
  pred.point_instance_ids.resize(scene_xyz.size());
  for (std::size_t p = 0; p < scene_xyz.size(); ++p) {
    const detail::VoxelKey base = detail::voxel_of(scene_xyz[p], grid.voxel);
    int found = -1;
    for (int r = 0; found < 0; ++r) {
      // expanding cubic shells, fixed enumeration order
      for (int dz = -r; dz <= r && found < 0; ++dz)
        for (int dy = -r; dy <= r && found < 0; ++dy)
          for (int dx = -r; dx <= r && found < 0; ++dx) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
            auto it = owner.find({base[0] + dx, base[1] + dy, base[2] + dz});
            if (it != owner.end()) found = it->second;
          }
      check_arg(r < 1 << 16, "block_merge: no claimed voxel reachable");
    }
    pred.point_instance_ids[p] = found;
  }

  // drop ids that won no points; keep allocation order
  std::vector<int> count(scene_class.size(), 0);
  for (int id : pred.point_instance_ids) ++count[id];
  std::vector<int> remap(scene_class.size(), -1);
  int next = 0;
  for (std::size_t id = 0; id < scene_class.size(); ++id)
    if (count[id] > 0) remap[id] = next++;
  for (int& id : pred.point_instance_ids) id = remap[id];
  for (std::size_t id = 0; id < scene_class.size(); ++id) {
    if (remap[id] < 0) continue;
    pred.instance_classes.push_back(scene_class[id]);
    pred.instance_sizes.push_back(count[id]);
    pred.instance_confidence.push_back(1.0);
  }
  return pred;
}

// Agreement between two labelings, corrected for chance. 1.0 means the
// partitions are identical up to relabeling.
inline double adjusted_rand_index(const std::vector<int>& a,
                                  const std::vector<int>& b) {
  check_arg(a.size() == b.size() && !a.empty(), "adjusted_rand_index: bad input");
  int ka = 0, kb = 0;
  for (int v : a) {
    check_arg(v >= 0, "adjusted_rand_index: negative label");
    ka = std::max(ka, v + 1);
  }
  for (int v : b) {
    check_arg(v >= 0, "adjusted_rand_index: negative label");
    kb = std::max(kb, v + 1);
  }
  std::vector<std::vector<long long>> table(ka, std::vector<long long>(kb, 0));
  std::vector<long long> ra(ka, 0), rb(kb, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++table[a[i]][b[i]];
    ++ra[a[i]];
    ++rb[b[i]];
  }
  auto choose2 = [](long long n) { return 0.5 * n * (n - 1); };
  double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (int i = 0; i < ka; ++i)
    for (int j = 0; j < kb; ++j) sum_ij += choose2(table[i][j]);
  for (int i = 0; i < ka; ++i) sum_a += choose2(ra[i]);
  for (int j = 0; j < kb; ++j) sum_b += choose2(rb[j]);
  const double total = choose2(static_cast<long long>(a.size()));
  const double expected = total > 0.0 ? sum_a * sum_b / total : 0.0;
  const double maximum = 0.5 * (sum_a + sum_b);
  if (maximum == expected) return 1.0;  // both partitions trivial
  return (sum_ij - expected) / (maximum - expected);
}

}  // namespace mpnet
