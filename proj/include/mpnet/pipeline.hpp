#pragma once

#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "mpnet/checkpoint.hpp"
#include "mpnet/config.hpp"
#include "mpnet/metrics.hpp"
#include "mpnet/model.hpp"

namespace mpnet {

__attribute__((format(printf, 1, 2))) inline std::string fmt_line(const char* fmt,
                                                                  ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  const int n = std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  check_arg(n >= 0 && n < static_cast<int>(sizeof(buf)), "fmt_line: overflow");
  return buf;
}

// Stream-independent seed derivation so the generator, the shuffles and the
// model init never share a raw sequence.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (0x9e3779b97f4a7c15ull * (b + 1));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

struct MemoryDataset {
  std::vector<Scene> train, eval;
  std::vector<bool> train_rare, eval_rare;  // a rare pattern actually placed
  std::vector<long long> class_points;      // over the train split
  std::vector<int> non_dominant;            // bottom half of classes by points
};

namespace detail {

inline void build_split(const RunConfig& cfg, int n, std::uint64_t tag,
                        std::vector<Scene>& out, std::vector<bool>& rare) {
  // force the rare pattern on ceil(rate * n) scenes chosen by seed, instead
  // of leaving the per-split rare count to chance
  const int forced = static_cast<int>(std::ceil(cfg.rare_pattern_rate * n));
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 pick(mix_seed(cfg.seed, tag));
  std::shuffle(idx.begin(), idx.end(), pick);
  std::vector<bool> force(n, false);
  for (int i = 0; i < forced && i < n; ++i) force[idx[i]] = true;
  for (int i = 0; i < n; ++i) {
    GeneratorConfig g = cfg.generator();
    g.rare_pattern_rate = force[i] ? 1.0 : 0.0;
    g.seed = mix_seed(cfg.seed, mix_seed(tag, i));
    Scene s = generate_scene(g);
    rare.push_back(s.rare_pattern);
    out.push_back(std::move(s));
  }
}

}  // namespace detail

inline MemoryDataset build_dataset(const RunConfig& cfg) {
  cfg.validate();
  MemoryDataset ds;
  detail::build_split(cfg, cfg.train_scenes, 0x11, ds.train, ds.train_rare);
  detail::build_split(cfg, cfg.eval_scenes, 0x22, ds.eval, ds.eval_rare);
  ds.class_points.assign(cfg.num_classes, 0);
  for (const Scene& s : ds.train)
    for (std::uint16_t c : s.semantic) ++ds.class_points[c];
  std::vector<int> ranked(cfg.num_classes);
  std::iota(ranked.begin(), ranked.end(), 0);
  std::stable_sort(ranked.begin(), ranked.end(), [&](int a, int b) {
    if (ds.class_points[a] != ds.class_points[b])
      return ds.class_points[a] < ds.class_points[b];
    return a < b;
  });
  ds.non_dominant.assign(ranked.begin(), ranked.begin() + cfg.num_classes / 2);
  std::sort(ds.non_dominant.begin(), ds.non_dominant.end());
  return ds;
}

namespace detail {

inline std::string scene_file(const char* split, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%03d.mpnc", split, i);
  return buf;
}

template <typename T>
std::string join_csv(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

inline std::vector<long long> split_csv(const std::string& s) {
  std::vector<long long> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t comma = s.find(',', pos);
    const std::string tok = s.substr(pos, comma == std::string::npos
                                              ? std::string::npos
                                              : comma - pos);
    if (!tok.empty()) out.push_back(std::stoll(tok));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace detail

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError(FormatError::Kind::io, "cannot open for write: " + path);
  os << content;
  if (!os) throw FormatError(FormatError::Kind::io, "write failed: " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(FormatError::Kind::io, "cannot open for read: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void save_dataset(const MemoryDataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ostringstream m;
  m << "classes=" << ds.class_points.size() << "\n";
  m << "train_count=" << ds.train.size() << "\n";
  m << "eval_count=" << ds.eval.size() << "\n";
  std::vector<long long> tr(ds.train_rare.begin(), ds.train_rare.end());
  std::vector<long long> er(ds.eval_rare.begin(), ds.eval_rare.end());
  m << "train_rare=" << detail::join_csv(tr) << "\n";
  m << "eval_rare=" << detail::join_csv(er) << "\n";
  m << "class_points=" << detail::join_csv(ds.class_points) << "\n";
  m << "non_dominant=" << detail::join_csv(ds.non_dominant) << "\n";
  write_text(dir + "/manifest.txt", m.str());
  for (std::size_t i = 0; i < ds.train.size(); ++i)
    write_scene(ds.train[i], dir + "/" + detail::scene_file("train", static_cast<int>(i)));
  for (std::size_t i = 0; i < ds.eval.size(); ++i)
    write_scene(ds.eval[i], dir + "/" + detail::scene_file("eval", static_cast<int>(i)));
}

inline MemoryDataset load_dataset(const std::string& dir) {
  const std::string manifest = read_text(dir + "/manifest.txt");
  std::istringstream is(manifest);
  std::string line;
  long long classes = 0, train_count = 0, eval_count = 0;
  std::vector<long long> train_rare, eval_rare, class_points, non_dominant;
  while (std::getline(is, line)) {
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "classes") classes = std::stoll(value);
    else if (key == "train_count") train_count = std::stoll(value);
    else if (key == "eval_count") eval_count = std::stoll(value);
    else if (key == "train_rare") train_rare = detail::split_csv(value);
    else if (key == "eval_rare") eval_rare = detail::split_csv(value);
    else if (key == "class_points") class_points = detail::split_csv(value);
    else if (key == "non_dominant") non_dominant = detail::split_csv(value);
    else throw FormatError(FormatError::Kind::truncated, "manifest: unknown key " + key);
  }
  check_arg(classes > 0 && train_count > 0 && eval_count > 0,
            "manifest: missing counts");
  check_arg(static_cast<long long>(train_rare.size()) == train_count &&
                static_cast<long long>(eval_rare.size()) == eval_count &&
                static_cast<long long>(class_points.size()) == classes,
            "manifest: inconsistent arrays");
  MemoryDataset ds;
  ds.class_points = class_points;
  for (long long v : non_dominant) ds.non_dominant.push_back(static_cast<int>(v));
  for (int i = 0; i < train_count; ++i) {
    ds.train.push_back(read_scene(dir + "/" + detail::scene_file("train", i)));
    ds.train_rare.push_back(train_rare[i] != 0);
  }
  for (int i = 0; i < eval_count; ++i) {
    ds.eval.push_back(read_scene(dir + "/" + detail::scene_file("eval", i)));
    ds.eval_rare.push_back(eval_rare[i] != 0);
  }
  return ds;
}

// ---- training ----

struct TrainSet {
  std::vector<Block> blocks;
  std::vector<LabeledBatch> labels;
};

inline TrainSet prepare_training_blocks(const std::vector<Scene>& scenes,
                                        const RunConfig& cfg) {
  TrainSet ts;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    auto blocks = blockify(scenes[i], cfg.blocks(true), mix_seed(cfg.seed, 0x7000 + i));
    if (cfg.max_blocks_per_scene > 0 &&
        static_cast<int>(blocks.size()) > cfg.max_blocks_per_scene) {
      std::vector<Block> kept;
      std::mt19937_64 rng(mix_seed(cfg.seed, 0x8000 + i));
      std::sample(blocks.begin(), blocks.end(), std::back_inserter(kept),
                  cfg.max_blocks_per_scene, rng);
      blocks = std::move(kept);
    }
    for (Block& b : blocks) {
      ts.labels.push_back(LabeledBatch::from_block(b));
      ts.blocks.push_back(std::move(b));
    }
  }
  check_arg(!ts.blocks.empty(), "prepare_training_blocks: no usable blocks");
  return ts;
}

struct TrainStats {
  std::vector<std::string> lines;  // one per finished epoch
  bool nan_abort = false;
  std::uint64_t global_step = 0;
  int epochs_done = 0;
};

// Gradients accumulate over batch_blocks forward passes, are averaged, and
// one optimizer step moves every parameter. The per-epoch callback runs
// after the epoch's log line exists, so callers can persist state; a
// non-finite loss stops training before the callback, which keeps the last
// finished epoch's checkpoint in place.
inline TrainStats train_model(
    Model& model, const TrainSet& ts, const RunConfig& cfg, int start_epoch = 0,
    std::uint64_t start_step = 0,
    const std::function<void(const TrainStats&)>& on_epoch = {}) {
  const OptimizerConfig opt = cfg.optimizer();
  auto params = model.parameters();
  TrainStats st;
  st.global_step = start_step;
  st.epochs_done = start_epoch;
  const int n = static_cast<int>(ts.blocks.size());
  std::vector<int> order(n);
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(cfg.seed, 0xE0000000ull + epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double sum_total = 0, sum_ce = 0, sum_dis = 0, sum_rseg = 0, sum_rins = 0;
    int in_batch = 0;
    model.zero_grads();
    for (int k = 0; k < n; ++k) {
      Graph g;
      const int bi = order[k];
      const auto fw =
          forward_block(g, model, ts.blocks[bi].points, &ts.labels[bi], cfg.use_focal);
      const double total = g.value(fw.total).at(0, 0);
      if (!std::isfinite(total)) {
        st.nan_abort = true;
        st.lines.push_back(fmt_line("epoch=%d aborted=non_finite_loss block=%d",
                                    epoch, bi));
        return st;
      }
      sum_total += total;
      sum_ce += g.value(fw.loss_ce).at(0, 0);
      sum_dis += g.value(fw.loss_dis).at(0, 0);
      if (fw.r_seg >= 0) sum_rseg += g.value(fw.r_seg).at(0, 0);
      if (fw.r_ins >= 0) sum_rins += g.value(fw.r_ins).at(0, 0);
      g.backward(fw.total);
      ++in_batch;
      if (in_batch == cfg.batch_blocks || k == n - 1) {
        const double inv = 1.0 / in_batch;
        for (Parameter* p : params) {
          for (double& v : *p->tensor.grad) v *= inv;
          adam_step(*p, opt);
        }
        ++st.global_step;
        in_batch = 0;
        model.zero_grads();
      }
    }
    st.lines.push_back(fmt_line(
        "epoch=%d step=%llu loss=%.10g ce=%.10g dis=%.10g rseg=%.10g rins=%.10g blocks=%d",
        epoch, static_cast<unsigned long long>(st.global_step), sum_total / n,
        sum_ce / n, sum_dis / n, sum_rseg / n, sum_rins / n, n));
    st.epochs_done = epoch + 1;
    if (on_epoch) on_epoch(st);
  }
  return st;
}

// ---- inference and evaluation ----

struct SceneInference {
  std::vector<int> semantic;  // final per-point classes
  InstancePrediction instances;
};

inline SceneInference infer_scene(Model& model, const Scene& scene,
                                  const RunConfig& cfg,
                                  std::uint64_t block_tag = 0x5EED) {
  auto blocks = blockify(scene, cfg.blocks(false), mix_seed(cfg.seed, block_tag));
  check_arg(!blocks.empty(), "infer_scene: scene yields no usable blocks");
  const int P = scene.num_points();
  const int C = cfg.num_classes;
  std::vector<std::vector<int>> votes(P, std::vector<int>(C, 0));
  std::vector<MergeInput> inputs;
  const MeanShiftConfig ms_cfg = cfg.mean_shift();
  for (const Block& b : blocks) {
    Graph g;
    const auto fw = forward_block(g, model, b.points, nullptr, false);
    const Tensor& probs = g.value(fw.probs);
    const Tensor& embed = g.value(fw.embed);
    std::vector<int> cls(b.count());
    for (int i = 0; i < b.count(); ++i) {
      int best = 0;
      for (int c = 1; c < C; ++c)
        if (probs.at(i, c) > probs.at(i, best)) best = c;
      cls[i] = best;
      ++votes[b.scene_indices[i]][best];
    }
    const auto clusters = mean_shift(embed, ms_cfg);
    auto ip = assign_class(clusters, cls, C);
    MergeInput mi;
    mi.origin_x = b.origin_x;
    mi.origin_y = b.origin_y;
    mi.world_xyz.resize(b.count());
    for (int i = 0; i < b.count(); ++i) {
      const int idx = b.scene_indices[i];
      mi.world_xyz[i] = {scene.coord(idx, 0), scene.coord(idx, 1), scene.coord(idx, 2)};
    }
    mi.instance_ids = std::move(ip.point_instance_ids);
    mi.instance_classes = std::move(ip.instance_classes);
    inputs.push_back(std::move(mi));
  }
  std::vector<std::array<double, 3>> world(P);
  for (int i = 0; i < P; ++i)
    world[i] = {scene.coord(i, 0), scene.coord(i, 1), scene.coord(i, 2)};
  SceneInference out;
  out.instances = block_merge(inputs, world, cfg.merge_grid(), cfg.merge_iou);
  out.semantic.resize(P);
  for (int i = 0; i < P; ++i) {
    int best = -1;
    for (int c = 0; c < C; ++c)
      if (votes[i][c] > 0 && (best < 0 || votes[i][c] > votes[i][best])) best = c;
    if (best < 0)  // never sampled by a block: inherit its instance's class
      best = out.instances.instance_classes[out.instances.point_instance_ids[i]];
    out.semantic[i] = best;
  }
  return out;
}

struct EvalScene {
  SemanticReport sem;
  InstanceReport inst;
  bool rare = false;
};

struct EvalSummary {
  std::vector<EvalScene> per_scene;
  double oacc = 0, macc = 0, miou = 0;
  double mcov = 0, mwcov = 0, mprec = 0, mrec = 0;
  double nd_mrec = 0;  // instance recall over the non-dominant classes
  int nd_scenes = 0;
  double rare_miou = 0, rare_mrec = 0;
  int rare_scenes = 0;
  std::vector<std::string> lines;
};

inline EvalSummary evaluate_model(Model& model, const std::vector<Scene>& scenes,
                                  const std::vector<bool>& rare,
                                  const std::vector<int>& non_dominant,
                                  const RunConfig& cfg) {
  check_arg(!scenes.empty() && scenes.size() == rare.size(),
            "evaluate_model: bad scene list");
  EvalSummary s;
  const int C = cfg.num_classes;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& scene = scenes[i];
    const auto inf = infer_scene(model, scene, cfg, 0x5EED0000ull + i);
    std::vector<int> gt_sem(scene.semantic.begin(), scene.semantic.end());
    std::vector<int> gt_ins(scene.instance.begin(), scene.instance.end());
    EvalScene es;
    es.rare = rare[i];
    es.sem = semantic_metrics(inf.semantic, gt_sem, C);
    es.inst = instance_metrics(inf.instances, gt_ins, gt_sem, C, cfg.eval_iou);
    s.oacc += es.sem.oacc;
    s.macc += es.sem.macc;
    s.miou += es.sem.miou;
    s.mcov += es.inst.mcov;
    s.mwcov += es.inst.mwcov;
    s.mprec += es.inst.mprec;
    s.mrec += es.inst.mrec;
    double nd = 0;
    int nd_count = 0;
    for (int c : non_dominant)
      if (es.inst.class_num_gt[c] > 0) {
        nd += es.inst.class_rec[c];
        ++nd_count;
      }
    if (nd_count > 0) {
      s.nd_mrec += nd / nd_count;
      ++s.nd_scenes;
    }
    if (es.rare) {
      s.rare_miou += es.sem.miou;
      s.rare_mrec += es.inst.mrec;
      ++s.rare_scenes;
    }
    s.lines.push_back(fmt_line(
        "scene=%d rare=%d oacc=%.10g macc=%.10g miou=%.10g mcov=%.10g mwcov=%.10g "
        "mprec=%.10g mrec=%.10g instances=%d",
        static_cast<int>(i), es.rare ? 1 : 0, es.sem.oacc, es.sem.macc, es.sem.miou,
        es.inst.mcov, es.inst.mwcov, es.inst.mprec, es.inst.mrec,
        inf.instances.num_instances()));
    s.per_scene.push_back(std::move(es));
  }
  const double n = static_cast<double>(scenes.size());
  s.oacc /= n;
  s.macc /= n;
  s.miou /= n;
  s.mcov /= n;
  s.mwcov /= n;
  s.mprec /= n;
  s.mrec /= n;
  if (s.nd_scenes > 0) s.nd_mrec /= s.nd_scenes;
  if (s.rare_scenes > 0) {
    s.rare_miou /= s.rare_scenes;
    s.rare_mrec /= s.rare_scenes;
  }
  s.lines.push_back(fmt_line(
      "scenes=%d oacc=%.10g macc=%.10g miou=%.10g mcov=%.10g mwcov=%.10g "
      "mprec=%.10g mrec=%.10g nd_mrec=%.10g nd_scenes=%d rare_scenes=%d "
      "rare_miou=%.10g rare_mrec=%.10g",
      static_cast<int>(scenes.size()), s.oacc, s.macc, s.miou, s.mcov, s.mwcov,
      s.mprec, s.mrec, s.nd_mrec, s.nd_scenes, s.rare_scenes, s.rare_miou,
      s.rare_mrec));
  return s;
}

// Per-point addressing weight of one memory slot, maximized over the blocks
// that sampled the point. Visualizes what a slot has specialized to.
inline std::vector<double> slot_attention(Model& model, const Scene& scene,
                                          int slot, const RunConfig& cfg) {
  check_arg(model.memory.has_value(), "slot_attention: model has no memory");
  check_arg(slot >= 0 && slot < model.memory->num_slots(),
            "slot_attention: slot out of range");
  auto blocks = blockify(scene, cfg.blocks(false), mix_seed(cfg.seed, 0xA11E));
  check_arg(!blocks.empty(), "slot_attention: scene yields no usable blocks");
  std::vector<double> out(scene.num_points(), 0.0);
  for (const Block& b : blocks) {
    Graph g;
    const auto fw = forward_block(g, model, b.points, nullptr, false);
    const Graph::Id w_id = fw.w_ins >= 0 ? fw.w_ins : fw.alpha_seg;
    check_arg(w_id >= 0, "slot_attention: forward produced no addressing weights");
    const Tensor& w = g.value(w_id);
    for (int i = 0; i < b.count(); ++i)
      out[b.scene_indices[i]] = std::max(out[b.scene_indices[i]], w.at(i, slot));
  }
  return out;
}

// ---- ablation rows ----

// A row keeps the caller's scale and schedule and takes only the objective
// switches from the named preset.
inline RunConfig row_config(const RunConfig& base, const std::string& row) {
  const RunConfig flags = preset(row);
  RunConfig out = base;
  out.use_ins_memory = flags.use_ins_memory;
  out.use_seg_memory = flags.use_seg_memory;
  out.use_squash = flags.use_squash;
  out.use_r_seg = flags.use_r_seg;
  out.use_r_ins = flags.use_r_ins;
  out.use_focal = flags.use_focal;
  out.validate();
  return out;
}

struct BenchRun {
  std::string row;
  int seed = 0;
  TrainStats train;
  EvalSummary eval;
};

inline BenchRun run_benchmark(const RunConfig& cfg, const std::string& row_name,
                              const MemoryDataset& ds) {
  BenchRun br;
  br.row = row_name;
  br.seed = cfg.seed;
  Model model(cfg.model(), cfg.loss(), mix_seed(cfg.seed, 0x0DE1));
  const TrainSet ts = prepare_training_blocks(ds.train, cfg);
  br.train = train_model(model, ts, cfg);
  if (!br.train.nan_abort)
    br.eval = evaluate_model(model, ds.eval, ds.eval_rare, ds.non_dominant, cfg);
  return br;
}

}  // namespace mpnet
