#pragma once

#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "mpnet/encoder.hpp"
#include "mpnet/grouping.hpp"
#include "mpnet/io.hpp"
#include "mpnet/losses.hpp"
#include "mpnet/model.hpp"
#include "mpnet/scene.hpp"

namespace mpnet {

// Every knob a run can turn, flat so it can round-trip through key=value
// text. The defaults are the desk-scale preset; see preset() for the rest.
struct RunConfig {
  int seed = 1;
  int num_classes = 6;

  // dataset
  int train_scenes = 40;
  int eval_scenes = 10;
  int points_per_scene = 20000;
  double rare_pattern_rate = 0.1;
  double color_jitter = 0.10;
  double alt_color_rate = 0.35;

  // block cutting
  double block_size = 1.0;
  double stride = 0.5;
  int train_samples = 256;
  int eval_samples = 512;
  int min_block_points = 100;
  int max_blocks_per_scene = 16;  // 0 keeps every block

  // network
  int hidden0 = 32;
  int hidden1 = 64;
  int shared_dim = 64;
  int feature_dim = 32;
  double grid_cell = 0.25;
  int slots_per_class = 8;
  // plain softmax over cosines; sharper addressing starves the gradient of
  // points that start out addressed to the wrong class block
  double tau = 1.0;
  int embed_dim = 5;
  int g_hidden = 32;

  // objective
  double margin_m = 5.0;
  double sigma_v = 0.5;
  double sigma_d = 1.5;
  double lambda_ins = 0.1;
  double focal_gamma = 2.0;
  bool use_ins_memory = true;
  bool use_seg_memory = true;
  bool use_squash = true;
  bool use_r_seg = true;
  bool use_r_ins = true;
  bool use_focal = false;

  // optimizer
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  long long decay_every = 300000;
  double decay_factor = 0.5;

  // schedule
  int epochs = 30;
  // small batches buy more optimizer steps per epoch; the readers need a few
  // hundred steps before the addressing sharpens, and desk-scale epochs are
  // short
  int batch_blocks = 4;

  // grouping and stitching
  double bandwidth = 0.6;
  double merge_radius = 0.3;
  int mean_shift_iters = 100;
  double mean_shift_eps = 1e-4;
  double merge_voxel = 0.05;
  double merge_iou = 0.3;
  double eval_iou = 0.5;

  GeneratorConfig generator() const {
    GeneratorConfig g;
    g.num_classes = num_classes;
    g.rare_pattern_rate = rare_pattern_rate;
    g.points_per_scene = points_per_scene;
    g.color_jitter = color_jitter;
    g.alt_color_rate = alt_color_rate;
    return g;
  }

  BlockSpec blocks(bool training) const {
    BlockSpec b;
    b.block_size = block_size;
    b.stride = stride;
    b.samples_per_block = training ? train_samples : eval_samples;
    b.min_points = min_block_points;
    return b;
  }

  ModelConfig model() const {
    ModelConfig m;
    m.encoder.input_dim = 6;
    m.encoder.hidden = {hidden0, hidden1};
    m.encoder.shared_dim = shared_dim;
    m.encoder.feature_dim = feature_dim;
    m.encoder.grid_cell = grid_cell;
    m.num_classes = num_classes;
    m.slots_per_class = slots_per_class;
    m.tau = tau;
    m.g_hidden = g_hidden;
    m.use_ins_memory = use_ins_memory;
    m.use_seg_memory = use_seg_memory;
    m.use_r_seg = use_r_seg;
    m.use_r_ins = use_r_ins;
    return m;
  }

  LossConfig loss() const {
    LossConfig l;
    l.margin_m = margin_m;
    l.sigma_v = sigma_v;
    l.sigma_d = sigma_d;
    l.lambda_ins = lambda_ins;
    l.embed_dim = embed_dim;
    l.focal_gamma = focal_gamma;
    l.use_squash = use_squash;
    return l;
  }

  OptimizerConfig optimizer() const {
    OptimizerConfig o;
    o.learning_rate = lr;
    o.beta1 = beta1;
    o.beta2 = beta2;
    o.epsilon = adam_eps;
    o.decay_every = decay_every;
    o.decay_factor = decay_factor;
    return o;
  }

  MeanShiftConfig mean_shift() const {
    MeanShiftConfig m;
    m.bandwidth = bandwidth;
    m.merge_radius = merge_radius;
    m.max_iters = mean_shift_iters;
    m.convergence_eps = mean_shift_eps;
    return m;
  }

  MergeGrid merge_grid() const { return MergeGrid{merge_voxel}; }

  void validate() const {
    generator().validate();
    blocks(true).validate();
    blocks(false).validate();
    model().validate();
    loss().validate();
    optimizer().validate();
    mean_shift().validate();
    merge_grid().validate();
    check_arg(epochs > 0 && batch_blocks > 0, "RunConfig: bad schedule");
    check_arg(max_blocks_per_scene >= 0, "RunConfig: bad block cap");
    check_arg(train_scenes > 0 && eval_scenes > 0, "RunConfig: bad scene counts");
    check_arg(merge_iou >= 0.0 && merge_iou <= 1.0, "RunConfig: bad merge_iou");
    check_arg(eval_iou > 0.0 && eval_iou <= 1.0, "RunConfig: bad eval_iou");
  }
};

namespace detail {

using ConfigField = std::variant<int RunConfig::*, double RunConfig::*,
                                 bool RunConfig::*, long long RunConfig::*>;

inline const std::vector<std::pair<std::string, ConfigField>>& config_fields() {
  static const std::vector<std::pair<std::string, ConfigField>> fields = {
      {"seed", &RunConfig::seed},
      {"num_classes", &RunConfig::num_classes},
      {"train_scenes", &RunConfig::train_scenes},
      {"eval_scenes", &RunConfig::eval_scenes},
      {"points_per_scene", &RunConfig::points_per_scene},
      {"rare_pattern_rate", &RunConfig::rare_pattern_rate},
      {"color_jitter", &RunConfig::color_jitter},
      {"alt_color_rate", &RunConfig::alt_color_rate},
      {"block_size", &RunConfig::block_size},
      {"stride", &RunConfig::stride},
      {"train_samples", &RunConfig::train_samples},
      {"eval_samples", &RunConfig::eval_samples},
      {"min_block_points", &RunConfig::min_block_points},
      {"max_blocks_per_scene", &RunConfig::max_blocks_per_scene},
      {"hidden0", &RunConfig::hidden0},
      {"hidden1", &RunConfig::hidden1},
      {"shared_dim", &RunConfig::shared_dim},
      {"feature_dim", &RunConfig::feature_dim},
      {"grid_cell", &RunConfig::grid_cell},
      {"slots_per_class", &RunConfig::slots_per_class},
      {"tau", &RunConfig::tau},
      {"embed_dim", &RunConfig::embed_dim},
      {"g_hidden", &RunConfig::g_hidden},
      {"margin_m", &RunConfig::margin_m},
      {"sigma_v", &RunConfig::sigma_v},
      {"sigma_d", &RunConfig::sigma_d},
      {"lambda_ins", &RunConfig::lambda_ins},
      {"focal_gamma", &RunConfig::focal_gamma},
      {"use_ins_memory", &RunConfig::use_ins_memory},
      {"use_seg_memory", &RunConfig::use_seg_memory},
      {"use_squash", &RunConfig::use_squash},
      {"use_r_seg", &RunConfig::use_r_seg},
      {"use_r_ins", &RunConfig::use_r_ins},
      {"use_focal", &RunConfig::use_focal},
      {"lr", &RunConfig::lr},
      {"beta1", &RunConfig::beta1},
      {"beta2", &RunConfig::beta2},
      {"adam_eps", &RunConfig::adam_eps},
      {"decay_every", &RunConfig::decay_every},
      {"decay_factor", &RunConfig::decay_factor},
      {"epochs", &RunConfig::epochs},
      {"batch_blocks", &RunConfig::batch_blocks},
      {"bandwidth", &RunConfig::bandwidth},
      {"merge_radius", &RunConfig::merge_radius},
      {"mean_shift_iters", &RunConfig::mean_shift_iters},
      {"mean_shift_eps", &RunConfig::mean_shift_eps},
      {"merge_voxel", &RunConfig::merge_voxel},
      {"merge_iou", &RunConfig::merge_iou},
      {"eval_iou", &RunConfig::eval_iou},
  };
  return fields;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

inline std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& [name, field] : detail::config_fields()) {
    os << name << "=";
    if (const auto* pi = std::get_if<int RunConfig::*>(&field))
      os << cfg.**pi;
    else if (const auto* pd = std::get_if<double RunConfig::*>(&field))
      os << detail::format_double(cfg.**pd);
    else if (const auto* pb = std::get_if<bool RunConfig::*>(&field))
      os << (cfg.**pb ? "true" : "false");
    else
      os << cfg.*std::get<long long RunConfig::*>(field);
    os << "\n";
  }
  return os.str();
}

inline std::uint64_t config_hash(const RunConfig& cfg) {
  return fnv1a_hash(serialize_config(cfg));
}

// Applies key=value lines on top of the given config. Lines that are empty
// or start with '#' are skipped; unknown keys and malformed values throw.
inline void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string stripped = detail::trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    check_arg(eq != std::string::npos,
              "config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = detail::trim(stripped.substr(0, eq));
    const std::string value = detail::trim(stripped.substr(eq + 1));
    bool found = false;
    for (const auto& [name, field] : detail::config_fields()) {
      if (name != key) continue;
      found = true;
      try {
        if (const auto* pi = std::get_if<int RunConfig::*>(&field)) {
          std::size_t used = 0;
          cfg.**pi = std::stoi(value, &used);
          check_arg(used == value.size(), "trailing characters");
        } else if (const auto* pd = std::get_if<double RunConfig::*>(&field)) {
          std::size_t used = 0;
          cfg.**pd = std::stod(value, &used);
          check_arg(used == value.size(), "trailing characters");
        } else if (const auto* pb = std::get_if<bool RunConfig::*>(&field)) {
          if (value == "true" || value == "1")
            cfg.**pb = true;
          else if (value == "false" || value == "0")
            cfg.**pb = false;
          else
            throw std::invalid_argument("expected true/false");
        } else {
          std::size_t used = 0;
          cfg.*std::get<long long RunConfig::*>(field) = std::stoll(value, &used);
          check_arg(used == value.size(), "trailing characters");
        }
      } catch (const std::exception& e) {
        throw std::invalid_argument("config key '" + key + "': bad value '" +
                                    value + "' (" + e.what() + ")");
      }
      break;
    }
    check_arg(found, "config: unknown key '" + key + "'");
  }
}

inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  apply_config_text(cfg, text);
  return cfg;
}

// Named starting points. "desk" is the default-scale run; "paper" restores
// the large-scale hyperparameters; the remaining names are the ablation rows
// building up from a memoryless baseline to the full objective.
inline RunConfig preset(const std::string& name) {
  RunConfig cfg;
  auto strip_all = [&] {
    cfg.use_ins_memory = false;
    cfg.use_seg_memory = false;
    cfg.use_squash = false;
    cfg.use_r_seg = false;
    cfg.use_r_ins = false;
    cfg.use_focal = false;
  };
  if (name == "desk" || name == "full") {
    // defaults already describe the full desk-scale model
  } else if (name == "paper") {
    cfg.slots_per_class = 150;
    cfg.epochs = 100;
    cfg.train_samples = 4096;
    cfg.eval_samples = 4096;
    cfg.max_blocks_per_scene = 0;
    cfg.lambda_ins = 0.01;
  } else if (name == "baseline") {
    strip_all();
  } else if (name == "focal") {
    strip_all();
    cfg.use_focal = true;
  } else if (name == "ins_mem") {
    strip_all();
    cfg.use_ins_memory = true;
  } else if (name == "ins_seg_mem") {
    strip_all();
    cfg.use_ins_memory = true;
    cfg.use_seg_memory = true;
    cfg.use_squash = true;
  } else {
    throw std::invalid_argument("unknown preset: " + name);
  }
  cfg.validate();
  return cfg;
}

inline const std::vector<std::string>& ablation_presets() {
  static const std::vector<std::string> rows = {"baseline", "focal", "ins_mem",
                                                "ins_seg_mem", "full"};
  return rows;
}

}  // namespace mpnet
