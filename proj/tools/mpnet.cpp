#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <map>

#include "mpnet/pipeline.hpp"

namespace {

using namespace mpnet;
namespace fs = std::filesystem;

constexpr const char* kToolVersion = "0.1.0";

struct CommonArgs {
  std::string config_path;
  std::string preset_name = "desk";
  int seed = 0;
  int epochs = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* epochs_opt = nullptr;

  void attach(CLI::App* cmd, bool with_epochs) {
    cmd->add_option("--config", config_path, "key=value overrides, applied over the preset")
        ->check(CLI::ExistingFile);
    cmd->add_option("--preset", preset_name,
                    "starting point: desk, paper, baseline, focal, ins_mem, "
                    "ins_seg_mem, full");
    seed_opt = cmd->add_option("--seed", seed, "run seed");
    if (with_epochs) epochs_opt = cmd->add_option("--epochs", epochs, "epoch count");
  }

  RunConfig resolve() const {
    RunConfig cfg = preset(preset_name);
    if (!config_path.empty()) apply_config_text(cfg, read_text(config_path));
    if (seed_opt && seed_opt->count()) cfg.seed = seed;
    if (epochs_opt && epochs_opt->count()) cfg.epochs = epochs;
    cfg.validate();
    return cfg;
  }
};

void write_run_files(const std::string& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  write_text(dir + "/config.txt", serialize_config(cfg));
  write_text(dir + "/version.txt", std::string(kToolVersion) + "\n");
}

void emit(const std::vector<std::string>& lines, const std::string& path) {
  std::string joined;
  for (const auto& l : lines) {
    std::cout << l << "\n";
    joined += l;
    joined += "\n";
  }
  write_text(path, joined);
}

int cmd_gen_data(const CommonArgs& common, const std::string& out) {
  const RunConfig cfg = common.resolve();
  write_run_files(out, cfg);
  const MemoryDataset ds = build_dataset(cfg);
  save_dataset(ds, out);
  int train_rare = 0, eval_rare = 0;
  for (bool r : ds.train_rare) train_rare += r;
  for (bool r : ds.eval_rare) eval_rare += r;
  std::vector<std::string> lines;
  lines.push_back(fmt_line("train_scenes=%d eval_scenes=%d train_rare=%d eval_rare=%d",
                           static_cast<int>(ds.train.size()),
                           static_cast<int>(ds.eval.size()), train_rare, eval_rare));
  std::string nd = "non_dominant=";
  for (std::size_t i = 0; i < ds.non_dominant.size(); ++i)
    nd += (i ? "," : "") + std::to_string(ds.non_dominant[i]);
  lines.push_back(nd);
  emit(lines, out + "/gen_log.txt");
  return 0;
}

int cmd_train(const CommonArgs& common, const std::string& data,
              const std::string& out, const std::string& resume) {
  const RunConfig cfg = common.resolve();
  write_run_files(out, cfg);
  const MemoryDataset ds = load_dataset(data);
  Model model(cfg.model(), cfg.loss(), mix_seed(cfg.seed, 0x0DE1));
  int start_epoch = 0;
  std::uint64_t start_step = 0;
  if (!resume.empty()) {
    const CheckpointMeta meta =
        load_checkpoint(resume, model.parameters(), config_hash(cfg));
    if (!meta.hash_matches)
      std::cerr << "warning: checkpoint was trained under a different config\n";
    start_epoch = static_cast<int>(meta.epochs_done);
    start_step = meta.global_step;
  }
  const TrainSet ts = prepare_training_blocks(ds.train, cfg);

  const std::string ckpt_path = out + "/checkpoint.mpck";
  CheckpointMeta meta;
  meta.config_text = serialize_config(cfg);
  meta.config_hash = config_hash(cfg);
  auto on_epoch = [&](const TrainStats& st) {
    meta.epochs_done = static_cast<std::uint32_t>(st.epochs_done);
    meta.global_step = st.global_step;
    save_checkpoint(ckpt_path, model.parameters(), meta);
    std::cout << st.lines.back() << "\n" << std::flush;
  };
  const TrainStats st =
      train_model(model, ts, cfg, start_epoch, start_step, on_epoch);
  std::string joined;
  for (const auto& l : st.lines) joined += l + "\n";
  write_text(out + "/train_log.txt", joined);
  if (st.nan_abort) {
    std::cerr << st.lines.back() << "\n";
    std::cerr << "training aborted; last finished epoch's checkpoint kept\n";
    return 3;
  }
  return 0;
}

// Rebuild the model a checkpoint was trained with, then apply overrides that
// only touch evaluation-time behavior.
RunConfig config_from_checkpoint(const CommonArgs& common, const std::string& model_path) {
  RunConfig cfg = parse_config(read_checkpoint_meta(model_path).config_text);
  if (!common.config_path.empty())
    apply_config_text(cfg, read_text(common.config_path));
  if (common.seed_opt && common.seed_opt->count()) cfg.seed = common.seed;
  cfg.validate();
  return cfg;
}

int cmd_eval(const CommonArgs& common, const std::string& data,
             const std::string& model_path, const std::string& out) {
  const RunConfig cfg = config_from_checkpoint(common, model_path);
  write_run_files(out, cfg);
  Model model(cfg.model(), cfg.loss(), mix_seed(cfg.seed, 0x0DE1));
  const CheckpointMeta meta =
      load_checkpoint(model_path, model.parameters(), config_hash(cfg));
  if (!meta.hash_matches)
    std::cerr << "warning: evaluating under a config the checkpoint was not trained with\n";
  const MemoryDataset ds = load_dataset(data);
  const EvalSummary s =
      evaluate_model(model, ds.eval, ds.eval_rare, ds.non_dominant, cfg);
  emit(s.lines, out + "/eval_log.txt");
  write_text(out + "/metrics.txt", s.lines.back() + "\n");
  return 0;
}

int cmd_infer(const CommonArgs& common, const std::string& data,
              const std::string& model_path, const std::string& out, int scene_idx) {
  const RunConfig cfg = config_from_checkpoint(common, model_path);
  write_run_files(out, cfg);
  Model model(cfg.model(), cfg.loss(), mix_seed(cfg.seed, 0x0DE1));
  load_checkpoint(model_path, model.parameters());
  const MemoryDataset ds = load_dataset(data);
  check_arg(scene_idx >= 0 && scene_idx < static_cast<int>(ds.eval.size()),
            "infer: --scene out of range for the eval split");
  const Scene& scene = ds.eval[scene_idx];
  const SceneInference inf = infer_scene(model, scene, cfg);
  const std::string ply = out + fmt_line("/scene_%03d_pred.ply", scene_idx);
  write_ply(ply, scene, &inf.instances.point_instance_ids, nullptr, &inf.semantic);
  std::vector<std::string> lines;
  lines.push_back(fmt_line("scene=%d points=%d instances=%d ply=%s", scene_idx,
                           scene.num_points(), inf.instances.num_instances(),
                           ply.c_str()));
  emit(lines, out + "/infer_log.txt");
  return 0;
}

int cmd_inspect_memory(const CommonArgs& common, const std::string& data,
                       const std::string& model_path, const std::string& out,
                       int scene_idx, int slot) {
  const RunConfig cfg = config_from_checkpoint(common, model_path);
  write_run_files(out, cfg);
  Model model(cfg.model(), cfg.loss(), mix_seed(cfg.seed, 0x0DE1));
  load_checkpoint(model_path, model.parameters());
  check_arg(model.memory.has_value(), "inspect-memory: this model has no memory");
  const MemoryDataset ds = load_dataset(data);
  check_arg(scene_idx >= 0 && scene_idx < static_cast<int>(ds.eval.size()),
            "inspect-memory: --scene out of range for the eval split");
  const Scene& scene = ds.eval[scene_idx];

  std::vector<std::string> lines;
  const Tensor& rows = model.memory->m.tensor;
  for (int s = 0; s < rows.rows; ++s) {
    double norm2 = 0;
    for (int d = 0; d < rows.cols; ++d) norm2 += rows.at(s, d) * rows.at(s, d);
    lines.push_back(fmt_line("slot=%d class=%d norm=%.10g", s,
                             s / model.memory->slots_per_class, std::sqrt(norm2)));
  }
  const auto w = slot_attention(model, scene, slot, cfg);
  double peak = 0, mean = 0;
  for (double v : w) {
    peak = std::max(peak, v);
    mean += v;
  }
  mean /= w.empty() ? 1 : static_cast<double>(w.size());
  lines.push_back(fmt_line("scene=%d slot=%d attention_mean=%.10g attention_peak=%.10g",
                           scene_idx, slot, mean, peak));
  const std::string ply = out + fmt_line("/slot_%03d_scene_%03d.ply", slot, scene_idx);
  // stretch to full gray range so the picture survives low peak weights
  std::vector<double> gray(w.size(), 0.0);
  for (std::size_t i = 0; i < w.size(); ++i)
    gray[i] = peak > 0 ? w[i] / peak : 0.0;
  write_ply(ply, scene, nullptr, &gray);
  lines.push_back(fmt_line("ply=%s", ply.c_str()));
  emit(lines, out + "/inspect_log.txt");
  return 0;
}

int cmd_ablate(const CommonArgs& common, const std::string& out,
               std::vector<int> seeds, std::vector<std::string> rows) {
  const RunConfig base = common.resolve();
  write_run_files(out, base);
  if (seeds.empty()) seeds = {base.seed};
  if (rows.empty()) rows = ablation_presets();
  std::vector<std::string> lines;
  std::map<int, MemoryDataset> datasets;
  for (int seed : seeds) {
    RunConfig keyed = base;
    keyed.seed = seed;
    datasets.emplace(seed, build_dataset(keyed));
  }
  for (const std::string& row : rows) {
    for (int seed : seeds) {
      RunConfig cfg = row_config(base, row);
      cfg.seed = seed;
      const BenchRun br = run_benchmark(cfg, row, datasets.at(seed));
      if (br.train.nan_abort) {
        lines.push_back(fmt_line("row=%s seed=%d aborted=non_finite_loss",
                                 row.c_str(), seed));
      } else {
        lines.push_back(fmt_line(
            "row=%s seed=%d oacc=%.10g macc=%.10g miou=%.10g mcov=%.10g "
            "mwcov=%.10g mprec=%.10g mrec=%.10g nd_mrec=%.10g rare_mrec=%.10g",
            row.c_str(), seed, br.eval.oacc, br.eval.macc, br.eval.miou,
            br.eval.mcov, br.eval.mwcov, br.eval.mprec, br.eval.mrec,
            br.eval.nd_mrec, br.eval.rare_mrec));
      }
      std::cout << lines.back() << "\n" << std::flush;
    }
  }
  std::string joined;
  for (const auto& l : lines) joined += l + "\n";
  write_text(out + "/table.txt", joined);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memory-augmented point cloud segmentation"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, infer_args, inspect_args, ablate_args;
  std::string gen_out, train_data, train_out, train_resume, eval_data, eval_model,
      eval_out, infer_data, infer_model, infer_out, inspect_data, inspect_model,
      inspect_out, ablate_out;
  int infer_scene_idx = 0, inspect_scene_idx = 0, inspect_slot = 0;
  std::vector<int> ablate_seeds;
  std::vector<std::string> ablate_rows;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen_args.attach(gen, false);
  gen->add_option("--out", gen_out, "output directory")->required();

  CLI::App* train = app.add_subcommand("train", "train a model on a dataset");
  train_args.attach(train, true);
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "run directory")->required();
  train->add_option("--resume", train_resume, "checkpoint to continue from")
      ->check(CLI::ExistingFile);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_args.attach(eval, false);
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--model", eval_model, "checkpoint path")->required();
  eval->add_option("--out", eval_out, "output directory")->required();

  CLI::App* infer = app.add_subcommand("infer", "label one scene and write a PLY");
  infer_args.attach(infer, false);
  infer->add_option("--data", infer_data, "dataset directory")->required();
  infer->add_option("--model", infer_model, "checkpoint path")->required();
  infer->add_option("--out", infer_out, "output directory")->required();
  infer->add_option("--scene", infer_scene_idx, "eval-split scene index");

  CLI::App* inspect = app.add_subcommand("inspect-memory",
                                         "visualize slot addressing weights");
  inspect_args.attach(inspect, false);
  inspect->add_option("--data", inspect_data, "dataset directory")->required();
  inspect->add_option("--model", inspect_model, "checkpoint path")->required();
  inspect->add_option("--out", inspect_out, "output directory")->required();
  inspect->add_option("--scene", inspect_scene_idx, "eval-split scene index");
  inspect->add_option("--slot", inspect_slot, "memory slot to visualize");

  CLI::App* ablate = app.add_subcommand("ablate", "train and score ablation rows");
  ablate_args.attach(ablate, false);
  ablate->add_option("--out", ablate_out, "output directory")->required();
  ablate->add_option("--seeds", ablate_seeds, "seeds to run (default: the run seed)");
  ablate->add_option("--rows", ablate_rows,
                     "rows to run (default: baseline focal ins_mem ins_seg_mem full)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_args, gen_out);
    if (train->parsed())
      return cmd_train(train_args, train_data, train_out, train_resume);
    if (eval->parsed()) return cmd_eval(eval_args, eval_data, eval_model, eval_out);
    if (infer->parsed())
      return cmd_infer(infer_args, infer_data, infer_model, infer_out, infer_scene_idx);
    if (inspect->parsed())
      return cmd_inspect_memory(inspect_args, inspect_data, inspect_model,
                                inspect_out, inspect_scene_idx, inspect_slot);
    if (ablate->parsed())
      return cmd_ablate(ablate_args, ablate_out, ablate_seeds, ablate_rows);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
