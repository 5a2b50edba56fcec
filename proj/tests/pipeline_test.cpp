#include "mpnet/pipeline.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace mpnet {
namespace {

namespace fs = std::filesystem;

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.seed = 3;
  cfg.train_scenes = 2;
  cfg.eval_scenes = 1;
  cfg.points_per_scene = 3000;
  cfg.train_samples = 96;
  cfg.eval_samples = 128;
  cfg.min_block_points = 60;
  cfg.max_blocks_per_scene = 4;
  cfg.hidden0 = 16;
  cfg.hidden1 = 24;
  cfg.shared_dim = 24;
  cfg.feature_dim = 12;
  cfg.slots_per_class = 4;
  cfg.g_hidden = 12;
  cfg.epochs = 2;
  cfg.batch_blocks = 4;
  cfg.validate();
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("mpnet_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

TEST(SeedMix, DistinctAndStable) {
  EXPECT_EQ(mix_seed(1, 2), mix_seed(1, 2));
  EXPECT_NE(mix_seed(1, 2), mix_seed(2, 1));
  EXPECT_NE(mix_seed(1, 2), mix_seed(1, 3));
}

TEST(Dataset, BuildIsDeterministicAndLabeled) {
  const RunConfig cfg = tiny_config();
  const auto a = build_dataset(cfg);
  const auto b = build_dataset(cfg);
  ASSERT_EQ(a.train.size(), 2u);
  ASSERT_EQ(a.eval.size(), 1u);
  EXPECT_EQ(a.train[0].points, b.train[0].points);
  EXPECT_EQ(a.train[1].semantic, b.train[1].semantic);
  EXPECT_EQ(a.eval[0].instance, b.eval[0].instance);
  EXPECT_EQ(a.non_dominant, b.non_dominant);
  ASSERT_EQ(a.non_dominant.size(), 3u);  // bottom half of six classes
  long long total = 0;
  for (long long c : a.class_points) total += c;
  EXPECT_EQ(total, 2ll * cfg.points_per_scene);
}

TEST(Dataset, ForcedRareCountsMatchRate) {
  RunConfig cfg = tiny_config();
  cfg.train_scenes = 10;
  cfg.rare_pattern_rate = 0.3;
  const auto ds = build_dataset(cfg);
  int rare = 0;
  for (bool r : ds.train_rare) rare += r;
  // ceil(0.3 * 10) = 3 forced draws; placement can fail, never exceed
  EXPECT_LE(rare, 3);
  EXPECT_GE(rare, 1);
}

TEST(Dataset, SaveLoadRoundTrips) {
  const RunConfig cfg = tiny_config();
  const auto ds = build_dataset(cfg);
  TempDir dir("dataset_rt");
  save_dataset(ds, dir.path.string());
  const auto back = load_dataset(dir.path.string());
  ASSERT_EQ(back.train.size(), ds.train.size());
  ASSERT_EQ(back.eval.size(), ds.eval.size());
  EXPECT_EQ(back.train[0].points, ds.train[0].points);
  EXPECT_EQ(back.train[1].instance, ds.train[1].instance);
  EXPECT_EQ(back.eval[0].semantic, ds.eval[0].semantic);
  EXPECT_EQ(back.train_rare, ds.train_rare);
  EXPECT_EQ(back.eval_rare, ds.eval_rare);
  EXPECT_EQ(back.class_points, ds.class_points);
  EXPECT_EQ(back.non_dominant, ds.non_dominant);
}

TEST(Dataset, BlockCapRespected) {
  const RunConfig cfg = tiny_config();
  const auto ds = build_dataset(cfg);
  const auto ts = prepare_training_blocks(ds.train, cfg);
  ASSERT_EQ(ts.blocks.size(), ts.labels.size());
  EXPECT_LE(static_cast<int>(ts.blocks.size()),
            cfg.max_blocks_per_scene * static_cast<int>(ds.train.size()));
  for (const Block& b : ts.blocks) EXPECT_EQ(b.count(), cfg.train_samples);
}

TEST(Training, DeterministicLogAndFiniteLosses) {
  const RunConfig cfg = tiny_config();
  const auto ds = build_dataset(cfg);
  const auto ts = prepare_training_blocks(ds.train, cfg);

  Model a(cfg.model(), cfg.loss(), mix_seed(cfg.seed, 0x0DE1));
  const auto ra = train_model(a, ts, cfg);
  Model b(cfg.model(), cfg.loss(), mix_seed(cfg.seed, 0x0DE1));
  const auto rb = train_model(b, ts, cfg);

  EXPECT_FALSE(ra.nan_abort);
  ASSERT_EQ(ra.lines.size(), 2u);
  EXPECT_EQ(ra.lines, rb.lines);
  EXPECT_EQ(ra.global_step, rb.global_step);
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    EXPECT_EQ(pa[i]->tensor.data, pb[i]->tensor.data) << pa[i]->name;
}

TEST(Training, ResumeFromCheckpointIsBitIdentical) {
  RunConfig cfg = tiny_config();
  cfg.epochs = 4;
  const auto ds = build_dataset(cfg);
  const auto ts = prepare_training_blocks(ds.train, cfg);

  Model straight(cfg.model(), cfg.loss(), mix_seed(cfg.seed, 0x0DE1));
  const auto full = train_model(straight, ts, cfg);

  RunConfig half = cfg;
  half.epochs = 2;
  Model first(cfg.model(), cfg.loss(), mix_seed(cfg.seed, 0x0DE1));
  const auto part = train_model(first, ts, half);

  TempDir dir("resume");
  const std::string ckpt = (dir.path / "state.mpck").string();
  CheckpointMeta meta;
  meta.config_text = serialize_config(cfg);
  meta.config_hash = config_hash(cfg);
  meta.epochs_done = part.epochs_done;
  meta.global_step = part.global_step;
  save_checkpoint(ckpt, first.parameters(), meta);

  Model second(cfg.model(), cfg.loss(), mix_seed(cfg.seed, 0x0DE1) + 99);
  const auto loaded = load_checkpoint(ckpt, second.parameters(), config_hash(cfg));
  EXPECT_TRUE(loaded.hash_matches);
  EXPECT_EQ(loaded.epochs_done, 2u);
  const auto rest = train_model(second, ts, cfg, loaded.epochs_done, loaded.global_step);

  ASSERT_EQ(full.lines.size(), 4u);
  ASSERT_EQ(rest.lines.size(), 2u);
  EXPECT_EQ(rest.lines[0], full.lines[2]);
  EXPECT_EQ(rest.lines[1], full.lines[3]);
  const auto ps = straight.parameters();
  const auto pr = second.parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    EXPECT_EQ(ps[i]->tensor.data, pr[i]->tensor.data) << ps[i]->name;
    EXPECT_EQ(ps[i]->m1, pr[i]->m1) << ps[i]->name;
    EXPECT_EQ(ps[i]->step_count, pr[i]->step_count) << ps[i]->name;
  }
}

TEST(Checkpoint, DetectsMismatchedModelAndBadFiles) {
  const RunConfig cfg = tiny_config();
  Model m(cfg.model(), cfg.loss(), 1);
  TempDir dir("ckpt_err");
  const std::string ckpt = (dir.path / "state.mpck").string();
  CheckpointMeta meta;
  meta.config_text = serialize_config(cfg);
  meta.config_hash = config_hash(cfg);
  save_checkpoint(ckpt, m.parameters(), meta);

  // same run config but a different architecture cannot absorb the file
  RunConfig other = cfg;
  other.feature_dim = 16;
  Model wrong(other.model(), other.loss(), 1);
  EXPECT_THROW(load_checkpoint(ckpt, wrong.parameters()), FormatError);

  // hash comparison flags config drift without blocking the load
  Model same(cfg.model(), cfg.loss(), 2);
  const auto meta2 = load_checkpoint(ckpt, same.parameters(), 12345u);
  EXPECT_FALSE(meta2.hash_matches);

  write_text((dir.path / "junk.mpck").string(), "MPXXjunk");
  EXPECT_THROW(load_checkpoint((dir.path / "junk.mpck").string(), m.parameters()),
               FormatError);
}

TEST(Inference, ProducesValidPartitionAndClasses) {
  const RunConfig cfg = tiny_config();
  const auto ds = build_dataset(cfg);
  Model m(cfg.model(), cfg.loss(), mix_seed(cfg.seed, 0x0DE1));
  const auto inf = infer_scene(m, ds.eval[0], cfg);
  ASSERT_EQ(static_cast<int>(inf.semantic.size()), ds.eval[0].num_points());
  inf.instances.validate(cfg.num_classes);
  for (int c : inf.semantic) {
    ASSERT_GE(c, 0);
    ASSERT_LT(c, cfg.num_classes);
  }
}

TEST(Evaluation, DeterministicAndFinite) {
  const RunConfig cfg = tiny_config();
  const auto ds = build_dataset(cfg);
  const auto ts = prepare_training_blocks(ds.train, cfg);
  Model m(cfg.model(), cfg.loss(), mix_seed(cfg.seed, 0x0DE1));
  train_model(m, ts, cfg);
  const auto ea = evaluate_model(m, ds.eval, ds.eval_rare, ds.non_dominant, cfg);
  const auto eb = evaluate_model(m, ds.eval, ds.eval_rare, ds.non_dominant, cfg);
  EXPECT_EQ(ea.lines, eb.lines);
  EXPECT_GE(ea.oacc, 0.0);
  EXPECT_LE(ea.oacc, 1.0);
  EXPECT_GE(ea.mrec, 0.0);
  EXPECT_LE(ea.mprec, 1.0);
  ASSERT_EQ(ea.per_scene.size(), 1u);
}

TEST(AblationRows, FlagsFollowPresetsAndScaleStays) {
  RunConfig base = tiny_config();
  base.epochs = 7;
  const auto baseline = row_config(base, "baseline");
  EXPECT_FALSE(baseline.use_ins_memory);
  EXPECT_FALSE(baseline.use_seg_memory);
  EXPECT_FALSE(baseline.use_squash);
  EXPECT_FALSE(baseline.use_r_seg);
  EXPECT_FALSE(baseline.use_r_ins);
  EXPECT_FALSE(baseline.use_focal);
  EXPECT_EQ(baseline.epochs, 7);
  EXPECT_EQ(baseline.train_samples, base.train_samples);

  const auto focal = row_config(base, "focal");
  EXPECT_TRUE(focal.use_focal);
  EXPECT_FALSE(focal.use_ins_memory);

  const auto ins = row_config(base, "ins_mem");
  EXPECT_TRUE(ins.use_ins_memory);
  EXPECT_FALSE(ins.use_seg_memory);

  const auto both = row_config(base, "ins_seg_mem");
  EXPECT_TRUE(both.use_ins_memory);
  EXPECT_TRUE(both.use_seg_memory);
  EXPECT_TRUE(both.use_squash);
  EXPECT_FALSE(both.use_r_seg);

  const auto full = row_config(base, "full");
  EXPECT_TRUE(full.use_r_seg);
  EXPECT_TRUE(full.use_r_ins);
  EXPECT_THROW(row_config(base, "nonsense"), std::invalid_argument);
}

TEST(SlotAttention, BoundedAndDeterministic) {
  const RunConfig cfg = tiny_config();
  const auto ds = build_dataset(cfg);
  Model m(cfg.model(), cfg.loss(), mix_seed(cfg.seed, 0x0DE1));
  const auto w = slot_attention(m, ds.eval[0], 2, cfg);
  const auto w2 = slot_attention(m, ds.eval[0], 2, cfg);
  EXPECT_EQ(w, w2);
  ASSERT_EQ(static_cast<int>(w.size()), ds.eval[0].num_points());
  for (double v : w) {
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
  EXPECT_THROW(slot_attention(m, ds.eval[0], -1, cfg), std::invalid_argument);
  EXPECT_THROW(slot_attention(m, ds.eval[0], m.memory->num_slots(), cfg),
               std::invalid_argument);
}

TEST(ConfigText, RoundTripsAndRejectsUnknownKeys) {
  RunConfig cfg = tiny_config();
  cfg.lambda_ins = 0.015625;  // stays exact in text
  cfg.use_focal = true;
  const std::string text = serialize_config(cfg);
  const RunConfig back = parse_config(text);
  EXPECT_EQ(serialize_config(back), text);
  EXPECT_EQ(config_hash(back), config_hash(cfg));

  RunConfig other;
  apply_config_text(other, "epochs = 9\n# comment\n\ntau=0.25\n");
  EXPECT_EQ(other.epochs, 9);
  EXPECT_EQ(other.tau, 0.25);
  EXPECT_THROW(apply_config_text(other, "no_such_key=1\n"), std::invalid_argument);
  EXPECT_THROW(apply_config_text(other, "epochs=abc\n"), std::invalid_argument);
  EXPECT_THROW(apply_config_text(other, "epochs\n"), std::invalid_argument);
}

TEST(ConfigText, PaperPresetChangesScale) {
  const RunConfig paper = preset("paper");
  EXPECT_EQ(paper.slots_per_class, 150);
  EXPECT_EQ(paper.epochs, 100);
  EXPECT_EQ(paper.train_samples, 4096);
  EXPECT_EQ(paper.lambda_ins, 0.01);
  EXPECT_EQ(paper.max_blocks_per_scene, 0);
  const RunConfig desk = preset("desk");
  EXPECT_EQ(desk.slots_per_class, 8);
  EXPECT_NE(config_hash(desk), config_hash(paper));
}

}  // namespace
}  // namespace mpnet
