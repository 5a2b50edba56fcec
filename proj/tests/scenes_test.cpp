#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "mpnet/scene.hpp"

using namespace mpnet;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

Scene tiny_grid_scene(int side, float spacing, int block_pts_class = 0) {
  // uniform grid on the floor plane, one instance
  Scene s;
  s.num_classes = kNumSceneClasses;
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j) {
      s.points.insert(s.points.end(),
                      {i * spacing, j * spacing, 0.0f, 0.5f, 0.5f, 0.5f});
      s.semantic.push_back(static_cast<std::uint16_t>(block_pts_class));
      s.instance.push_back(0);
    }
  return s;
}

}  // namespace

TEST(Generator, DeterministicGivenSeed) {
  GeneratorConfig cfg;
  cfg.points_per_scene = 3000;
  cfg.seed = 42;
  Scene a = generate_scene(cfg);
  Scene b = generate_scene(cfg);
  EXPECT_EQ(a.points, b.points);
  EXPECT_EQ(a.semantic, b.semantic);
  EXPECT_EQ(a.instance, b.instance);
  EXPECT_EQ(a.rare_pattern, b.rare_pattern);
  cfg.seed = 43;
  Scene c = generate_scene(cfg);
  EXPECT_NE(a.points, c.points);
}

TEST(Generator, PlaneClassesDominateAcrossSeeds) {
  GeneratorConfig cfg;
  cfg.points_per_scene = 4000;
  std::int64_t plane = 0, total = 0;
  for (int seed = 0; seed < 20; ++seed) {
    cfg.seed = seed;
    Scene s = generate_scene(cfg);
    for (std::uint16_t c : s.semantic) {
      plane += (c == kFloor || c == kCeiling || c == kWall);
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(plane) / total, 0.70);
}

TEST(Generator, InstancesAreDenseAndSingleClass) {
  GeneratorConfig cfg;
  cfg.points_per_scene = 5000;
  for (int seed = 0; seed < 5; ++seed) {
    cfg.seed = seed;
    Scene s = generate_scene(cfg);
    EXPECT_NO_THROW(s.validate());
    EXPECT_EQ(s.num_points(), cfg.points_per_scene);
    const auto ext = s.extent();
    for (int i = 0; i < s.num_points(); ++i)
      for (int j = 0; j < 3; ++j) {
        EXPECT_GE(s.coord(i, j), 0.0f);
        EXPECT_LE(s.coord(i, j), ext[j]);
      }
  }
}

TEST(Generator, RareRateZeroAndOne) {
  GeneratorConfig cfg;
  cfg.points_per_scene = 2000;
  cfg.rare_pattern_rate = 0.0;
  cfg.seed = 7;
  EXPECT_FALSE(generate_scene(cfg).rare_pattern);
  cfg.rare_pattern_rate = 1.0;
  EXPECT_TRUE(generate_scene(cfg).rare_pattern);
}

TEST(Generator, EveryClassRepresentedAtDefaults) {
  GeneratorConfig cfg;
  cfg.points_per_scene = 8000;
  for (int seed = 0; seed < 5; ++seed) {
    cfg.seed = seed + 100;
    Scene s = generate_scene(cfg);
    std::set<int> present(s.semantic.begin(), s.semantic.end());
    EXPECT_EQ(static_cast<int>(present.size()), kNumSceneClasses) << "seed " << seed;
  }
}

TEST(Blockify, UnitRoomBlockOrigins) {
  Scene s = tiny_grid_scene(32, 1.0f / 31.0f);  // extent exactly 1x1
  BlockSpec spec;
  spec.samples_per_block = 64;
  spec.min_points = 1;
  auto blocks = blockify(s, spec, 1);
  std::set<std::pair<double, double>> origins;
  for (const auto& b : blocks) origins.insert({b.origin_x, b.origin_y});
  std::set<std::pair<double, double>> want = {
      {0.0, 0.0}, {0.0, 0.5}, {0.5, 0.0}, {0.5, 0.5}};
  EXPECT_EQ(origins, want);
}

TEST(Blockify, ExactCountIsPermutation) {
  Scene s = tiny_grid_scene(8, 0.1f);  // 64 points in one block
  BlockSpec spec;
  spec.samples_per_block = 64;
  spec.min_points = 1;
  spec.stride = 1.0;
  auto blocks = blockify(s, spec, 3);
  ASSERT_EQ(blocks.size(), 1u);
  std::vector<int> sorted = blocks[0].scene_indices;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 64; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Blockify, UpsamplingKeepsEveryPoint) {
  Scene s = tiny_grid_scene(5, 0.1f);  // 25 points
  BlockSpec spec;
  spec.samples_per_block = 100;
  spec.min_points = 1;
  spec.stride = 1.0;
  auto blocks = blockify(s, spec, 9);
  ASSERT_EQ(blocks.size(), 1u);
  EXPECT_EQ(blocks[0].count(), 100);
  std::set<int> seen(blocks[0].scene_indices.begin(), blocks[0].scene_indices.end());
  EXPECT_EQ(seen.size(), 25u);  // every source point sampled at least once
}

TEST(Blockify, NormalizedCoordinatesWithinBlockBounds) {
  GeneratorConfig cfg;
  cfg.points_per_scene = 6000;
  cfg.seed = 5;
  Scene s = generate_scene(cfg);
  BlockSpec spec;
  spec.samples_per_block = 128;
  auto blocks = blockify(s, spec, 11);
  ASSERT_FALSE(blocks.empty());
  const auto ext = s.extent();
  for (const auto& b : blocks)
    for (int i = 0; i < b.count(); ++i) {
      EXPECT_GE(b.points.at(i, 0), 0.0);
      EXPECT_LT(b.points.at(i, 0), spec.block_size);
      EXPECT_GE(b.points.at(i, 1), 0.0);
      EXPECT_LT(b.points.at(i, 1), spec.block_size);
      EXPECT_GE(b.points.at(i, 2), 0.0);
      EXPECT_LE(b.points.at(i, 2), ext[2]);
    }
}

TEST(Blockify, CoverageOverGeneratedScene) {
  GeneratorConfig cfg;
  cfg.points_per_scene = 20000;
  cfg.seed = 12;
  Scene s = generate_scene(cfg);
  BlockSpec spec;  // default min_points 100
  spec.samples_per_block = 512;
  auto blocks = blockify(s, spec, 2);
  // every point lands in at least one kept block
  std::vector<char> in_block(s.num_points(), 0);
  for (const auto& b : blocks) {
    const double x0 = b.origin_x, y0 = b.origin_y;
    for (int i = 0; i < s.num_points(); ++i) {
      const double x = s.coord(i, 0), y = s.coord(i, 1);
      if (x >= x0 && x < x0 + spec.block_size && y >= y0 &&
          y < y0 + spec.block_size)
        in_block[i] = 1;
    }
  }
  int covered = 0;
  for (char c : in_block) covered += c;
  EXPECT_EQ(covered, s.num_points());
}

TEST(Blockify, DeterministicGivenSeed) {
  GeneratorConfig cfg;
  cfg.points_per_scene = 4000;
  cfg.seed = 21;
  Scene s = generate_scene(cfg);
  BlockSpec spec;
  spec.samples_per_block = 256;
  auto a = blockify(s, spec, 77);
  auto b = blockify(s, spec, 77);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].scene_indices, b[i].scene_indices);
    EXPECT_EQ(a[i].points.data, b[i].points.data);
  }
}

TEST(SceneIO, RoundTripBitExact) {
  GeneratorConfig cfg;
  cfg.points_per_scene = 3000;
  cfg.seed = 33;
  Scene s = generate_scene(cfg);
  const std::string path = temp_path("roundtrip.mpnc");
  write_scene(s, path);
  Scene r = read_scene(path);
  EXPECT_EQ(s.points, r.points);
  EXPECT_EQ(s.semantic, r.semantic);
  EXPECT_EQ(s.instance, r.instance);
  EXPECT_EQ(s.num_classes, r.num_classes);

  const std::string path2 = temp_path("roundtrip2.mpnc");
  write_scene(r, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  EXPECT_EQ(b1, b2);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST(SceneIO, DistinctFormatErrors) {
  GeneratorConfig cfg;
  cfg.points_per_scene = 500;
  cfg.seed = 1;
  Scene s = generate_scene(cfg);
  const std::string path = temp_path("broken.mpnc");
  write_scene(s, path);

  {  // corrupt magic
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  try {
    read_scene(path);
    FAIL() << "expected bad magic";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind, FormatError::Kind::bad_magic);
  }

  write_scene(s, path);
  {  // bump version
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    std::uint32_t v = 9;
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  try {
    read_scene(path);
    FAIL() << "expected bad version";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind, FormatError::Kind::bad_version);
  }

  write_scene(s, path);
  {  // truncate payload
    std::error_code ec;
    std::filesystem::resize_file(path, 64, ec);
    ASSERT_FALSE(ec);
  }
  try {
    read_scene(path);
    FAIL() << "expected truncation";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind, FormatError::Kind::truncated);
  }

  Scene empty;
  EXPECT_THROW(write_scene(empty, path), std::invalid_argument);
  std::remove(path.c_str());
}

TEST(SceneIO, PlyExportVertexCount) {
  GeneratorConfig cfg;
  cfg.points_per_scene = 200;
  cfg.seed = 2;
  Scene s = generate_scene(cfg);
  const std::string path = temp_path("scene.ply");
  write_ply(path, s);
  std::ifstream f(path);
  std::string line;
  int vertices = -1, data_lines = 0;
  bool in_header = true;
  while (std::getline(f, line)) {
    if (in_header) {
      if (line.rfind("element vertex ", 0) == 0)
        vertices = std::stoi(line.substr(15));
      if (line == "end_header") in_header = false;
    } else if (!line.empty()) {
      ++data_lines;
    }
  }
  EXPECT_EQ(vertices, 200);
  EXPECT_EQ(data_lines, 200);
  std::remove(path.c_str());
}
