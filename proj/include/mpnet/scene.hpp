#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "mpnet/io.hpp"
#include "mpnet/tensor.hpp"

namespace mpnet {

// Class roles are fixed for the synthetic benchmark.
enum SceneClass : int {
  kFloor = 0,
  kCeiling = 1,
  kWall = 2,
  kTable = 3,
  kChair = 4,
  kClutter = 5,
  kNumSceneClasses = 6
};

inline const char* scene_class_name(int c) {
  static const char* names[] = {"floor", "ceiling", "wall",
                                "table", "chair",   "clutter"};
  return (c >= 0 && c < kNumSceneClasses) ? names[c] : "unknown";
}

// Labeled point set. Coordinates and colors are kept in 32-bit floats so a
// file round trip is bit-exact; math promotes to double on entry.
struct Scene {
  int num_classes = kNumSceneClasses;
  std::vector<float> points;  // P*6 row-major: x y z r g b
  std::vector<std::uint16_t> semantic;
  std::vector<std::uint32_t> instance;
  bool rare_pattern = false;  // split-manifest metadata, not serialized
  int placement_failures = 0;

  int num_points() const { return static_cast<int>(semantic.size()); }

  float coord(int i, int j) const {
    return points[static_cast<std::size_t>(i) * 6 + j];
  }

  std::array<float, 3> extent() const {
    std::array<float, 3> e = {0.0f, 0.0f, 0.0f};
    for (int i = 0; i < num_points(); ++i)
      for (int j = 0; j < 3; ++j) e[j] = std::max(e[j], coord(i, j));
    return e;
  }

  int num_instances() const {
    std::uint32_t mx = 0;
    for (std::uint32_t v : instance) mx = std::max(mx, v + 1);
    return static_cast<int>(mx);
  }

  void validate() const {
    check_arg(points.size() == semantic.size() * 6 &&
                  semantic.size() == instance.size(),
              "Scene: parallel arrays disagree");
    check_arg(num_classes > 0, "Scene: num_classes must be positive");
    for (std::uint16_t s : semantic)
      check_arg(s < static_cast<std::uint16_t>(num_classes),
                "Scene: semantic label out of range");
    const int k = num_instances();
    std::vector<int> cls_of(k, -1);
    std::vector<char> seen(k, 0);
    for (int i = 0; i < num_points(); ++i) {
      const int id = static_cast<int>(instance[i]);
      seen[id] = 1;
      if (cls_of[id] < 0) cls_of[id] = semantic[i];
      check_arg(cls_of[id] == semantic[i],
                "Scene: instance spans multiple semantic classes");
    }
    for (int id = 0; id < k; ++id)
      check_arg(seen[id], "Scene: instance ids not dense");
  }
};

struct GeneratorConfig {
  int num_classes = kNumSceneClasses;
  // fraction of points per class; defaults put the plane classes near 80%
  std::vector<double> density = {0.22, 0.22, 0.36, 0.10, 0.06, 0.04};
  double rare_pattern_rate = 0.1;
  // per-instance color offset range around the instance's palette color
  double color_jitter = 0.10;
  // probability that a furniture instance draws its class's alternate
  // palette color instead of the primary one; the minority appearance mode
  // is what separates heads with per-class capacity from plain linear ones
  double alt_color_rate = 0.35;
  int points_per_scene = 20000;
  std::uint64_t seed = 0;
  double room_min = 2.2, room_max = 3.0;    // floor side lengths, meters
  double height_min = 2.4, height_max = 2.8;

  void validate() const {
    check_arg(num_classes == kNumSceneClasses,
              "GeneratorConfig: generator models exactly the six benchmark classes");
    check_arg(static_cast<int>(density.size()) == num_classes,
              "GeneratorConfig: one density weight per class");
    for (double w : density)
      check_arg(w > 0.0, "GeneratorConfig: density weights must be positive");
    check_arg(rare_pattern_rate >= 0.0 && rare_pattern_rate <= 1.0,
              "GeneratorConfig: rare_pattern_rate must be in [0,1]");
    check_arg(color_jitter >= 0.0 && color_jitter <= 0.5,
              "GeneratorConfig: color_jitter must be in [0,0.5]");
    check_arg(alt_color_rate >= 0.0 && alt_color_rate <= 1.0,
              "GeneratorConfig: alt_color_rate must be in [0,1]");
    check_arg(points_per_scene > 0, "GeneratorConfig: points_per_scene must be positive");
    check_arg(room_min > 1.0 && room_max >= room_min && height_min > 0.0 &&
                  height_max >= height_min,
              "GeneratorConfig: bad room dimensions");
  }
};

namespace detail {

struct BoxPart {
  std::array<double, 3> lo, hi;

  double face_area(int axis) const {
    const double dx = hi[0] - lo[0], dy = hi[1] - lo[1], dz = hi[2] - lo[2];
    if (axis == 0) return dy * dz;
    if (axis == 1) return dx * dz;
    return dx * dy;
  }
  // both x-faces, both y-faces, top; bottom face is never visible
  double area() const {
    return 2.0 * face_area(0) + 2.0 * face_area(1) + face_area(2);
  }

  std::array<double, 3> sample(std::mt19937_64& rng) const {
    const double faces[5] = {face_area(0), face_area(0), face_area(1),
                             face_area(1), face_area(2)};
    double total = 0.0;
    for (double f : faces) total += f;
    std::uniform_real_distribution<double> pick(0.0, total);
    double r = pick(rng);
    int f = 0;
    while (f < 4 && r >= faces[f]) r -= faces[f], ++f;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double u = u01(rng), v = u01(rng);
    std::array<double, 3> p;
    auto lerp = [&](int ax, double t) { return lo[ax] + t * (hi[ax] - lo[ax]); };
    switch (f) {
      case 0: p = {lo[0], lerp(1, u), lerp(2, v)}; break;
      case 1: p = {hi[0], lerp(1, u), lerp(2, v)}; break;
      case 2: p = {lerp(0, u), lo[1], lerp(2, v)}; break;
      case 3: p = {lerp(0, u), hi[1], lerp(2, v)}; break;
      default: p = {lerp(0, u), lerp(1, v), hi[2]}; break;
    }
    return p;
  }
};

struct ObjectInstance {
  int cls = 0;
  std::vector<BoxPart> parts;
  std::array<double, 3> base_color = {0.5, 0.5, 0.5};

  double area() const {
    double a = 0.0;
    for (const auto& p : parts) a += p.area();
    return a;
  }
  std::array<double, 3> sample(std::mt19937_64& rng) const {
    double total = area();
    std::uniform_real_distribution<double> pick(0.0, total);
    double r = pick(rng);
    std::size_t i = 0;
    while (i + 1 < parts.size() && r >= parts[i].area()) r -= parts[i].area(), ++i;
    return parts[i].sample(rng);
  }
  // footprint on the floor plane, for collision tests
  std::array<double, 4> footprint() const {
    std::array<double, 4> f = {1e30, 1e30, -1e30, -1e30};
    for (const auto& p : parts) {
      f[0] = std::min(f[0], p.lo[0]);
      f[1] = std::min(f[1], p.lo[1]);
      f[2] = std::max(f[2], p.hi[0]);
      f[3] = std::max(f[3], p.hi[1]);
    }
    return f;
  }
};

inline bool footprints_collide(const std::array<double, 4>& a,
                               const std::array<double, 4>& b, double gap) {
  return a[0] < b[2] + gap && b[0] < a[2] + gap && a[1] < b[3] + gap &&
         b[1] < a[3] + gap;
}

inline std::array<double, 3> class_base_color(int cls) {
  switch (cls) {
    case kFloor: return {0.45, 0.45, 0.45};
    case kCeiling: return {0.92, 0.92, 0.90};
    case kWall: return {0.75, 0.70, 0.62};
    case kTable: return {0.55, 0.35, 0.18};
    case kChair: return {0.70, 0.20, 0.20};
    default: return {0.20, 0.60, 0.30};
  }
}

// second appearance mode for the furniture classes; plane classes are
// unimodal
inline std::array<double, 3> class_alt_color(int cls) {
  switch (cls) {
    case kTable: return {0.15, 0.15, 0.20};
    case kChair: return {0.20, 0.35, 0.75};
    case kClutter: return {0.85, 0.75, 0.25};
    default: return class_base_color(cls);
  }
}

// chair = seat box + four legs + backrest on one of the four sides
inline ObjectInstance make_chair(double cx, double cy, double seat, double seat_top,
                                 double back_h, int side, double z0 = 0.0) {
  ObjectInstance o;
  o.cls = kChair;
  const double s2 = seat / 2.0, thick = 0.06, leg = 0.035, bt = 0.05;
  o.parts.push_back({{cx - s2, cy - s2, z0 + seat_top - thick},
                     {cx + s2, cy + s2, z0 + seat_top}});
  const double inset = 0.04;
  for (int dx = 0; dx < 2; ++dx)
    for (int dy = 0; dy < 2; ++dy) {
      const double lx = dx ? cx + s2 - inset - leg : cx - s2 + inset;
      const double ly = dy ? cy + s2 - inset - leg : cy - s2 + inset;
      o.parts.push_back({{lx, ly, z0}, {lx + leg, ly + leg, z0 + seat_top - thick}});
    }
  BoxPart back;
  switch (side) {
    case 0:  // -x
      back = {{cx - s2, cy - s2, z0 + seat_top}, {cx - s2 + bt, cy + s2, z0 + seat_top + back_h}};
      break;
    case 1:  // +x
      back = {{cx + s2 - bt, cy - s2, z0 + seat_top}, {cx + s2, cy + s2, z0 + seat_top + back_h}};
      break;
    case 2:  // -y
      back = {{cx - s2, cy - s2, z0 + seat_top}, {cx + s2, cy - s2 + bt, z0 + seat_top + back_h}};
      break;
    default:  // +y
      back = {{cx - s2, cy + s2 - bt, z0 + seat_top}, {cx + s2, cy + s2, z0 + seat_top + back_h}};
      break;
  }
  o.parts.push_back(back);
  return o;
}

}  // namespace detail

// Deterministic synthetic room: planar shell, boxy furniture, small clutter.
// Rare configurations (two chairs stacked or back to back) appear with
// probability rare_pattern_rate and tag the scene.
inline Scene generate_scene(const GeneratorConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  auto uni = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  const double L = uni(cfg.room_min, cfg.room_max);
  const double W = uni(cfg.room_min, cfg.room_max);
  const double H = uni(cfg.height_min, cfg.height_max);

  std::vector<detail::ObjectInstance> objects;
  // planar shell: floor, ceiling, four walls (degenerate boxes)
  {
    using detail::BoxPart;
    detail::ObjectInstance floor;
    floor.cls = kFloor;
    floor.parts.push_back(BoxPart{{0, 0, 0}, {L, W, 0}});
    objects.push_back(floor);
    detail::ObjectInstance ceil;
    ceil.cls = kCeiling;
    ceil.parts.push_back(BoxPart{{0, 0, H}, {L, W, H}});
    objects.push_back(ceil);
    const BoxPart walls[4] = {{{0, 0, 0}, {0, W, H}},
                              {{L, 0, 0}, {L, W, H}},
                              {{0, 0, 0}, {L, 0, H}},
                              {{0, W, 0}, {L, W, H}}};
    for (const auto& w : walls) {
      detail::ObjectInstance wall;
      wall.cls = kWall;
      wall.parts.push_back(w);
      objects.push_back(wall);
    }
  }

  int placement_failures = 0;
  std::vector<std::array<double, 4>> footprints;
  const double margin = 0.12;

  // collision-free center for an sx-by-sy footprint; shrinks on failure
  auto place = [&](double& sx, double& sy, double gap) -> std::array<double, 2> {
    for (int shrink = 0; shrink < 4; ++shrink) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        const double cx = uni(margin + sx / 2, L - margin - sx / 2);
        const double cy = uni(margin + sy / 2, W - margin - sy / 2);
        const std::array<double, 4> f = {cx - sx / 2, cy - sy / 2, cx + sx / 2,
                                         cy + sy / 2};
        bool hit = false;
        for (const auto& other : footprints)
          if (detail::footprints_collide(f, other, gap)) { hit = true; break; }
        if (!hit) {
          footprints.push_back(f);
          return {cx, cy};
        }
      }
      ++placement_failures;
      sx *= 0.7;
      sy *= 0.7;
    }
    return {-1.0, -1.0};
  };

  const int num_tables = 1 + static_cast<int>(uni(0.0, 1.0) < 0.5);
  for (int t = 0; t < num_tables; ++t) {
    double sx = uni(0.7, 1.1), sy = uni(0.55, 0.85);
    const double h = uni(0.62, 0.78);
    auto c = place(sx, sy, 0.08);
    if (c[0] < 0) continue;
    detail::ObjectInstance table;
    table.cls = kTable;
    table.parts.push_back(detail::BoxPart{
        {c[0] - sx / 2, c[1] - sy / 2, 0.0}, {c[0] + sx / 2, c[1] + sy / 2, h}});
    objects.push_back(table);
  }

  const bool rare = uni(0.0, 1.0) < cfg.rare_pattern_rate;
  int rare_kind = 0;
  if (rare) rare_kind = uni(0.0, 1.0) < 0.5 ? 1 : 2;  // 1 stacked, 2 back-to-back

  int chairs_wanted = 2 + static_cast<int>(uni(0.0, 3.0));
  if (rare) {
    const double seat = uni(0.36, 0.44);
    const double seat_top = uni(0.40, 0.48);
    const double back_h = uni(0.38, 0.48);
    if (rare_kind == 1) {
      double s = seat, s2 = seat;
      auto c = place(s, s2, 0.06);
      if (c[0] >= 0) {
        objects.push_back(detail::make_chair(c[0], c[1], s, seat_top, back_h, 3));
        objects.push_back(detail::make_chair(c[0], c[1], s, seat_top, back_h, 3,
                                             seat_top + back_h + 0.02));
        chairs_wanted = std::max(0, chairs_wanted - 2);
      }
    } else {
      double sx = seat, sy = 2 * seat + 0.02;
      auto c = place(sx, sy, 0.06);
      if (c[0] >= 0) {
        const double s = sx;  // possibly shrunk
        objects.push_back(
            detail::make_chair(c[0], c[1] - s / 2 - 0.01, s, seat_top, back_h, 3));
        objects.push_back(
            detail::make_chair(c[0], c[1] + s / 2 + 0.01, s, seat_top, back_h, 2));
        chairs_wanted = std::max(0, chairs_wanted - 2);
      }
    }
  }
  for (int ch = 0; ch < chairs_wanted; ++ch) {
    double s = uni(0.36, 0.44), s2 = s;
    const double seat_top = uni(0.40, 0.48);
    const double back_h = uni(0.38, 0.48);
    const int side = static_cast<int>(uni(0.0, 4.0));
    auto c = place(s, s2, 0.06);
    if (c[0] < 0) continue;
    objects.push_back(
        detail::make_chair(c[0], c[1], std::min(s, s2), seat_top, back_h, side % 4));
  }

  const int num_clutter = 2 + static_cast<int>(uni(0.0, 4.0));
  int placed_clutter = 0;
  for (int k = 0; k < num_clutter; ++k) {
    double sx = uni(0.08, 0.30), sy = uni(0.08, 0.30);
    const double sz = uni(0.08, 0.30);
    auto c = place(sx, sy, 0.04);
    if (c[0] < 0) continue;
    detail::ObjectInstance box;
    box.cls = kClutter;
    box.parts.push_back(detail::BoxPart{{c[0] - sx / 2, c[1] - sy / 2, 0.0},
                                        {c[0] + sx / 2, c[1] + sy / 2, sz}});
    objects.push_back(box);
    ++placed_clutter;
  }
  if (placed_clutter == 0) {  // last resort, overlap allowed
    detail::ObjectInstance box;
    box.cls = kClutter;
    box.parts.push_back(detail::BoxPart{{L / 2 - 0.1, W / 2 - 0.1, 0.0},
                                        {L / 2 + 0.1, W / 2 + 0.1, 0.15}});
    objects.push_back(box);
  }

  // per-instance palette pick and color jitter, in instance order
  for (auto& o : objects) {
    const bool alt = o.cls >= kTable && uni(0.0, 1.0) < cfg.alt_color_rate;
    auto c = alt ? detail::class_alt_color(o.cls) : detail::class_base_color(o.cls);
    for (int j = 0; j < 3; ++j)
      c[j] = std::clamp(c[j] + uni(-cfg.color_jitter, cfg.color_jitter), 0.0, 1.0);
    o.base_color = c;
  }

  // exact class totals by largest remainder, then per-instance by area share
  std::vector<int> class_target(cfg.num_classes, 0);
  {
    double wsum = 0.0;
    for (double w : cfg.density) wsum += w;
    std::vector<std::pair<double, int>> rem;
    int assigned = 0;
    std::vector<char> class_present(cfg.num_classes, 0);
    for (const auto& o : objects) class_present[o.cls] = 1;
    double effective = 0.0;
    for (int c = 0; c < cfg.num_classes; ++c)
      if (class_present[c]) effective += cfg.density[c];
    for (int c = 0; c < cfg.num_classes; ++c) {
      if (!class_present[c]) continue;
      const double exact = cfg.points_per_scene * cfg.density[c] / effective;
      class_target[c] = static_cast<int>(exact);
      assigned += class_target[c];
      rem.push_back({exact - class_target[c], c});
    }
    std::sort(rem.begin(), rem.end(), [](auto& a, auto& b) {
      return a.first > b.first || (a.first == b.first && a.second < b.second);
    });
    for (int i = 0; assigned < cfg.points_per_scene; ++i, ++assigned)
      ++class_target[rem[i % rem.size()].second];
  }

  std::vector<int> inst_count(objects.size(), 0);
  for (int c = 0; c < cfg.num_classes; ++c) {
    double area = 0.0;
    for (const auto& o : objects)
      if (o.cls == c) area += o.area();
    if (class_target[c] == 0) continue;
    int assigned = 0;
    std::vector<std::pair<double, int>> rem;
    for (std::size_t i = 0; i < objects.size(); ++i) {
      if (objects[i].cls != c) continue;
      const double exact = class_target[c] * objects[i].area() / area;
      inst_count[i] = static_cast<int>(exact);
      assigned += inst_count[i];
      rem.push_back({exact - inst_count[i], static_cast<int>(i)});
    }
    std::sort(rem.begin(), rem.end(), [](auto& a, auto& b) {
      return a.first > b.first || (a.first == b.first && a.second < b.second);
    });
    for (int i = 0; assigned < class_target[c]; ++i, ++assigned)
      ++inst_count[rem[i % rem.size()].second];
  }

  Scene scene;
  scene.num_classes = cfg.num_classes;
  scene.rare_pattern = rare;
  scene.placement_failures = placement_failures;
  const int P = cfg.points_per_scene;
  scene.points.reserve(static_cast<std::size_t>(P) * 6);
  scene.semantic.reserve(P);
  scene.instance.reserve(P);

  std::normal_distribution<double> surface_noise(0.0, 0.008);
  std::uint32_t next_id = 0;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    if (inst_count[i] == 0) continue;  // unsampled object: no instance id
    const auto& o = objects[i];
    const std::uint32_t id = next_id++;
    for (int n = 0; n < inst_count[i]; ++n) {
      auto p = o.sample(rng);
      for (int j = 0; j < 3; ++j) p[j] += surface_noise(rng);
      p[0] = std::clamp(p[0], 0.0, L);
      p[1] = std::clamp(p[1], 0.0, W);
      p[2] = std::clamp(p[2], 0.0, H);
      std::array<double, 3> col = o.base_color;
      for (int j = 0; j < 3; ++j)
        col[j] = std::clamp(col[j] + uni(-0.02, 0.02), 0.0, 1.0);
      scene.points.push_back(static_cast<float>(p[0]));
      scene.points.push_back(static_cast<float>(p[1]));
      scene.points.push_back(static_cast<float>(p[2]));
      scene.points.push_back(static_cast<float>(col[0]));
      scene.points.push_back(static_cast<float>(col[1]));
      scene.points.push_back(static_cast<float>(col[2]));
      scene.semantic.push_back(static_cast<std::uint16_t>(o.cls));
      scene.instance.push_back(id);
    }
  }
  scene.validate();
  return scene;
}

// ---- blockification ----

struct BlockSpec {
  double block_size = 1.0;
  double stride = 0.5;
  int samples_per_block = 4096;
  int min_points = 100;  // sparser blocks are skipped

  void validate() const {
    check_arg(block_size > 0.0 && stride > 0.0 && stride <= block_size,
              "BlockSpec: need 0 < stride <= block_size");
    check_arg(samples_per_block > 0, "BlockSpec: samples_per_block must be positive");
    check_arg(min_points >= 1, "BlockSpec: min_points must be >= 1");
  }
};

struct Block {
  Tensor points;                   // S x 6: block-normalized xyz then rgb
  std::vector<int> scene_indices;  // sampled index per row, into the scene
  std::vector<int> semantic;       // per sampled point
  std::vector<int> instance;       // scene-level instance ids
  double origin_x = 0.0, origin_y = 0.0;
  std::array<double, 3> offset = {0.0, 0.0, 0.0};  // subtracted minimum
  int count() const { return points.rows; }
};

// Overlapping windows over the floor plane. Coordinates are shifted by the
// componentwise minimum over the window's points; sampling is without
// replacement when the window holds enough points, otherwise every point
// appears once and the remainder is drawn with replacement.
inline std::vector<Block> blockify(const Scene& scene, const BlockSpec& spec,
                                   std::uint64_t seed) {
  spec.validate();
  check_arg(scene.num_points() > 0, "blockify: empty scene");
  const auto ext = scene.extent();
  std::mt19937_64 rng(seed);
  std::vector<Block> blocks;

  for (double oy = 0.0; oy < ext[1]; oy += spec.stride) {
    for (double ox = 0.0; ox < ext[0]; ox += spec.stride) {
      std::vector<int> idx;
      for (int i = 0; i < scene.num_points(); ++i) {
        const double x = scene.coord(i, 0), y = scene.coord(i, 1);
        if (x >= ox && x < ox + spec.block_size && y >= oy &&
            y < oy + spec.block_size)
          idx.push_back(i);
      }
      if (static_cast<int>(idx.size()) < spec.min_points) continue;

      const int n = static_cast<int>(idx.size());
      const int s = spec.samples_per_block;
      std::vector<int> chosen;
      chosen.reserve(s);
      if (n >= s) {
        std::sample(idx.begin(), idx.end(), std::back_inserter(chosen), s, rng);
      } else {
        chosen = idx;
        std::uniform_int_distribution<int> pick(0, n - 1);
        for (int k = n; k < s; ++k) chosen.push_back(idx[pick(rng)]);
      }

      std::array<double, 3> mn = {1e30, 1e30, 1e30};
      for (int i : idx)
        for (int j = 0; j < 3; ++j)
          mn[j] = std::min(mn[j], static_cast<double>(scene.coord(i, j)));

      Block b;
      b.origin_x = ox;
      b.origin_y = oy;
      b.offset = mn;
      b.points = Tensor(static_cast<int>(chosen.size()), 6);
      b.scene_indices = chosen;
      b.semantic.reserve(chosen.size());
      b.instance.reserve(chosen.size());
      for (std::size_t r = 0; r < chosen.size(); ++r) {
        const int i = chosen[r];
        for (int j = 0; j < 3; ++j)
          b.points.at(static_cast<int>(r), j) = scene.coord(i, j) - mn[j];
        for (int j = 3; j < 6; ++j)
          b.points.at(static_cast<int>(r), j) = scene.coord(i, j);
        b.semantic.push_back(scene.semantic[i]);
        b.instance.push_back(static_cast<int>(scene.instance[i]));
      }
      blocks.push_back(std::move(b));
    }
  }
  return blocks;
}

// ---- on-disk formats ----

// Layout: "MPNC", version u32=1, point count u64, class count u32,
// P*6 float32 (x y z r g b), P u16 semantic, P u32 instance.
inline void write_scene(const Scene& scene, const std::string& path) {
  check_arg(scene.num_points() > 0, "write_scene: refusing to write empty scene");
  scene.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError(FormatError::Kind::io, "cannot open for write: " + path);
  os.write("MPNC", 4);
  detail::write_pod(os, std::uint32_t{1});
  detail::write_pod(os, static_cast<std::uint64_t>(scene.num_points()));
  detail::write_pod(os, static_cast<std::uint32_t>(scene.num_classes));
  detail::write_array(os, scene.points);
  detail::write_array(os, scene.semantic);
  detail::write_array(os, scene.instance);
  if (!os) throw FormatError(FormatError::Kind::io, "write failed: " + path);
}

inline Scene read_scene(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(FormatError::Kind::io, "cannot open for read: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "MPNC", 4) != 0)
    throw FormatError(FormatError::Kind::bad_magic, "not an MPNC file: " + path);
  std::uint32_t version;
  detail::read_pod(is, version);
  if (version != 1)
    throw FormatError(FormatError::Kind::bad_version,
                      "unsupported MPNC version " + std::to_string(version));
  std::uint64_t count;
  std::uint32_t classes;
  detail::read_pod(is, count);
  detail::read_pod(is, classes);
  if (count == 0 || count > (1ull << 32) || classes == 0 || classes > 65535)
    throw FormatError(FormatError::Kind::truncated, "implausible MPNC header");
  Scene scene;
  scene.num_classes = static_cast<int>(classes);
  detail::read_array(is, scene.points, static_cast<std::size_t>(count) * 6);
  detail::read_array(is, scene.semantic, count);
  detail::read_array(is, scene.instance, count);
  scene.validate();
  return scene;
}

// ASCII PLY with per-point color and labels, for external viewers.
inline void write_ply(const std::string& path, const Scene& scene,
                      const std::vector<int>* instance_override = nullptr,
                      const std::vector<double>* gray_override = nullptr,
                      const std::vector<int>* semantic_override = nullptr) {
  std::ofstream os(path);
  if (!os) throw FormatError(FormatError::Kind::io, "cannot open for write: " + path);
  const int P = scene.num_points();
  os << "ply\nformat ascii 1.0\nelement vertex " << P << "\n"
     << "property float x\nproperty float y\nproperty float z\n"
     << "property float red\nproperty float green\nproperty float blue\n"
     << "property int sem\nproperty int ins\nend_header\n";
  os.precision(9);
  for (int i = 0; i < P; ++i) {
    double r = scene.coord(i, 3), g = scene.coord(i, 4), b = scene.coord(i, 5);
    if (gray_override) r = g = b = (*gray_override)[i];
    const int ins = instance_override ? (*instance_override)[i]
                                      : static_cast<int>(scene.instance[i]);
    const int sem = semantic_override ? (*semantic_override)[i]
                                      : static_cast<int>(scene.semantic[i]);
    os << scene.coord(i, 0) << " " << scene.coord(i, 1) << " "
       << scene.coord(i, 2) << " " << r << " " << g << " " << b << " "
       << sem << " " << ins << "\n";
  }
  if (!os) throw FormatError(FormatError::Kind::io, "write failed: " + path);
}

}  // namespace mpnet
