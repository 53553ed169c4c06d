#include "handocc/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "handocc/error.hpp"
#include "handocc/nn.hpp"
#include "handocc/serialize.hpp"

namespace handocc::synth {

std::string_view split_name(Split s) { return s == Split::train ? "train" : "test"; }

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(name) + "' (expected train or test)");
}

void DatasetConfig::validate() const {
  if (count == 0) throw ConfigError("dataset count must be positive");
  if (image_size == 0 || heatmap_stride == 0 || image_size % heatmap_stride != 0) {
    throw ConfigError("image_size must be a positive multiple of heatmap_stride");
  }
  if (!(occlusion_lo >= 0.0 && occlusion_lo <= occlusion_hi && occlusion_hi <= 1.0)) {
    throw ConfigError("occlusion range must satisfy 0 <= lo <= hi <= 1");
  }
  if (!(heatmap_sigma > 0.0) || pose_range < 0.0 || global_range < 0.0 || shape_range < 0.0) {
    throw ConfigError("sigma must be positive and sampling ranges nonnegative");
  }
}

Camera Camera::for_image(std::size_t image_size) {
  const double n = static_cast<double>(image_size);
  return {0.3 * n / 64.0, n / 2.0, n / 2.0, 75.0};
}

Tensor Camera::project(const Tensor& points) const {
  if (points.rank() != 2 || points.dim(1) != 3) throw DimensionError("project: points must be [K x 3]");
  Tensor uv({points.dim(0), 2});
  for (std::size_t i = 0; i < points.dim(0); ++i) {
    uv.at(i, 0) = cx + scale * points.at(i, 0);
    uv.at(i, 1) = cy - scale * (points.at(i, 1) - y0);
  }
  return uv;
}

Tensor render_heatmaps(const Tensor& joints2d, std::size_t h, std::size_t w, double sigma) {
  if (joints2d.rank() != 2 || joints2d.dim(1) != 2) throw DimensionError("render_heatmaps: joints must be [J x 2]");
  const std::size_t jn = joints2d.dim(0);
  Tensor maps({jn, h, w});
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t j = 0; j < jn; ++j) {
    const double x = joints2d.at(j, 0), y = joints2d.at(j, 1);
    // A joint is in frame when it falls on the area of some pixel.
    if (!(x >= -0.5 && x < static_cast<double>(w) - 0.5 && y >= -0.5 && y < static_cast<double>(h) - 0.5)) continue;
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const double dx = static_cast<double>(c) - x, dy = static_cast<double>(r) - y;
        maps.at(j, r, c) = std::exp(-(dx * dx + dy * dy) * inv);
      }
    }
  }
  return maps;
}

std::uint64_t sample_seed(std::uint64_t seed, Split split, std::size_t index) {
  return nn::mix_seed(nn::mix_seed(seed, static_cast<std::uint64_t>(split) + 1), index);
}

// ---- rendering --------------------------------------------------------------

namespace {

using Rgb = std::array<double, 3>;

struct Point2 {
  double x, y;
};

double cross2(Point2 o, Point2 a, Point2 b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

// Andrew's monotone chain; counter-clockwise without collinear points.
std::vector<Point2> convex_hull(std::vector<Point2> pts) {
  std::sort(pts.begin(), pts.end(), [](Point2 a, Point2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  if (pts.size() < 3) return pts;
  std::vector<Point2> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross2(hull[k - 2], hull[k - 1], pts[i - 1]) <= 0) --k;
    hull[k++] = pts[i - 1];
  }
  hull.resize(k - 1);
  return hull;
}

bool inside_hull(const std::vector<Point2>& hull, Point2 p) {
  if (hull.size() < 3) return false;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    if (cross2(hull[i], hull[(i + 1) % hull.size()], p) < 0) return false;
  }
  return true;
}

struct Capsule {
  Point2 a, b;
  double za, zb;
  double radius;
  Rgb tint;
};

struct Occluder {
  bool ellipse;
  Point2 centre;
  double ax, ay;  // half extents per unit size
  Rgb color;
};

bool covers(const Occluder& o, double size, Point2 p) {
  const double hx = o.ax * size, hy = o.ay * size;
  if (hx <= 0.0 || hy <= 0.0) return false;
  const double dx = (p.x - o.centre.x) / hx, dy = (p.y - o.centre.y) / hy;
  return o.ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
}

constexpr Rgb kSkin{0.86, 0.64, 0.52};
constexpr std::array<Rgb, 5> kDigitTint{{
    {1.00, 0.92, 0.90}, {0.96, 1.00, 0.94}, {1.00, 1.00, 1.00}, {0.94, 0.96, 1.04}, {1.04, 0.94, 1.00},
}};

}  // namespace

Generator::Generator(DatasetConfig config, hand::HandTemplate tmpl)
    : config_(config), template_(std::move(tmpl)), camera_(Camera::for_image(config.image_size)) {
  config_.validate();
  template_.validate();
}

Sample Generator::sample(std::size_t index) const {
  const DatasetConfig& cfg = config_;
  const hand::HandTemplate& t = template_;
  std::mt19937_64 rng(sample_seed(cfg.seed, cfg.split, index));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  // Digits are the rotating non-root joints; each owns the leaf below it.
  struct DigitInfo {
    std::size_t knuckle, tip;
  };
  std::vector<DigitInfo> digits;
  for (std::size_t j = 1; j < t.joint_count(); ++j) {
    if (t.rotation_slot[j] < 0) continue;
    for (std::size_t c = j + 1; c < t.joint_count(); ++c) {
      if (t.parents[c] == static_cast<int>(j)) digits.push_back({j, c});
    }
  }

  Sample s;
  s.theta = Tensor({t.pose_size()});
  s.beta = Tensor({t.shape_count()});
  for (double& b : s.beta.data()) b = uniform(-cfg.shape_range, cfg.shape_range);
  for (std::size_t k = 0; k < 3; ++k) s.theta[k] = uniform(-cfg.global_range, cfg.global_range);
  // Grasp synergy: one shared closure level, perturbed per digit, plus a small spread.
  const double grasp = unit(rng);
  for (const auto& d : digits) {
    const double flex = cfg.pose_range * std::clamp(grasp + 0.15 * gauss(rng), 0.0, 1.0);
    const double spread = 0.15 * cfg.pose_range * uniform(-1.0, 1.0);
    const double dx = t.rest_joints.at(d.tip, 0) - t.rest_joints.at(d.knuckle, 0);
    const double dy = t.rest_joints.at(d.tip, 1) - t.rest_joints.at(d.knuckle, 1);
    const double n = std::hypot(dx, dy);
    const std::size_t slot = static_cast<std::size_t>(t.rotation_slot[d.knuckle]);
    s.theta[3 * slot + 0] = flex * dy / n;
    s.theta[3 * slot + 1] = -flex * dx / n;
    s.theta[3 * slot + 2] = spread;
  }

  const hand::PosedHand posed = hand::forward_kinematics(t, s.theta, s.beta);
  s.mesh = posed.vertices;
  s.joints3d = posed.joints;
  s.joints2d = camera_.project(s.joints3d);

  const std::size_t hm = cfg.image_size / cfg.heatmap_stride;
  Tensor hm_joints(s.joints2d.shape());
  for (std::size_t i = 0; i < hm_joints.size(); ++i) {
    hm_joints[i] = (s.joints2d[i] + 0.5) / static_cast<double>(cfg.heatmap_stride) - 0.5;
  }
  s.heatmaps = render_heatmaps(hm_joints, hm, hm, cfg.heatmap_sigma);

  // ---- geometry in image space ----
  const Tensor mesh_uv = camera_.project(s.mesh);
  std::vector<Point2> palm_pts;
  std::vector<double> palm_z;
  std::vector<std::size_t> owner(t.vertex_count());
  for (std::size_t v = 0; v < t.vertex_count(); ++v) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < t.joint_count(); ++j) {
      if (t.skin_weights.at(v, j) > t.skin_weights.at(v, best)) best = j;
    }
    owner[v] = best;
    if (best == 0) {
      palm_pts.push_back({mesh_uv.at(v, 0), mesh_uv.at(v, 1)});
      palm_z.push_back(s.mesh.at(v, 2));
    }
  }
  const std::vector<Point2> hull = convex_hull(palm_pts);

  // Digit thickness from the rest mesh: mean distance of owned vertices to the bone axis.
  std::vector<Capsule> capsules;
  for (std::size_t d = 0; d < digits.size(); ++d) {
    const auto& dg = digits[d];
    std::array<double, 3> a{}, b{};
    for (int k = 0; k < 3; ++k) {
      a[k] = t.rest_joints.at(dg.knuckle, k);
      b[k] = t.rest_joints.at(dg.tip, k);
    }
    const std::array<double, 3> ab{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
    const double len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    double sum = 0.0;
    std::size_t cnt = 0;
    for (std::size_t v = 0; v < t.vertex_count(); ++v) {
      if (owner[v] != dg.knuckle) continue;
      std::array<double, 3> ap{};
      for (int k = 0; k < 3; ++k) ap[k] = t.rest_vertices.at(v, k) - a[k];
      const double u = std::clamp((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2, 0.0, 1.0);
      double dist2 = 0.0;
      for (int k = 0; k < 3; ++k) dist2 += (ap[k] - u * ab[k]) * (ap[k] - u * ab[k]);
      sum += std::sqrt(dist2);
      ++cnt;
    }
    const double radius = cnt ? sum / static_cast<double>(cnt) : 6.0;
    capsules.push_back({{s.joints2d.at(dg.knuckle, 0), s.joints2d.at(dg.knuckle, 1)},
                        {s.joints2d.at(dg.tip, 0), s.joints2d.at(dg.tip, 1)},
                        s.joints3d.at(dg.knuckle, 2),
                        s.joints3d.at(dg.tip, 2),
                        radius * camera_.scale,
                        kDigitTint[d % kDigitTint.size()]});
  }

  const std::size_t n = cfg.image_size;
  double zmin = s.mesh.at(0, 2), zmax = zmin;
  for (std::size_t v = 0; v < t.vertex_count(); ++v) {
    zmin = std::min(zmin, s.mesh.at(v, 2));
    zmax = std::max(zmax, s.mesh.at(v, 2));
  }
  const double zspan = std::max(zmax - zmin, 1e-6);

  // Background: a random colour gradient with pixel noise.
  const Rgb bg0{uniform(0.05, 0.95), uniform(0.05, 0.95), uniform(0.05, 0.95)};
  const Rgb bg1{uniform(0.05, 0.95), uniform(0.05, 0.95), uniform(0.05, 0.95)};
  const double gdir = uniform(0.0, 2.0 * std::numbers::pi);
  s.image = Tensor({n, n, 3});
  std::vector<char> hand_mask(n * n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const Point2 p{static_cast<double>(c), static_cast<double>(r)};
      const double g = 0.5 + std::cos(gdir) * (p.x / n - 0.5) + std::sin(gdir) * (p.y / n - 0.5);
      Rgb color;
      for (int k = 0; k < 3; ++k) color[k] = bg0[k] * (1 - g) + bg1[k] * g + 0.05 * gauss(rng);

      double best_z = -1e300;
      bool hit = false;
      Rgb hand_color{};
      if (inside_hull(hull, p)) {
        std::size_t nearest = 0;
        double nd = 1e300;
        for (std::size_t i = 0; i < palm_pts.size(); ++i) {
          const double d2 = (palm_pts[i].x - p.x) * (palm_pts[i].x - p.x) + (palm_pts[i].y - p.y) * (palm_pts[i].y - p.y);
          if (d2 < nd) {
            nd = d2;
            nearest = i;
          }
        }
        best_z = palm_z[nearest];
        hit = true;
        const double shade = 0.6 + 0.4 * (best_z - zmin) / zspan;
        for (int k = 0; k < 3; ++k) hand_color[k] = kSkin[k] * shade;
      }
      for (const auto& cap : capsules) {
        const double vx = cap.b.x - cap.a.x, vy = cap.b.y - cap.a.y;
        const double l2 = vx * vx + vy * vy;
        const double u = l2 > 0 ? std::clamp(((p.x - cap.a.x) * vx + (p.y - cap.a.y) * vy) / l2, 0.0, 1.0) : 0.0;
        const double ex = p.x - (cap.a.x + u * vx), ey = p.y - (cap.a.y + u * vy);
        const double d2 = ex * ex + ey * ey;
        if (d2 > cap.radius * cap.radius) continue;
        const double z = cap.za + u * (cap.zb - cap.za);
        if (hit && z <= best_z) continue;
        best_z = z;
        hit = true;
        const double shade = (0.6 + 0.4 * (z - zmin) / zspan) * (1.0 - 0.3 * d2 / (cap.radius * cap.radius));
        for (int k = 0; k < 3; ++k) hand_color[k] = kSkin[k] * cap.tint[k] * shade;
      }
      if (hit) {
        hand_mask[r * n + c] = 1;
        for (int k = 0; k < 3; ++k) color[k] = hand_color[k] + 0.02 * gauss(rng);
      }
      for (int k = 0; k < 3; ++k) s.image.at(r, c, k) = std::clamp(color[k], 0.0, 1.0);
    }
  }

  std::vector<std::size_t> hand_pixels;
  s.mask = Tensor({n, n});
  for (std::size_t i = 0; i < hand_mask.size(); ++i) {
    if (!hand_mask[i]) continue;
    hand_pixels.push_back(i);
    s.mask[i] = 1.0;
  }
  if (cfg.occlusion_hi <= 0.0 || hand_pixels.empty()) {
    if (cfg.occlusion_lo > 0.0) {
      throw GenerationError("sample " + std::to_string(index) + " has no visible hand pixels to occlude");
    }
    s.occlusion = 0.0;
    return s;
  }

  auto measure = [&](const std::vector<Occluder>& occ, double size) {
    std::size_t covered = 0;
    for (std::size_t i : hand_pixels) {
      const Point2 p{static_cast<double>(i % n), static_cast<double>(i / n)};
      for (const auto& o : occ) {
        if (covers(o, size, p)) {
          ++covered;
          break;
        }
      }
    }
    return static_cast<double>(covered) / static_cast<double>(hand_pixels.size());
  };

  // Occluder layouts are drawn at random; for each, a size is found by
  // bisection so that the covered fraction reaches a random target in range.
  constexpr int kAttempts = 100;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    const auto count = static_cast<std::size_t>(1 + rng() % 3);
    std::vector<Occluder> occ;
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t px = hand_pixels[rng() % hand_pixels.size()];
      Occluder o;
      o.ellipse = unit(rng) < 0.5;
      o.centre = {static_cast<double>(px % n), static_cast<double>(px / n)};
      o.ax = uniform(0.5, 1.5);
      o.ay = uniform(0.5, 1.5);
      o.color = {unit(rng), unit(rng), unit(rng)};
      occ.push_back(o);
    }
    const double target = uniform(cfg.occlusion_lo, cfg.occlusion_hi);
    double lo = 0.0, hi = 2.0 * static_cast<double>(n);
    if (measure(occ, hi) < target) continue;
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (lo + hi);
      (measure(occ, mid) >= target ? hi : lo) = mid;
    }
    const double fraction = measure(occ, hi);
    if (fraction < cfg.occlusion_lo || fraction > cfg.occlusion_hi) continue;

    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        const Point2 p{static_cast<double>(c), static_cast<double>(r)};
        // Later occluders are painted over earlier ones.
        for (auto it = occ.rbegin(); it != occ.rend(); ++it) {
          if (!covers(*it, hi, p)) continue;
          for (int k = 0; k < 3; ++k) s.image.at(r, c, k) = std::clamp(it->color[k] + 0.03 * gauss(rng), 0.0, 1.0);
          break;
        }
      }
    }
    s.occlusion = fraction;
    return s;
  }
  throw GenerationError("could not reach occlusion range [" + std::to_string(cfg.occlusion_lo) + ", " +
                        std::to_string(cfg.occlusion_hi) + "] for " + std::string(split_name(cfg.split)) + " sample " +
                        std::to_string(index) + " (seed " + std::to_string(cfg.seed) + ") after " +
                        std::to_string(kAttempts) + " attempts");
}

std::vector<Sample> Generator::generate() const {
  std::vector<Sample> out;
  out.reserve(config_.count);
  for (std::size_t i = 0; i < config_.count; ++i) out.push_back(sample(i));
  return out;
}

// ---- dataset files ----------------------------------------------------------

namespace {

constexpr std::array<const char*, 9> kFields{"image", "theta", "beta", "mesh", "joints3d", "joints2d", "heatmaps",
                                             "mask", "occlusion"};

nlohmann::json config_json(const DatasetConfig& c) {
  return {{"seed", c.seed},
          {"split", std::string(split_name(c.split))},
          {"count", c.count},
          {"image_size", c.image_size},
          {"heatmap_stride", c.heatmap_stride},
          {"heatmap_sigma", c.heatmap_sigma},
          {"occlusion_range", {c.occlusion_lo, c.occlusion_hi}},
          {"pose_range", c.pose_range},
          {"global_range", c.global_range},
          {"shape_range", c.shape_range}};
}

nlohmann::json read_index(const std::filesystem::path& dir) {
  const auto path = dir / "index.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed " + path.string() + ": " + e.what());
  }
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const DatasetConfig& config, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir);
  const auto data_path = dir / "data.bin";
  std::ofstream out(data_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + data_path.string());
  std::vector<std::uint64_t> offsets;
  std::uint64_t pos = 0;
  for (const Sample& s : samples) {
    offsets.push_back(pos);
    for (const Tensor* t : {&s.image, &s.theta, &s.beta, &s.mesh, &s.joints3d, &s.joints2d, &s.heatmaps, &s.mask}) {
      write_tensor(out, *t);
      pos += encoded_size(*t);
    }
    const Tensor occ = Tensor::vector({s.occlusion});
    write_tensor(out, occ);
    pos += encoded_size(occ);
  }
  if (!out) throw IoError("write failed for " + data_path.string());

  nlohmann::json index;
  index["format"] = "handocc-dataset";
  index["version"] = 1;
  index["count"] = samples.size();
  index["fields"] = kFields;
  index["config"] = config_json(config);
  index["offsets"] = offsets;
  const auto index_path = dir / "index.json";
  std::ofstream idx(index_path);
  if (!idx) throw IoError("cannot write " + index_path.string());
  idx << index.dump(1) << "\n";
}

DatasetConfig load_dataset_config(const std::filesystem::path& dir) {
  const nlohmann::json index = read_index(dir);
  try {
    const auto& c = index.at("config");
    DatasetConfig cfg;
    cfg.seed = c.at("seed").get<std::uint64_t>();
    cfg.split = parse_split(c.at("split").get<std::string>());
    cfg.count = c.at("count").get<std::size_t>();
    cfg.image_size = c.at("image_size").get<std::size_t>();
    cfg.heatmap_stride = c.at("heatmap_stride").get<std::size_t>();
    cfg.heatmap_sigma = c.at("heatmap_sigma").get<double>();
    cfg.occlusion_lo = c.at("occlusion_range").at(0).get<double>();
    cfg.occlusion_hi = c.at("occlusion_range").at(1).get<double>();
    cfg.pose_range = c.at("pose_range").get<double>();
    cfg.global_range = c.at("global_range").get<double>();
    cfg.shape_range = c.at("shape_range").get<double>();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("index.json in " + dir.string() + " lacks generation settings: " + e.what());
  }
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
  const nlohmann::json index = read_index(dir);
  std::size_t count = 0;
  try {
    if (index.at("format") != "handocc-dataset" || index.at("version") != 1) {
      throw IoError("unsupported dataset format in " + dir.string());
    }
    if (index.at("fields").get<std::vector<std::string>>() != std::vector<std::string>(kFields.begin(), kFields.end())) {
      throw IoError("unexpected field list in " + dir.string());
    }
    count = index.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed index.json in " + dir.string() + ": " + e.what());
  }
  const auto data_path = dir / "data.bin";
  std::ifstream in(data_path, std::ios::binary);
  if (!in) throw IoError("cannot open " + data_path.string());
  std::vector<Sample> samples(count);
  for (Sample& s : samples) {
    s.image = read_tensor(in);
    s.theta = read_tensor(in);
    s.beta = read_tensor(in);
    s.mesh = read_tensor(in);
    s.joints3d = read_tensor(in);
    s.joints2d = read_tensor(in);
    s.heatmaps = read_tensor(in);
    s.mask = read_tensor(in);
    s.occlusion = read_tensor(in)[0];
  }
  return samples;
}

}  // namespace handocc::synth
