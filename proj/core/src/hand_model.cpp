#include "handocc/hand_model.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

#include "handocc/error.hpp"
#include "handocc/ops.hpp"

namespace handocc::hand {

std::size_t HandTemplate::rotation_count() const {
  return static_cast<std::size_t>(std::count_if(rotation_slot.begin(), rotation_slot.end(), [](int s) { return s >= 0; }));
}

void HandTemplate::validate() const {
  const std::size_t v = rest_vertices.rank() == 2 ? rest_vertices.dim(0) : 0;
  const std::size_t j = parents.size();
  if (v == 0 || rest_vertices.dim(1) != 3) throw ConfigError("template: rest_vertices must be [V x 3]");
  if (j == 0 || rotation_slot.size() != j || joint_names.size() != j) throw ConfigError("template: joint tables disagree");
  if (rest_joints.shape() != Shape{j, 3}) throw ConfigError("template: rest_joints must be [J x 3]");
  if (skin_weights.shape() != Shape{v, j}) throw ConfigError("template: skin_weights must be [V x J]");
  if (joint_regressor.shape() != Shape{j, v}) throw ConfigError("template: joint_regressor must be [J x V]");
  if (shape_basis.rank() != 3 || shape_basis.dim(1) != v || shape_basis.dim(2) != 3) {
    throw ConfigError("template: shape_basis must be [S x V x 3]");
  }
  if (parents[0] != -1) throw ConfigError("template: joint 0 must be the root");
  if (rotation_slot[0] != 0) throw ConfigError("template: the root must own pose slot 0");
  std::set<int> slots;
  for (std::size_t i = 0; i < j; ++i) {
    if (i > 0 && (parents[i] < 0 || parents[i] >= static_cast<int>(i))) {
      throw ConfigError("template: joint " + std::to_string(i) + " must have an earlier parent");
    }
    if (rotation_slot[i] >= 0 && !slots.insert(rotation_slot[i]).second) {
      throw ConfigError("template: duplicate pose slot " + std::to_string(rotation_slot[i]));
    }
  }
  if (!slots.empty() && *slots.rbegin() != static_cast<int>(slots.size()) - 1) {
    throw ConfigError("template: pose slots must be contiguous from 0");
  }
  const Tensor row_w = ops::row_sums(skin_weights);
  for (std::size_t i = 0; i < v; ++i) {
    if (std::abs(row_w[i] - 1.0) > 1e-9) throw ConfigError("template: skin weights of vertex " + std::to_string(i) + " do not sum to 1");
  }
  const Tensor row_r = ops::row_sums(joint_regressor);
  for (std::size_t i = 0; i < j; ++i) {
    if (std::abs(row_r[i] - 1.0) > 1e-9) throw ConfigError("template: regressor row " + std::to_string(i) + " does not sum to 1");
  }
}

// ---- procedural template -----------------------------------------------------

namespace {

using Vec3 = std::array<double, 3>;

Vec3 operator+(Vec3 a, Vec3 b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 operator*(double s, Vec3 a) { return {s * a[0], s * a[1], s * a[2]}; }
Vec3 cross(Vec3 a, Vec3 b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec3 normalized(Vec3 a) {
  const double n = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  return (1.0 / n) * a;
}

struct Digit {
  const char* name;
  Vec3 base;
  Vec3 direction;
  double length;
  double radius;
};

constexpr int kRingSize = 6;
constexpr std::array<double, 3> kStations{0.0, 0.5, 1.0};

}  // namespace

HandTemplate make_default_template() {
  const std::array<Digit, 5> digits{{
      {"thumb", {-40, 20, 0}, normalized({-0.7, 0.7, 0}), 55, 9},
      {"index", {-30, 80, 0}, {0, 1, 0}, 70, 8},
      {"middle", {-10, 80, 0}, {0, 1, 0}, 75, 8},
      {"ring", {10, 80, 0}, {0, 1, 0}, 70, 8},
      {"little", {30, 80, 0}, {0, 1, 0}, 55, 7},
  }};
  constexpr std::size_t kShapes = 4;
  constexpr std::size_t kJoints = 11;

  std::vector<Vec3> verts;
  std::vector<std::array<double, kJoints>> skin;
  std::vector<std::array<Vec3, kShapes>> basis;
  std::vector<std::vector<std::size_t>> regressor_support(kJoints);

  // Palm: 3 x 5 x 2 lattice on a box, fully bound to the wrist.
  for (double y : {0.0, 40.0, 80.0}) {
    for (double x : {-40.0, -20.0, 0.0, 20.0, 40.0}) {
      for (double z : {-10.0, 10.0}) {
        if (y == 0.0) regressor_support[0].push_back(verts.size());
        verts.push_back({x, y, z});
        std::array<double, kJoints> w{};
        w[0] = 1.0;
        skin.push_back(w);
        basis.push_back({Vec3{0.1 * x, 0.1 * y, 0.1 * z}, Vec3{0, 0, 0}, Vec3{0.15 * x, 0, 0}, Vec3{0, 0, 0.2 * z}});
      }
    }
  }

  for (std::size_t d = 0; d < digits.size(); ++d) {
    const Digit& g = digits[d];
    const std::size_t knuckle = 1 + d;
    const std::size_t tip = 6 + d;
    const Vec3 u{0, 0, 1};
    const Vec3 w = cross(g.direction, u);
    for (double t : kStations) {
      const Vec3 centre = g.base + (t * g.length) * g.direction;
      for (int k = 0; k < kRingSize; ++k) {
        const double phi = 2.0 * std::numbers::pi * k / kRingSize;
        const Vec3 radial = std::cos(phi) * u + std::sin(phi) * w;
        const Vec3 p = centre + g.radius * radial;
        if (t == 0.0) regressor_support[knuckle].push_back(verts.size());
        if (t == 1.0) regressor_support[tip].push_back(verts.size());
        verts.push_back(p);
        std::array<double, kJoints> sw{};
        if (t == 0.0) {
          sw[0] = 0.5;
          sw[knuckle] = 0.5;
        } else {
          sw[knuckle] = 1.0;
        }
        skin.push_back(sw);
        basis.push_back({0.1 * p, (0.15 * t * g.length) * g.direction, Vec3{0.15 * g.base[0], 0, 0},
                         (0.2 * g.radius) * radial});
      }
    }
    const Vec3 apex = g.base + (g.length + 0.6 * g.radius) * g.direction;
    verts.push_back(apex);
    std::array<double, kJoints> sw{};
    sw[knuckle] = 1.0;
    skin.push_back(sw);
    basis.push_back({0.1 * apex, (0.15 * g.length) * g.direction, Vec3{0.15 * g.base[0], 0, 0}, Vec3{0, 0, 0}});
  }

  const std::size_t v = verts.size();
  HandTemplate t;
  t.rest_vertices = Tensor({v, 3});
  t.skin_weights = Tensor({v, kJoints});
  t.shape_basis = Tensor({kShapes, v, 3});
  for (std::size_t i = 0; i < v; ++i) {
    for (int c = 0; c < 3; ++c) t.rest_vertices.at(i, c) = verts[i][c];
    for (std::size_t j = 0; j < kJoints; ++j) t.skin_weights.at(i, j) = skin[i][j];
    for (std::size_t s = 0; s < kShapes; ++s)
      for (int c = 0; c < 3; ++c) t.shape_basis.at(s, i, c) = basis[i][s][c];
  }
  t.joint_regressor = Tensor({kJoints, v});
  for (std::size_t j = 0; j < kJoints; ++j) {
    const double w = 1.0 / static_cast<double>(regressor_support[j].size());
    for (std::size_t idx : regressor_support[j]) t.joint_regressor.at(j, idx) = w;
  }
  t.parents = {-1, 0, 0, 0, 0, 0, 1, 2, 3, 4, 5};
  t.rotation_slot = {0, 1, 2, 3, 4, 5, -1, -1, -1, -1, -1};
  t.joint_names = {"wrist"};
  for (const auto& g : digits) t.joint_names.push_back(std::string(g.name) + "_mcp");
  for (const auto& g : digits) t.joint_names.push_back(std::string(g.name) + "_tip");
  t.rest_joints = regress_joints(t.rest_vertices, t.joint_regressor);
  t.validate();
  return t;
}

// ---- text format -------------------------------------------------------------

namespace {

std::string fmt(double v) {
  std::array<char, 32> buf;
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  std::string word() {
    std::string tok;
    while (true) {
      if (!(in_ >> tok)) throw IoError("template: unexpected end of file");
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in_, rest);
        continue;
      }
      return tok;
    }
  }

  void expect(const std::string& keyword) {
    const std::string tok = word();
    if (tok != keyword) throw IoError("template: expected '" + keyword + "', found '" + tok + "'");
  }

  double number() {
    const std::string tok = word();
    double v = 0.0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) throw IoError("template: bad number '" + tok + "'");
    return v;
  }

  long integer() {
    const std::string tok = word();
    long v = 0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) throw IoError("template: bad integer '" + tok + "'");
    return v;
  }

 private:
  std::istream& in_;
};

}  // namespace

void write_template(std::ostream& out, const HandTemplate& t) {
  t.validate();
  const std::size_t v = t.vertex_count(), j = t.joint_count(), s = t.shape_count();
  out << "HANDTEMPLATE 1\n";
  out << "counts " << v << ' ' << j << ' ' << s << '\n';
  out << "vertices\n";
  for (std::size_t i = 0; i < v; ++i) {
    out << fmt(t.rest_vertices.at(i, 0)) << ' ' << fmt(t.rest_vertices.at(i, 1)) << ' ' << fmt(t.rest_vertices.at(i, 2))
        << '\n';
  }
  out << "joints\n";
  for (std::size_t i = 0; i < j; ++i) {
    out << t.joint_names[i] << ' ' << t.parents[i] << ' ' << t.rotation_slot[i] << ' ' << fmt(t.rest_joints.at(i, 0))
        << ' ' << fmt(t.rest_joints.at(i, 1)) << ' ' << fmt(t.rest_joints.at(i, 2)) << '\n';
  }
  out << "skin_weights\n";
  for (std::size_t i = 0; i < v; ++i) {
    for (std::size_t k = 0; k < j; ++k) out << (k ? " " : "") << fmt(t.skin_weights.at(i, k));
    out << '\n';
  }
  out << "shape_basis\n";
  for (std::size_t b = 0; b < s; ++b) {
    out << "basis " << b << '\n';
    for (std::size_t i = 0; i < v; ++i) {
      out << fmt(t.shape_basis.at(b, i, 0)) << ' ' << fmt(t.shape_basis.at(b, i, 1)) << ' '
          << fmt(t.shape_basis.at(b, i, 2)) << '\n';
    }
  }
  out << "joint_regressor\n";
  for (std::size_t k = 0; k < j; ++k) {
    for (std::size_t i = 0; i < v; ++i) out << (i ? " " : "") << fmt(t.joint_regressor.at(k, i));
    out << '\n';
  }
  out << "end\n";
  if (!out) throw IoError("template: write failed");
}

HandTemplate read_template(std::istream& in) {
  TokenReader r(in);
  r.expect("HANDTEMPLATE");
  if (r.integer() != 1) throw IoError("template: unsupported version");
  r.expect("counts");
  const long v = r.integer(), j = r.integer(), s = r.integer();
  if (v <= 0 || j <= 0 || s <= 0 || v > 1'000'000 || j > 10'000 || s > 1'000) throw IoError("template: bad counts");
  const auto V = static_cast<std::size_t>(v), J = static_cast<std::size_t>(j), S = static_cast<std::size_t>(s);
  HandTemplate t;
  r.expect("vertices");
  t.rest_vertices = Tensor({V, 3});
  for (double& x : t.rest_vertices.data()) x = r.number();
  r.expect("joints");
  t.rest_joints = Tensor({J, 3});
  for (std::size_t i = 0; i < J; ++i) {
    t.joint_names.push_back(r.word());
    t.parents.push_back(static_cast<int>(r.integer()));
    t.rotation_slot.push_back(static_cast<int>(r.integer()));
    for (int c = 0; c < 3; ++c) t.rest_joints.at(i, c) = r.number();
  }
  r.expect("skin_weights");
  t.skin_weights = Tensor({V, J});
  for (double& x : t.skin_weights.data()) x = r.number();
  r.expect("shape_basis");
  t.shape_basis = Tensor({S, V, 3});
  for (std::size_t b = 0; b < S; ++b) {
    r.expect("basis");
    if (r.integer() != static_cast<long>(b)) throw IoError("template: shape basis blocks out of order");
    for (std::size_t i = 0; i < V * 3; ++i) t.shape_basis[b * V * 3 + i] = r.number();
  }
  r.expect("joint_regressor");
  t.joint_regressor = Tensor({J, V});
  for (double& x : t.joint_regressor.data()) x = r.number();
  r.expect("end");
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw IoError(e.what());
  }
  return t;
}

void save_template(const std::filesystem::path& path, const HandTemplate& t) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_template(out, t);
}

HandTemplate load_template(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_template(in);
}

// ---- kinematics ----------------------------------------------------------------

Tensor regress_joints(const Tensor& mesh, const Tensor& regressor) { return ops::matmul(regressor, mesh); }

ad::Var regress_joints(ad::Var mesh, const Tensor& regressor) {
  return ad::matmul(mesh.tape().parameter(regressor, false), mesh);
}

ad::Var shape_blend(const HandTemplate& t, ad::Var beta) {
  ad::Tape& tape = beta.tape();
  const std::size_t s = t.shape_count(), v = t.vertex_count();
  if (beta.value().size() != s) {
    throw DimensionError("shape_blend: beta has " + std::to_string(beta.value().size()) + " entries, template expects " +
                         std::to_string(s));
  }
  const ad::Var basis = tape.constant(t.shape_basis.reshaped({s, v * 3}));
  const ad::Var offsets = ad::reshape(ad::matmul(ad::reshape(beta, {1, s}), basis), {v, 3});
  return ad::add(tape.parameter(t.rest_vertices, false), offsets);
}

Tensor shape_blend(const HandTemplate& t, const Tensor& beta) {
  ad::Tape tape;
  return shape_blend(t, tape.constant(beta)).value();
}

PosedHandVars forward_kinematics(const HandTemplate& t, ad::Var theta, ad::Var beta,
                                 std::optional<ad::Var> translation) {
  ad::Tape& tape = theta.tape();
  const std::size_t r = t.rotation_count(), jn = t.joint_count();
  if (theta.value().size() != 3 * r) {
    throw DimensionError("forward_kinematics: theta has " + std::to_string(theta.value().size()) +
                         " entries, expected " + std::to_string(3 * r));
  }
  if (translation && translation->value().size() != 3) throw DimensionError("forward_kinematics: translation must have 3 entries");

  const ad::Var shaped = shape_blend(t, beta);
  const ad::Var rest_joints = regress_joints(shaped, t.joint_regressor);
  const ad::Var pose = ad::reshape(theta, {r, 3});

  std::vector<ad::Var> rot_world(jn), pos_world(jn), rest_rows(jn), blend_rows(jn);
  for (std::size_t j = 0; j < jn; ++j) {
    rest_rows[j] = ad::rows(rest_joints, j, 1);
    const int slot = t.rotation_slot[j];
    std::optional<ad::Var> local;
    if (slot >= 0) local = ad::rodrigues(ad::rows(pose, static_cast<std::size_t>(slot), 1));
    if (t.parents[j] < 0) {
      rot_world[j] = *local;
      pos_world[j] = translation ? ad::add(rest_rows[j], ad::reshape(*translation, {1, 3})) : rest_rows[j];
    } else {
      const auto p = static_cast<std::size_t>(t.parents[j]);
      rot_world[j] = local ? ad::matmul(rot_world[p], *local) : rot_world[p];
      // Row-vector convention: p_j = (rest_j - rest_parent) R_parent^T + p_parent.
      pos_world[j] = ad::add(ad::matmul_nt(ad::sub(rest_rows[j], rest_rows[p]), rot_world[p]), pos_world[p]);
    }
    // Skinning transform maps a rest point x to R_j x + (p_j - R_j rest_j).
    const ad::Var offset = ad::sub(pos_world[j], ad::matmul_nt(rest_rows[j], rot_world[j]));
    blend_rows[j] = ad::concat_last(ad::reshape(rot_world[j], {1, 9}), offset);
  }
  const ad::Var transforms = ad::matmul(tape.parameter(t.skin_weights, false), ad::concat_rows(blend_rows));
  return {ad::transform_points(transforms, shaped), ad::concat_rows(pos_world)};
}

PosedHand forward_kinematics(const HandTemplate& t, const Tensor& theta, const Tensor& beta,
                             const std::optional<Tensor>& translation) {
  ad::Tape tape;
  std::optional<ad::Var> tr;
  if (translation) tr = tape.constant(*translation);
  const PosedHandVars out = forward_kinematics(t, tape.constant(theta), tape.constant(beta), tr);
  return {out.vertices.value(), out.joints.value()};
}

}  // namespace handocc::hand
