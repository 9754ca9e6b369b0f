#include "sport/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "sport/error.hpp"
#include "sport/polygon.hpp"
#include "sport/rng.hpp"

namespace sport::geometry {

// ---------------------------------------------------------------------------
// Mat3 / RotationMatrix

Mat3 Mat3::operator*(const Mat3& o) const {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      r(i, j) = (*this)(i, 0) * o(0, j) + (*this)(i, 1) * o(1, j) + (*this)(i, 2) * o(2, j);
  return r;
}

Mat3 Mat3::transposed() const {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
  return r;
}

double Mat3::determinant() const {
  return dot(column(0), cross(column(1), column(2)));
}

RotationMatrix RotationMatrix::about_z(double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return RotationMatrix(Mat3{{c, -s, 0, s, c, 0, 0, 0, 1}});
}

RotationMatrix RotationMatrix::axis_angle(const Vec3& axis, double angle) {
  const double n = norm(axis);
  if (n <= 1e-12) return identity();
  const Vec3 k = axis / n;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double t = 1.0 - c;
  return RotationMatrix(Mat3{{t * k.x * k.x + c, t * k.x * k.y - s * k.z, t * k.x * k.z + s * k.y,
                              t * k.x * k.y + s * k.z, t * k.y * k.y + c, t * k.y * k.z - s * k.x,
                              t * k.x * k.z - s * k.y, t * k.y * k.z + s * k.x, t * k.z * k.z + c}});
}

RotationMatrix RotationMatrix::from_matrix(const Mat3& m, double tolerance) {
  RotationMatrix r(m);
  if (!(r.orthonormality_error() <= tolerance))
    throw DegenerateRotation("matrix is not a proper rotation");
  return r;
}

double RotationMatrix::orthonormality_error() const {
  const Mat3 g = m_.transposed() * m_;
  double err = std::abs(m_.determinant() - 1.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) err = std::max(err, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
  return err;
}

RotationMatrix rotation_from_vectors(const Vec3& a, const Vec3& b) {
  if (!is_finite(a) || !is_finite(b)) throw DegenerateRotation("non-finite rotation vectors");
  const double na = norm(a);
  if (!(na > 1e-8)) throw DegenerateRotation("first rotation vector has near-zero length");
  const Vec3 ah = a / na;
  const double nb = norm(b);
  if (!(nb > 0.0) || !(norm(cross(ah, b)) / nb > 1e-6))
    throw DegenerateRotation("rotation vectors are parallel");
  const Vec3 bp = b - dot(b, ah) * ah;
  const Vec3 bh = bp / norm(bp);
  return RotationMatrix::from_matrix(Mat3::from_columns(ah, bh, cross(ah, bh)));
}

Pose Pose::inverse() const {
  const RotationMatrix rt = rotation.transposed();
  return {-(rt * translation), rt};
}

// ---------------------------------------------------------------------------
// OrientedBox

std::array<Vec3, 8> OrientedBox::corners() const {
  std::array<Vec3, 8> out;
  for (int i = 0; i < 8; ++i) {
    const Vec3 local{(i & 1) ? half_extents.x : -half_extents.x,
                     (i & 2) ? half_extents.y : -half_extents.y,
                     (i & 4) ? half_extents.z : -half_extents.z};
    out[static_cast<std::size_t>(i)] = center + rotation * local;
  }
  return out;
}

bool OrientedBox::contains(const Vec3& p, double slack) const {
  const Vec3 local = rotation.transposed() * (p - center);
  return std::abs(local.x) <= half_extents.x + slack && std::abs(local.y) <= half_extents.y + slack &&
         std::abs(local.z) <= half_extents.z + slack;
}

OrientedBox OrientedBox::transformed(const Pose& pose) const {
  return {pose.apply(center), half_extents, pose.rotation * rotation};
}

double OrientedBox::min_z() const {
  // Extent of the box along world z.
  const Mat3& r = rotation.matrix();
  const double ext =
      std::abs(r(2, 0)) * half_extents.x + std::abs(r(2, 1)) * half_extents.y + std::abs(r(2, 2)) * half_extents.z;
  return center.z - ext;
}

double OrientedBox::max_z() const {
  const Mat3& r = rotation.matrix();
  const double ext =
      std::abs(r(2, 0)) * half_extents.x + std::abs(r(2, 1)) * half_extents.y + std::abs(r(2, 2)) * half_extents.z;
  return center.z + ext;
}

// ---------------------------------------------------------------------------
// Camera

CameraPose CameraPose::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                               int width, int height) {
  const Vec3 forward = (target - eye) / norm(target - eye);
  Vec3 right = cross(forward, up);
  right = right / norm(right);
  const Vec3 down = cross(forward, right);
  CameraPose cam;
  cam.pose = {eye, RotationMatrix::from_matrix(Mat3::from_columns(right, down, forward))};
  cam.focal = focal;
  cam.width = width;
  cam.height = height;
  return cam;
}

std::optional<CameraPose::Projection> CameraPose::project(const Vec3& world) const {
  const Vec3 pc = pose.apply_inverse(world);
  if (!(pc.z > 1e-9)) return std::nullopt;
  return Projection{focal * pc.x / pc.z + 0.5 * width, focal * pc.y / pc.z + 0.5 * height, pc.z};
}

Vec3 CameraPose::ray_direction(double u, double v) const {
  const Vec3 dc{(u - 0.5 * width) / focal, (v - 0.5 * height) / focal, 1.0};
  return pose.rotation * dc;
}

// ---------------------------------------------------------------------------
// Clouds

PointCloud transform_cloud(const PointCloud& cloud, const Pose& pose) {
  if (cloud.empty()) throw EmptyCloud("transform_cloud: empty cloud");
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(pose.apply(p));
  out.colors = cloud.colors;
  return out;
}

namespace {

struct WorldTriangle {
  Vec3 a, b, c, normal;
  double area;
};

std::vector<WorldTriangle> world_triangles(const TriangleMesh& mesh, const Pose& pose) {
  std::vector<WorldTriangle> tris;
  tris.reserve(mesh.triangles.size());
  for (const auto& t : mesh.triangles) {
    const Vec3 a = pose.apply(mesh.vertices.at(static_cast<std::size_t>(t[0])));
    const Vec3 b = pose.apply(mesh.vertices.at(static_cast<std::size_t>(t[1])));
    const Vec3 c = pose.apply(mesh.vertices.at(static_cast<std::size_t>(t[2])));
    const Vec3 n = cross(b - a, c - a);
    const double len = norm(n);
    tris.push_back({a, b, c, len > 0 ? n / len : Vec3{}, 0.5 * len});
  }
  return tris;
}

}  // namespace

std::vector<SurfaceSample> sample_surface(const GeometryProxy& proxy, const Pose& pose,
                                          std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SurfaceSample> out;
  out.reserve(count);
  if (const auto* box_local = std::get_if<OrientedBox>(&proxy)) {
    const OrientedBox box = box_local->transformed(pose);
    const Vec3& h = box.half_extents;
    // Faces in order (+x, -x, +y, -y, +z, -z).
    const std::array<double, 3> face_area{4 * h.y * h.z, 4 * h.x * h.z, 4 * h.x * h.y};
    const double total = 2 * (face_area[0] + face_area[1] + face_area[2]);
    for (std::size_t i = 0; i < count; ++i) {
      double pick = rng.uniform() * total;
      int face = 0;
      while (face < 5 && pick >= face_area[static_cast<std::size_t>(face / 2)]) {
        pick -= face_area[static_cast<std::size_t>(face / 2)];
        ++face;
      }
      const int axis = face / 2;
      const double sign = (face % 2 == 0) ? 1.0 : -1.0;
      Vec3 local;
      for (int k = 0; k < 3; ++k) local[k] = (k == axis) ? sign * h[k] : rng.uniform(-h[k], h[k]);
      Vec3 n_local;
      n_local[axis] = sign;
      out.push_back({box.center + box.rotation * local, box.rotation * n_local});
    }
    return out;
  }
  const auto tris = world_triangles(std::get<TriangleMesh>(proxy), pose);
  double total = 0;
  for (const auto& t : tris) total += t.area;
  if (tris.empty() || !(total > 0)) return out;
  for (std::size_t i = 0; i < count; ++i) {
    double pick = rng.uniform() * total;
    std::size_t k = 0;
    while (k + 1 < tris.size() && pick >= tris[k].area) {
      pick -= tris[k].area;
      ++k;
    }
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    const auto& t = tris[k];
    const Vec3 p = (1 - r1) * t.a + r1 * (1 - r2) * t.b + r1 * r2 * t.c;
    out.push_back({p, t.normal});
  }
  return out;
}

std::optional<double> ray_box_entry(const Vec3& origin, const Vec3& dir, const OrientedBox& box) {
  const Vec3 o = box.rotation.transposed() * (origin - box.center);
  const Vec3 d = box.rotation.transposed() * dir;
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    const double h = box.half_extents[k];
    if (std::abs(d[k]) < 1e-300) {
      if (o[k] < -h || o[k] > h) return std::nullopt;
      continue;
    }
    double t0 = (-h - o[k]) / d[k];
    double t1 = (h - o[k]) / d[k];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return std::nullopt;
  }
  // Origin inside the box: the box does not occlude anything in front.
  if (t_near <= 0) return std::nullopt;
  return t_near;
}

std::optional<double> ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a,
                                   const Vec3& b, const Vec3& c) {
  // Moller-Trumbore, two-sided.
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 p = cross(dir, e2);
  const double det = dot(e1, p);
  if (std::abs(det) < 1e-14) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = origin - a;
  const double u = dot(s, p) * inv;
  if (u < 0 || u > 1) return std::nullopt;
  const Vec3 q = cross(s, e1);
  const double v = dot(dir, q) * inv;
  if (v < 0 || u + v > 1) return std::nullopt;
  const double t = dot(e2, q) * inv;
  if (t <= 0) return std::nullopt;
  return t;
}

double visibility_tolerance(double depth, double focal, double cos_incidence) {
  // One pixel of lateral travel on a slanted surface changes depth by
  // (depth / focal) * tan(incidence).
  const double c = std::clamp(cos_incidence, 0.05, 1.0);
  const double tan_inc = std::sqrt(1.0 - c * c) / c;
  return 1e-6 + depth / focal * tan_inc;
}

namespace {

/// Pixel rectangle covered by the projection of a point set, or the whole image
/// if any point is behind the camera.
struct PixelRect {
  int x0, y0, x1, y1;  // inclusive-exclusive
};

template <typename Points>
PixelRect projected_rect(const CameraPose& camera, const Points& pts) {
  double u0 = std::numeric_limits<double>::infinity(), v0 = u0;
  double u1 = -u0, v1 = -u0;
  for (const auto& p : pts) {
    const auto proj = camera.project(p);
    if (!proj) return {0, 0, camera.width, camera.height};
    u0 = std::min(u0, proj->u);
    v0 = std::min(v0, proj->v);
    u1 = std::max(u1, proj->u);
    v1 = std::max(v1, proj->v);
  }
  auto clampi = [](double x, int lo, int hi) {
    return static_cast<int>(std::clamp(x, static_cast<double>(lo), static_cast<double>(hi)));
  };
  return {clampi(std::floor(u0), 0, camera.width), clampi(std::floor(v0), 0, camera.height),
          clampi(std::floor(u1) + 1, 0, camera.width), clampi(std::floor(v1) + 1, 0, camera.height)};
}

void rasterize_box(const CameraPose& camera, const OrientedBox& box, std::vector<double>& depth) {
  const auto rect = projected_rect(camera, box.corners());
  const Vec3 eye = camera.position();
  for (int py = rect.y0; py < rect.y1; ++py)
    for (int px = rect.x0; px < rect.x1; ++px) {
      const auto t = ray_box_entry(eye, camera.ray_direction(px + 0.5, py + 0.5), box);
      double& d = depth[static_cast<std::size_t>(py * camera.width + px)];
      if (t && *t < d) d = *t;
    }
}

void rasterize_triangle(const CameraPose& camera, const WorldTriangle& tri, std::vector<double>& depth) {
  const std::array<Vec3, 3> pts{tri.a, tri.b, tri.c};
  const auto rect = projected_rect(camera, pts);
  const Vec3 eye = camera.position();
  for (int py = rect.y0; py < rect.y1; ++py)
    for (int px = rect.x0; px < rect.x1; ++px) {
      const auto t = ray_triangle(eye, camera.ray_direction(px + 0.5, py + 0.5), tri.a, tri.b, tri.c);
      double& d = depth[static_cast<std::size_t>(py * camera.width + px)];
      if (t && *t < d) d = *t;
    }
}

}  // namespace

PointCloud partial_view(const GeometryProxy& proxy, const Pose& object_pose,
                        const CameraPose& camera, const ViewConfig& config,
                        std::span<const OrientedBox> occluders) {
  const auto w = static_cast<std::size_t>(camera.width);
  const auto h = static_cast<std::size_t>(camera.height);
  std::vector<double> depth(w * h, std::numeric_limits<double>::infinity());
  for (const auto& box : occluders) rasterize_box(camera, box, depth);
  if (const auto* box_local = std::get_if<OrientedBox>(&proxy)) {
    rasterize_box(camera, box_local->transformed(object_pose), depth);
  } else {
    for (const auto& tri : world_triangles(std::get<TriangleMesh>(proxy), object_pose))
      rasterize_triangle(camera, tri, depth);
  }

  const Vec3 eye = camera.position();
  PointCloud out;
  for (const auto& s : sample_surface(proxy, object_pose, config.samples, config.seed)) {
    const auto proj = camera.project(s.point);
    if (!proj) continue;
    const double fu = std::floor(proj->u);
    const double fv = std::floor(proj->v);
    if (fu < 0 || fv < 0 || fu >= camera.width || fv >= camera.height) continue;
    const Vec3 to_eye = eye - s.point;
    const double cos_inc = dot(s.normal, to_eye) / norm(to_eye);
    if (!(cos_inc > 0)) continue;
    const double buffered = depth[static_cast<std::size_t>(fv) * w + static_cast<std::size_t>(fu)];
    if (proj->depth <= buffered + visibility_tolerance(proj->depth, camera.focal, cos_inc))
      out.points.push_back(s.point);
  }
  if (out.empty()) throw NoVisiblePoints("object is not visible from the camera");
  return out;
}

// ---------------------------------------------------------------------------
// Farthest point sampling

namespace {

bool lex_less(const PointCloud& c, std::size_t i, std::size_t j) {
  const auto key = [&](std::size_t k) {
    const Vec3& p = c.points[k];
    const Vec3 col = c.has_colors() ? c.colors[k] : Vec3{};
    return std::array<double, 6>{p.x, p.y, p.z, col.x, col.y, col.z};
  };
  return key(i) < key(j);
}

double dist2(const Vec3& a, const Vec3& b) {
  const Vec3 d = a - b;
  return dot(d, d);
}

}  // namespace

PointCloud farthest_point_sample(const PointCloud& cloud, std::size_t n, std::uint64_t seed) {
  if (cloud.empty()) throw EmptyCloud("farthest_point_sample: empty cloud");
  if (n == 0) throw Error("farthest_point_sample: n must be at least 1");
  std::vector<std::size_t> order(cloud.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lex_less(cloud, a, b); });

  std::vector<std::size_t> picked;
  picked.reserve(n);
  if (n >= cloud.size()) {
    for (std::size_t i = 0; i < n; ++i) picked.push_back(order[i % order.size()]);
  } else {
    Rng rng(seed);
    Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
    std::size_t start = order[0];
    double best = dot(cloud.points[start], dir);
    for (std::size_t idx : order) {
      const double s = dot(cloud.points[idx], dir);
      if (s < best) {
        best = s;
        start = idx;
      }
    }
    std::vector<double> d(cloud.size(), std::numeric_limits<double>::infinity());
    std::size_t current = start;
    for (std::size_t k = 0; k < n; ++k) {
      picked.push_back(current);
      d[current] = -1.0;
      std::size_t next = current;
      double far = -std::numeric_limits<double>::infinity();
      for (std::size_t idx : order) {
        if (d[idx] < 0) continue;
        d[idx] = std::min(d[idx], dist2(cloud.points[idx], cloud.points[current]));
        if (d[idx] > far) {
          far = d[idx];
          next = idx;
        }
      }
      current = next;
    }
  }
  PointCloud out;
  out.points.reserve(n);
  for (std::size_t i : picked) out.points.push_back(cloud.points[i]);
  if (cloud.has_colors())
    for (std::size_t i : picked) out.colors.push_back(cloud.colors[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Bounding boxes

namespace {

OrientedBox fit_in_frame(const PointCloud& cloud, const Mat3& frame) {
  Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity()};
  Vec3 hi = -lo;
  const Mat3 ft = frame.transposed();
  for (const auto& p : cloud.points) {
    const Vec3 q = ft * p;
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], q[k]);
      hi[k] = std::max(hi[k], q[k]);
    }
  }
  OrientedBox box;
  box.rotation = RotationMatrix::from_matrix(frame, 1e-9);
  box.center = frame * ((lo + hi) * 0.5);
  for (int k = 0; k < 3; ++k) box.half_extents[k] = std::max(0.5 * (hi[k] - lo[k]), kMinHalfExtent);
  return box;
}

Mat3 upright_min_area_frame(const PointCloud& cloud) {
  std::vector<Vec2> xy;
  xy.reserve(cloud.size());
  for (const auto& p : cloud.points) xy.push_back({p.x, p.y});
  const Polygon hull = convex_hull(std::move(xy));
  double best_area = std::numeric_limits<double>::infinity();
  double best_angle = 0.0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Vec2 e = hull[(i + 1) % hull.size()] - hull[i];
    const double angle = std::atan2(e.y, e.x);
    const double c = std::cos(angle), s = std::sin(angle);
    double u0 = std::numeric_limits<double>::infinity(), u1 = -u0, v0 = u0, v1 = -u0;
    for (const auto& p : hull) {
      const double u = c * p.x + s * p.y;
      const double v = -s * p.x + c * p.y;
      u0 = std::min(u0, u);
      u1 = std::max(u1, u);
      v0 = std::min(v0, v);
      v1 = std::max(v1, v);
    }
    const double area = (u1 - u0) * (v1 - v0);
    if (area < best_area) {
      best_area = area;
      best_angle = angle;
    }
  }
  return RotationMatrix::about_z(best_angle).matrix();
}

}  // namespace

OrientedBox obb_from_cloud(const PointCloud& cloud) {
  if (cloud.empty()) throw EmptyCloud("obb_from_cloud: empty cloud");
  const OrientedBox aabb = fit_in_frame(cloud, Mat3::identity());
  if (cloud.size() < 4) return aabb;

  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : cloud.points) mean += Eigen::Vector3d(p.x, p.y, p.z);
  mean /= static_cast<double>(cloud.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : cloud.points) {
    const Eigen::Vector3d d = Eigen::Vector3d(p.x, p.y, p.z) - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(cloud.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  const Eigen::Vector3d values = eig.eigenvalues();  // ascending
  if (!(values(0) > 1e-12 * std::max(values(2), 1e-300))) return aabb;  // coplanar

  const Eigen::Matrix3d vec = eig.eigenvectors();
  const Vec3 e0{vec(0, 2), vec(1, 2), vec(2, 2)};
  const Vec3 e1{vec(0, 1), vec(1, 1), vec(2, 1)};
  const OrientedBox pca = fit_in_frame(cloud, Mat3::from_columns(e0, e1, cross(e0, e1)));
  const OrientedBox upright = fit_in_frame(cloud, upright_min_area_frame(cloud));

  const OrientedBox* best = &aabb;
  if (upright.volume() < best->volume()) best = &upright;
  if (pca.volume() < best->volume()) best = &pca;
  return *best;
}

}  // namespace sport::geometry
