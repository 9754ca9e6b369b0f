#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace sport::geometry {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3() = default;
  constexpr Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }

  bool operator==(const Vec3&) const = default;
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline bool is_finite(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

/// Plain 3x3 matrix, row-major.
struct Mat3 {
  std::array<double, 9> m{};

  static Mat3 identity() { return Mat3{{1, 0, 0, 0, 1, 0, 0, 0, 1}}; }
  static Mat3 from_columns(const Vec3& c0, const Vec3& c1, const Vec3& c2) {
    return Mat3{{c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z}};
  }

  double operator()(int r, int c) const { return m[static_cast<std::size_t>(3 * r + c)]; }
  double& operator()(int r, int c) { return m[static_cast<std::size_t>(3 * r + c)]; }
  Vec3 column(int c) const { return {(*this)(0, c), (*this)(1, c), (*this)(2, c)}; }
  Vec3 row(int r) const { return {(*this)(r, 0), (*this)(r, 1), (*this)(r, 2)}; }

  Vec3 operator*(const Vec3& v) const { return {dot(row(0), v), dot(row(1), v), dot(row(2), v)}; }
  Mat3 operator*(const Mat3& o) const;
  Mat3 transposed() const;
  double determinant() const;

  bool operator==(const Mat3&) const = default;
};

/// Element of SO(3). Construction paths either build an exact rotation or
/// validate orthonormality (1e-6) and det = +1.
class RotationMatrix {
 public:
  RotationMatrix() : m_(Mat3::identity()) {}

  static RotationMatrix identity() { return {}; }
  static RotationMatrix about_z(double angle);
  static RotationMatrix axis_angle(const Vec3& axis, double angle);
  /// Throws DegenerateRotation if `m` is not a rotation within `tolerance`.
  static RotationMatrix from_matrix(const Mat3& m, double tolerance = 1e-6);

  const Mat3& matrix() const { return m_; }
  Vec3 column(int c) const { return m_.column(c); }
  double operator()(int r, int c) const { return m_(r, c); }

  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  RotationMatrix operator*(const RotationMatrix& o) const { return RotationMatrix(m_ * o.m_); }
  RotationMatrix transposed() const { return RotationMatrix(m_.transposed()); }

  /// Largest deviation of RᵀR from I and of det(R) from 1.
  double orthonormality_error() const;

  bool operator==(const RotationMatrix&) const = default;

 private:
  explicit RotationMatrix(const Mat3& m) : m_(m) {}
  Mat3 m_;
};

/// Columns (â, normalize(b - (b·â)â), cross) from two non-parallel vectors.
/// Throws DegenerateRotation if |a| <= 1e-8 or sin(a, b) <= 1e-6.
RotationMatrix rotation_from_vectors(const Vec3& a, const Vec3& b);

/// Rigid transform p -> R p + s.
struct Pose {
  Vec3 translation;
  RotationMatrix rotation;

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Vec3 apply_inverse(const Vec3& p) const { return rotation.transposed() * (p - translation); }
  Pose inverse() const;
  Pose operator*(const Pose& o) const { return {apply(o.translation), rotation * o.rotation}; }

  bool operator==(const Pose&) const = default;
};

struct PointCloud {
  std::vector<Vec3> points;
  /// Either empty or one RGB triple in [0,1] per point.
  std::vector<Vec3> colors;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_colors() const { return !colors.empty(); }

  bool operator==(const PointCloud&) const = default;
};

struct OrientedBox {
  Vec3 center;
  Vec3 half_extents{0.5, 0.5, 0.5};
  RotationMatrix rotation;

  Vec3 axis(int i) const { return rotation.column(i); }
  std::array<Vec3, 8> corners() const;
  bool contains(const Vec3& p, double slack = 0.0) const;
  double volume() const { return 8.0 * half_extents.x * half_extents.y * half_extents.z; }
  /// The box with `pose` applied on top of its current placement.
  OrientedBox transformed(const Pose& pose) const;
  double min_z() const;
  double max_z() const;

  bool operator==(const OrientedBox&) const = default;
};

/// Pinhole camera. The pose maps camera coordinates to world coordinates;
/// the camera looks along its +z axis with +x right and +y down.
struct CameraPose {
  Pose pose;
  double focal = 90.0;
  int width = 128;
  int height = 128;

  static CameraPose look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                            int width, int height);

  Vec3 position() const { return pose.translation; }
  /// Pixel coordinates (u, v) and depth along the optical axis.
  struct Projection {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;
  };
  /// Empty when the point is behind the camera.
  std::optional<Projection> project(const Vec3& world) const;
  /// World-space ray direction through pixel (u, v); its camera-frame z is 1,
  /// so the ray parameter equals depth.
  Vec3 ray_direction(double u, double v) const;

  bool operator==(const CameraPose&) const = default;
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  /// Counter-clockwise when seen from outside.
  std::vector<std::array<int, 3>> triangles;
};

/// Object-frame geometry used for view synthesis.
using GeometryProxy = std::variant<OrientedBox, TriangleMesh>;

PointCloud transform_cloud(const PointCloud& cloud, const Pose& pose);

struct SurfaceSample {
  Vec3 point;
  Vec3 normal;
};

/// Area-weighted uniform samples on the proxy surface, in world frame.
std::vector<SurfaceSample> sample_surface(const GeometryProxy& proxy, const Pose& pose,
                                          std::size_t count, std::uint64_t seed);

/// Entry depth of a ray into a box (slab test); empty on a miss or if the hit
/// lies behind the origin.
std::optional<double> ray_box_entry(const Vec3& origin, const Vec3& dir, const OrientedBox& box);
std::optional<double> ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a,
                                   const Vec3& b, const Vec3& c);

struct ViewConfig {
  std::size_t samples = 2048;
  std::uint64_t seed = 0;
};

/// Surface points of one object visible from the camera. Visibility uses a
/// depth buffer on the camera's pixel grid (ray cast at pixel centres over the
/// object and the occluders) plus a front-facing test. Throws NoVisiblePoints.
PointCloud partial_view(const GeometryProxy& proxy, const Pose& object_pose,
                        const CameraPose& camera, const ViewConfig& config,
                        std::span<const OrientedBox> occluders = {});

/// Depth tolerance used when comparing a surface sample against the buffer.
double visibility_tolerance(double depth, double focal, double cos_incidence);

/// Exactly n points chosen by farthest-point sampling. The starting point and
/// tie-breaks depend on point values and the seed only, never on input order.
/// If n >= |cloud| the cloud is returned in canonical order, cyclically padded.
PointCloud farthest_point_sample(const PointCloud& cloud, std::size_t n, std::uint64_t seed);

/// Tight-ish box around the cloud: the smallest of the PCA frame, an upright
/// frame from the minimum-area footprint rectangle, and the axis-aligned box.
OrientedBox obb_from_cloud(const PointCloud& cloud);

inline constexpr double kMinHalfExtent = 1e-4;

// SPCD point-cloud files.
void write_spcd(const PointCloud& cloud, std::ostream& out);
PointCloud read_spcd(std::istream& in);
void write_spcd_file(const PointCloud& cloud, const std::string& path);
PointCloud read_spcd_file(const std::string& path);

}  // namespace sport::geometry
