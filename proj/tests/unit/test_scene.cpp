#include <cmath>
#include <numbers>

#include "doctest.h"
#include "sport/error.hpp"
#include "sport/scene.hpp"

using namespace sport;
using namespace sport::scene;
using geometry::RotationMatrix;

namespace {

OrientedBox box_at(Vec3 c, Vec3 h = {0.05, 0.05, 0.05}, double yaw = 0.0) {
  return {c, h, RotationMatrix::about_z(yaw)};
}

bool contains1(Relation r, const OrientedBox& ref, Vec3 q, double delta = kDefaultDelta) {
  const std::array<OrientedBox, 1> refs{ref};
  return relation_region_contains(r, refs, q, delta);
}

}  // namespace

TEST_CASE("relation_region_contains examples") {
  const OrientedBox ref = box_at({0, 0, 0});
  CHECK(contains1(Relation::Left, ref, {-1, 0, 0}));
  // |y|/r = 1/sqrt(2) ~ 0.707 >= 0.4.
  CHECK_FALSE(contains1(Relation::Left, ref, {-1, 1, 0}));
  CHECK_FALSE(contains1(Relation::Left, ref, {1, 0, 0}));
  CHECK(contains1(Relation::Right, ref, {1, 0, 0}));
  CHECK(contains1(Relation::Front, ref, {0, -1, 0}));
  CHECK(contains1(Relation::Behind, ref, {0, 1, 0}));
  CHECK_THROWS_AS(contains1(Relation::Left, ref, {0, 0, 0.3}), ZeroDistance);
  const std::array<OrientedBox, 1> one{ref};
  CHECK_THROWS_AS(relation_region_contains(Relation::Between, one, {0, 0, 0}), std::invalid_argument);
}

TEST_CASE("cone boundaries evaluated directly") {
  const OrientedBox ref = box_at({0, 0, 0});
  // x/r < -delta and |y|/r < delta, checked on both sides of each boundary.
  for (double angle_deg = 0; angle_deg < 360; angle_deg += 0.5) {
    const double a = angle_deg * std::numbers::pi / 180;
    const Vec3 q{0.2 * std::cos(a), 0.2 * std::sin(a), 0};
    const double cx = std::cos(a), sy = std::abs(std::sin(a));
    CHECK(contains1(Relation::Left, ref, q) == (cx < -0.4 && sy < 0.4));
    CHECK(contains1(Relation::Right, ref, q) == (cx > 0.4 && sy < 0.4));
  }
}

TEST_CASE("on-top-of region") {
  const OrientedBox cube = box_at({0.1, 0.1, 0.05});
  CHECK(contains1(Relation::OnTopOf, cube, {0.1, 0.1, 0.1}));
  CHECK(contains1(Relation::OnTopOf, cube, {0.14, 0.06, 0.11}));
  CHECK_FALSE(contains1(Relation::OnTopOf, cube, {0.16, 0.1, 0.1}));
  CHECK_FALSE(contains1(Relation::OnTopOf, cube, {0.1, 0.1, 0.125}));
  CHECK_FALSE(contains1(Relation::OnTopOf, cube, {0.1, 0.1, 0.09}));
}

TEST_CASE("between region") {
  const std::array<OrientedBox, 2> refs{box_at({-0.2, 0, 0.05}), box_at({0.2, 0, 0.05})};
  CHECK(relation_region_contains(Relation::Between, refs, {0, 0, 0}));
  CHECK(relation_region_contains(Relation::Between, refs, {0.15, 0, 0}));
  CHECK_FALSE(relation_region_contains(Relation::Between, refs, {0.17, 0, 0}));
  CHECK_FALSE(relation_region_contains(Relation::Between, refs, {0, 0.2, 0}));
}

TEST_CASE("mirror symmetry and frame covariance") {
  Rng rng(4);
  for (int i = 0; i < 5000; ++i) {
    const Vec3 q{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(0, 0.2)};
    if (std::hypot(q.x, q.y) < 1e-9) continue;
    const OrientedBox ref = box_at({0, 0, 0});
    REQUIRE(contains1(Relation::Left, ref, q) == contains1(Relation::Right, ref, {-q.x, q.y, q.z}));
    REQUIRE(contains1(Relation::Front, ref, q) == contains1(Relation::Behind, ref, {q.x, -q.y, q.z}));

    const double theta = rng.uniform(-3, 3);
    const auto rot = RotationMatrix::about_z(theta);
    const OrientedBox turned = box_at({0, 0, 0}, {0.05, 0.05, 0.05}, theta);
    const Vec3 rq = rot * q;
    for (Relation r : {Relation::Left, Relation::Right, Relation::Front, Relation::Behind})
      REQUIRE(contains1(r, ref, q) == contains1(r, turned, rq));
  }
}

TEST_CASE("relation_region_sample soundness") {
  Rng rng(8);
  const OrientedBox ref = box_at({0, 0, 0.05}, {0.05, 0.05, 0.05}, 0.3);
  for (Relation r : {Relation::Left, Relation::Right, Relation::Front, Relation::Behind, Relation::OnTopOf}) {
    RegionSampleRequest req;
    req.relation = r;
    req.refs = {ref};
    for (int i = 0; i < 1000; ++i) {
      const Vec3 p = relation_region_sample(req, rng);
      REQUIRE(contains1(r, ref, p));
      const double d = std::hypot(p.x, p.y);
      if (r != Relation::OnTopOf) REQUIRE((d >= 0.1 && d <= 0.3));
    }
  }
  RegionSampleRequest between;
  between.relation = Relation::Between;
  between.refs = {box_at({-0.2, 0.1, 0.05}), box_at({0.2, -0.1, 0.05})};
  for (int i = 0; i < 1000; ++i) REQUIRE(relation_region_contains(Relation::Between, between.refs, relation_region_sample(between, rng)));
}

TEST_CASE("on-top-of samples stay over a 10 cm cube") {
  Rng rng(2);
  RegionSampleRequest req;
  req.relation = Relation::OnTopOf;
  req.refs = {box_at({0.2, -0.1, 0.05})};
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p = relation_region_sample(req, rng);
    REQUIRE(std::abs(p.x - 0.2) <= 0.05);
    REQUIRE(std::abs(p.y + 0.1) <= 0.05);
    REQUIRE(p.z == doctest::Approx(0.1));
  }
}

TEST_CASE("relation_region_sample failure modes") {
  Rng rng(1);
  RegionSampleRequest coincident;
  coincident.relation = Relation::Between;
  coincident.refs = {box_at({0.1, 0.1, 0.05}), box_at({0.1, 0.1, 0.05})};
  coincident.max_attempts = 200;
  CHECK_THROWS_AS(relation_region_sample(coincident, rng), RegionSamplingExhausted);

  RegionSampleRequest outside;
  outside.relation = Relation::Left;
  outside.refs = {box_at({-0.48, 0, 0.05})};
  outside.workspace = Workspace{};
  outside.max_attempts = 500;
  CHECK_THROWS_AS(relation_region_sample(outside, rng), RegionSamplingExhausted);

  RegionSampleRequest bad;
  bad.refs = {box_at({0, 0, 0})};
  bad.r_min = 0.3;
  bad.r_max = 0.1;
  CHECK_THROWS_AS(relation_region_sample(bad, rng), std::invalid_argument);
}

TEST_CASE("classify_pose examples") {
  const std::array<OrientedBox, 1> ref{box_at({0, 0, 0.05})};
  CHECK(classify_pose(box_at({-0.2, 0, 0.05}), ref) == std::vector<Relation>{Relation::Left});
  CHECK(classify_pose(box_at({0, 0, 0.15}), ref) == std::vector<Relation>{Relation::OnTopOf});
  CHECK(classify_pose(box_at({0.7, 0.7, 0.05}), ref).empty());
  const std::array<OrientedBox, 2> two{box_at({-0.2, 0, 0.05}), box_at({0.2, 0, 0.05})};
  CHECK(classify_pose(box_at({0, 0.02, 0.05}), two) == std::vector<Relation>{Relation::Between});
}

TEST_CASE("relation and role names round trip") {
  for (Relation r : kAllRelations) CHECK(relation_from_string(to_string(r)) == r);
  CHECK(relation_from_string("ON_TOP_OF") == Relation::OnTopOf);
  CHECK_FALSE(relation_from_string("under").has_value());
  for (Role r : {Role::Movable, Role::Reference, Role::Irrelevant}) CHECK(role_from_string(to_string(r)) == r);
  CHECK(reference_count(Relation::Between) == 2);
  CHECK(reference_count(Relation::Left) == 1);
}

TEST_CASE("descriptors use the nearest palette color") {
  ObjectModel m{"box_00", "box", {0.05, 0.04, 0.03}, {0.84, 0.16, 0.14}};
  CHECK(descriptor(m) == "red box");
  for (const auto& c : palette()) CHECK(color_name(c.rgb) == c.name);
}

TEST_CASE("scene JSON round trip is exact") {
  Scene s;
  s.objects.push_back({{"box_00", "box", {0.06, 0.05, 0.04}, {0.85, 0.15, 0.15}},
                       {{0.1, -0.2, 0.04}, RotationMatrix::about_z(0.123456789)},
                       Role::Movable});
  s.objects.push_back({{"mug_01", "mug", {0.05, 0.04, 0.045}, {0.15, 0.3, 0.85}},
                       {{-0.1, 0.05, 0.045}, RotationMatrix::about_z(-2.5)},
                       Role::Reference});
  const auto j = to_json(s);
  CHECK(scene_from_json(j) == s);
  CHECK(scene_from_json(nlohmann::json::parse(j.dump())) == s);
  // Keys are emitted in sorted order.
  const std::string text = j.dump();
  CHECK(text.find("\"camera\"") < text.find("\"objects\""));
  CHECK(text.find("\"objects\"") < text.find("\"workspace\""));

  auto bad = j;
  bad["objects"][0]["pose"]["rotation"][0] = 2.0;
  CHECK_THROWS_AS(scene_from_json(bad), FormatError);
  auto one = j;
  one["objects"].erase(1);
  CHECK_THROWS_AS(scene_from_json(one), FormatError);
}

TEST_CASE("default camera sees the table from the front") {
  const Workspace ws;
  const auto cam = default_camera(ws);
  CHECK(cam.position().y < ws.y_min);
  const auto center = cam.project({0, 0, 0});
  REQUIRE(center.has_value());
  CHECK(center->u == doctest::Approx(64));
  CHECK(center->v == doctest::Approx(64));
  // Camera +x is world +x; the table's left side appears on the image's left.
  CHECK(cam.project({-0.3, 0, 0})->u < 64);
}
