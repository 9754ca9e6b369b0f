#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "sport/encoder.hpp"
#include "sport/error.hpp"

using namespace sport;
using namespace sport::encoder;
using geometry::PointCloud;
using geometry::RotationMatrix;
using geometry::Vec3;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.model_dim = 16;
  c.blocks = 1;
  c.heads = 2;
  c.ffn_mult = 2;
  c.cloud_dim = 8;
  c.cloud_blocks = 2;
  c.cloud_heads = 2;
  c.cloud_points = 6;
  c.max_text_tokens = 32;
  return c;
}

PointCloud box_cloud(Vec3 center, Rng& rng, int n = 20) {
  PointCloud c;
  for (int i = 0; i < n; ++i)
    c.points.push_back(center + Vec3{rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03)});
  return c;
}

scene::Scene four_objects() {
  scene::Scene s;
  const std::array<Vec3, 4> centers{Vec3{-0.2, 0, 0.03}, Vec3{0.1, 0.1, 0.03}, Vec3{0.2, -0.1, 0.03}, Vec3{0, 0.2, 0.03}};
  for (int i = 0; i < 4; ++i)
    s.objects.push_back({{"box_0" + std::to_string(i), "box", {0.03, 0.03, 0.03}, {0.5, 0.5, 0.5}},
                         {centers[static_cast<std::size_t>(i)], RotationMatrix::about_z(0.1 * i)},
                         scene::Role::Irrelevant});
  return s;
}

struct Fixture {
  ModelConfig config = tiny_config();
  ParameterStore store;
  HashTextEncoder text{16, 3};
  scene::Scene scene = four_objects();
  std::vector<PointCloud> clouds;

  Fixture() {
    Rng rng(1);
    init_encoder(store, config, rng);
    for (const auto& o : scene.objects) clouds.push_back(box_cloud(o.pose.translation, rng));
  }

  Conditioning cond(std::size_t movable, std::vector<std::size_t> refs, const std::string& instr = "put the box left of it") const {
    return make_conditioning(text.encode(instr), scene, clouds, movable, refs, config, {}, 5);
  }

  Mat tokens(const Conditioning& c, int t, const Mat& x) const {
    Graph g(false);
    const std::array<const Conditioning*, 1> batch{&c};
    const auto enc = encode_conditioning(g, store, config, batch);
    const std::array<int, 1> ts{t};
    return g.value(assemble_tokens(g, store, config, batch, enc, g.constant(x), ts).embeddings);
  }
};

Mat one_row(std::initializer_list<double> v) {
  Mat m(1, static_cast<Eigen::Index>(v.size()));
  int i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

}  // namespace

TEST_CASE("text encoding examples") {
  HashTextEncoder enc(16);
  const auto a = enc.encode("put A left of B");
  CHECK(a.count() == 5);
  CHECK(a.embeddings.rows() == 5);
  CHECK(enc.encode("put A left of B").embeddings == a.embeddings);
  CHECK_THROWS_AS(enc.encode(""), EmptyText);
  CHECK_THROWS_AS(enc.encode("  \t "), EmptyText);
  // Token rows depend only on the token.
  const auto b = enc.encode("B of");
  CHECK(b.embeddings.row(0) == a.embeddings.row(4));
  CHECK(b.embeddings.row(1) == a.embeddings.row(3));
  CHECK(HashTextEncoder(16, 9).encode("put").embeddings != enc.encode("put").embeddings);
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("sidecar text encoder") {
  const auto dir = std::filesystem::temp_directory_path() / "sport_sidecar_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "vec.jsonl").string();
  {
    std::ofstream out(path);
    out << R"({"token": "put", "vector": [1, 2, 3, 4]})" << "\n\n";
    out << R"({"token": "left", "vector": [0.5, 0, 0, -1]})" << "\n";
  }
  SidecarTextEncoder enc(path, 4, 7);
  CHECK(enc.vocabulary_size() == 2);
  const auto e = enc.encode("Put it left");
  CHECK(e.embeddings.row(0) == one_row({1, 2, 3, 4}));
  CHECK(e.embeddings.row(2) == one_row({0.5, 0, 0, -1}));
  CHECK(e.embeddings.row(1) == HashTextEncoder(4, 7).embed_token("it"));
  const auto rebuilt = make_text_encoder(enc.describe(), 4);
  CHECK(rebuilt->encode("Put it left").embeddings == e.embeddings);
  CHECK_THROWS_AS(SidecarTextEncoder(path, 5), FormatError);
  {
    std::ofstream out(path, std::ios::app);
    out << R"({"token": "put", "vector": [1, 2, 3, 4]})" << "\n";
  }
  CHECK_THROWS_AS(SidecarTextEncoder(path, 4), FormatError);
  {
    std::ofstream out(path);
    out << "not json\n";
  }
  CHECK_THROWS_AS(SidecarTextEncoder(path, 4), FormatError);
  CHECK_THROWS_AS(SidecarTextEncoder((dir / "missing.jsonl").string(), 4), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("cloud embedding is invariant to point order") {
  Fixture f;
  Rng rng(4);
  PointCloud cloud = box_cloud({0.1, 0, 0.05}, rng, 40);
  PointCloud shuffled = cloud;
  for (std::size_t i = shuffled.points.size(); i > 1; --i) std::swap(shuffled.points[i - 1], shuffled.points[rng.index(i)]);
  Graph g(false);
  const Mat a = g.value(encode_object_cloud(g, f.store, f.config, g.constant(cloud_input(cloud, 6, 9, {})), 6));
  const Mat b = g.value(encode_object_cloud(g, f.store, f.config, g.constant(cloud_input(shuffled, 6, 9, {})), 6));
  CHECK(a == b);
  PointCloud moved = cloud;
  for (auto& p : moved.points) p.x += 10;
  const Mat c = g.value(encode_object_cloud(g, f.store, f.config, g.constant(cloud_input(moved, 6, 9, {})), 6));
  CHECK(a != c);
  CHECK_THROWS_AS(cloud_input(PointCloud{}, 6, 0, {}), EmptyCloud);
}

TEST_CASE("a repeated point reduces attention to the identity on values") {
  Fixture f;
  const int n = 6;
  const Mat points = one_row({0.2, -0.3, 0.1}).replicate(n, 1);
  Graph g(false);
  const Mat pooled = g.value(encode_object_cloud(g, f.store, f.config, g.constant(points), n));

  // Hand evaluation on one token: with identical keys the attention weights
  // are uniform over identical values, so attention returns the value row.
  auto P = [&](const std::string& name) { return f.store.at(name).value; };
  auto gelu = [](const Mat& m) { return Mat(m.unaryExpr([](double x) { return 0.5 * x * (1 + std::erf(x / std::sqrt(2.0))); })); };
  auto lin = [&](const std::string& name, const Mat& x) { return Mat(x * P(name + ".w") + P(name + ".b")); };
  auto ln = [&](const std::string& name, const Mat& x) {
    const double mu = x.mean();
    const double var = (x.array() - mu).square().mean();
    return Mat(((x.array() - mu) / std::sqrt(var + 1e-9)).matrix().cwiseProduct(P(name + ".g")) + P(name + ".b"));
  };
  Mat h = lin("cloud.in.1", gelu(lin("cloud.in.0", points.topRows(1))));
  const int c = f.config.cloud_width();
  for (int b = 0; b < f.config.cloud_blocks; ++b) {
    const std::string name = "cloud.block" + std::to_string(b);
    const Mat qkv = lin(name + ".qkv", ln(name + ".ln1", h));
    h = h + lin(name + ".proj", qkv.rightCols(c));
    h = h + lin(name + ".ffn.1", gelu(lin(name + ".ffn.0", ln(name + ".ln2", h))));
  }
  CHECK((pooled - h).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pose encoder") {
  Fixture f;
  Rng rng(2);
  // Give the biases values so the zero-input output is not trivially zero.
  for (const char* name : {"pose.mlp.0.b", "pose.mlp.1.b"}) {
    auto& b = f.store.at(name).value;
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.normal();
  }
  Graph g(false);
  const Mat zero_out = g.value(encode_pose(g, f.store, g.constant(Mat::Zero(1, 9))));
  const Mat b0 = f.store.at("pose.mlp.0.b").value;
  Mat hidden = b0.unaryExpr([](double x) { return 0.5 * x * (1 + std::erf(x / std::sqrt(2.0))); });
  const Mat expected = hidden * f.store.at("pose.mlp.1.w").value + f.store.at("pose.mlp.1.b").value;
  CHECK((zero_out - expected).cwiseAbs().maxCoeff() < 1e-12);

  Mat two(2, 9);
  for (Eigen::Index i = 0; i < two.size(); ++i) two.data()[i] = rng.normal();
  const Mat out = g.value(encode_pose(g, f.store, g.constant(two)));
  CHECK(out.row(0) != out.row(1));

  Mat bad = Mat::Zero(1, 9);
  bad(0, 3) = std::nan("");
  CHECK_THROWS_AS(encode_pose(g, f.store, g.constant(bad)), NonFinite);

  // Input gradient against central differences.
  const Mat w = [&] {
    Mat m(2, f.config.model_dim);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
  }();
  Graph rec;
  const Var x = rec.input(two);
  rec.backward(nn::weighted_sum(rec, encode_pose(rec, f.store, x), w));
  const Mat analytic = rec.grad(x);
  for (Eigen::Index i = 0; i < two.size(); ++i) {
    Mat p = two, m = two;
    p.data()[i] += 1e-5;
    m.data()[i] -= 1e-5;
    Graph gp(false), gm(false);
    const double fp = gp.value(nn::weighted_sum(gp, encode_pose(gp, f.store, gp.constant(p)), w))(0, 0);
    const double fm = gm.value(nn::weighted_sum(gm, encode_pose(gm, f.store, gm.constant(m)), w))(0, 0);
    const double numeric = (fp - fm) / 2e-5;
    CHECK(std::abs(numeric - analytic.data()[i]) <= 1e-6 * std::max(1.0, std::abs(numeric)));
  }
}

TEST_CASE("token sequence layout") {
  Fixture f;
  const auto c = f.cond(1, {2}, "put A left of B");
  CHECK(c.text.rows() == 5);
  Graph g(false);
  const std::array<const Conditioning*, 1> batch{&c};
  const auto enc = encode_conditioning(g, f.store, f.config, batch);
  const std::array<int, 1> ts{17};
  const auto seq = assemble_tokens(g, f.store, f.config, batch, enc, g.constant(Mat::Zero(1, 9)), ts);
  CHECK(g.value(seq.embeddings).rows() == 10);
  CHECK(g.value(seq.embeddings).cols() == 16);
  CHECK(seq.segments.size() == 1);
  CHECK(seq.movable_rows == std::vector<int>{1 + 5 + 1});
  CHECK(seq.positions[0] == 0);
  CHECK(seq.types[0] == TypeId::Text);
  int camera_tokens = 0;
  for (int p : seq.positions) camera_tokens += p == 0;
  CHECK(camera_tokens == 1);
  CHECK(seq.types[6] == TypeId::IrrelevantObject);
  CHECK(seq.types[7] == TypeId::MovableObject);
  CHECK(seq.types[8] == TypeId::ReferenceObject);
  CHECK(seq.types[9] == TypeId::IrrelevantObject);
  CHECK(f.store.at("embed.type").value.rows() == kTypeCount);
}

TEST_CASE("sequence length is 1 + text + objects for any batch") {
  Fixture f;
  Rng rng(8);
  std::vector<Conditioning> conds;
  int expected = 0;
  for (int i = 0; i < 5; ++i) {
    std::string instr;
    const int words = 1 + static_cast<int>(rng.index(40));
    for (int w = 0; w < words; ++w) instr += "w" + std::to_string(rng.index(5)) + " ";
    conds.push_back(f.cond(rng.index(4), {}, instr));
    expected += 1 + std::min(words, 32) + 4;
  }
  std::vector<const Conditioning*> batch;
  for (auto& c : conds) batch.push_back(&c);
  Graph g(false);
  const auto enc = encode_conditioning(g, f.store, f.config, batch);
  const std::vector<int> ts{1, 2, 3, 4, 5};
  const auto seq = assemble_tokens(g, f.store, f.config, batch, enc, g.constant(Mat::Zero(5, 9)), ts);
  CHECK(g.value(seq.embeddings).rows() == expected);
}

TEST_CASE("changing t adds the same vector to every token") {
  Fixture f;
  const auto c = f.cond(0, {1});
  const Mat x = Mat::Constant(1, 9, 0.3);
  const Mat a = f.tokens(c, 3, x);
  const Mat b = f.tokens(c, 150, x);
  const Mat diff = b - a;
  for (Eigen::Index r = 1; r < diff.rows(); ++r) CHECK((diff.row(r) - diff.row(0)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(diff.row(0).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("swapping roles changes only the role embeddings of the swapped objects") {
  Fixture f;
  const Mat x = Mat::Constant(1, 9, 0.1);
  // Object 1 is the reference and 3 irrelevant, then the other way round.
  const Mat a = f.tokens(f.cond(0, {1}), 10, x);
  const Mat b = f.tokens(f.cond(0, {3}), 10, x);
  const Mat& type = f.store.at("embed.type").value;
  const Mat& pos = f.store.at("embed.position").value;
  const int base = 1 + static_cast<int>(f.cond(0, {1}).text.rows());
  const int slot0 = 1 + f.config.max_text_tokens;
  const Mat ref_emb = type.row(2) + pos.row(slot0 + 1);
  const Mat irr_emb = type.row(3) + pos.row(slot0 + 3);
  const Mat diff = b - a;
  for (Eigen::Index r = 0; r < diff.rows(); ++r) {
    if (r == base + 1) {
      CHECK((diff.row(r) - (irr_emb - ref_emb)).cwiseAbs().maxCoeff() < 1e-12);
    } else if (r == base + 3) {
      CHECK((diff.row(r) - (ref_emb - irr_emb)).cwiseAbs().maxCoeff() < 1e-12);
    } else {
      CHECK(diff.row(r).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("object categories are invisible to the tokens") {
  Fixture f;
  const Mat x = Mat::Constant(1, 9, -0.2);
  const Mat a = f.tokens(f.cond(2, {0, 1}), 40, x);
  for (auto& o : f.scene.objects) {
    o.model.category = "mug";
    o.model.id = "mug_99";
    o.model.color = {0.9, 0.1, 0.1};
  }
  CHECK(f.tokens(f.cond(2, {0, 1}), 40, x) == a);
}

TEST_CASE("conditioning alignment errors") {
  Fixture f;
  const auto text = f.text.encode("put it");
  CHECK_THROWS_AS(make_conditioning(text, f.scene, std::span(f.clouds).first(3), 0, {}, f.config, {}, 0), AlignmentError);
  const std::vector<std::size_t> self{0}, far{7}, three{1, 2, 3}, twice{1, 1};
  CHECK_THROWS_AS(make_conditioning(text, f.scene, f.clouds, 4, {}, f.config, {}, 0), AlignmentError);
  CHECK_THROWS_AS(make_conditioning(text, f.scene, f.clouds, 0, self, f.config, {}, 0), AlignmentError);
  CHECK_THROWS_AS(make_conditioning(text, f.scene, f.clouds, 0, far, f.config, {}, 0), AlignmentError);
  CHECK_THROWS_AS(make_conditioning(text, f.scene, f.clouds, 0, three, f.config, {}, 0), AlignmentError);
  CHECK_THROWS_AS(make_conditioning(text, f.scene, f.clouds, 0, twice, f.config, {}, 0), AlignmentError);
  auto clouds = f.clouds;
  clouds[2] = PointCloud{};
  CHECK_THROWS_AS(make_conditioning(text, f.scene, clouds, 0, {}, f.config, {}, 0), EmptyCloud);
}

TEST_CASE("model config JSON and validation") {
  const ModelConfig c = tiny_config();
  CHECK(ModelConfig::from_json(c.to_json()) == c);
  ModelConfig bad = c;
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.model_dim = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(ModelConfig{}.model_dim == 128);
  CHECK(ModelConfig{}.blocks == 4);
  CHECK(ModelConfig{}.heads == 4);
}
