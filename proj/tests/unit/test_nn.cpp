#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "sport/error.hpp"
#include "sport/nn.hpp"

using namespace sport;
using namespace sport::nn;

namespace {

Mat random_mat(Rng& rng, int r, int c, double s = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * rng.normal();
  return m;
}

// Independent central-difference gradient of f at every entry of x.
Mat numeric_grad(const std::function<double(const Mat&)>& f, Mat x, double eps = 1e-5) {
  Mat g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = x.data()[i];
    x.data()[i] = orig + eps;
    const double fp = f(x);
    x.data()[i] = orig - eps;
    const double fm = f(x);
    x.data()[i] = orig;
    g.data()[i] = (fp - fm) / (2 * eps);
  }
  return g;
}

double max_rel(const Mat& a, const Mat& b) {
  double worst = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]) /
                                std::max({std::abs(a.data()[i]), std::abs(b.data()[i]), 1e-6}));
  return worst;
}

// Checks d(sum(op(x) .* w))/dx for a unary op against finite differences.
double unary_check(const std::function<Var(Graph&, Var)>& op, const Mat& x0, std::uint64_t seed = 1) {
  Rng rng(seed);
  Graph probe(false);
  const Mat out = probe.value(op(probe, probe.constant(x0)));
  const Mat w = random_mat(rng, static_cast<int>(out.rows()), static_cast<int>(out.cols()));
  Graph g;
  const Var x = g.input(x0);
  g.backward(weighted_sum(g, op(g, x), w));
  const Mat analytic = g.grad(x);
  const Mat numeric = numeric_grad(
      [&](const Mat& xv) {
        Graph h(false);
        return h.value(weighted_sum(h, op(h, h.constant(xv)), w))(0, 0);
      },
      x0);
  return max_rel(analytic, numeric);
}

}  // namespace

TEST_CASE("forward primitive examples") {
  Graph g;
  const Var a = g.constant(Mat::Ones(2, 3));
  const Var b = g.constant(Mat::Ones(3, 2));
  CHECK(g.value(matmul(g, a, b)) == Mat::Constant(2, 2, 3.0));
  Mat z = Mat::Zero(1, 2);
  const Mat s = g.value(softmax_rows(g, g.constant(z)));
  CHECK(s(0, 0) == doctest::Approx(0.5));
  CHECK(s(0, 1) == doctest::Approx(0.5));
  CHECK_THROWS_AS(matmul(g, a, a), ShapeMismatch);
  CHECK_THROWS_AS(add(g, a, b), ShapeMismatch);
}

TEST_CASE("attention over a single token returns its value") {
  Rng rng(3);
  Graph g;
  const Var q = g.constant(random_mat(rng, 1, 4));
  const Var v = g.constant(random_mat(rng, 1, 4));
  const std::array<Segment, 1> seg{Segment{0, 1}};
  // One logit: softmax gives weight exactly 1.
  CHECK(g.value(attention(g, q, q, v, 1, seg)) == g.value(v));
  CHECK(g.value(attention(g, q, q, v, 2, seg)) == g.value(v));
}

TEST_CASE("segmented attention equals separate runs") {
  Rng rng(5);
  const Mat q = random_mat(rng, 5, 4), k = random_mat(rng, 5, 4), v = random_mat(rng, 5, 4);
  Graph g;
  const std::array<Segment, 2> segs{Segment{0, 2}, Segment{2, 3}};
  const Mat joint = g.value(attention(g, g.constant(q), g.constant(k), g.constant(v), 2, segs));
  const std::array<Segment, 1> s0{Segment{0, 2}}, s1{Segment{0, 3}};
  const Mat first = g.value(attention(g, g.constant(q.topRows(2)), g.constant(k.topRows(2)), g.constant(v.topRows(2)), 2, s0));
  const Mat second =
      g.value(attention(g, g.constant(q.bottomRows(3)), g.constant(k.bottomRows(3)), g.constant(v.bottomRows(3)), 2, s1));
  CHECK((joint.topRows(2) - first).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((joint.bottomRows(3) - second).cwiseAbs().maxCoeff() < 1e-15);
  const std::array<Segment, 1> bad{Segment{0, 4}};
  CHECK_THROWS_AS(attention(g, g.constant(q), g.constant(k), g.constant(v), 2, bad), ShapeMismatch);
  CHECK_THROWS_AS(attention(g, g.constant(q), g.constant(k), g.constant(v), 3, segs), ShapeMismatch);
}

TEST_CASE("attention matches a hand-written softmax over two tokens") {
  Mat q(2, 1), k(2, 1), v(2, 1);
  q << 1, 2;
  k << 0.5, -1;
  v << 3, 7;
  Graph g;
  const std::array<Segment, 1> seg{Segment{0, 2}};
  const Mat out = g.value(attention(g, g.constant(q), g.constant(k), g.constant(v), 1, seg));
  for (int r = 0; r < 2; ++r) {
    const double l0 = q(r, 0) * 0.5, l1 = q(r, 0) * -1.0;
    const double w0 = std::exp(l0) / (std::exp(l0) + std::exp(l1));
    CHECK(out(r, 0) == doctest::Approx(w0 * 3 + (1 - w0) * 7).epsilon(1e-14));
  }
}

TEST_CASE("backward examples") {
  ParameterStore store;
  Mat w0(1, 2);
  w0 << 1, 2;
  store.add("w", w0);
  store.add("unused", Mat::Ones(2, 2));
  store.zero_grad();
  Graph g;
  const Var w = g.param(store.at("w"));
  g.backward(sum(g, mul(g, w, w)));
  CHECK(store.at("w").grad(0, 0) == 2.0);
  CHECK(store.at("w").grad(0, 1) == 4.0);
  CHECK(store.at("unused").grad == Mat::Zero(2, 2));
  CHECK_THROWS_AS(g.backward(w), NotScalarLoss);
}

TEST_CASE("primitive gradients match central differences") {
  Rng rng(11);
  const Mat x = random_mat(rng, 4, 6);
  const Mat other = random_mat(rng, 4, 6);
  const Mat right = random_mat(rng, 6, 3);
  const Mat row = random_mat(rng, 1, 6);
  const std::array<Segment, 2> segs{Segment{0, 1}, Segment{1, 3}};

  CHECK(unary_check([&](Graph& g, Var a) { return add(g, a, g.constant(other)); }, x) < 1e-8);
  CHECK(unary_check([&](Graph& g, Var a) { return sub(g, g.constant(other), a); }, x) < 1e-8);
  CHECK(unary_check([&](Graph& g, Var a) { return mul(g, a, a); }, x) < 1e-8);
  CHECK(unary_check([&](Graph& g, Var a) { return scale(g, a, -2.5); }, x) < 1e-8);
  CHECK(unary_check([&](Graph& g, Var a) { return add_row(g, g.constant(other), slice_cols(g, gather_rows(g, a, {1}), 0, 6)); }, x) < 1e-8);
  CHECK(unary_check([&](Graph& g, Var a) { return matmul(g, a, g.constant(right)); }, x) < 1e-8);
  CHECK(unary_check([&](Graph& g, Var a) { return affine(g, a, g.constant(right), g.constant(Mat::Ones(1, 3))); }, x) < 1e-8);
  CHECK(unary_check([&](Graph& g, Var a) { return gelu(g, a); }, x) < 1e-7);
  CHECK(unary_check([&](Graph& g, Var a) { return softmax_rows(g, a); }, x) < 1e-6);
  CHECK(unary_check([&](Graph& g, Var a) { return layer_norm(g, a, g.constant(row), g.constant(row)); }, x) < 1e-6);
  CHECK(unary_check([&](Graph& g, Var a) { return layer_norm(g, g.constant(x), gather_rows(g, a, {2}), g.constant(row)); }, x) < 1e-8);
  CHECK(unary_check([&](Graph& g, Var a) { return attention(g, a, mul(g, a, g.constant(other)), g.constant(other), 2, segs); }, x) < 1e-6);
  CHECK(unary_check([&](Graph& g, Var a) { return attention(g, g.constant(other), g.constant(x), a, 3, segs); }, x) < 1e-8);
  CHECK(unary_check([&](Graph& g, Var a) { return gather_rows(g, a, {3, 0, 3}); }, x) < 1e-8);
  CHECK(unary_check([&](Graph& g, Var a) { return scatter_rows(g, a, {4, 0, 2, 5}, 7); }, x) < 1e-8);
  CHECK(unary_check([&](Graph& g, Var a) {
          const std::array<Var, 3> parts{a, g.constant(other), mul(g, a, a)};
          return concat_rows(g, parts);
        }, x) < 1e-8);
  CHECK(unary_check([&](Graph& g, Var a) { return concat_cols(g, g.constant(other), a); }, x) < 1e-8);
  CHECK(unary_check([&](Graph& g, Var a) { return slice_cols(g, a, 2, 3); }, x) < 1e-8);
  CHECK(unary_check([&](Graph& g, Var a) { return group_max(g, a, 2); }, x) < 1e-8);
  CHECK(unary_check([&](Graph& g, Var a) { return sum(g, a); }, x) < 1e-8);
}

TEST_CASE("group_max and l1_loss by hand") {
  Mat a(4, 2);
  a << 1, 5, 3, 2, -1, -4, -2, -3;
  Graph g;
  const Mat m = g.value(group_max(g, g.constant(a), 2));
  CHECK(m(0, 0) == 3);
  CHECK(m(0, 1) == 5);
  CHECK(m(1, 0) == -1);
  CHECK(m(1, 1) == -3);
  CHECK_THROWS_AS(group_max(g, g.constant(a), 3), ShapeMismatch);
  Mat target = Mat::Zero(4, 2);
  // Row sums of |a| are 6, 5, 5, 5; mean 5.25.
  CHECK(g.value(l1_loss(g, g.constant(a), target))(0, 0) == doctest::Approx(5.25));
}

TEST_CASE("layer_norm rows have zero mean and unit variance") {
  Rng rng(2);
  Graph g;
  const Mat x = random_mat(rng, 20, 16, 3.0);
  const Mat y = g.value(layer_norm(g, g.constant(x), g.constant(Mat::Ones(1, 16)), g.constant(Mat::Zero(1, 16))));
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    CHECK(std::abs(y.row(r).mean()) < 1e-6);
    CHECK(std::abs((y.row(r).array() - y.row(r).mean()).square().mean() - 1.0) < 1e-6);
  }
}

TEST_CASE("two-layer network gradients agree with finite differences") {
  Rng rng(7);
  ParameterStore store;
  init_mlp(store, "net", 5, 8, 3, rng);
  const Mat x = random_mat(rng, 6, 5);
  const Mat w = random_mat(rng, 6, 3);
  auto loss = [&](Graph& g) { return weighted_sum(g, mlp(g, store, "net", g.constant(x)), w); };
  store.zero_grad();
  Graph g;
  g.backward(loss(g));
  // Independent oracle: perturb each parameter entry directly.
  for (auto& [name, p] : store.items()) {
    const Mat analytic = p.grad;
    const Mat numeric = numeric_grad(
        [&](const Mat& v) {
          const Mat saved = p.value;
          p.value = v;
          Graph h(false);
          const double f = h.value(loss(h))(0, 0);
          p.value = saved;
          return f;
        },
        p.value);
    CHECK(max_rel(analytic, numeric) < 1e-4);
  }
  const auto report = grad_check(store, loss);
  CHECK(report.max_relative_error < 1e-4);
  CHECK(report.checked == store.scalar_count());
}

TEST_CASE("grad_check on a linear layer and a dead branch") {
  Rng rng(9);
  ParameterStore store;
  init_linear(store, "lin", 4, 3, rng);
  init_linear(store, "dead", 4, 3, rng);
  const Mat x = random_mat(rng, 5, 4);
  const Mat w = random_mat(rng, 5, 3);
  const auto report = grad_check(store, [&](Graph& g) { return weighted_sum(g, linear(g, store, "lin", g.constant(x)), w); });
  CHECK(report.max_relative_error < 1e-6);
  CHECK(report.exact_zeros == 15);
  CHECK(report.checked == 30);
  const auto subset = grad_check(store, [&](Graph& g) { return weighted_sum(g, linear(g, store, "lin", g.constant(x)), w); },
                                 1e-5, 2);
  CHECK(subset.checked == 8);
}

TEST_CASE("adam single step by hand") {
  ParameterStore store;
  store.add("p", Mat::Constant(1, 1, 0.5));
  store.at("p").grad = Mat::Constant(1, 1, 1.0);
  adam_step(store, {});
  // m = 0.1, v = 0.001; bias-corrected both are 1, so the step is lr / (1 + eps).
  const double expected = 0.5 - 1e-4 * 1.0 / (1.0 + 1e-8);
  CHECK(store.at("p").value(0, 0) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(store.step == 1);

  // Second step with the same gradient: hand-evaluate the recurrence.
  adam_step(store, {});
  const double m2 = 0.9 * 0.1 + 0.1, v2 = 0.999 * 0.001 + 0.001;
  const double mh = m2 / (1 - 0.81), vh = v2 / (1 - 0.999 * 0.999);
  CHECK(store.at("p").value(0, 0) == doctest::Approx(expected - 1e-4 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-15));
}

TEST_CASE("adam edge cases") {
  ParameterStore store;
  store.add("p", Mat::Constant(2, 2, 1.0));
  CHECK_THROWS_AS(adam_step(store, {}), MissingGradient);
  store.zero_grad();
  adam_step(store, {});
  CHECK(store.at("p").value == Mat::Constant(2, 2, 1.0));

  store.at("p").grad = Mat::Constant(2, 2, -3.0);
  double prev = store.at("p").value(0, 0);
  for (int i = 0; i < 2; ++i) {
    adam_step(store, {});
    CHECK(store.at("p").value(0, 0) > prev);
    prev = store.at("p").value(0, 0);
  }
  const Mat before = store.at("p").value;
  for (int i = 0; i < 5; ++i) adam_step(store, {.lr = 0.0});
  CHECK(store.at("p").value == before);
}

TEST_CASE("forward passes are deterministic") {
  Rng rng(1);
  ParameterStore store;
  init_transformer_block(store, "blk", 8, 16, rng);
  const Mat x = random_mat(rng, 6, 8);
  const std::array<Segment, 2> segs{Segment{0, 4}, Segment{4, 2}};
  Graph a(false), b(true);
  CHECK(a.value(transformer_block(a, store, "blk", a.constant(x), 2, segs)) ==
        b.value(transformer_block(b, store, "blk", b.constant(x), 2, segs)));
}

TEST_CASE("transformer block gradients agree with finite differences") {
  Rng rng(4);
  ParameterStore store;
  init_transformer_block(store, "blk", 8, 16, rng);
  const Mat x = random_mat(rng, 5, 8);
  const Mat w = random_mat(rng, 5, 8);
  const std::array<Segment, 2> segs{Segment{0, 3}, Segment{3, 2}};
  const auto report = grad_check(
      store, [&](Graph& g) { return weighted_sum(g, transformer_block(g, store, "blk", g.constant(x), 2, segs), w); });
  CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("checkpoint round trip and layout") {
  Rng rng(6);
  ParameterStore store;
  init_linear(store, "a", 3, 2, rng);
  store.add("z", random_mat(rng, 1, 4));
  store.zero_grad();
  for (auto& [n, p] : store.items()) p.grad = random_mat(rng, static_cast<int>(p.value.rows()), static_cast<int>(p.value.cols()));
  adam_step(store, {});
  std::stringstream buf;
  write_checkpoint(buf, store, {{"seed", 42}});
  const std::string bytes = buf.str();
  REQUIRE(bytes.size() > 13);
  CHECK(bytes.substr(0, 5) == "SPCK1");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[5 + i])) << (8 * i);
  const auto header = nlohmann::json::parse(bytes.substr(13, len));
  CHECK(header["format"] == "SPCK1");
  CHECK(header["step"] == 1);
  CHECK(header["parameters"][0]["name"] == "a.b");
  // Three float32 blobs per parameter: 2 + 6 + 4 scalars.
  CHECK(bytes.size() == 13 + len + 3 * 4 * 12);
  // First blob: value of "a.b" as little-endian float32.
  float first = 0;
  std::memcpy(&first, bytes.data() + 13 + len, 4);
  CHECK(first == static_cast<float>(store.at("a.b").value(0, 0)));

  ParameterStore loaded;
  std::stringstream in(bytes);
  const auto meta = read_checkpoint(in, loaded);
  CHECK(meta["seed"] == 42);
  CHECK(loaded.step == 1);
  for (const auto& [n, p] : store.items()) {
    const auto& q = loaded.at(n);
    CHECK(q.value == p.value.cast<float>().cast<double>());
    CHECK(q.v == p.v.cast<float>().cast<double>());
  }
  // Re-serializing the loaded store reproduces the bytes.
  std::stringstream again;
  write_checkpoint(again, loaded, {{"seed", 42}});
  CHECK(again.str() == bytes);

  // Loading into a model with the same layout checks shapes.
  ParameterStore wrong;
  init_linear(wrong, "a", 2, 2, rng);
  wrong.add("z", Mat::Zero(1, 4));
  std::stringstream in2(bytes);
  CHECK_THROWS_AS(read_checkpoint(in2, wrong), FormatError);

  std::stringstream bad("SPCK2xxxxxxxx");
  ParameterStore s2;
  CHECK_THROWS_AS(read_checkpoint(bad, s2), FormatError);
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  ParameterStore s3;
  CHECK_THROWS_AS(read_checkpoint(cut, s3), FormatError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.spck", s3), IoError);
}
