#include "sport/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "sport/error.hpp"

namespace sport::nn {

namespace {

std::string shape_of(const Mat& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch(std::string(op) + ": " + shape_of(a) + " vs " + shape_of(b));
}

}  // namespace

// ParameterStore ------------------------------------------------------------------

Parameter& ParameterStore::add(const std::string& name, Mat init) {
  auto [it, inserted] = params_.try_emplace(name);
  if (!inserted) throw std::invalid_argument("duplicate parameter '" + name + "'");
  it->second.value = std::move(init);
  return it->second;
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, p] : params_) p.grad = Mat::Zero(p.value.rows(), p.value.cols());
}

// Graph -----------------------------------------------------------------------------

Var Graph::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, nullptr, false, {}});
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Graph::input(Mat value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, nullptr, record_, {}});
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(const Parameter& p) {
  // Gradients are only written during backward(), which requires recording.
  nodes_.push_back(Node{{}, &p.value, {}, const_cast<Parameter*>(&p), record_, {}});
  return {static_cast<int>(nodes_.size()) - 1};
}

const Mat& Graph::value(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  return n.ref ? *n.ref : n.value;
}

Var Graph::push(Mat value, std::initializer_list<Var> inputs, Backward backward) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Graph::push(Mat value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  if (record_)
    for (Var in : inputs) needs = needs || nodes_[static_cast<std::size_t>(in.id)].needs_grad;
  nodes_.push_back(Node{std::move(value), nullptr, {}, nullptr, needs, needs ? std::move(backward) : Backward{}});
  return {static_cast<int>(nodes_.size()) - 1};
}

void Graph::accumulate(Var v, const Mat& g) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

Mat& Graph::grad_buffer(Var v) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.size() == 0) {
    const Mat& val = value(v);
    n.grad = Mat::Zero(val.rows(), val.cols());
  }
  return n.grad;
}

void Graph::accumulate_rows(Var v, Eigen::Index row, const Mat& g) {
  if (!needs_grad(v)) return;
  grad_buffer(v).middleRows(row, g.rows()) += g;
}

void Graph::backward(Var loss) {
  if (!record_) throw std::logic_error("backward on a non-recording graph");
  const Mat& l = value(loss);
  if (l.rows() != 1 || l.cols() != 1) throw NotScalarLoss("loss has shape " + shape_of(l));
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[static_cast<std::size_t>(loss.id)].grad = Mat::Ones(1, 1);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param) {
      if (n.param->grad.size() == 0)
        n.param->grad = n.grad;
      else
        n.param->grad += n.grad;
    }
  }
}

// Primitives --------------------------------------------------------------------------

Var add(Graph& g, Var a, Var b) {
  require_same_shape(g.value(a), g.value(b), "add");
  return g.push(g.value(a) + g.value(b), {a, b}, [a, b](Graph& g, const Mat& og) {
    g.accumulate(a, og);
    g.accumulate(b, og);
  });
}

Var sub(Graph& g, Var a, Var b) {
  require_same_shape(g.value(a), g.value(b), "sub");
  return g.push(g.value(a) - g.value(b), {a, b}, [a, b](Graph& g, const Mat& og) {
    g.accumulate(a, og);
    g.accumulate(b, -og);
  });
}

Var mul(Graph& g, Var a, Var b) {
  require_same_shape(g.value(a), g.value(b), "mul");
  return g.push(g.value(a).cwiseProduct(g.value(b)), {a, b}, [a, b](Graph& g, const Mat& og) {
    if (g.needs_grad(a)) g.accumulate(a, og.cwiseProduct(g.value(b)));
    if (g.needs_grad(b)) g.accumulate(b, og.cwiseProduct(g.value(a)));
  });
}

Var scale(Graph& g, Var a, double s) {
  return g.push(g.value(a) * s, {a}, [a, s](Graph& g, const Mat& og) { g.accumulate(a, og * s); });
}

Var add_row(Graph& g, Var a, Var row) {
  const Mat& A = g.value(a);
  const Mat& R = g.value(row);
  if (R.rows() != 1 || R.cols() != A.cols()) throw ShapeMismatch("add_row: " + shape_of(A) + " + " + shape_of(R));
  Mat out = A;
  out.rowwise() += R.row(0);
  return g.push(std::move(out), {a, row}, [a, row](Graph& g, const Mat& og) {
    g.accumulate(a, og);
    if (g.needs_grad(row)) g.accumulate(row, og.colwise().sum());
  });
}

Var matmul(Graph& g, Var a, Var b) {
  const Mat& A = g.value(a);
  const Mat& B = g.value(b);
  if (A.cols() != B.rows()) throw ShapeMismatch("matmul: " + shape_of(A) + " * " + shape_of(B));
  Mat out;
  out.noalias() = A * B;
  return g.push(std::move(out), {a, b}, [a, b](Graph& g, const Mat& og) {
    if (g.needs_grad(a)) g.accumulate(a, og * g.value(b).transpose());
    if (g.needs_grad(b)) g.accumulate(b, g.value(a).transpose() * og);
  });
}

Var affine(Graph& g, Var x, Var w, Var b) {
  const Mat& X = g.value(x);
  const Mat& W = g.value(w);
  const Mat& B = g.value(b);
  if (X.cols() != W.rows() || B.rows() != 1 || B.cols() != W.cols())
    throw ShapeMismatch("affine: " + shape_of(X) + " * " + shape_of(W) + " + " + shape_of(B));
  Mat out;
  out.noalias() = X * W;
  out.rowwise() += B.row(0);
  return g.push(std::move(out), {x, w, b}, [x, w, b](Graph& g, const Mat& og) {
    if (g.needs_grad(x)) g.accumulate(x, og * g.value(w).transpose());
    if (g.needs_grad(w)) g.accumulate(w, g.value(x).transpose() * og);
    if (g.needs_grad(b)) g.accumulate(b, og.colwise().sum());
  });
}

Var gelu(Graph& g, Var a) {
  const Mat& A = g.value(a);
  Mat out = A.unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * (1.0 / std::numbers::sqrt2))); });
  return g.push(std::move(out), {a}, [a](Graph& g, const Mat& og) {
    const Mat d = g.value(a).unaryExpr([](double x) {
      const double cdf = 0.5 * (1.0 + std::erf(x * (1.0 / std::numbers::sqrt2)));
      const double pdf = std::exp(-0.5 * x * x) * (0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
      return cdf + x * pdf;
    });
    g.accumulate(a, og.cwiseProduct(d));
  });
}

namespace {

void softmax_in_place(Mat& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    auto row = s.row(r);
    const double mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

}  // namespace

Var softmax_rows(Graph& g, Var a) {
  Mat y = g.value(a);
  softmax_in_place(y);
  return g.push(y, {a}, [a, y](Graph& g, const Mat& og) {
    const Eigen::VectorXd dot = og.cwiseProduct(y).rowwise().sum();
    g.accumulate(a, y.cwiseProduct(og.colwise() - dot));
  });
}

Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps) {
  const Mat& X = g.value(x);
  const Mat& G = g.value(gamma);
  const Mat& B = g.value(beta);
  if (G.rows() != 1 || G.cols() != X.cols() || B.rows() != 1 || B.cols() != X.cols())
    throw ShapeMismatch("layer_norm: " + shape_of(X) + " with " + shape_of(G) + ", " + shape_of(B));
  const Eigen::Index n = X.cols();
  auto xhat = std::make_shared<Mat>(X.rows(), n);
  auto inv = std::make_shared<Eigen::VectorXd>(X.rows());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double mu = X.row(r).mean();
    const double var = (X.row(r).array() - mu).square().mean();
    (*inv)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (X.row(r).array() - mu) * (*inv)(r);
  }
  Mat out = xhat->array().rowwise() * G.row(0).array();
  out.rowwise() += B.row(0);
  return g.push(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv](Graph& g, const Mat& og) {
    if (g.needs_grad(gamma)) g.accumulate(gamma, og.cwiseProduct(*xhat).colwise().sum());
    if (g.needs_grad(beta)) g.accumulate(beta, og.colwise().sum());
    if (!g.needs_grad(x)) return;
    const Mat dxhat = og.array().rowwise() * g.value(gamma).row(0).array();
    const double n = static_cast<double>(dxhat.cols());
    Mat dx(dxhat.rows(), dxhat.cols());
    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
      const double m1 = dxhat.row(r).sum() / n;
      const double m2 = dxhat.row(r).dot(xhat->row(r)) / n;
      dx.row(r) = (*inv)(r) * (dxhat.row(r).array() - m1 - xhat->row(r).array() * m2);
    }
    g.accumulate(x, dx);
  });
}

Var attention(Graph& g, Var q, Var k, Var v, int heads, std::span<const Segment> segments) {
  const Mat& Q = g.value(q);
  const Mat& K = g.value(k);
  const Mat& V = g.value(v);
  require_same_shape(Q, K, "attention");
  require_same_shape(Q, V, "attention");
  const int d = static_cast<int>(Q.cols());
  if (heads <= 0 || d % heads != 0) throw ShapeMismatch("attention: width " + std::to_string(d) + " not divisible by heads");
  int covered = 0;
  for (const auto& s : segments) {
    if (s.start != covered || s.length <= 0) throw ShapeMismatch("attention: segments must tile the rows");
    covered += s.length;
  }
  if (covered != Q.rows()) throw ShapeMismatch("attention: segments cover " + std::to_string(covered) + " rows");
  const int hd = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(hd));

  const bool keep = g.recording() && (g.needs_grad(q) || g.needs_grad(k) || g.needs_grad(v));
  auto probs = std::make_shared<std::vector<Mat>>();
  if (keep) probs->reserve(segments.size() * static_cast<std::size_t>(heads));
  Mat out(Q.rows(), d);
  std::vector<Segment> segs(segments.begin(), segments.end());
  for (const auto& s : segs) {
    for (int h = 0; h < heads; ++h) {
      Mat S;
      S.noalias() = Q.block(s.start, h * hd, s.length, hd) * K.block(s.start, h * hd, s.length, hd).transpose();
      S *= sc;
      softmax_in_place(S);
      out.block(s.start, h * hd, s.length, hd).noalias() = S * V.block(s.start, h * hd, s.length, hd);
      if (keep) probs->push_back(std::move(S));
    }
  }
  return g.push(std::move(out), {q, k, v}, [q, k, v, heads, hd, sc, probs, segs](Graph& g, const Mat& og) {
    const Mat& Q = g.value(q);
    const Mat& K = g.value(k);
    const Mat& V = g.value(v);
    Mat dQ = Mat::Zero(Q.rows(), Q.cols());
    Mat dK = Mat::Zero(Q.rows(), Q.cols());
    Mat dV = Mat::Zero(Q.rows(), Q.cols());
    std::size_t idx = 0;
    for (const auto& s : segs) {
      for (int h = 0; h < heads; ++h) {
        const Mat& P = (*probs)[idx++];
        const auto dO = og.block(s.start, h * hd, s.length, hd);
        dV.block(s.start, h * hd, s.length, hd).noalias() = P.transpose() * dO;
        Mat dP;
        dP.noalias() = dO * V.block(s.start, h * hd, s.length, hd).transpose();
        const Eigen::VectorXd dot = dP.cwiseProduct(P).rowwise().sum();
        Mat dS = P.cwiseProduct(dP.colwise() - dot) * sc;
        dQ.block(s.start, h * hd, s.length, hd).noalias() = dS * K.block(s.start, h * hd, s.length, hd);
        dK.block(s.start, h * hd, s.length, hd).noalias() = dS.transpose() * Q.block(s.start, h * hd, s.length, hd);
      }
    }
    g.accumulate(q, dQ);
    g.accumulate(k, dK);
    g.accumulate(v, dV);
  });
}

Var gather_rows(Graph& g, Var table, std::vector<int> rows) {
  const Mat& T = g.value(table);
  Mat out(static_cast<Eigen::Index>(rows.size()), T.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= T.rows())
      throw ShapeMismatch("gather_rows: index " + std::to_string(rows[i]) + " outside " + shape_of(T));
    out.row(static_cast<Eigen::Index>(i)) = T.row(rows[i]);
  }
  return g.push(std::move(out), {table}, [table, rows = std::move(rows)](Graph& g, const Mat& og) {
    Mat& gt = g.grad_buffer(table);
    for (std::size_t i = 0; i < rows.size(); ++i) gt.row(rows[i]) += og.row(static_cast<Eigen::Index>(i));
  });
}

Var scatter_rows(Graph& g, Var a, std::vector<int> rows, int total_rows) {
  const Mat& A = g.value(a);
  if (static_cast<Eigen::Index>(rows.size()) != A.rows()) throw ShapeMismatch("scatter_rows: index count");
  Mat out = Mat::Zero(total_rows, A.cols());
  std::vector<bool> used(static_cast<std::size_t>(std::max(total_rows, 0)), false);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= total_rows || used[static_cast<std::size_t>(rows[i])])
      throw ShapeMismatch("scatter_rows: bad or repeated index " + std::to_string(rows[i]));
    used[static_cast<std::size_t>(rows[i])] = true;
    out.row(rows[i]) = A.row(static_cast<Eigen::Index>(i));
  }
  return g.push(std::move(out), {a}, [a, rows = std::move(rows)](Graph& g, const Mat& og) {
    Mat da(static_cast<Eigen::Index>(rows.size()), og.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) da.row(static_cast<Eigen::Index>(i)) = og.row(rows[i]);
    g.accumulate(a, da);
  });
}

Var concat_rows(Graph& g, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no inputs");
  const Eigen::Index cols = g.value(parts[0]).cols();
  Eigen::Index rows = 0;
  for (Var p : parts) {
    if (g.value(p).cols() != cols) throw ShapeMismatch("concat_rows: column counts differ");
    rows += g.value(p).rows();
  }
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    out.middleRows(r, g.value(p).rows()) = g.value(p);
    r += g.value(p).rows();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return g.push(std::move(out), parts, [ins](Graph& g, const Mat& og) {
    Eigen::Index r = 0;
    for (Var p : ins) {
      const Eigen::Index n = g.value(p).rows();
      if (g.needs_grad(p)) g.accumulate(p, og.middleRows(r, n));
      r += n;
    }
  });
}

Var concat_cols(Graph& g, Var a, Var b) {
  const Mat& A = g.value(a);
  const Mat& B = g.value(b);
  if (A.rows() != B.rows()) throw ShapeMismatch("concat_cols: " + shape_of(A) + " | " + shape_of(B));
  Mat out(A.rows(), A.cols() + B.cols());
  out << A, B;
  const Eigen::Index ca = A.cols();
  const Eigen::Index cb = B.cols();
  return g.push(std::move(out), {a, b}, [a, b, ca, cb](Graph& g, const Mat& og) {
    if (g.needs_grad(a)) g.accumulate(a, og.leftCols(ca));
    if (g.needs_grad(b)) g.accumulate(b, og.rightCols(cb));
  });
}

Var slice_cols(Graph& g, Var a, int start, int count) {
  const Mat& A = g.value(a);
  if (start < 0 || count < 0 || start + count > A.cols()) throw ShapeMismatch("slice_cols out of range");
  return g.push(A.middleCols(start, count), {a}, [a, start, count](Graph& g, const Mat& og) {
    g.grad_buffer(a).middleCols(start, count) += og;
  });
}

Var group_max(Graph& g, Var a, int group) {
  const Mat& A = g.value(a);
  if (group <= 0 || A.rows() % group != 0)
    throw ShapeMismatch("group_max: " + std::to_string(A.rows()) + " rows not divisible by " + std::to_string(group));
  const Eigen::Index groups = A.rows() / group;
  Mat out(groups, A.cols());
  auto arg = std::make_shared<Eigen::MatrixXi>(groups, A.cols());
  for (Eigen::Index gi = 0; gi < groups; ++gi) {
    for (Eigen::Index c = 0; c < A.cols(); ++c) {
      Eigen::Index best = gi * group;
      for (Eigen::Index r = best + 1; r < (gi + 1) * group; ++r)
        if (A(r, c) > A(best, c)) best = r;
      out(gi, c) = A(best, c);
      (*arg)(gi, c) = static_cast<int>(best);
    }
  }
  return g.push(std::move(out), {a}, [a, arg](Graph& g, const Mat& og) {
    Mat& ga = g.grad_buffer(a);
    for (Eigen::Index gi = 0; gi < og.rows(); ++gi)
      for (Eigen::Index c = 0; c < og.cols(); ++c) ga((*arg)(gi, c), c) += og(gi, c);
  });
}

Var sum(Graph& g, Var a) {
  Mat out(1, 1);
  out(0, 0) = g.value(a).sum();
  return g.push(std::move(out), {a}, [a](Graph& g, const Mat& og) {
    const Mat& A = g.value(a);
    g.accumulate(a, Mat::Constant(A.rows(), A.cols(), og(0, 0)));
  });
}

Var weighted_sum(Graph& g, Var a, const Mat& w) {
  require_same_shape(g.value(a), w, "weighted_sum");
  Mat out(1, 1);
  out(0, 0) = g.value(a).cwiseProduct(w).sum();
  return g.push(std::move(out), {a}, [a, w](Graph& g, const Mat& og) { g.accumulate(a, w * og(0, 0)); });
}

Var l1_loss(Graph& g, Var pred, const Mat& target) {
  const Mat& P = g.value(pred);
  require_same_shape(P, target, "l1_loss");
  if (P.rows() == 0) throw ShapeMismatch("l1_loss: empty batch");
  const Mat diff = P - target;
  Mat out(1, 1);
  out(0, 0) = diff.cwiseAbs().sum() / static_cast<double>(P.rows());
  return g.push(std::move(out), {pred}, [pred, diff](Graph& g, const Mat& og) {
    const double s = og(0, 0) / static_cast<double>(diff.rows());
    g.accumulate(pred, diff.unaryExpr([s](double x) { return x > 0 ? s : (x < 0 ? -s : 0.0); }));
  });
}

// Layers ---------------------------------------------------------------------------------

void init_linear(ParameterStore& store, const std::string& name, int in, int out, Rng& rng) {
  Mat w(in, out);
  const double std_dev = 1.0 / std::sqrt(static_cast<double>(in));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = std_dev * rng.normal();
  store.add(name + ".w", std::move(w));
  store.add(name + ".b", Mat::Zero(1, out));
}

void init_layer_norm(ParameterStore& store, const std::string& name, int dim) {
  store.add(name + ".g", Mat::Ones(1, dim));
  store.add(name + ".b", Mat::Zero(1, dim));
}

Var linear(Graph& g, const ParameterStore& store, const std::string& name, Var x) {
  return affine(g, x, g.param(store.at(name + ".w")), g.param(store.at(name + ".b")));
}

Var layer_norm(Graph& g, const ParameterStore& store, const std::string& name, Var x) {
  return layer_norm(g, x, g.param(store.at(name + ".g")), g.param(store.at(name + ".b")));
}

void init_mlp(ParameterStore& store, const std::string& name, int in, int hidden, int out, Rng& rng) {
  init_linear(store, name + ".0", in, hidden, rng);
  init_linear(store, name + ".1", hidden, out, rng);
}

Var mlp(Graph& g, const ParameterStore& store, const std::string& name, Var x) {
  return linear(g, store, name + ".1", gelu(g, linear(g, store, name + ".0", x)));
}

void init_transformer_block(ParameterStore& store, const std::string& name, int dim, int ffn_dim, Rng& rng) {
  init_layer_norm(store, name + ".ln1", dim);
  init_linear(store, name + ".qkv", dim, 3 * dim, rng);
  init_linear(store, name + ".proj", dim, dim, rng);
  init_layer_norm(store, name + ".ln2", dim);
  init_mlp(store, name + ".ffn", dim, ffn_dim, dim, rng);
}

Var transformer_block(Graph& g, const ParameterStore& store, const std::string& name, Var x, int heads,
                      std::span<const Segment> segments) {
  const int d = static_cast<int>(g.value(x).cols());
  const Var qkv = linear(g, store, name + ".qkv", layer_norm(g, store, name + ".ln1", x));
  const Var att = attention(g, slice_cols(g, qkv, 0, d), slice_cols(g, qkv, d, d), slice_cols(g, qkv, 2 * d, d),
                            heads, segments);
  x = add(g, x, linear(g, store, name + ".proj", att));
  return add(g, x, mlp(g, store, name + ".ffn", layer_norm(g, store, name + ".ln2", x)));
}

// Optimization ------------------------------------------------------------------------------

void adam_step(ParameterStore& store, const AdamConfig& config) {
  for (const auto& [name, p] : store.items())
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols())
      throw MissingGradient("parameter '" + name + "' has no gradient");
  ++store.step;
  const double t = static_cast<double>(store.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (auto& [name, p] : store.items()) {
    if (p.m.size() == 0) p.m = Mat::Zero(p.value.rows(), p.value.cols());
    if (p.v.size() == 0) p.v = Mat::Zero(p.value.rows(), p.value.cols());
    p.m = config.beta1 * p.m + (1.0 - config.beta1) * p.grad;
    p.v = config.beta2 * p.v + (1.0 - config.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= config.lr * (p.m.array() / c1) / ((p.v.array() / c2).sqrt() + config.eps);
  }
}

GradCheckReport grad_check(ParameterStore& store, const std::function<Var(Graph&)>& loss, double eps,
                           std::size_t max_entries_per_parameter, double floor, std::uint64_t seed) {
  store.zero_grad();
  {
    Graph g(true);
    g.backward(loss(g));
  }
  auto eval = [&] {
    Graph g(false);
    return g.value(loss(g))(0, 0);
  };
  GradCheckReport report;
  std::uint64_t index = 0;
  for (auto& [name, p] : store.items()) {
    const auto n = static_cast<std::size_t>(p.value.size());
    std::vector<std::size_t> entries(n);
    for (std::size_t i = 0; i < n; ++i) entries[i] = i;
    if (max_entries_per_parameter < n) {
      Rng rng(derive_seed(seed, index));
      for (std::size_t i = 0; i < max_entries_per_parameter; ++i) std::swap(entries[i], entries[i + rng.index(n - i)]);
      entries.resize(max_entries_per_parameter);
    }
    ++index;
    for (std::size_t e : entries) {
      double& x = p.value.data()[e];
      const double orig = x;
      x = orig + eps;
      const double fp = eval();
      x = orig - eps;
      const double fm = eval();
      x = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic = p.grad.data()[e];
      ++report.checked;
      if (numeric == 0.0 && analytic == 0.0) {
        ++report.exact_zeros;
        continue;
      }
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_parameter = name;
      }
    }
  }
  return report;
}

}  // namespace sport::nn
