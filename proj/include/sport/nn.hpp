#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sport/rng.hpp"

namespace sport::nn {

/// Dense row-major matrix; every tensor in the library is 2-D.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
  Mat value;
  /// Empty until a backward pass or zero_grad() allocates it.
  Mat grad;
  /// Adam first and second moments; empty until the first step.
  Mat m;
  Mat v;
};

/// Named parameters in name order, plus the optimizer step count.
class ParameterStore {
 public:
  /// Throws std::invalid_argument on a duplicate name.
  Parameter& add(const std::string& name, Mat init);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::map<std::string, Parameter>& items() { return params_; }
  const std::map<std::string, Parameter>& items() const { return params_; }
  /// Total number of scalars.
  std::size_t scalar_count() const;

  /// Gives every parameter a zero gradient of its shape.
  void zero_grad();

  std::int64_t step = 0;

 private:
  std::map<std::string, Parameter> params_;
};

/// Handle to a node of a Graph.
struct Var {
  int id = -1;
};

/// Tape of recorded operations. In non-recording mode values are computed but
/// no backward closures are kept, which is what inference uses.
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}

  bool recording() const { return record_; }

  /// Value that never receives a gradient.
  Var constant(Mat value);
  /// Leaf that receives a gradient (for checks with respect to inputs).
  Var input(Mat value);
  /// Parameter leaf. The value is referenced, not copied; backward adds into
  /// the parameter's gradient.
  Var param(const Parameter& p);

  const Mat& value(Var v) const;
  /// Gradient of the last backward pass; empty if the node got none.
  const Mat& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse pass from a 1x1 node. Throws NotScalarLoss.
  void backward(Var loss);

  // Used by operations.
  using Backward = std::function<void(Graph&, const Mat& out_grad)>;
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
  Var push(Mat value, std::initializer_list<Var> inputs, Backward backward);
  Var push(Mat value, std::span<const Var> inputs, Backward backward);
  void accumulate(Var v, const Mat& g);
  /// Adds into a row block of the node's gradient.
  void accumulate_rows(Var v, Eigen::Index row, const Mat& g);
  Mat& grad_buffer(Var v);

 private:
  struct Node {
    Mat value;
    const Mat* ref = nullptr;
    Mat grad;
    Parameter* param = nullptr;
    bool needs_grad = false;
    Backward backward;
  };
  bool record_;
  std::vector<Node> nodes_;
};

/// Contiguous row range [start, start + length) forming one attention group.
struct Segment {
  int start = 0;
  int length = 0;
};

// Primitives. Every one throws ShapeMismatch on incompatible operands.
Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double s);
/// a + row, with the 1 x c row broadcast over every row of a.
Var add_row(Graph& g, Var a, Var row);
Var matmul(Graph& g, Var a, Var b);
/// x W + b with W of shape in x out and b of shape 1 x out.
Var affine(Graph& g, Var x, Var w, Var b);
/// Exact GELU, x * Phi(x).
Var gelu(Graph& g, Var a);
Var softmax_rows(Graph& g, Var a);
/// Row-wise normalization to zero mean and unit variance, then gamma * x + beta.
Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps = 1e-9);
/// Scaled dot-product attention with `heads` heads of width cols / heads.
/// Rows attend only within their segment; segments must tile the rows.
Var attention(Graph& g, Var q, Var k, Var v, int heads, std::span<const Segment> segments);
/// Rows of `table` picked by index (embedding lookup).
Var gather_rows(Graph& g, Var table, std::vector<int> rows);
/// rows x cols zeros with row idx[i] set to row i of a.
Var scatter_rows(Graph& g, Var a, std::vector<int> rows, int total_rows);
Var concat_rows(Graph& g, std::span<const Var> parts);
Var concat_cols(Graph& g, Var a, Var b);
Var slice_cols(Graph& g, Var a, int start, int count);
/// Column-wise maximum over consecutive groups of `group` rows.
Var group_max(Graph& g, Var a, int group);
Var sum(Graph& g, Var a);
/// Sum of a .* w for a constant weight matrix.
Var weighted_sum(Graph& g, Var a, const Mat& w);
/// Mean over rows of the row-wise L1 distance to a constant target.
Var l1_loss(Graph& g, Var pred, const Mat& target);

// Layers built from named parameters: "<name>.w"/"<name>.b" for linear maps,
// "<name>.g"/"<name>.b" for layer norms.
void init_linear(ParameterStore& store, const std::string& name, int in, int out, Rng& rng);
void init_layer_norm(ParameterStore& store, const std::string& name, int dim);
Var linear(Graph& g, const ParameterStore& store, const std::string& name, Var x);
Var layer_norm(Graph& g, const ParameterStore& store, const std::string& name, Var x);

/// Two-layer perceptron "<name>.0" -> GELU -> "<name>.1".
void init_mlp(ParameterStore& store, const std::string& name, int in, int hidden, int out, Rng& rng);
Var mlp(Graph& g, const ParameterStore& store, const std::string& name, Var x);

/// Pre-norm transformer block: x + MHA(LN(x)), then x + FFN(LN(x)).
void init_transformer_block(ParameterStore& store, const std::string& name, int dim, int ffn_dim, Rng& rng);
Var transformer_block(Graph& g, const ParameterStore& store, const std::string& name, Var x, int heads,
                      std::span<const Segment> segments);

// Optimization -----------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of every parameter. Increments store.step.
/// Throws MissingGradient if a parameter has no gradient of matching shape.
void adam_step(ParameterStore& store, const AdamConfig& config);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t checked = 0;
  /// Entries whose analytic and numeric gradients are both exactly zero.
  std::size_t exact_zeros = 0;
};

/// Compares backward() against central differences for every parameter entry
/// (or a seeded subset of `max_entries_per_parameter` entries of each). The
/// relative error is |a - n| / max(|a|, |n|, floor); the floor keeps entries
/// whose true gradient is numerically zero from dividing round-off by zero.
GradCheckReport grad_check(ParameterStore& store, const std::function<Var(Graph&)>& loss, double eps = 1e-5,
                           std::size_t max_entries_per_parameter = std::numeric_limits<std::size_t>::max(),
                           double floor = 1e-6, std::uint64_t seed = 0);

// Checkpoints --------------------------------------------------------------------

inline constexpr char kCheckpointMagic[] = "SPCK1";

/// Magic "SPCK1", u64 little-endian header length, header JSON (sorted keys),
/// then per parameter in header order float32 little-endian value, first
/// moment and second moment arrays. `meta` is stored under "meta".
void save_checkpoint(const std::string& path, const ParameterStore& store, const nlohmann::json& meta);
void write_checkpoint(std::ostream& out, const ParameterStore& store, const nlohmann::json& meta);

/// Parameters, moments and step count; returns the stored meta object.
/// Throws IoError or FormatError.
nlohmann::json load_checkpoint(const std::string& path, ParameterStore& store);
nlohmann::json read_checkpoint(std::istream& in, ParameterStore& store);

}  // namespace sport::nn
