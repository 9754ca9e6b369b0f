#include "sport/encoder.hpp"

#include <cmath>
#include <fstream>

#include "sport/error.hpp"
#include "sport/text.hpp"

namespace sport::encoder {

using nlohmann::json;

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (model_dim <= 0 || blocks < 0 || heads <= 0 || ffn_mult <= 0) fail("model sizes must be positive");
  if (model_dim % heads != 0) fail("model_dim must be divisible by heads");
  if (model_dim % 2 != 0) fail("model_dim must be even for the sinusoidal time embedding");
  if (cloud_dim < 0 || cloud_blocks < 0 || cloud_heads <= 0 || cloud_points <= 0) fail("cloud encoder sizes must be positive");
  if (cloud_width() % cloud_heads != 0) fail("cloud width must be divisible by cloud_heads");
  if (max_text_tokens <= 0) fail("max_text_tokens must be positive");
}

json ModelConfig::to_json() const {
  return {{"model_dim", model_dim},       {"blocks", blocks},           {"heads", heads},
          {"ffn_mult", ffn_mult},         {"cloud_dim", cloud_dim},     {"cloud_blocks", cloud_blocks},
          {"cloud_heads", cloud_heads},   {"cloud_points", cloud_points}, {"max_text_tokens", max_text_tokens}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  try {
    c.model_dim = j.at("model_dim").get<int>();
    c.blocks = j.at("blocks").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ffn_mult = j.at("ffn_mult").get<int>();
    c.cloud_dim = j.at("cloud_dim").get<int>();
    c.cloud_blocks = j.at("cloud_blocks").get<int>();
    c.cloud_heads = j.at("cloud_heads").get<int>();
    c.cloud_points = j.at("cloud_points").get<int>();
    c.max_text_tokens = j.at("max_text_tokens").get<int>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

// Text ------------------------------------------------------------------------------

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

HashTextEncoder::HashTextEncoder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim <= 0) throw ConfigError("text embedding width must be positive");
}

Mat HashTextEncoder::embed_token(std::string_view token) const {
  Rng rng(derive_seed(seed_, fnv1a(token)));
  Mat row(1, dim_);
  for (int i = 0; i < dim_; ++i) row(0, i) = rng.normal();
  return row;
}

TextEncoding HashTextEncoder::encode(std::string_view text) const {
  TextEncoding out;
  out.tokens = tokenize(text);
  if (out.tokens.empty()) throw EmptyText("instruction has no tokens");
  out.embeddings.resize(static_cast<Eigen::Index>(out.tokens.size()), dim_);
  for (std::size_t i = 0; i < out.tokens.size(); ++i)
    out.embeddings.row(static_cast<Eigen::Index>(i)) = embed_token(out.tokens[i]);
  return out;
}

json HashTextEncoder::describe() const { return {{"kind", "hash"}, {"seed", seed_}}; }

SidecarTextEncoder::SidecarTextEncoder(const std::string& path, int dim, std::uint64_t fallback_seed)
    : path_(path), fallback_(dim, fallback_seed) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open text sidecar '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    try {
      const json j = json::parse(line);
      const auto token = j.at("token").get<std::string>();
      const auto vec = j.at("vector").get<std::vector<double>>();
      if (static_cast<int>(vec.size()) != dim)
        throw FormatError(where + ": vector has " + std::to_string(vec.size()) + " entries, expected " + std::to_string(dim));
      Mat row(1, dim);
      for (int i = 0; i < dim; ++i) row(0, i) = vec[static_cast<std::size_t>(i)];
      if (!table_.emplace(token, std::move(row)).second) throw FormatError(where + ": duplicate token '" + token + "'");
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
}

TextEncoding SidecarTextEncoder::encode(std::string_view text) const {
  TextEncoding out;
  out.tokens = tokenize(text);
  if (out.tokens.empty()) throw EmptyText("instruction has no tokens");
  out.embeddings.resize(static_cast<Eigen::Index>(out.tokens.size()), dim());
  for (std::size_t i = 0; i < out.tokens.size(); ++i) {
    auto it = table_.find(out.tokens[i]);
    out.embeddings.row(static_cast<Eigen::Index>(i)) = it != table_.end() ? it->second : fallback_.embed_token(out.tokens[i]);
  }
  return out;
}

json SidecarTextEncoder::describe() const {
  json d = fallback_.describe();
  d["kind"] = "sidecar";
  d["path"] = path_;
  return d;
}

std::shared_ptr<const TextEncoder> make_text_encoder(const json& description, int dim) {
  try {
    const auto kind = description.at("kind").get<std::string>();
    const auto seed = description.at("seed").get<std::uint64_t>();
    if (kind == "hash") return std::make_shared<HashTextEncoder>(dim, seed);
    if (kind == "sidecar")
      return std::make_shared<SidecarTextEncoder>(description.at("path").get<std::string>(), dim, seed);
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed text encoder description: ") + e.what());
  }
  throw FormatError("unknown text encoder kind");
}

// Conditioning -------------------------------------------------------------------------

Mat cloud_input(const geometry::PointCloud& cloud, int n_sample, std::uint64_t fps_seed, const scene::Workspace& ws) {
  if (cloud.empty()) throw EmptyCloud("object cloud is empty");
  const auto sampled = geometry::farthest_point_sample(cloud, static_cast<std::size_t>(n_sample), fps_seed);
  Mat m(n_sample, 3);
  for (int i = 0; i < n_sample; ++i) {
    const auto p = diffusion::normalize_point(sampled.points[static_cast<std::size_t>(i)], ws);
    m(i, 0) = p.x;
    m(i, 1) = p.y;
    m(i, 2) = p.z;
  }
  return m;
}

Conditioning make_conditioning(const TextEncoding& text, const scene::Scene& scene,
                               std::span<const geometry::PointCloud> clouds, std::size_t movable,
                               std::span<const std::size_t> references, const ModelConfig& config,
                               const scene::Workspace& ws, std::uint64_t fps_seed) {
  const std::size_t n = scene.objects.size();
  if (clouds.size() != n) throw AlignmentError("one cloud per scene object is required");
  if (movable >= n) throw AlignmentError("movable index out of range");
  if (references.size() > 2) throw AlignmentError("at most two reference objects");
  if (text.count() == 0 || text.embeddings.rows() != static_cast<Eigen::Index>(text.count()))
    throw AlignmentError("text encoding is empty or inconsistent");

  Conditioning c;
  c.types.assign(n, TypeId::IrrelevantObject);
  c.slots.assign(n, kObjectSlots - 1);
  c.types[movable] = TypeId::MovableObject;
  c.slots[movable] = 0;
  for (std::size_t k = 0; k < references.size(); ++k) {
    const auto r = references[k];
    if (r >= n || r == movable || c.types[r] == TypeId::ReferenceObject)
      throw AlignmentError("bad reference index " + std::to_string(r));
    c.types[r] = TypeId::ReferenceObject;
    c.slots[r] = 1 + static_cast<int>(k);
  }
  c.movable = movable;

  const auto rows = std::min<Eigen::Index>(text.embeddings.rows(), config.max_text_tokens);
  c.text = text.embeddings.topRows(rows);

  c.points.resize(static_cast<Eigen::Index>(n) * config.cloud_points, 3);
  c.poses.resize(static_cast<Eigen::Index>(n), 9);
  for (std::size_t k = 0; k < n; ++k) {
    c.points.middleRows(static_cast<Eigen::Index>(k) * config.cloud_points, config.cloud_points) =
        cloud_input(clouds[k], config.cloud_points, fps_seed, ws);
    const auto v = diffusion::pose_to_vector(scene.objects[k].pose, ws);
    for (int i = 0; i < 9; ++i) c.poses(static_cast<Eigen::Index>(k), i) = v[static_cast<std::size_t>(i)];
  }

  const auto& cam = scene.camera;
  c.camera.resize(1, 15);
  for (int r = 0; r < 3; ++r)
    for (int col = 0; col < 3; ++col) c.camera(0, 3 * r + col) = cam.pose.rotation(r, col);
  c.camera(0, 9) = cam.pose.translation.x;
  c.camera(0, 10) = cam.pose.translation.y;
  c.camera(0, 11) = cam.pose.translation.z;
  c.camera(0, 12) = cam.focal / 100.0;
  c.camera(0, 13) = cam.width / 100.0;
  c.camera(0, 14) = cam.height / 100.0;
  return c;
}

// Parameters and encoders ----------------------------------------------------------------

namespace {

Mat normal_table(Rng& rng, int rows, int cols, double s) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * rng.normal();
  return m;
}

std::string cloud_block(int i) { return "cloud.block" + std::to_string(i); }

}  // namespace

void init_encoder(ParameterStore& store, const ModelConfig& config, Rng& rng) {
  config.validate();
  const int d = config.model_dim;
  const int c = config.cloud_width();
  nn::init_linear(store, "text.proj", d, d, rng);
  nn::init_mlp(store, "camera.mlp", 15, d, d, rng);
  nn::init_mlp(store, "cloud.in", 3, c, c, rng);
  for (int i = 0; i < config.cloud_blocks; ++i) nn::init_transformer_block(store, cloud_block(i), c, c * config.ffn_mult, rng);
  nn::init_mlp(store, "pose.mlp", 9, d, d, rng);
  nn::init_linear(store, "object.proj", c + d, d, rng);
  store.add("embed.type", normal_table(rng, kTypeCount, d, 0.5));
  store.add("embed.position", normal_table(rng, 1 + config.max_text_tokens + kObjectSlots, d, 0.5));
  nn::init_mlp(store, "time.mlp", d, d, d, rng);
}

Var encode_object_cloud(Graph& g, const ParameterStore& store, const ModelConfig& config, Var points, int n_points) {
  const auto rows = g.value(points).rows();
  if (n_points <= 0 || rows == 0 || rows % n_points != 0) throw AlignmentError("point rows are not whole objects");
  std::vector<nn::Segment> segs;
  for (int s = 0; s < rows; s += n_points) segs.push_back({s, n_points});
  Var h = nn::mlp(g, store, "cloud.in", points);
  for (int i = 0; i < config.cloud_blocks; ++i) h = nn::transformer_block(g, store, cloud_block(i), h, config.cloud_heads, segs);
  return nn::group_max(g, h, n_points);
}

Var encode_pose(Graph& g, const ParameterStore& store, Var poses) {
  if (!g.value(poses).allFinite()) throw NonFinite("pose vector has non-finite entries");
  return nn::mlp(g, store, "pose.mlp", poses);
}

Mat time_features(std::span<const int> t, int dim) {
  Mat m(static_cast<Eigen::Index>(t.size()), dim);
  const int half = dim / 2;
  for (std::size_t r = 0; r < t.size(); ++r) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
      m(static_cast<Eigen::Index>(r), 2 * i) = std::sin(t[r] * freq);
      m(static_cast<Eigen::Index>(r), 2 * i + 1) = std::cos(t[r] * freq);
    }
  }
  return m;
}

EncodedConditioning encode_conditioning(Graph& g, const ParameterStore& store, const ModelConfig& config,
                                        std::span<const Conditioning* const> batch) {
  if (batch.empty()) throw AlignmentError("empty batch");
  Eigen::Index point_rows = 0, text_rows = 0;
  for (const auto* c : batch) {
    if (c->points.rows() != static_cast<Eigen::Index>(c->object_count()) * config.cloud_points || c->points.cols() != 3)
      throw AlignmentError("conditioning clouds do not match the model's cloud size");
    if (c->text.rows() == 0 || c->text.cols() != config.model_dim)
      throw AlignmentError("conditioning text does not match the model width");
    point_rows += c->points.rows();
    text_rows += c->text.rows();
  }
  Mat points(point_rows, 3), text(text_rows, config.model_dim), camera(static_cast<Eigen::Index>(batch.size()), 15);
  Eigen::Index pr = 0, tr = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    points.middleRows(pr, batch[b]->points.rows()) = batch[b]->points;
    text.middleRows(tr, batch[b]->text.rows()) = batch[b]->text;
    camera.row(static_cast<Eigen::Index>(b)) = batch[b]->camera.row(0);
    pr += batch[b]->points.rows();
    tr += batch[b]->text.rows();
  }
  EncodedConditioning e;
  e.cloud = encode_object_cloud(g, store, config, g.constant(std::move(points)), config.cloud_points);
  e.text = nn::linear(g, store, "text.proj", g.constant(std::move(text)));
  e.camera = nn::mlp(g, store, "camera.mlp", g.constant(std::move(camera)));
  return e;
}

TokenSequence assemble_tokens(Graph& g, const ParameterStore& store, const ModelConfig& config,
                              std::span<const Conditioning* const> batch, const EncodedConditioning& encoded,
                              Var movable_poses, std::span<const int> t) {
  const auto B = static_cast<int>(batch.size());
  if (B == 0 || static_cast<int>(t.size()) != B || g.value(movable_poses).rows() != B || g.value(movable_poses).cols() != 9)
    throw AlignmentError("batch, timesteps and movable poses disagree");
  int text_rows = 0, object_rows = 0;
  for (const auto* c : batch) {
    text_rows += static_cast<int>(c->text.rows());
    object_rows += static_cast<int>(c->object_count());
  }
  if (g.value(encoded.text).rows() != text_rows || g.value(encoded.cloud).rows() != object_rows)
    throw AlignmentError("encoded conditioning does not match the batch");

  // Object pose inputs: initial poses, with the movable rows taken from the
  // diffusion state.
  Mat fixed(object_rows, 9);
  std::vector<int> movable_obj_rows;
  int orow = 0;
  for (const auto* c : batch) {
    fixed.middleRows(orow, static_cast<Eigen::Index>(c->object_count())) = c->poses;
    fixed.row(orow + static_cast<int>(c->movable)).setZero();
    movable_obj_rows.push_back(orow + static_cast<int>(c->movable));
    orow += static_cast<int>(c->object_count());
  }
  const Var pose_in = nn::add(g, g.constant(std::move(fixed)), nn::scatter_rows(g, movable_poses, movable_obj_rows, object_rows));
  const Var objects =
      nn::linear(g, store, "object.proj", nn::concat_cols(g, encoded.cloud, encode_pose(g, store, pose_in)));

  const std::array<Var, 3> parts{encoded.camera, encoded.text, objects};
  const Var stacked = nn::concat_rows(g, parts);

  TokenSequence seq;
  std::vector<int> order, seq_of_row;
  int text_base = B, object_base = B + text_rows, row = 0;
  for (int b = 0; b < B; ++b) {
    const auto* c = batch[static_cast<std::size_t>(b)];
    const int nt = static_cast<int>(c->text.rows());
    const int no = static_cast<int>(c->object_count());
    seq.segments.push_back({row, 1 + nt + no});
    order.push_back(b);
    seq.types.push_back(TypeId::Text);
    seq.positions.push_back(0);
    for (int i = 0; i < nt; ++i) {
      order.push_back(text_base + i);
      seq.types.push_back(TypeId::Text);
      seq.positions.push_back(1 + i);
    }
    for (int k = 0; k < no; ++k) {
      order.push_back(object_base + k);
      seq.types.push_back(c->types[static_cast<std::size_t>(k)]);
      seq.positions.push_back(1 + config.max_text_tokens + c->slots[static_cast<std::size_t>(k)]);
    }
    seq.movable_rows.push_back(row + 1 + nt + static_cast<int>(c->movable));
    for (int i = 0; i < 1 + nt + no; ++i) seq_of_row.push_back(b);
    text_base += nt;
    object_base += no;
    row += 1 + nt + no;
  }
  std::vector<int> type_rows;
  for (TypeId ty : seq.types) type_rows.push_back(static_cast<int>(ty));

  const Var content = nn::gather_rows(g, stacked, order);
  const Var type_emb = nn::gather_rows(g, g.param(store.at("embed.type")), type_rows);
  const Var pos_emb = nn::gather_rows(g, g.param(store.at("embed.position")), seq.positions);
  const Var time = nn::mlp(g, store, "time.mlp", g.constant(time_features(t, config.model_dim)));
  const Var time_emb = nn::gather_rows(g, time, seq_of_row);
  seq.embeddings = nn::add(g, nn::add(g, content, type_emb), nn::add(g, pos_emb, time_emb));
  seq.t.assign(t.begin(), t.end());
  return seq;
}

}  // namespace sport::encoder
