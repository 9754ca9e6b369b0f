#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sport/nn.hpp"
#include "sport/pose_vector.hpp"
#include "sport/scene.hpp"

namespace sport::encoder {

using nn::Graph;
using nn::Mat;
using nn::ParameterStore;
using nn::Var;

enum class TypeId { Text = 0, MovableObject = 1, ReferenceObject = 2, IrrelevantObject = 3 };
inline constexpr int kTypeCount = 4;
/// Position slots for object tokens: movable, first reference, second
/// reference, and one slot shared by every irrelevant object.
inline constexpr int kObjectSlots = 4;

struct ModelConfig {
  int model_dim = 128;
  int blocks = 4;
  int heads = 4;
  int ffn_mult = 4;
  /// Width of the point-cloud encoder; 0 means model_dim.
  int cloud_dim = 0;
  int cloud_blocks = 2;
  int cloud_heads = 4;
  int cloud_points = 256;
  int max_text_tokens = 32;

  int cloud_width() const { return cloud_dim > 0 ? cloud_dim : model_dim; }
  /// Throws ConfigError on inconsistent sizes.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct TextEncoding {
  std::vector<std::string> tokens;
  /// One row per token.
  Mat embeddings;

  std::size_t count() const { return tokens.size(); }
};

/// Frozen map from instruction text to per-token vectors.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual int dim() const = 0;
  /// Throws EmptyText when the text has no tokens.
  virtual TextEncoding encode(std::string_view text) const = 0;
  /// Enough to rebuild the encoder; stored in checkpoints.
  virtual nlohmann::json describe() const = 0;
};

/// Each token hashes (FNV-1a) to a seed that fills a standard-normal row.
class HashTextEncoder final : public TextEncoder {
 public:
  explicit HashTextEncoder(int dim, std::uint64_t seed = 0);
  int dim() const override { return dim_; }
  TextEncoding encode(std::string_view text) const override;
  nlohmann::json describe() const override;
  Mat embed_token(std::string_view token) const;

 private:
  int dim_;
  std::uint64_t seed_;
};

/// Vectors read from a JSON-lines file of {"token": ..., "vector": [...]}
/// records; tokens missing from the file fall back to the hash encoder.
class SidecarTextEncoder final : public TextEncoder {
 public:
  /// Throws IoError, or FormatError on malformed lines, duplicate tokens, or a
  /// vector length different from `dim`.
  SidecarTextEncoder(const std::string& path, int dim, std::uint64_t fallback_seed = 0);
  int dim() const override { return fallback_.dim(); }
  TextEncoding encode(std::string_view text) const override;
  nlohmann::json describe() const override;
  std::size_t vocabulary_size() const { return table_.size(); }

 private:
  std::string path_;
  std::map<std::string, Mat, std::less<>> table_;
  HashTextEncoder fallback_;
};

/// Rebuilds an encoder from describe() output.
std::shared_ptr<const TextEncoder> make_text_encoder(const nlohmann::json& description, int dim);

/// fnv1a-64 of the bytes.
std::uint64_t fnv1a(std::string_view s);

/// Model-independent inputs for one scene, prepared once and reused.
struct Conditioning {
  /// Frozen text embeddings, truncated to max_text_tokens rows.
  Mat text;
  /// cloud_points rows per object, workspace-normalized xyz.
  Mat points;
  /// Initial pose vector of every object (the movable row is replaced by the
  /// diffusion state).
  Mat poses;
  std::vector<TypeId> types;
  std::vector<int> slots;
  std::size_t movable = 0;
  /// Camera rotation (row-major), translation and intrinsics / 100.
  Mat camera;

  std::size_t object_count() const { return types.size(); }
};

/// Samples and normalizes one object's cloud. Throws EmptyCloud.
Mat cloud_input(const geometry::PointCloud& cloud, int n_sample, std::uint64_t fps_seed, const scene::Workspace& ws);

/// Throws AlignmentError when clouds, roles and scene objects disagree, and
/// EmptyCloud for an empty cloud.
Conditioning make_conditioning(const TextEncoding& text, const scene::Scene& scene,
                               std::span<const geometry::PointCloud> clouds, std::size_t movable,
                               std::span<const std::size_t> references, const ModelConfig& config,
                               const scene::Workspace& ws, std::uint64_t fps_seed);

void init_encoder(ParameterStore& store, const ModelConfig& config, Rng& rng);

/// Per-point MLP, self-attention within each object's points, max-pool.
/// `points` holds n_points consecutive rows per object; one output row each.
Var encode_object_cloud(Graph& g, const ParameterStore& store, const ModelConfig& config, Var points, int n_points);

/// Two-layer MLP from 9-D pose vectors to model_dim.
Var encode_pose(Graph& g, const ParameterStore& store, Var poses);

/// Sinusoidal features of integer timesteps, one row per entry.
Mat time_features(std::span<const int> t, int dim);

/// Parts of the token content that do not depend on the diffusion state,
/// stacked over a batch.
struct EncodedConditioning {
  Var cloud;
  Var text;
  Var camera;
};

EncodedConditioning encode_conditioning(Graph& g, const ParameterStore& store, const ModelConfig& config,
                                        std::span<const Conditioning* const> batch);

/// The sequences of a batch stacked row-wise: per sequence the camera token,
/// the text tokens, then the object tokens in scene order.
struct TokenSequence {
  Var embeddings;
  std::vector<nn::Segment> segments;
  std::vector<TypeId> types;
  std::vector<int> positions;
  /// Row of each sequence's movable-object token.
  std::vector<int> movable_rows;
  std::vector<int> t;
};

/// content + type embedding + position embedding + time embedding for every
/// token. `movable_poses` has one row per sequence.
TokenSequence assemble_tokens(Graph& g, const ParameterStore& store, const ModelConfig& config,
                              std::span<const Conditioning* const> batch, const EncodedConditioning& encoded,
                              Var movable_poses, std::span<const int> t);

}  // namespace sport::encoder
