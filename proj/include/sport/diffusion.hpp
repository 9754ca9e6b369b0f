#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sport/datagen.hpp"
#include "sport/encoder.hpp"
#include "sport/nn.hpp"
#include "sport/pose_vector.hpp"

namespace sport::diffusion {

using encoder::Conditioning;
using nn::Graph;
using nn::Mat;
using nn::Var;

/// Linear beta schedule. Index t runs over 1..T.
class NoiseSchedule {
 public:
  /// Throws std::invalid_argument unless 0 < beta_start <= beta_end < 1, T >= 1.
  static NoiseSchedule linear(int T, double beta_start, double beta_end);

  int T() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_.at(index(t)); }
  double alpha(int t) const { return alpha_.at(index(t)); }
  double alpha_bar(int t) const { return alpha_bar_.at(index(t)); }
  double sigma(int t) const { return std::sqrt(beta(t)); }

 private:
  std::size_t index(int t) const;
  std::vector<double> beta_, alpha_, alpha_bar_;
};

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps. Throws BadTimestep.
PoseVector forward_noise(const NoiseSchedule& schedule, const PoseVector& x0, int t, const PoseVector& eps);

/// One reverse update: (x_t - c * eps_hat) / sqrt(alpha_t) + sigma_t z, with
/// c = beta_t / sqrt(1 - abar_t), or beta_t / sqrt(1 - alpha_t) when `strict`.
PoseVector reverse_step(const NoiseSchedule& schedule, const PoseVector& x_t, int t, const PoseVector& eps_hat,
                        const PoseVector& z, bool strict = false);

struct DiffusionConfig {
  int T = 200;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  /// Use sqrt(1 - alpha_t) instead of sqrt(1 - abar_t) in the reverse update.
  bool strict_paper_update = false;

  NoiseSchedule schedule() const { return NoiseSchedule::linear(T, beta_start, beta_end); }
  nlohmann::json to_json() const;
  static DiffusionConfig from_json(const nlohmann::json& j);
  bool operator==(const DiffusionConfig&) const = default;
};

/// Predicts the noise of the movable pose for a batch of scenes.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  using Bound = std::function<Mat(const Mat& x_t, std::span<const int> t)>;
  /// A predictor fixed to one batch of conditionings; it may cache whatever
  /// does not depend on the diffusion state. x_t has one row per sequence.
  virtual Bound bind(std::span<const Conditioning* const> batch) const = 0;
};

/// Transformer denoiser over the conditioning tokens; the head reads the
/// movable object's token.
class Denoiser final : public NoisePredictor {
 public:
  Denoiser(const encoder::ModelConfig& model, const scene::Workspace& workspace,
           std::shared_ptr<const encoder::TextEncoder> text, std::uint64_t init_seed);

  const encoder::ModelConfig& model_config() const { return model_; }
  const scene::Workspace& workspace() const { return workspace_; }
  const encoder::TextEncoder& text_encoder() const { return *text_; }
  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }

  /// Prepares the inputs for a scene with ground-truth roles.
  Conditioning condition(const std::string& instruction, const scene::Scene& scene,
                         std::span<const geometry::PointCloud> clouds, std::size_t movable,
                         std::span<const std::size_t> references, std::uint64_t fps_seed) const;
  Conditioning condition(const datagen::Instance& instance) const;

  struct Output {
    /// One 9-D prediction per sequence.
    Var eps;
    /// Head output at every token; only the movable rows reach `eps`.
    Var all_tokens;
    encoder::TokenSequence tokens;
  };
  Output forward(Graph& g, std::span<const Conditioning* const> batch, Var x_t, std::span<const int> t) const;
  Output forward(Graph& g, std::span<const Conditioning* const> batch, const encoder::EncodedConditioning& encoded,
                 Var x_t, std::span<const int> t) const;

  Bound bind(std::span<const Conditioning* const> batch) const override;

 private:
  encoder::ModelConfig model_;
  scene::Workspace workspace_;
  std::shared_ptr<const encoder::TextEncoder> text_;
  nn::ParameterStore store_;
};

struct TrainingExample {
  Conditioning cond;
  /// Goal pose vector of the movable object.
  PoseVector x0;
};

TrainingExample make_example(const Denoiser& model, const datagen::Instance& instance);

/// Noise draws of one loss evaluation, exposed so tests can fix them.
struct NoiseDraw {
  std::vector<int> t;
  Mat eps;
};
NoiseDraw draw_noise(std::size_t batch, int T, Rng& rng);

struct LossTrace {
  Var loss;
  Denoiser::Output output;
  Mat x_t;
};

/// Mean over the batch of ||eps - eps_hat||_1, noising only the movable pose.
LossTrace training_loss(Graph& g, const Denoiser& model, std::span<const TrainingExample* const> batch,
                        const NoiseSchedule& schedule, const NoiseDraw& noise);

struct SampleOptions {
  bool strict_paper_update = false;
  /// Fresh-seed retries after a degenerate rotation.
  int max_retries = 5;
};

struct SampleResult {
  /// Empty when every attempt decoded to a degenerate rotation.
  std::optional<geometry::Pose> pose;
  PoseVector raw{};
  int attempts = 0;
};

/// Reverse diffusion from x_T ~ N(0, I) for every conditioning in the batch;
/// sequence i draws its noise from seeds[i] (attempt k uses
/// derive_seed(seeds[i], k)).
std::vector<SampleResult> sample(const NoisePredictor& model, std::span<const Conditioning* const> batch,
                                 const NoiseSchedule& schedule, const scene::Workspace& workspace,
                                 std::span<const std::uint64_t> seeds, const SampleOptions& options = {});

/// Single-scene sampling; throws SamplingDegenerate.
geometry::Pose sample_one(const NoisePredictor& model, const Conditioning& cond, const NoiseSchedule& schedule,
                          const scene::Workspace& workspace, std::uint64_t seed, const SampleOptions& options = {});

enum class LrSchedule { Constant, Cosine };

std::string_view to_string(LrSchedule schedule);
/// Throws ConfigError on an unknown name.
LrSchedule lr_schedule_from_string(std::string_view name);

struct TrainConfig {
  DiffusionConfig diffusion;
  encoder::ModelConfig model;
  scene::Workspace workspace;
  int epochs = 50;
  int batch = 64;
  double lr = 1e-4;
  /// Cosine decays from lr to lr_min over the configured epochs, counted from
  /// step 0, then holds lr_min.
  LrSchedule lr_schedule = LrSchedule::Constant;
  double lr_min = 0.0;
  std::uint64_t seed = 0;
  double delta = scene::kDefaultDelta;

  /// Learning rate of optimizer step `step` (0-based) with `steps_per_epoch`.
  double learning_rate(std::int64_t step, std::int64_t steps_per_epoch) const;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  std::int64_t step = 0;
};

/// Shuffled minibatch Adam on training_loss, epochs [first_epoch, first_epoch
/// + epochs). Epoch e shuffles and draws noise from derive_seed(seed, e).
/// Throws NonFiniteLoss.
std::vector<EpochStats> train(Denoiser& model, std::span<const TrainingExample> data, const TrainConfig& config,
                              int first_epoch = 0, const std::function<void(const EpochStats&)>& on_epoch = {});

/// Checkpoint meta for a model trained with `config` after `epochs_done`.
nlohmann::json checkpoint_meta(const Denoiser& model, const TrainConfig& config, int epochs_done);
void save_model(const std::string& path, const Denoiser& model, const TrainConfig& config, int epochs_done);

struct LoadedModel {
  std::unique_ptr<Denoiser> model;
  TrainConfig config;
  int epochs_done = 0;
};
LoadedModel load_model(const std::string& path);

}  // namespace sport::diffusion
