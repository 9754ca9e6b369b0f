#include "sport/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <cstdio>

#include "sport/error.hpp"

namespace sport::diffusion {

using geometry::Pose;
using geometry::Vec3;
using nlohmann::json;

// Pose vectors ----------------------------------------------------------------------

namespace {

struct Frame {
  Vec3 center;
  Vec3 half;
};

Frame frame_of(const scene::Workspace& ws) {
  return {{0.5 * (ws.x_min + ws.x_max), 0.5 * (ws.y_min + ws.y_max), 0.5 * ws.z_max},
          {0.5 * (ws.x_max - ws.x_min), 0.5 * (ws.y_max - ws.y_min), 0.5 * ws.z_max}};
}

}  // namespace

Vec3 normalize_point(const Vec3& p, const scene::Workspace& ws) {
  const Frame f = frame_of(ws);
  return {(p.x - f.center.x) / f.half.x, (p.y - f.center.y) / f.half.y, (p.z - f.center.z) / f.half.z};
}

Vec3 denormalize_point(const Vec3& p, const scene::Workspace& ws) {
  const Frame f = frame_of(ws);
  return {p.x * f.half.x + f.center.x, p.y * f.half.y + f.center.y, p.z * f.half.z + f.center.z};
}

PoseVector pose_to_vector(const Pose& pose, const scene::Workspace& ws) {
  Vec3 s = pose.translation;
  const Vec3 clamped{std::clamp(s.x, ws.x_min, ws.x_max), std::clamp(s.y, ws.y_min, ws.y_max), std::clamp(s.z, 0.0, ws.z_max)};
  if (!(clamped == s)) {
    std::fprintf(stderr, "warning: translation (%g, %g, %g) outside the workspace was clamped\n", s.x, s.y, s.z);
    s = clamped;
  }
  const Vec3 n = normalize_point(s, ws);
  const Vec3 a = pose.rotation.column(0);
  const Vec3 b = pose.rotation.column(1);
  return {n.x, n.y, n.z, a.x, a.y, a.z, b.x, b.y, b.z};
}

Pose vector_to_pose(const PoseVector& v, const scene::Workspace& ws) {
  Pose p;
  p.translation = denormalize_point({v[0], v[1], v[2]}, ws);
  p.rotation = geometry::rotation_from_vectors({v[3], v[4], v[5]}, {v[6], v[7], v[8]});
  return p;
}

// Schedule ----------------------------------------------------------------------------

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("T must be at least 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw std::invalid_argument("need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  double prod = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double b = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
    s.beta_.push_back(b);
    s.alpha_.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bar_.push_back(prod);
  }
  return s;
}

std::size_t NoiseSchedule::index(int t) const {
  if (t < 1 || t > T()) throw BadTimestep("timestep " + std::to_string(t) + " outside 1.." + std::to_string(T()));
  return static_cast<std::size_t>(t - 1);
}

PoseVector forward_noise(const NoiseSchedule& schedule, const PoseVector& x0, int t, const PoseVector& eps) {
  const double ab = schedule.alpha_bar(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  PoseVector x{};
  for (std::size_t i = 0; i < 9; ++i) x[i] = a * x0[i] + b * eps[i];
  return x;
}

PoseVector reverse_step(const NoiseSchedule& schedule, const PoseVector& x_t, int t, const PoseVector& eps_hat,
                        const PoseVector& z, bool strict) {
  const double alpha = schedule.alpha(t);
  const double denom = std::sqrt(1.0 - (strict ? alpha : schedule.alpha_bar(t)));
  const double c = (1.0 - alpha) / denom;
  const double inv = 1.0 / std::sqrt(alpha);
  const double sigma = schedule.sigma(t);
  PoseVector x{};
  for (std::size_t i = 0; i < 9; ++i) x[i] = inv * (x_t[i] - c * eps_hat[i]) + sigma * z[i];
  return x;
}

json DiffusionConfig::to_json() const {
  return {{"T", T}, {"beta_start", beta_start}, {"beta_end", beta_end}, {"strict_paper_update", strict_paper_update}};
}

DiffusionConfig DiffusionConfig::from_json(const json& j) {
  try {
    DiffusionConfig c;
    c.T = j.at("T").get<int>();
    c.beta_start = j.at("beta_start").get<double>();
    c.beta_end = j.at("beta_end").get<double>();
    c.strict_paper_update = j.at("strict_paper_update").get<bool>();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed diffusion config: ") + e.what());
  }
}

// Denoiser --------------------------------------------------------------------------------

namespace {

std::string backbone_block(int i) { return "backbone.block" + std::to_string(i); }

}  // namespace

Denoiser::Denoiser(const encoder::ModelConfig& model, const scene::Workspace& workspace,
                   std::shared_ptr<const encoder::TextEncoder> text, std::uint64_t init_seed)
    : model_(model), workspace_(workspace), text_(std::move(text)) {
  model_.validate();
  if (!text_) text_ = std::make_shared<encoder::HashTextEncoder>(model_.model_dim);
  if (text_->dim() != model_.model_dim) throw ConfigError("text embedding width must equal model_dim");
  Rng rng(init_seed);
  encoder::init_encoder(store_, model_, rng);
  for (int i = 0; i < model_.blocks; ++i)
    nn::init_transformer_block(store_, backbone_block(i), model_.model_dim, model_.model_dim * model_.ffn_mult, rng);
  nn::init_layer_norm(store_, "backbone.ln", model_.model_dim);
  nn::init_linear(store_, "head", model_.model_dim, 9, rng);
}

Conditioning Denoiser::condition(const std::string& instruction, const scene::Scene& scene,
                                 std::span<const geometry::PointCloud> clouds, std::size_t movable,
                                 std::span<const std::size_t> references, std::uint64_t fps_seed) const {
  return encoder::make_conditioning(text_->encode(instruction), scene, clouds, movable, references, model_, workspace_,
                                    fps_seed);
}

Conditioning Denoiser::condition(const datagen::Instance& inst) const {
  return condition(inst.instruction, inst.initial_scene, inst.clouds, inst.movable, inst.references, inst.id);
}

Denoiser::Output Denoiser::forward(Graph& g, std::span<const Conditioning* const> batch, Var x_t,
                                   std::span<const int> t) const {
  return forward(g, batch, encoder::encode_conditioning(g, store_, model_, batch), x_t, t);
}

Denoiser::Output Denoiser::forward(Graph& g, std::span<const Conditioning* const> batch,
                                   const encoder::EncodedConditioning& encoded, Var x_t, std::span<const int> t) const {
  Output out;
  out.tokens = encoder::assemble_tokens(g, store_, model_, batch, encoded, x_t, t);
  Var h = out.tokens.embeddings;
  for (int i = 0; i < model_.blocks; ++i) h = nn::transformer_block(g, store_, backbone_block(i), h, model_.heads, out.tokens.segments);
  out.all_tokens = nn::linear(g, store_, "head", nn::layer_norm(g, store_, "backbone.ln", h));
  out.eps = nn::gather_rows(g, out.all_tokens, out.tokens.movable_rows);
  return out;
}

NoisePredictor::Bound Denoiser::bind(std::span<const Conditioning* const> batch) const {
  struct Cache {
    Mat cloud, text, camera;
    std::vector<const Conditioning*> batch;
  };
  auto cache = std::make_shared<Cache>();
  {
    Graph g(false);
    const auto e = encoder::encode_conditioning(g, store_, model_, batch);
    cache->cloud = g.value(e.cloud);
    cache->text = g.value(e.text);
    cache->camera = g.value(e.camera);
  }
  cache->batch.assign(batch.begin(), batch.end());
  return [this, cache](const Mat& x_t, std::span<const int> t) {
    Graph g(false);
    const encoder::EncodedConditioning e{g.constant(cache->cloud), g.constant(cache->text), g.constant(cache->camera)};
    return Mat(g.value(forward(g, cache->batch, e, g.constant(x_t), t).eps));
  };
}

// Training loss --------------------------------------------------------------------------

TrainingExample make_example(const Denoiser& model, const datagen::Instance& instance) {
  TrainingExample ex;
  ex.cond = model.condition(instance);
  ex.x0 = pose_to_vector(instance.goal_scene.objects.at(instance.movable).pose, model.workspace());
  return ex;
}

NoiseDraw draw_noise(std::size_t batch, int T, Rng& rng) {
  NoiseDraw d;
  d.eps.resize(static_cast<Eigen::Index>(batch), 9);
  for (std::size_t b = 0; b < batch; ++b) {
    d.t.push_back(1 + static_cast<int>(rng.index(static_cast<std::size_t>(T))));
    for (int i = 0; i < 9; ++i) d.eps(static_cast<Eigen::Index>(b), i) = rng.normal();
  }
  return d;
}

LossTrace training_loss(Graph& g, const Denoiser& model, std::span<const TrainingExample* const> batch,
                        const NoiseSchedule& schedule, const NoiseDraw& noise) {
  const auto B = static_cast<Eigen::Index>(batch.size());
  if (B == 0 || static_cast<Eigen::Index>(noise.t.size()) != B || noise.eps.rows() != B || noise.eps.cols() != 9)
    throw AlignmentError("noise draws do not match the batch");
  LossTrace trace;
  trace.x_t.resize(B, 9);
  std::vector<const Conditioning*> conds;
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto* ex = batch[static_cast<std::size_t>(b)];
    conds.push_back(&ex->cond);
    PoseVector eps{};
    for (int i = 0; i < 9; ++i) eps[static_cast<std::size_t>(i)] = noise.eps(b, i);
    const PoseVector x = forward_noise(schedule, ex->x0, noise.t[static_cast<std::size_t>(b)], eps);
    for (int i = 0; i < 9; ++i) trace.x_t(b, i) = x[static_cast<std::size_t>(i)];
  }
  trace.output = model.forward(g, conds, g.constant(trace.x_t), noise.t);
  trace.loss = nn::l1_loss(g, trace.output.eps, noise.eps);
  return trace;
}

// Sampling -------------------------------------------------------------------------------

std::vector<SampleResult> sample(const NoisePredictor& model, std::span<const Conditioning* const> batch,
                                 const NoiseSchedule& schedule, const scene::Workspace& workspace,
                                 std::span<const std::uint64_t> seeds, const SampleOptions& options) {
  if (seeds.size() != batch.size()) throw AlignmentError("one seed per conditioning is required");
  std::vector<SampleResult> results(batch.size());
  std::vector<std::size_t> pending(batch.size());
  for (std::size_t i = 0; i < pending.size(); ++i) pending[i] = i;
  const int T = schedule.T();
  for (int attempt = 0; attempt <= options.max_retries && !pending.empty(); ++attempt) {
    const auto P = static_cast<Eigen::Index>(pending.size());
    std::vector<const Conditioning*> sub;
    std::vector<Rng> rngs;
    for (auto i : pending) {
      sub.push_back(batch[i]);
      rngs.emplace_back(derive_seed(seeds[i], static_cast<std::uint64_t>(attempt)));
    }
    Mat x(P, 9);
    for (Eigen::Index r = 0; r < P; ++r)
      for (int c = 0; c < 9; ++c) x(r, c) = rngs[static_cast<std::size_t>(r)].normal();
    const auto predict = model.bind(sub);
    std::vector<int> tvec(static_cast<std::size_t>(P));
    for (int t = T; t >= 1; --t) {
      std::fill(tvec.begin(), tvec.end(), t);
      const Mat eps = predict(x, tvec);
      for (Eigen::Index r = 0; r < P; ++r) {
        PoseVector xt{}, e{}, z{};
        for (int c = 0; c < 9; ++c) {
          xt[static_cast<std::size_t>(c)] = x(r, c);
          e[static_cast<std::size_t>(c)] = eps(r, c);
          z[static_cast<std::size_t>(c)] = t > 1 ? rngs[static_cast<std::size_t>(r)].normal() : 0.0;
        }
        const PoseVector next = reverse_step(schedule, xt, t, e, z, options.strict_paper_update);
        for (int c = 0; c < 9; ++c) x(r, c) = next[static_cast<std::size_t>(c)];
      }
    }
    std::vector<std::size_t> still;
    for (Eigen::Index r = 0; r < P; ++r) {
      auto& res = results[pending[static_cast<std::size_t>(r)]];
      for (int c = 0; c < 9; ++c) res.raw[static_cast<std::size_t>(c)] = x(r, c);
      res.attempts = attempt + 1;
      try {
        if (!x.row(r).allFinite()) throw DegenerateRotation("non-finite sample");
        res.pose = vector_to_pose(res.raw, workspace);
      } catch (const DegenerateRotation&) {
        still.push_back(pending[static_cast<std::size_t>(r)]);
      }
    }
    pending = std::move(still);
  }
  return results;
}

Pose sample_one(const NoisePredictor& model, const Conditioning& cond, const NoiseSchedule& schedule,
                const scene::Workspace& workspace, std::uint64_t seed, const SampleOptions& options) {
  const std::array<const Conditioning*, 1> batch{&cond};
  const std::array<std::uint64_t, 1> seeds{seed};
  auto res = sample(model, batch, schedule, workspace, seeds, options);
  if (!res[0].pose)
    throw SamplingDegenerate("degenerate rotation after " + std::to_string(res[0].attempts) + " attempts");
  return *res[0].pose;
}

// Training ---------------------------------------------------------------------------------

std::string_view to_string(LrSchedule schedule) {
  return schedule == LrSchedule::Cosine ? "cosine" : "constant";
}

LrSchedule lr_schedule_from_string(std::string_view name) {
  if (name == "constant") return LrSchedule::Constant;
  if (name == "cosine") return LrSchedule::Cosine;
  throw ConfigError("unknown lr schedule '" + std::string(name) + "'");
}

double TrainConfig::learning_rate(std::int64_t step, std::int64_t steps_per_epoch) const {
  if (lr_schedule == LrSchedule::Constant) return lr;
  const auto total = static_cast<double>(steps_per_epoch) * epochs;
  if (total <= 0 || static_cast<double>(step) >= total) return lr_min;
  return lr_min + (lr - lr_min) * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total));
}

std::vector<EpochStats> train(Denoiser& model, std::span<const TrainingExample> data, const TrainConfig& config,
                              int first_epoch, const std::function<void(const EpochStats&)>& on_epoch) {
  if (data.empty()) throw ConfigError("training set is empty");
  if (config.batch <= 0 || config.epochs < 0) throw ConfigError("batch must be positive and epochs non-negative");
  const NoiseSchedule schedule = config.diffusion.schedule();
  const auto steps_per_epoch =
      static_cast<std::int64_t>((data.size() + static_cast<std::size_t>(config.batch) - 1) / static_cast<std::size_t>(config.batch));
  std::vector<EpochStats> stats;
  for (int epoch = first_epoch; epoch < first_epoch + config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
      std::vector<const TrainingExample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data[order[i]]);
      const NoiseDraw noise = draw_noise(batch.size(), schedule.T(), rng);
      Graph g;
      const LossTrace trace = training_loss(g, model, batch, schedule, noise);
      const double loss = g.value(trace.loss)(0, 0);
      if (!std::isfinite(loss))
        throw NonFiniteLoss("loss is " + std::to_string(loss) + " at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(model.params().step + 1));
      model.params().zero_grad();
      g.backward(trace.loss);
      nn::adam_step(model.params(), {.lr = config.learning_rate(model.params().step, steps_per_epoch)});
      total += loss * static_cast<double>(batch.size());
    }
    stats.push_back({epoch, total / static_cast<double>(data.size()), model.params().step});
    if (on_epoch) on_epoch(stats.back());
  }
  return stats;
}

json checkpoint_meta(const Denoiser& model, const TrainConfig& config, int epochs_done) {
  return {{"model", model.model_config().to_json()},
          {"diffusion", config.diffusion.to_json()},
          {"workspace", scene::to_json(model.workspace())},
          {"text_encoder", model.text_encoder().describe()},
          {"train", {{"epochs", config.epochs}, {"batch", config.batch}, {"lr", config.lr}, {"seed", config.seed},
                     {"delta", config.delta}, {"lr_schedule", to_string(config.lr_schedule)}, {"lr_min", config.lr_min}}},
          {"epochs_done", epochs_done}};
}

void save_model(const std::string& path, const Denoiser& model, const TrainConfig& config, int epochs_done) {
  nn::save_checkpoint(path, model.params(), checkpoint_meta(model, config, epochs_done));
}

LoadedModel load_model(const std::string& path) {
  nn::ParameterStore raw;
  const json meta = nn::load_checkpoint(path, raw);
  LoadedModel out;
  try {
    out.config.model = encoder::ModelConfig::from_json(meta.at("model"));
    out.config.diffusion = DiffusionConfig::from_json(meta.at("diffusion"));
    out.config.workspace = scene::workspace_from_json(meta.at("workspace"));
    const json& tr = meta.at("train");
    out.config.epochs = tr.at("epochs").get<int>();
    out.config.batch = tr.at("batch").get<int>();
    out.config.lr = tr.at("lr").get<double>();
    out.config.seed = tr.at("seed").get<std::uint64_t>();
    out.config.delta = tr.at("delta").get<double>();
    out.config.lr_schedule = lr_schedule_from_string(tr.at("lr_schedule").get<std::string>());
    out.config.lr_min = tr.at("lr_min").get<double>();
    out.epochs_done = meta.at("epochs_done").get<int>();
    auto text = encoder::make_text_encoder(meta.at("text_encoder"), out.config.model.model_dim);
    out.model = std::make_unique<Denoiser>(out.config.model, out.config.workspace, std::move(text), 0);
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint meta: ") + e.what());
  }
  auto& store = out.model->params();
  if (store.items().size() != raw.items().size()) throw FormatError("checkpoint does not match its architecture");
  for (auto& [name, p] : raw.items()) {
    if (!store.contains(name)) throw FormatError("checkpoint parameter '" + name + "' is not in the model");
    auto& q = store.at(name);
    if (q.value.rows() != p.value.rows() || q.value.cols() != p.value.cols())
      throw FormatError("shape mismatch for parameter '" + name + "'");
    q = std::move(p);
  }
  store.step = raw.step;
  return out;
}

}  // namespace sport::diffusion
