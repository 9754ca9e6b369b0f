#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sport/datagen.hpp"
#include "sport/diffusion.hpp"
#include "sport/physics.hpp"

namespace sport::eval {

using geometry::Pose;
using scene::Relation;

inline constexpr int kReportSchemaVersion = 1;

struct InstanceResult {
  std::uint64_t id = 0;
  Relation relation = Relation::Left;
  /// False when every sampling attempt was degenerate.
  bool sampled = false;
  bool pose_ok = false;
  bool physical_ok = false;
  bool overall = false;
  /// Sampled pose before release onto its support.
  std::optional<Pose> predicted;
  /// Pose after release and settling; this is what the flags judge.
  std::optional<Pose> placed;
  std::vector<Relation> relations_satisfied;
  /// Distance between the sampled and the dataset goal translation (m).
  double translation_error = 0.0;
  int attempts = 0;
  /// Set when best-of-k is enabled: any of the k samples succeeds overall.
  std::optional<bool> best_of_k_overall;
};

struct ScoreOptions {
  double delta = scene::kDefaultDelta;
  physics::PhysicsParams physics;
  /// Gap a predicted pose may hover above its support and still be released
  /// onto it (m).
  double snap = 0.02;
};

/// Judges one predicted pose for an instance: the movable object is released
/// onto its support, the scene settles, then the relation and the physical
/// validity are checked. An empty prediction fails every flag.
InstanceResult score_prediction(const datagen::Instance& instance, const std::optional<Pose>& predicted,
                                const ScoreOptions& options = {});

struct EvalOptions {
  std::uint64_t seed = 0;
  /// Instances sampled together. Fixed so results do not depend on `jobs`.
  std::size_t chunk = 16;
  unsigned jobs = 1;
  /// Extra samples per instance for the separately reported best-of-k rate;
  /// 1 disables it.
  int best_of_k = 1;
  diffusion::SampleOptions sampling;
  ScoreOptions scoring;
};

/// Sampling seed of an instance.
std::uint64_t instance_seed(std::uint64_t seed, std::uint64_t instance_id);

/// Samples one goal pose per instance and scores it. Results are in input
/// order and identical for any `jobs`.
std::vector<InstanceResult> evaluate(const diffusion::Denoiser& model, std::span<const datagen::Instance> instances,
                                     const diffusion::NoiseSchedule& schedule, const EvalOptions& options = {});

struct RelationStats {
  std::size_t count = 0;
  std::size_t pose_ok = 0;
  double pose_accuracy = 0.0;
};

struct EvalReport {
  std::size_t count = 0;
  std::size_t pose_ok = 0;
  std::size_t physical_ok = 0;
  std::size_t overall = 0;
  std::size_t sampling_failures = 0;
  /// Percentages in [0, 100].
  double pose_accuracy = 0.0;
  double physical_realism = 0.0;
  double overall_success = 0.0;
  /// Over instances that produced a pose (m).
  double mean_translation_error = 0.0;
  std::map<Relation, RelationStats> per_relation;
  int best_of_k = 1;
  std::optional<double> best_of_k_success;
  /// Configuration and seeds needed to reproduce the run.
  nlohmann::json meta = nlohmann::json::object();

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

/// Throws EmptyResults.
EvalReport aggregate(std::span<const InstanceResult> results);

/// overall_success <= min(pose_accuracy, physical_realism).
bool satisfies_metric_order(double pose_accuracy, double physical_realism, double overall_success);

void write_report(const EvalReport& report, const std::string& path);
/// One row per instance: id, the three flags, then the placed pose as
/// translation (3) and row-major rotation (9).
std::string results_csv(std::span<const InstanceResult> results);
void write_results_csv(std::span<const InstanceResult> results, const std::string& path);
/// Human-readable table of the headline rates and the per-relation breakdown.
std::string summary_table(const EvalReport& report);

}  // namespace sport::eval
