#include "sport/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include "sport/error.hpp"

namespace sport::eval {

using nlohmann::json;

namespace {

// Stream offset for the extra best-of-k samples, far from the retry streams.
constexpr std::uint64_t kCandidateStream = 1ULL << 32;

double percent(std::size_t part, std::size_t whole) {
  return 100.0 * static_cast<double>(part) / static_cast<double>(whole);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void run_parallel(std::size_t tasks, unsigned jobs, const std::function<void(std::size_t)>& fn) {
  const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(tasks)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < tasks; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < tasks; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

InstanceResult score_prediction(const datagen::Instance& inst, const std::optional<Pose>& predicted,
                                const ScoreOptions& options) {
  InstanceResult r;
  r.id = inst.id;
  r.relation = inst.relation;
  r.predicted = predicted;
  if (!predicted) return r;
  r.sampled = true;
  r.translation_error =
      geometry::norm(predicted->translation - inst.goal_scene.objects.at(inst.movable).pose.translation);

  scene::Scene s = inst.initial_scene;
  s.objects.at(inst.movable).pose = *predicted;
  s = physics::settle(physics::place_object(s, inst.movable, options.snap));
  r.placed = s.objects[inst.movable].pose;

  std::vector<geometry::OrientedBox> refs;
  for (auto i : inst.references) refs.push_back(s.objects.at(i).world_box());
  try {
    r.relations_satisfied = scene::classify_pose(s.objects[inst.movable].world_box(), refs, options.delta);
  } catch (const ZeroDistance&) {
    r.relations_satisfied.clear();
  }
  r.pose_ok = std::find(r.relations_satisfied.begin(), r.relations_satisfied.end(), inst.relation) !=
              r.relations_satisfied.end();
  r.physical_ok = physics::validate_placement(s, inst.initial_scene, inst.movable, options.physics).valid();
  r.overall = r.pose_ok && r.physical_ok;
  return r;
}

std::uint64_t instance_seed(std::uint64_t seed, std::uint64_t instance_id) { return derive_seed(seed, instance_id); }

std::vector<InstanceResult> evaluate(const diffusion::Denoiser& model, std::span<const datagen::Instance> instances,
                                     const diffusion::NoiseSchedule& schedule, const EvalOptions& options) {
  if (options.chunk == 0) throw ConfigError("eval chunk size must be positive");
  if (options.best_of_k < 1) throw ConfigError("best_of_k must be at least 1");
  std::vector<InstanceResult> results(instances.size());
  const std::size_t chunks = (instances.size() + options.chunk - 1) / options.chunk;
  run_parallel(chunks, options.jobs, [&](std::size_t c) {
    const std::size_t begin = c * options.chunk;
    const std::size_t end = std::min(instances.size(), begin + options.chunk);
    std::vector<diffusion::Conditioning> conds;
    conds.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) conds.push_back(model.condition(instances[i]));
    std::vector<const diffusion::Conditioning*> batch;
    for (const auto& cond : conds) batch.push_back(&cond);
    std::vector<std::uint64_t> base(batch.size());
    for (std::size_t i = begin; i < end; ++i) base[i - begin] = instance_seed(options.seed, instances[i].id);

    const auto samples = diffusion::sample(model, batch, schedule, model.workspace(), base, options.sampling);
    for (std::size_t i = begin; i < end; ++i) {
      const auto& s = samples[i - begin];
      results[i] = score_prediction(instances[i], s.pose, options.scoring);
      results[i].attempts = s.attempts;
    }
    if (options.best_of_k > 1) {
      std::vector<bool> any(batch.size());
      for (std::size_t i = begin; i < end; ++i) any[i - begin] = results[i].overall;
      for (int k = 1; k < options.best_of_k; ++k) {
        std::vector<std::uint64_t> seeds(batch.size());
        for (std::size_t j = 0; j < seeds.size(); ++j)
          seeds[j] = derive_seed(base[j], kCandidateStream + static_cast<std::uint64_t>(k));
        const auto extra = diffusion::sample(model, batch, schedule, model.workspace(), seeds, options.sampling);
        for (std::size_t i = begin; i < end; ++i)
          if (score_prediction(instances[i], extra[i - begin].pose, options.scoring).overall) any[i - begin] = true;
      }
      for (std::size_t i = begin; i < end; ++i) results[i].best_of_k_overall = any[i - begin];
    }
  });
  return results;
}

EvalReport aggregate(std::span<const InstanceResult> results) {
  if (results.empty()) throw EmptyResults("no evaluation results to aggregate");
  EvalReport rep;
  rep.count = results.size();
  double err = 0.0;
  std::size_t sampled = 0, best = 0;
  bool has_best = false;
  for (const auto& r : results) {
    rep.pose_ok += r.pose_ok;
    rep.physical_ok += r.physical_ok;
    rep.overall += r.overall;
    if (r.sampled) {
      ++sampled;
      err += r.translation_error;
    } else {
      ++rep.sampling_failures;
    }
    auto& rel = rep.per_relation[r.relation];
    ++rel.count;
    rel.pose_ok += r.pose_ok;
    if (r.best_of_k_overall) {
      has_best = true;
      best += *r.best_of_k_overall;
    }
  }
  rep.pose_accuracy = percent(rep.pose_ok, rep.count);
  rep.physical_realism = percent(rep.physical_ok, rep.count);
  rep.overall_success = percent(rep.overall, rep.count);
  rep.mean_translation_error = sampled ? err / static_cast<double>(sampled) : 0.0;
  for (auto& [rel, st] : rep.per_relation) st.pose_accuracy = percent(st.pose_ok, st.count);
  if (has_best) rep.best_of_k_success = percent(best, rep.count);
  return rep;
}

bool satisfies_metric_order(double pose_accuracy, double physical_realism, double overall_success) {
  return overall_success <= std::min(pose_accuracy, physical_realism);
}

json EvalReport::to_json() const {
  json rel = json::object();
  for (const auto& [r, st] : per_relation)
    rel[std::string(scene::to_string(r))] = {
        {"count", st.count}, {"pose_ok", st.pose_ok}, {"pose_accuracy", st.pose_accuracy}};
  json j = {{"schema_version", kReportSchemaVersion},
            {"count", count},
            {"pose_ok", pose_ok},
            {"physical_ok", physical_ok},
            {"overall", overall},
            {"sampling_failures", sampling_failures},
            {"pose_accuracy", pose_accuracy},
            {"physical_realism", physical_realism},
            {"overall_success", overall_success},
            {"mean_translation_error", mean_translation_error},
            {"per_relation", rel},
            {"best_of_k", best_of_k},
            {"best_of_k_success", best_of_k_success ? json(*best_of_k_success) : json(nullptr)},
            {"meta", meta}};
  return j;
}

EvalReport EvalReport::from_json(const json& j) {
  try {
    if (j.at("schema_version").get<int>() != kReportSchemaVersion) throw FormatError("unsupported report schema");
    EvalReport r;
    r.count = j.at("count").get<std::size_t>();
    r.pose_ok = j.at("pose_ok").get<std::size_t>();
    r.physical_ok = j.at("physical_ok").get<std::size_t>();
    r.overall = j.at("overall").get<std::size_t>();
    r.sampling_failures = j.at("sampling_failures").get<std::size_t>();
    r.pose_accuracy = j.at("pose_accuracy").get<double>();
    r.physical_realism = j.at("physical_realism").get<double>();
    r.overall_success = j.at("overall_success").get<double>();
    r.mean_translation_error = j.at("mean_translation_error").get<double>();
    for (const auto& [name, st] : j.at("per_relation").items()) {
      const auto rel = scene::relation_from_string(name);
      if (!rel) throw FormatError("unknown relation '" + name + "' in report");
      r.per_relation[*rel] = {st.at("count").get<std::size_t>(), st.at("pose_ok").get<std::size_t>(),
                              st.at("pose_accuracy").get<double>()};
    }
    r.best_of_k = j.at("best_of_k").get<int>();
    if (!j.at("best_of_k_success").is_null()) r.best_of_k_success = j.at("best_of_k_success").get<double>();
    r.meta = j.at("meta");
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
}

void write_report(const EvalReport& report, const std::string& path) { scene::write_json_file(report.to_json(), path); }

std::string results_csv(std::span<const InstanceResult> results) {
  std::ostringstream out;
  out << "id,pose_ok,physical_ok,overall,tx,ty,tz,r00,r01,r02,r10,r11,r12,r20,r21,r22\n";
  for (const auto& r : results) {
    out << r.id << ',' << int(r.pose_ok) << ',' << int(r.physical_ok) << ',' << int(r.overall);
    if (r.placed) {
      const auto& t = r.placed->translation;
      out << ',' << format_double(t.x) << ',' << format_double(t.y) << ',' << format_double(t.z);
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) out << ',' << format_double(r.placed->rotation(a, b));
    } else {
      for (int i = 0; i < 12; ++i) out << ",nan";
    }
    out << '\n';
  }
  return out.str();
}

void write_results_csv(std::span<const InstanceResult> results, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << results_csv(results);
  if (!out) throw IoError("write failed: " + path);
}

std::string summary_table(const EvalReport& r) {
  char buf[160];
  std::string s;
  std::snprintf(buf, sizeof buf, "%-18s %10s\n", "metric", "value");
  s += buf;
  std::snprintf(buf, sizeof buf, "%-18s %10zu\n", "instances", r.count);
  s += buf;
  std::snprintf(buf, sizeof buf, "%-18s %9.2f%%\n", "pose accuracy", r.pose_accuracy);
  s += buf;
  std::snprintf(buf, sizeof buf, "%-18s %9.2f%%\n", "physical realism", r.physical_realism);
  s += buf;
  std::snprintf(buf, sizeof buf, "%-18s %9.2f%%\n", "overall success", r.overall_success);
  s += buf;
  std::snprintf(buf, sizeof buf, "%-18s %8.4f m\n", "mean trans. error", r.mean_translation_error);
  s += buf;
  if (r.best_of_k_success) {
    std::snprintf(buf, sizeof buf, "best of %-10d %9.2f%%\n", r.best_of_k, *r.best_of_k_success);
    s += buf;
  }
  s += "\nper relation       count  pose acc.\n";
  for (const auto& [rel, st] : r.per_relation) {
    std::snprintf(buf, sizeof buf, "%-18s %5zu %9.2f%%\n", std::string(scene::to_string(rel)).c_str(), st.count,
                  st.pose_accuracy);
    s += buf;
  }
  return s;
}

}  // namespace sport::eval
