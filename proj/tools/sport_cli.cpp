#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "sport/config.hpp"
#include "sport/datagen.hpp"
#include "sport/diffusion.hpp"
#include "sport/error.hpp"
#include "sport/eval.hpp"
#include "sport/render.hpp"
#include "sport/text.hpp"

using namespace sport;
namespace fs = std::filesystem;

namespace {

enum ExitCode : int {
  kOk = 0,
  kIoFailure = 1,
  kConfigFailure = 2,
  kGenerationExhausted = 3,
  kNonFiniteLoss = 4,
  kUnparseable = 5,
  kDegenerate = 6,
};

/// --seed, then SPORT_SEED, then `fallback`.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("SPORT_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::strlen(env)) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("SPORT_SEED is not an unsigned integer: '") + env + "'");
  }
  return fallback;
}

std::vector<scene::Relation> parse_relations(const std::string& list) {
  std::vector<scene::Relation> out;
  std::stringstream ss(list);
  std::string token;
  while (std::getline(ss, token, ',')) {
    const auto rel = scene::relation_from_string(token);
    if (!rel) throw ConfigError("unknown relation '" + token + "'");
    out.push_back(*rel);
  }
  if (out.empty()) throw ConfigError("no relations given");
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<datagen::Instance> select_split(const datagen::Dataset& data, const std::string& split) {
  if (split.empty()) return data.instances;
  const auto it = data.manifest.splits.find(split);
  if (it == data.manifest.splits.end()) throw ConfigError("dataset has no split '" + split + "'");
  const std::set<std::uint64_t> ids(it->second.begin(), it->second.end());
  std::vector<datagen::Instance> out;
  for (const auto& inst : data.instances)
    if (ids.count(inst.id)) out.push_back(inst);
  return out;
}

// gen-data ---------------------------------------------------------------------------

struct GenOptions {
  std::string out;
  std::size_t count = 2000;
  std::optional<std::uint64_t> seed;
  std::string relations = "left,right,front,behind,on_top_of,between";
  int objects_min = 0;
  int objects_max = 0;
  bool balanced = false;
  unsigned jobs = 1;
  std::size_t variants = 4;
  std::string split = "train";
};

int cmd_gen_data(const GenOptions& o) {
  datagen::DatasetSpec spec;
  spec.count = o.count;
  spec.master_seed = resolve_seed(o.seed, 0);
  spec.relations = parse_relations(o.relations);
  spec.balanced = o.balanced;
  spec.min_objects = o.objects_min;
  spec.max_objects = o.objects_max;
  if ((o.objects_min > 0) != (o.objects_max > 0))
    throw ConfigError("--objects-min and --objects-max must be given together");
  datagen::Dataset data;
  data.catalog = datagen::default_catalog(o.variants, 0);
  try {
    data.instances = datagen::generate_dataset(data.catalog, spec, o.jobs);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  data.manifest = datagen::make_manifest(data.instances, spec.master_seed, o.split);
  datagen::write_dataset(o.out, data);
  for (const auto& [rel, n] : data.manifest.relation_counts) std::cout << rel << ' ' << n << '\n';
  return kOk;
}

// train ------------------------------------------------------------------------------

struct TrainOptions {
  std::string data;
  std::string config;
  std::string out;
  std::string resume;
  std::string loss_log;
  std::string split;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainOptions& o) {
  const auto dataset = datagen::read_dataset(o.data);
  const auto instances = select_split(dataset, o.split);
  if (instances.empty()) throw ConfigError("no training instances in " + o.data);

  std::unique_ptr<diffusion::Denoiser> model;
  config::RunConfig run;
  int first_epoch = 0;
  if (!o.resume.empty()) {
    if (!o.config.empty()) throw ConfigError("--config cannot be combined with --resume");
    auto loaded = diffusion::load_model(o.resume);
    run.train = loaded.config;
    const auto text = loaded.model->text_encoder().describe();
    if (text.at("kind") == "sidecar") run.text_sidecar = text.at("path").get<std::string>();
    first_epoch = loaded.epochs_done;
    model = std::move(loaded.model);
  } else {
    if (!o.config.empty()) run = config::load_run_config(o.config);
    const bool seed_in_file =
        !o.config.empty() && config::parse_key_values([&] {
                               std::ifstream in(o.config, std::ios::binary);
                               std::stringstream ss;
                               ss << in.rdbuf();
                               return ss.str();
                             }()).count("seed");
    if (!seed_in_file || o.seed) run.train.seed = resolve_seed(o.seed, run.train.seed);
  }
  if (o.epochs) run.train.epochs = *o.epochs;
  if (!o.resume.empty() && o.seed) throw ConfigError("--seed cannot be combined with --resume");
  run.validate();
  if (!model) {
    std::shared_ptr<const encoder::TextEncoder> text;
    if (!run.text_sidecar.empty())
      text = std::make_shared<encoder::SidecarTextEncoder>(run.text_sidecar, run.train.model.model_dim);
    model = std::make_unique<diffusion::Denoiser>(run.train.model, run.train.workspace, text, run.train.seed);
  }
  std::cerr << "# resolved config\n" << run.to_text() << "# start epoch = " << first_epoch << '\n';

  std::vector<diffusion::TrainingExample> examples;
  examples.reserve(instances.size());
  for (const auto& inst : instances) examples.push_back(diffusion::make_example(*model, inst));

  const std::string log_path = o.loss_log.empty() ? o.out + ".loss.csv" : o.loss_log;
  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw IoError("cannot open " + log_path + " for writing");
  log << "epoch,mean_loss\n";
  diffusion::train(*model, examples, run.train, first_epoch, [&](const diffusion::EpochStats& s) {
    log << s.epoch << ',' << format_double(s.mean_loss) << '\n';
    log.flush();
    std::cerr << "epoch " << s.epoch << " loss " << s.mean_loss << " step " << s.step << '\n';
  });
  if (!log) throw IoError("write failed: " + log_path);
  diffusion::save_model(o.out, *model, run.train, first_epoch + run.train.epochs);
  return kOk;
}

// sample -----------------------------------------------------------------------------

struct SampleCliOptions {
  std::string model;
  std::string scene;
  std::string instruction;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool strict = false;
};

int cmd_sample(const SampleCliOptions& o) {
  const auto loaded = diffusion::load_model(o.model);
  const scene::Scene input = scene::scene_from_json(scene::read_json_file(o.scene));
  const std::uint64_t seed = resolve_seed(o.seed, 0);

  std::vector<std::string> descriptors;
  for (const auto& obj : input.objects) descriptors.push_back(scene::descriptor(obj.model));
  const auto parsed = datagen::parse_instruction(o.instruction, descriptors);
  auto index_of = [&](const std::string& d) {
    std::size_t found = descriptors.size();
    for (std::size_t i = 0; i < descriptors.size(); ++i) {
      if (descriptors[i] != d) continue;
      if (found != descriptors.size()) throw UnparseableInstruction("'" + d + "' names more than one object");
      found = i;
    }
    if (found == descriptors.size()) throw UnparseableInstruction("no object matches '" + d + "'");
    return found;
  };
  const std::size_t movable = index_of(parsed.movable);
  std::vector<std::size_t> refs;
  for (const auto& r : parsed.references) refs.push_back(index_of(r));

  scene::Scene roled = input;
  for (auto& obj : roled.objects) obj.role = scene::Role::Irrelevant;
  roled.objects[movable].role = scene::Role::Movable;
  for (auto r : refs) roled.objects[r].role = scene::Role::Reference;

  const auto clouds = datagen::render_clouds(roled, derive_seed(seed, 0));
  const auto& model = *loaded.model;
  const auto cond = model.condition(o.instruction, roled, clouds, movable, refs, seed);
  const auto pose = diffusion::sample_one(model, cond, loaded.config.diffusion.schedule(), model.workspace(),
                                          derive_seed(seed, 1), {.strict_paper_update = o.strict});

  scene::Scene goal = input;
  goal.objects[movable].pose = pose;
  fs::create_directories(o.out);
  scene::write_json_file(scene::to_json(goal), (fs::path(o.out) / "goal_scene.json").string());
  scene::Scene roled_goal = roled;
  roled_goal.objects[movable].pose = pose;
  render::write_svg(render::render_top_down(roled, roled_goal), (fs::path(o.out) / "render.svg").string());
  std::cout << "movable " << input.objects[movable].model.id << " relation " << scene::to_string(parsed.relation)
            << '\n';
  return kOk;
}

// eval -------------------------------------------------------------------------------

struct EvalCliOptions {
  std::string model;
  std::string data;
  std::string report;
  std::string csv;
  std::string split;
  std::optional<std::uint64_t> seed;
  unsigned jobs = 1;
  int best_of_k = 1;
  bool strict = false;
};

int cmd_eval(const EvalCliOptions& o) {
  const auto loaded = diffusion::load_model(o.model);
  const auto dataset = datagen::read_dataset(o.data);
  const auto instances = select_split(dataset, o.split);
  if (instances.empty()) throw ConfigError("no instances to evaluate in " + o.data);
  eval::EvalOptions opts;
  opts.seed = resolve_seed(o.seed, 0);
  opts.jobs = o.jobs;
  opts.best_of_k = o.best_of_k;
  opts.sampling.strict_paper_update = o.strict;
  opts.scoring.delta = loaded.config.delta;
  const auto results = eval::evaluate(*loaded.model, instances, loaded.config.diffusion.schedule(), opts);
  auto report = eval::aggregate(results);
  report.best_of_k = o.best_of_k;
  report.meta = {{"seed", opts.seed},
                 {"chunk", opts.chunk},
                 {"best_of_k", opts.best_of_k},
                 {"strict_paper_update", o.strict},
                 {"split", o.split},
                 {"dataset_seed", dataset.manifest.master_seed},
                 {"epochs_done", loaded.epochs_done},
                 {"delta", opts.scoring.delta}};
  eval::write_report(report, o.report);
  if (!o.csv.empty()) eval::write_results_csv(results, o.csv);
  std::cout << eval::summary_table(report);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language-conditioned goal pose generation for tabletop rearrangement"};
  app.require_subcommand(1);

  GenOptions gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  g->add_option("--out", gen.out, "Output dataset directory")->required();
  g->add_option("--count", gen.count, "Number of instances");
  g->add_option("--seed", gen.seed, "Master seed (falls back to SPORT_SEED, then 0)");
  g->add_option("--relations", gen.relations, "Comma-separated relations");
  g->add_option("--objects-min", gen.objects_min, "Minimum objects per scene");
  g->add_option("--objects-max", gen.objects_max, "Maximum objects per scene");
  g->add_flag("--balanced", gen.balanced, "Cycle through the relations instead of drawing them");
  g->add_option("--jobs", gen.jobs, "Worker threads");
  g->add_option("--variants", gen.variants, "Catalog variants per category");
  g->add_option("--split", gen.split, "Split name recorded in the manifest");

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "Train the denoiser");
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--config", tr.config, "Flat key = value config file");
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--resume", tr.resume, "Checkpoint to continue from");
  t->add_option("--loss-log", tr.loss_log, "Loss CSV path (default <out>.loss.csv)");
  t->add_option("--split", tr.split, "Train on this manifest split only");
  t->add_option("--epochs", tr.epochs, "Epochs to run, overriding the config");
  t->add_option("--seed", tr.seed, "Training seed (falls back to the config, then SPORT_SEED)");

  SampleCliOptions sa;
  auto* s = app.add_subcommand("sample", "Generate a goal pose for one scene and instruction");
  s->add_option("--model", sa.model, "Checkpoint path")->required();
  s->add_option("--scene", sa.scene, "Scene JSON")->required();
  s->add_option("--instruction", sa.instruction, "Placement instruction")->required();
  s->add_option("--out", sa.out, "Output directory")->required();
  s->add_option("--seed", sa.seed, "Sampling seed (falls back to SPORT_SEED, then 0)");
  s->add_flag("--strict-update", sa.strict, "Use sqrt(1 - alpha_t) in the reverse update");

  EvalCliOptions ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  e->add_option("--model", ev.model, "Checkpoint path")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--report", ev.report, "Report JSON path")->required();
  e->add_option("--csv", ev.csv, "Per-instance CSV path");
  e->add_option("--split", ev.split, "Evaluate this manifest split only");
  e->add_option("--seed", ev.seed, "Sampling seed (falls back to SPORT_SEED, then 0)");
  e->add_option("--jobs", ev.jobs, "Worker threads");
  e->add_option("--best-of-k", ev.best_of_k, "Samples per instance for the separate best-of-k rate");
  e->add_flag("--strict-update", ev.strict, "Use sqrt(1 - alpha_t) in the reverse update");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kConfigFailure;
  }

  try {
    if (g->parsed()) return cmd_gen_data(gen);
    if (t->parsed()) return cmd_train(tr);
    if (s->parsed()) return cmd_sample(sa);
    if (e->parsed()) return cmd_eval(ev);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return kConfigFailure;
  } catch (const EmptyResults& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return kConfigFailure;
  } catch (const GenerationExhausted& err) {
    std::cerr << "generation exhausted: " << err.what() << '\n';
    return kGenerationExhausted;
  } catch (const NonFiniteLoss& err) {
    std::cerr << "non-finite loss: " << err.what() << '\n';
    return kNonFiniteLoss;
  } catch (const UnparseableInstruction& err) {
    std::cerr << "unparseable instruction: " << err.what() << '\n';
    return kUnparseable;
  } catch (const SamplingDegenerate& err) {
    std::cerr << "sampling failed: " << err.what() << '\n';
    return kDegenerate;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kIoFailure;
  }
  return kConfigFailure;
}
