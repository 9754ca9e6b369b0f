#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "cli_runner.hpp"
#include "doctest.h"
#include "sport/datagen.hpp"
#include "sport/diffusion.hpp"
#include "sport/eval.hpp"

using namespace sport;
namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const auto d = fs::temp_directory_path() / "sport_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

using cli_test::slurp;
using cli_test::tree;
using cli_test::write_file;

cli_test::Run run(const std::string& args, const std::string& env = "") {
  return cli_test::run(SPORT_CLI_PATH, args, work_dir(), env);
}

std::string p(const std::string& name) { return (work_dir() / name).string(); }

const char* kToyConfig =
    "T = 20\nepochs = 2\nbatch = 8\nlr = 0.001\nmodel_dim = 16\nblocks = 1\nheads = 2\nffn_mult = 2\n"
    "cloud_dim = 8\ncloud_blocks = 1\ncloud_heads = 2\ncloud_points = 8\nseed = 4\n";

/// A small dataset and a toy checkpoint trained on it, built once.
void ensure_toy_model() {
  static bool done = false;
  if (done) return;
  REQUIRE(run("gen-data --out " + p("toy") + " --count 32 --seed 3 --relations left,right --balanced").code == 0);
  write_file(p("toy.cfg"), kToyConfig);
  REQUIRE(run("train --data " + p("toy") + " --config " + p("toy.cfg") + " --out " + p("toy.spck")).code == 0);
  done = true;
}

}  // namespace

TEST_CASE("gen-data balanced counts and determinism") {
  const auto r = run("gen-data --out " + p("g1") + " --count 12 --seed 7 --relations left,right --balanced");
  REQUIRE(r.code == 0);
  CHECK(r.out == "left 6\nright 6\n");
  REQUIRE(run("gen-data --out " + p("g2") + " --count 12 --seed 7 --relations left,right --balanced --jobs 3").code ==
          0);
  CHECK(tree(p("g1")) == tree(p("g2")));
  REQUIRE(run("gen-data --out " + p("g3") + " --count 12 --relations left,right --balanced", "SPORT_SEED=7").code ==
          0);
  CHECK(tree(p("g1")) == tree(p("g3")));
  REQUIRE(run("gen-data --out " + p("g4") + " --count 12 --seed 8 --relations left,right --balanced").code == 0);
  CHECK(tree(p("g1")) != tree(p("g4")));
  const auto data = datagen::read_dataset(p("g1"));
  CHECK(data.instances.size() == 12);
}

TEST_CASE("gen-data object count range") {
  REQUIRE(run("gen-data --out " + p("g5") + " --count 6 --seed 2 --relations between --objects-min 4 --objects-max 5")
              .code == 0);
  for (const auto& inst : datagen::read_dataset(p("g5")).instances) {
    CHECK(inst.initial_scene.objects.size() >= 4);
    CHECK(inst.initial_scene.objects.size() <= 5);
  }
  CHECK(run("gen-data --out " + p("g6") + " --count 6 --relations between --objects-min 2 --objects-max 5").code == 2);
}

TEST_CASE("gen-data config errors exit 2") {
  const auto r = run("gen-data --out " + p("bad") + " --count 4 --relations left,sideways");
  CHECK(r.code == 2);
  CHECK(r.err.find("sideways") != std::string::npos);
  CHECK(run("gen-data --count 4").code == 2);
  CHECK(run("gen-data --out " + p("bad") + " --count 4", "SPORT_SEED=abc").code == 2);
  CHECK(run("no-such-command").code == 2);
}

TEST_CASE("train writes a checkpoint and a loss log, and resumes") {
  ensure_toy_model();
  CHECK(slurp(p("toy.spck")).substr(0, 5) == "SPCK1");
  const auto log = slurp(p("toy.spck.loss.csv"));
  CHECK(std::count(log.begin(), log.end(), '\n') == 3);
  CHECK(log.rfind("epoch,mean_loss\n0,", 0) == 0);

  // Same inputs, same bytes.
  REQUIRE(run("train --data " + p("toy") + " --config " + p("toy.cfg") + " --out " + p("toy2.spck")).code == 0);
  CHECK(slurp(p("toy.spck")) == slurp(p("toy2.spck")));
  CHECK(slurp(p("toy.spck.loss.csv")) == slurp(p("toy2.spck.loss.csv")));

  const auto before = diffusion::load_model(p("toy.spck"));
  REQUIRE(run("train --data " + p("toy") + " --resume " + p("toy.spck") + " --epochs 1 --out " + p("toy3.spck")).code ==
          0);
  const auto after = diffusion::load_model(p("toy3.spck"));
  CHECK(after.epochs_done == 3);
  CHECK(after.model->params().step > before.model->params().step);
  CHECK(slurp(p("toy3.spck.loss.csv")).find("\n2,") != std::string::npos);
}

TEST_CASE("train error exits") {
  ensure_toy_model();
  write_file(p("hot.cfg"), std::regex_replace(std::string(kToyConfig), std::regex("lr = 0.001"), "lr = 1e300"));
  CHECK(run("train --data " + p("toy") + " --config " + p("hot.cfg") + " --out " + p("hot.spck")).code == 4);
  write_file(p("unknown.cfg"), "learning_rate = 1\n");
  CHECK(run("train --data " + p("toy") + " --config " + p("unknown.cfg") + " --out " + p("u.spck")).code == 2);
  CHECK(run("train --data " + p("missing") + " --out " + p("u.spck")).code == 1);
}

TEST_CASE("sample replaces only the movable pose and renders every object once") {
  ensure_toy_model();
  const auto data = datagen::read_dataset(p("toy"));
  const auto& inst = data.instances[1];
  scene::write_json_file(scene::to_json(inst.initial_scene), p("scene.json"));
  const std::string args = "sample --model " + p("toy.spck") + " --scene " + p("scene.json") + " --instruction \"" +
                           inst.instruction + "\" --seed 9 --out ";
  REQUIRE(run(args + p("s1")).code == 0);
  const auto goal = scene::scene_from_json(scene::read_json_file(p("s1/goal_scene.json")));
  REQUIRE(goal.objects.size() == inst.initial_scene.objects.size());
  for (std::size_t i = 0; i < goal.objects.size(); ++i) {
    CHECK(goal.objects[i].model == inst.initial_scene.objects[i].model);
    CHECK(goal.objects[i].role == inst.initial_scene.objects[i].role);
    if (i != inst.movable) CHECK(goal.objects[i].pose == inst.initial_scene.objects[i].pose);
  }
  CHECK_FALSE(goal.objects[inst.movable].pose == inst.initial_scene.objects[inst.movable].pose);
  CHECK(goal.workspace == inst.initial_scene.workspace);

  const auto svg = slurp(p("s1/render.svg"));
  for (const auto& obj : goal.objects) {
    const std::string needle = "data-object=\"" + obj.model.id + "\"";
    const auto first = svg.find(needle);
    CHECK(first != std::string::npos);
    CHECK(svg.find(needle, first + 1) == std::string::npos);
  }
  CHECK(svg.find("class=\"before\"") != std::string::npos);

  REQUIRE(run(args + p("s2")).code == 0);
  CHECK(tree(p("s1")) == tree(p("s2")));

  const auto absent = run("sample --model " + p("toy.spck") + " --scene " + p("scene.json") +
                          " --instruction \"Put the golden teapot left of the purple whale\" --out " + p("s3"));
  CHECK(absent.code == 5);
}

TEST_CASE("eval report, CSV and determinism") {
  ensure_toy_model();
  const std::string base = "eval --model " + p("toy.spck") + " --data " + p("toy") + " --seed 1 ";
  const auto r = run(base + "--report " + p("r1.json") + " --csv " + p("r1.csv"));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("overall success") != std::string::npos);
  const auto rep = eval::EvalReport::from_json(scene::read_json_file(p("r1.json")));
  CHECK(rep.count == 32);
  CHECK(eval::satisfies_metric_order(rep.pose_accuracy, rep.physical_realism, rep.overall_success));
  CHECK(rep.per_relation.size() == 2);
  const auto csv = slurp(p("r1.csv"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 33);

  REQUIRE(run(base + "--jobs 3 --report " + p("r2.json") + " --csv " + p("r2.csv")).code == 0);
  CHECK(slurp(p("r1.json")) == slurp(p("r2.json")));
  CHECK(slurp(p("r1.csv")) == slurp(p("r2.csv")));

  REQUIRE(run("gen-data --out " + p("empty") + " --count 0").code == 0);
  CHECK(run("eval --model " + p("toy.spck") + " --data " + p("empty") + " --report " + p("r3.json")).code == 2);
  CHECK(run(base + "--split nowhere --report " + p("r4.json")).code == 2);
}
