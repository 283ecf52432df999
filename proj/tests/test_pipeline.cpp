#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>

#include "retina/pipeline.hpp"
#include "retina/synthetic.hpp"
#include "testutil.hpp"

using namespace retina;
namespace fs = std::filesystem;

namespace {

config::ExperimentConfig desk_config(const fs::path& root, const std::string& task,
                                     int images = 60) {
  synthetic::write_class_disk_dataset(root / "data", images, dataset::task_from_name(task), 32,
                                      2024);
  nlohmann::json j;
  j["task"] = task;
  j["seed"] = 7;
  j["paths"] = {{"manifest", (root / "data" / "manifest.csv").string()},
                {"image_dir", (root / "data" / "images").string()},
                {"output_dir", (root / "run").string()}};
  j["backbone"] = {{"name", "toy"}, {"input_size", 32}};
  j["head"] = {{"hidden_widths", {32, 16}}};
  j["trainer"] = {{"max_epochs", 12}, {"batch_size", 4}, {"patience", 8}};
  return config::parse(j);
}

}  // namespace

TEST_CASE("config validation rejects bad combinations before any work") {
  nlohmann::json j;
  j["backbone"] = {{"name", "vgg16"}, {"input_size", 299}};
  try {
    config::parse(j);
    FAIL("expected UnsupportedCombination");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnsupportedCombination);
  }

  SECTION("toy backbone cannot claim pretrained weights") {
    nlohmann::json bad;
    bad["backbone"] = {{"name", "toy"}, {"input_size", 32}, {"weights", "imagenet"}};
    CHECK_THROWS_AS(config::parse(bad), Error);
  }

  SECTION("re-initializing pretrained weights is contradictory") {
    nlohmann::json bad;
    bad["backbone"] = {{"name", "resnet50"}, {"input_size", 512}, {"weights", "imagenet"}};
    bad["trainer"] = {{"phase2_reinit", "all"}};
    CHECK_THROWS_AS(config::parse(bad), Error);
  }

  SECTION("--set overrides reach nested keys") {
    nlohmann::json doc;
    config::apply_override(doc, "trainer.max_epochs=5");
    config::apply_override(doc, "backbone.name=toy");
    config::apply_override(doc, "optimizer.kind=sgd");
    CHECK(doc["trainer"]["max_epochs"] == 5);
    CHECK(doc["backbone"]["name"] == "toy");
    auto cfg = config::parse(doc);
    CHECK(cfg.max_epochs == 5);
    CHECK(cfg.optimizer.kind == trainer::OptimizerKind::Sgd);
  }

  SECTION("phase resolution follows the two-phase protocol") {
    nlohmann::json doc;
    doc["phase"] = 2;
    doc["backbone"] = {{"name", "toy"}, {"input_size", 32}};
    auto cfg = config::parse(doc);
    CHECK(cfg.train_config().optimizer.learning_rate == Catch::Approx(1e-4));
    CHECK_FALSE(cfg.train_config().phase.backbone_frozen);

    doc["phase"] = 1;
    auto cfg1 = config::parse(doc);
    CHECK(cfg1.train_config().optimizer.learning_rate == Catch::Approx(1e-3));
    CHECK(cfg1.train_config().phase.backbone_frozen);
  }
}

TEST_CASE("cmd_prepare writes balanced splits and is seed-idempotent") {
  testutil::TempDir dir("prepare");
  auto cfg = desk_config(dir.path(), "five", 73);  // odd count => imbalanced across 5 classes

  auto artifacts = pipeline::cmd_prepare(cfg);
  CHECK(artifacts.files.count("splits/train.csv") == 1);
  CHECK(artifacts.files.count("splits/val.csv") == 1);
  CHECK(artifacts.files.count("splits/test.csv") == 1);
  CHECK(artifacts.files.count("splits/distribution.json") == 1);

  SECTION("train split is balanced, non-train splits carry no synthetic rows") {
    auto train = dataset::read_split_csv(cfg.output_dir / "splits" / "train.csv");
    auto dist = dataset::class_distribution(train, 5);
    CHECK(dist.max() == dist.min());
    for (const auto& part : {"val.csv", "test.csv"}) {
      for (const auto& rec : dataset::read_split_csv(cfg.output_dir / "splits" / part)) {
        CHECK_FALSE(rec.synthetic);
      }
    }
  }

  SECTION("rerun reproduces identical artifact hashes") {
    auto again = pipeline::cmd_prepare(cfg);
    CHECK(artifacts.files == again.files);
  }

  SECTION("a missing image is reported by id") {
    fs::remove(dir.path() / "data" / "images" / "img3.png");
    try {
      pipeline::cmd_prepare(cfg);
      FAIL("expected MissingFile");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::MissingFile);
      CHECK(std::string(e.what()).find("img3") != std::string::npos);
    }
  }
}

TEST_CASE("cmd_preprocess caches by content key and materializes augmentations") {
  testutil::TempDir dir("preproc");
  auto cfg = desk_config(dir.path(), "binary", 9);
  cfg.preprocess.target_size = 224;
  pipeline::cmd_prepare(cfg);

  auto first = pipeline::cmd_preprocess(cfg, /*materialize=*/false);
  CHECK(first.files.size() == 9);
  for (const auto& [path, hash] : first.files) {
    ImageBuffer img = read_png(cfg.output_dir / path);
    CHECK(img.width == 224);
    CHECK(img.height == 224);
  }

  SECTION("second run hits the cache and reproduces hashes") {
    auto cache_dir = pipeline::cache_root(cfg) / pipeline::preprocess_config_hash(cfg.preprocess);
    REQUIRE(fs::exists(cache_dir));
    const auto cache_count =
        std::distance(fs::directory_iterator(cache_dir), fs::directory_iterator{});
    CHECK(cache_count == 9);

    auto second = pipeline::cmd_preprocess(cfg, false);
    CHECK(first.files == second.files);
  }

  SECTION("materialize writes augmented synthetic pixels") {
    auto train = dataset::read_split_csv(cfg.output_dir / "splits" / "train.csv");
    std::size_t synthetic = 0;
    for (const auto& rec : train) synthetic += rec.synthetic ? 1 : 0;
    auto artifacts = pipeline::cmd_preprocess(cfg, /*materialize=*/true);
    std::size_t materialized = 0;
    for (const auto& [path, hash] : artifacts.files) {
      if (path.rfind("augmented/", 0) == 0) ++materialized;
    }
    CHECK(materialized == synthetic);
  }

  SECTION("parallel jobs produce the same artifact hashes") {
    auto serial = pipeline::cmd_preprocess(cfg, false);
    config::ExperimentConfig par = cfg;
    par.jobs = 4;
    auto parallel = pipeline::cmd_preprocess(par, false);
    CHECK(serial.files == parallel.files);
  }
}

TEST_CASE("cmd_train then cmd_evaluate produce the full report set") {
  testutil::TempDir dir("traineval");
  auto cfg = desk_config(dir.path(), "binary", 80);
  pipeline::cmd_prepare(cfg);

  auto train_artifacts = pipeline::cmd_train(cfg);
  CHECK(train_artifacts.files.count("train_log.jsonl") == 1);
  CHECK(train_artifacts.files.count("checkpoint_best.ckpt") == 1);
  CHECK(train_artifacts.files.count("checkpoint_best.json") == 1);

  auto eval_artifacts = pipeline::cmd_evaluate(cfg);
  CHECK(eval_artifacts.files.count("eval_report.json") == 1);
  CHECK(eval_artifacts.files.count("metrics_table.csv") == 1);
  CHECK(eval_artifacts.files.count("confusion.csv") == 1);
  CHECK(eval_artifacts.files.count("roc.csv") == 1);

  SECTION("the table carries exactly the six published metric names") {
    std::ifstream in(cfg.output_dir / "metrics_table.csv");
    std::string line;
    std::getline(in, line);
    std::vector<std::string> labels;
    while (std::getline(in, line)) labels.push_back(line.substr(0, line.find(',')));
    CHECK(labels == std::vector<std::string>{"Test Accuracy", "Precision", "Recall",
                                             "Micro Average AUC", "Macro Average AUC",
                                             "F1-Score"});
  }

  SECTION("re-evaluating the same checkpoint is byte-identical") {
    auto again = pipeline::cmd_evaluate(cfg);
    CHECK(eval_artifacts.files == again.files);
  }

  SECTION("report renders without and with the reference comparison") {
    std::ostringstream out;
    pipeline::cmd_report(cfg, false, out);
    CHECK(out.str().find("Test Accuracy") != std::string::npos);
    std::ostringstream with_ref;
    pipeline::cmd_report(cfg, true, with_ref);
    CHECK(with_ref.str().find("reference") != std::string::npos);
    CHECK(with_ref.str().find("delta") != std::string::npos);
  }

  SECTION("a task-mismatched checkpoint is refused") {
    config::ExperimentConfig other = cfg;
    other.task = dataset::TaskKind::Three;
    try {
      pipeline::cmd_evaluate(other);
      FAIL("expected CheckpointMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::CheckpointMismatch);
    }
  }
}

TEST_CASE("phase two training logs the reduced learning rate") {
  testutil::TempDir dir("phase2");
  auto cfg = desk_config(dir.path(), "binary", 40);
  cfg.phase = 2;
  cfg.max_epochs = 2;
  pipeline::cmd_prepare(cfg);
  pipeline::cmd_train(cfg);

  std::ifstream in(cfg.output_dir / "train_summary.json");
  nlohmann::json summary = nlohmann::json::parse(in);
  CHECK(summary.at("learning_rate").get<double>() == Catch::Approx(1e-4));
  CHECK(summary.at("phase").get<int>() == 2);
}

TEST_CASE("cmd_cascade composes node checkpoints into a 5-class report") {
  testutil::TempDir dir("cascade");
  // five-class fixture so the test split carries grades 0..4
  auto cfg = desk_config(dir.path(), "five", 100);
  cfg.max_epochs = 10;
  pipeline::cmd_prepare(cfg);

  // Train one binary model per cascade node on the node's class split. Node
  // training regroups the full manifest per node: left classes -> 0,
  // right classes -> 1, dropping everything else.
  cascade::CascadeTree tree = cascade::build_default_tree();
  std::vector<const cascade::CascadeNode*> nodes;
  cascade::collect_nodes(*tree.root, nodes);

  dataset::Manifest manifest =
      dataset::load_manifest(cfg.manifest_path, cfg.image_dir);

  std::map<std::string, std::string> node_ckpts;
  for (const cascade::CascadeNode* node : nodes) {
    std::vector<trainer::Sample> samples;
    for (const auto& rec : manifest.records) {
      int label = -1;
      if (std::count(node->left_classes.begin(), node->left_classes.end(), rec.grade)) label = 0;
      if (std::count(node->right_classes.begin(), node->right_classes.end(), rec.grade)) label = 1;
      if (label < 0) continue;
      ImageBuffer img = read_png(rec.image_path);
      samples.push_back({std::move(img), label});
    }
    trainer::MemorySampleSource all(std::move(samples));
    // tiny split: every 4th sample validates
    std::vector<trainer::Sample> train_samples, val_samples;
    for (std::size_t i = 0; i < all.size(); ++i) {
      (i % 4 == 0 ? val_samples : train_samples).push_back(all.get(i));
    }
    modelkit::Model model = modelkit::make_toy_model(dataset::TaskKind::Binary, 32, 5, {32, 16});
    trainer::TrainConfig tc;
    tc.max_epochs = 20;
    tc.batch_size = 4;
    tc.patience = 8;
    tc.seed = 5;
    trainer::train(model, trainer::MemorySampleSource(std::move(train_samples)),
                   trainer::MemorySampleSource(std::move(val_samples)), tc);

    const fs::path base = dir.path() / ("node_" + node->name);
    checkpoint::save_model(base, model, 1, 5);
    node_ckpts[node->name] = base.string();
  }

  // cascade description with the trained checkpoints
  auto j = cascade::tree_to_json(tree);
  std::function<void(nlohmann::json&)> attach = [&](nlohmann::json& nj) {
    nj["model"] = node_ckpts.at(nj.at("name").get<std::string>());
    if (nj.contains("left_child")) attach(nj["left_child"]);
    if (nj.contains("right_child")) attach(nj["right_child"]);
  };
  attach(j["root"]);
  const fs::path tree_path = dir.path() / "cascade.json";
  {
    std::ofstream out(tree_path);
    out << j.dump(2);
  }

  auto artifacts = pipeline::cmd_cascade(cfg, tree_path);
  CHECK(artifacts.files.count("cascade/eval_report.json") == 1);
  CHECK(artifacts.files.count("cascade/metrics_table.csv") == 1);

  SECTION("the confusion CSV is 5x5") {
    std::ifstream in(cfg.output_dir / "cascade" / "confusion.csv");
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 6);  // header + 5 classes
  }

  SECTION("a missing node checkpoint is reported by node name") {
    auto broken = j;
    broken["root"]["model"] = (dir.path() / "nonexistent").string();
    const fs::path broken_path = dir.path() / "broken.json";
    {
      std::ofstream out(broken_path);
      out << broken.dump(2);
    }
    try {
      pipeline::cmd_cascade(cfg, broken_path);
      FAIL("expected MissingNodeModel");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::MissingNodeModel);
      CHECK(std::string(e.what()).find("root") != std::string::npos);
    }
  }
}

TEST_CASE("RETINA_PIPELINE_CACHE overrides the cache location") {
  testutil::TempDir dir("cacheenv");
  auto cfg = desk_config(dir.path(), "binary", 6);
  cfg.preprocess.target_size = 224;
  const fs::path custom = dir.path() / "mycache";
  setenv("RETINA_PIPELINE_CACHE", custom.string().c_str(), 1);
  pipeline::cmd_prepare(cfg);
  pipeline::cmd_preprocess(cfg, false);
  unsetenv("RETINA_PIPELINE_CACHE");
  CHECK(fs::exists(custom));
  CHECK_FALSE(fs::exists(cfg.output_dir / "cache"));
}
