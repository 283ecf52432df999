// Command-line front end for the DR grading pipeline.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
// failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "retina/retina.hpp"

namespace {

int exit_code_for(retina::Errc code) {
  using retina::Errc;
  switch (code) {
    case Errc::ConfigError:
    case Errc::UnsupportedCombination:
    case Errc::InvalidTask:
    case Errc::InvalidFanIn:
    case Errc::InvalidSigma:
    case Errc::InvalidSize:
      return 2;
    case Errc::MissingFile:
    case Errc::MalformedRow:
    case Errc::DuplicateId:
    case Errc::EmptyManifest:
    case Errc::EmptyClass:
    case Errc::MissingNodeModel:
    case Errc::CheckpointMismatch:
      return 3;
    default:
      return 4;
  }
}

void print_artifacts(const retina::pipeline::RunArtifacts& artifacts) {
  for (const auto& [path, hash] : artifacts.files) {
    std::cout << "  " << path << "  " << hash.substr(0, 12) << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diabetic retinopathy grading pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("-c,--config", config_path, "JSON experiment config");
  app.add_option("--set", overrides, "Override a config key, e.g. --set trainer.max_epochs=5");

  auto* prepare = app.add_subcommand("prepare", "Split and rebalance the manifest");
  auto* preprocess = app.add_subcommand("preprocess", "Run the image pipeline over the dataset");
  bool materialize = false;
  preprocess->add_flag("--materialize", materialize,
                       "Also write augmented synthetic-train images for inspection");
  auto* train = app.add_subcommand("train", "Train a classifier on the prepared splits");
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
  std::string checkpoint_arg;
  evaluate->add_option("--checkpoint", checkpoint_arg,
                       "Checkpoint base path (default <output_dir>/checkpoint_best)");
  auto* cascade_cmd = app.add_subcommand("cascade", "Evaluate a binary-cascade description");
  std::string cascade_file;
  cascade_cmd->add_option("tree", cascade_file, "Cascade JSON description")->required();
  bool emit_default_tree = false;
  cascade_cmd->add_flag("--emit-default", emit_default_tree,
                        "Write the default tree skeleton to the given path and exit");
  auto* report = app.add_subcommand("report", "Print the stored evaluation table");
  bool show_reference = false;
  report->add_flag("--show-reference", show_reference,
                   "Include the published full-scale reference numbers (no gate)");
  auto* fixture = app.add_subcommand("fixture", "Generate a synthetic desk-scale dataset");
  std::string fixture_dir = "fixture";
  int fixture_n = 300;
  int fixture_size = 32;
  fixture->add_option("--dir", fixture_dir, "Output directory");
  fixture->add_option("--count", fixture_n, "Number of images");
  fixture->add_option("--size", fixture_size, "Square image size");

  CLI11_PARSE(app, argc, argv);

  try {
    retina::config::ExperimentConfig cfg = retina::config::load(
        config_path.empty() ? std::filesystem::path{} : std::filesystem::path(config_path),
        overrides);
    std::filesystem::create_directories(cfg.output_dir);

    if (prepare->parsed()) {
      auto artifacts = retina::pipeline::cmd_prepare(cfg);
      std::cout << "prepare: wrote " << artifacts.files.size() << " artifacts\n";
      print_artifacts(artifacts);
    } else if (preprocess->parsed()) {
      auto artifacts = retina::pipeline::cmd_preprocess(cfg, materialize);
      std::cout << "preprocess: wrote " << artifacts.files.size() << " artifacts\n";
    } else if (train->parsed()) {
      auto artifacts = retina::pipeline::cmd_train(cfg);
      std::cout << "train: wrote " << artifacts.files.size() << " artifacts\n";
      print_artifacts(artifacts);
    } else if (evaluate->parsed()) {
      std::optional<std::filesystem::path> ckpt;
      if (!checkpoint_arg.empty()) ckpt = checkpoint_arg;
      auto artifacts = retina::pipeline::cmd_evaluate(cfg, ckpt);
      std::cout << "evaluate: wrote " << artifacts.files.size() << " artifacts\n";
      print_artifacts(artifacts);
      retina::pipeline::cmd_report(cfg, false, std::cout);
    } else if (cascade_cmd->parsed()) {
      if (emit_default_tree) {
        auto tree = retina::cascade::build_default_tree();
        std::ofstream out(cascade_file);
        if (!out) retina::fail(retina::Errc::IoError, "cannot write " + cascade_file);
        out << retina::cascade::tree_to_json(tree).dump(2) << '\n';
        std::cout << "wrote default cascade skeleton to " << cascade_file << "\n";
      } else {
        auto artifacts = retina::pipeline::cmd_cascade(cfg, cascade_file);
        std::cout << "cascade: wrote " << artifacts.files.size() << " artifacts\n";
        print_artifacts(artifacts);
      }
    } else if (report->parsed()) {
      retina::pipeline::cmd_report(cfg, show_reference, std::cout);
    } else if (fixture->parsed()) {
      auto manifest = retina::synthetic::write_class_disk_dataset(
          fixture_dir, fixture_n, cfg.task, fixture_size, cfg.seed);
      std::cout << "fixture: wrote " << manifest.string() << " and images/\n";
    }
  } catch (const retina::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
