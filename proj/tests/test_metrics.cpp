#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

#include "retina/metrics.hpp"
#include "testutil.hpp"

using namespace retina;
using namespace retina::metrics;

TEST_CASE("binary_decision thresholds at <= 0.5 for the negative class") {
  CHECK(binary_decision(0.5) == 0);
  CHECK(binary_decision(0.51) == 1);
  CHECK(binary_decision(0.0) == 0);
  CHECK(binary_decision(1.0) == 1);
  CHECK_THROWS_AS(binary_decision(1.2), Error);
  CHECK_THROWS_AS(binary_decision(-0.1), Error);
}

TEST_CASE("argmax_decision breaks ties toward the lowest index") {
  CHECK(argmax_decision({0.1, 0.7, 0.2}) == 1);
  CHECK(argmax_decision({0.5, 0.5}) == 0);
  CHECK(argmax_decision({1.0}) == 0);
  CHECK_THROWS_AS(argmax_decision({}), Error);

  SECTION("exhaustive 3-element vectors on a 0.25 grid match std::max_element") {
    for (int a = 0; a <= 4; ++a) {
      for (int b = 0; b <= 4; ++b) {
        for (int c = 0; c <= 4; ++c) {
          std::vector<double> v = {a * 0.25, b * 0.25, c * 0.25};
          const int expect =
              static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
          CHECK(argmax_decision(v) == expect);
        }
      }
    }
  }
}

TEST_CASE("confusion_matrix counts true/predicted pairs") {
  auto cm = confusion_matrix({0, 1}, {0, 1}, 2);
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(1, 1) == 1);
  CHECK(cm.at(0, 1) == 0);
  CHECK(cm.accuracy() == 1.0);

  auto cm2 = confusion_matrix({0, 0, 1}, {1, 0, 1}, 2);
  CHECK(cm2.at(0, 0) == 1);
  CHECK(cm2.at(0, 1) == 1);
  CHECK(cm2.at(1, 0) == 0);
  CHECK(cm2.at(1, 1) == 1);

  ConfusionMatrix perfect;
  perfect.k = 2;
  perfect.cells = {50, 0, 0, 50};
  CHECK(perfect.accuracy() == 1.0);

  CHECK_THROWS_AS(confusion_matrix({0}, {0, 1}, 2), Error);
  CHECK_THROWS_AS(confusion_matrix({0, 2}, {0, 1}, 2), Error);
}

TEST_CASE("precision_recall_f1 matches hand-computed values") {
  SECTION("perfect diagonal") {
    ConfusionMatrix cm;
    cm.k = 2;
    cm.cells = {50, 0, 0, 50};
    auto prf = precision_recall_f1(cm);
    for (int c = 0; c < 2; ++c) {
      CHECK(prf.precision[c] == 1.0);
      CHECK(prf.recall[c] == 1.0);
      CHECK(prf.f1[c] == 1.0);
    }
    CHECK(prf.macro_f1 == 1.0);
    CHECK(prf.weighted_f1 == 1.0);
  }

  SECTION("the [[8,2],[4,6]] fixture") {
    ConfusionMatrix cm;
    cm.k = 2;
    cm.cells = {8, 2, 4, 6};
    auto prf = precision_recall_f1(cm);
    CHECK(prf.precision[0] == Catch::Approx(8.0 / 12.0).margin(1e-12));
    CHECK(prf.recall[0] == Catch::Approx(0.8).margin(1e-12));
    CHECK(prf.f1[0] == Catch::Approx(0.7273).margin(1e-4));
    CHECK(prf.precision[1] == Catch::Approx(6.0 / 8.0).margin(1e-12));
    CHECK(prf.recall[1] == Catch::Approx(0.6).margin(1e-12));
  }

  SECTION("zero-prediction class yields zero with a flag") {
    ConfusionMatrix cm;
    cm.k = 2;
    cm.cells = {3, 0, 2, 0};  // nothing predicted as class 1
    auto prf = precision_recall_f1(cm);
    CHECK(prf.precision[1] == 0.0);
    CHECK(prf.precision_degenerate[1]);
    CHECK_FALSE(prf.precision_degenerate[0]);
  }

  SECTION("F1 is the harmonic mean wherever precision and recall are positive") {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
      ConfusionMatrix cm;
      cm.k = 3;
      cm.cells.resize(9);
      for (auto& cell : cm.cells) cell = static_cast<long long>(rng.index(20));
      if (cm.total() == 0) continue;
      auto prf = precision_recall_f1(cm);
      for (int c = 0; c < 3; ++c) {
        if (prf.precision[c] > 0.0 && prf.recall[c] > 0.0) {
          const double harmonic =
              2.0 * prf.precision[c] * prf.recall[c] / (prf.precision[c] + prf.recall[c]);
          CHECK(std::abs(prf.f1[c] - harmonic) < 1e-12);
        }
      }
    }
  }

  SECTION("empty matrix is rejected") {
    ConfusionMatrix cm;
    cm.k = 2;
    cm.cells = {0, 0, 0, 0};
    CHECK_THROWS_AS(precision_recall_f1(cm), Error);
  }
}

TEST_CASE("roc_curve sweeps descending thresholds") {
  SECTION("perfect separation") {
    RocCurve curve = roc_curve({0.9, 0.8, 0.1, 0.2}, {true, true, false, false});
    CHECK(curve.points.front().fpr == 0.0);
    CHECK(curve.points.front().tpr == 0.0);
    CHECK(curve.points.back().fpr == 1.0);
    CHECK(curve.points.back().tpr == 1.0);
    bool hits_corner = false;
    for (const auto& pt : curve.points) {
      if (pt.fpr == 0.0 && pt.tpr == 1.0) hits_corner = true;
    }
    CHECK(hits_corner);
    CHECK(auc(curve) == Catch::Approx(1.0));
  }

  SECTION("indistinguishable scores give 0.5") {
    RocCurve curve = roc_curve({0.3, 0.3, 0.3, 0.3}, {true, false, true, false});
    CHECK(auc(curve) == Catch::Approx(0.5));
  }

  SECTION("pos {0.8,0.4} vs neg {0.6,0.2} gives 0.75") {
    RocCurve curve = roc_curve({0.8, 0.4, 0.6, 0.2}, {true, true, false, false});
    CHECK(auc(curve) == Catch::Approx(0.75));
  }

  SECTION("needs both labels") {
    try {
      roc_curve({0.5, 0.6}, {true, true});
      FAIL("expected DegenerateLabels");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::DegenerateLabels);
    }
  }

  SECTION("monotone in both coordinates, anchored at the corners") {
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
      const int n = 2 + static_cast<int>(rng.index(60));
      std::vector<double> scores;
      std::vector<bool> labels;
      bool any_pos = false, any_neg = false;
      for (int i = 0; i < n; ++i) {
        scores.push_back(rng.index(8) / 8.0);  // coarse grid forces ties
        labels.push_back(rng.uniform() < 0.5);
        (labels.back() ? any_pos : any_neg) = true;
      }
      if (!any_pos || !any_neg) continue;
      RocCurve curve = roc_curve(scores, labels);
      CHECK(curve.points.front().fpr == 0.0);
      CHECK(curve.points.front().tpr == 0.0);
      CHECK(curve.points.back().fpr == 1.0);
      CHECK(curve.points.back().tpr == 1.0);
      for (std::size_t i = 1; i < curve.points.size(); ++i) {
        CHECK(curve.points[i].fpr >= curve.points[i - 1].fpr);
        CHECK(curve.points[i].tpr >= curve.points[i - 1].tpr);
        CHECK(curve.points[i].threshold < curve.points[i - 1].threshold);
      }
    }
  }
}

TEST_CASE("trapezoidal AUC equals the pairwise statistic within 1e-9") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 5 + static_cast<int>(rng.index(196));
    std::vector<double> scores;
    std::vector<bool> labels;
    bool any_pos = false, any_neg = false;
    for (int i = 0; i < n; ++i) {
      // mix continuous scores with gridded ones so ties occur
      scores.push_back(rng.uniform() < 0.4 ? rng.index(10) / 10.0 : rng.uniform());
      labels.push_back(rng.uniform() < 0.45);
      (labels.back() ? any_pos : any_neg) = true;
    }
    if (!any_pos || !any_neg) continue;
    const double fast = auc(roc_curve(scores, labels));
    const double brute = testutil::pairwise_auc_oracle(scores, labels);
    CHECK(std::abs(fast - brute) < 1e-9);
  }
}

TEST_CASE("multiclass_auc follows one-vs-rest definitions") {
  SECTION("perfect one-hot predictions") {
    std::vector<std::vector<double>> probs = {
        {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    auto mc = multiclass_auc(probs, {0, 1, 2, 0, 1, 2});
    CHECK(mc.micro == Catch::Approx(1.0));
    CHECK(mc.macro == Catch::Approx(1.0));
    CHECK(mc.skipped_classes.empty());
  }

  SECTION("uniform predictions are uninformative") {
    std::vector<std::vector<double>> probs(9, {1.0 / 3, 1.0 / 3, 1.0 / 3});
    auto mc = multiclass_auc(probs, {0, 1, 2, 0, 1, 2, 0, 1, 2});
    CHECK(mc.micro == Catch::Approx(0.5));
    CHECK(mc.macro == Catch::Approx(0.5));
  }

  SECTION("random instances match the flattened/per-class pairwise oracles") {
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
      const int n = 60;
      std::vector<std::vector<double>> probs;
      std::vector<int> y;
      for (int i = 0; i < n; ++i) {
        double a = rng.uniform(), b = rng.uniform(), c = rng.uniform();
        const double s = a + b + c;
        probs.push_back({a / s, b / s, c / s});
        y.push_back(static_cast<int>(rng.index(3)));
      }
      auto mc = multiclass_auc(probs, y);

      // per-class oracle -> macro
      double macro = 0.0;
      for (int c = 0; c < 3; ++c) {
        std::vector<double> scores;
        std::vector<bool> pos;
        for (int i = 0; i < n; ++i) {
          scores.push_back(probs[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)]);
          pos.push_back(y[static_cast<std::size_t>(i)] == c);
        }
        macro += testutil::pairwise_auc_oracle(scores, pos);
      }
      macro /= 3.0;
      CHECK(std::abs(mc.macro - macro) < 1e-9);

      // flattened oracle -> micro
      std::vector<double> flat_scores;
      std::vector<bool> flat_pos;
      for (int i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
          flat_scores.push_back(probs[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)]);
          flat_pos.push_back(y[static_cast<std::size_t>(i)] == c);
        }
      }
      CHECK(std::abs(mc.micro - testutil::pairwise_auc_oracle(flat_scores, flat_pos)) < 1e-9);
    }
  }

  SECTION("an absent class is skipped in the macro with a flag") {
    std::vector<std::vector<double>> probs = {{0.7, 0.2, 0.1}, {0.3, 0.5, 0.2}, {0.4, 0.4, 0.2}};
    auto mc = multiclass_auc(probs, {0, 1, 0});
    CHECK(mc.skipped_classes == std::vector<int>{2});
    CHECK(mc.per_class[2].empty());
    CHECK(std::isnan(mc.per_class_auc[2]));
  }

  SECTION("rows must sum to one") {
    CHECK_THROWS_AS(multiclass_auc({{0.9, 0.5, 0.1}}, {0}), Error);
  }
}

TEST_CASE("evaluate_binary applies the threshold rule and one-hot AUCs") {
  SECTION("perfect scores") {
    auto report = evaluate_binary({0.9, 0.95, 0.1, 0.05}, {1, 1, 0, 0});
    CHECK(report.accuracy == 1.0);
    CHECK(report.micro_auc == Catch::Approx(1.0));
    CHECK(report.macro_auc == Catch::Approx(1.0));
    CHECK(report.prf.macro_f1 == 1.0);
  }

  SECTION("constant 0.5 scores predict everything negative") {
    auto report = evaluate_binary({0.5, 0.5, 0.5, 0.5}, {0, 0, 1, 1});
    CHECK(report.accuracy == 0.5);
    CHECK(report.confusion.at(0, 0) == 2);
    CHECK(report.confusion.at(1, 0) == 2);
    CHECK(report.confusion.at(1, 1) == 0);
  }

  SECTION("accuracy is exactly trace over total") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<double> scores;
      std::vector<int> y;
      for (int i = 0; i < 40; ++i) {
        scores.push_back(rng.uniform());
        y.push_back(static_cast<int>(rng.index(2)));
      }
      auto report = evaluate_binary(scores, y);
      CHECK(report.accuracy ==
            static_cast<double>(report.confusion.trace()) /
                static_cast<double>(report.confusion.total()));
    }
  }

  SECTION("threshold and argmax agree off the tie point") {
    Rng rng(17);
    for (int i = 0; i < 200; ++i) {
      const double s = rng.uniform();
      if (s == 0.5) continue;
      CHECK(binary_decision(s) == argmax_decision({1.0 - s, s}));
    }
  }
}

TEST_CASE("evaluate_multiclass agrees with a hand-built confusion matrix") {
  std::vector<std::vector<double>> probs = {
      {0.8, 0.1, 0.1},  // -> 0, true 0
      {0.2, 0.7, 0.1},  // -> 1, true 1
      {0.1, 0.6, 0.3},  // -> 1, true 2
      {0.3, 0.3, 0.4},  // -> 2, true 2
      {0.5, 0.4, 0.1},  // -> 0, true 1
      {0.9, 0.05, 0.05},  // -> 0, true 0
  };
  std::vector<int> y = {0, 1, 2, 2, 1, 0};
  auto report = evaluate_multiclass(probs, y);

  auto cm = confusion_matrix(y, {0, 1, 1, 2, 0, 0}, 3);
  CHECK(report.confusion.cells == cm.cells);
  CHECK(report.accuracy == Catch::Approx(4.0 / 6.0));

  auto prf = precision_recall_f1(cm);
  CHECK(report.prf.macro_f1 == Catch::Approx(prf.macro_f1));
  CHECK(report.prf.weighted_precision == Catch::Approx(prf.weighted_precision));
}

TEST_CASE("report serialization emits the published table shape") {
  testutil::TempDir dir("metrics_csv");
  auto report = evaluate_binary({0.9, 0.2, 0.7, 0.3}, {1, 0, 1, 0});

  write_table_csv(dir.path() / "table.csv", report);
  std::ifstream in(dir.path() / "table.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "Metric,Value");
  std::vector<std::string> labels;
  while (std::getline(in, line)) {
    labels.push_back(line.substr(0, line.find(',')));
  }
  const std::vector<std::string> expect = {"Test Accuracy",     "Precision",
                                           "Recall",            "Micro Average AUC",
                                           "Macro Average AUC", "F1-Score"};
  CHECK(labels == expect);

  SECTION("confusion and ROC CSVs are emitted with the right shapes") {
    write_confusion_csv(dir.path() / "confusion.csv", report.confusion);
    std::ifstream cin(dir.path() / "confusion.csv");
    std::size_t rows = 0;
    while (std::getline(cin, line)) ++rows;
    CHECK(rows == 3);  // header + 2 classes

    write_roc_csv(dir.path() / "roc.csv", report);
    std::ifstream rin(dir.path() / "roc.csv");
    std::getline(rin, line);
    CHECK(line == "series,fpr,tpr,threshold");
    std::size_t micro_rows = 0;
    while (std::getline(rin, line)) {
      if (line.rfind("micro,", 0) == 0) ++micro_rows;
    }
    CHECK(micro_rows >= 2);
  }

  SECTION("JSON report carries macro and weighted averages side by side") {
    auto j = report_to_json(report);
    CHECK(j.contains("macro"));
    CHECK(j.contains("weighted"));
    CHECK(j.contains("per_class"));
    CHECK(j["confusion"].size() == 2);
  }
}
