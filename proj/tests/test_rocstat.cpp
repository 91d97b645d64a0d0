#include <doctest.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "cdplab/rng.hpp"
#include "cdplab/rocstat.hpp"

using namespace cdp;

namespace {

// Brute-force pairwise count, ties half; the independent AUC oracle.
double mw_pairwise_oracle(const ScoreSet& s) {
  double wins = 0.0;
  for (double p : s.positives)
    for (double n : s.negatives) {
      if (p > n)
        wins += 1.0;
      else if (p == n)
        wins += 0.5;
    }
  return wins / (static_cast<double>(s.positives.size()) * s.negatives.size());
}

// Direct threshold sweep over every distinct score; the ROC oracle.
std::vector<RocPoint> roc_sweep_oracle(const ScoreSet& s) {
  std::set<double, std::greater<double>> thresholds(s.positives.begin(), s.positives.end());
  thresholds.insert(s.negatives.begin(), s.negatives.end());
  std::vector<RocPoint> points{{0.0, 0.0}};
  for (double thr : thresholds) {
    double tp = 0, fp = 0;
    for (double p : s.positives) tp += p >= thr ? 1 : 0;
    for (double n : s.negatives) fp += n >= thr ? 1 : 0;
    points.push_back({fp / s.negatives.size(), tp / s.positives.size()});
  }
  if (points.back().fpr != 1.0 || points.back().tpr != 1.0) points.push_back({1.0, 1.0});
  return points;
}

ScoreSet random_set(Rng& rng, int np, int nn, bool quantize) {
  ScoreSet s;
  for (int i = 0; i < np; ++i) {
    double v = rng.uniform() + 0.15;
    s.positives.push_back(quantize ? std::round(v * 8) / 8 : v);
  }
  for (int i = 0; i < nn; ++i) {
    double v = rng.uniform();
    s.negatives.push_back(quantize ? std::round(v * 8) / 8 : v);
  }
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("rocstat");

TEST_CASE("perfect separation: curve passes through (0,1), auc 1") {
  ScoreSet s{{0.9, 0.8}, {0.1, 0.2}};
  auto curve = roc_curve(s);
  bool corner = false;
  for (const auto& p : curve) corner = corner || (p.fpr == 0.0 && p.tpr == 1.0);
  CHECK(corner);
  CHECK(auc(s) == doctest::Approx(1.0));
  CHECK(curve.front().fpr == 0.0);
  CHECK(curve.front().tpr == 0.0);
  CHECK(curve.back().fpr == 1.0);
  CHECK(curve.back().tpr == 1.0);
}

TEST_CASE("identical score multisets sit on the diagonal, auc one half") {
  ScoreSet s{{0.1, 0.5, 0.9}, {0.1, 0.5, 0.9}};
  for (const auto& p : roc_curve(s)) CHECK(p.fpr == doctest::Approx(p.tpr));
  CHECK(auc(s) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(mann_whitney_auc(s) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("roc curve matches the threshold-sweep oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    auto s = random_set(rng, 20 + static_cast<int>(rng.below(60)),
                        20 + static_cast<int>(rng.below(60)), trial % 2 == 0);
    auto ours = roc_curve(s);
    auto oracle = roc_sweep_oracle(s);
    REQUIRE(ours.size() == oracle.size());
    for (std::size_t i = 0; i < ours.size(); ++i) {
      CHECK(ours[i].fpr == doctest::Approx(oracle[i].fpr).epsilon(1e-12));
      CHECK(ours[i].tpr == doctest::Approx(oracle[i].tpr).epsilon(1e-12));
    }
  }
}

TEST_CASE("roc curve is monotone in both coordinates") {
  Rng rng(2);
  auto s = random_set(rng, 100, 80, true);
  auto curve = roc_curve(s);
  for (std::size_t i = 1; i < curve.size(); ++i) {
    CHECK(curve[i].fpr >= curve[i - 1].fpr);
    CHECK(curve[i].tpr >= curve[i - 1].tpr);
  }
}

TEST_CASE("trapezoid auc equals mann-whitney and the pairwise oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const bool tie_heavy = trial % 3 == 0;
    auto s = random_set(rng, 10 + static_cast<int>(rng.below(40)),
                        10 + static_cast<int>(rng.below(40)), tie_heavy);
    const double a = auc(s);
    const double mw = mann_whitney_auc(s);
    const double oracle = mw_pairwise_oracle(s);
    CHECK(std::abs(a - mw) <= 1e-9);
    CHECK(std::abs(a - oracle) <= 1e-9);
  }
}

TEST_CASE("rank invariance under strictly increasing transforms") {
  Rng rng(4);
  auto s = random_set(rng, 50, 50, true);
  ScoreSet mapped;
  auto f = [](double v) { return std::exp(3.0 * v) - 7.0; };
  for (double v : s.positives) mapped.positives.push_back(f(v));
  for (double v : s.negatives) mapped.negatives.push_back(f(v));

  CHECK(auc(s) == doctest::Approx(auc(mapped)).epsilon(1e-12));
  auto c1 = roc_curve(s);
  auto c2 = roc_curve(mapped);
  REQUIRE(c1.size() == c2.size());
  for (std::size_t i = 0; i < c1.size(); ++i) {
    CHECK(c1[i].fpr == doctest::Approx(c2[i].fpr).epsilon(1e-12));
    CHECK(c1[i].tpr == doctest::Approx(c2[i].tpr).epsilon(1e-12));
  }
}

TEST_CASE("empty class is rejected") {
  CHECK_THROWS_AS(roc_curve(ScoreSet{{}, {0.1}}), InvalidArgument);
  CHECK_THROWS_AS(auc(ScoreSet{{0.1}, {}}), InvalidArgument);
  CHECK_THROWS_AS(mann_whitney_auc(ScoreSet{{}, {}}), InvalidArgument);
}

TEST_CASE("auc_table covers the full grid and reports missing cells") {
  ExperimentGrid grid;
  grid.printer_ids = {"HPI55", "HPI76"};
  grid.device_ids = {"epson", "xs_wide", "12_wide", "14_wide", "15_wide", "14_macro",
                     "15_macro"};
  grid.metrics = {Metric::pcorr, Metric::ssim};
  grid.references = {Reference::t, Reference::xhat, Reference::xe};

  std::vector<ScoreRecord> records;
  Rng rng(5);
  for (const auto& p : grid.printer_ids)
    for (const auto& d : grid.device_ids)
      for (auto m : grid.metrics)
        for (auto ref : grid.references)
          for (int i = 0; i < 6; ++i) {
            ScoreRecord r;
            r.printer_id = p;
            r.device_id = d;
            r.metric = m;
            r.reference = ref;
            r.origin = i % 2 == 0 ? Origin::original : Origin::fake;
            r.template_id = i;
            r.score = rng.uniform() + (r.origin == Origin::original ? 0.3 : 0.0);
            records.push_back(r);
          }

  auto table = auc_table(records, grid);
  CHECK(table.cells.size() == 84);
  CHECK(table.missing.empty());

  // Drop one cell entirely; it must be reported, not silently skipped.
  std::erase_if(records, [](const ScoreRecord& r) {
    return r.printer_id == "HPI76" && r.device_id == "epson" && r.metric == Metric::ssim &&
           r.reference == Reference::xe;
  });
  auto partial = auc_table(records, grid);
  CHECK(partial.cells.size() == 83);
  REQUIRE(partial.missing.size() == 1);
  CHECK(partial.missing[0].printer_id == "HPI76");
  CHECK(partial.missing[0].device_id == "epson");

  // Single-cell grid.
  ExperimentGrid one;
  one.printer_ids = {"HPI55"};
  one.device_ids = {"epson"};
  one.metrics = {Metric::pcorr};
  one.references = {Reference::t};
  auto single = auc_table(records, one);
  CHECK(single.cells.size() == 1);
}

TEST_CASE("histogram: counts per class, shared edges, degenerate cases") {
  ScoreSet s;
  Rng rng(6);
  for (int i = 0; i < 60; ++i) s.positives.push_back(rng.uniform());
  for (int i = 0; i < 40; ++i) s.negatives.push_back(rng.uniform() * 0.5);
  auto h = histogram_export(s, 10);
  REQUIRE(h.edges.size() == 11);
  long pos_total = 0, neg_total = 0;
  for (long c : h.positive_counts) pos_total += c;
  for (long c : h.negative_counts) neg_total += c;
  CHECK(pos_total == 60);
  CHECK(neg_total == 40);

  // Counting oracle per bin.
  for (int b = 0; b < 10; ++b) {
    long expected = 0;
    for (double v : s.positives) {
      int bin = std::min(9, static_cast<int>((v - h.edges[0]) /
                                             (h.edges[10] - h.edges[0]) * 10));
      if (bin == b) ++expected;
    }
    CHECK(h.positive_counts[b] == expected);
  }

  ScoreSet single{{0.7}, {0.7}};
  auto hd = histogram_export(single, 5);
  long occupied = 0;
  for (std::size_t i = 0; i < hd.positive_counts.size(); ++i)
    if (hd.positive_counts[i] + hd.negative_counts[i] > 0) ++occupied;
  CHECK(occupied == 1);

  CHECK_THROWS_AS(histogram_export(s, 1), InvalidArgument);
}

TEST_CASE("scores csv round-trip") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "cdplab_test_scores";
  fs::remove_all(dir);
  fs::create_directories(dir);

  std::vector<ScoreRecord> records;
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    ScoreRecord r;
    r.printer_id = i % 2 ? "HPI55" : "HPI76";
    r.device_id = "epson";
    r.reference = static_cast<Reference>(i % 3);
    r.metric = static_cast<Metric>(i % 2);
    r.origin = static_cast<Origin>(i % 2);
    r.template_id = i;
    r.instance = 0;
    r.repetition = i % 3;
    r.score = rng.uniform() * 2 - 1;
    records.push_back(r);
  }
  write_scores_csv(dir / "scores.csv", records);

  // header is the pinned external contract
  std::ifstream in(dir / "scores.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "printer,device,reference,metric,origin,template_id,instance,repetition,score");

  auto back = read_scores_csv(dir / "scores.csv");
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(back[i].printer_id == records[i].printer_id);
    CHECK(back[i].reference == records[i].reference);
    CHECK(back[i].metric == records[i].metric);
    CHECK(back[i].origin == records[i].origin);
    CHECK(back[i].template_id == records[i].template_id);
    CHECK(back[i].repetition == records[i].repetition);
    CHECK(back[i].score == doctest::Approx(records[i].score).epsilon(1e-11));
  }
  fs::remove_all(dir);
}

TEST_CASE("auc table json shape and rounding") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "cdplab_test_auctable";
  fs::remove_all(dir);
  fs::create_directories(dir);

  AucTable table;
  table.cells[{"HPI55", "epson", Metric::pcorr, Reference::t}] = 0.123456789;
  table.cells[{"HPI55", "epson", Metric::pcorr, Reference::xe}] = 1.0;
  write_auc_table_json(dir / "auc_table.json", table);

  std::ifstream in(dir / "auc_table.json");
  nlohmann::json j = nlohmann::json::parse(in);
  CHECK(j.at("HPI55").at("epson").at("pcorr").at("t").get<double>() ==
        doctest::Approx(0.123457).epsilon(1e-12));
  CHECK(j.at("HPI55").at("epson").at("pcorr").at("xe").get<double>() == 1.0);
  fs::remove_all(dir);
}

TEST_CASE("roc svg is written and content-stable") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "cdplab_test_svg";
  fs::remove_all(dir);
  fs::create_directories(dir);

  ScoreSet s{{0.8, 0.9, 0.7}, {0.2, 0.4, 0.3}};
  auto curve = roc_curve(s);
  write_roc_svg(dir / "roc.svg", curve, auc(s), "cell");
  write_roc_svg(dir / "roc2.svg", curve, auc(s), "cell");

  auto read_all = [](const fs::path& p) {
    std::ifstream f(p);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  const auto a = read_all(dir / "roc.svg");
  CHECK(a == read_all(dir / "roc2.svg"));
  CHECK(a.find("<svg") != std::string::npos);
  CHECK(a.find("AUC = 1.000000") != std::string::npos);
  fs::remove_all(dir);
}

TEST_SUITE_END();
