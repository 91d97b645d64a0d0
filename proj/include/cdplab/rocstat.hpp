#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cdp {

enum class Reference { t, xhat, xe };
enum class Metric { pcorr, ssim };
enum class Origin { original, fake };

std::string to_string(Reference r);
std::string to_string(Metric m);
std::string to_string(Origin o);
Reference reference_from_string(const std::string& s);
Metric metric_from_string(const std::string& s);
Origin origin_from_string(const std::string& s);

/// One similarity measurement with full experiment coordinates.
struct ScoreRecord {
  std::string printer_id;
  std::string device_id;
  Reference reference = Reference::t;
  Metric metric = Metric::pcorr;
  Origin origin = Origin::original;
  int template_id = 0;
  int instance = 0;
  int repetition = 0;
  double score = 0.0;
};

/// Scores of one experiment cell split by class. Originals are the
/// positives; higher score reads as more original.
struct ScoreSet {
  std::vector<double> positives;  // origin = original
  std::vector<double> negatives;  // origin = fake
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

/// ROC points at every distinct threshold (ties grouped across classes),
/// endpoints (0,0) and (1,1) included, monotone in both coordinates.
std::vector<RocPoint> roc_curve(const ScoreSet& s);

/// Trapezoidal area under roc_curve.
double auc(const ScoreSet& s);

/// Rank-statistic route to the same quantity: fraction of (positive,
/// negative) pairs with positive > negative, ties counted 1/2.
double mann_whitney_auc(const ScoreSet& s);

struct CellKey {
  std::string printer_id;
  std::string device_id;
  Metric metric = Metric::pcorr;
  Reference reference = Reference::t;
  auto operator<=>(const CellKey&) const = default;
};

struct AucTable {
  std::map<CellKey, double> cells;
  std::vector<CellKey> missing;  // requested by the grid but absent from records
};

struct ExperimentGrid {
  std::vector<std::string> printer_ids;
  std::vector<std::string> device_ids;
  std::vector<Metric> metrics;
  std::vector<Reference> references;
};

/// Groups records into per-cell score sets.
std::map<CellKey, ScoreSet> group_scores(const std::vector<ScoreRecord>& records);

/// One AUC per grid cell. Cells without records (or with an empty class) are
/// reported in `missing`, never silently dropped.
AucTable auc_table(const std::vector<ScoreRecord>& records, const ExperimentGrid& grid);

struct Histogram {
  std::vector<double> edges;            // n_bins + 1 shared edges
  std::vector<long> positive_counts;    // originals
  std::vector<long> negative_counts;    // fakes
};

/// Binned counts per class over shared edges spanning the observed range.
Histogram histogram_export(const ScoreSet& s, int n_bins);

// --- persistence -----------------------------------------------------------

void write_scores_csv(const std::filesystem::path& path,
                      const std::vector<ScoreRecord>& records);
std::vector<ScoreRecord> read_scores_csv(const std::filesystem::path& path);

/// Nested map printer -> device -> metric -> reference -> auc, values
/// rounded to 6 decimals. Missing cells are reported by the caller.
void write_auc_table_json(const std::filesystem::path& path, const AucTable& table);

void write_histogram_json(const std::filesystem::path& path, const Histogram& h);

/// Standalone ROC plot: axes, diagonal reference, curve, AUC annotation.
void write_roc_svg(const std::filesystem::path& path, const std::vector<RocPoint>& curve,
                   double auc_value, const std::string& title);

}  // namespace cdp
