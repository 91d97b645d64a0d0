#include "cdplab/rocstat.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cdplab/error.hpp"

namespace cdp {

using nlohmann::json;

std::string to_string(Reference r) {
  switch (r) {
    case Reference::t: return "t";
    case Reference::xhat: return "xhat";
    case Reference::xe: return "xe";
  }
  throw InvalidArgument("unknown Reference");
}

std::string to_string(Metric m) {
  return m == Metric::pcorr ? "pcorr" : "ssim";
}

std::string to_string(Origin o) {
  return o == Origin::original ? "original" : "fake";
}

Reference reference_from_string(const std::string& s) {
  if (s == "t") return Reference::t;
  if (s == "xhat") return Reference::xhat;
  if (s == "xe") return Reference::xe;
  throw InvalidArgument("unknown reference: " + s);
}

Metric metric_from_string(const std::string& s) {
  if (s == "pcorr") return Metric::pcorr;
  if (s == "ssim") return Metric::ssim;
  throw InvalidArgument("unknown metric: " + s);
}

Origin origin_from_string(const std::string& s) {
  if (s == "original") return Origin::original;
  if (s == "fake") return Origin::fake;
  throw InvalidArgument("unknown origin: " + s);
}

namespace {

void require_nonempty(const ScoreSet& s, const char* fn) {
  if (s.positives.empty() || s.negatives.empty())
    throw InvalidArgument(std::string(fn) + ": both classes must be nonempty");
  for (double v : s.positives)
    if (!std::isfinite(v)) throw InvalidArgument(std::string(fn) + ": non-finite score");
  for (double v : s.negatives)
    if (!std::isfinite(v)) throw InvalidArgument(std::string(fn) + ": non-finite score");
}

}  // namespace

std::vector<RocPoint> roc_curve(const ScoreSet& s) {
  require_nonempty(s, "roc_curve");
  // (score, is_positive), descending by score; ties grouped across classes.
  std::vector<std::pair<double, bool>> items;
  items.reserve(s.positives.size() + s.negatives.size());
  for (double v : s.positives) items.emplace_back(v, true);
  for (double v : s.negatives) items.emplace_back(v, false);
  std::sort(items.begin(), items.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  const double np = static_cast<double>(s.positives.size());
  const double nn = static_cast<double>(s.negatives.size());

  std::vector<RocPoint> curve;
  curve.push_back({0.0, 0.0});
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < items.size()) {
    const double threshold = items[i].first;
    while (i < items.size() && items[i].first == threshold) {
      if (items[i].second)
        ++tp;
      else
        ++fp;
      ++i;
    }
    curve.push_back({fp / nn, tp / np});
  }
  if (curve.back().fpr != 1.0 || curve.back().tpr != 1.0) curve.push_back({1.0, 1.0});
  return curve;
}

double auc(const ScoreSet& s) {
  const auto curve = roc_curve(s);
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) * 0.5;
  }
  return area;
}

double mann_whitney_auc(const ScoreSet& s) {
  require_nonempty(s, "mann_whitney_auc");
  // Average ranks over the pooled sample; U from the positive rank sum.
  std::vector<std::pair<double, bool>> items;
  items.reserve(s.positives.size() + s.negatives.size());
  for (double v : s.positives) items.emplace_back(v, true);
  for (double v : s.negatives) items.emplace_back(v, false);
  std::sort(items.begin(), items.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < items.size()) {
    std::size_t j = i;
    while (j < items.size() && items[j].first == items[i].first) ++j;
    // 1-based ranks i+1 .. j averaged across the tie group.
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k)
      if (items[k].second) rank_sum_pos += avg_rank;
    i = j;
  }
  const double np = static_cast<double>(s.positives.size());
  const double nn = static_cast<double>(s.negatives.size());
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * nn);
}

std::map<CellKey, ScoreSet> group_scores(const std::vector<ScoreRecord>& records) {
  std::map<CellKey, ScoreSet> grouped;
  for (const auto& r : records) {
    auto& set = grouped[{r.printer_id, r.device_id, r.metric, r.reference}];
    (r.origin == Origin::original ? set.positives : set.negatives).push_back(r.score);
  }
  return grouped;
}

AucTable auc_table(const std::vector<ScoreRecord>& records, const ExperimentGrid& grid) {
  const auto grouped = group_scores(records);
  AucTable table;
  for (const auto& p : grid.printer_ids)
    for (const auto& d : grid.device_ids)
      for (Metric m : grid.metrics)
        for (Reference ref : grid.references) {
          CellKey key{p, d, m, ref};
          auto it = grouped.find(key);
          if (it == grouped.end() || it->second.positives.empty() ||
              it->second.negatives.empty()) {
            table.missing.push_back(key);
          } else {
            table.cells[key] = auc(it->second);
          }
        }
  return table;
}

Histogram histogram_export(const ScoreSet& s, int n_bins) {
  require_nonempty(s, "histogram_export");
  if (n_bins < 2) throw InvalidArgument("histogram_export: n_bins must be >= 2");

  double lo = s.positives[0], hi = s.positives[0];
  for (double v : s.positives) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : s.negatives) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo == hi) {
    // Degenerate range: center a unit-wide span on the single value.
    lo -= 0.5;
    hi += 0.5;
  }

  Histogram h;
  h.edges.resize(n_bins + 1);
  for (int i = 0; i <= n_bins; ++i)
    h.edges[i] = lo + (hi - lo) * static_cast<double>(i) / n_bins;
  h.positive_counts.assign(n_bins, 0);
  h.negative_counts.assign(n_bins, 0);

  auto bin_of = [&](double v) {
    int b = static_cast<int>((v - lo) / (hi - lo) * n_bins);
    return std::clamp(b, 0, n_bins - 1);
  };
  for (double v : s.positives) ++h.positive_counts[bin_of(v)];
  for (double v : s.negatives) ++h.negative_counts[bin_of(v)];
  return h;
}

// --- persistence -------------------------------------------------------------

namespace {

std::string format_score(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

double round6(double v) { return std::round(v * 1e6) / 1e6; }

}  // namespace

void write_scores_csv(const std::filesystem::path& path,
                      const std::vector<ScoreRecord>& records) {
  std::error_code ec;
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write scores csv: " + path.string());
  out << "printer,device,reference,metric,origin,template_id,instance,repetition,score\n";
  for (const auto& r : records) {
    out << r.printer_id << ',' << r.device_id << ',' << to_string(r.reference) << ','
        << to_string(r.metric) << ',' << to_string(r.origin) << ',' << r.template_id
        << ',' << r.instance << ',' << r.repetition << ',' << format_score(r.score)
        << '\n';
  }
}

std::vector<ScoreRecord> read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read scores csv: " + path.string());
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("scores csv is empty: " + path.string(), 0);

  std::vector<ScoreRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 9)
      throw ParseError("scores csv line " + std::to_string(line_no) + ": expected 9 fields");
    try {
      ScoreRecord r;
      r.printer_id = fields[0];
      r.device_id = fields[1];
      r.reference = reference_from_string(fields[2]);
      r.metric = metric_from_string(fields[3]);
      r.origin = origin_from_string(fields[4]);
      r.template_id = std::stoi(fields[5]);
      r.instance = std::stoi(fields[6]);
      r.repetition = std::stoi(fields[7]);
      r.score = std::stod(fields[8]);
      records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw ParseError("scores csv line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void write_auc_table_json(const std::filesystem::path& path, const AucTable& table) {
  json j = json::object();
  for (const auto& [key, value] : table.cells) {
    j[key.printer_id][key.device_id][to_string(key.metric)][to_string(key.reference)] =
        round6(value);
  }
  std::error_code ec;
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write auc table: " + path.string());
  out << j.dump(2) << '\n';
}

void write_histogram_json(const std::filesystem::path& path, const Histogram& h) {
  json j;
  j["edges"] = h.edges;
  j["original_counts"] = h.positive_counts;
  j["fake_counts"] = h.negative_counts;
  std::error_code ec;
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write histogram: " + path.string());
  out << j.dump(2) << '\n';
}

void write_roc_svg(const std::filesystem::path& path, const std::vector<RocPoint>& curve,
                   double auc_value, const std::string& title) {
  constexpr int size = 480;
  constexpr int pad = 48;
  constexpr int plot = size - 2 * pad;
  auto px = [&](double fpr) { return pad + fpr * plot; };
  auto py = [&](double tpr) { return size - pad - tpr * plot; };
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };

  std::error_code ec;
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write svg: " + path.string());

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\""
      << size << "\" viewBox=\"0 0 " << size << " " << size << "\">\n";
  out << "<rect width=\"" << size << "\" height=\"" << size << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << size / 2 << "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  // axes
  out << "<line x1=\"" << pad << "\" y1=\"" << size - pad << "\" x2=\"" << size - pad
      << "\" y2=\"" << size - pad << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << pad << "\" y1=\"" << size - pad << "\" x2=\"" << pad
      << "\" y2=\"" << pad << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double v = i / 4.0;
    out << "<text x=\"" << px(v) << "\" y=\"" << size - pad + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
        << fmt(v) << "</text>\n";
    out << "<text x=\"" << pad - 8 << "\" y=\"" << py(v) + 3
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << fmt(v)
        << "</text>\n";
  }
  out << "<text x=\"" << size / 2 << "\" y=\"" << size - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
         "false positive rate</text>\n";
  out << "<text x=\"14\" y=\"" << size / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
         "transform=\"rotate(-90 14 " << size / 2 << ")\">true positive rate</text>\n";
  // chance diagonal
  out << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\""
      << py(1) << "\" stroke=\"#999\" stroke-dasharray=\"6,4\"/>\n";
  // curve
  out << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.6\" points=\"";
  char buf[64];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof(buf), "%.3f,%.3f ", px(p.fpr), py(p.tpr));
    out << buf;
  }
  out << "\"/>\n";
  std::snprintf(buf, sizeof(buf), "AUC = %.6f", auc_value);
  out << "<text x=\"" << size - pad - 8 << "\" y=\"" << size - pad - 12
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"13\">" << buf
      << "</text>\n";
  out << "</svg>\n";
}

}  // namespace cdp
