#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cdplab/image.hpp"

namespace cdp {

/// Record of everything a dataset run decided: generation parameters, the
/// train/test split and the capture quality-control log.
struct DatasetManifest {
  std::uint64_t seed = 0;
  int n_templates = 0;
  int template_size = 0;
  std::vector<std::string> printer_ids;
  std::vector<std::string> device_ids;
  std::vector<int> train_ids;
  std::vector<int> test_ids;

  struct QcEntry {
    std::string path;
    bool kept = true;
    std::string reason;  // empty when kept
  };
  std::vector<QcEntry> qc_log;

  bool is_train(int template_id) const;
  bool is_kept(const std::string& capture_path) const;

  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);
};

/// Binary pattern with an exact black-pixel count floor(black_fraction * n),
/// positions chosen by a seeded uniform permutation. Pure in (seed, dims,
/// fraction).
Template generate_template(std::uint64_t seed, int width, int height,
                           double black_fraction);

/// n pairwise-distinct templates with ids 0..n-1, template i drawn from a
/// seed derived from the master seed. Fills the generation fields of
/// `manifest` (split and qc_log are left empty).
std::vector<Template> generate_dataset(std::uint64_t seed, int n, int size,
                                       double black_fraction,
                                       DatasetManifest& manifest);

/// Seeded shuffle of all ids followed by a prefix split with
/// |train| = round(train_fraction * n). Both sides must end up nonempty.
void split_dataset(DatasetManifest& manifest, double train_fraction,
                   std::uint64_t seed);

/// Dataset directory layout. All artifact paths go through this type.
struct DatasetPaths {
  std::filesystem::path root;

  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path template_png(int id) const;
  std::filesystem::path physical_png(const std::string& printer, bool fake, int id,
                                     int instance) const;
  std::filesystem::path capture_png(const std::string& printer, const std::string& device,
                                    bool fake, int id, int instance, int rep) const;
  std::filesystem::path synthetic_png(const std::string& printer,
                                      const std::string& device, int id) const;
  std::filesystem::path estimated_template_png(const std::string& printer, int id) const;
  std::filesystem::path scores_csv() const { return root / "scores.csv"; }
  std::filesystem::path align_failures_csv() const { return root / "align_failures.csv"; }
  std::filesystem::path eval_dir() const { return root / "eval"; }
  std::filesystem::path runs_dir() const { return root / "runs"; }
  std::filesystem::path checkpoints_dir() const { return root / "checkpoints"; }

  /// Path of `p` relative to the dataset root, with '/' separators.
  std::string rel(const std::filesystem::path& p) const;
};

/// 16-bit grayscale PNG persistence; provenance is carried by the dataset
/// layout, so these are thin wrappers around the PNG codec plus validation.
void persist_image(const PhysicalImage& img, const std::filesystem::path& path);
PhysicalImage load_physical_image(const std::filesystem::path& path);

void persist_template(const Template& t, const std::filesystem::path& path);
Template load_template(const std::filesystem::path& path, int id,
                       TemplateKind kind = TemplateKind::original);

}  // namespace cdp
