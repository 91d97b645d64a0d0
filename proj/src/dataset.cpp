#include "cdplab/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "cdplab/png_io.hpp"
#include "cdplab/rng.hpp"

namespace cdp {

using nlohmann::json;

namespace {

std::string zero_pad4(int v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", v);
  return buf;
}

std::uint64_t bits_hash(const BitMatrix& bits) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  const auto* p = bits.data();
  for (Eigen::Index i = 0; i < bits.size(); ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

bool DatasetManifest::is_train(int template_id) const {
  return std::find(train_ids.begin(), train_ids.end(), template_id) != train_ids.end();
}

bool DatasetManifest::is_kept(const std::string& capture_path) const {
  for (const auto& e : qc_log)
    if (e.path == capture_path) return e.kept;
  return true;  // not subjected to QC
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  json j;
  j["seed"] = seed;
  j["n_templates"] = n_templates;
  j["template_size"] = template_size;
  j["printer_ids"] = printer_ids;
  j["device_ids"] = device_ids;
  j["split"] = {{"train_ids", train_ids}, {"test_ids", test_ids}};
  json log = json::array();
  for (const auto& e : qc_log)
    log.push_back({{"path", e.path}, {"kept", e.kept}, {"reason", e.reason}});
  j["qc_log"] = std::move(log);

  std::error_code ec;
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  out << j.dump(2) << '\n';
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("manifest " + path.string() + ": " + e.what(), e.byte);
  }
  DatasetManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.n_templates = j.at("n_templates").get<int>();
    m.template_size = j.at("template_size").get<int>();
    m.printer_ids = j.at("printer_ids").get<std::vector<std::string>>();
    m.device_ids = j.at("device_ids").get<std::vector<std::string>>();
    m.train_ids = j.at("split").at("train_ids").get<std::vector<int>>();
    m.test_ids = j.at("split").at("test_ids").get<std::vector<int>>();
    for (const auto& e : j.at("qc_log")) {
      m.qc_log.push_back({e.at("path").get<std::string>(), e.at("kept").get<bool>(),
                          e.at("reason").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw ParseError("manifest " + path.string() + ": " + e.what());
  }
  return m;
}

Template generate_template(std::uint64_t seed, int width, int height,
                           double black_fraction) {
  if (width < 4 || height < 4)
    throw InvalidArgument("generate_template: width and height must be >= 4");
  if (!(black_fraction > 0.0 && black_fraction < 1.0))
    throw InvalidArgument("generate_template: black_fraction must be in (0, 1)");

  const int n = width * height;
  const int n_black = static_cast<int>(std::floor(black_fraction * n));

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, "template-permutation"));
  rng.shuffle(order);

  Template t;
  t.kind = TemplateKind::original;
  t.bits = BitMatrix::Zero(height, width);
  for (int i = 0; i < n_black; ++i) t.bits.data()[order[i]] = 1;
  return t;
}

std::vector<Template> generate_dataset(std::uint64_t seed, int n, int size,
                                       double black_fraction,
                                       DatasetManifest& manifest) {
  if (n < 2) throw InvalidArgument("generate_dataset: need n >= 2 templates");

  std::vector<Template> out;
  out.reserve(n);
  std::unordered_map<std::uint64_t, std::vector<int>> seen;
  for (int i = 0; i < n; ++i) {
    Template t = generate_template(derive_seed(seed, "template", {static_cast<std::uint64_t>(i)}),
                                   size, size, black_fraction);
    t.id = i;
    const std::uint64_t h = bits_hash(t.bits);
    for (int prev : seen[h]) {
      if ((out[prev].bits == t.bits).all())
        throw InternalError(
            "generate_dataset: duplicate templates " + std::to_string(prev) + " and " +
            std::to_string(i) + "; rerun with a different master seed");
    }
    seen[h].push_back(i);
    out.push_back(std::move(t));
  }

  manifest.seed = seed;
  manifest.n_templates = n;
  manifest.template_size = size;
  manifest.train_ids.clear();
  manifest.test_ids.clear();
  manifest.qc_log.clear();
  return out;
}

void split_dataset(DatasetManifest& manifest, double train_fraction,
                   std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw InvalidArgument("split_dataset: train_fraction must be in (0, 1)");
  const int n = manifest.n_templates;
  const int n_train = static_cast<int>(std::lround(train_fraction * n));
  if (n_train < 1 || n_train >= n)
    throw InvalidArgument("split_dataset: fraction yields an empty train or test set");

  std::vector<int> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = i;
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(ids);

  manifest.train_ids.assign(ids.begin(), ids.begin() + n_train);
  manifest.test_ids.assign(ids.begin() + n_train, ids.end());
}

std::filesystem::path DatasetPaths::template_png(int id) const {
  return root / "templates" / ("t_" + zero_pad4(id) + ".png");
}

std::filesystem::path DatasetPaths::physical_png(const std::string& printer, bool fake,
                                                 int id, int instance) const {
  return root / "physical" / printer / (fake ? "fake" : "original") /
         ("x_" + zero_pad4(id) + "_" + std::to_string(instance) + ".png");
}

std::filesystem::path DatasetPaths::capture_png(const std::string& printer,
                                                const std::string& device, bool fake,
                                                int id, int instance, int rep) const {
  return root / "captures" / printer / device / (fake ? "fake" : "original") /
         ("y_" + zero_pad4(id) + "_" + std::to_string(instance) + "_" +
          std::to_string(rep) + ".png");
}

std::filesystem::path DatasetPaths::synthetic_png(const std::string& printer,
                                                  const std::string& device, int id) const {
  return root / "synthetic" / printer / device / ("xhat_" + zero_pad4(id) + ".png");
}

std::filesystem::path DatasetPaths::estimated_template_png(const std::string& printer,
                                                           int id) const {
  return root / "attack" / printer / ("that_" + zero_pad4(id) + ".png");
}

std::string DatasetPaths::rel(const std::filesystem::path& p) const {
  return p.lexically_relative(root).generic_string();
}

void persist_image(const PhysicalImage& img, const std::filesystem::path& path) {
  validate_physical(img);
  save_png16(path, img.pixels);
}

PhysicalImage load_physical_image(const std::filesystem::path& path) {
  PhysicalImage img;
  img.pixels = load_png16(path);
  return img;
}

void persist_template(const Template& t, const std::filesystem::path& path) {
  save_png16(path, t.to_image());
}

Template load_template(const std::filesystem::path& path, int id, TemplateKind kind) {
  return Template::from_image(load_png16(path), id, kind);
}

}  // namespace cdp
