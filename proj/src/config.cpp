#include "cdplab/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

namespace cdp {

using nlohmann::json;

namespace {

// Bundled defaults. Printer and device parameters were calibrated with
// `cdplab calibrate` so that the template-reference AUC spans roughly
// 0.6..0.99 across the device ladder while enrollment references separate
// perfectly; QC thresholds sit at half the 1st percentile of a clean run.
constexpr const char* kDefaultConfigJson = R"json({
  "seed": 1,
  "dataset": {
    "n_templates": 144,
    "template_size": 64,
    "black_fraction": 0.5,
    "train_fraction": 0.278
  },
  "capture": { "n_reps": 3, "n_instances": 1 },
  "printers": [
    { "id": "HPI55", "dot_gain": 0.15, "instance_noise_sigma": 0.15, "print_blur_sigma": 0.5 },
    { "id": "HPI76", "dot_gain": 0.22, "instance_noise_sigma": 0.15, "print_blur_sigma": 0.6 }
  ],
  "devices": [
    { "id": "xs_wide",  "psf_sigma": 1.40, "acq_noise_sigma": 0.085, "gamma": 1.15, "scale_factor": 1.0,  "shift_jitter_max": 3, "qc_blur_threshold": 0.0, "qc_contrast_threshold": 0.0 },
    { "id": "12_wide",  "psf_sigma": 1.30, "acq_noise_sigma": 0.065, "gamma": 1.12, "scale_factor": 1.25, "shift_jitter_max": 3, "qc_blur_threshold": 0.0, "qc_contrast_threshold": 0.0 },
    { "id": "14_wide",  "psf_sigma": 1.25, "acq_noise_sigma": 0.055, "gamma": 1.10, "scale_factor": 1.5,  "shift_jitter_max": 3, "qc_blur_threshold": 0.0, "qc_contrast_threshold": 0.0 },
    { "id": "15_wide",  "psf_sigma": 1.10, "acq_noise_sigma": 0.045, "gamma": 1.08, "scale_factor": 1.5,  "shift_jitter_max": 3, "qc_blur_threshold": 0.0, "qc_contrast_threshold": 0.0 },
    { "id": "epson",    "psf_sigma": 1.05, "acq_noise_sigma": 0.030, "gamma": 1.00, "scale_factor": 2.0,  "shift_jitter_max": 2, "qc_blur_threshold": 0.0, "qc_contrast_threshold": 0.0 },
    { "id": "14_macro", "psf_sigma": 0.95, "acq_noise_sigma": 0.028, "gamma": 1.05, "scale_factor": 2.5,  "shift_jitter_max": 2, "qc_blur_threshold": 0.0, "qc_contrast_threshold": 0.0 },
    { "id": "15_macro", "psf_sigma": 0.80, "acq_noise_sigma": 0.025, "gamma": 1.03, "scale_factor": 3.0,  "shift_jitter_max": 2, "qc_blur_threshold": 0.0, "qc_contrast_threshold": 0.0 }
  ],
  "attack": {
    "estimator": "otsu",
    "capture_device": "epson",
    "unet_threshold": 0.5,
    "estimator_epochs": 30,
    "estimator_learning_rate": 0.0002
  },
  "align": { "radius_margin": 1, "peak_floor": 0.05 },
  "train": {
    "depth": 4,
    "base_channels": 32,
    "disc_layers": 3,
    "disc_base_channels": 32,
    "adv_weight": 1.0,
    "lambda_l1": 100.0,
    "extra_l2_weight": 0.0,
    "extra_ssim_weight": 0.0,
    "epochs": 200,
    "batch_size": 1,
    "n_pairs": 40,
    "learning_rate": 0.0002,
    "beta1": 0.5,
    "beta2": 0.999,
    "checkpoint_every": 50
  },
  "score": {
    "references": ["t", "xhat", "xe"],
    "metrics": ["pcorr", "ssim"],
    "ssim_window": "gaussian11"
  },
  "evaluate": { "histogram_bins": 30 }
})json";

[[noreturn]] void bad_field(const std::string& path, const std::string& why) {
  throw ParseError("config field '" + path + "': " + why);
}

template <class T>
T get_field(const json& j, const std::string& section, const std::string& key) {
  const std::string path = section.empty() ? key : section + "." + key;
  if (!j.contains(key)) bad_field(path, "missing");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    bad_field(path, e.what());
  }
}

void check_known_keys(const json& j, const std::string& section,
                      std::initializer_list<const char*> known) {
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(known.begin(), known.end(),
                     [&key](const char* k) { return key == k; }) == known.end())
      bad_field(section.empty() ? key : section + "." + key, "unknown field");
  }
}

}  // namespace

SsimParams ScoreSection::ssim_params() const {
  SsimParams p;
  if (ssim_window == "gaussian11")
    p.window = SsimParams::Window::gaussian11;
  else if (ssim_window == "uniform8")
    p.window = SsimParams::Window::uniform8;
  else
    throw InvalidArgument("score.ssim_window must be 'gaussian11' or 'uniform8'");
  return p;
}

ExperimentConfig ExperimentConfig::defaults() {
  return from_json(json::parse(kDefaultConfigJson));
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_known_keys(j, "", {"seed", "dataset", "capture", "printers", "devices", "attack",
                           "align", "train", "score", "evaluate"});
  ExperimentConfig cfg;
  cfg.seed = get_field<std::uint64_t>(j, "", "seed");

  {
    const auto& d = j.at("dataset");
    check_known_keys(d, "dataset",
                     {"n_templates", "template_size", "black_fraction", "train_fraction"});
    cfg.dataset.n_templates = get_field<int>(d, "dataset", "n_templates");
    cfg.dataset.template_size = get_field<int>(d, "dataset", "template_size");
    cfg.dataset.black_fraction = get_field<double>(d, "dataset", "black_fraction");
    cfg.dataset.train_fraction = get_field<double>(d, "dataset", "train_fraction");
  }
  {
    const auto& c = j.at("capture");
    check_known_keys(c, "capture", {"n_reps", "n_instances"});
    cfg.capture.n_reps = get_field<int>(c, "capture", "n_reps");
    cfg.capture.n_instances = get_field<int>(c, "capture", "n_instances");
  }
  for (const auto& p : j.at("printers")) {
    check_known_keys(p, "printers[]",
                     {"id", "dot_gain", "instance_noise_sigma", "print_blur_sigma"});
    PrinterProfile prof;
    prof.id = get_field<std::string>(p, "printers[]", "id");
    prof.dot_gain = get_field<double>(p, "printers[]", "dot_gain");
    prof.instance_noise_sigma = get_field<double>(p, "printers[]", "instance_noise_sigma");
    prof.print_blur_sigma = get_field<double>(p, "printers[]", "print_blur_sigma");
    cfg.printers.push_back(std::move(prof));
  }
  for (const auto& d : j.at("devices")) {
    check_known_keys(d, "devices[]",
                     {"id", "psf_sigma", "acq_noise_sigma", "gamma", "scale_factor",
                      "shift_jitter_max", "qc_blur_threshold", "qc_contrast_threshold"});
    DeviceProfile prof;
    prof.id = get_field<std::string>(d, "devices[]", "id");
    prof.psf_sigma = get_field<double>(d, "devices[]", "psf_sigma");
    prof.acq_noise_sigma = get_field<double>(d, "devices[]", "acq_noise_sigma");
    prof.gamma = get_field<double>(d, "devices[]", "gamma");
    prof.scale_factor = get_field<double>(d, "devices[]", "scale_factor");
    prof.shift_jitter_max = get_field<int>(d, "devices[]", "shift_jitter_max");
    if (d.contains("qc_blur_threshold"))
      prof.qc_blur_threshold = get_field<double>(d, "devices[]", "qc_blur_threshold");
    if (d.contains("qc_contrast_threshold"))
      prof.qc_contrast_threshold = get_field<double>(d, "devices[]", "qc_contrast_threshold");
    cfg.devices.push_back(std::move(prof));
  }
  {
    const auto& a = j.at("attack");
    check_known_keys(a, "attack",
                     {"estimator", "capture_device", "unet_threshold", "estimator_epochs",
                      "estimator_learning_rate"});
    cfg.attack.estimator = get_field<std::string>(a, "attack", "estimator");
    cfg.attack.capture_device = get_field<std::string>(a, "attack", "capture_device");
    cfg.attack.unet_threshold = get_field<double>(a, "attack", "unet_threshold");
    cfg.attack.estimator_epochs = get_field<int>(a, "attack", "estimator_epochs");
    cfg.attack.estimator_learning_rate =
        get_field<double>(a, "attack", "estimator_learning_rate");
  }
  {
    const auto& a = j.at("align");
    check_known_keys(a, "align", {"radius_margin", "peak_floor"});
    cfg.align.radius_margin = get_field<int>(a, "align", "radius_margin");
    cfg.align.peak_floor = get_field<double>(a, "align", "peak_floor");
  }
  {
    const auto& t = j.at("train");
    check_known_keys(t, "train",
                     {"depth", "base_channels", "disc_layers", "disc_base_channels",
                      "adv_weight", "lambda_l1", "extra_l2_weight", "extra_ssim_weight",
                      "epochs", "batch_size", "n_pairs", "learning_rate", "beta1", "beta2",
                      "checkpoint_every"});
    cfg.train.depth = get_field<int>(t, "train", "depth");
    cfg.train.base_channels = get_field<int>(t, "train", "base_channels");
    cfg.train.disc_layers = get_field<int>(t, "train", "disc_layers");
    cfg.train.disc_base_channels = get_field<int>(t, "train", "disc_base_channels");
    cfg.train.adv_weight = get_field<double>(t, "train", "adv_weight");
    cfg.train.lambda_l1 = get_field<double>(t, "train", "lambda_l1");
    cfg.train.extra_l2_weight = get_field<double>(t, "train", "extra_l2_weight");
    cfg.train.extra_ssim_weight = get_field<double>(t, "train", "extra_ssim_weight");
    cfg.train.epochs = get_field<int>(t, "train", "epochs");
    cfg.train.batch_size = get_field<int>(t, "train", "batch_size");
    cfg.train.n_pairs = get_field<int>(t, "train", "n_pairs");
    cfg.train.learning_rate = get_field<double>(t, "train", "learning_rate");
    cfg.train.beta1 = get_field<double>(t, "train", "beta1");
    cfg.train.beta2 = get_field<double>(t, "train", "beta2");
    cfg.train.checkpoint_every = get_field<int>(t, "train", "checkpoint_every");
  }
  {
    const auto& s = j.at("score");
    check_known_keys(s, "score", {"references", "metrics", "ssim_window"});
    cfg.score.references.clear();
    for (const auto& r : s.at("references"))
      cfg.score.references.push_back(reference_from_string(r.get<std::string>()));
    cfg.score.metrics.clear();
    for (const auto& m : s.at("metrics"))
      cfg.score.metrics.push_back(metric_from_string(m.get<std::string>()));
    cfg.score.ssim_window = get_field<std::string>(s, "score", "ssim_window");
  }
  {
    const auto& e = j.at("evaluate");
    check_known_keys(e, "evaluate", {"histogram_bins"});
    cfg.evaluate.histogram_bins = get_field<int>(e, "evaluate", "histogram_bins");
  }
  cfg.validate();
  return cfg;
}

json ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["dataset"] = {{"n_templates", dataset.n_templates},
                  {"template_size", dataset.template_size},
                  {"black_fraction", dataset.black_fraction},
                  {"train_fraction", dataset.train_fraction}};
  j["capture"] = {{"n_reps", capture.n_reps}, {"n_instances", capture.n_instances}};
  j["printers"] = json::array();
  for (const auto& p : printers)
    j["printers"].push_back({{"id", p.id},
                             {"dot_gain", p.dot_gain},
                             {"instance_noise_sigma", p.instance_noise_sigma},
                             {"print_blur_sigma", p.print_blur_sigma}});
  j["devices"] = json::array();
  for (const auto& d : devices)
    j["devices"].push_back({{"id", d.id},
                            {"psf_sigma", d.psf_sigma},
                            {"acq_noise_sigma", d.acq_noise_sigma},
                            {"gamma", d.gamma},
                            {"scale_factor", d.scale_factor},
                            {"shift_jitter_max", d.shift_jitter_max},
                            {"qc_blur_threshold", d.qc_blur_threshold},
                            {"qc_contrast_threshold", d.qc_contrast_threshold}});
  j["attack"] = {{"estimator", attack.estimator},
                 {"capture_device", attack.capture_device},
                 {"unet_threshold", attack.unet_threshold},
                 {"estimator_epochs", attack.estimator_epochs},
                 {"estimator_learning_rate", attack.estimator_learning_rate}};
  j["align"] = {{"radius_margin", align.radius_margin}, {"peak_floor", align.peak_floor}};
  j["train"] = {{"depth", train.depth},
                {"base_channels", train.base_channels},
                {"disc_layers", train.disc_layers},
                {"disc_base_channels", train.disc_base_channels},
                {"adv_weight", train.adv_weight},
                {"lambda_l1", train.lambda_l1},
                {"extra_l2_weight", train.extra_l2_weight},
                {"extra_ssim_weight", train.extra_ssim_weight},
                {"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"n_pairs", train.n_pairs},
                {"learning_rate", train.learning_rate},
                {"beta1", train.beta1},
                {"beta2", train.beta2},
                {"checkpoint_every", train.checkpoint_every}};
  json refs = json::array(), mets = json::array();
  for (auto r : score.references) refs.push_back(to_string(r));
  for (auto m : score.metrics) mets.push_back(to_string(m));
  j["score"] = {{"references", refs}, {"metrics", mets}, {"ssim_window", score.ssim_window}};
  j["evaluate"] = {{"histogram_bins", evaluate.histogram_bins}};
  return j;
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
  std::error_code ec;
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write config: " + path.string());
  out << to_json().dump(2) << '\n';
}

ExperimentConfig ExperimentConfig::load(const std::optional<std::filesystem::path>& path,
                                        const std::vector<std::string>& overrides,
                                        bool apply_env_seed) {
  json j;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw IoError("cannot read config: " + path->string());
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ParseError("config " + path->string() + ": " + e.what(), e.byte);
    }
  } else {
    j = json::parse(kDefaultConfigJson);
  }
  for (const auto& assignment : overrides) apply_override(j, assignment);

  if (apply_env_seed) {
    if (const char* env = std::getenv("CDP_LAB_SEED")) {
      try {
        j["seed"] = static_cast<std::uint64_t>(std::stoull(env));
      } catch (const std::exception&) {
        throw InvalidArgument(std::string("CDP_LAB_SEED is not an integer: ") + env);
      }
    }
  }
  return from_json(j);
}

void ExperimentConfig::validate() const {
  if (dataset.n_templates < 2) throw InvalidArgument("dataset.n_templates must be >= 2");
  if (dataset.template_size < 16 || dataset.template_size > 228)
    throw InvalidArgument("dataset.template_size must be in [16, 228]");
  if (!(dataset.black_fraction > 0.0 && dataset.black_fraction < 1.0))
    throw InvalidArgument("dataset.black_fraction must be in (0, 1)");
  if (!(dataset.train_fraction > 0.0 && dataset.train_fraction < 1.0))
    throw InvalidArgument("dataset.train_fraction must be in (0, 1)");
  if (capture.n_reps < 1) throw InvalidArgument("capture.n_reps must be >= 1");
  if (capture.n_instances < 1) throw InvalidArgument("capture.n_instances must be >= 1");
  if (printers.empty()) throw InvalidArgument("at least one printer profile is required");
  if (devices.empty()) throw InvalidArgument("at least one device profile is required");
  for (const auto& p : printers) p.validate();
  for (const auto& d : devices) d.validate();
  if (attack.estimator != "otsu" && attack.estimator != "unet")
    throw InvalidArgument("attack.estimator must be 'otsu' or 'unet'");
  device(attack.capture_device);  // must exist
  if (align.radius_margin < 0) throw InvalidArgument("align.radius_margin must be >= 0");
  score.ssim_params();  // validates the window name
  if (evaluate.histogram_bins < 2) throw InvalidArgument("evaluate.histogram_bins must be >= 2");
}

const PrinterProfile& ExperimentConfig::printer(const std::string& id) const {
  for (const auto& p : printers)
    if (p.id == id) return p;
  throw InvalidArgument("unknown printer '" + id + "'");
}

const DeviceProfile& ExperimentConfig::device(const std::string& id) const {
  for (const auto& d : devices)
    if (d.id == id) return d;
  throw InvalidArgument("unknown device '" + id + "'");
}

std::vector<const DeviceProfile*> ExperimentConfig::resolution_ladder() const {
  std::vector<const DeviceProfile*> ladder;
  for (const auto& d : devices) ladder.push_back(&d);
  std::stable_sort(ladder.begin(), ladder.end(),
                   [](const DeviceProfile* a, const DeviceProfile* b) {
                     return a->psf_sigma > b->psf_sigma;
                   });
  return ladder;
}

px::TrainConfig ExperimentConfig::train_config() const {
  px::TrainConfig cfg;
  cfg.generator.depth = train.depth;
  cfg.generator.base_channels = train.base_channels;
  cfg.generator.image_size = dataset.template_size;
  cfg.discriminator.n_layers = train.disc_layers;
  cfg.discriminator.base_channels = train.disc_base_channels;
  cfg.weights.adversarial = train.adv_weight;
  cfg.weights.lambda_l1 = train.lambda_l1;
  cfg.weights.extra_l2 = train.extra_l2_weight;
  cfg.weights.extra_ssim = train.extra_ssim_weight;
  cfg.adam.learning_rate = train.learning_rate;
  cfg.adam.beta1 = train.beta1;
  cfg.adam.beta2 = train.beta2;
  cfg.epochs = train.epochs;
  cfg.batch_size = train.batch_size;
  cfg.n_pairs = train.n_pairs;
  cfg.checkpoint_every = train.checkpoint_every;
  return cfg;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw InvalidArgument("override must look like path.to.field=value: " + assignment);
  const std::string dotted = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  std::string pointer = "/";
  for (char c : dotted) pointer += (c == '.') ? '/' : c;

  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // unquoted strings
  }
  try {
    j[json::json_pointer(pointer)] = std::move(value);
  } catch (const json::exception& e) {
    throw InvalidArgument("cannot apply override '" + assignment + "': " + e.what());
  }
}

}  // namespace cdp
