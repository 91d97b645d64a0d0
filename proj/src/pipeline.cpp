#include "cdplab/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include "cdplab/align.hpp"
#include "cdplab/attack.hpp"
#include "cdplab/channel.hpp"
#include "cdplab/imageops.hpp"
#include "cdplab/metrics.hpp"
#include "cdplab/png_io.hpp"
#include "cdplab/threading.hpp"

namespace cdp {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "cdplab 0.1.0";

std::uint64_t chain_seed(std::uint64_t base, std::string_view stage,
                         const std::string& scope,
                         std::initializer_list<std::uint64_t> coords = {}) {
  return derive_seed(derive_seed(base, stage), scope, coords);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_run_record(const DatasetPaths& paths, const std::string& command,
                      const json& arguments, double duration_seconds, const json& extra,
                      bool enabled) {
  if (!enabled) return;
  const auto now_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::system_clock::now().time_since_epoch())
                          .count();
  json record;
  record["command"] = command;
  record["arguments"] = arguments;
  record["started_unix_ms"] = now_ms;
  record["duration_seconds"] = duration_seconds;
  record["version"] = kVersion;
  if (!extra.is_null()) record["results"] = extra;

  std::error_code ec;
  std::filesystem::create_directories(paths.runs_dir(), ec);
  const auto file = paths.runs_dir() / (command + "-" + std::to_string(now_ms) + ".json");
  std::ofstream out(file);
  if (out) out << record.dump(2) << '\n';
}

ExperimentConfig load_dataset_config(const DatasetPaths& paths,
                                     const PipelineOptions& opt) {
  if (!std::filesystem::exists(paths.config()))
    throw PipelineError("no dataset config at " + paths.config().string() +
                        "; run 'cdplab gen' first");
  // The stored config already carries the effective seed.
  return ExperimentConfig::load(paths.config(), opt.config_overrides,
                                /*apply_env_seed=*/false);
}

void sort_qc_log(DatasetManifest& manifest) {
  std::sort(manifest.qc_log.begin(), manifest.qc_log.end(),
            [](const DatasetManifest::QcEntry& a, const DatasetManifest::QcEntry& b) {
              return a.path < b.path;
            });
}

DatasetManifest load_manifest_or_fail(const DatasetPaths& paths) {
  if (!std::filesystem::exists(paths.manifest()))
    throw PipelineError("no manifest at " + paths.manifest().string() +
                        "; run 'cdplab gen' first");
  return DatasetManifest::load(paths.manifest());
}

std::vector<Template> load_all_templates(const DatasetPaths& paths,
                                         const DatasetManifest& manifest) {
  std::vector<Template> templates(manifest.n_templates);
  for (int i = 0; i < manifest.n_templates; ++i) {
    const auto file = paths.template_png(i);
    if (!std::filesystem::exists(file))
      throw PipelineError("missing template " + file.string() + "; run 'cdplab gen' first");
    templates[i] = load_template(file, i);
  }
  return templates;
}

template <class Profile>
std::vector<const Profile*> select_profiles(const std::vector<Profile>& all,
                                            const std::vector<std::string>& filter,
                                            const char* what) {
  std::vector<const Profile*> out;
  if (filter.empty()) {
    for (const auto& p : all) out.push_back(&p);
    return out;
  }
  for (const auto& id : filter) {
    auto it = std::find_if(all.begin(), all.end(),
                           [&id](const Profile& p) { return p.id == id; });
    if (it == all.end())
      throw InvalidArgument(std::string("unknown ") + what + " in filter: " + id);
    out.push_back(&*it);
  }
  return out;
}

// qc_log lookups by path, O(1).
struct QcIndex {
  std::unordered_map<std::string, bool> kept;

  explicit QcIndex(const DatasetManifest& manifest) {
    kept.reserve(manifest.qc_log.size());
    for (const auto& e : manifest.qc_log) kept[e.path] = e.kept;
  }
  bool is_kept(const std::string& rel_path) const {
    auto it = kept.find(rel_path);
    return it == kept.end() ? true : it->second;
  }
};

PhysicalInstance load_instance(const DatasetPaths& paths, const std::string& printer_id,
                               bool fake, int template_id, int instance) {
  const auto file = paths.physical_png(printer_id, fake, template_id, instance);
  if (!std::filesystem::exists(file))
    throw PipelineError("missing physical instance " + file.string() + "; run 'cdplab " +
                        (fake ? std::string("attack") : std::string("simulate")) +
                        "' first");
  PhysicalInstance inst;
  inst.template_id = template_id;
  inst.printer_id = printer_id;
  inst.instance = instance;
  inst.latent.pixels = load_png16(file);
  inst.latent.role = fake ? ImageRole::fake_f : ImageRole::original_x;
  inst.latent.template_id = template_id;
  inst.latent.printer_id = printer_id;
  inst.latent.instance = instance;
  return inst;
}

// Captures one (printer, device) group and appends its QC outcome to the
// manifest. Shared by the original and fake capture passes.
void capture_group(const ExperimentConfig& cfg, const DatasetPaths& paths,
                   DatasetManifest& manifest, const PrinterProfile& printer,
                   const DeviceProfile& device, bool fake, int n_templates,
                   const PipelineOptions& opt) {
  struct Job {
    int template_id, instance, rep;
  };
  std::vector<Job> jobs;
  for (int id = 0; id < n_templates; ++id)
    for (int inst = 0; inst < cfg.capture.n_instances; ++inst)
      for (int rep = 0; rep < cfg.capture.n_reps; ++rep) jobs.push_back({id, inst, rep});

  // Latents are shared across reps; load each once.
  std::vector<PhysicalInstance> latents(static_cast<std::size_t>(n_templates) *
                                        cfg.capture.n_instances);
  parallel_for(latents.size(), opt.threads, [&](std::size_t k) {
    const int id = static_cast<int>(k) / cfg.capture.n_instances;
    const int inst = static_cast<int>(k) % cfg.capture.n_instances;
    latents[k] = load_instance(paths, printer.id, fake, id, inst);
  });

  const std::string origin = fake ? "fake" : "original";
  std::vector<Image> images(jobs.size());
  parallel_for(jobs.size(), opt.threads, [&](std::size_t k) {
    const Job& job = jobs[k];
    const auto& inst =
        latents[static_cast<std::size_t>(job.template_id) * cfg.capture.n_instances +
                job.instance];
    const std::uint64_t seed =
        chain_seed(cfg.seed, "capture", printer.id + "/" + device.id + "/" + origin,
                   {static_cast<std::uint64_t>(job.template_id),
                    static_cast<std::uint64_t>(job.instance),
                    static_cast<std::uint64_t>(job.rep)});
    auto cap = acquire(inst, device, seed);
    cap.image.repetition = job.rep;
    persist_image(cap.image, paths.capture_png(printer.id, device.id, fake,
                                               job.template_id, job.instance, job.rep));
    images[k] = std::move(cap.image.pixels);
  });

  const auto qc = quality_control(images, device.qc_blur_threshold,
                                  device.qc_contrast_threshold);
  std::vector<const char*> reasons(jobs.size(), nullptr);
  for (const auto& d : qc.discarded) reasons[d.index] = d.reason.c_str();
  std::vector<bool> kept(jobs.size(), true);
  for (const auto& d : qc.discarded) kept[d.index] = false;
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    const Job& job = jobs[k];
    manifest.qc_log.push_back(
        {paths.rel(paths.capture_png(printer.id, device.id, fake, job.template_id,
                                     job.instance, job.rep)),
         kept[k], kept[k] ? std::string() : std::string(reasons[k])});
  }
}

}  // namespace

std::optional<int> enrollment_rep(const DatasetManifest& manifest, const DatasetPaths& paths,
                                  const std::string& printer_id, const std::string& device_id,
                                  int template_id, int instance, int n_reps) {
  for (int rep = 0; rep < n_reps; ++rep) {
    const auto rel =
        paths.rel(paths.capture_png(printer_id, device_id, false, template_id, instance, rep));
    if (manifest.is_kept(rel)) return rep;
  }
  return std::nullopt;
}

void run_gen(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
             const PipelineOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  DatasetPaths paths{out_dir};

  DatasetManifest manifest;
  auto templates = generate_dataset(cfg.seed, cfg.dataset.n_templates,
                                    cfg.dataset.template_size, cfg.dataset.black_fraction,
                                    manifest);
  split_dataset(manifest, cfg.dataset.train_fraction, cfg.seed);
  for (const auto& p : cfg.printers) manifest.printer_ids.push_back(p.id);
  for (const auto& d : cfg.devices) manifest.device_ids.push_back(d.id);

  parallel_for(templates.size(), opt.threads, [&](std::size_t i) {
    persist_template(templates[i], paths.template_png(static_cast<int>(i)));
  });
  manifest.save(paths.manifest());
  cfg.save(paths.config());

  write_run_record(paths, "gen",
                   {{"out_dir", out_dir.string()}, {"seed", cfg.seed},
                    {"n_templates", cfg.dataset.n_templates},
                    {"template_size", cfg.dataset.template_size}},
                   seconds_since(t0),
                   {{"train_ids", manifest.train_ids.size()},
                    {"test_ids", manifest.test_ids.size()}},
                   opt.write_run_record);
}

void run_simulate(const std::filesystem::path& dataset_dir, const PipelineOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  DatasetPaths paths{dataset_dir};
  const auto cfg = load_dataset_config(paths, opt);
  auto manifest = load_manifest_or_fail(paths);
  const auto templates = load_all_templates(paths, manifest);

  const auto printers = select_profiles(cfg.printers, opt.printer_filter, "printer");
  const auto devices = select_profiles(cfg.devices, opt.device_filter, "device");

  // Physical originals.
  for (const auto* printer : printers) {
    std::vector<std::pair<int, int>> prints;
    for (int id = 0; id < manifest.n_templates; ++id)
      for (int inst = 0; inst < cfg.capture.n_instances; ++inst)
        prints.emplace_back(id, inst);
    parallel_for(prints.size(), opt.threads, [&](std::size_t k) {
      const auto [id, inst] = prints[k];
      const auto seed = chain_seed(cfg.seed, "print-original", printer->id,
                                   {static_cast<std::uint64_t>(id),
                                    static_cast<std::uint64_t>(inst)});
      auto physical = print_template(templates[id], *printer, seed, ImageRole::original_x);
      physical.instance = inst;
      physical.latent.instance = inst;
      persist_image(physical.latent, paths.physical_png(printer->id, false, id, inst));
    });
  }

  // Remove any stale QC entries for the groups we are about to redo, then
  // capture. Keeps reruns idempotent.
  std::erase_if(manifest.qc_log, [&](const DatasetManifest::QcEntry& e) {
    for (const auto* printer : printers)
      for (const auto* device : devices)
        if (e.path.starts_with("captures/" + printer->id + "/" + device->id + "/original/"))
          return true;
    return false;
  });
  for (const auto* printer : printers)
    for (const auto* device : devices)
      capture_group(cfg, paths, manifest, *printer, *device, /*fake=*/false,
                    manifest.n_templates, opt);

  sort_qc_log(manifest);
  std::size_t discarded = 0;
  for (const auto& e : manifest.qc_log)
    if (!e.kept) ++discarded;
  manifest.save(paths.manifest());

  write_run_record(paths, "simulate",
                   {{"dataset", dataset_dir.string()}, {"threads", opt.threads}},
                   seconds_since(t0),
                   {{"qc_discarded", discarded}, {"qc_total", manifest.qc_log.size()}},
                   opt.write_run_record);
}

void run_attack(const std::filesystem::path& dataset_dir, const PipelineOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  DatasetPaths paths{dataset_dir};
  const auto cfg = load_dataset_config(paths, opt);
  auto manifest = load_manifest_or_fail(paths);
  const auto templates = load_all_templates(paths, manifest);

  const auto printers = select_profiles(cfg.printers, opt.printer_filter, "printer");
  const auto devices = select_profiles(cfg.devices, opt.device_filter, "device");
  const DeviceProfile& attack_device = cfg.device(cfg.attack.capture_device);
  const int radius = attack_device.shift_jitter_max + cfg.align.radius_margin;

  EstimatorSpec estimator;
  if (cfg.attack.estimator == "otsu") {
    estimator.kind = EstimatorSpec::Kind::threshold_otsu;
  } else {
    // Learned estimator: L1 regression from attacker captures to templates,
    // trained on the train split only.
    estimator.kind = EstimatorSpec::Kind::learned_unet;
    estimator.threshold = cfg.attack.unet_threshold;
    std::vector<px::TrainPair> pairs(manifest.train_ids.size());
    const auto& first_printer = *printers.front();
    parallel_for(pairs.size(), opt.threads, [&](std::size_t k) {
      const int id = manifest.train_ids[k];
      auto original = load_instance(paths, first_printer.id, false, id, 0);
      auto cap = acquire(original, attack_device,
                         chain_seed(cfg.seed, "attack-estimator-data", first_printer.id,
                                    {static_cast<std::uint64_t>(id)}));
      auto reg = register_capture(cap.image.pixels, templates[id], radius,
                                  cfg.align.peak_floor);
      pairs[k] = {templates[id].to_image(), std::move(reg.aligned)};
    });
    px::GeneratorConfig est_cfg;
    est_cfg.depth = cfg.train.depth;
    est_cfg.base_channels = cfg.train.base_channels;
    est_cfg.image_size = cfg.dataset.template_size;
    auto net = train_estimator(pairs, est_cfg, cfg.attack.estimator_epochs,
                               cfg.attack.estimator_learning_rate,
                               chain_seed(cfg.seed, "attack-estimator", "train"));
    estimator.network = std::make_shared<px::UNet>(std::move(net));
  }

  double ber_sum = 0.0;
  std::size_t ber_count = 0;
  for (const auto* printer : printers) {
    std::vector<std::pair<int, int>> targets;
    for (int id = 0; id < manifest.n_templates; ++id)
      for (int inst = 0; inst < cfg.capture.n_instances; ++inst)
        targets.emplace_back(id, inst);

    std::vector<double> bers(targets.size());
    parallel_for(targets.size(), opt.threads, [&](std::size_t k) {
      const auto [id, inst] = targets[k];
      // The counterfeiter works from the designated enrolled item.
      auto original = load_instance(paths, printer->id, false, id, 0);
      auto outcome = attack_template(
          templates[id], original, attack_device, *printer, estimator,
          chain_seed(cfg.seed, "attack", printer->id,
                     {static_cast<std::uint64_t>(id), static_cast<std::uint64_t>(inst)}),
          radius);
      outcome.fake.instance = inst;
      outcome.fake.latent.instance = inst;
      persist_image(outcome.fake.latent, paths.physical_png(printer->id, true, id, inst));
      if (inst == 0)
        persist_template(outcome.estimated, paths.estimated_template_png(printer->id, id));
      bers[k] = outcome.bit_error_rate;
    });
    for (double b : bers) ber_sum += b;
    ber_count += bers.size();
  }

  std::erase_if(manifest.qc_log, [&](const DatasetManifest::QcEntry& e) {
    for (const auto* printer : printers)
      for (const auto* device : devices)
        if (e.path.starts_with("captures/" + printer->id + "/" + device->id + "/fake/"))
          return true;
    return false;
  });
  for (const auto* printer : printers)
    for (const auto* device : devices)
      capture_group(cfg, paths, manifest, *printer, *device, /*fake=*/true,
                    manifest.n_templates, opt);
  sort_qc_log(manifest);
  manifest.save(paths.manifest());

  write_run_record(paths, "attack",
                   {{"dataset", dataset_dir.string()},
                    {"estimator", cfg.attack.estimator},
                    {"capture_device", cfg.attack.capture_device}},
                   seconds_since(t0),
                   {{"mean_bit_error_rate", ber_count ? ber_sum / ber_count : 0.0}},
                   opt.write_run_record);
}

std::filesystem::path run_train(const std::filesystem::path& dataset_dir,
                                const std::string& printer_id, const std::string& device_id,
                                const PipelineOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  DatasetPaths paths{dataset_dir};
  const auto cfg = load_dataset_config(paths, opt);
  const auto manifest = load_manifest_or_fail(paths);
  const auto templates = load_all_templates(paths, manifest);
  const auto& printer = cfg.printer(printer_id);
  const auto& device = cfg.device(device_id);
  const int radius = device.shift_jitter_max + cfg.align.radius_margin;

  if (manifest.train_ids.empty())
    throw PipelineError("manifest has no train split; run 'cdplab gen' first");

  std::vector<px::TrainPair> pairs;
  for (int id : manifest.train_ids) {
    if (static_cast<int>(pairs.size()) >= cfg.train.n_pairs) break;
    const auto rep = enrollment_rep(manifest, paths, printer.id, device.id, id, 0,
                                    cfg.capture.n_reps);
    if (!rep) {
      std::cerr << "train: no usable enrollment capture for template " << id << "\n";
      continue;
    }
    const auto file = paths.capture_png(printer.id, device.id, false, id, 0, *rep);
    if (!std::filesystem::exists(file))
      throw PipelineError("missing capture " + file.string() + "; run 'cdplab simulate' first");
    try {
      auto reg = register_capture(load_png16(file), templates[id], radius,
                                  cfg.align.peak_floor);
      pairs.push_back({templates[id].to_image(), std::move(reg.aligned)});
    } catch (const RegistrationFailed& e) {
      std::cerr << "train: registration failed for template " << id << ": " << e.what()
                << "\n";
    }
  }
  if (pairs.empty())
    throw PipelineError("no usable training pairs for " + printer_id + "/" + device_id);

  auto train_cfg = cfg.train_config();
  train_cfg.seed = chain_seed(cfg.seed, "train", printer.id + "/" + device.id);

  const auto ckpt_dir = paths.checkpoints_dir() / printer.id / device.id;
  auto result = px::train(pairs, train_cfg, ckpt_dir, printer.id, device.id);
  px::write_loss_history_csv(ckpt_dir / "loss_history.csv", result.history);

  char name[64];
  std::snprintf(name, sizeof(name), "checkpoint_epoch_%04d.ckpt", train_cfg.epochs);
  const auto final_ckpt = ckpt_dir / name;

  write_run_record(paths, "train",
                   {{"dataset", dataset_dir.string()}, {"printer", printer_id},
                    {"device", device_id}, {"epochs", train_cfg.epochs},
                    {"n_pairs", pairs.size()}},
                   seconds_since(t0),
                   {{"checkpoint", final_ckpt.string()},
                    {"final_loss_l1", result.history.back().loss_l1},
                    {"final_loss_g", result.history.back().loss_g},
                    {"final_loss_d", result.history.back().loss_d}},
                   opt.write_run_record);
  return final_ckpt;
}

void run_synth(const std::filesystem::path& checkpoint,
               const std::filesystem::path& dataset_dir, const PipelineOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  DatasetPaths paths{dataset_dir};
  const auto cfg = load_dataset_config(paths, opt);
  const auto manifest = load_manifest_or_fail(paths);
  const auto templates = load_all_templates(paths, manifest);

  if (!std::filesystem::exists(checkpoint))
    throw PipelineError("missing checkpoint " + checkpoint.string() +
                        "; run 'cdplab train' first");
  const auto ckpt = px::load_checkpoint(checkpoint);
  if (ckpt.printer_id.empty() || ckpt.device_id.empty())
    throw PipelineError("checkpoint carries no provenance: " + checkpoint.string());
  cfg.printer(ckpt.printer_id);  // must exist in this dataset
  cfg.device(ckpt.device_id);
  if (ckpt.generator.cfg.image_size != cfg.dataset.template_size)
    throw PipelineError("checkpoint image size does not match the dataset");

  parallel_for(manifest.test_ids.size(), opt.threads, [&](std::size_t k) {
    const int id = manifest.test_ids[k];
    PhysicalImage img;
    img.pixels = px::generator_forward(ckpt.generator, templates[id].to_image());
    img.role = ImageRole::synthetic_xhat;
    img.template_id = id;
    img.printer_id = ckpt.printer_id;
    img.device_id = ckpt.device_id;
    persist_image(img, paths.synthetic_png(ckpt.printer_id, ckpt.device_id, id));
  });

  write_run_record(paths, "synth",
                   {{"dataset", dataset_dir.string()}, {"checkpoint", checkpoint.string()},
                    {"printer", ckpt.printer_id}, {"device", ckpt.device_id}},
                   seconds_since(t0), {{"synthesized", manifest.test_ids.size()}},
                   opt.write_run_record);
}

namespace {

struct ProbeJob {
  const PrinterProfile* printer;
  const DeviceProfile* device;
  bool fake;
  int template_id, instance, rep;
};

}  // namespace

std::filesystem::path run_score(const std::filesystem::path& dataset_dir,
                                const PipelineOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  DatasetPaths paths{dataset_dir};
  const auto cfg = load_dataset_config(paths, opt);
  const auto manifest = load_manifest_or_fail(paths);
  const auto templates = load_all_templates(paths, manifest);
  const QcIndex qc(manifest);
  const SsimParams ssim_params = cfg.score.ssim_params();

  const auto printers = select_profiles(cfg.printers, opt.printer_filter, "printer");
  const auto devices = select_profiles(cfg.devices, opt.device_filter, "device");

  const bool want_t = std::count(cfg.score.references.begin(), cfg.score.references.end(),
                                 Reference::t) > 0;
  const bool want_xe = std::count(cfg.score.references.begin(), cfg.score.references.end(),
                                  Reference::xe) > 0;
  const bool want_xhat = std::count(cfg.score.references.begin(),
                                    cfg.score.references.end(), Reference::xhat) > 0;

  std::vector<ScoreRecord> records;
  std::vector<RegisterFailure> failures;
  std::vector<std::string> failure_paths;

  for (const auto* printer : printers) {
    for (const auto* device : devices) {
      const int radius = device->shift_jitter_max + cfg.align.radius_margin;

      // Prerequisites for this cell.
      if (!std::filesystem::exists(paths.capture_png(printer->id, device->id, false, 0, 0, 0)))
        throw PipelineError("no original captures for " + printer->id + "/" + device->id +
                            "; run 'cdplab simulate' first");
      if (!std::filesystem::exists(paths.capture_png(printer->id, device->id, true, 0, 0, 0)))
        throw PipelineError("no fake captures for " + printer->id + "/" + device->id +
                            "; run 'cdplab attack' first");

      // Synthetic references exist for the held-out split once synth has run
      // for this cell; absent files simply produce no xhat records.
      std::unordered_map<int, Image> xhat_refs;
      if (want_xhat) {
        for (int id : manifest.test_ids) {
          const auto file = paths.synthetic_png(printer->id, device->id, id);
          if (std::filesystem::exists(file)) xhat_refs.emplace(id, load_png16(file));
        }
      }

      // Designated enrollment captures, registered once per instance.
      struct Enrollment {
        int rep = -1;
        std::optional<RegisterResult> reg;
      };
      std::vector<Enrollment> enrollments;
      if (want_xe) {
        enrollments.resize(static_cast<std::size_t>(manifest.n_templates) *
                           cfg.capture.n_instances);
        parallel_for(enrollments.size(), opt.threads, [&](std::size_t k) {
          const int id = static_cast<int>(k) / cfg.capture.n_instances;
          const int inst = static_cast<int>(k) % cfg.capture.n_instances;
          const auto rep = enrollment_rep(manifest, paths, printer->id, device->id, id,
                                          inst, cfg.capture.n_reps);
          if (!rep) return;
          enrollments[k].rep = *rep;
          try {
            enrollments[k].reg = register_capture(
                load_png16(paths.capture_png(printer->id, device->id, false, id, inst, *rep)),
                templates[id], radius, cfg.align.peak_floor);
          } catch (const RegistrationFailed&) {
            enrollments[k].reg.reset();
          }
        });
      }
      auto enrollment_of = [&](int id, int inst) -> const Enrollment* {
        if (enrollments.empty()) return nullptr;
        return &enrollments[static_cast<std::size_t>(id) * cfg.capture.n_instances + inst];
      };

      // Probe set: every kept capture except the enrollment captures.
      std::vector<ProbeJob> jobs;
      for (int fake = 0; fake <= 1; ++fake) {
        for (int id = 0; id < manifest.n_templates; ++id) {
          for (int inst = 0; inst < cfg.capture.n_instances; ++inst) {
            const auto enr = enrollment_rep(manifest, paths, printer->id, device->id, id,
                                            inst, cfg.capture.n_reps);
            for (int rep = 0; rep < cfg.capture.n_reps; ++rep) {
              const auto rel = paths.rel(
                  paths.capture_png(printer->id, device->id, fake, id, inst, rep));
              if (!qc.is_kept(rel)) continue;
              if (!fake && enr && *enr == rep) continue;  // enrolled, not probed
              jobs.push_back({printer, device, fake == 1, id, inst, rep});
            }
          }
        }
      }

      std::vector<std::vector<ScoreRecord>> slots(jobs.size());
      std::vector<std::optional<RegisterFailure>> fail_slots(jobs.size());
      parallel_for(jobs.size(), opt.threads, [&](std::size_t k) {
        const ProbeJob& job = jobs[k];
        const auto file = paths.capture_png(job.printer->id, job.device->id, job.fake,
                                            job.template_id, job.instance, job.rep);
        RegisterResult reg;
        try {
          reg = register_capture(load_png16(file), templates[job.template_id], radius,
                                 cfg.align.peak_floor);
        } catch (const RegistrationFailed& e) {
          fail_slots[k] = RegisterFailure{k, job.template_id, e.peak(), "low_peak"};
          return;
        }
        const Image probe = crop_margin(reg.aligned, reg.margin);

        auto emit = [&](Reference ref, const Image& reference_full) {
          const Image ref_cropped = crop_margin(reference_full, reg.margin);
          for (Metric metric : cfg.score.metrics) {
            ScoreRecord r;
            r.printer_id = job.printer->id;
            r.device_id = job.device->id;
            r.reference = ref;
            r.metric = metric;
            r.origin = job.fake ? Origin::fake : Origin::original;
            r.template_id = job.template_id;
            r.instance = job.instance;
            r.repetition = job.rep;
            r.score = metric == Metric::pcorr ? pcorr(probe, ref_cropped)
                                              : ssim(probe, ref_cropped, ssim_params);
            slots[k].push_back(std::move(r));
          }
        };

        if (want_t) emit(Reference::t, templates[job.template_id].to_image());
        if (want_xhat) {
          auto it = xhat_refs.find(job.template_id);
          if (it != xhat_refs.end()) emit(Reference::xhat, it->second);
        }
        if (want_xe) {
          // Originals authenticate against their own item's enrollment; a
          // counterfeit is judged against the genuine enrolled item.
          const int ref_inst = job.fake ? 0 : job.instance;
          const auto* enr = enrollment_of(job.template_id, ref_inst);
          if (enr && enr->reg) emit(Reference::xe, enr->reg->aligned);
        }
      });

      for (std::size_t k = 0; k < jobs.size(); ++k) {
        for (auto& r : slots[k]) records.push_back(std::move(r));
        if (fail_slots[k]) {
          failures.push_back(*fail_slots[k]);
          failure_paths.push_back(paths.rel(
              paths.capture_png(jobs[k].printer->id, jobs[k].device->id, jobs[k].fake,
                                jobs[k].template_id, jobs[k].instance, jobs[k].rep)));
        }
      }
    }
  }

  write_scores_csv(paths.scores_csv(), records);
  {
    std::ofstream out(paths.align_failures_csv(), std::ios::binary);
    if (!out) throw IoError("cannot write " + paths.align_failures_csv().string());
    out << "capture_path,template_id,peak_pcorr,reason\n";
    char buf[64];
    for (std::size_t i = 0; i < failures.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.6f", failures[i].peak);
      out << failure_paths[i] << ',' << failures[i].template_id << ',' << buf << ','
          << failures[i].reason << '\n';
    }
  }

  write_run_record(paths, "score",
                   {{"dataset", dataset_dir.string()}, {"threads", opt.threads}},
                   seconds_since(t0),
                   {{"records", records.size()}, {"registration_failures", failures.size()}},
                   opt.write_run_record);
  return paths.scores_csv();
}

namespace {

std::string cell_stem(const CellKey& key) {
  return key.printer_id + "_" + key.device_id + "_" + to_string(key.metric) + "_" +
         to_string(key.reference);
}

double auc_or_nan(const AucTable& table, const CellKey& key) {
  auto it = table.cells.find(key);
  return it == table.cells.end() ? std::nan("") : it->second;
}

}  // namespace

EvaluateOutcome run_evaluate(const std::filesystem::path& dataset_dir, bool check_mode,
                             const PipelineOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  DatasetPaths paths{dataset_dir};
  const auto cfg = load_dataset_config(paths, opt);
  const auto manifest = load_manifest_or_fail(paths);
  if (!std::filesystem::exists(paths.scores_csv()))
    throw PipelineError("no scores at " + paths.scores_csv().string() +
                        "; run 'cdplab score' first");
  const auto records = read_scores_csv(paths.scores_csv());
  if (records.empty()) throw PipelineError("scores.csv has no records");

  const auto printers = select_profiles(cfg.printers, opt.printer_filter, "printer");
  const auto devices = select_profiles(cfg.devices, opt.device_filter, "device");

  ExperimentGrid grid;
  for (const auto* p : printers) grid.printer_ids.push_back(p->id);
  for (const auto* d : devices) grid.device_ids.push_back(d->id);
  grid.metrics = cfg.score.metrics;
  // Expect the references that actually occur; a reference that was scored
  // for some cells but not others is reported as missing there.
  std::unordered_set<int> seen_refs;
  for (const auto& r : records) seen_refs.insert(static_cast<int>(r.reference));
  for (Reference ref : {Reference::t, Reference::xhat, Reference::xe})
    if (seen_refs.count(static_cast<int>(ref))) grid.references.push_back(ref);

  EvaluateOutcome outcome;
  outcome.table = auc_table(records, grid);
  write_auc_table_json(paths.eval_dir() / "auc_table.json", outcome.table);

  const auto grouped = group_scores(records);
  for (const auto& [key, set] : grouped) {
    write_histogram_json(paths.eval_dir() / ("hist_" + cell_stem(key) + ".json"),
                         histogram_export(set, cfg.evaluate.histogram_bins));
    const auto curve = roc_curve(set);
    write_roc_svg(paths.eval_dir() / ("roc_" + cell_stem(key) + ".svg"), curve, auc(set),
                  key.printer_id + " / " + key.device_id + " / " + to_string(key.metric) +
                      " / reference " + to_string(key.reference));
  }
  for (const auto& key : outcome.table.missing)
    std::cerr << "evaluate: no scores for cell " << cell_stem(key) << "\n";

  if (check_mode) {
    auto line = [&outcome](bool ok, const std::string& text) {
      outcome.check_lines.push_back(std::string(ok ? "[PASS] " : "[FAIL] ") + text);
      outcome.checks_passed = outcome.checks_passed && ok;
    };
    char buf[160];

    // Enrollment reference separates perfectly in every cell.
    if (std::count(grid.references.begin(), grid.references.end(), Reference::xe)) {
      for (const auto& pid : grid.printer_ids)
        for (const auto& did : grid.device_ids) {
          const double v = auc_or_nan(outcome.table, {pid, did, Metric::pcorr, Reference::xe});
          std::snprintf(buf, sizeof(buf), "xe reference: AUC(pcorr) = %.6f for %s/%s",
                        v, pid.c_str(), did.c_str());
          line(v == 1.0, buf);
        }
    }

    // Template-reference AUC is monotone along the resolution ladder,
    // tolerating one adjacent inversion of at most 0.01.
    if (std::count(grid.references.begin(), grid.references.end(), Reference::t) &&
        grid.device_ids.size() >= 2) {
      for (const auto& pid : grid.printer_ids) {
        std::vector<double> ladder;
        std::string order;
        for (const auto* dev : cfg.resolution_ladder()) {
          if (std::count(grid.device_ids.begin(), grid.device_ids.end(), dev->id) == 0)
            continue;
          ladder.push_back(auc_or_nan(outcome.table, {pid, dev->id, Metric::pcorr,
                                                      Reference::t}));
          order += (order.empty() ? "" : " <= ") + dev->id;
        }
        int inversions = 0;
        double worst = 0.0;
        bool finite = true;
        for (std::size_t i = 1; i < ladder.size(); ++i) {
          finite = finite && std::isfinite(ladder[i - 1]) && std::isfinite(ladder[i]);
          if (ladder[i] < ladder[i - 1]) {
            ++inversions;
            worst = std::max(worst, ladder[i - 1] - ladder[i]);
          }
        }
        const bool ok = finite && (inversions == 0 || (inversions == 1 && worst <= 0.01));
        std::snprintf(buf, sizeof(buf),
                      "t reference: AUC(pcorr) non-decreasing over [%s] for %s "
                      "(%d inversion(s), worst %.4f)",
                      order.c_str(), pid.c_str(), inversions, worst);
        line(ok, buf);
      }
    }

    // Synthetic reference beats the template reference on held-out
    // templates wherever it was trained.
    if (std::count(grid.references.begin(), grid.references.end(), Reference::xhat)) {
      std::unordered_set<int> test_ids(manifest.test_ids.begin(), manifest.test_ids.end());
      std::vector<ScoreRecord> held_out;
      for (const auto& r : records)
        if (test_ids.count(r.template_id) && r.metric == Metric::pcorr)
          held_out.push_back(r);
      const auto held_grouped = group_scores(held_out);
      for (const auto& pid : grid.printer_ids) {
        for (const auto& did : grid.device_ids) {
          auto it_x = held_grouped.find({pid, did, Metric::pcorr, Reference::xhat});
          if (it_x == held_grouped.end() || it_x->second.positives.empty() ||
              it_x->second.negatives.empty())
            continue;  // cell was not synthesized
          auto it_t = held_grouped.find({pid, did, Metric::pcorr, Reference::t});
          if (it_t == held_grouped.end()) {
            line(false, "xhat present but no t scores on the held-out split for " + pid +
                            "/" + did);
            continue;
          }
          const double auc_x = auc(it_x->second);
          const double auc_t = auc(it_t->second);
          const bool needs_gain = auc_t < 0.95;
          const bool ok = needs_gain ? auc_x >= auc_t + 0.05 : auc_x >= auc_t;
          std::snprintf(buf, sizeof(buf),
                        "xhat reference: held-out AUC %.6f vs t %.6f for %s/%s%s",
                        auc_x, auc_t, pid.c_str(), did.c_str(),
                        needs_gain ? " (gain of 0.05 required)" : "");
          line(ok, buf);
        }
      }
    }
  }

  write_run_record(paths, "evaluate",
                   {{"dataset", dataset_dir.string()}, {"check", check_mode}},
                   seconds_since(t0),
                   {{"cells", outcome.table.cells.size()},
                    {"missing_cells", outcome.table.missing.size()},
                    {"checks_passed", outcome.checks_passed}},
                   opt.write_run_record);
  return outcome;
}

double quick_auc_t(const ExperimentConfig& cfg, const PrinterProfile& printer,
                   const DeviceProfile& device, int n_templates, std::uint64_t seed,
                   int threads) {
  const DeviceProfile& attack_device = cfg.device(cfg.attack.capture_device);
  const int attack_radius = attack_device.shift_jitter_max + cfg.align.radius_margin;
  const int radius = device.shift_jitter_max + cfg.align.radius_margin;
  EstimatorSpec otsu;

  ScoreSet set;
  set.positives.resize(n_templates);
  set.negatives.resize(n_templates);
  parallel_for(static_cast<std::size_t>(n_templates), threads, [&](std::size_t k) {
    const auto base = derive_seed(seed, "quick-auc", {static_cast<std::uint64_t>(k)});
    Template t = generate_template(derive_seed(base, "template"), cfg.dataset.template_size,
                                   cfg.dataset.template_size, cfg.dataset.black_fraction);
    t.id = static_cast<int>(k);
    const Image t_img = t.to_image();

    auto original = print_template(t, printer, derive_seed(base, "print"));
    auto outcome = attack_template(t, original, attack_device, printer, otsu,
                                   derive_seed(base, "attack"), attack_radius);

    auto score_one = [&](const PhysicalInstance& inst, std::uint64_t rep_seed) {
      auto cap = acquire(inst, device, rep_seed);
      auto reg = register_capture(cap.image.pixels, t, radius, cfg.align.peak_floor);
      return pcorr(crop_margin(reg.aligned, reg.margin), crop_margin(t_img, reg.margin));
    };
    set.positives[k] = score_one(original, derive_seed(base, "cap-orig"));
    set.negatives[k] = score_one(outcome.fake, derive_seed(base, "cap-fake"));
  });
  return auc(set);
}

ExperimentConfig run_calibrate(const ExperimentConfig& base, double target_lo,
                               double target_hi,
                               const std::optional<std::filesystem::path>& out_config,
                               const PipelineOptions& opt) {
  if (!(target_lo > 0.5 && target_lo < target_hi && target_hi <= 1.0))
    throw InvalidArgument("calibrate: need 0.5 < target_lo < target_hi <= 1.0");

  ExperimentConfig tuned = base;
  const auto ladder = tuned.resolution_ladder();  // worst resolution first
  const int n_cal = std::min(48, base.dataset.n_templates);
  const auto& printer = tuned.printers.front();

  for (std::size_t i = 0; i < ladder.size(); ++i) {
    const double target =
        ladder.size() == 1
            ? target_lo
            : target_lo + (target_hi - target_lo) * static_cast<double>(i) /
                              static_cast<double>(ladder.size() - 1);
    // AUC falls as psf_sigma grows; bisect on the blur.
    DeviceProfile* dev = nullptr;
    for (auto& d : tuned.devices)
      if (d.id == ladder[i]->id) dev = &d;
    double lo = 0.05, hi = 3.5;
    for (int iter = 0; iter < 8; ++iter) {
      dev->psf_sigma = 0.5 * (lo + hi);
      const double auc_here = quick_auc_t(base, printer, *dev, n_cal,
                                          derive_seed(base.seed, "calibrate"), opt.threads);
      if (auc_here > target)
        lo = dev->psf_sigma;  // too sharp, blur more
      else
        hi = dev->psf_sigma;
    }
    dev->psf_sigma = std::round(0.5 * (lo + hi) * 100.0) / 100.0;
    std::cerr << "calibrate: " << dev->id << " psf_sigma -> " << dev->psf_sigma
              << " (target AUC " << target << ")\n";
  }

  // QC floors: half the 1st percentile of sharpness/contrast on clean
  // captures, per device.
  for (auto& dev : tuned.devices) {
    std::vector<double> sharpness(static_cast<std::size_t>(n_cal));
    std::vector<double> contrast(static_cast<std::size_t>(n_cal));
    parallel_for(sharpness.size(), opt.threads, [&](std::size_t k) {
      const auto base_seed =
          derive_seed(tuned.seed, "calibrate-qc", {static_cast<std::uint64_t>(k)});
      Template t = generate_template(derive_seed(base_seed, "template"),
                                     tuned.dataset.template_size,
                                     tuned.dataset.template_size,
                                     tuned.dataset.black_fraction);
      auto inst = print_template(t, printer, derive_seed(base_seed, "print"));
      auto cap = acquire(inst, dev, derive_seed(base_seed, "cap"));
      sharpness[k] = laplacian_variance(cap.image.pixels);
      contrast[k] = contrast_range(cap.image.pixels);
    });
    dev.qc_blur_threshold = 0.5 * percentile(sharpness, 1.0);
    dev.qc_contrast_threshold = 0.5 * percentile(contrast, 1.0);
  }

  if (out_config) tuned.save(*out_config);
  return tuned;
}

}  // namespace cdp
