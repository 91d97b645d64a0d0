#include "cdplab/attack.hpp"

#include <array>
#include <cmath>

#include "cdplab/align.hpp"

namespace cdp {

void EstimatorSpec::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw InvalidArgument("EstimatorSpec: threshold must be in (0, 1)");
  if (kind == Kind::learned_unet && !network)
    throw InvalidArgument("EstimatorSpec: learned_unet requires a trained network");
}

double otsu_threshold(const Image& img) {
  std::array<long, 256> hist{};
  const double* p = img.data();
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    double v = p[i];
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    int bin = static_cast<int>(v * 255.0 + 0.5);
    ++hist[bin];
  }

  const double total = static_cast<double>(img.size());
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += i * static_cast<double>(hist[i]);

  double best_between = -1.0;
  int best_bin = -1;
  double w0 = 0.0, sum0 = 0.0;
  for (int t = 0; t < 255; ++t) {
    w0 += static_cast<double>(hist[t]);
    if (w0 == 0.0) continue;
    const double w1 = total - w0;
    if (w1 == 0.0) break;
    sum0 += t * static_cast<double>(hist[t]);
    const double mu0 = sum0 / w0;
    const double mu1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (between > best_between) {
      best_between = between;
      best_bin = t;
    }
  }
  if (best_bin < 0 || best_between <= 0.0)
    throw NumericError("otsu_threshold: degenerate histogram, no separable classes");
  // Threshold between the selected bin and the next.
  return (best_bin + 0.5) / 255.0;
}

Template estimate_template(const Image& probe, const EstimatorSpec& est, int template_id) {
  est.validate();
  if (probe.rows() < 4 || probe.cols() < 4)
    throw InvalidArgument("estimate_template: probe too small");

  if (est.kind == EstimatorSpec::Kind::threshold_otsu) {
    const double thr = otsu_threshold(probe);
    return Template::from_image(probe, template_id, TemplateKind::estimated, thr);
  }

  const auto& net = *est.network;
  if (probe.rows() != net.cfg.image_size || probe.cols() != net.cfg.image_size)
    throw InvalidArgument("estimate_template: probe size " + std::to_string(probe.rows()) +
                          " does not match the estimator input size " +
                          std::to_string(net.cfg.image_size));
  Image predicted = px::generator_forward(net, probe);
  return Template::from_image(predicted, template_id, TemplateKind::estimated,
                              est.threshold);
}

PhysicalInstance make_fake(const Template& t_hat, const PrinterProfile& attacker_printer,
                           std::uint64_t instance_seed) {
  if (t_hat.kind != TemplateKind::estimated)
    throw InvalidArgument("make_fake: expected an estimated template");
  return print_template(t_hat, attacker_printer,
                        derive_seed(instance_seed, "fake-microstructure"),
                        ImageRole::fake_f);
}

px::UNet train_estimator(const std::vector<px::TrainPair>& capture_template_pairs,
                         const px::GeneratorConfig& cfg, int epochs, double learning_rate,
                         std::uint64_t seed) {
  if (capture_template_pairs.empty())
    throw InvalidArgument("train_estimator: no training pairs");
  if (epochs < 1) throw InvalidArgument("train_estimator: epochs must be >= 1");

  Rng init(derive_seed(seed, "estimator-init"));
  px::UNet net = px::UNet::init(cfg, init);
  ad::AdamConfig adam_cfg;
  adam_cfg.learning_rate = learning_rate;
  ad::Adam opt(net.parameters(), adam_cfg);

  std::vector<int> order(capture_template_pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(seed, "estimator-order", {static_cast<std::uint64_t>(epoch)}));
    shuffle_rng.shuffle(order);
    for (int idx : order) {
      // Input is the capture, target is the template rendering.
      ad::Tensor y = px::image_to_tensor(capture_template_pairs[idx].target);
      ad::Tensor t = px::image_to_tensor(capture_template_pairs[idx].template_img);
      ad::Tensor out = net.forward(y);
      ad::zero_grad(opt.params());
      ad::Tensor loss = ad::l1_loss(t, out);
      ad::backward(loss);
      opt.step();
    }
  }
  return net;
}

AttackOutcome attack_template(const Template& true_template,
                              const PhysicalInstance& original,
                              const DeviceProfile& capture_device,
                              const PrinterProfile& attacker_printer,
                              const EstimatorSpec& est, std::uint64_t seed,
                              int align_radius) {
  if (original.template_id != true_template.id)
    throw InvalidArgument("attack_template: instance does not belong to the template");

  const auto capture =
      acquire(original, capture_device, derive_seed(seed, "attack-capture"));
  const auto reg = register_capture(capture.image.pixels, true_template, align_radius);

  AttackOutcome outcome;
  outcome.estimated = estimate_template(reg.aligned, est, true_template.id);
  outcome.bit_error_rate =
      (outcome.estimated.bits != true_template.bits).cast<double>().mean();
  outcome.fake = make_fake(outcome.estimated, attacker_printer,
                           derive_seed(seed, "fake-instance"));
  return outcome;
}

}  // namespace cdp
