#include <doctest.h>

#include "cdplab/align.hpp"
#include "cdplab/attack.hpp"
#include "cdplab/dataset.hpp"
#include "cdplab/metrics.hpp"

using namespace cdp;

namespace {

PrinterProfile identity_printer() {
  PrinterProfile p;
  p.id = "identity";
  p.dot_gain = 0.0;
  p.print_blur_sigma = 0.0;
  p.instance_noise_sigma = 0.0;
  return p;
}

PrinterProfile enrollment_printer() {
  PrinterProfile p;
  p.id = "HPI55_like";
  p.dot_gain = 0.15;
  p.print_blur_sigma = 0.5;
  p.instance_noise_sigma = 0.15;
  return p;
}

DeviceProfile scanner_device() {
  DeviceProfile d;
  d.id = "epson_like";
  d.psf_sigma = 1.05;
  d.acq_noise_sigma = 0.03;
  d.gamma = 1.0;
  d.scale_factor = 2.0;
  d.shift_jitter_max = 2;
  return d;
}

}  // namespace

TEST_SUITE_BEGIN("attack");

TEST_CASE("otsu recovers the template exactly through the identity channel") {
  auto t = generate_template(1, 32, 32, 0.5);
  auto inst = print_template(t, identity_printer(), 0);
  EstimatorSpec otsu;
  auto est = estimate_template(inst.latent.pixels, otsu, t.id);
  CHECK(est.kind == TemplateKind::estimated);
  CHECK(est.id == t.id);
  CHECK((est.bits == t.bits).all());
}

TEST_CASE("otsu rejects a constant probe") {
  Image constant = Image::Constant(16, 16, 0.4);
  EstimatorSpec otsu;
  CHECK_THROWS_AS(estimate_template(constant, otsu), NumericError);
}

TEST_CASE("estimate_template validates inputs") {
  EstimatorSpec otsu;
  Image tiny(2, 2);
  tiny.setConstant(0.5);
  CHECK_THROWS_AS(estimate_template(tiny, otsu), InvalidArgument);

  EstimatorSpec bad;
  bad.threshold = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);

  EstimatorSpec unet;
  unet.kind = EstimatorSpec::Kind::learned_unet;
  CHECK_THROWS_AS(unet.validate(), InvalidArgument);  // no network attached
}

// Regression bound measured over 20 templates at the scanner profile: the
// estimate is imperfect but far better than chance.
TEST_CASE("otsu bit error rate through the scanner channel stays in (0, 0.3)") {
  const auto printer = enrollment_printer();
  const auto device = scanner_device();
  EstimatorSpec otsu;
  double total_ber = 0.0;
  for (int i = 0; i < 20; ++i) {
    auto t = generate_template(derive_seed(40, "t", {static_cast<std::uint64_t>(i)}),
                               32, 32, 0.5);
    t.id = i;
    auto inst = print_template(t, printer, derive_seed(40, "p", {static_cast<std::uint64_t>(i)}));
    auto outcome = attack_template(t, inst, device, printer, otsu,
                                   derive_seed(40, "a", {static_cast<std::uint64_t>(i)}),
                                   device.shift_jitter_max + 1);
    CHECK(outcome.bit_error_rate > 0.0);
    CHECK(outcome.bit_error_rate < 0.3);
    total_ber += outcome.bit_error_rate;
  }
  CHECK(total_ber / 20 < 0.2);
}

TEST_CASE("make_fake requires an estimated template and fresh microstructure") {
  auto t = generate_template(2, 16, 16, 0.5);
  CHECK_THROWS_AS(make_fake(t, enrollment_printer(), 1), InvalidArgument);

  Template t_hat = t;
  t_hat.kind = TemplateKind::estimated;
  auto fake_a = make_fake(t_hat, enrollment_printer(), 1);
  auto fake_b = make_fake(t_hat, enrollment_printer(), 2);
  CHECK(fake_a.latent.role == ImageRole::fake_f);
  CHECK_FALSE((fake_a.latent.pixels == fake_b.latent.pixels).all());

  // Even with the same numeric seed value the fake draws from a different
  // stream than an original print.
  auto original = print_template(t, enrollment_printer(), 1);
  CHECK_FALSE((fake_a.latent.pixels == original.latent.pixels).all());
}

// A perfectly estimated fake matches the template statistics of an original
// but cannot reproduce the enrolled item's microstructure.
TEST_CASE("perfect estimate: template similarity yes, instance similarity no") {
  const auto printer = enrollment_printer();
  DeviceProfile device = scanner_device();

  double orig_vs_enroll = 0.0, fake_vs_enroll = 0.0;
  double orig_vs_t = 0.0, fake_vs_t = 0.0;
  const int n = 30;
  for (int i = 0; i < n; ++i) {
    auto t = generate_template(derive_seed(60, "t", {static_cast<std::uint64_t>(i)}),
                               32, 32, 0.5);
    t.id = i;
    Template t_hat = t;  // perfect estimate
    t_hat.kind = TemplateKind::estimated;

    auto original = print_template(t, printer, derive_seed(60, "o", {static_cast<std::uint64_t>(i)}));
    auto fake = make_fake(t_hat, printer, derive_seed(60, "f", {static_cast<std::uint64_t>(i)}));

    const int radius = device.shift_jitter_max + 1;
    auto enroll = register_capture(
        acquire(original, device, derive_seed(60, "e", {static_cast<std::uint64_t>(i)})).image.pixels,
        t, radius);
    auto probe_o = register_capture(
        acquire(original, device, derive_seed(60, "po", {static_cast<std::uint64_t>(i)})).image.pixels,
        t, radius);
    auto probe_f = register_capture(
        acquire(fake, device, derive_seed(60, "pf", {static_cast<std::uint64_t>(i)})).image.pixels,
        t, radius);

    const int m = enroll.margin;
    const Image t_img = t.to_image();
    orig_vs_enroll += pcorr(crop_margin(probe_o.aligned, m), crop_margin(enroll.aligned, m));
    fake_vs_enroll += pcorr(crop_margin(probe_f.aligned, m), crop_margin(enroll.aligned, m));
    orig_vs_t += pcorr(crop_margin(probe_o.aligned, m), crop_margin(t_img, m));
    fake_vs_t += pcorr(crop_margin(probe_f.aligned, m), crop_margin(t_img, m));
  }
  // Template-reference scores are statistically equal for a perfect
  // estimate; enrollment-reference scores are not.
  CHECK(std::abs(orig_vs_t - fake_vs_t) / n < 0.05);
  CHECK(orig_vs_enroll / n > fake_vs_enroll / n + 0.1);
}

TEST_CASE("an estimate with half the bits flipped decorrelates the fake") {
  const auto printer = enrollment_printer();
  const auto device = scanner_device();
  double fake_vs_t = 0.0;
  const int n = 10;
  for (int i = 0; i < n; ++i) {
    auto t = generate_template(derive_seed(70, "t", {static_cast<std::uint64_t>(i)}),
                               32, 32, 0.5);
    t.id = i;
    // flip a seeded random half of the bits
    Template garbled = t;
    garbled.kind = TemplateKind::estimated;
    Rng rng(derive_seed(70, "flip", {static_cast<std::uint64_t>(i)}));
    std::vector<int> order(32 * 32);
    for (int k = 0; k < 32 * 32; ++k) order[k] = k;
    rng.shuffle(order);
    for (int k = 0; k < 32 * 32 / 2; ++k)
      garbled.bits.data()[order[k]] ^= 1;

    auto fake = make_fake(garbled, printer, derive_seed(70, "f", {static_cast<std::uint64_t>(i)}));
    // Registration against t would rightly fail; align on the garbled
    // pattern the fake was printed from, then score against t.
    DeviceProfile no_jitter = device;
    no_jitter.shift_jitter_max = 0;
    auto cap = acquire(fake, no_jitter, derive_seed(70, "c", {static_cast<std::uint64_t>(i)}));
    auto aligned = register_capture(cap.image.pixels, garbled, 1).aligned;
    fake_vs_t += pcorr(aligned, t.to_image());
  }
  CHECK(std::abs(fake_vs_t / n) < 0.1);
}

TEST_CASE("learned estimator trains and beats chance") {
  const auto printer = enrollment_printer();
  const auto device = scanner_device();
  const int radius = device.shift_jitter_max + 1;

  std::vector<px::TrainPair> pairs;
  for (int i = 0; i < 6; ++i) {
    auto t = generate_template(derive_seed(80, "t", {static_cast<std::uint64_t>(i)}),
                               16, 16, 0.5);
    t.id = i;
    auto inst = print_template(t, printer, derive_seed(80, "p", {static_cast<std::uint64_t>(i)}));
    auto cap = acquire(inst, device, derive_seed(80, "c", {static_cast<std::uint64_t>(i)}));
    auto reg = register_capture(cap.image.pixels, t, radius);
    pairs.push_back({t.to_image(), reg.aligned});
  }

  px::GeneratorConfig cfg;
  cfg.depth = 3;
  cfg.base_channels = 8;
  cfg.image_size = 16;
  auto net = train_estimator(pairs, cfg, 60, 2e-3, 7);

  EstimatorSpec spec;
  spec.kind = EstimatorSpec::Kind::learned_unet;
  spec.network = std::make_shared<px::UNet>(std::move(net));

  // held-out template
  auto t = generate_template(derive_seed(80, "t", {99}), 16, 16, 0.5);
  t.id = 99;
  auto inst = print_template(t, printer, derive_seed(80, "p", {99}));
  auto cap = acquire(inst, device, derive_seed(80, "c", {99}));
  auto reg = register_capture(cap.image.pixels, t, radius);
  auto est = estimate_template(reg.aligned, spec, t.id);
  const double ber = (est.bits != t.bits).cast<double>().mean();
  CHECK(ber < 0.35);
}

TEST_SUITE_END();
