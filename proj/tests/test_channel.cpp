#include <doctest.h>

#include <vector>

#include "cdplab/channel.hpp"
#include "cdplab/dataset.hpp"
#include "cdplab/imageops.hpp"
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

DeviceProfile identity_device() {
  DeviceProfile d;
  d.id = "identity";
  d.psf_sigma = 0.0;
  d.acq_noise_sigma = 0.0;
  d.gamma = 1.0;
  d.scale_factor = 1.0;
  d.shift_jitter_max = 0;
  return d;
}

PrinterProfile default_printer() {
  PrinterProfile p;
  p.id = "test_printer";
  p.dot_gain = 0.15;
  p.print_blur_sigma = 0.5;
  p.instance_noise_sigma = 0.12;
  return p;
}

DeviceProfile default_device() {
  DeviceProfile d;
  d.id = "test_device";
  d.psf_sigma = 0.8;
  d.acq_noise_sigma = 0.04;
  d.gamma = 1.05;
  d.scale_factor = 1.0;
  d.shift_jitter_max = 2;
  return d;
}

}  // namespace

TEST_SUITE_BEGIN("channel");

TEST_CASE("degenerate printer is the identity print") {
  auto t = generate_template(1, 16, 16, 0.5);
  auto inst = print_template(t, identity_printer(), 42);
  const Image expected = t.to_image();
  CHECK((inst.latent.pixels == expected).all());
  CHECK(inst.latent.role == ImageRole::original_x);
  CHECK(inst.template_id == t.id);
}

TEST_CASE("print is deterministic in the seed") {
  auto t = generate_template(2, 16, 16, 0.5);
  auto a = print_template(t, default_printer(), 7);
  auto b = print_template(t, default_printer(), 7);
  CHECK((a.latent.pixels == b.latent.pixels).all());
  auto c = print_template(t, default_printer(), 8);
  CHECK_FALSE((a.latent.pixels == c.latent.pixels).all());
}

TEST_CASE("print output stays in range") {
  auto t = generate_template(3, 16, 16, 0.5);
  PrinterProfile noisy = default_printer();
  noisy.instance_noise_sigma = 0.8;
  auto inst = print_template(t, noisy, 1);
  CHECK((inst.latent.pixels >= 0.0).all());
  CHECK((inst.latent.pixels <= 1.0).all());
}

TEST_CASE("dot gain darkens the print") {
  auto t = generate_template(4, 32, 32, 0.5);
  PrinterProfile plain = identity_printer();
  PrinterProfile gained = identity_printer();
  gained.dot_gain = 0.4;
  const double mean_plain = print_template(t, plain, 0).latent.pixels.mean();
  const double mean_gained = print_template(t, gained, 0).latent.pixels.mean();
  CHECK(mean_gained < mean_plain);
}

// Per-instance microstructure: same template printed twice shares structure
// but not the full signal; an unrelated template shares far less.
TEST_CASE("instance microstructure separates instances") {
  auto t = generate_template(5, 32, 32, 0.5);
  auto other = generate_template(999, 32, 32, 0.5);
  const auto printer = default_printer();

  double corr_same_template = 0.0, corr_other_template = 0.0;
  const int n = 50;
  for (int i = 0; i < n; ++i) {
    auto a = print_template(t, printer, derive_seed(100, "a", {static_cast<std::uint64_t>(i)}));
    auto b = print_template(t, printer, derive_seed(100, "b", {static_cast<std::uint64_t>(i)}));
    auto c = print_template(other, printer, derive_seed(100, "c", {static_cast<std::uint64_t>(i)}));
    const double same = pcorr(a.latent.pixels, b.latent.pixels);
    CHECK(same < 1.0);
    corr_same_template += same;
    corr_other_template += pcorr(a.latent.pixels, c.latent.pixels);
  }
  CHECK(corr_same_template / n > corr_other_template / n);
}

TEST_CASE("degenerate device is the identity acquisition") {
  auto t = generate_template(6, 16, 16, 0.5);
  auto inst = print_template(t, default_printer(), 3);
  auto cap = acquire(inst, identity_device(), 11);
  CHECK((cap.image.pixels == inst.latent.pixels).all());
  CHECK(cap.true_dx == 0);
  CHECK(cap.true_dy == 0);
  CHECK(cap.image.role == ImageRole::capture_y);
  CHECK(cap.image.device_id == std::string("identity"));
}

TEST_CASE("acquire applies the configured scale") {
  auto t = generate_template(7, 16, 16, 0.5);
  auto inst = print_template(t, default_printer(), 3);
  DeviceProfile d = identity_device();
  d.scale_factor = 2.0;
  auto cap = acquire(inst, d, 0);
  CHECK(cap.image.pixels.rows() == 32);
  CHECK(cap.image.pixels.cols() == 32);
}

TEST_CASE("acquire injects a bounded integer shift and reports it") {
  auto t = generate_template(8, 24, 24, 0.5);
  auto inst = print_template(t, default_printer(), 3);
  DeviceProfile d = default_device();
  d.shift_jitter_max = 3;
  bool saw_nonzero = false;
  for (int rep = 0; rep < 20; ++rep) {
    auto cap = acquire(inst, d, derive_seed(50, "rep", {static_cast<std::uint64_t>(rep)}));
    CHECK(std::abs(cap.true_dx) <= 3);
    CHECK(std::abs(cap.true_dy) <= 3);
    saw_nonzero = saw_nonzero || cap.true_dx != 0 || cap.true_dy != 0;
  }
  CHECK(saw_nonzero);
}

// The PUF contract: captures of the same physical instance agree more than
// captures of different instances of the same template.
TEST_CASE("repeat captures separate instances of one template") {
  const auto printer = default_printer();
  const auto device = default_device();
  double same_instance = 0.0, cross_instance = 0.0;
  int count = 0;
  for (int i = 0; i < 30; ++i) {
    auto t = generate_template(derive_seed(200, "tmpl", {static_cast<std::uint64_t>(i)}),
                               32, 32, 0.5);
    auto inst_a = print_template(t, printer, derive_seed(200, "ia", {static_cast<std::uint64_t>(i)}));
    auto inst_b = print_template(t, printer, derive_seed(200, "ib", {static_cast<std::uint64_t>(i)}));
    auto reps = capture_repeats(inst_a, device, 3, derive_seed(200, "caps", {static_cast<std::uint64_t>(i)}));
    auto cap_b = acquire(inst_b, device, derive_seed(200, "capb", {static_cast<std::uint64_t>(i)}));
    for (int r = 0; r < 3; ++r)
      for (int s = r + 1; s < 3; ++s) {
        same_instance += pcorr(reps[r].image.pixels, reps[s].image.pixels);
        ++count;
      }
    cross_instance += pcorr(reps[0].image.pixels, cap_b.image.pixels);
  }
  CHECK(same_instance / count > cross_instance / 30);
}

TEST_CASE("capture correlation with the template decays with blur") {
  const auto printer = default_printer();
  std::vector<double> ladder = {0.5, 1.0, 1.5};
  std::vector<double> mean_corr;
  for (double sigma : ladder) {
    DeviceProfile d = default_device();
    d.psf_sigma = sigma;
    d.shift_jitter_max = 0;
    double sum = 0.0;
    for (int i = 0; i < 20; ++i) {
      auto t = generate_template(derive_seed(300, "tmpl", {static_cast<std::uint64_t>(i)}),
                                 32, 32, 0.5);
      auto inst = print_template(t, printer, derive_seed(300, "inst", {static_cast<std::uint64_t>(i)}));
      auto cap = acquire(inst, d, derive_seed(300, "cap", {static_cast<std::uint64_t>(i)}));
      sum += pcorr(cap.image.pixels, t.to_image());
    }
    mean_corr.push_back(sum / 20);
  }
  CHECK(mean_corr[0] > mean_corr[1]);
  CHECK(mean_corr[1] > mean_corr[2]);
}

TEST_CASE("capture_repeats: count, indices, determinism") {
  auto t = generate_template(9, 16, 16, 0.5);
  auto inst = print_template(t, default_printer(), 5);
  auto reps = capture_repeats(inst, default_device(), 3, 77);
  REQUIRE(reps.size() == 3);
  for (int r = 0; r < 3; ++r) CHECK(reps[r].image.repetition == r);
  CHECK_FALSE((reps[0].image.pixels == reps[1].image.pixels).all());

  auto single = capture_repeats(inst, default_device(), 1, 77);
  CHECK(single.size() == 1);

  auto again = capture_repeats(inst, default_device(), 3, 77);
  for (int r = 0; r < 3; ++r)
    CHECK((reps[r].image.pixels == again[r].image.pixels).all());

  CHECK_THROWS_AS(capture_repeats(inst, default_device(), 0, 77), InvalidArgument);
}

TEST_CASE("quality control flags blur and contrast failures") {
  auto t = generate_template(10, 32, 32, 0.5);
  auto inst = print_template(t, default_printer(), 6);
  auto clean = acquire(inst, default_device(), 1).image.pixels;

  // Thresholds calibrated far below clean statistics.
  const double blur_floor = 0.5 * laplacian_variance(clean) * 1e-2;
  const double contrast_floor = 0.5 * contrast_range(clean) * 1e-1;

  Image blurred = gaussian_blur(clean, 5.0);
  Image constant = Image::Constant(32, 32, 0.5);

  auto outcome = quality_control({clean, blurred, constant}, blur_floor, contrast_floor);
  REQUIRE(outcome.kept.size() == 1);
  CHECK(outcome.kept[0] == 0);
  REQUIRE(outcome.discarded.size() == 2);
  CHECK(outcome.discarded[0].index == 1);
  CHECK(outcome.discarded[0].reason == "blur");
  CHECK(outcome.discarded[1].index == 2);
  CHECK(outcome.discarded[1].reason == "contrast");  // zero range wins over flatness

  // Contrast-only failure: sharp but compressed dynamic range.
  Image low_contrast = clean * 0.02 + 0.5;
  auto c2 = quality_control({low_contrast}, blur_floor * 1e-6, contrast_floor);
  REQUIRE(c2.discarded.size() == 1);
  CHECK(c2.discarded[0].reason == "contrast");

  CHECK_THROWS_AS(quality_control({}, 0.1, 0.1), InvalidArgument);
  auto all_gone = quality_control({constant}, blur_floor, contrast_floor);
  CHECK(all_gone.all_discarded());
}

TEST_CASE("profile validation") {
  PrinterProfile p = default_printer();
  p.instance_noise_sigma = -0.1;
  CHECK_THROWS_AS(p.validate(), InvalidArgument);

  DeviceProfile d = default_device();
  d.scale_factor = 5.0;
  CHECK_THROWS_AS(d.validate(), InvalidArgument);
  d = default_device();
  d.gamma = 0.0;
  CHECK_THROWS_AS(d.validate(), InvalidArgument);
}

TEST_SUITE_END();
