#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "cdplab/dataset.hpp"
#include "cdplab/metrics.hpp"
#include "cdplab/pix2pix.hpp"

using namespace cdp;
using namespace cdp::px;

namespace {

Image random_image(Rng& rng, int side) {
  Image img(side, side);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = rng.uniform();
  return img;
}

GeneratorConfig small_gen() {
  GeneratorConfig g;
  g.depth = 3;
  g.base_channels = 8;
  g.image_size = 16;
  return g;
}

DiscriminatorConfig small_disc() {
  DiscriminatorConfig d;
  d.n_layers = 2;
  d.base_channels = 8;
  return d;
}

// Scalar re-derivation of the discriminator objective from the patch
// probability grids: -mean log p_real - mean log(1 - p_fake).
double loss_d_oracle(const Eigen::ArrayXd& p_real, const Eigen::ArrayXd& p_fake) {
  double first = 0.0, second = 0.0;
  for (Eigen::Index i = 0; i < p_real.size(); ++i) {
    const double p = std::min(std::max(p_real[i], kBceEps), 1.0 - kBceEps);
    first += -std::log(p);
  }
  for (Eigen::Index i = 0; i < p_fake.size(); ++i) {
    const double p = std::min(std::max(p_fake[i], kBceEps), 1.0 - kBceEps);
    second += -std::log(1.0 - p);
  }
  return first / static_cast<double>(p_real.size()) +
         second / static_cast<double>(p_fake.size());
}

// Scalar re-derivation of the generator objective.
double loss_g_oracle(const Eigen::ArrayXd& p_fake, const Image& x, const Image& x_hat,
                     const LossWeights& w) {
  double adv = 0.0;
  for (Eigen::Index i = 0; i < p_fake.size(); ++i) {
    const double p = std::min(std::max(p_fake[i], kBceEps), 1.0 - kBceEps);
    adv += -std::log(p);
  }
  adv /= static_cast<double>(p_fake.size());
  double l1 = 0.0, l2 = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double d = x.data()[i] - x_hat.data()[i];
    l1 += std::abs(d);
    l2 += d * d;
  }
  l1 /= static_cast<double>(x.size());
  l2 /= static_cast<double>(x.size());
  double total = w.adversarial * adv + w.lambda_l1 * l1 + w.extra_l2 * l2;
  if (w.extra_ssim > 0.0) total += w.extra_ssim * (1.0 - ssim(x, x_hat));
  return total;
}

}  // namespace

TEST_SUITE_BEGIN("pix2pix");

TEST_CASE("config validation") {
  GeneratorConfig g;
  g.depth = 4;
  g.image_size = 60;  // not divisible by 16
  CHECK_THROWS_AS(g.validate(), InvalidArgument);
  g.image_size = 64;
  CHECK_NOTHROW(g.validate());

  LossWeights w;
  w.adversarial = 0.0;
  w.lambda_l1 = 0.0;
  CHECK_THROWS_AS(w.validate(), InvalidArgument);
  w.lambda_l1 = 1.0;
  CHECK_NOTHROW(w.validate());
}

TEST_CASE("untrained generator emits a valid image in (0,1)") {
  Rng rng(1);
  auto g = UNet::init(small_gen(), rng);
  Image t = random_image(rng, 16);
  Image out = generator_forward(g, t);
  CHECK(out.rows() == 16);
  CHECK(out.cols() == 16);
  CHECK((out > 0.0).all());
  CHECK((out < 1.0).all());

  Image wrong(8, 8);
  CHECK_THROWS_AS(generator_forward(g, wrong), InvalidArgument);
}

TEST_CASE("generator forward is deterministic given weights") {
  Rng rng(2);
  auto g = UNet::init(small_gen(), rng);
  Image t = random_image(rng, 16);
  Image a = generator_forward(g, t);
  Image b = generator_forward(g, t);
  CHECK((a == b).all());
}

TEST_CASE("discriminator outputs probabilities on a grid") {
  Rng rng(3);
  auto d = PatchGan::init(small_disc(), 2, rng);
  Image t = random_image(rng, 16);
  Image x = random_image(rng, 16);
  auto grid = discriminator_forward(d, t, x);
  REQUIRE(grid.shape().size() == 4);
  CHECK(grid.shape()[2] >= 1);
  CHECK(grid.shape()[3] >= 1);
  CHECK((grid.value() > 0.0).all());
  CHECK((grid.value() < 1.0).all());

  auto grid2 = discriminator_forward(d, t, x);
  CHECK((grid.value() == grid2.value()).all());
}

TEST_CASE("loss_discriminator: closed forms") {
  // An indifferent discriminator (p == 0.5 everywhere) scores 2 ln 2.
  Eigen::ArrayXd half = Eigen::ArrayXd::Constant(9, 0.5);
  auto p_real = ad::Tensor::from_data({1, 1, 3, 3}, half);
  auto p_fake = ad::Tensor::from_data({1, 1, 3, 3}, half);
  auto ones = ad::Tensor::full({1, 1, 3, 3}, 1.0);
  auto zeros = ad::Tensor::zeros({1, 1, 3, 3});
  const double v = ad::add(ad::bce_loss(p_real, ones, kBceEps),
                           ad::bce_loss(p_fake, zeros, kBceEps))
                       .scalar();
  CHECK(std::abs(v - 2.0 * std::numbers::ln2) <= 1e-12);

  // Perfect discriminator limit: p_real ~ 1, p_fake ~ 0 gives ~0.
  auto good_r = ad::Tensor::full({1, 1, 3, 3}, 1.0 - 1e-6);
  auto good_f = ad::Tensor::full({1, 1, 3, 3}, 1e-6);
  const double v2 = ad::add(ad::bce_loss(good_r, ones, kBceEps),
                            ad::bce_loss(good_f, zeros, kBceEps))
                        .scalar();
  CHECK(v2 == doctest::Approx(0.0).epsilon(1e-5));
}

TEST_CASE("loss_discriminator matches the scalar oracle on random inputs") {
  Rng rng(4);
  auto d = PatchGan::init(small_disc(), 2, rng);
  for (int trial = 0; trial < 20; ++trial) {
    Image t = random_image(rng, 16);
    Image x = random_image(rng, 16);
    Image xh = random_image(rng, 16);
    auto t_t = image_to_tensor(t);
    auto x_t = image_to_tensor(x);
    auto xh_t = image_to_tensor(xh);

    const double module_value = loss_discriminator(d, t_t, x_t, xh_t).scalar();
    const auto p_real = discriminator_forward(d, t, x).value();
    const auto p_fake = discriminator_forward(d, t, xh).value();
    CHECK(std::abs(module_value - loss_d_oracle(p_real, p_fake)) <= 1e-12);
  }
}

TEST_CASE("loss_generator matches the scalar oracle on random inputs") {
  Rng rng(5);
  auto d = PatchGan::init(small_disc(), 2, rng);
  LossWeights weights;  // lambda 100, adversarial 1
  LossWeights with_extras;
  with_extras.extra_l2 = 3.0;
  with_extras.extra_ssim = 2.0;

  for (int trial = 0; trial < 20; ++trial) {
    Image t = random_image(rng, 16);
    Image x = random_image(rng, 16);
    Image xh = random_image(rng, 16);
    auto t_t = image_to_tensor(t);
    auto x_t = image_to_tensor(x);
    auto xh_t = image_to_tensor(xh);

    const auto p_fake = discriminator_forward(d, t, xh).value();
    const double module_value = loss_generator(d, t_t, x_t, xh_t, weights).scalar();
    CHECK(std::abs(module_value - loss_g_oracle(p_fake, x, xh, weights)) <= 1e-12);

    if (trial < 5) {
      const double with_all =
          loss_generator(d, t_t, x_t, xh_t, with_extras).scalar();
      CHECK(std::abs(with_all - loss_g_oracle(p_fake, x, xh, with_extras)) <= 1e-9);
    }
  }
}

TEST_CASE("loss_generator: lambda 0 reduces to the adversarial term") {
  Rng rng(6);
  auto d = PatchGan::init(small_disc(), 2, rng);
  Image t = random_image(rng, 16);
  Image x = random_image(rng, 16);
  Image xh = random_image(rng, 16);
  LossWeights adv_only;
  adv_only.lambda_l1 = 0.0;
  const double v = loss_generator(d, image_to_tensor(t), image_to_tensor(x),
                                  image_to_tensor(xh), adv_only)
                       .scalar();
  const auto p_fake = discriminator_forward(d, t, xh).value();
  double expect = 0.0;
  for (Eigen::Index i = 0; i < p_fake.size(); ++i)
    expect += -std::log(std::min(std::max(p_fake[i], kBceEps), 1.0 - kBceEps));
  expect /= static_cast<double>(p_fake.size());
  CHECK(std::abs(v - expect) <= 1e-12);

  LossWeights none;
  none.adversarial = 0.0;
  none.lambda_l1 = 0.0;
  CHECK_THROWS_AS(
      loss_generator(d, image_to_tensor(t), image_to_tensor(x), image_to_tensor(xh), none),
      InvalidArgument);
}

TEST_CASE("ideal generator limit: matching output and fooled discriminator") {
  Rng rng(7);
  auto d = PatchGan::init(small_disc(), 2, rng);
  Image t = random_image(rng, 16);
  Image x = random_image(rng, 16);
  // With x_hat == x the l1 term vanishes; the adversarial part is bounded by
  // the discriminator's actual response.
  LossWeights w;
  const double v = loss_generator(d, image_to_tensor(t), image_to_tensor(x),
                                  image_to_tensor(x), w)
                       .scalar();
  const auto p_fake = discriminator_forward(d, t, x).value();
  double adv = 0.0;
  for (Eigen::Index i = 0; i < p_fake.size(); ++i)
    adv += -std::log(std::min(std::max(p_fake[i], kBceEps), 1.0 - kBceEps));
  adv /= static_cast<double>(p_fake.size());
  CHECK(std::abs(v - adv) <= 1e-12);
}

TEST_CASE("ssim_graph agrees with the scoring implementation") {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    Image a = random_image(rng, 16);
    Image b = random_image(rng, 16);
    const double graph = ssim_graph(image_to_tensor(a), image_to_tensor(b)).scalar();
    CHECK(graph == doctest::Approx(ssim(a, b)).epsilon(1e-10));
  }
}

TEST_CASE("gradient isolation between the two networks") {
  Rng rng(9);
  auto cfg_g = small_gen();
  auto cfg_d = small_disc();
  std::vector<TrainPair> pairs;
  pairs.push_back({random_image(rng, 16), random_image(rng, 16)});

  TrainConfig cfg;
  cfg.generator = cfg_g;
  cfg.discriminator = cfg_d;
  cfg.epochs = 1;
  cfg.n_pairs = 1;
  cfg.seed = 1;

  // One manual step with snapshots around each update.
  Rng gi(derive_seed(cfg.seed, "gen-init")), di(derive_seed(cfg.seed, "disc-init"));
  auto g = UNet::init(cfg.generator, gi);
  auto d = PatchGan::init(cfg.discriminator, 2, di);
  ad::Adam g_opt(g.parameters(), cfg.adam);
  ad::Adam d_opt(d.parameters(), cfg.adam);

  auto snapshot = [](const std::vector<ad::Tensor>& params) {
    std::vector<Eigen::ArrayXd> out;
    for (const auto& p : params) out.push_back(p.value());
    return out;
  };
  auto identical = [](const std::vector<Eigen::ArrayXd>& a,
                      const std::vector<Eigen::ArrayXd>& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!(a[i] == b[i]).all()) return false;
    return true;
  };

  auto t = image_to_tensor(pairs[0].template_img);
  auto x = image_to_tensor(pairs[0].target);
  auto x_hat = g.forward(t);

  const auto g_before = snapshot(g.parameters());
  ad::zero_grad(d_opt.params());
  ad::backward(loss_discriminator(d, t, x, x_hat));
  d_opt.step();
  CHECK(identical(g_before, snapshot(g.parameters())));  // D update left G alone

  const auto d_after_dstep = snapshot(d.parameters());
  ad::zero_grad(g_opt.params());
  ad::zero_grad(d_opt.params());
  ad::backward(loss_generator(d, t, x, x_hat, cfg.weights));
  g_opt.step();
  CHECK(identical(d_after_dstep, snapshot(d.parameters())));  // G update left D alone
  CHECK_FALSE(identical(g_before, snapshot(g.parameters())));
}

TEST_CASE("training is reproducible and reduces the l1 term") {
  Rng rng(10);
  std::vector<TrainPair> pairs;
  for (int i = 0; i < 3; ++i) {
    Image t = random_image(rng, 16);
    Image x = 0.7 * t + 0.1;  // a simple channel to learn
    pairs.push_back({t, x});
  }
  TrainConfig cfg;
  cfg.generator = small_gen();
  cfg.discriminator = small_disc();
  cfg.epochs = 8;
  cfg.n_pairs = 3;
  cfg.seed = 99;

  auto r1 = train(pairs, cfg);
  auto r2 = train(pairs, cfg);
  REQUIRE(r1.history.size() == 8);
  for (std::size_t e = 0; e < r1.history.size(); ++e) {
    CHECK(r1.history[e].loss_d == r2.history[e].loss_d);
    CHECK(r1.history[e].loss_g == r2.history[e].loss_g);
    CHECK(r1.history[e].loss_l1 == r2.history[e].loss_l1);
  }
  CHECK(r1.history.back().loss_l1 < r1.history.front().loss_l1);
}

TEST_CASE("single-pair overfit pushes correlation above 0.9") {
  Rng rng(11);
  auto t = generate_template(123, 16, 16, 0.5);
  Image t_img = t.to_image();
  // target: a smoothed, noisy rendition of the template
  Image x = t_img * 0.6 + 0.2;
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += 0.05 * rng.normal();
  x = x.cwiseMax(0.0).cwiseMin(1.0);

  TrainConfig cfg;
  cfg.generator = small_gen();
  cfg.discriminator = small_disc();
  cfg.epochs = 300;  // batch of one pair -> one step per epoch
  cfg.n_pairs = 1;
  cfg.seed = 5;

  auto result = train({{t_img, x}}, cfg);
  Image out = generator_forward(result.generator, t_img);
  CHECK(pcorr(out, x) > 0.9);
}

TEST_CASE("checkpoint round-trip preserves weights and provenance") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "cdplab_test_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);

  Rng rng(12);
  auto g = UNet::init(small_gen(), rng);
  auto d = PatchGan::init(small_disc(), 2, rng);
  save_checkpoint(dir / "model.ckpt", g, d, 1234, "HPI55", "epson");

  auto ckpt = load_checkpoint(dir / "model.ckpt");
  CHECK(ckpt.step == 1234);
  CHECK(ckpt.printer_id == "HPI55");
  CHECK(ckpt.device_id == "epson");

  auto orig_params = g.parameters();
  auto loaded_params = ckpt.generator.parameters();
  REQUIRE(orig_params.size() == loaded_params.size());
  for (std::size_t i = 0; i < orig_params.size(); ++i)
    CHECK((orig_params[i].value() == loaded_params[i].value()).all());

  // Behaviour must match bitwise.
  Image t = random_image(rng, 16);
  CHECK((generator_forward(g, t) == generator_forward(ckpt.generator, t)).all());

  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
  fs::remove_all(dir);
}

TEST_SUITE_END();
