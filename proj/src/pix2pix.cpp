#include "cdplab/pix2pix.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace cdp::px {

using ad::Tensor;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr double kInitScale = 0.02;
constexpr double kLeakySlope = 0.2;
constexpr double kNormEps = 1e-5;

int channels_at(int base, int level) { return base << std::min(level, 3); }

ConvLayer make_layer(Eigen::Index out_c, Eigen::Index in_c, int k, int stride, int pad,
                     bool normalized, Rng& rng, bool transpose) {
  ConvLayer layer;
  layer.stride = stride;
  layer.padding = pad;
  layer.normalized = normalized;
  const ad::Shape shape = transpose ? ad::Shape{in_c, out_c, k, k}
                                    : ad::Shape{out_c, in_c, k, k};
  layer.weight = Tensor::randn(shape, rng, kInitScale, true);
  if (!normalized)
    layer.bias = Tensor::zeros({out_c}, true);
  return layer;
}

Tensor apply_conv(const ConvLayer& layer, const Tensor& x, bool transpose) {
  Tensor h = transpose ? ad::conv2d_transpose(x, layer.weight, layer.stride, layer.padding)
                       : ad::conv2d(x, layer.weight, layer.stride, layer.padding);
  if (layer.bias.defined()) h = ad::add_channel_bias(h, layer.bias);
  if (layer.normalized) h = ad::instance_norm(h, kNormEps);
  return h;
}

void push_params(std::vector<Tensor>& out, const ConvLayer& layer) {
  out.push_back(layer.weight);
  if (layer.bias.defined()) out.push_back(layer.bias);
}

}  // namespace

void GeneratorConfig::validate() const {
  if (depth < 1 || depth > 8) throw InvalidArgument("GeneratorConfig: depth must be in [1, 8]");
  if (base_channels < 1) throw InvalidArgument("GeneratorConfig: base_channels must be >= 1");
  if (image_size < (1 << depth) || image_size % (1 << depth) != 0)
    throw InvalidArgument("GeneratorConfig: image size " + std::to_string(image_size) +
                          " must be divisible by 2^depth = " + std::to_string(1 << depth));
}

void DiscriminatorConfig::validate() const {
  if (n_layers < 1 || n_layers > 6)
    throw InvalidArgument("DiscriminatorConfig: n_layers must be in [1, 6]");
  if (base_channels < 1)
    throw InvalidArgument("DiscriminatorConfig: base_channels must be >= 1");
}

void LossWeights::validate() const {
  if (adversarial < 0.0 || lambda_l1 < 0.0 || extra_l2 < 0.0 || extra_ssim < 0.0)
    throw InvalidArgument("LossWeights: weights must be >= 0");
  if (adversarial == 0.0 && lambda_l1 == 0.0 && extra_l2 == 0.0 && extra_ssim == 0.0)
    throw InvalidArgument("LossWeights: at least one weight must be > 0");
}

void TrainConfig::validate() const {
  generator.validate();
  discriminator.validate();
  weights.validate();
  if (epochs < 1) throw InvalidArgument("TrainConfig: epochs must be >= 1");
  if (batch_size != 1) throw InvalidArgument("TrainConfig: only batch_size 1 is supported");
  if (n_pairs < 1) throw InvalidArgument("TrainConfig: n_pairs must be >= 1");
  if (checkpoint_every < 1) throw InvalidArgument("TrainConfig: checkpoint_every must be >= 1");
}

UNet UNet::init(const GeneratorConfig& cfg, Rng& rng) {
  cfg.validate();
  UNet net;
  net.cfg = cfg;
  const int d = cfg.depth;
  for (int i = 0; i < d; ++i) {
    const int in_c = i == 0 ? 1 : channels_at(cfg.base_channels, i - 1);
    const int out_c = channels_at(cfg.base_channels, i);
    const bool norm = i > 0 && i < d - 1;  // first layer and bottleneck stay raw
    net.enc.push_back(make_layer(out_c, in_c, 4, 2, 1, norm, rng, false));
  }
  for (int j = 0; j < d; ++j) {
    const int level = d - 1 - j;  // resolution level this layer expands to
    // Past the first expansion the input is (previous output ++ skip).
    const int in_c = j == 0 ? channels_at(cfg.base_channels, d - 1)
                            : 2 * channels_at(cfg.base_channels, level);
    const int out_c = level == 0 ? 1 : channels_at(cfg.base_channels, level - 1);
    const bool norm = level != 0;
    net.dec.push_back(make_layer(out_c, in_c, 4, 2, 1, norm, rng, true));
  }
  return net;
}

Tensor UNet::forward(const Tensor& input) const {
  const auto& s = input.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != cfg.image_size || s[3] != cfg.image_size)
    throw InvalidArgument("UNet::forward: expected [N,1," + std::to_string(cfg.image_size) +
                          "," + std::to_string(cfg.image_size) + "], got " +
                          ad::shape_str(s));
  std::vector<Tensor> skips;
  Tensor h = input;
  for (std::size_t i = 0; i < enc.size(); ++i) {
    h = apply_conv(enc[i], h, false);
    h = ad::leaky_relu(h, kLeakySlope);
    if (i + 1 < enc.size()) skips.push_back(h);
  }
  for (std::size_t j = 0; j < dec.size(); ++j) {
    h = apply_conv(dec[j], h, true);
    if (j + 1 < dec.size()) {
      h = ad::leaky_relu(h, kLeakySlope);
      h = ad::concat_channels(h, skips[skips.size() - 1 - j]);
    }
  }
  return ad::sigmoid(h);
}

std::vector<Tensor> UNet::parameters() const {
  std::vector<Tensor> out;
  for (const auto& l : enc) push_params(out, l);
  for (const auto& l : dec) push_params(out, l);
  return out;
}

PatchGan PatchGan::init(const DiscriminatorConfig& cfg, int in_channels, Rng& rng) {
  cfg.validate();
  PatchGan net;
  net.cfg = cfg;
  int in_c = in_channels;
  for (int i = 0; i < cfg.n_layers; ++i) {
    const int out_c = channels_at(cfg.base_channels, i);
    const int stride = i < cfg.n_layers - 1 ? 2 : 1;
    net.layers.push_back(make_layer(out_c, in_c, 4, stride, 1, i > 0, rng, false));
    in_c = out_c;
  }
  net.layers.push_back(make_layer(1, in_c, 4, 1, 1, false, rng, false));
  return net;
}

Tensor PatchGan::forward(const Tensor& condition, const Tensor& image) const {
  Tensor h = ad::concat_channels(condition, image);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = apply_conv(layers[i], h, false);
    if (i + 1 < layers.size()) h = ad::leaky_relu(h, kLeakySlope);
  }
  if (h.shape()[2] < 1 || h.shape()[3] < 1)
    throw InvalidArgument("PatchGan: patch grid collapsed below 1x1");
  return ad::sigmoid(h);
}

std::vector<Tensor> PatchGan::parameters() const {
  std::vector<Tensor> out;
  for (const auto& l : layers) push_params(out, l);
  return out;
}

Tensor image_to_tensor(const Image& img, bool requires_grad) {
  Eigen::ArrayXd data = Eigen::Map<const Eigen::ArrayXd>(img.data(), img.size());
  return Tensor::from_data({1, 1, img.rows(), img.cols()}, std::move(data), requires_grad);
}

Image tensor_to_image(const Tensor& t) {
  const auto& s = t.shape();
  if (s.size() != 4 || s[0] != 1 || s[1] != 1)
    throw InvalidArgument("tensor_to_image: expected [1,1,H,W], got " + ad::shape_str(s));
  Image img(s[2], s[3]);
  Eigen::Map<Eigen::ArrayXd>(img.data(), img.size()) = t.value();
  return img;
}

Image generator_forward(const UNet& g, const Image& template_img) {
  return tensor_to_image(g.forward(image_to_tensor(template_img)));
}

Tensor discriminator_forward(const PatchGan& d, const Image& condition, const Image& image) {
  if (condition.rows() != image.rows() || condition.cols() != image.cols())
    throw InvalidArgument("discriminator_forward: size mismatch");
  return d.forward(image_to_tensor(condition), image_to_tensor(image));
}

Tensor loss_discriminator(const PatchGan& d, const Tensor& t, const Tensor& x,
                          const Tensor& x_hat) {
  const Tensor x_hat_const = x_hat.requires_grad() ? x_hat.detach() : x_hat;
  Tensor p_real = d.forward(t, x);
  Tensor p_fake = d.forward(t, x_hat_const);
  Tensor ones = Tensor::full(p_real.shape(), 1.0);
  Tensor zeros = Tensor::zeros(p_fake.shape());
  return ad::add(ad::bce_loss(p_real, ones, kBceEps), ad::bce_loss(p_fake, zeros, kBceEps));
}

Tensor ssim_graph(const Tensor& a, const Tensor& b, const SsimParams& params) {
  const int side = params.side();
  const auto& s = a.shape();
  if (s.size() != 4 || s[1] != 1)
    throw InvalidArgument("ssim_graph: expected [N,1,H,W]");
  if (s[2] < side || s[3] < side)
    throw InvalidArgument("ssim_graph: image smaller than the window");

  Eigen::ArrayXd w(static_cast<Eigen::Index>(side) * side);
  if (params.window == SsimParams::Window::gaussian11) {
    Eigen::ArrayXd k1d(side);
    for (int i = 0; i < side; ++i) {
      const double d = i - (side - 1) / 2.0;
      k1d[i] = std::exp(-0.5 * d * d / (1.5 * 1.5));
    }
    k1d /= k1d.sum();
    for (int i = 0; i < side; ++i)
      for (int j = 0; j < side; ++j) w[i * side + j] = k1d[i] * k1d[j];
  } else {
    w.setConstant(1.0 / (side * side));
  }
  Tensor window = Tensor::from_data({1, 1, side, side}, std::move(w));

  const double c1 = (params.k1 * params.dynamic_range) * (params.k1 * params.dynamic_range);
  const double c2 = (params.k2 * params.dynamic_range) * (params.k2 * params.dynamic_range);

  Tensor mu_a = ad::conv2d(a, window, 1, 0);
  Tensor mu_b = ad::conv2d(b, window, 1, 0);
  Tensor s_aa = ad::conv2d(ad::mul(a, a), window, 1, 0);
  Tensor s_bb = ad::conv2d(ad::mul(b, b), window, 1, 0);
  Tensor s_ab = ad::conv2d(ad::mul(a, b), window, 1, 0);

  Tensor mu_ab = ad::mul(mu_a, mu_b);
  Tensor var_a = ad::sub(s_aa, ad::mul(mu_a, mu_a));
  Tensor var_b = ad::sub(s_bb, ad::mul(mu_b, mu_b));
  Tensor cov = ad::sub(s_ab, mu_ab);

  Tensor num = ad::mul(ad::add_scalar(ad::mul_scalar(mu_ab, 2.0), c1),
                       ad::add_scalar(ad::mul_scalar(cov, 2.0), c2));
  Tensor den = ad::mul(
      ad::add_scalar(ad::add(ad::mul(mu_a, mu_a), ad::mul(mu_b, mu_b)), c1),
      ad::add_scalar(ad::add(var_a, var_b), c2));
  return ad::mean_all(ad::div_op(num, den));
}

Tensor loss_generator(const PatchGan& d, const Tensor& t, const Tensor& x,
                      const Tensor& x_hat, const LossWeights& weights) {
  weights.validate();
  Tensor total;
  if (weights.adversarial > 0.0) {
    Tensor p_fake = d.forward(t, x_hat);
    Tensor ones = Tensor::full(p_fake.shape(), 1.0);
    total = ad::mul_scalar(ad::bce_loss(p_fake, ones, kBceEps), weights.adversarial);
  }
  auto accumulate = [&total](Tensor term) {
    total = total.defined() ? ad::add(total, term) : std::move(term);
  };
  if (weights.lambda_l1 > 0.0)
    accumulate(ad::mul_scalar(ad::l1_loss(x, x_hat), weights.lambda_l1));
  if (weights.extra_l2 > 0.0) {
    Tensor diff = ad::sub(x, x_hat);
    accumulate(ad::mul_scalar(ad::mean_all(ad::mul(diff, diff)), weights.extra_l2));
  }
  if (weights.extra_ssim > 0.0)
    accumulate(ad::mul_scalar(ad::add_scalar(ad::mul_scalar(ssim_graph(x, x_hat), -1.0), 1.0),
                              weights.extra_ssim));
  return total;
}

TrainResult train(const std::vector<TrainPair>& pairs, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& checkpoint_dir,
                  const std::string& printer_id, const std::string& device_id) {
  cfg.validate();
  if (pairs.empty()) throw InvalidArgument("train: need at least one pair");

  const int n_used = std::min<int>(cfg.n_pairs, static_cast<int>(pairs.size()));

  Rng g_init(derive_seed(cfg.seed, "gen-init"));
  Rng d_init(derive_seed(cfg.seed, "disc-init"));
  TrainResult result{UNet::init(cfg.generator, g_init),
                     PatchGan::init(cfg.discriminator, 2, d_init),
                     {}};
  UNet& g = result.generator;
  PatchGan& d = result.discriminator;

  ad::Adam g_opt(g.parameters(), cfg.adam);
  ad::Adam d_opt(d.parameters(), cfg.adam);

  std::vector<int> order(n_used);
  for (int i = 0; i < n_used; ++i) order[i] = i;

  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, "epoch-order", {static_cast<std::uint64_t>(epoch)}));
    shuffle_rng.shuffle(order);

    double sum_d = 0.0, sum_g = 0.0, sum_l1 = 0.0;
    for (int idx : order) {
      ++step;
      try {
        Tensor t = image_to_tensor(pairs[idx].template_img);
        Tensor x = image_to_tensor(pairs[idx].target);
        Tensor x_hat = g.forward(t);

        ad::zero_grad(d_opt.params());
        Tensor d_loss = loss_discriminator(d, t, x, x_hat);
        ad::backward(d_loss);
        d_opt.step();

        ad::zero_grad(g_opt.params());
        ad::zero_grad(d_opt.params());
        Tensor g_loss = loss_generator(d, t, x, x_hat, cfg.weights);
        ad::backward(g_loss);
        g_opt.step();
        ad::zero_grad(d_opt.params());

        sum_d += d_loss.scalar();
        sum_g += g_loss.scalar();
        sum_l1 += (x.value() - x_hat.value()).abs().mean();
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(step) + ": " + e.what());
      }
    }
    result.history.push_back({epoch, sum_d / n_used, sum_g / n_used, sum_l1 / n_used});

    if (checkpoint_dir &&
        (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs)) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_epoch_%04d.ckpt", epoch);
      save_checkpoint(*checkpoint_dir / name, g, d, step, printer_id, device_id);
    }
  }
  return result;
}

void write_loss_history_csv(const std::filesystem::path& path,
                            const std::vector<EpochStats>& history) {
  std::error_code ec;
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write loss history: " + path.string());
  out << "epoch,loss_d,loss_g,loss_l1\n";
  char buf[128];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g\n", e.epoch, e.loss_d, e.loss_g,
                  e.loss_l1);
    out << buf;
  }
}

// --- checkpoints ---------------------------------------------------------------

namespace {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

std::vector<NamedParam> named_params(const UNet& g, const PatchGan& d) {
  std::vector<NamedParam> out;
  auto add_layer = [&out](const std::string& prefix, const ConvLayer& l) {
    out.push_back({prefix + ".w", l.weight});
    if (l.bias.defined()) out.push_back({prefix + ".b", l.bias});
  };
  for (std::size_t i = 0; i < g.enc.size(); ++i)
    add_layer("g.enc" + std::to_string(i), g.enc[i]);
  for (std::size_t i = 0; i < g.dec.size(); ++i)
    add_layer("g.dec" + std::to_string(i), g.dec[i]);
  for (std::size_t i = 0; i < d.layers.size(); ++i)
    add_layer("d.layer" + std::to_string(i), d.layers[i]);
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const UNet& g, const PatchGan& d,
                     long step, const std::string& printer_id,
                     const std::string& device_id) {
  json header;
  header["format"] = "cdplab-checkpoint-v1";
  header["step"] = step;
  header["printer"] = printer_id;
  header["device"] = device_id;
  header["generator"] = {{"depth", g.cfg.depth},
                         {"base_channels", g.cfg.base_channels},
                         {"image_size", g.cfg.image_size}};
  header["discriminator"] = {{"n_layers", d.cfg.n_layers},
                             {"base_channels", d.cfg.base_channels}};
  json params = json::array();
  const auto named = named_params(g, d);
  for (const auto& p : named) {
    json shape = json::array();
    for (auto dim : p.tensor.shape()) shape.push_back(dim);
    params.push_back({{"name", p.name}, {"shape", shape}});
  }
  header["params"] = std::move(params);

  std::error_code ec;
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out << header.dump() << '\n';
  for (const auto& p : named) {
    const auto& v = p.tensor.value();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw IoError("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("checkpoint missing header: " + path.string(), 0);

  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError("checkpoint header " + path.string() + ": " + e.what(), e.byte);
  }

  Checkpoint ckpt;
  try {
    if (header.at("format").get<std::string>() != "cdplab-checkpoint-v1")
      throw ParseError("unsupported checkpoint format in " + path.string());
    ckpt.step = header.at("step").get<long>();
    ckpt.printer_id = header.at("printer").get<std::string>();
    ckpt.device_id = header.at("device").get<std::string>();

    GeneratorConfig gcfg;
    gcfg.depth = header.at("generator").at("depth").get<int>();
    gcfg.base_channels = header.at("generator").at("base_channels").get<int>();
    gcfg.image_size = header.at("generator").at("image_size").get<int>();
    DiscriminatorConfig dcfg;
    dcfg.n_layers = header.at("discriminator").at("n_layers").get<int>();
    dcfg.base_channels = header.at("discriminator").at("base_channels").get<int>();

    Rng dummy(0);
    ckpt.generator = UNet::init(gcfg, dummy);
    ckpt.discriminator = PatchGan::init(dcfg, 2, dummy);

    const auto named = named_params(ckpt.generator, ckpt.discriminator);
    const auto& params = header.at("params");
    if (params.size() != named.size())
      throw ParseError("checkpoint parameter count mismatch in " + path.string());
    for (std::size_t i = 0; i < named.size(); ++i) {
      if (params[i].at("name").get<std::string>() != named[i].name)
        throw ParseError("checkpoint parameter order mismatch at '" +
                         params[i].at("name").get<std::string>() + "' in " + path.string());
      ad::Shape shape;
      for (const auto& dim : params[i].at("shape")) shape.push_back(dim.get<Eigen::Index>());
      if (shape != named[i].tensor.shape())
        throw ParseError("checkpoint shape mismatch for '" + named[i].name + "' in " +
                         path.string());
      auto& value = const_cast<Tensor&>(named[i].tensor).value();
      in.read(reinterpret_cast<char*>(value.data()),
              static_cast<std::streamsize>(value.size() * sizeof(double)));
      if (!in) throw ParseError("checkpoint truncated at '" + named[i].name + "' in " +
                                path.string());
    }
  } catch (const json::exception& e) {
    throw ParseError("checkpoint header " + path.string() + ": " + e.what());
  }
  return ckpt;
}

}  // namespace cdp::px
