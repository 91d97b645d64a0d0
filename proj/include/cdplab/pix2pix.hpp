#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cdplab/autodiff.hpp"
#include "cdplab/image.hpp"
#include "cdplab/metrics.hpp"

namespace cdp::px {

struct GeneratorConfig {
  int depth = 4;          // down/up levels; image side must divide by 2^depth
  int base_channels = 32;
  int image_size = 64;

  void validate() const;
};

struct DiscriminatorConfig {
  int n_layers = 3;
  int base_channels = 32;

  void validate() const;
};

struct LossWeights {
  double adversarial = 1.0;
  double lambda_l1 = 100.0;
  double extra_l2 = 0.0;
  double extra_ssim = 0.0;

  void validate() const;  // at least one weight must be > 0
};

struct ConvLayer {
  ad::Tensor weight;
  ad::Tensor bias;      // undefined when the layer feeds a normalization
  bool normalized = false;
  int stride = 2;
  int padding = 1;
};

/// Encoder-decoder with skip connections; 1-channel in, 1-channel out,
/// sigmoid head so outputs live in (0, 1).
struct UNet {
  GeneratorConfig cfg;
  std::vector<ConvLayer> enc;
  std::vector<ConvLayer> dec;

  static UNet init(const GeneratorConfig& cfg, Rng& rng);
  ad::Tensor forward(const ad::Tensor& input) const;
  std::vector<ad::Tensor> parameters() const;
};

/// Patch classifier over the concatenated (condition, image) pair; sigmoid
/// probabilities on a spatial grid.
struct PatchGan {
  DiscriminatorConfig cfg;
  std::vector<ConvLayer> layers;

  static PatchGan init(const DiscriminatorConfig& cfg, int in_channels, Rng& rng);
  ad::Tensor forward(const ad::Tensor& condition, const ad::Tensor& image) const;
  std::vector<ad::Tensor> parameters() const;
};

// Conversions between [0,1] images and [1,1,H,W] tensors.
ad::Tensor image_to_tensor(const Image& img, bool requires_grad = false);
Image tensor_to_image(const ad::Tensor& t);

/// G applied to a template rendering; pixels in (0, 1) via the sigmoid head.
Image generator_forward(const UNet& g, const Image& template_img);

/// Patch probability grid for D(condition, image).
ad::Tensor discriminator_forward(const PatchGan& d, const Image& condition,
                                 const Image& image);

constexpr double kBceEps = 1e-7;

/// -mean log D(t, x) - mean log(1 - D(t, x_hat)); x_hat is treated as a
/// constant (no gradient reaches its producer).
ad::Tensor loss_discriminator(const PatchGan& d, const ad::Tensor& t, const ad::Tensor& x,
                              const ad::Tensor& x_hat);

/// adversarial * -mean log D(t, x_hat) + lambda_l1 * mean|x - x_hat|
/// + extra_l2 * mean(x - x_hat)^2 + extra_ssim * (1 - SSIM(x, x_hat)).
ad::Tensor loss_generator(const PatchGan& d, const ad::Tensor& t, const ad::Tensor& x,
                          const ad::Tensor& x_hat, const LossWeights& weights);

/// Windowed mean SSIM built from graph ops (differentiable route; the
/// scoring implementation in metrics.hpp is the reference).
ad::Tensor ssim_graph(const ad::Tensor& a, const ad::Tensor& b,
                      const SsimParams& params = {});

struct TrainConfig {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  LossWeights weights;
  ad::AdamConfig adam;
  int epochs = 200;
  int batch_size = 1;
  int n_pairs = 40;  // cap on training pairs actually used
  std::uint64_t seed = 0;
  int checkpoint_every = 50;

  void validate() const;
};

struct TrainPair {
  Image template_img;  // condition
  Image target;        // registered enrollment capture
};

struct EpochStats {
  int epoch = 0;
  double loss_d = 0.0;
  double loss_g = 0.0;
  double loss_l1 = 0.0;  // unweighted mean |x - G(t)|
};

struct TrainResult {
  UNet generator;
  PatchGan discriminator;
  std::vector<EpochStats> history;
};

/// Alternating single-step optimization: one discriminator update then one
/// generator update per pair, batch size 1. Deterministic under seed.
/// Writes a checkpoint every checkpoint_every epochs when checkpoint_dir is
/// given. Throws NumericError with epoch/step context on non-finite losses.
TrainResult train(const std::vector<TrainPair>& pairs, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& checkpoint_dir = {},
                  const std::string& printer_id = "", const std::string& device_id = "");

void write_loss_history_csv(const std::filesystem::path& path,
                            const std::vector<EpochStats>& history);

// --- checkpoints -------------------------------------------------------------
// Single file: one line of compact JSON (architecture, parameter manifest,
// step counter, provenance) followed by little-endian float64 blocks in
// declaration order.

struct Checkpoint {
  UNet generator;
  PatchGan discriminator;
  long step = 0;
  std::string printer_id;
  std::string device_id;
};

void save_checkpoint(const std::filesystem::path& path, const UNet& g, const PatchGan& d,
                     long step, const std::string& printer_id,
                     const std::string& device_id);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cdp::px
