#pragma once

#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "sst/image.hpp"

namespace sst {

// PSNR of identical images. Excluded from corpus means.
inline constexpr double kPsnrInfinite = std::numeric_limits<double>::infinity();

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 255.0;
};

// Mean squared error on the 0-255 scale over all pixels and channels.
double mse(const Image& a, const Image& b);

// 10*log10(255^2 / mse); kPsnrInfinite when mse == 0.
double psnr(const Image& a, const Image& b);
double psnr_from_mse(double mse_value);

// Mean local SSIM with a normalized Gaussian window, evaluated at every
// position where the window fits entirely inside the image. Each channel is
// scored separately and the channel scores are averaged.
double ssim(const Image& a, const Image& b, const SsimParams& params = {});

struct StealthScore {
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

StealthScore stealth(const Image& a, const Image& b, const SsimParams& params = {});

// Corpus aggregate. `psnr` is the mean of finite per-image PSNRs;
// `psnr_of_mean_mse` applies the formula once to the corpus-mean MSE.
struct CorpusStealth {
  double mse = 0.0;
  double psnr = 0.0;
  double psnr_of_mean_mse = 0.0;
  double ssim = 0.0;
  std::size_t count = 0;
  std::size_t infinite_psnr = 0;
};

CorpusStealth corpus_stealth(std::span<const StealthScore> scores);
CorpusStealth corpus_stealth(std::span<const Image> reference, std::span<const Image> modified,
                             const SsimParams& params = {});

// Normalized 1-D Gaussian taps of odd length `window`.
std::vector<double> gaussian_kernel(int window, double sigma);

}  // namespace sst
