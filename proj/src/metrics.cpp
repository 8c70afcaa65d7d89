#include "sst/metrics.hpp"

#include <cmath>

#include "sst/errors.hpp"

namespace sst {

namespace {

void require_same_shape(const Image& a, const Image& b) {
  if (!(a.shape() == b.shape())) throw ShapeError("shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

// Valid-mode separable filtering of one channel plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int h, int w,
                                 const std::vector<double>& taps) {
  const int k = static_cast<int>(taps.size());
  const int ow = w - k + 1, oh = h - k + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += taps[t] * plane[static_cast<std::size_t>(r) * w + c + t];
      tmp[static_cast<std::size_t>(r) * ow + c] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += taps[t] * tmp[static_cast<std::size_t>(r + t) * ow + c];
      out[static_cast<std::size_t>(r) * ow + c] = s;
    }
  return out;
}

}  // namespace

double mse(const Image& a, const Image& b) {
  require_same_shape(a, b);
  const auto pa = a.pixels();
  const auto pb = b.pixels();
  double acc = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double d = static_cast<double>(pa[i]) - pb[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pa.size());
}

double psnr_from_mse(double mse_value) {
  if (mse_value <= 0.0) return kPsnrInfinite;
  return 10.0 * std::log10(255.0 * 255.0 / mse_value);
}

double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

std::vector<double> gaussian_kernel(int window, double sigma) {
  std::vector<double> taps(window);
  const int half = window / 2;
  double sum = 0.0;
  for (int i = 0; i < window; ++i) {
    const double x = i - half;
    taps[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    sum += taps[i];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

double ssim(const Image& a, const Image& b, const SsimParams& p) {
  require_same_shape(a, b);
  if (p.window <= 0 || p.window % 2 == 0) throw WindowError("SSIM window must be odd and positive");
  if (p.window > std::min(a.height(), a.width()))
    throw WindowError("SSIM window " + std::to_string(p.window) + " larger than image " + a.shape().str());

  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  const auto taps = gaussian_kernel(p.window, p.sigma);
  const int h = a.height(), w = a.width(), nc = a.channels();
  const std::size_t n = static_cast<std::size_t>(h) * w;

  double total = 0.0;
  for (int ch = 0; ch < nc; ++ch) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = a.pixels()[i * nc + ch];
      y[i] = b.pixels()[i * nc + ch];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, taps);
    const auto my = filter_valid(y, h, w, taps);
    const auto sxx = filter_valid(xx, h, w, taps);
    const auto syy = filter_valid(yy, h, w, taps);
    const auto sxy = filter_valid(xy, h, w, taps);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      acc += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / nc;
}

StealthScore stealth(const Image& a, const Image& b, const SsimParams& params) {
  StealthScore s;
  s.mse = mse(a, b);
  s.psnr = psnr_from_mse(s.mse);
  s.ssim = ssim(a, b, params);
  return s;
}

CorpusStealth corpus_stealth(std::span<const StealthScore> scores) {
  CorpusStealth out;
  out.count = scores.size();
  if (scores.empty()) return out;
  double psnr_sum = 0.0;
  std::size_t finite = 0;
  for (const auto& s : scores) {
    out.mse += s.mse;
    out.ssim += s.ssim;
    if (std::isfinite(s.psnr)) {
      psnr_sum += s.psnr;
      ++finite;
    } else {
      ++out.infinite_psnr;
    }
  }
  out.mse /= static_cast<double>(scores.size());
  out.ssim /= static_cast<double>(scores.size());
  out.psnr = finite ? psnr_sum / static_cast<double>(finite) : kPsnrInfinite;
  out.psnr_of_mean_mse = psnr_from_mse(out.mse);
  return out;
}

CorpusStealth corpus_stealth(std::span<const Image> reference, std::span<const Image> modified,
                             const SsimParams& params) {
  if (reference.size() != modified.size()) throw ShapeError("corpus sizes differ");
  for (std::size_t i = 0; i < reference.size(); ++i) {
    require_same_shape(reference[i], modified[i]);
    if (params.window > std::min(reference[i].height(), reference[i].width()) || params.window % 2 == 0)
      throw WindowError("SSIM window does not fit corpus image " + reference[i].shape().str());
  }
  std::vector<StealthScore> scores(reference.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::size_t i = 0; i < reference.size(); ++i) scores[i] = stealth(reference[i], modified[i], params);
  return corpus_stealth(scores);
}

}  // namespace sst
