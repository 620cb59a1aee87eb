#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "seal/core/errors.hpp"

namespace seal::img {

// Square RGB image with float channels in [0, 1] (pre-normalization).
struct Image {
  std::array<Eigen::MatrixXd, 3> chan;  // indexed [y][x]

  Image() = default;
  Image(int h, int w) {
    for (auto& c : chan) c = Eigen::MatrixXd::Zero(h, w);
  }

  int height() const { return static_cast<int>(chan[0].rows()); }
  int width() const { return static_cast<int>(chan[0].cols()); }

  void clamp01() {
    for (auto& c : chan) c = c.array().min(1.0).max(0.0);
  }
};

inline Image hflip(const Image& in) {
  Image out = in;
  for (auto& c : out.chan) c = c.rowwise().reverse().eval();
  return out;
}

inline Image vflip(const Image& in) {
  Image out = in;
  for (auto& c : out.chan) c = c.colwise().reverse().eval();
  return out;
}

// Bilinear resample of an arbitrary sub-window back to the original size.
inline Image crop_resize(const Image& in, int y0, int x0, int crop_h,
                         int crop_w) {
  const int h = in.height();
  const int w = in.width();
  if (y0 < 0 || x0 < 0 || y0 + crop_h > h || x0 + crop_w > w || crop_h < 1 ||
      crop_w < 1)
    throw DataError("crop_resize: window outside image");
  Image out(h, w);
  const double sy = static_cast<double>(crop_h) / h;
  const double sx = static_cast<double>(crop_w) / w;
  for (int y = 0; y < h; ++y) {
    const double src_y = y0 + (y + 0.5) * sy - 0.5;
    const int iy = std::clamp(static_cast<int>(std::floor(src_y)), 0, h - 1);
    const int iy1 = std::min(iy + 1, h - 1);
    const double fy = std::clamp(src_y - iy, 0.0, 1.0);
    for (int x = 0; x < w; ++x) {
      const double src_x = x0 + (x + 0.5) * sx - 0.5;
      const int ix = std::clamp(static_cast<int>(std::floor(src_x)), 0, w - 1);
      const int ix1 = std::min(ix + 1, w - 1);
      const double fx = std::clamp(src_x - ix, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const auto& m = in.chan[static_cast<std::size_t>(c)];
        const double top = (1 - fx) * m(iy, ix) + fx * m(iy, ix1);
        const double bot = (1 - fx) * m(iy1, ix) + fx * m(iy1, ix1);
        out.chan[static_cast<std::size_t>(c)](y, x) = (1 - fy) * top + fy * bot;
      }
    }
  }
  return out;
}

// Separable Gaussian blur with reflective borders.
inline Image gaussian_blur(const Image& in, double sigma, int kernel = 9) {
  if (sigma <= 0.0) return in;
  const int radius = kernel / 2;
  std::vector<double> k(static_cast<std::size_t>(kernel));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] =
        std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + radius)];
  }
  for (auto& v : k) v /= sum;

  const int h = in.height();
  const int w = in.width();
  auto reflect = [](int i, int n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
    return std::clamp(i, 0, n - 1);
  };
  Image out = in;
  for (int c = 0; c < 3; ++c) {
    Eigen::MatrixXd tmp(h, w);
    const auto& src = in.chan[static_cast<std::size_t>(c)];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[static_cast<std::size_t>(i + radius)] *
                 src(y, reflect(x + i, w));
        tmp(y, x) = acc;
      }
    auto& dst = out.chan[static_cast<std::size_t>(c)];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[static_cast<std::size_t>(i + radius)] *
                 tmp(reflect(y + i, h), x);
        dst(y, x) = acc;
      }
  }
  return out;
}

inline Image to_grayscale(const Image& in) {
  Image out = in;
  Eigen::MatrixXd gray =
      0.299 * in.chan[0] + 0.587 * in.chan[1] + 0.114 * in.chan[2];
  for (auto& c : out.chan) c = gray;
  return out;
}

inline Image brightness_contrast(const Image& in, double brightness,
                                 double contrast) {
  Image out = in;
  for (auto& c : out.chan)
    c = ((c.array() - 0.5) * (1.0 + contrast) + 0.5 + brightness).matrix();
  out.clamp01();
  return out;
}

inline Image shuffle_channels(const Image& in, const std::array<int, 3>& perm) {
  Image out = in;
  for (int c = 0; c < 3; ++c)
    out.chan[static_cast<std::size_t>(c)] =
        in.chan[static_cast<std::size_t>(perm[static_cast<std::size_t>(c)])];
  return out;
}

// Flat [H*W*3] layout used for blob storage: pixel-major, channel-minor.
inline Eigen::VectorXd flatten(const Image& in) {
  const int h = in.height();
  const int w = in.width();
  Eigen::VectorXd v(static_cast<Eigen::Index>(h) * w * 3);
  Eigen::Index at = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        v(at++) = in.chan[static_cast<std::size_t>(c)](y, x);
  return v;
}

inline Image unflatten(const Eigen::VectorXd& v, int h, int w) {
  if (v.size() != static_cast<Eigen::Index>(h) * w * 3)
    throw DataError("unflatten: size mismatch");
  Image out(h, w);
  Eigen::Index at = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.chan[static_cast<std::size_t>(c)](y, x) = v(at++);
  return out;
}

// Channel normalization applied after augmentation, before the encoder.
inline Image normalize_channels(const Image& in,
                                const std::array<double, 3>& mean,
                                const std::array<double, 3>& sd) {
  Image out = in;
  for (int c = 0; c < 3; ++c) {
    if (sd[static_cast<std::size_t>(c)] <= 0.0)
      throw DataError("normalize_channels: sd must be positive");
    out.chan[static_cast<std::size_t>(c)] =
        (in.chan[static_cast<std::size_t>(c)].array() -
         mean[static_cast<std::size_t>(c)]) /
        sd[static_cast<std::size_t>(c)];
  }
  return out;
}

}  // namespace seal::img
