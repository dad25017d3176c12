#pragma once

#include <limits>
#include <string>

#include "convlut/image.hpp"

namespace convlut {

/// 10 log10(255^2 / MSE) over all channels. Identical images give +infinity.
double psnr(const Image& a, const Image& b);

/// Mean SSIM on luma: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, L = 255, valid positions only. Throws std::invalid_argument if
/// either side is smaller than the window.
double ssim(const Image& a, const Image& b);

inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

}  // namespace convlut
