#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "convlut/common.hpp"
#include "convlut/image.hpp"
#include "convlut/lut_core.hpp"

namespace convlut::testing {

inline LutTable random_lut(int interval, int scale, std::uint64_t seed) {
    LutTable lut(interval, scale);
    Rng rng(seed);
    for (auto& v : lut.values()) v = static_cast<std::uint8_t>(rng.below(256));
    return lut;
}

inline Image random_image(int w, int h, int c, std::uint64_t seed) {
    Image img(w, h, c);
    Rng rng(seed);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.below(256));
    return img;
}

/// Relative disagreement between an analytic and a numeric derivative.
/// Values that are both essentially zero count as agreeing.
inline double grad_rel_error(double analytic, double numeric, double floor = 1e-7) {
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (scale < floor) return 0.0;
    return std::abs(analytic - numeric) / scale;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("convlut_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace convlut::testing
