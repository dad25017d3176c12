#pragma once

// Temporal branch: a small conv net over the current frame, the previous
// frame and the motion field, producing an HR residual added to the spatial
// branch.

#include <cstdint>
#include <vector>

#include "convlut/image.hpp"
#include "convlut/nnet.hpp"

namespace convlut {

/// Per-pixel motion at LR resolution, expanded from per-block vectors.
/// Convention: cur(x, y) ~ prev(x - dx, y - dy).
struct MotionField {
    int width = 0, height = 0;
    std::vector<int> dx, dy;

    MotionField() = default;
    MotionField(int w, int h) : width(w), height(h), dx(static_cast<std::size_t>(w) * h, 0), dy(dx) {}

    std::size_t index(int y, int x) const noexcept { return static_cast<std::size_t>(y) * width + x; }
    bool operator==(const MotionField&) const = default;
};

/// conv(2C+2 -> hidden), three more convs with leaky ReLU between them, the
/// last one emitting scale^2 * C channels, then pixel_shuffle(scale). The
/// last conv starts at zero so an untrained branch adds nothing.
nn::Net<float> make_temporal_net(int channels, int scale, std::uint64_t seed, int hidden = 64, float slope = 0.1f);

/// Input tensor [cur, prev, dx, dy]: frames divided by 255, motion by
/// `radius`. A missing previous frame is replaced by `cur` and a missing
/// motion field by zeros.
nn::Tensor<float> temporal_input(const Image& cur, const Image* prev, const MotionField* motion, int radius);

/// HR residual in gray levels, shape (1, C, r*h, r*w). A net built for one
/// channel is applied to each channel of a colour frame.
nn::Tensor<float> temporal_branch(const nn::Net<float>& net, const Image& cur, const Image* prev,
                                  const MotionField* motion, int radius);

/// spatial + residual, rounded half away from zero and clamped.
Image combine(const Image& spatial, const nn::Tensor<float>& residual);

}  // namespace convlut
