#pragma once

// Spatial branch: per-pixel mixture of expert LUTs and full-frame LUT
// super-resolution.

#include <cstdint>
#include <span>
#include <vector>

#include "convlut/image.hpp"
#include "convlut/interp.hpp"
#include "convlut/lut_core.hpp"
#include "convlut/nnet.hpp"

namespace convlut {

/// Per-pixel expert weights, stored pixel-major as (h, w, n).
struct WeightMap {
    int width = 0, height = 0, experts = 0;
    std::vector<float> w;

    WeightMap() = default;
    WeightMap(int width_, int height_, int experts_, float fill = 0.0f);

    std::span<const float> at(int y, int x) const noexcept {
        return {w.data() + (static_cast<std::size_t>(y) * width + x) * experts, static_cast<std::size_t>(experts)};
    }
    std::span<float> at(int y, int x) noexcept {
        return {w.data() + (static_cast<std::size_t>(y) * width + x) * experts, static_cast<std::size_t>(experts)};
    }
    bool operator==(const WeightMap&) const = default;
};

WeightMap uniform_weights(int width, int height, int experts);

/// 4 x (conv3x3 -> ...) predictor: three conv/instance-norm/leaky blocks of
/// `hidden` channels, a final conv to `experts` channels and, optionally, a
/// channel softmax. Weights are Kaiming-initialised from `seed`.
nn::Net<float> make_predictor(int experts, std::uint64_t seed, int hidden = 64, float slope = 0.1f, bool softmax = true);

/// Predictor input: luma / 255 as a (1, 1, h, w) tensor.
nn::Tensor<float> predictor_input(const Image& frame);

/// Runs the predictor on the luma of `frame`. Throws std::invalid_argument
/// if the predictor does not emit `experts` channels.
WeightMap predict_weights(const nn::Net<float>& predictor, const Image& frame, int experts);
WeightMap to_weight_map(const nn::Tensor<float>& out);

/// The 16 cell vertices blended across experts: vertex m (bit 3 = x ...
/// bit 0 = u), subpixel k at index m * r * r + k.
struct FusedCell {
    int scale = 0;
    std::vector<float> v;
};
FusedCell fuse_cell(const ExpertBank& bank, std::span<const float> weights, Pixel4 p);

/// Blends only the 5 simplex vertices across experts, interpolates in float,
/// rounds half away from zero and clamps.
void fused_query(const ExpertBank& bank, std::span<const float> weights, Pixel4 p, const OrderTable& order,
                 std::uint8_t* out, std::ptrdiff_t stride);
Patch fused_query(const ExpertBank& bank, std::span<const float> weights, Pixel4 p, const OrderTable& order);
OpCounts count_fused_ops(const ExpertBank& bank, std::span<const float> weights, Pixel4 p, const OrderTable& order);

/// Unrounded single-LUT tetrahedral interpolation (r*r values).
void interp_unrounded(const LutTable& lut, const OrderTable& order, Pixel4 p, std::span<float> out);

/// Query window of pixel (y, x) with replicate padding at the bottom/right.
inline Pixel4 query_window(const Image& img, int c, int y, int x) noexcept {
    const int x1 = x + 1 < img.width ? x + 1 : x;
    const int y1 = y + 1 < img.height ? y + 1 : y;
    return {img.at(c, y, x), img.at(c, y, x1), img.at(c, y1, x), img.at(c, y1, x1)};
}

/// Fused full-frame upscale with a given weight map. Colour frames are
/// processed per channel with the shared map.
Image spatial_branch(const ExpertBank& bank, const OrderTable& order, const WeightMap& weights, const Image& frame,
                     int threads = 1);
/// Same, with weights predicted from the frame.
Image spatial_branch(const ExpertBank& bank, const OrderTable& order, const nn::Net<float>& predictor,
                     const Image& frame, int threads = 1);

/// Single-LUT upscale through one of the integer kernels. `order` is needed
/// for InterpKind::order_table only.
Image upscale_single(const LutTable& lut, InterpKind kind, const OrderTable* order, const Image& frame, int threads = 1);

/// Rotation-ensemble baseline: four quarter-turn passes of one LUT,
/// averaged with (sum + 2) / 4.
Image srlut_rotation_ensemble(const LutTable& lut, const OrderTable& order, const Image& frame, int threads = 1);

/// Vertex fetches and multiplications summed over a whole frame.
OpCounts count_spatial_ops(const ExpertBank& bank, const OrderTable& order, const WeightMap& weights, const Image& frame);
OpCounts count_rotation_ensemble_ops(const LutTable& lut, const OrderTable& order, const Image& frame);

}  // namespace convlut
