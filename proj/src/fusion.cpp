#include "convlut/fusion.hpp"

#include <stdexcept>

#include "convlut/common.hpp"
#include "convlut/detail/interp_kernels.hpp"

namespace convlut {

WeightMap::WeightMap(int width_, int height_, int experts_, float fill)
    : width(width_), height(height_), experts(experts_) {
    if (width_ < 0 || height_ < 0 || experts_ < 1) throw std::invalid_argument("invalid weight map geometry");
    w.assign(static_cast<std::size_t>(width_) * height_ * experts_, fill);
}

WeightMap uniform_weights(int width, int height, int experts) {
    return WeightMap(width, height, experts, 1.0f / static_cast<float>(experts));
}

nn::Net<float> make_predictor(int experts, std::uint64_t seed, int hidden, float slope, bool softmax) {
    using namespace nn;
    Net<float> net;
    int in = 1;
    for (int i = 0; i < 3; ++i) {
        net.layers.push_back(conv3x3<float>(in, hidden));
        net.layers.push_back(instance_norm<float>(hidden));
        net.layers.push_back(leaky_relu<float>(slope));
        in = hidden;
    }
    net.layers.push_back(conv3x3<float>(hidden, experts));
    if (softmax) net.layers.push_back(softmax_channels<float>());
    kaiming_init(net, seed, slope);
    return net;
}

nn::Tensor<float> predictor_input(const Image& frame) {
    const Image luma = to_luma(frame);
    nn::Tensor<float> x(1, 1, luma.height, luma.width);
    for (std::size_t i = 0; i < luma.data.size(); ++i) x.v[i] = static_cast<float>(luma.data[i]) / 255.0f;
    return x;
}

WeightMap to_weight_map(const nn::Tensor<float>& out) {
    if (out.n != 1) throw std::invalid_argument("to_weight_map expects a single sample");
    WeightMap wm(out.w, out.h, out.c);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
            auto px = wm.at(y, x);
            for (int k = 0; k < out.c; ++k) px[static_cast<std::size_t>(k)] = out.at(0, k, y, x);
        }
    return wm;
}

WeightMap predict_weights(const nn::Net<float>& predictor, const Image& frame, int experts) {
    if (frame.empty()) throw std::invalid_argument("predict_weights: empty frame");
    const int produced = predictor.output_channels(1);
    if (produced != experts)
        throw std::invalid_argument("predictor emits " + std::to_string(produced) + " channels but the bank has " +
                                    std::to_string(experts) + " experts");
    return to_weight_map(predictor.forward(predictor_input(frame)));
}

namespace {

void check_inputs(const ExpertBank& bank, std::span<const float> weights, const OrderTable* order) {
    if (bank.luts.empty()) throw std::invalid_argument("empty expert bank");
    if (weights.size() != bank.luts.size())
        throw std::invalid_argument("expected " + std::to_string(bank.luts.size()) + " weights, got " +
                                    std::to_string(weights.size()));
    if (order != nullptr && order->interval() != bank.interval())
        throw std::invalid_argument("order table interval does not match the bank");
}

template <class Ops>
void fused_kernel(const ExpertBank& bank, std::span<const float> weights, Pixel4 p, const OrderTable& order,
                  std::uint8_t* out, std::ptrdiff_t stride, Ops& ops) {
    const LutTable& first = bank.luts.front();
    const int shift = order.shift();
    const int s = 1 << shift;
    int h[4], l[4];
    detail::split(p, shift, s - 1, h, l);
    const OrderEntry& e = order[order.index(l[0], l[1], l[2], l[3])];
    const float w[5] = {static_cast<float>(s - e.sorted[0]), static_cast<float>(e.sorted[0] - e.sorted[1]),
                        static_cast<float>(e.sorted[1] - e.sorted[2]), static_cast<float>(e.sorted[2] - e.sorted[3]),
                        static_cast<float>(e.sorted[3])};
    const auto& co = first.corner_offsets();
    const std::size_t base = first.offset(h[0], h[1], h[2], h[3]);
    const std::size_t vo[5] = {base, base + co[e.masks[0]], base + co[e.masks[1]], base + co[e.masks[2]],
                               base + co[15]};
    const float inv_s = 1.0f / static_cast<float>(s);
    const int r = first.scale();
    const std::size_t n = bank.luts.size();
    for (int a = 0; a < r; ++a)
        for (int b = 0; b < r; ++b) {
            const std::size_t k = static_cast<std::size_t>(a * r + b);
            float fv[5] = {0, 0, 0, 0, 0};
            for (std::size_t x = 0; x < n; ++x) {
                const std::uint8_t* t = bank.luts[x].values().data();
                const float wx = weights[x];
                for (int j = 0; j < 5; ++j) fv[j] += ops.mul(wx, static_cast<float>(ops.fetch(t + vo[j] + k)));
            }
            float acc = ops.mul(w[0], fv[0]);
            for (int j = 1; j < 5; ++j) acc += ops.mul(w[j], fv[j]);
            out[a * stride + b] = clamp_u8(acc * inv_s);
        }
}

template <class Ops>
void fused_frame(const ExpertBank& bank, const OrderTable& order, const WeightMap& weights, const Image& frame,
                 Image& out, int row_begin, int row_end, Ops& ops) {
    const int r = bank.scale();
    for (int c = 0; c < frame.channels; ++c)
        for (int y = row_begin; y < row_end; ++y)
            for (int x = 0; x < frame.width; ++x)
                fused_kernel(bank, weights.at(y, x), query_window(frame, c, y, x), order,
                             &out.at(c, r * y, r * x), out.width, ops);
}

void check_frame(const ExpertBank& bank, const OrderTable& order, const WeightMap& weights, const Image& frame) {
    if (frame.empty()) throw std::invalid_argument("spatial_branch: empty frame");
    bank.validate();
    if (weights.width != frame.width || weights.height != frame.height)
        throw std::invalid_argument("weight map size does not match the frame");
    if (weights.experts != static_cast<int>(bank.size()))
        throw std::invalid_argument("weight map has " + std::to_string(weights.experts) + " experts, bank has " +
                                    std::to_string(bank.size()));
    if (order.interval() != bank.interval()) throw std::invalid_argument("order table interval does not match the bank");
}

}  // namespace

FusedCell fuse_cell(const ExpertBank& bank, std::span<const float> weights, Pixel4 p) {
    check_inputs(bank, weights, nullptr);
    const LutTable& first = bank.luts.front();
    const int shift = log2_exact(first.interval());
    int h[4], l[4];
    detail::split(p, shift, first.interval() - 1, h, l);
    const std::size_t base = first.offset(h[0], h[1], h[2], h[3]);
    const int rr = first.patch_size();
    FusedCell cell{first.scale(), std::vector<float>(static_cast<std::size_t>(16 * rr), 0.0f)};
    for (int m = 0; m < 16; ++m)
        for (int k = 0; k < rr; ++k) {
            float acc = 0.0f;
            for (std::size_t x = 0; x < bank.luts.size(); ++x)
                acc += weights[x] * static_cast<float>(bank.luts[x].values()[base + first.corner_offsets()[static_cast<std::size_t>(m)] +
                                                                             static_cast<std::size_t>(k)]);
            cell.v[static_cast<std::size_t>(m * rr + k)] = acc;
        }
    return cell;
}

void fused_query(const ExpertBank& bank, std::span<const float> weights, Pixel4 p, const OrderTable& order,
                 std::uint8_t* out, std::ptrdiff_t stride) {
    check_inputs(bank, weights, &order);
    detail::PlainOps ops;
    fused_kernel(bank, weights, p, order, out, stride, ops);
}

Patch fused_query(const ExpertBank& bank, std::span<const float> weights, Pixel4 p, const OrderTable& order) {
    check_inputs(bank, weights, &order);
    Patch out(static_cast<std::size_t>(bank.luts.front().patch_size()));
    detail::PlainOps ops;
    fused_kernel(bank, weights, p, order, out.data(), bank.scale(), ops);
    return out;
}

OpCounts count_fused_ops(const ExpertBank& bank, std::span<const float> weights, Pixel4 p, const OrderTable& order) {
    check_inputs(bank, weights, &order);
    OpCounts counts;
    detail::CountingOps ops{&counts};
    Patch out(static_cast<std::size_t>(bank.luts.front().patch_size()));
    fused_kernel(bank, weights, p, order, out.data(), bank.scale(), ops);
    return counts;
}

void interp_unrounded(const LutTable& lut, const OrderTable& order, Pixel4 p, std::span<float> out) {
    if (order.interval() != lut.interval()) throw std::invalid_argument("order table interval does not match the LUT");
    if (out.size() != static_cast<std::size_t>(lut.patch_size())) throw std::invalid_argument("output size mismatch");
    const int shift = order.shift();
    const int s = 1 << shift;
    int h[4], l[4];
    detail::split(p, shift, s - 1, h, l);
    const OrderEntry& e = order[order.index(l[0], l[1], l[2], l[3])];
    const int w[5] = {s - e.sorted[0], e.sorted[0] - e.sorted[1], e.sorted[1] - e.sorted[2], e.sorted[2] - e.sorted[3],
                      e.sorted[3]};
    const auto& co = lut.corner_offsets();
    const std::uint8_t* v1 = lut.entry(h[0], h[1], h[2], h[3]);
    const std::uint8_t* v[5] = {v1, v1 + co[e.masks[0]], v1 + co[e.masks[1]], v1 + co[e.masks[2]], v1 + co[15]};
    for (std::size_t k = 0; k < out.size(); ++k) {
        int acc = 0;
        for (int j = 0; j < 5; ++j) acc += w[j] * v[j][k];
        out[k] = static_cast<float>(acc) / static_cast<float>(s);
    }
}

Image spatial_branch(const ExpertBank& bank, const OrderTable& order, const WeightMap& weights, const Image& frame,
                     int threads) {
    check_frame(bank, order, weights, frame);
    const int r = bank.scale();
    Image out(frame.width * r, frame.height * r, frame.channels);
    parallel_for(frame.height, threads, [&](int b, int e) {
        detail::PlainOps ops;
        fused_frame(bank, order, weights, frame, out, b, e, ops);
    });
    return out;
}

Image spatial_branch(const ExpertBank& bank, const OrderTable& order, const nn::Net<float>& predictor,
                     const Image& frame, int threads) {
    return spatial_branch(bank, order, predict_weights(predictor, frame, static_cast<int>(bank.size())), frame, threads);
}

OpCounts count_spatial_ops(const ExpertBank& bank, const OrderTable& order, const WeightMap& weights, const Image& frame) {
    check_frame(bank, order, weights, frame);
    Image out(frame.width * bank.scale(), frame.height * bank.scale(), frame.channels);
    OpCounts counts;
    detail::CountingOps ops{&counts};
    fused_frame(bank, order, weights, frame, out, 0, frame.height, ops);
    return counts;
}

namespace {

template <class Ops>
void single_rows(const LutTable& lut, InterpKind kind, const OrderTable* order, const Image& frame, Image& out,
                 int row_begin, int row_end, Ops& ops) {
    const int r = lut.scale();
    auto each = [&](auto&& query) {
        for (int c = 0; c < frame.channels; ++c)
            for (int y = row_begin; y < row_end; ++y) {
                std::uint8_t* dst = &out.at(c, r * y, 0);
                for (int x = 0; x < frame.width; ++x) query(query_window(frame, c, y, x), dst + r * x);
            }
    };
    switch (kind) {
        case InterpKind::reference:
            each([&](Pixel4 p, std::uint8_t* dst) { detail::tetra_reference(lut, p, dst, out.width, ops); });
            break;
        case InterpKind::order_table: {
            const detail::FastGeometry g = detail::fast_geometry(lut, *order);
            const std::ptrdiff_t stride = out.width;
            each([&](Pixel4 p, std::uint8_t* dst) { detail::tetra_fast(g, p, dst, stride, ops); });
            break;
        }
        case InterpKind::tetralinear:
            each([&](Pixel4 p, std::uint8_t* dst) { detail::tetralinear(lut, p, dst, out.width, ops); });
            break;
    }
}

void check_single(const LutTable& lut, InterpKind kind, const OrderTable* order, const Image& frame) {
    if (frame.empty()) throw std::invalid_argument("upscale: empty frame");
    if (kind == InterpKind::order_table) {
        if (order == nullptr) throw std::invalid_argument("order table required");
        if (order->interval() != lut.interval()) throw std::invalid_argument("order table interval does not match the LUT");
    }
}

}  // namespace

Image upscale_single(const LutTable& lut, InterpKind kind, const OrderTable* order, const Image& frame, int threads) {
    check_single(lut, kind, order, frame);
    const int r = lut.scale();
    Image out(frame.width * r, frame.height * r, frame.channels);
    parallel_for(frame.height, threads, [&](int b, int e) {
        detail::PlainOps ops;
        single_rows(lut, kind, order, frame, out, b, e, ops);
    });
    return out;
}

Image srlut_rotation_ensemble(const LutTable& lut, const OrderTable& order, const Image& frame, int threads) {
    check_single(lut, InterpKind::order_table, &order, frame);
    const int r = lut.scale();
    std::vector<int> sum(static_cast<std::size_t>(frame.width) * r * frame.height * r * frame.channels, 0);
    for (int k = 0; k < 4; ++k) {
        const Image rotated = rotate90(frame, k);
        const Image back = rotate90(upscale_single(lut, InterpKind::order_table, &order, rotated, threads), -k);
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += back.data[i];
    }
    Image out(frame.width * r, frame.height * r, frame.channels);
    for (std::size_t i = 0; i < sum.size(); ++i) out.data[i] = static_cast<std::uint8_t>((sum[i] + 2) / 4);
    return out;
}

OpCounts count_rotation_ensemble_ops(const LutTable& lut, const OrderTable& order, const Image& frame) {
    check_single(lut, InterpKind::order_table, &order, frame);
    OpCounts counts;
    detail::CountingOps ops{&counts};
    for (int k = 0; k < 4; ++k) {
        const Image rotated = rotate90(frame, k);
        Image out(rotated.width * lut.scale(), rotated.height * lut.scale(), rotated.channels);
        single_rows(lut, InterpKind::order_table, &order, rotated, out, 0, rotated.height, ops);
    }
    return counts;
}

}  // namespace convlut
