#include "convlut/temporal.hpp"

#include <algorithm>
#include <stdexcept>

#include "convlut/common.hpp"

namespace convlut {

nn::Net<float> make_temporal_net(int channels, int scale, std::uint64_t seed, int hidden, float slope) {
    using namespace nn;
    if (channels < 1 || scale < 1) throw std::invalid_argument("make_temporal_net: bad channel count or scale");
    Net<float> net({conv3x3<float>(2 * channels + 2, hidden), leaky_relu<float>(slope), conv3x3<float>(hidden, hidden),
                    leaky_relu<float>(slope), conv3x3<float>(hidden, hidden), leaky_relu<float>(slope),
                    conv3x3<float>(hidden, scale * scale * channels), pixel_shuffle<float>(scale)});
    kaiming_init(net, seed, slope);
    auto& last = net.layers[6];
    std::fill(last.weight.begin(), last.weight.end(), 0.0f);
    return net;
}

nn::Tensor<float> temporal_input(const Image& cur, const Image* prev, const MotionField* motion, int radius) {
    if (cur.empty()) throw std::invalid_argument("temporal_input: empty frame");
    if (radius < 1) throw std::invalid_argument("temporal_input: radius must be positive");
    if (prev != nullptr && (prev->width != cur.width || prev->height != cur.height || prev->channels != cur.channels))
        throw std::invalid_argument("temporal_input: previous frame size mismatch");
    if (motion != nullptr && (motion->width != cur.width || motion->height != cur.height))
        throw std::invalid_argument("temporal_input: motion field size mismatch");
    const Image& p = prev != nullptr ? *prev : cur;
    const int C = cur.channels;
    nn::Tensor<float> x(1, 2 * C + 2, cur.height, cur.width);
    const std::size_t P = cur.plane_size();
    for (std::size_t i = 0; i < cur.data.size(); ++i) {
        x.v[i] = static_cast<float>(cur.data[i]) / 255.0f;
        x.v[C * P + i] = static_cast<float>(p.data[i]) / 255.0f;
    }
    if (motion != nullptr) {
        const float inv = 1.0f / static_cast<float>(radius);
        for (std::size_t i = 0; i < P; ++i) {
            x.v[2 * C * P + i] = static_cast<float>(motion->dx[i]) * inv;
            x.v[(2 * C + 1) * P + i] = static_cast<float>(motion->dy[i]) * inv;
        }
    }
    return x;
}

nn::Tensor<float> temporal_branch(const nn::Net<float>& net, const Image& cur, const Image* prev,
                                  const MotionField* motion, int radius) {
    if (cur.channels > 1 && net.input_channels() == 4) {
        // Luma-trained net: run it on every channel with the shared motion.
        nn::Tensor<float> out;
        for (int c = 0; c < cur.channels; ++c) {
            const Image cc = cur.channel(c);
            const Image pc = prev != nullptr ? prev->channel(c) : cc;
            const nn::Tensor<float> one = temporal_branch(net, cc, prev != nullptr ? &pc : nullptr, motion, radius);
            if (c == 0) out = nn::Tensor<float>(1, cur.channels, one.h, one.w);
            std::copy(one.v.begin(), one.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(c * one.plane()));
        }
        return out;
    }
    nn::Tensor<float> out = net.forward(temporal_input(cur, prev, motion, radius));
    if (out.c != cur.channels) throw std::invalid_argument("temporal net emits the wrong channel count");
    for (auto& v : out.v) v *= 255.0f;
    return out;
}

Image combine(const Image& spatial, const nn::Tensor<float>& residual) {
    if (residual.n != 1 || residual.c != spatial.channels || residual.h != spatial.height || residual.w != spatial.width)
        throw std::invalid_argument("combine: residual does not match the spatial output");
    Image out(spatial.width, spatial.height, spatial.channels);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = clamp_u8(static_cast<float>(spatial.data[i]) + residual.v[i]);
    return out;
}

}  // namespace convlut
