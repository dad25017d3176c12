#include "convlut/nnet.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include "convlut/common.hpp"

namespace convlut::nn {

const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::conv3x3: return "conv3x3";
        case LayerKind::instance_norm: return "instance_norm";
        case LayerKind::leaky_relu: return "leaky_relu";
        case LayerKind::pixel_shuffle: return "pixel_shuffle";
        case LayerKind::softmax_channels: return "softmax_channels";
    }
    return "?";
}

template <class T>
Layer<T> conv3x3(int in, int out) {
    if (in <= 0 || out <= 0) throw std::invalid_argument("conv3x3: channel counts must be positive");
    Layer<T> l;
    l.kind = LayerKind::conv3x3;
    l.in = in;
    l.out = out;
    l.weight.assign(static_cast<std::size_t>(out) * in * 9, T(0));
    l.bias.assign(static_cast<std::size_t>(out), T(0));
    return l;
}

template <class T>
Layer<T> instance_norm(int channels) {
    if (channels <= 0) throw std::invalid_argument("instance_norm: channel count must be positive");
    Layer<T> l;
    l.kind = LayerKind::instance_norm;
    l.in = l.out = channels;
    l.weight.assign(static_cast<std::size_t>(channels), T(1));
    l.bias.assign(static_cast<std::size_t>(channels), T(0));
    return l;
}

template <class T>
Layer<T> leaky_relu(T slope) {
    Layer<T> l;
    l.kind = LayerKind::leaky_relu;
    l.slope = slope;
    return l;
}

template <class T>
Layer<T> pixel_shuffle(int factor) {
    if (factor < 1) throw std::invalid_argument("pixel_shuffle: factor must be positive");
    Layer<T> l;
    l.kind = LayerKind::pixel_shuffle;
    l.factor = factor;
    return l;
}

template <class T>
Layer<T> softmax_channels() {
    Layer<T> l;
    l.kind = LayerKind::softmax_channels;
    return l;
}

namespace {

constexpr double kNormEps = 1e-5;
// im2col scratch is processed in row bands of at most this many elements.
constexpr std::size_t kColBudget = std::size_t{1} << 21;

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using StridedMap = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;

[[noreturn]] void shape_error(std::size_t index, LayerKind kind, const std::string& what) {
    throw std::invalid_argument("layer " + std::to_string(index) + " (" + to_string(kind) + "): " + what);
}

int band_rows(int channels, int width, int height) {
    const std::size_t per_row = static_cast<std::size_t>(channels) * 9 * static_cast<std::size_t>(width);
    return static_cast<int>(std::clamp<std::size_t>(kColBudget / std::max<std::size_t>(per_row, 1), 1,
                                                    static_cast<std::size_t>(height)));
}

template <class T>
void im2col(const Tensor<T>& x, int b, int y0, int rows, Mat<T>& col) {
    const int C = x.c, H = x.h, W = x.w;
    col.resize(C * 9, rows * W);
    for (int ci = 0; ci < C; ++ci)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                T* dst = col.row(ci * 9 + ky * 3 + kx).data();
                for (int yy = 0; yy < rows; ++yy) {
                    const int sy = y0 + yy + ky - 1;
                    T* d = dst + static_cast<std::size_t>(yy) * W;
                    if (sy < 0 || sy >= H) {
                        std::fill(d, d + W, T(0));
                        continue;
                    }
                    const T* src = &x.v[x.index(b, ci, sy, 0)];
                    for (int xx = 0; xx < W; ++xx) {
                        const int sx = xx + kx - 1;
                        d[xx] = (sx < 0 || sx >= W) ? T(0) : src[sx];
                    }
                }
            }
}

template <class T>
void col2im_add(const Mat<T>& col, int b, int y0, int rows, Tensor<T>& dx) {
    const int C = dx.c, H = dx.h, W = dx.w;
    for (int ci = 0; ci < C; ++ci)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const T* src = col.row(ci * 9 + ky * 3 + kx).data();
                for (int yy = 0; yy < rows; ++yy) {
                    const int sy = y0 + yy + ky - 1;
                    if (sy < 0 || sy >= H) continue;
                    T* d = &dx.v[dx.index(b, ci, sy, 0)];
                    const T* s = src + static_cast<std::size_t>(yy) * W;
                    for (int xx = 0; xx < W; ++xx) {
                        const int sx = xx + kx - 1;
                        if (sx >= 0 && sx < W) d[sx] += s[xx];
                    }
                }
            }
}

template <class T>
Tensor<T> conv_forward(const Layer<T>& l, const Tensor<T>& x) {
    Tensor<T> y(x.n, l.out, x.h, x.w);
    const Eigen::Map<const Mat<T>> wm(l.weight.data(), l.out, l.in * 9);
    const int R = band_rows(x.c, x.w, x.h);
    const Eigen::Index stride = static_cast<Eigen::Index>(x.plane());
    Mat<T> col;
    for (int b = 0; b < x.n; ++b)
        for (int y0 = 0; y0 < x.h; y0 += R) {
            const int rows = std::min(R, x.h - y0);
            im2col(x, b, y0, rows, col);
            StridedMap<T> out(&y.v[y.index(b, 0, y0, 0)], l.out, rows * x.w, Eigen::OuterStride<>(stride));
            out.noalias() = wm * col;
            for (int o = 0; o < l.out; ++o) out.row(o).array() += l.bias[static_cast<std::size_t>(o)];
        }
    return y;
}

template <class T>
Tensor<T> conv_backward(const Layer<T>& l, const Tensor<T>& x, const Tensor<T>& gy, LayerGrad<T>& g) {
    Tensor<T> dx(x.n, x.c, x.h, x.w);
    const Eigen::Map<const Mat<T>> wm(l.weight.data(), l.out, l.in * 9);
    Eigen::Map<Mat<T>> dw(g.weight.data(), l.out, l.in * 9);
    const int R = band_rows(x.c, x.w, x.h);
    const Eigen::Index stride = static_cast<Eigen::Index>(x.plane());
    Mat<T> col, dcol;
    for (int b = 0; b < x.n; ++b)
        for (int y0 = 0; y0 < x.h; y0 += R) {
            const int rows = std::min(R, x.h - y0);
            im2col(x, b, y0, rows, col);
            ConstStridedMap<T> go(&gy.v[gy.index(b, 0, y0, 0)], l.out, rows * x.w, Eigen::OuterStride<>(stride));
            dw.noalias() += go * col.transpose();
            for (int o = 0; o < l.out; ++o) g.bias[static_cast<std::size_t>(o)] += go.row(o).sum();
            dcol.noalias() = wm.transpose() * go;
            col2im_add(dcol, b, y0, rows, dx);
        }
    return dx;
}

template <class T>
Tensor<T> norm_forward(const Layer<T>& l, const Tensor<T>& x) {
    Tensor<T> y(x.n, x.c, x.h, x.w);
    const std::size_t N = x.plane();
    for (int b = 0; b < x.n; ++b)
        for (int ch = 0; ch < x.c; ++ch) {
            const T* src = &x.v[x.index(b, ch, 0, 0)];
            T* dst = &y.v[y.index(b, ch, 0, 0)];
            double mean = 0.0;
            for (std::size_t i = 0; i < N; ++i) mean += src[i];
            mean /= static_cast<double>(N);
            double var = 0.0;
            for (std::size_t i = 0; i < N; ++i) var += (src[i] - mean) * (src[i] - mean);
            var /= static_cast<double>(N);
            const double istd = 1.0 / std::sqrt(var + kNormEps);
            const double gm = l.weight[static_cast<std::size_t>(ch)], bt = l.bias[static_cast<std::size_t>(ch)];
            for (std::size_t i = 0; i < N; ++i) dst[i] = static_cast<T>(gm * (src[i] - mean) * istd + bt);
        }
    return y;
}

template <class T>
Tensor<T> norm_backward(const Layer<T>& l, const Tensor<T>& x, const Tensor<T>& gy, LayerGrad<T>& g) {
    Tensor<T> dx(x.n, x.c, x.h, x.w);
    const std::size_t N = x.plane();
    std::vector<double> xhat(N);
    for (int b = 0; b < x.n; ++b)
        for (int ch = 0; ch < x.c; ++ch) {
            const T* src = &x.v[x.index(b, ch, 0, 0)];
            const T* go = &gy.v[gy.index(b, ch, 0, 0)];
            T* d = &dx.v[dx.index(b, ch, 0, 0)];
            double mean = 0.0;
            for (std::size_t i = 0; i < N; ++i) mean += src[i];
            mean /= static_cast<double>(N);
            double var = 0.0;
            for (std::size_t i = 0; i < N; ++i) var += (src[i] - mean) * (src[i] - mean);
            var /= static_cast<double>(N);
            const double istd = 1.0 / std::sqrt(var + kNormEps);
            const double gm = l.weight[static_cast<std::size_t>(ch)];
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t i = 0; i < N; ++i) {
                xhat[i] = (src[i] - mean) * istd;
                sum_g += go[i];
                sum_gx += go[i] * xhat[i];
            }
            g.weight[static_cast<std::size_t>(ch)] += static_cast<T>(sum_gx);
            g.bias[static_cast<std::size_t>(ch)] += static_cast<T>(sum_g);
            const double n = static_cast<double>(N);
            for (std::size_t i = 0; i < N; ++i)
                d[i] = static_cast<T>(gm * istd / n * (n * go[i] - sum_g - xhat[i] * sum_gx));
        }
    return dx;
}

template <class T>
Tensor<T> softmax_forward(const Tensor<T>& x) {
    Tensor<T> y(x.n, x.c, x.h, x.w);
    const std::size_t P = x.plane();
    std::vector<double> e(static_cast<std::size_t>(x.c));
    for (int b = 0; b < x.n; ++b)
        for (std::size_t p = 0; p < P; ++p) {
            const std::size_t base = x.index(b, 0, 0, 0) + p;
            double mx = x.v[base];
            for (int ch = 1; ch < x.c; ++ch) mx = std::max<double>(mx, x.v[base + ch * P]);
            double sum = 0.0;
            for (int ch = 0; ch < x.c; ++ch) sum += (e[static_cast<std::size_t>(ch)] = std::exp(x.v[base + ch * P] - mx));
            for (int ch = 0; ch < x.c; ++ch) y.v[base + ch * P] = static_cast<T>(e[static_cast<std::size_t>(ch)] / sum);
        }
    return y;
}

template <class T>
Tensor<T> softmax_backward(const Tensor<T>& x, const Tensor<T>& gy) {
    const Tensor<T> y = softmax_forward(x);
    Tensor<T> dx(x.n, x.c, x.h, x.w);
    const std::size_t P = x.plane();
    for (int b = 0; b < x.n; ++b)
        for (std::size_t p = 0; p < P; ++p) {
            const std::size_t base = x.index(b, 0, 0, 0) + p;
            double dot = 0.0;
            for (int ch = 0; ch < x.c; ++ch) dot += static_cast<double>(gy.v[base + ch * P]) * y.v[base + ch * P];
            for (int ch = 0; ch < x.c; ++ch)
                dx.v[base + ch * P] = static_cast<T>(y.v[base + ch * P] * (gy.v[base + ch * P] - dot));
        }
    return dx;
}

template <class T>
Tensor<T> shuffle_forward(const Tensor<T>& x, int r) {
    Tensor<T> y(x.n, x.c / (r * r), x.h * r, x.w * r);
    for (int b = 0; b < y.n; ++b)
        for (int oc = 0; oc < y.c; ++oc)
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < r; ++j)
                    for (int yy = 0; yy < x.h; ++yy)
                        for (int xx = 0; xx < x.w; ++xx)
                            y.at(b, oc, yy * r + i, xx * r + j) = x.at(b, oc * r * r + i * r + j, yy, xx);
    return y;
}

template <class T>
Tensor<T> apply(const Layer<T>& l, std::size_t index, const Tensor<T>& x) {
    switch (l.kind) {
        case LayerKind::conv3x3:
            if (x.c != l.in) shape_error(index, l.kind, "expected " + std::to_string(l.in) + " input channels, got " + std::to_string(x.c));
            return conv_forward(l, x);
        case LayerKind::instance_norm:
            if (x.c != l.in) shape_error(index, l.kind, "expected " + std::to_string(l.in) + " channels, got " + std::to_string(x.c));
            return norm_forward(l, x);
        case LayerKind::leaky_relu: {
            Tensor<T> y = x;
            for (auto& v : y.v) v = v > T(0) ? v : v * l.slope;
            return y;
        }
        case LayerKind::pixel_shuffle:
            if (x.c % (l.factor * l.factor) != 0)
                shape_error(index, l.kind, std::to_string(x.c) + " channels not divisible by factor^2");
            return shuffle_forward(x, l.factor);
        case LayerKind::softmax_channels:
            return softmax_forward(x);
    }
    shape_error(index, l.kind, "unknown layer kind");
}

}  // namespace

template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r) {
    if (r < 1 || x.h % r != 0 || x.w % r != 0) throw std::invalid_argument("pixel_unshuffle: size not divisible");
    Tensor<T> y(x.n, x.c * r * r, x.h / r, x.w / r);
    for (int b = 0; b < x.n; ++b)
        for (int oc = 0; oc < x.c; ++oc)
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < r; ++j)
                    for (int yy = 0; yy < y.h; ++yy)
                        for (int xx = 0; xx < y.w; ++xx)
                            y.at(b, oc * r * r + i * r + j, yy, xx) = x.at(b, oc, yy * r + i, xx * r + j);
    return y;
}

template <class T>
Tensor<T> Net<T>::forward(const Tensor<T>& x) const {
    if (x.size() == 0) throw std::invalid_argument("forward: empty input");
    Tensor<T> cur = x;
    for (std::size_t i = 0; i < layers.size(); ++i) cur = apply(layers[i], i, cur);
    return cur;
}

template <class T>
Tensor<T> Net<T>::forward(const Tensor<T>& x, Tape<T>& tape) const {
    if (x.size() == 0) throw std::invalid_argument("forward: empty input");
    tape.inputs.clear();
    tape.inputs.reserve(layers.size());
    Tensor<T> cur = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        tape.inputs.push_back(cur);
        cur = apply(layers[i], i, cur);
    }
    return cur;
}

template <class T>
std::vector<LayerGrad<T>> Net<T>::zero_grads() const {
    std::vector<LayerGrad<T>> g(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        g[i].weight.assign(layers[i].weight.size(), T(0));
        g[i].bias.assign(layers[i].bias.size(), T(0));
    }
    return g;
}

template <class T>
Tensor<T> Net<T>::backward(const Tape<T>& tape, const Tensor<T>& upstream, std::vector<LayerGrad<T>>& grads) const {
    if (tape.inputs.size() != layers.size() || tape.empty())
        throw std::logic_error("backward called without a recorded forward pass");
    if (grads.size() != layers.size()) grads = zero_grads();
    Tensor<T> g = upstream;
    for (std::size_t k = layers.size(); k-- > 0;) {
        const Layer<T>& l = layers[k];
        const Tensor<T>& x = tape.inputs[k];
        switch (l.kind) {
            case LayerKind::conv3x3: {
                if (g.n != x.n || g.c != l.out || g.h != x.h || g.w != x.w) shape_error(k, l.kind, "gradient shape mismatch");
                g = conv_backward(l, x, g, grads[k]);
                break;
            }
            case LayerKind::instance_norm:
                if (!g.same_shape(x)) shape_error(k, l.kind, "gradient shape mismatch");
                g = norm_backward(l, x, g, grads[k]);
                break;
            case LayerKind::leaky_relu:
                if (!g.same_shape(x)) shape_error(k, l.kind, "gradient shape mismatch");
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (!(x.v[i] > T(0))) g.v[i] *= l.slope;
                break;
            case LayerKind::pixel_shuffle:
                g = pixel_unshuffle(g, l.factor);
                if (!g.same_shape(x)) shape_error(k, l.kind, "gradient shape mismatch");
                break;
            case LayerKind::softmax_channels:
                if (!g.same_shape(x)) shape_error(k, l.kind, "gradient shape mismatch");
                g = softmax_backward(x, g);
                break;
        }
    }
    return g;
}

template <class T>
std::size_t Net<T>::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.parameter_count();
    return n;
}

template <class T>
int Net<T>::input_channels() const {
    for (const auto& l : layers)
        if (l.in > 0) return l.in;
    return 0;
}

template <class T>
int Net<T>::output_channels(int channels) const {
    for (const auto& l : layers) {
        if (l.kind == LayerKind::conv3x3) channels = l.out;
        if (l.kind == LayerKind::pixel_shuffle) channels /= l.factor * l.factor;
    }
    return channels;
}

template <class T>
std::vector<std::span<T>> Net<T>::parameters() {
    std::vector<std::span<T>> out;
    for (auto& l : layers) {
        if (!l.weight.empty()) out.emplace_back(l.weight);
        if (!l.bias.empty()) out.emplace_back(l.bias);
    }
    return out;
}

template <class T>
std::vector<std::span<T>> Net<T>::gradient_views(std::vector<LayerGrad<T>>& grads) {
    std::vector<std::span<T>> out;
    for (auto& g : grads) {
        if (!g.weight.empty()) out.emplace_back(g.weight);
        if (!g.bias.empty()) out.emplace_back(g.bias);
    }
    return out;
}

template <class T>
bool Net<T>::operator==(const Net& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto &a = layers[i], &b = o.layers[i];
        if (a.kind != b.kind || a.in != b.in || a.out != b.out || a.slope != b.slope || a.factor != b.factor ||
            a.weight != b.weight || a.bias != b.bias)
            return false;
    }
    return true;
}

template <class T>
void kaiming_init(Net<T>& net, std::uint64_t seed, double leaky_slope) {
    Rng rng(seed);
    const double gain = std::sqrt(2.0 / (1.0 + leaky_slope * leaky_slope));
    for (auto& l : net.layers) {
        if (l.kind == LayerKind::conv3x3) {
            const double bound = gain * std::sqrt(3.0 / (l.in * 9.0));
            for (auto& w : l.weight) w = static_cast<T>(rng.uniform(-bound, bound));
            std::fill(l.bias.begin(), l.bias.end(), T(0));
        } else if (l.kind == LayerKind::instance_norm) {
            std::fill(l.weight.begin(), l.weight.end(), T(1));
            std::fill(l.bias.begin(), l.bias.end(), T(0));
        }
    }
}

template <class T>
T charbonnier_loss(std::span<const T> pred, std::span<const T> target, T eps, std::span<T> grad) {
    if (pred.size() != target.size()) throw std::invalid_argument("charbonnier_loss: shape mismatch");
    if (!(eps > T(0))) throw std::invalid_argument("charbonnier_loss: eps must be positive");
    if (!grad.empty() && grad.size() != pred.size()) throw std::invalid_argument("charbonnier_loss: gradient size mismatch");
    if (pred.empty()) throw std::invalid_argument("charbonnier_loss: empty input");
    const double count = static_cast<double>(pred.size());
    const double e2 = static_cast<double>(eps) * static_cast<double>(eps);
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        const double s = std::sqrt(d * d + e2);
        sum += s;
        if (!grad.empty()) grad[i] = static_cast<T>(d / s / count);
    }
    return static_cast<T>(sum / count);
}

template <class T>
void adam_step(std::span<const std::span<T>> params, std::span<const std::span<T>> grads, AdamState<T>& state,
               const AdamConfig& cfg) {
    if (params.size() != grads.size()) throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].size(), T(0));
            state.v[i].assign(params[i].size(), T(0));
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state does not match parameters");
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i];
        auto g = grads[i];
        if (p.size() != g.size() || state.m[i].size() != p.size())
            throw std::invalid_argument("adam_step: tensor size mismatch");
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = g[j];
            const double m = cfg.beta1 * state.m[i][j] + (1.0 - cfg.beta1) * gj;
            const double v = cfg.beta2 * state.v[i][j] + (1.0 - cfg.beta2) * gj * gj;
            state.m[i][j] = static_cast<T>(m);
            state.v[i][j] = static_cast<T>(v);
            p[j] = static_cast<T>(p[j] - cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps));
        }
    }
}

// ---- weight container ----

namespace {

constexpr char kMagic[4] = {'C', 'V', 'L', 'W'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) {
        if (remaining() < n) throw FormatError(std::string("weight file truncated while reading ") + what, pos_);
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_tensors(std::span<const NamedTensor> tensors) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        std::size_t count = 1;
        for (auto d : t.dims) count *= d;
        if (count != t.data.size()) throw std::invalid_argument("tensor '" + t.name + "': dims do not match data size");
        put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
        for (auto d : t.dims) put_u32(out, d);
        const std::size_t at = out.size();
        out.resize(at + t.data.size() * 4);
        if (!t.data.empty()) std::memcpy(out.data() + at, t.data.data(), t.data.size() * 4);
    }
    return out;
}

std::vector<NamedTensor> decode_tensors(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    const auto magic = r.take(4, "magic");
    for (std::size_t i = 0; i < 4; ++i)
        if (magic[i] != static_cast<std::uint8_t>(kMagic[i])) throw FormatError("bad weight file magic", i);
    const std::size_t vpos = r.pos();
    if (r.u32("version") != kVersion) throw FormatError("unsupported weight file version", vpos);
    const std::uint32_t count = r.u32("tensor count");
    std::vector<NamedTensor> out;
    for (std::uint32_t k = 0; k < count; ++k) {
        NamedTensor t;
        const std::uint32_t name_len = r.u32("name length");
        if (name_len > 4096) throw FormatError("implausible tensor name length", r.pos() - 4);
        const auto name = r.take(name_len, "name");
        t.name.assign(name.begin(), name.end());
        const std::uint32_t ndims = r.u32("rank");
        if (ndims > 8) throw FormatError("implausible tensor rank", r.pos() - 4);
        std::uint64_t elems = 1;
        for (std::uint32_t d = 0; d < ndims; ++d) {
            t.dims.push_back(r.u32("dims"));
            elems *= t.dims.back();
            if (elems > r.remaining()) throw FormatError("tensor '" + t.name + "' larger than file", r.pos());
        }
        const auto payload = r.take(static_cast<std::size_t>(elems) * 4, "payload");
        t.data.resize(static_cast<std::size_t>(elems));
        if (elems) std::memcpy(t.data.data(), payload.data(), payload.size());
        for (float v : t.data)
            if (!std::isfinite(v)) throw FormatError("non-finite value in tensor '" + t.name + "'", r.pos());
        out.push_back(std::move(t));
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after last tensor", r.pos());
    return out;
}

void save_tensors(std::span<const NamedTensor> tensors, const std::filesystem::path& path) {
    const auto bytes = encode_tensors(tensors);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode_tensors(bytes);
}

namespace {

std::string layer_key(const std::string& prefix, std::size_t i, LayerKind k) {
    char idx[8];
    std::snprintf(idx, sizeof idx, "%02zu", i);
    return prefix + "." + idx + "." + to_string(k);
}

LayerKind parse_kind(const std::string& s) {
    for (auto k : {LayerKind::conv3x3, LayerKind::instance_norm, LayerKind::leaky_relu, LayerKind::pixel_shuffle,
                   LayerKind::softmax_channels})
        if (s == to_string(k)) return k;
    throw FormatError("unknown layer kind '" + s + "'", 0);
}

}  // namespace

void append_net(std::vector<NamedTensor>& out, const std::string& prefix, const Net<float>& net) {
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& l = net.layers[i];
        const std::string key = layer_key(prefix, i, l.kind);
        switch (l.kind) {
            case LayerKind::conv3x3:
                out.push_back({key + ".weight",
                               {static_cast<std::uint32_t>(l.out), static_cast<std::uint32_t>(l.in), 3, 3},
                               l.weight});
                out.push_back({key + ".bias", {static_cast<std::uint32_t>(l.out)}, l.bias});
                break;
            case LayerKind::instance_norm:
                out.push_back({key + ".weight", {static_cast<std::uint32_t>(l.in)}, l.weight});
                out.push_back({key + ".bias", {static_cast<std::uint32_t>(l.in)}, l.bias});
                break;
            case LayerKind::leaky_relu: out.push_back({key, {1}, {l.slope}}); break;
            case LayerKind::pixel_shuffle: out.push_back({key, {1}, {static_cast<float>(l.factor)}}); break;
            case LayerKind::softmax_channels: out.push_back({key, {0}, {}}); break;
        }
    }
}

Net<float> extract_net(std::span<const NamedTensor> tensors, const std::string& prefix) {
    // index -> (kind, param name -> tensor)
    std::map<int, std::pair<std::string, std::map<std::string, const NamedTensor*>>> found;
    const std::string head = prefix + ".";
    for (const auto& t : tensors) {
        if (t.name.rfind(head, 0) != 0) continue;
        const std::string rest = t.name.substr(head.size());
        const auto dot = rest.find('.');
        if (dot == std::string::npos) throw FormatError("malformed tensor name '" + t.name + "'", 0);
        const int idx = std::stoi(rest.substr(0, dot));
        std::string kind = rest.substr(dot + 1), param;
        if (const auto d2 = kind.find('.'); d2 != std::string::npos) {
            param = kind.substr(d2 + 1);
            kind = kind.substr(0, d2);
        }
        auto& slot = found[idx];
        if (!slot.first.empty() && slot.first != kind) throw FormatError("conflicting kinds for layer in '" + t.name + "'", 0);
        slot.first = kind;
        slot.second[param] = &t;
    }
    Net<float> net;
    int expect = 0;
    for (const auto& [idx, slot] : found) {
        if (idx != expect++) throw FormatError("layer indices under '" + prefix + "' are not contiguous", 0);
        const LayerKind kind = parse_kind(slot.first);
        auto get = [&](const std::string& p) -> const NamedTensor& {
            const auto it = slot.second.find(p);
            if (it == slot.second.end()) throw FormatError("missing tensor " + prefix + "." + slot.first + "." + p, 0);
            return *it->second;
        };
        switch (kind) {
            case LayerKind::conv3x3: {
                const auto& w = get("weight");
                const auto& b = get("bias");
                if (w.dims.size() != 4 || w.dims[2] != 3 || w.dims[3] != 3 || b.dims.size() != 1 || b.dims[0] != w.dims[0])
                    throw FormatError("bad conv3x3 tensor shapes in " + w.name, 0);
                auto l = conv3x3<float>(static_cast<int>(w.dims[1]), static_cast<int>(w.dims[0]));
                l.weight = w.data;
                l.bias = b.data;
                net.layers.push_back(std::move(l));
                break;
            }
            case LayerKind::instance_norm: {
                const auto& w = get("weight");
                const auto& b = get("bias");
                if (w.dims.size() != 1 || b.dims != w.dims) throw FormatError("bad instance_norm shapes in " + w.name, 0);
                auto l = instance_norm<float>(static_cast<int>(w.dims[0]));
                l.weight = w.data;
                l.bias = b.data;
                net.layers.push_back(std::move(l));
                break;
            }
            case LayerKind::leaky_relu: {
                const auto& t = get("");
                if (t.data.size() != 1) throw FormatError("bad leaky_relu tensor " + t.name, 0);
                net.layers.push_back(leaky_relu<float>(t.data[0]));
                break;
            }
            case LayerKind::pixel_shuffle: {
                const auto& t = get("");
                if (t.data.size() != 1 || t.data[0] < 1) throw FormatError("bad pixel_shuffle tensor " + t.name, 0);
                net.layers.push_back(pixel_shuffle<float>(static_cast<int>(t.data[0])));
                break;
            }
            case LayerKind::softmax_channels: net.layers.push_back(softmax_channels<float>()); break;
        }
    }
    return net;
}

#define CONVLUT_NN_INSTANTIATE(T)                                                                              \
    template Layer<T> conv3x3<T>(int, int);                                                                    \
    template Layer<T> instance_norm<T>(int);                                                                   \
    template Layer<T> leaky_relu<T>(T);                                                                        \
    template Layer<T> pixel_shuffle<T>(int);                                                                   \
    template Layer<T> softmax_channels<T>();                                                                   \
    template class Net<T>;                                                                                     \
    template void kaiming_init<T>(Net<T>&, std::uint64_t, double);                                             \
    template T charbonnier_loss<T>(std::span<const T>, std::span<const T>, T, std::span<T>);                   \
    template void adam_step<T>(std::span<const std::span<T>>, std::span<const std::span<T>>, AdamState<T>&,    \
                               const AdamConfig&);                                                             \
    template Tensor<T> pixel_unshuffle<T>(const Tensor<T>&, int);
CONVLUT_NN_INSTANTIATE(float)
CONVLUT_NN_INSTANTIATE(double)

}  // namespace convlut::nn
