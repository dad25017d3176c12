#pragma once

// Minimal dense convolution engine with hand-written backward passes.
//
// Everything is templated on the scalar type. Production code uses float;
// double exists so gradients can be checked against finite differences.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace convlut::nn {

template <class T>
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
        : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

    std::size_t size() const noexcept { return v.size(); }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
    std::size_t index(int b, int ch, int y, int x) const noexcept {
        return ((static_cast<std::size_t>(b) * c + ch) * h + y) * w + x;
    }
    T& at(int b, int ch, int y, int x) noexcept { return v[index(b, ch, y, x)]; }
    T at(int b, int ch, int y, int x) const noexcept { return v[index(b, ch, y, x)]; }
    bool same_shape(const Tensor& o) const noexcept { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

enum class LayerKind { conv3x3, instance_norm, leaky_relu, pixel_shuffle, softmax_channels };

const char* to_string(LayerKind k);

/// One layer. Parameter layout:
///   conv3x3       weight (out, in, 3, 3), bias (out)
///   instance_norm weight = scale (ch), bias = shift (ch)
/// The other kinds are parameter-free.
template <class T>
struct Layer {
    LayerKind kind = LayerKind::conv3x3;
    int in = 0;    ///< input channels (0 = any, for shape-agnostic layers)
    int out = 0;   ///< output channels
    T slope = T(0.1);
    int factor = 1;  ///< pixel_shuffle upscale
    std::vector<T> weight, bias;

    std::size_t parameter_count() const noexcept { return weight.size() + bias.size(); }
};

template <class T>
Layer<T> conv3x3(int in, int out);
template <class T>
Layer<T> instance_norm(int channels);
template <class T>
Layer<T> leaky_relu(T slope);
template <class T>
Layer<T> pixel_shuffle(int factor);
template <class T>
Layer<T> softmax_channels();

template <class T>
struct LayerGrad {
    std::vector<T> weight, bias;
};

/// Activations recorded by a training forward pass.
template <class T>
struct Tape {
    std::vector<Tensor<T>> inputs;  ///< input of each layer
    bool empty() const noexcept { return inputs.empty(); }
};

template <class T>
class Net {
public:
    std::vector<Layer<T>> layers;

    Net() = default;
    explicit Net(std::vector<Layer<T>> l) : layers(std::move(l)) {}

    /// Inference. Throws std::invalid_argument naming the offending layer on
    /// a shape mismatch.
    Tensor<T> forward(const Tensor<T>& x) const;
    /// Training forward: records what backward needs into `tape`.
    Tensor<T> forward(const Tensor<T>& x, Tape<T>& tape) const;

    /// Accumulates parameter gradients into `grads` (resized on first use)
    /// and returns the gradient with respect to the net input. Throws
    /// std::logic_error when `tape` holds no forward pass.
    Tensor<T> backward(const Tape<T>& tape, const Tensor<T>& upstream, std::vector<LayerGrad<T>>& grads) const;

    std::vector<LayerGrad<T>> zero_grads() const;
    std::size_t parameter_count() const noexcept;
    int input_channels() const;
    int output_channels(int input_channels) const;

    /// Flat views over every parameter, in a stable order.
    std::vector<std::span<T>> parameters();
    static std::vector<std::span<T>> gradient_views(std::vector<LayerGrad<T>>& grads);

    template <class U>
    Net<U> cast() const {
        Net<U> out;
        for (const auto& l : layers) {
            Layer<U> m;
            m.kind = l.kind;
            m.in = l.in;
            m.out = l.out;
            m.slope = static_cast<U>(l.slope);
            m.factor = l.factor;
            m.weight.assign(l.weight.begin(), l.weight.end());
            m.bias.assign(l.bias.begin(), l.bias.end());
            out.layers.push_back(std::move(m));
        }
        return out;
    }

    bool operator==(const Net& o) const;
};

/// Kaiming-uniform fan-in init for conv weights (gain for the given leaky
/// slope), zero biases, unit/zero norm scale/shift.
template <class T>
void kaiming_init(Net<T>& net, std::uint64_t seed, double leaky_slope = 0.1);

/// sqrt((p - t)^2 + eps^2) averaged over elements. Writes d loss / d pred
/// into `grad` when it is non-empty.
template <class T>
T charbonnier_loss(std::span<const T> pred, std::span<const T> target, T eps, std::span<T> grad = {});

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct AdamState {
    std::vector<std::vector<T>> m, v;
    long step = 0;
};

template <class T>
void adam_step(std::span<const std::span<T>> params, std::span<const std::span<T>> grads, AdamState<T>& state,
               const AdamConfig& cfg);

template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int factor);

// ---- weight container ----

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

std::vector<std::uint8_t> encode_tensors(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_tensors(std::span<const std::uint8_t> bytes);
void save_tensors(std::span<const NamedTensor> tensors, const std::filesystem::path& path);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

/// Self-describing serialisation: layer kinds and hyper-parameters are
/// encoded in tensor names under `prefix`.
void append_net(std::vector<NamedTensor>& out, const std::string& prefix, const Net<float>& net);
/// Rebuilds the net stored under `prefix`; returns an empty net if absent.
Net<float> extract_net(std::span<const NamedTensor> tensors, const std::string& prefix);

#define CONVLUT_NN_EXTERN(T)                                  \
    extern template Layer<T> conv3x3<T>(int, int);            \
    extern template Layer<T> instance_norm<T>(int);           \
    extern template Layer<T> leaky_relu<T>(T);                \
    extern template Layer<T> pixel_shuffle<T>(int);           \
    extern template Layer<T> softmax_channels<T>();           \
    extern template class Net<T>;                             \
    extern template void kaiming_init<T>(Net<T>&, std::uint64_t, double); \
    extern template T charbonnier_loss<T>(std::span<const T>, std::span<const T>, T, std::span<T>); \
    extern template void adam_step<T>(std::span<const std::span<T>>, std::span<const std::span<T>>, AdamState<T>&, \
                                      const AdamConfig&);                                                      \
    extern template Tensor<T> pixel_unshuffle<T>(const Tensor<T>&, int);
CONVLUT_NN_EXTERN(float)
CONVLUT_NN_EXTERN(double)
#undef CONVLUT_NN_EXTERN

}  // namespace convlut::nn
