#pragma once

// Joint training of the weight predictor and the temporal branch against
// frozen (or optionally fine-tuned) expert LUTs, plus the inference and
// evaluation pipeline shared with the CLI.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "convlut/degradation.hpp"
#include "convlut/fusion.hpp"
#include "convlut/nnet.hpp"
#include "convlut/temporal.hpp"

namespace convlut {

struct TrainConfig {
    int patch = 48;  ///< LR patch side, clamped to the frame
    int batch = 16;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int epochs = 1;
    std::uint64_t seed = 0;
    double charbonnier_eps = 1e-3;
    bool finetune_lut = false;
    double lut_lr = 0.1;     ///< Adam step for LUT entries, in gray levels
    int steps_per_epoch = 0;  ///< 0: one pass worth of patches, at least 1
    int hidden = 64;
    bool temporal = true;
    int threads = 1;  ///< patch preparation and validation only

    /// Throws std::invalid_argument on a non-positive field or patch < 2.
    void validate() const;
};

/// Predictor and temporal net. Either may be empty: no predictor means
/// uniform fusion weights, no temporal net means a zero residual.
struct Model {
    nn::Net<float> predictor;
    nn::Net<float> temporal;

    bool has_predictor() const noexcept { return !predictor.layers.empty(); }
    bool has_temporal() const noexcept { return !temporal.layers.empty(); }
    bool operator==(const Model&) const = default;
};

/// Fresh model for a bank of `experts`: predictor seeded with `seed`,
/// single-channel temporal net with `seed + 1`.
Model init_model(int experts, int scale, int hidden, std::uint64_t seed, bool temporal);

/// Weight file: the nnet container with tensors under "predictor." and
/// "temporal.".
void save_model(const Model& m, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

/// One frame through the full pipeline: fusion weights (predicted or
/// uniform), fused spatial upscale, plus the temporal residual when
/// `use_temporal` is set and the model has a temporal net.
Image upscale_frame(const Model& m, const ExpertBank& bank, const OrderTable& order, const Image& lr,
                    const Image* prev_lr, const MotionField* motion, bool use_temporal, int threads = 1);

// ---- evaluation ----

struct FrameScore {
    std::string profile;
    int index = 0;
    double psnr = 0.0, ssim = 0.0;
};

struct ProfileScore {
    std::string profile;
    int frames = 0;
    double mean_psnr = 0.0, mean_ssim = 0.0;
};

struct EvalReport {
    std::vector<FrameScore> frames;
    std::vector<ProfileScore> profiles;  ///< in first-seen order
};

/// Scores one output against its HR frame.
FrameScore score_frame(const Image& out, const Image& hr);

/// Runs every received frame of `samples` in arrival order. A received frame
/// uses the previous received frame of the same stream (samples carrying a
/// motion field) as temporal context.
EvalReport evaluate(const Model& m, const ExpertBank& bank, const std::vector<StreamSample>& samples,
                    bool use_temporal, int threads = 1);

// ---- training ----

/// A batch of patches with everything the loss needs precomputed. Colour
/// planes are stacked along the batch axis (row i * channels + c); the
/// fusion weights come from luma and are shared by all planes of a patch.
struct TrainBatch {
    int n = 0, channels = 1, patch = 0, scale = 0, experts = 0;
    nn::Tensor<float> predictor_in;  ///< (n, 1, P, P) luma
    nn::Tensor<float> temporal_in;   ///< (n*C, 4, P, P)
    nn::Tensor<float> target;        ///< (n*C, 1, rP, rP), HR / 255
    std::vector<float> interp;       ///< (n*C, experts, rP, rP), unrounded gray levels
    std::vector<Pixel4> windows;     ///< (n*C, P, P) LUT query windows
};

/// One patch request: received sample `sample`, LR top-left corner.
struct PatchSpec {
    int sample = 0, y = 0, x = 0;
};

/// Received frames with their temporal context.
struct TrainFrame {
    Image lr, luma, hr;
    std::optional<Image> prev;
    std::optional<MotionField> motion;
};
std::vector<TrainFrame> training_frames(const std::vector<StreamSample>& samples);

TrainBatch make_batch(const std::vector<TrainFrame>& frames, const std::vector<PatchSpec>& specs, int patch,
                      const ExpertBank& bank, const OrderTable& order, int threads = 1);

/// Fusion part of the loss given explicit weights W (n, experts, P, P) and
/// an optional residual (n*C, 1, rP, rP) in [0,1] units. Writes d loss / d W
/// and d loss / d prediction when the pointers are non-null.
template <class T>
T fused_loss(const nn::Tensor<T>& weights, const TrainBatch& b, const nn::Tensor<T>* residual, T eps,
             nn::Tensor<T>* d_weights, nn::Tensor<T>* d_pred);

template <class T>
struct ModelGrads {
    std::vector<nn::LayerGrad<T>> predictor, temporal;
    nn::Tensor<T> w;        ///< fusion weights of the forward pass
    nn::Tensor<T> weights;  ///< d loss / d fusion weights
    nn::Tensor<T> pred;     ///< d loss / d prediction
};

/// Charbonnier loss of the full model on a batch; accumulates parameter
/// gradients into `grads` when it is non-null.
template <class T>
T model_loss(const nn::Net<T>& predictor, const nn::Net<T>* temporal, const TrainBatch& b, T eps,
             ModelGrads<T>* grads);

struct TrainLogRecord {
    int epoch = 0;
    long step = 0;
    double loss = 0.0;
    std::optional<double> val_psnr;  ///< set on epoch-end records
};

struct TrainResult {
    Model model;
    std::vector<TrainLogRecord> log;
};

/// Trains from `init` (or init_model(...) when null). Throws
/// std::invalid_argument on an empty training set or a predictor whose
/// output count differs from the bank size. With finetune_lut off the bank
/// is not modified.
TrainResult train(const TrainConfig& cfg, const std::vector<StreamSample>& train_set,
                  const std::vector<StreamSample>& val_set, ExpertBank& bank, const Model* init = nullptr,
                  const std::function<void(const TrainLogRecord&)>& on_log = {});

std::string to_json_line(const TrainLogRecord& r);

extern template float fused_loss<float>(const nn::Tensor<float>&, const TrainBatch&, const nn::Tensor<float>*, float,
                                        nn::Tensor<float>*, nn::Tensor<float>*);
extern template double fused_loss<double>(const nn::Tensor<double>&, const TrainBatch&, const nn::Tensor<double>*,
                                          double, nn::Tensor<double>*, nn::Tensor<double>*);
extern template float model_loss<float>(const nn::Net<float>&, const nn::Net<float>*, const TrainBatch&, float,
                                        ModelGrads<float>*);
extern template double model_loss<double>(const nn::Net<double>&, const nn::Net<double>*, const TrainBatch&, double,
                                          ModelGrads<double>*);

}  // namespace convlut
