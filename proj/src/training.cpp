#include "convlut/training.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "convlut/common.hpp"
#include "convlut/metrics.hpp"

namespace convlut {

void TrainConfig::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0)) throw std::invalid_argument(std::string(name) + " must be positive");
    };
    if (patch < 2) throw std::invalid_argument("patch size must be >= 2");
    positive(batch, "batch size");
    positive(lr, "learning rate");
    positive(beta1, "beta1");
    positive(beta2, "beta2");
    if (beta1 >= 1.0 || beta2 >= 1.0) throw std::invalid_argument("Adam betas must be < 1");
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    positive(charbonnier_eps, "charbonnier eps");
    positive(lut_lr, "LUT learning rate");
    if (steps_per_epoch < 0) throw std::invalid_argument("steps per epoch must be >= 0");
    positive(hidden, "hidden width");
    positive(threads, "threads");
}

Model init_model(int experts, int scale, int hidden, std::uint64_t seed, bool temporal) {
    Model m;
    m.predictor = make_predictor(experts, seed, hidden);
    if (temporal) m.temporal = make_temporal_net(1, scale, seed + 1, hidden);
    return m;
}

void save_model(const Model& m, const std::filesystem::path& path) {
    std::vector<nn::NamedTensor> tensors;
    nn::append_net(tensors, "predictor", m.predictor);
    nn::append_net(tensors, "temporal", m.temporal);
    nn::save_tensors(tensors, path);
}

Model load_model(const std::filesystem::path& path) {
    const auto tensors = nn::load_tensors(path);
    Model m;
    m.predictor = nn::extract_net(tensors, "predictor");
    m.temporal = nn::extract_net(tensors, "temporal");
    return m;
}

Image upscale_frame(const Model& m, const ExpertBank& bank, const OrderTable& order, const Image& lr,
                    const Image* prev_lr, const MotionField* motion, bool use_temporal, int threads) {
    const WeightMap w = m.has_predictor() ? predict_weights(m.predictor, lr, bank.size())
                                          : uniform_weights(lr.width, lr.height, bank.size());
    Image spatial = spatial_branch(bank, order, w, lr, threads);
    if (!use_temporal || !m.has_temporal()) return spatial;
    if (prev_lr == nullptr) motion = nullptr;
    return combine(spatial, temporal_branch(m.temporal, lr, prev_lr, motion, kSearchRadius));
}

// ---- evaluation ----

FrameScore score_frame(const Image& out, const Image& hr) {
    FrameScore s;
    s.psnr = psnr(out, hr);
    s.ssim = ssim(out, hr);
    return s;
}

EvalReport evaluate(const Model& m, const ExpertBank& bank, const std::vector<StreamSample>& samples,
                    bool use_temporal, int threads) {
    bank.validate();
    const OrderTable order = build_order_table(bank.interval());
    EvalReport report;
    const Image* last = nullptr;
    for (const auto& s : samples) {
        if (s.dropped || !s.lr) continue;
        const Image* prev = s.motion ? last : nullptr;
        const Image out = upscale_frame(m, bank, order, *s.lr, prev, prev ? &*s.motion : nullptr, use_temporal, threads);
        FrameScore f = score_frame(out, s.hr);
        f.profile = s.profile.empty() ? "default" : s.profile;
        f.index = s.frame_index;
        report.frames.push_back(f);
        last = &*s.lr;
    }
    for (const auto& f : report.frames) {
        auto it = std::find_if(report.profiles.begin(), report.profiles.end(),
                               [&](const ProfileScore& p) { return p.profile == f.profile; });
        if (it == report.profiles.end()) {
            report.profiles.push_back({f.profile, 0, 0.0, 0.0});
            it = report.profiles.end() - 1;
        }
        ++it->frames;
        it->mean_psnr += f.psnr;
        it->mean_ssim += f.ssim;
    }
    for (auto& p : report.profiles) {
        p.mean_psnr /= p.frames;
        p.mean_ssim /= p.frames;
    }
    return report;
}

// ---- training data ----

std::vector<TrainFrame> training_frames(const std::vector<StreamSample>& samples) {
    std::vector<TrainFrame> out;
    const Image* last = nullptr;
    for (const auto& s : samples) {
        if (s.dropped || !s.lr) continue;
        TrainFrame f;
        f.lr = *s.lr;
        f.luma = to_luma(f.lr);
        f.hr = s.hr;
        if (f.hr.width != f.lr.width * kSrScale || f.hr.height != f.lr.height * kSrScale)
            throw std::invalid_argument("HR frame is not 4x its LR frame");
        if (f.hr.channels != f.lr.channels) throw std::invalid_argument("HR and LR channel counts differ");
        if (!out.empty() && f.lr.channels != out.front().lr.channels)
            throw std::invalid_argument("training frames mix channel counts");
        if (s.motion && last != nullptr) {
            f.prev = *last;
            f.motion = *s.motion;
        }
        out.push_back(std::move(f));
        last = &*s.lr;
    }
    return out;
}

TrainBatch make_batch(const std::vector<TrainFrame>& frames, const std::vector<PatchSpec>& specs, int patch,
                      const ExpertBank& bank, const OrderTable& order, int threads) {
    const int n = static_cast<int>(specs.size());
    const int r = bank.scale();
    const int E = bank.size();
    const int P = patch, R = r * patch;
    if (r != kSrScale) throw std::invalid_argument("training expects scale-4 experts");
    if (frames.empty()) throw std::invalid_argument("no training frames");
    const int C = frames.front().lr.channels;
    TrainBatch b;
    b.n = n;
    b.channels = C;
    b.patch = P;
    b.scale = r;
    b.experts = E;
    b.predictor_in = nn::Tensor<float>(n, 1, P, P);
    b.temporal_in = nn::Tensor<float>(n * C, 4, P, P);
    b.target = nn::Tensor<float>(n * C, 1, R, R);
    b.interp.assign(static_cast<std::size_t>(n) * C * E * R * R, 0.0f);
    b.windows.resize(static_cast<std::size_t>(n) * C * P * P);
    for (const auto& s : specs) {
        const TrainFrame& f = frames.at(static_cast<std::size_t>(s.sample));
        if (f.lr.channels != C) throw std::invalid_argument("training frames mix channel counts");
        if (s.y < 0 || s.x < 0 || s.y + P > f.lr.height || s.x + P > f.lr.width)
            throw std::invalid_argument("patch outside the frame");
    }
    parallel_for(n, threads, [&](int begin, int end) {
        std::vector<float> tile(static_cast<std::size_t>(r) * r);
        for (int i = begin; i < end; ++i) {
            const PatchSpec& s = specs[static_cast<std::size_t>(i)];
            const TrainFrame& f = frames[static_cast<std::size_t>(s.sample)];
            const Image& prev = f.prev ? *f.prev : f.lr;
            for (int y = 0; y < P; ++y)
                for (int x = 0; x < P; ++x)
                    b.predictor_in.at(i, 0, y, x) = static_cast<float>(f.luma.at(0, s.y + y, s.x + x)) / 255.0f;
            for (int c = 0; c < C; ++c) {
                const int j = i * C + c;
                for (int y = 0; y < P; ++y)
                    for (int x = 0; x < P; ++x) {
                        const int fy = s.y + y, fx = s.x + x;
                        b.temporal_in.at(j, 0, y, x) = static_cast<float>(f.lr.at(c, fy, fx)) / 255.0f;
                        b.temporal_in.at(j, 1, y, x) = static_cast<float>(prev.at(c, fy, fx)) / 255.0f;
                        if (f.motion) {
                            const std::size_t mi = f.motion->index(fy, fx);
                            b.temporal_in.at(j, 2, y, x) = static_cast<float>(f.motion->dx[mi]) / kSearchRadius;
                            b.temporal_in.at(j, 3, y, x) = static_cast<float>(f.motion->dy[mi]) / kSearchRadius;
                        }
                        const Pixel4 p = query_window(f.lr, c, fy, fx);
                        b.windows[(static_cast<std::size_t>(j) * P + y) * P + x] = p;
                        for (int k = 0; k < E; ++k) {
                            interp_unrounded(bank.luts[static_cast<std::size_t>(k)], order, p, tile);
                            float* dst = b.interp.data() + ((static_cast<std::size_t>(j) * E + k) * R) * R;
                            for (int a = 0; a < r; ++a)
                                for (int cc = 0; cc < r; ++cc)
                                    dst[static_cast<std::size_t>(r * y + a) * R + r * x + cc] =
                                        tile[static_cast<std::size_t>(a * r + cc)];
                        }
                    }
                for (int y = 0; y < R; ++y)
                    for (int x = 0; x < R; ++x)
                        b.target.at(j, 0, y, x) = static_cast<float>(f.hr.at(c, r * s.y + y, r * s.x + x)) / 255.0f;
            }
        }
    });
    return b;
}

namespace {

template <class T>
nn::Tensor<T> cast_tensor(const nn::Tensor<float>& t) {
    nn::Tensor<T> out(t.n, t.c, t.h, t.w);
    std::copy(t.v.begin(), t.v.end(), out.v.begin());
    return out;
}

}  // namespace

template <class T>
T fused_loss(const nn::Tensor<T>& weights, const TrainBatch& b, const nn::Tensor<T>* residual, T eps,
             nn::Tensor<T>* d_weights, nn::Tensor<T>* d_pred) {
    const int n = b.n, C = b.channels, E = b.experts, P = b.patch, r = b.scale, R = r * P;
    if (weights.n != n || weights.c != E || weights.h != P || weights.w != P)
        throw std::invalid_argument("fusion weights do not match the batch");
    if (residual != nullptr && (residual->n != n * C || residual->c != 1 || residual->h != R || residual->w != R))
        throw std::invalid_argument("residual does not match the batch");
    const T inv255 = T(1) / T(255);
    nn::Tensor<T> pred(n * C, 1, R, R);
    for (int j = 0; j < n * C; ++j)
        for (int k = 0; k < E; ++k) {
            const float* src = b.interp.data() + (static_cast<std::size_t>(j) * E + k) * R * R;
            for (int Y = 0; Y < R; ++Y)
                for (int X = 0; X < R; ++X)
                    pred.at(j, 0, Y, X) += weights.at(j / C, k, Y / r, X / r) * static_cast<T>(src[Y * R + X]) * inv255;
        }
    if (residual != nullptr)
        for (std::size_t j = 0; j < pred.v.size(); ++j) pred.v[j] += residual->v[j];
    const nn::Tensor<T> target = cast_tensor<T>(b.target);
    nn::Tensor<T> grad(n * C, 1, R, R);
    const T loss = nn::charbonnier_loss<T>(pred.v, target.v, eps, grad.v);
    if (d_weights != nullptr) {
        *d_weights = nn::Tensor<T>(n, E, P, P);
        for (int j = 0; j < n * C; ++j)
            for (int k = 0; k < E; ++k) {
                const float* src = b.interp.data() + (static_cast<std::size_t>(j) * E + k) * R * R;
                for (int Y = 0; Y < R; ++Y)
                    for (int X = 0; X < R; ++X)
                        d_weights->at(j / C, k, Y / r, X / r) +=
                            grad.at(j, 0, Y, X) * static_cast<T>(src[Y * R + X]) * inv255;
            }
    }
    if (d_pred != nullptr) *d_pred = std::move(grad);
    return loss;
}

template <class T>
T model_loss(const nn::Net<T>& predictor, const nn::Net<T>* temporal, const TrainBatch& b, T eps,
             ModelGrads<T>* grads) {
    nn::Tape<T> tp, tt;
    const nn::Tensor<T> pin = cast_tensor<T>(b.predictor_in);
    nn::Tensor<T> w = grads ? predictor.forward(pin, tp) : predictor.forward(pin);
    nn::Tensor<T> res;
    if (temporal != nullptr) {
        const nn::Tensor<T> tin = cast_tensor<T>(b.temporal_in);
        res = grads ? temporal->forward(tin, tt) : temporal->forward(tin);
    }
    if (grads == nullptr) return fused_loss<T>(w, b, temporal ? &res : nullptr, eps, nullptr, nullptr);
    const T loss = fused_loss<T>(w, b, temporal ? &res : nullptr, eps, &grads->weights, &grads->pred);
    if (grads->predictor.empty()) grads->predictor = predictor.zero_grads();
    predictor.backward(tp, grads->weights, grads->predictor);
    grads->w = std::move(w);
    if (temporal != nullptr) {
        if (grads->temporal.empty()) grads->temporal = temporal->zero_grads();
        temporal->backward(tt, grads->pred, grads->temporal);
    }
    return loss;
}

template float fused_loss<float>(const nn::Tensor<float>&, const TrainBatch&, const nn::Tensor<float>*, float,
                                 nn::Tensor<float>*, nn::Tensor<float>*);
template double fused_loss<double>(const nn::Tensor<double>&, const TrainBatch&, const nn::Tensor<double>*, double,
                                   nn::Tensor<double>*, nn::Tensor<double>*);
template float model_loss<float>(const nn::Net<float>&, const nn::Net<float>*, const TrainBatch&, float,
                                 ModelGrads<float>*);
template double model_loss<double>(const nn::Net<double>&, const nn::Net<double>*, const TrainBatch&, double,
                                   ModelGrads<double>*);

// ---- training loop ----

namespace {

/// Float shadow of the bank used when LUT entries are fine-tuned.
struct LutShadow {
    std::vector<std::vector<float>> values, grads;
    nn::AdamState<float> adam;

    explicit LutShadow(const ExpertBank& bank) {
        for (const auto& l : bank.luts) {
            values.emplace_back(l.values().begin(), l.values().end());
            grads.emplace_back(l.values().size(), 0.0f);
        }
    }

    // d loss / d entry = g / 255 * W_k * c_j / s for each of the 5 simplex vertices.
    void accumulate(const TrainBatch& b, const nn::Tensor<float>& weights, const nn::Tensor<float>& d_pred,
                    const ExpertBank& bank, const OrderTable& order) {
        const int P = b.patch, r = b.scale;
        const LutTable& first = bank.luts.front();
        const int shift = order.shift(), s = 1 << shift;
        const auto& co = first.corner_offsets();
        for (int j = 0; j < b.n * b.channels; ++j)
            for (int y = 0; y < P; ++y)
                for (int x = 0; x < P; ++x) {
                    const Pixel4 p = b.windows[(static_cast<std::size_t>(j) * P + y) * P + x];
                    const MsbLsb ml = split_msb_lsb(p, s);
                    const OrderEntry& e = order.at(ml.lsb[0], ml.lsb[1], ml.lsb[2], ml.lsb[3]);
                    const int c[5] = {s - e.sorted[0], e.sorted[0] - e.sorted[1], e.sorted[1] - e.sorted[2],
                                      e.sorted[2] - e.sorted[3], e.sorted[3]};
                    const std::size_t base = first.offset(ml.msb[0], ml.msb[1], ml.msb[2], ml.msb[3]);
                    const std::size_t vo[5] = {base, base + co[e.masks[0]], base + co[e.masks[1]],
                                               base + co[e.masks[2]], base + co[15]};
                    for (int k = 0; k < b.experts; ++k) {
                        const float wk = weights.at(j / b.channels, k, y, x) / (255.0f * static_cast<float>(s));
                        auto& g = grads[static_cast<std::size_t>(k)];
                        for (int a = 0; a < r; ++a)
                            for (int cc = 0; cc < r; ++cc) {
                                const float up = d_pred.at(j, 0, r * y + a, r * x + cc) * wk;
                                const std::size_t q = static_cast<std::size_t>(a * r + cc);
                                for (int j = 0; j < 5; ++j) g[vo[j] + q] += up * static_cast<float>(c[j]);
                            }
                    }
                }
    }

    void step(ExpertBank& bank, const nn::AdamConfig& cfg) {
        std::vector<std::span<float>> p, g;
        for (std::size_t k = 0; k < values.size(); ++k) {
            p.emplace_back(values[k]);
            g.emplace_back(grads[k]);
        }
        nn::adam_step<float>(p, g, adam, cfg);
        for (std::size_t k = 0; k < values.size(); ++k) {
            auto dst = bank.luts[k].values();
            for (std::size_t i = 0; i < values[k].size(); ++i) {
                values[k][i] = std::clamp(values[k][i], 0.0f, 255.0f);
                dst[i] = clamp_u8(values[k][i]);
            }
            std::fill(grads[k].begin(), grads[k].end(), 0.0f);
        }
    }
};

void zero(std::vector<nn::LayerGrad<float>>& g) {
    for (auto& l : g) {
        std::fill(l.weight.begin(), l.weight.end(), 0.0f);
        std::fill(l.bias.begin(), l.bias.end(), 0.0f);
    }
}

double mean_psnr(const EvalReport& r) {
    if (r.frames.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& f : r.frames) sum += f.psnr;
    return sum / static_cast<double>(r.frames.size());
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<StreamSample>& train_set,
                  const std::vector<StreamSample>& val_set, ExpertBank& bank, const Model* init,
                  const std::function<void(const TrainLogRecord&)>& on_log) {
    cfg.validate();
    bank.validate();
    const std::vector<TrainFrame> frames = training_frames(train_set);
    if (frames.empty()) throw std::invalid_argument("training set has no received frames");

    TrainResult result;
    result.model = init != nullptr ? *init : init_model(bank.size(), bank.scale(), cfg.hidden, cfg.seed, cfg.temporal);
    Model& m = result.model;
    if (!m.has_predictor()) throw std::invalid_argument("model has no predictor");
    if (m.predictor.output_channels(1) != bank.size())
        throw std::invalid_argument("predictor emits " + std::to_string(m.predictor.output_channels(1)) +
                                    " channels but the bank has " + std::to_string(bank.size()) + " experts");
    const bool use_temporal = cfg.temporal && m.has_temporal();
    if (use_temporal && (m.temporal.input_channels() != 4 || m.temporal.output_channels(4) != 1))
        throw std::invalid_argument("temporal net must be single-channel");
    if (cfg.epochs == 0) return result;

    const OrderTable order = build_order_table(bank.interval());
    int P = cfg.patch;
    for (const auto& f : frames) P = std::min({P, f.lr.width, f.lr.height});
    if (P < 2) throw std::invalid_argument("frames are too small for training patches");
    long per_pass = 0;
    for (const auto& f : frames) per_pass += std::max(1, (f.lr.width / P) * (f.lr.height / P));
    const long steps = cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : std::max(1L, (per_pass + cfg.batch - 1) / cfg.batch);

    const nn::AdamConfig adam_cfg{cfg.lr, cfg.beta1, cfg.beta2, 1e-8};
    const nn::AdamConfig lut_cfg{cfg.lut_lr, cfg.beta1, cfg.beta2, 1e-8};
    nn::AdamState<float> adam;
    std::optional<LutShadow> shadow;
    if (cfg.finetune_lut) shadow.emplace(bank);

    ModelGrads<float> grads;
    grads.predictor = m.predictor.zero_grads();
    if (use_temporal) grads.temporal = m.temporal.zero_grads();

    Rng rng(cfg.seed ^ 0x7A11ULL);
    long global_step = 0;
    const auto& validation = val_set.empty() ? train_set : val_set;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (long s = 0; s < steps; ++s) {
            std::vector<PatchSpec> specs(static_cast<std::size_t>(cfg.batch));
            for (auto& spec : specs) {
                spec.sample = static_cast<int>(rng.below(frames.size()));
                const TrainFrame& f = frames[static_cast<std::size_t>(spec.sample)];
                spec.y = static_cast<int>(rng.below(static_cast<std::uint64_t>(f.lr.height - P + 1)));
                spec.x = static_cast<int>(rng.below(static_cast<std::uint64_t>(f.lr.width - P + 1)));
            }
            const TrainBatch batch = make_batch(frames, specs, P, bank, order, cfg.threads);
            zero(grads.predictor);
            zero(grads.temporal);
            const float loss = model_loss<float>(m.predictor, use_temporal ? &m.temporal : nullptr, batch,
                                                 static_cast<float>(cfg.charbonnier_eps), &grads);

            std::vector<std::span<float>> params = m.predictor.parameters();
            std::vector<std::span<float>> gv = nn::Net<float>::gradient_views(grads.predictor);
            if (use_temporal) {
                for (auto p : m.temporal.parameters()) params.push_back(p);
                for (auto g : nn::Net<float>::gradient_views(grads.temporal)) gv.push_back(g);
            }
            if (shadow) shadow->accumulate(batch, grads.w, grads.pred, bank, order);
            nn::adam_step<float>(params, gv, adam, adam_cfg);
            if (shadow) shadow->step(bank, lut_cfg);

            ++global_step;
            epoch_loss += loss;
            TrainLogRecord rec{epoch, global_step, static_cast<double>(loss), std::nullopt};
            result.log.push_back(rec);
            if (on_log) on_log(rec);
        }
        const EvalReport val = evaluate(m, bank, validation, use_temporal, cfg.threads);
        TrainLogRecord rec{epoch, global_step, epoch_loss / static_cast<double>(steps), mean_psnr(val)};
        result.log.push_back(rec);
        if (on_log) on_log(rec);
    }
    return result;
}

std::string to_json_line(const TrainLogRecord& r) {
    nlohmann::json j = {{"kind", r.val_psnr ? "epoch" : "step"}, {"epoch", r.epoch}, {"step", r.step}, {"loss", r.loss}};
    if (r.val_psnr) {
        if (std::isinf(*r.val_psnr))
            j["val_psnr"] = "inf";
        else
            j["val_psnr"] = *r.val_psnr;
    }
    return j.dump();
}

}  // namespace convlut
