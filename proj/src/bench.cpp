#include "convlut/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

#include "convlut/common.hpp"
#include "convlut/fusion.hpp"

namespace convlut {

namespace {

constexpr int kBenchInterval = 16;
constexpr int kBenchScale = 4;
constexpr int kBenchExperts = 6;

LutTable random_table(std::uint64_t seed) {
    LutTable lut(kBenchInterval, kBenchScale);
    Rng rng(seed);
    for (auto& v : lut.values()) v = static_cast<std::uint8_t>(rng.below(256));
    return lut;
}

WeightMap random_simplex_weights(int w, int h, int n, std::uint64_t seed) {
    WeightMap m(w, h, n);
    Rng rng(seed);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto px = m.at(y, x);
            float sum = 0.0f;
            for (auto& v : px) sum += v = static_cast<float>(-std::log(1.0 - rng.uniform()));
            for (auto& v : px) v /= sum;
        }
    return m;
}

void require_equal(const Image& a, const Image& b, const std::string& what) {
    if (!(a == b)) throw std::runtime_error("bench verification failed: " + what);
}

}  // namespace

const std::vector<std::string>& bench_modes() {
    static const std::vector<std::string> modes = {"reference_branchy", "order_table", "tetralinear", "fused_n6",
                                                   "srlut_rot4"};
    return modes;
}

BenchReport summarize_timings(std::string mode, int width, int height, int threads, std::vector<double> ms) {
    if (ms.empty()) throw std::invalid_argument("no timings");
    BenchReport r;
    r.mode = std::move(mode);
    r.width = width;
    r.height = height;
    r.threads = threads;
    r.iterations = static_cast<int>(ms.size());
    std::sort(ms.begin(), ms.end());
    r.min_ms = ms.front();
    const std::size_t mid = ms.size() / 2;
    r.median_ms = ms.size() % 2 ? ms[mid] : 0.5 * (ms[mid - 1] + ms[mid]);
    r.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
    // Guard the documented ordering against rounding in the mean.
    r.mean_ms = std::max(r.mean_ms, r.median_ms);
    r.fps = r.median_ms > 0.0 ? 1000.0 / r.median_ms : 0.0;
    return r;
}

BenchReport bench_interp(const std::string& mode, int width, int height, int iterations, int threads, int warmup,
                         std::uint64_t seed) {
    const auto& modes = bench_modes();
    if (std::find(modes.begin(), modes.end(), mode) == modes.end())
        throw std::invalid_argument("unknown bench mode '" + mode + "'");
    if (width < 1 || height < 1) throw std::invalid_argument("bench size must be positive");
    if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
    if (warmup < 0) throw std::invalid_argument("warmup must be >= 0");
    threads = resolve_threads(threads);

    Image frame(width, height);
    Rng rng(seed);
    for (auto& v : frame.data) v = static_cast<std::uint8_t>(rng.below(256));
    const OrderTable order = build_order_table(kBenchInterval);
    const LutTable lut = random_table(seed + 1);

    std::function<Image(int)> run;
    std::string verified;
    ExpertBank bank;
    WeightMap weights;

    if (mode == "reference_branchy" || mode == "order_table") {
        const InterpKind kind = mode == "order_table" ? InterpKind::order_table : InterpKind::reference;
        run = [&, kind](int t) { return upscale_single(lut, kind, &order, frame, t); };
        require_equal(upscale_single(lut, InterpKind::reference, nullptr, frame, 1),
                      upscale_single(lut, InterpKind::order_table, &order, frame, 1), "reference vs order_table");
        verified = "reference_branchy == order_table";
    } else if (mode == "tetralinear") {
        run = [&](int t) { return upscale_single(lut, InterpKind::tetralinear, nullptr, frame, t); };
        verified = "thread counts";
    } else if (mode == "fused_n6") {
        for (int k = 0; k < kBenchExperts; ++k) {
            bank.luts.push_back(random_table(seed + 10 + static_cast<std::uint64_t>(k)));
            bank.labels.push_back(k * 10);
        }
        WeightMap one_hot(width, height, kBenchExperts);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) one_hot.at(y, x)[2] = 1.0f;
        require_equal(spatial_branch(bank, order, one_hot, frame, 1),
                      upscale_single(bank.luts[2], InterpKind::order_table, &order, frame, 1),
                      "one-hot fusion vs single LUT");
        weights = random_simplex_weights(width, height, kBenchExperts, seed + 2);
        run = [&](int t) { return spatial_branch(bank, order, weights, frame, t); };
        verified = "one-hot fused_n6 == order_table";
    } else {
        run = [&](int t) { return srlut_rotation_ensemble(lut, order, frame, t); };
        std::vector<Image> passes;
        for (int k = 0; k < 4; ++k)
            passes.push_back(rotate90(upscale_single(lut, InterpKind::reference, nullptr, rotate90(frame, k), 1), -k));
        Image expect(passes[0].width, passes[0].height);
        for (std::size_t i = 0; i < expect.data.size(); ++i)
            expect.data[i] = static_cast<std::uint8_t>(
                (passes[0].data[i] + passes[1].data[i] + passes[2].data[i] + passes[3].data[i] + 2) / 4);
        require_equal(run(1), expect, "rotation ensemble vs reference passes");
        verified = "srlut_rot4 == 4 rotated reference passes";
    }
    if (threads != 1) {
        require_equal(run(1), run(threads), "thread count changed output");
        verified += "; threads 1 == " + std::to_string(threads);
    }

    for (int i = 0; i < warmup; ++i) run(threads);
    std::vector<double> ms;
    for (int i = 0; i < iterations; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const Image out = run(threads);
        const auto t1 = std::chrono::steady_clock::now();
        if (out.empty()) throw std::runtime_error("empty bench output");
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    BenchReport r = summarize_timings(mode, width, height, threads, std::move(ms));
    r.verified = verified;
    return r;
}

}  // namespace convlut
