// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "convlut/bench.hpp"
#include "convlut/common.hpp"
#include "convlut/degradation.hpp"
#include "convlut/fusion.hpp"
#include "convlut/interp.hpp"
#include "convlut/lut_builder.hpp"
#include "convlut/lut_core.hpp"
#include "convlut/metrics.hpp"
#include "convlut/nnet.hpp"
#include "convlut/training.hpp"

using namespace convlut;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and limits.
constexpr double kInterpTimeLimitS = 60.0;
constexpr double kSpeedupRequired = 10.0;
constexpr double kStorageRelTol = 0.01;
constexpr double kPaperBankMiB = 7.644;
constexpr int kAffineTol = 1;
constexpr double kFusionTol = 0.5 + 1e-4;
constexpr double kGradRelTol = 1e-3;
constexpr double kMixtureMarginDb = 0.1;
constexpr double kMixtureTimeLimitS = 30.0 * 60.0;
constexpr double kSmokeTimeLimitS = 60.0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

LutTable random_lut(int interval, int scale, std::uint64_t seed) {
    LutTable lut(interval, scale);
    Rng rng(seed);
    for (auto& v : lut.values()) v = static_cast<std::uint8_t>(rng.below(256));
    return lut;
}

Pixel4 random_pixel(Rng& rng) {
    return {static_cast<std::uint8_t>(rng.below(256)), static_cast<std::uint8_t>(rng.below(256)),
            static_cast<std::uint8_t>(rng.below(256)), static_cast<std::uint8_t>(rng.below(256))};
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("convlut_accept_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int run_cli(std::vector<std::string> args, std::string* out = nullptr) {
    args.insert(args.begin(), "convlut");
    std::ostringstream o, e;
    const int code = cli::run(args, o, e);
    if (out != nullptr) *out = o.str();
    if (code != 0) std::cerr << "  cli failed (" << code << "): " << e.str();
    return code;
}

std::map<std::string, std::string> tree(const fs::path& dir) {
    std::map<std::string, std::string> m;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) {
            std::ifstream f(e.path(), std::ios::binary);
            m[fs::relative(e.path(), dir).string()] = {std::istreambuf_iterator<char>(f), {}};
        }
    return m;
}

// ---- 1 ----

Outcome interpolation_equivalence() {
    const auto t0 = std::chrono::steady_clock::now();
    const LutTable lut = random_lut(16, 4, 101);
    const OrderTable order = build_order_table(16);
    Rng rng(102);
    long mismatches = 0, queries = 0;
    auto compare = [&](Pixel4 p) {
        mismatches += tetra_interp_fast(lut, order, p) != tetra_interp_reference(lut, p);
        ++queries;
    };
    for (int anchor = 0; anchor < 8; ++anchor) {
        int msb[4];
        for (int& m : msb) m = static_cast<int>(rng.below(16));
        for (int a = 0; a < 16; ++a)
            for (int b = 0; b < 16; ++b)
                for (int c = 0; c < 16; ++c)
                    for (int d = 0; d < 16; ++d)
                        compare({static_cast<std::uint8_t>(msb[0] * 16 + a), static_cast<std::uint8_t>(msb[1] * 16 + b),
                                 static_cast<std::uint8_t>(msb[2] * 16 + c), static_cast<std::uint8_t>(msb[3] * 16 + d)});
    }
    for (int i = 0; i < 1'000'000; ++i) compare(random_pixel(rng));
    const double s = seconds_since(t0);
    return {mismatches == 0 && s < kInterpTimeLimitS,
            std::to_string(queries) + " queries, " + std::to_string(mismatches) + " mismatches, " + fmt("%.1f s", s)};
}

// ---- 2 ----

Outcome operation_counts() {
    const LutTable lut = random_lut(16, 4, 201);
    const OrderTable order = build_order_table(16);
    const std::uint64_t sub = 16;
    Rng rng(202);
    bool ok = true;
    for (int i = 0; i < 10'000 && ok; ++i) {
        const Pixel4 p = random_pixel(rng);
        const OpCounts fast = count_query_ops(InterpKind::order_table, lut, &order, p);
        const OpCounts tl = count_query_ops(InterpKind::tetralinear, lut, nullptr, p);
        ok = fast.vertex_fetches == 5 * sub && fast.multiplications == 5 * sub && fast.branches == 0 &&
             tl.vertex_fetches == 16 * sub && tl.multiplications == 16 * sub;
    }
    return {ok, "order table 5 fetches / 5 mults / 0 branches, tetralinear 16 / 16 per subpixel over 10^4 inputs"};
}

// ---- 3 ----

Outcome acceleration() {
    const BenchReport ref = bench_interp("reference_branchy", 320, 180, 15, 1, 2);
    const BenchReport fast = bench_interp("order_table", 320, 180, 15, 1, 2);
    const double ratio = ref.median_ms / fast.median_ms;
    return {ratio >= kSpeedupRequired,
            fmt("reference %.2f ms, order table %.2f ms (median), speedup %.2fx, need >= %.0fx", ref.median_ms,
                fast.median_ms, ratio, kSpeedupRequired)};
}

// ---- 4 ----

Outcome storage() {
    const std::vector<int> labels{0, 10, 20, 30, 40, 50};
    ExpertBank bank;
    for (std::size_t k = 0; k < labels.size(); ++k) {
        bank.luts.push_back(random_lut(16, 4, 300 + k));
        bank.labels.push_back(labels[k]);
    }
    const auto bytes = serialize_bank(bank);
    LutFileHeader h;
    h.expert_count = 6;
    h.labels = labels;
    const std::uint64_t payload = bytes.size() - h.encoded_size();
    const double mib = static_cast<double>(payload) / (1024.0 * 1024.0);
    const double rel = std::abs(mib - kPaperBankMiB) / kPaperBankMiB;
    const std::uint64_t full = lut_size_bytes(1, 4, 6);
    const bool ok = payload == 8'018'016u && payload == lut_size_bytes(16, 4, 6) && rel < kStorageRelTol &&
                    full == (384ull << 30);
    return {ok, fmt("payload %.0f B + %.0f B header = %.4f MiB (rel. diff %.5f)", static_cast<double>(payload),
                    static_cast<double>(h.encoded_size()), mib, rel) +
                    fmt("; unsampled table %.0f GiB", static_cast<double>(full >> 30))};
}

// ---- 5 ----

Outcome lattice_and_affine() {
    const LutTable lut = random_lut(16, 4, 501);
    const OrderTable order = build_order_table(16);
    bool exact = true;
    Rng rng(502);
    for (int i = 0; i < 10'000; ++i) {
        const int m[4] = {static_cast<int>(rng.below(16)), static_cast<int>(rng.below(16)),
                          static_cast<int>(rng.below(16)), static_cast<int>(rng.below(16))};
        const Pixel4 p{static_cast<std::uint8_t>(16 * m[0]), static_cast<std::uint8_t>(16 * m[1]),
                       static_cast<std::uint8_t>(16 * m[2]), static_cast<std::uint8_t>(16 * m[3])};
        const std::uint8_t* stored = lut.entry(m[0], m[1], m[2], m[3]);
        const Patch expect(stored, stored + lut.patch_size());
        exact = exact && tetra_interp_fast(lut, order, p) == expect && tetra_interp_reference(lut, p) == expect;
    }

    // Affine oracle with its own coefficients per output subpixel.
    std::vector<std::array<double, 5>> coef(16);
    for (auto& c : coef) {
        c[0] = rng.uniform(20, 60);
        for (int j = 1; j < 5; ++j) c[j] = rng.uniform(0.0, 0.25);
    }
    auto affine = [&](int k, double x, double y, double z, double u) {
        const auto& c = coef[static_cast<std::size_t>(k)];
        return c[0] + c[1] * x + c[2] * y + c[3] * z + c[4] * u;
    };
    SrOracle oracle{"affine", 4, 0, [&](Pixel4 p, std::span<std::uint8_t> out) {
                        for (int k = 0; k < 16; ++k) out[static_cast<std::size_t>(k)] = clamp_u8(affine(k, p.x, p.y, p.z, p.u));
                    }};
    const LutTable built = build_lut(oracle, 16);
    int worst = 0, probes = 0;
    while (probes < 10'000) {
        // Cells whose vertices are not clamped to 255 on the lattice.
        const Pixel4 p{static_cast<std::uint8_t>(rng.below(240)), static_cast<std::uint8_t>(rng.below(240)),
                       static_cast<std::uint8_t>(rng.below(240)), static_cast<std::uint8_t>(rng.below(240))};
        const Patch got = tetra_interp_fast(built, order, p);
        for (int k = 0; k < 16; ++k) {
            const double want = affine(k, p.x, p.y, p.z, p.u);
            worst = std::max(worst, static_cast<int>(std::ceil(std::abs(got[static_cast<std::size_t>(k)] - want) - 1e-9)));
        }
        ++probes;
    }
    return {exact && worst <= kAffineTol,
            std::string("lattice queries ") + (exact ? "exact" : "NOT exact") + ", affine max error " +
                std::to_string(worst) + " gray level(s) over 10^4 probes"};
}

// ---- 6 ----

Outcome fusion_linearity() {
    ExpertBank bank;
    for (int k = 0; k < 6; ++k) {
        bank.luts.push_back(random_lut(16, 4, 600 + static_cast<std::uint64_t>(k)));
        bank.labels.push_back(10 * k);
    }
    const OrderTable order = build_order_table(16);
    Rng rng(606);
    double worst = 0.0;
    std::vector<float> w(6), tile(16);
    std::vector<std::vector<float>> per(6, std::vector<float>(16));
    for (int i = 0; i < 100'000; ++i) {
        const Pixel4 p = random_pixel(rng);
        double sum = 0.0;
        for (auto& v : w) sum += v = static_cast<float>(-std::log(1.0 - rng.uniform()));
        for (auto& v : w) v = static_cast<float>(v / sum);
        const Patch fused = fused_query(bank, w, p, order);
        for (int k = 0; k < 6; ++k) interp_unrounded(bank.luts[static_cast<std::size_t>(k)], order, p, per[static_cast<std::size_t>(k)]);
        for (int s = 0; s < 16; ++s) {
            double expect = 0.0;
            for (int k = 0; k < 6; ++k) expect += static_cast<double>(w[static_cast<std::size_t>(k)]) * per[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)];
            worst = std::max(worst, std::abs(fused[static_cast<std::size_t>(s)] - expect));
        }
    }
    long one_hot_mismatch = 0;
    for (int i = 0; i < 10'000; ++i) {
        const Pixel4 p = random_pixel(rng);
        const int k = static_cast<int>(rng.below(6));
        std::fill(w.begin(), w.end(), 0.0f);
        w[static_cast<std::size_t>(k)] = 1.0f;
        one_hot_mismatch += fused_query(bank, w, p, order) != tetra_interp_fast(bank.luts[static_cast<std::size_t>(k)], order, p);
    }
    return {worst <= kFusionTol && one_hot_mismatch == 0,
            fmt("max |fused - sum w_k interp_k| = %.4f over 10^5 pixels; ", worst) + std::to_string(one_hot_mismatch) +
                " one-hot mismatches over 10^4"};
}

// ---- 7 ----

double weighted_sum(const nn::Tensor<double>& y, const nn::Tensor<double>& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.v.size(); ++i) s += y.v[i] * r.v[i];
    return s;
}

double rel_err(double a, double n) {
    const double scale = std::max(std::abs(a), std::abs(n));
    return scale < 1e-7 ? 0.0 : std::abs(a - n) / scale;
}

// Worst relative error over up to 50 sampled parameters of `net`.
double layer_fd(nn::Net<double> net, nn::Tensor<double> x, std::uint64_t seed) {
    Rng rng(seed);
    for (auto p : net.parameters())
        for (auto& v : p) v = rng.uniform(-0.5, 0.5);
    for (auto& l : net.layers)
        if (l.kind == nn::LayerKind::instance_norm)
            for (auto& g : l.weight) g = rng.uniform(0.5, 1.5);
    for (auto& v : x.v) {
        v = rng.uniform(-1, 1);
        if (std::abs(v) < 0.05) v = v < 0 ? -0.05 : 0.05;
    }
    const nn::Tensor<double> y = net.forward(x);
    nn::Tensor<double> r(y.n, y.c, y.h, y.w);
    for (auto& v : r.v) v = rng.uniform(-1, 1);
    nn::Tape<double> tape;
    net.forward(x, tape);
    auto grads = net.zero_grads();
    const nn::Tensor<double> dx = net.backward(tape, r, grads);
    auto params = net.parameters();
    auto gv = nn::Net<double>::gradient_views(grads);
    const double h = 1e-3;
    double worst = 0.0;
    std::vector<std::pair<std::size_t, std::size_t>> all;
    for (std::size_t t = 0; t < params.size(); ++t)
        for (std::size_t i = 0; i < params[t].size(); ++i) all.emplace_back(t, i);
    for (int k = 0; k < 50 && !all.empty(); ++k) {
        const auto [t, i] = all[rng.below(all.size())];
        const double o = params[t][i];
        params[t][i] = o + h;
        const double up = weighted_sum(net.forward(x), r);
        params[t][i] = o - h;
        const double dn = weighted_sum(net.forward(x), r);
        params[t][i] = o;
        worst = std::max(worst, rel_err(gv[t][i], (up - dn) / (2 * h)));
    }
    for (int k = 0; k < 20; ++k) {
        const std::size_t i = rng.below(x.v.size());
        const double o = x.v[i];
        x.v[i] = o + h;
        const double up = weighted_sum(net.forward(x), r);
        x.v[i] = o - h;
        const double dn = weighted_sum(net.forward(x), r);
        x.v[i] = o;
        worst = std::max(worst, rel_err(dx.v[i], (up - dn) / (2 * h)));
    }
    return worst;
}

Outcome gradients() {
    using namespace nn;
    double worst = 0.0;
    std::string detail;
    auto note = [&](const char* name, double e) {
        worst = std::max(worst, e);
        detail += std::string(" ") + name + fmt(" %.1e", e);
    };
    note("conv3x3", layer_fd(Net<double>({conv3x3<double>(3, 4)}), Tensor<double>(2, 3, 5, 6), 701));
    note("instance_norm", layer_fd(Net<double>({instance_norm<double>(3)}), Tensor<double>(2, 3, 4, 5), 702));
    note("leaky_relu", layer_fd(Net<double>({leaky_relu<double>(0.1)}), Tensor<double>(2, 3, 4, 5), 703));
    note("pixel_shuffle", layer_fd(Net<double>({pixel_shuffle<double>(2)}), Tensor<double>(1, 8, 3, 4), 704));
    note("softmax", layer_fd(Net<double>({softmax_channels<double>()}), Tensor<double>(2, 5, 3, 3), 705));

    // Charbonnier.
    {
        Rng rng(706);
        std::vector<double> p(50), t(50), g(50);
        for (std::size_t i = 0; i < 50; ++i) {
            p[i] = rng.uniform(-1, 1);
            t[i] = rng.uniform(-1, 1);
        }
        charbonnier_loss<double>(p, t, 1e-3, g);
        double e = 0.0;
        for (std::size_t i = 0; i < 50; ++i) {
            const double h = 1e-6, o = p[i];
            p[i] = o + h;
            const double up = charbonnier_loss<double>(p, t, 1e-3);
            p[i] = o - h;
            const double dn = charbonnier_loss<double>(p, t, 1e-3);
            p[i] = o;
            e = std::max(e, rel_err(g[i], (up - dn) / (2 * h)));
        }
        note("charbonnier", e);
    }

    // End to end through the fused query: 50 predictor + temporal parameters.
    {
        const fs::path dir = scratch("grad");
        const auto clip = synth_clip(3, 64, 64, 707);
        fs::create_directories(dir / "hr");
        for (std::size_t i = 0; i < clip.size(); ++i) write_pnm(clip[i], dir / "hr" / ("f" + std::to_string(i) + ".ppm"));
        DatasetOptions o;
        o.fixed_qp = 30;
        generate_dataset(dir / "hr", dir / "ds", o);
        const auto frames = training_frames(load_dataset(dir / "ds" / "manifest.jsonl"));
        const std::vector<int> labels{0, 50};
        const ExpertBank bank = build_bank(labels, OracleKind::qp_adaptive, 16, 4);
        const TrainBatch b = make_batch(frames, {{0, 0, 0}, {2, 4, 7}}, 6, bank, build_order_table(16));
        Model m = init_model(2, 4, 4, 708, true);
        Rng rng(709);
        for (auto& v : m.temporal.layers[6].weight) v = static_cast<float>(rng.uniform(-0.2, 0.2));
        Net<double> pred = m.predictor.cast<double>(), temp = m.temporal.cast<double>();
        ModelGrads<double> g;
        model_loss<double>(pred, &temp, b, 1e-3, &g);
        auto params = pred.parameters();
        auto gv = Net<double>::gradient_views(g.predictor);
        for (auto p : temp.parameters()) params.push_back(p);
        for (auto q : Net<double>::gradient_views(g.temporal)) gv.push_back(q);
        double e = 0.0;
        for (int k = 0; k < 50; ++k) {
            std::size_t v;
            do v = rng.below(params.size());
            while (params[v].empty());
            const std::size_t i = rng.below(params[v].size());
            const double h = 1e-6, o = params[v][i];
            params[v][i] = o + h;
            const double up = model_loss<double>(pred, &temp, b, 1e-3, nullptr);
            params[v][i] = o - h;
            const double dn = model_loss<double>(pred, &temp, b, 1e-3, nullptr);
            params[v][i] = o;
            e = std::max(e, rel_err(gv[v][i], (up - dn) / (2 * h)));
        }
        note("end-to-end", e);
    }
    return {worst < kGradRelTol, "max rel. error:" + detail};
}

// ---- 8 ----

std::vector<StreamSample> fixed_qp_clip(const fs::path& root, const std::string& name, int frames, std::uint64_t seed,
                                        int qp) {
    const auto clip = synth_clip(frames, 128, 128, seed);
    fs::create_directories(root / (name + "_hr"));
    char buf[32];
    for (std::size_t i = 0; i < clip.size(); ++i) {
        std::snprintf(buf, sizeof buf, "frame_%04zu.ppm", i);
        write_pnm(clip[i], root / (name + "_hr") / buf);
    }
    DatasetOptions o;
    o.fixed_qp = qp;
    o.seed = seed;
    generate_dataset(root / (name + "_hr"), root / name, o);
    return load_dataset(root / name / "manifest.jsonl");
}

double mean_psnr(const EvalReport& r) {
    double s = 0.0;
    for (const auto& f : r.frames) s += f.psnr;
    return s / static_cast<double>(r.frames.size());
}

Outcome mixture_usefulness() {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path root = scratch("mixture");
    std::vector<StreamSample> train_set, val_set;
    for (std::uint64_t seed = 1; seed <= 6; ++seed)
        for (int qp : {0, 50}) {
            auto s = fixed_qp_clip(root, "train_" + std::to_string(seed) + "_" + std::to_string(qp), 4, seed, qp);
            train_set.insert(train_set.end(), s.begin(), s.end());
        }
    for (std::uint64_t seed = 101; seed <= 103; ++seed)
        for (int qp : {0, 50}) {
            auto s = fixed_qp_clip(root, "val_" + std::to_string(seed) + "_" + std::to_string(qp), 3, seed, qp);
            val_set.insert(val_set.end(), s.begin(), s.end());
        }
    const std::vector<int> labels{0, 50};
    ExpertBank bank = build_bank(labels, OracleKind::qp_adaptive, 16, 4);
    double best_single = -1e9;
    std::string singles;
    for (std::size_t k = 0; k < 2; ++k) {
        ExpertBank one;
        one.luts = {bank.luts[k]};
        one.labels = {labels[k]};
        const double p = mean_psnr(evaluate(Model{}, one, val_set, false));
        singles += fmt("QP%.0f expert %.3f dB, ", labels[k], p);
        best_single = std::max(best_single, p);
    }
    TrainConfig cfg;
    cfg.hidden = 16;
    cfg.patch = 32;
    cfg.batch = 8;
    cfg.epochs = 6;
    cfg.steps_per_epoch = 60;
    cfg.lr = 3e-4;
    cfg.seed = 3;
    const TrainResult r = train(cfg, train_set, val_set, bank);
    const double fused = mean_psnr(evaluate(r.model, bank, val_set, true));
    const double spatial = mean_psnr(evaluate(r.model, bank, val_set, false));
    const double s = seconds_since(t0);
    return {fused >= best_single - kMixtureMarginDb && s < kMixtureTimeLimitS,
            singles + fmt("trained fused %.3f dB (spatial branch alone %.3f dB), %.0f s", fused, spatial, s)};
}

// ---- 9 ----

Outcome degradation_monotonicity() {
    const fs::path root = scratch("degradation");
    const auto clip = synth_clip(12, 256, 192, 901);
    fs::create_directories(root / "hr");
    for (std::size_t i = 0; i < clip.size(); ++i) write_pnm(clip[i], root / "hr" / ("f" + std::to_string(100 + i) + ".ppm"));

    bool qp_ok = true;
    std::vector<double> prev;
    for (int qp = 0; qp <= 50; qp += 5) {
        DatasetOptions o;
        o.fixed_qp = qp;
        const auto recs = generate_dataset(root / "hr", root / ("qp" + std::to_string(qp)), o);
        std::vector<double> cur;
        for (const auto& r : recs) cur.push_back(r.psnr.value_or(0.0));
        for (std::size_t i = 0; i < prev.size(); ++i) qp_ok = qp_ok && cur[i] <= prev[i];
        prev = cur;
    }

    std::string detail = std::string("per-frame PSNR non-increasing over QP 0..50: ") + (qp_ok ? "yes" : "NO") + ";";
    std::vector<double> qps, psnrs;
    for (const auto profile : {BandwidthProfile::kbps100, BandwidthProfile::kbps500, BandwidthProfile::mbps1}) {
        DatasetOptions o;
        o.profile = profile;
        o.seed = 902;
        const auto recs = generate_dataset(root / "hr", root / to_string(profile), o);
        double q = 0.0, p = 0.0;
        int n = 0;
        for (const auto& r : recs)
            if (!r.dropped) {
                q += r.qp_mean;
                p += std::min(r.psnr.value_or(0.0), 99.0);
                ++n;
            }
        qps.push_back(q / n);
        psnrs.push_back(p / n);
        detail += " " + to_string(profile) + fmt(" QP %.1f PSNR %.2f dB;", q / n, p / n);
    }
    const bool bw_ok = qps[0] > qps[1] && qps[1] > qps[2] && psnrs[0] < psnrs[1] && psnrs[1] < psnrs[2];
    return {qp_ok && bw_ok, detail};
}

// ---- 10 ----

bool pipeline(const fs::path& dir, const std::string& threads, const std::string& clip) {
    const std::string d = dir.string();
    const std::string T = threads;
    return run_cli({"synth-clip", "--frames", "6", "--size", "96x64", "--seed", "4", "--out", d + "/clip", "--threads", T}) == 0 &&
           run_cli({"simulate", "--hr-dir", clip, "--profile", "100kbps", "--seed", "7", "--out", d + "/ds", "--threads", T}) == 0 &&
           run_cli({"simulate", "--hr-dir", d + "/clip", "--qp", "30", "--out", d + "/ds_qp", "--threads", T}) == 0 &&
           run_cli({"simulate", "--synth", "5", "--size", "64x48", "--seed", "8", "--out", d + "/ds_syn", "--threads", T}) == 0 &&
           run_cli({"build-lut", "--qp-labels", "0,25,50", "--out", d + "/bank.clut", "--threads", T}) == 0 &&
           run_cli({"train", "--data", d + "/ds/manifest.jsonl", "--data", d + "/ds_qp/manifest.jsonl", "--val",
                    d + "/ds_syn/manifest.jsonl", "--bank", d + "/bank.clut", "--out", d + "/w.bin", "--epochs", "2",
                    "--steps", "4", "--patch", "16", "--batch", "4", "--hidden", "8", "--seed", "11", "--finetune-lut",
                    "--bank-out", d + "/tuned.clut", "--log", d + "/train.jsonl", "--threads", T}) == 0 &&
           run_cli({"upscale", "--data", d + "/ds/manifest.jsonl", "--bank", d + "/tuned.clut", "--weights", d + "/w.bin",
                    "--out", d + "/sr", "--threads", T}) == 0 &&
           run_cli({"upscale", "--data", d + "/ds/manifest.jsonl", "--bank", d + "/tuned.clut", "--weights", d + "/w.bin",
                    "--out", d + "/sr_spatial", "--no-temporal", "--threads", T}) == 0 &&
           run_cli({"eval", "--data", d + "/ds/manifest.jsonl", "--data", d + "/ds_qp/manifest.jsonl", "--bank",
                    d + "/tuned.clut", "--weights", d + "/w.bin", "--records", d + "/eval.jsonl", "--threads", T}) == 0;
}

Outcome determinism(const std::string& clip) {
    const fs::path a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
    if (!pipeline(a, "1", clip) || !pipeline(b, "1", clip) || !pipeline(c, "4", clip)) return {false, "pipeline failed"};
    const auto ta = tree(a);
    const bool same_b = ta == tree(b), same_c = ta == tree(c);
    return {same_b && same_c, std::to_string(ta.size()) + " output files; rerun " + (same_b ? "identical" : "DIFFERS") +
                                  ", 4 threads " + (same_c ? "identical" : "DIFFERS")};
}

// ---- 11 ----

Outcome smoke(const std::string& clip) {
    const fs::path dir = scratch("smoke");
    const std::string d = dir.string();
    const auto t0 = std::chrono::steady_clock::now();
    std::string table;
    const bool ran =
        run_cli({"simulate", "--hr-dir", clip, "--out", d + "/ds"}) == 0 &&
        run_cli({"build-lut", "--out", d + "/bank.clut"}) == 0 &&
        run_cli({"train", "--data", d + "/ds/manifest.jsonl", "--bank", d + "/bank.clut", "--out", d + "/w.bin",
                 "--epochs", "2"}) == 0 &&
        run_cli({"upscale", "--data", d + "/ds/manifest.jsonl", "--bank", d + "/bank.clut", "--weights", d + "/w.bin",
                 "--out", d + "/sr"}) == 0 &&
        run_cli({"upscale", "--data", d + "/ds/manifest.jsonl", "--bank", d + "/bank.clut", "--weights", d + "/w.bin",
                 "--out", d + "/sr_spatial", "--no-temporal"}) == 0 &&
        run_cli({"eval", "--data", d + "/ds/manifest.jsonl", "--bank", d + "/bank.clut", "--weights", d + "/w.bin"},
                &table) == 0;
    const double s = seconds_since(t0);
    if (!ran) return {false, "pipeline failed"};

    const ExpertBank bank = load_bank(dir / "bank.clut");
    const OrderTable order = build_order_table(bank.interval());
    const Model m = load_model(dir / "w.bin");
    int frames = 0, identical = 0;
    char name[32];
    for (const auto& sample : load_dataset(dir / "ds" / "manifest.jsonl")) {
        if (sample.dropped) continue;
        std::snprintf(name, sizeof name, "sr_%04d.ppm", sample.frame_index);
        ++frames;
        identical += read_pnm(dir / "sr_spatial" / name) == spatial_branch(bank, order, m.predictor, *sample.lr);
    }
    const bool table_ok = table.find("PSNR") != std::string::npos && table.find("500kbps") != std::string::npos;
    std::string row = table.substr(table.find('\n') + 1);
    if (!row.empty() && row.back() == '\n') row.pop_back();
    return {table_ok && frames > 0 && identical == frames && s < kSmokeTimeLimitS,
            fmt("%.1f s; ", s) + std::to_string(identical) + "/" + std::to_string(frames) +
                " --no-temporal frames equal the spatial branch; table row: " + row};
}

}  // namespace

int main(int argc, char** argv) {
    const std::string clip = argc > 1 ? argv[1] : std::string(CONVLUT_SOURCE_DIR) + "/data/clip64";
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "interpolation equivalence", interpolation_equivalence},
        {2, "operation-count contract", operation_counts},
        {3, "acceleration", acceleration},
        {4, "storage formula", storage},
        {5, "lattice exactness and affine reproduction", lattice_and_affine},
        {6, "fusion linearity", fusion_linearity},
        {7, "gradient correctness", gradients},
        {8, "mixture usefulness", mixture_usefulness},
        {9, "degradation monotonicity", degradation_monotonicity},
        {10, "determinism", [&] { return determinism(clip); }},
        {11, "end-to-end smoke", [&] { return smoke(clip); }},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << c.id << ". " << c.name << ": " << o.detail << std::endl;
    }
    std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
