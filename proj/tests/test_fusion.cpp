#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include "convlut/fusion.hpp"
#include "test_util.hpp"

using namespace convlut;

namespace {

ExpertBank random_bank(int n, int interval, int scale, std::uint64_t seed) {
    ExpertBank bank;
    for (int k = 0; k < n; ++k) {
        bank.luts.push_back(testing::random_lut(interval, scale, seed + static_cast<std::uint64_t>(k)));
        bank.labels.push_back(10 * k);
    }
    return bank;
}

ExpertBank constant_bank(int n, int interval, int scale, const std::vector<std::uint8_t>& values) {
    ExpertBank bank;
    for (int k = 0; k < n; ++k) {
        LutTable t(interval, scale);
        std::fill(t.values().begin(), t.values().end(), values[static_cast<std::size_t>(k)]);
        bank.luts.push_back(std::move(t));
        bank.labels.push_back(k);
    }
    return bank;
}

std::vector<float> random_simplex(int n, Rng& rng) {
    std::vector<float> w(static_cast<std::size_t>(n));
    double sum = 0.0;
    for (auto& v : w) sum += (v = static_cast<float>(-std::log(1.0 - rng.uniform())));
    for (auto& v : w) v = static_cast<float>(v / sum);
    return w;
}

Pixel4 random_pixel(Rng& rng) {
    return {static_cast<std::uint8_t>(rng.below(256)), static_cast<std::uint8_t>(rng.below(256)),
            static_cast<std::uint8_t>(rng.below(256)), static_cast<std::uint8_t>(rng.below(256))};
}

// Exact tetrahedral interpolation in double: walk the vertices in
// descending LSB order (ties: later component first).
std::vector<double> exact_interp(const LutTable& lut, Pixel4 p) {
    const int s = lut.interval();
    const int v[4] = {p.x, p.y, p.z, p.u};
    int h[4], l[4];
    for (int c = 0; c < 4; ++c) {
        h[c] = v[c] / s;
        l[c] = v[c] % s;
    }
    std::array<int, 4> idx{3, 2, 1, 0};
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return l[a] > l[b]; });
    std::vector<double> out(static_cast<std::size_t>(lut.patch_size()), 0.0);
    int cur[4] = {h[0], h[1], h[2], h[3]};
    double prev = s;
    for (int step = 0; step <= 4; ++step) {
        const double f = step < 4 ? l[idx[static_cast<std::size_t>(step)]] : 0.0;
        const double weight = (prev - f) / s;
        const std::uint8_t* e = lut.entry(std::min(cur[0], lut.bins() - 1), std::min(cur[1], lut.bins() - 1),
                                          std::min(cur[2], lut.bins() - 1), std::min(cur[3], lut.bins() - 1));
        for (std::size_t k = 0; k < out.size(); ++k) out[k] += weight * e[k];
        if (step < 4) cur[idx[static_cast<std::size_t>(step)]] += 1;
        prev = f;
    }
    return out;
}

}  // namespace

TEST_CASE("predict_weights") {
    const Image frame = testing::random_image(12, 9, 1, 1);
    SUBCASE("zero predictor gives uniform weights") {
        auto net = make_predictor(6, 1, 8);
        for (auto p : net.parameters()) std::fill(p.begin(), p.end(), 0.0f);
        const WeightMap w = predict_weights(net, frame, 6);
        CHECK(w.width == 12);
        CHECK(w.height == 9);
        CHECK(std::all_of(w.w.begin(), w.w.end(), [](float v) { return v == 1.0f / 6.0f; }));
    }
    SUBCASE("channel sums are one, deterministic") {
        const auto net = make_predictor(6, 7, 16);
        const WeightMap a = predict_weights(net, frame, 6);
        const WeightMap b = predict_weights(net, frame, 6);
        CHECK(a == b);
        for (int y = 0; y < 9; ++y)
            for (int x = 0; x < 12; ++x) {
                const auto px = a.at(y, x);
                CHECK(std::accumulate(px.begin(), px.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
                CHECK(std::all_of(px.begin(), px.end(), [](float v) { return v >= 0.0f; }));
            }
    }
    SUBCASE("softmax shift invariance") {
        const auto logits_net = make_predictor(4, 3, 8, 0.1f, false);
        auto logits = logits_net.forward(predictor_input(frame));
        const nn::Net<float> sm({nn::softmax_channels<float>()});
        const WeightMap a = to_weight_map(sm.forward(logits));
        Rng rng(5);
        for (int y = 0; y < logits.h; ++y)
            for (int x = 0; x < logits.w; ++x) {
                const float shift = static_cast<float>(rng.uniform(-20, 20));
                for (int c = 0; c < logits.c; ++c) logits.at(0, c, y, x) += shift;
            }
        const WeightMap b = to_weight_map(sm.forward(logits));
        for (std::size_t i = 0; i < a.w.size(); ++i) CHECK(std::abs(a.w[i] - b.w[i]) < 1e-6);
    }
    SUBCASE("expert count mismatch") {
        CHECK_THROWS_AS(predict_weights(make_predictor(3, 1, 4), frame, 6), std::invalid_argument);
    }
    SUBCASE("colour frames use luma") {
        const auto net = make_predictor(2, 9, 8);
        const Image rgb = testing::random_image(10, 10, 3, 4);
        CHECK(predict_weights(net, rgb, 2) == predict_weights(net, to_luma(rgb), 2));
    }
}

TEST_CASE("fuse_cell blends every vertex") {
    const ExpertBank bank = random_bank(6, 16, 2, 10);
    Rng rng(11);
    for (int t = 0; t < 200; ++t) {
        const auto w = random_simplex(6, rng);
        const Pixel4 p = random_pixel(rng);
        const FusedCell cell = fuse_cell(bank, w, p);
        const int h[4] = {p.x / 16, p.y / 16, p.z / 16, p.u / 16};
        for (int m = 0; m < 16; ++m) {
            const int i = std::min(h[0] + ((m >> 3) & 1), 16), j = std::min(h[1] + ((m >> 2) & 1), 16),
                      k = std::min(h[2] + ((m >> 1) & 1), 16), l = std::min(h[3] + (m & 1), 16);
            for (int sub = 0; sub < 4; ++sub) {
                double direct = 0.0;
                for (int e = 0; e < 6; ++e) direct += double{w[static_cast<std::size_t>(e)]} * bank.luts[static_cast<std::size_t>(e)].entry(i, j, k, l)[sub];
                const double got = cell.v[static_cast<std::size_t>(m * 4 + sub)];
                CHECK(std::abs(got - direct) <= 1e-6 * std::max(1.0, direct));
            }
        }
    }
}

TEST_CASE("fused_query") {
    const OrderTable order = build_order_table(16);
    SUBCASE("one-hot weights reproduce the single expert") {
        const ExpertBank bank = random_bank(6, 16, 4, 20);
        Rng rng(21);
        for (int t = 0; t < 20000; ++t) {
            const Pixel4 p = random_pixel(rng);
            const int k = static_cast<int>(rng.below(6));
            std::vector<float> w(6, 0.0f);
            w[static_cast<std::size_t>(k)] = 1.0f;
            REQUIRE(fused_query(bank, w, p, order) == tetra_interp_fast(bank.luts[static_cast<std::size_t>(k)], order, p));
        }
    }
    SUBCASE("half of zero and v") {
        for (int v : {0, 1, 7, 100, 201, 255}) {
            const ExpertBank bank = constant_bank(2, 16, 2, {0, static_cast<std::uint8_t>(v)});
            const std::vector<float> w{0.5f, 0.5f};
            const Patch out = fused_query(bank, w, {12, 99, 200, 255}, order);
            CHECK(out == Patch(4, static_cast<std::uint8_t>((v + 1) / 2)));
        }
    }
    SUBCASE("linearity over random simplex weights") {
        const ExpertBank bank = random_bank(6, 16, 2, 30);
        Rng rng(31);
        double worst = 0.0;
        for (int t = 0; t < 100000; ++t) {
            const auto w = random_simplex(6, rng);
            const Pixel4 p = random_pixel(rng);
            const Patch got = fused_query(bank, w, p, order);
            std::vector<double> expect(4, 0.0);
            for (int e = 0; e < 6; ++e) {
                const auto q = exact_interp(bank.luts[static_cast<std::size_t>(e)], p);
                for (std::size_t k = 0; k < 4; ++k) expect[k] += w[static_cast<std::size_t>(e)] * q[k];
            }
            for (std::size_t k = 0; k < 4; ++k) worst = std::max(worst, std::abs(got[k] - expect[k]));
        }
        CHECK(worst <= 0.5 + 1e-4);
    }
    SUBCASE("fetches: 5 per expert per subpixel") {
        const ExpertBank bank = random_bank(6, 16, 4, 40);
        const std::vector<float> w(6, 1.0f / 6);
        const OpCounts c = count_fused_ops(bank, w, {1, 2, 3, 4}, order);
        CHECK(c.vertex_fetches == 5u * 6 * 16);
        CHECK(c.branches == 0u);
        const ExpertBank one = random_bank(1, 16, 4, 41);
        const std::vector<float> w1{1.0f};
        CHECK(count_fused_ops(one, w1, {1, 2, 3, 4}, order).vertex_fetches == 5u * 16);
    }
    SUBCASE("argument checks") {
        const ExpertBank bank = random_bank(3, 16, 2, 50);
        const std::vector<float> w(2, 0.5f);
        CHECK_THROWS_AS(fused_query(bank, w, {}, order), std::invalid_argument);
        const std::vector<float> w3(3, 1.0f / 3);
        CHECK_THROWS_AS(fused_query(bank, w3, {}, build_order_table(32)), std::invalid_argument);
    }
}

TEST_CASE("interp_unrounded matches exact interpolation") {
    const LutTable lut = testing::random_lut(16, 3, 60);
    const OrderTable order = build_order_table(16);
    Rng rng(61);
    std::vector<float> out(9);
    for (int t = 0; t < 5000; ++t) {
        const Pixel4 p = random_pixel(rng);
        interp_unrounded(lut, order, p, out);
        const auto expect = exact_interp(lut, p);
        for (std::size_t k = 0; k < 9; ++k) REQUIRE(std::abs(out[k] - expect[k]) < 1e-4);
    }
}

namespace {

// Naive full-frame fusion: blend all 16 vertices, then interpolate.
Image naive_spatial(const ExpertBank& bank, const WeightMap& wm, const Image& frame) {
    const int r = bank.scale(), s = bank.interval();
    Image out(frame.width * r, frame.height * r, frame.channels);
    for (int c = 0; c < frame.channels; ++c)
        for (int y = 0; y < frame.height; ++y)
            for (int x = 0; x < frame.width; ++x) {
                const Pixel4 p{frame.clamped(c, y, x), frame.clamped(c, y, x + 1), frame.clamped(c, y + 1, x),
                               frame.clamped(c, y + 1, x + 1)};
                const FusedCell cell = fuse_cell(bank, wm.at(y, x), p);
                const int l[4] = {p.x % s, p.y % s, p.z % s, p.u % s};
                std::array<int, 4> idx{3, 2, 1, 0};
                std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return l[a] > l[b]; });
                int masks[5] = {0, 0, 0, 0, 15};
                for (int k = 1; k < 4; ++k) masks[k] = masks[k - 1] | (8 >> idx[static_cast<std::size_t>(k - 1)]);
                const float w[5] = {float(s - l[idx[0]]), float(l[idx[0]] - l[idx[1]]), float(l[idx[1]] - l[idx[2]]),
                                    float(l[idx[2]] - l[idx[3]]), float(l[idx[3]])};
                for (int a = 0; a < r; ++a)
                    for (int b = 0; b < r; ++b) {
                        const int k = a * r + b;
                        float acc = w[0] * cell.v[static_cast<std::size_t>(masks[0] * r * r + k)];
                        for (int j = 1; j < 5; ++j) acc += w[j] * cell.v[static_cast<std::size_t>(masks[j] * r * r + k)];
                        out.at(c, r * y + a, r * x + b) = clamp_u8(acc / float(s));
                    }
            }
    return out;
}

}  // namespace

TEST_CASE("spatial_branch") {
    const OrderTable order = build_order_table(16);
    SUBCASE("constant frame and bank") {
        const ExpertBank bank = constant_bank(3, 16, 4, {90, 90, 90});
        const Image out = spatial_branch(bank, order, uniform_weights(7, 5, 3), Image(7, 5, 1, 33));
        CHECK(out.width == 28);
        CHECK(out.height == 20);
        CHECK(std::all_of(out.data.begin(), out.data.end(), [](auto v) { return v == 90; }));
    }
    SUBCASE("single expert equals the plain order-table upscale") {
        const ExpertBank bank = random_bank(1, 16, 4, 70);
        const Image frame = testing::random_image(23, 17, 1, 71);
        const Image fused = spatial_branch(bank, order, uniform_weights(23, 17, 1), frame);
        CHECK(fused == upscale_single(bank.luts[0], InterpKind::order_table, &order, frame));
        CHECK(fused == upscale_single(bank.luts[0], InterpKind::reference, nullptr, frame));
    }
    SUBCASE("bit-identical to the naive oracle, any thread count") {
        const ExpertBank bank = random_bank(4, 16, 2, 80);
        const Image frame = testing::random_image(32, 32, 1, 81);
        const auto net = make_predictor(4, 82, 8);
        const WeightMap wm = predict_weights(net, frame, 4);
        const Image a = spatial_branch(bank, order, wm, frame, 1);
        CHECK(a == naive_spatial(bank, wm, frame));
        CHECK(a == spatial_branch(bank, order, wm, frame, 3));
        CHECK(a == spatial_branch(bank, order, net, frame, 2));
    }
    SUBCASE("colour channels share one weight map") {
        const ExpertBank bank = random_bank(2, 16, 2, 90);
        const Image rgb = testing::random_image(9, 8, 3, 91);
        const WeightMap wm = predict_weights(make_predictor(2, 92, 8), rgb, 2);
        const Image out = spatial_branch(bank, order, wm, rgb);
        CHECK(out.channels == 3);
        for (int c = 0; c < 3; ++c) CHECK(out.channel(c) == spatial_branch(bank, order, wm, rgb.channel(c)));
    }
    SUBCASE("one-pixel frame gives the diagonal entry") {
        const ExpertBank bank = random_bank(1, 16, 4, 100);
        for (int v : {0, 48, 240, 37, 255}) {
            const Image out = spatial_branch(bank, order, uniform_weights(1, 1, 1), Image(1, 1, 1, static_cast<std::uint8_t>(v)));
            // along the diagonal the simplex degenerates to a 1D lerp
            const int i = v / 16, l = v % 16;
            const int j = std::min(i + 1, 16);
            for (int k = 0; k < 16; ++k) {
                const int expect = ((16 - l) * bank.luts[0].entry(i, i, i, i)[k] + l * bank.luts[0].entry(j, j, j, j)[k] + 8) / 16;
                CHECK(out.data[static_cast<std::size_t>(k)] == expect);
            }
        }
    }
    SUBCASE("errors") {
        const ExpertBank bank = random_bank(2, 16, 2, 110);
        CHECK_THROWS_AS(spatial_branch(bank, order, uniform_weights(0, 0, 2), Image()), std::invalid_argument);
        CHECK_THROWS_AS(spatial_branch(bank, order, uniform_weights(4, 4, 3), Image(4, 4)), std::invalid_argument);
        CHECK_THROWS_AS(spatial_branch(bank, order, uniform_weights(4, 3, 2), Image(4, 4)), std::invalid_argument);
    }
}

namespace {

// One counter-clockwise quarter turn maps (row, col) in an H x W image to
// (W - 1 - col, row); the inverse maps (Y, X) back to (X, W - 1 - Y).
std::pair<int, int> turn(int y, int x, int w) { return {w - 1 - x, y}; }
std::pair<int, int> unturn(int y, int x, int w_original) { return {x, w_original - 1 - y}; }

Image brute_force_rotation(const LutTable& lut, const Image& img) {
    const int r = lut.scale();
    const int H = img.height, W = img.width;
    std::vector<int> sum(static_cast<std::size_t>(H) * r * W * r, 0);
    for (int k = 0; k < 4; ++k) {
        // dims of the k-times rotated LR and HR frames
        const int rh = (k % 2) ? W : H, rw = (k % 2) ? H : W;
        auto to_original = [&](int y, int x, int hh, int ww) {
            // undo k turns; the image before turn t had width = current height
            int cy = y, cx = x, ch = hh, cw = ww;
            for (int t = 0; t < k; ++t) {
                auto [oy, ox] = unturn(cy, cx, ch);
                cy = oy;
                cx = ox;
                std::swap(ch, cw);
            }
            return std::pair<int, int>{cy, cx};
        };
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                int y = i, x = j, ch = H, cw = W;
                for (int t = 0; t < k; ++t) {
                    auto [ny, nx] = turn(y, x, cw);
                    y = ny;
                    x = nx;
                    std::swap(ch, cw);
                }
                auto sample = [&](int yy, int xx) {
                    auto [oy, ox] = to_original(std::min(yy, rh - 1), std::min(xx, rw - 1), rh, rw);
                    return img.at(0, oy, ox);
                };
                const Patch tile = tetra_interp_reference(lut, {sample(y, x), sample(y, x + 1), sample(y + 1, x), sample(y + 1, x + 1)});
                for (int a = 0; a < r; ++a)
                    for (int b = 0; b < r; ++b) {
                        auto [oy, ox] = to_original(r * y + a, r * x + b, rh * r, rw * r);
                        sum[static_cast<std::size_t>(oy) * W * r + ox] += tile[static_cast<std::size_t>(a * r + b)];
                    }
            }
    }
    Image out(W * r, H * r);
    for (std::size_t i = 0; i < sum.size(); ++i) out.data[i] = static_cast<std::uint8_t>((sum[i] + 2) / 4);
    return out;
}

}  // namespace

TEST_CASE("srlut_rotation_ensemble") {
    const OrderTable order = build_order_table(16);
    const LutTable lut = testing::random_lut(16, 4, 120);
    SUBCASE("constant frame equals a single query") {
        // rotation-symmetric tiles: every subpixel of a vertex holds one value
        LutTable lut = testing::random_lut(16, 4, 124);
        for (std::size_t i = 0; i < lut.values().size(); i += 16)
            std::fill_n(lut.values().begin() + static_cast<std::ptrdiff_t>(i), 16, lut.values()[i]);
        const Image out = srlut_rotation_ensemble(lut, order, Image(6, 6, 1, 77));
        CHECK(out == upscale_single(lut, InterpKind::order_table, &order, Image(6, 6, 1, 77)));
    }
    SUBCASE("brute-force oracle") {
        const Image frame = testing::random_image(16, 16, 1, 121);
        CHECK(srlut_rotation_ensemble(lut, order, frame) == brute_force_rotation(lut, frame));
        const Image wide = testing::random_image(11, 6, 1, 122);
        CHECK(srlut_rotation_ensemble(lut, order, wide, 2) == brute_force_rotation(lut, wide));
    }
    SUBCASE("four times the fetches of a single pass") {
        const Image frame = testing::random_image(9, 7, 1, 123);
        ExpertBank bank;
        bank.luts.push_back(lut);
        bank.labels = {0};
        const OpCounts single = count_spatial_ops(bank, order, uniform_weights(9, 7, 1), frame);
        const OpCounts rot = count_rotation_ensemble_ops(lut, order, frame);
        CHECK(single.vertex_fetches == 9u * 7 * 16 * 5);
        CHECK(rot.vertex_fetches == 4 * single.vertex_fetches);
    }
}
