#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "convlut/temporal.hpp"
#include "test_util.hpp"

using namespace convlut;

namespace {

void randomize(nn::Net<float>& net, std::uint64_t seed) {
    Rng rng(seed);
    for (auto p : net.parameters())
        for (auto& v : p) v = static_cast<float>(rng.uniform(-0.2, 0.2));
}

}  // namespace

TEST_CASE("temporal_branch") {
    SUBCASE("fresh net adds nothing") {
        const auto net = make_temporal_net(1, 4, 1, 16);
        const Image cur = testing::random_image(10, 6, 1, 2);
        const auto res = temporal_branch(net, cur, nullptr, nullptr, 8);
        CHECK(std::all_of(res.v.begin(), res.v.end(), [](float v) { return v == 0.0f; }));
        const Image spatial = testing::random_image(40, 24, 1, 3);
        CHECK(combine(spatial, res) == spatial);
    }
    SUBCASE("all-zero parameters give a zero residual") {
        auto net = make_temporal_net(1, 4, 1, 8);
        for (auto p : net.parameters()) std::fill(p.begin(), p.end(), 0.0f);
        const auto res = temporal_branch(net, testing::random_image(8, 8, 1, 1), nullptr, nullptr, 8);
        CHECK(std::all_of(res.v.begin(), res.v.end(), [](float v) { return v == 0.0f; }));
    }
    SUBCASE("output shape") {
        const auto net = make_temporal_net(1, 4, 1, 4);
        const Image cur(240, 128);
        const auto res = temporal_branch(net, cur, &cur, nullptr, 8);
        CHECK(res.w == 960);
        CHECK(res.h == 512);
        CHECK(res.c == 1);
        const auto rgb = temporal_branch(make_temporal_net(3, 2, 1, 4), Image(5, 3, 3), nullptr, nullptr, 8);
        CHECK(rgb.c == 3);
        CHECK(rgb.w == 10);
    }
    SUBCASE("absent previous frame equals a static repeat") {
        auto net = make_temporal_net(1, 2, 5, 8);
        randomize(net, 6);
        const Image cur = testing::random_image(9, 7, 1, 7);
        const MotionField still(9, 7);
        const auto a = temporal_branch(net, cur, nullptr, nullptr, 8);
        const auto b = temporal_branch(net, cur, &cur, &still, 8);
        CHECK(a.v == b.v);
        const Image other = testing::random_image(9, 7, 1, 8);
        CHECK(temporal_branch(net, cur, &other, &still, 8).v != a.v);
    }
    SUBCASE("input layout") {
        const Image cur(3, 2, 1, 51), prev(3, 2, 1, 102);
        MotionField mf(3, 2);
        mf.dx[4] = 4;
        mf.dy[1] = -8;
        const auto x = temporal_input(cur, &prev, &mf, 8);
        CHECK(x.c == 4);
        CHECK(x.at(0, 0, 1, 2) == doctest::Approx(0.2));
        CHECK(x.at(0, 1, 0, 0) == doctest::Approx(0.4));
        CHECK(x.at(0, 2, 1, 1) == 0.5f);
        CHECK(x.at(0, 3, 0, 1) == -1.0f);
    }
    SUBCASE("size mismatches") {
        const auto net = make_temporal_net(1, 2, 1, 4);
        const Image cur(6, 6), prev(6, 5);
        CHECK_THROWS_AS(temporal_branch(net, cur, &prev, nullptr, 8), std::invalid_argument);
        const MotionField mf(5, 6);
        CHECK_THROWS_AS(temporal_branch(net, cur, nullptr, &mf, 8), std::invalid_argument);
    }
}

TEST_CASE("combine") {
    const Image spatial = testing::random_image(16, 12, 1, 1);
    nn::Tensor<float> res(1, 1, 12, 16);
    CHECK(combine(spatial, res) == spatial);

    std::fill(res.v.begin(), res.v.end(), 300.0f);
    const Image sat = combine(spatial, res);
    CHECK(std::all_of(sat.data.begin(), sat.data.end(), [](auto v) { return v == 255; }));

    Rng rng(2);
    for (auto& v : res.v) v = static_cast<float>(rng.uniform(-40, 40));
    res.v[0] = 0.5f - static_cast<float>(spatial.data[0]);  // exact half, rounds up
    const Image out = combine(spatial, res);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double sum = static_cast<float>(spatial.data[i]) + res.v[i];
        const long r = sum < 0 ? -std::lround(-sum) : std::lround(sum);
        CHECK(out.data[i] == std::clamp<long>(r, 0, 255));
    }
    CHECK(out.data[0] == 1);

    CHECK_THROWS_AS(combine(spatial, nn::Tensor<float>(1, 1, 12, 15)), std::invalid_argument);
}
