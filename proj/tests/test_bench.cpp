#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "convlut/bench.hpp"

using namespace convlut;

TEST_CASE("summarize_timings") {
    const BenchReport odd = summarize_timings("m", 4, 2, 1, {5.0, 1.0, 3.0});
    CHECK(odd.min_ms == 1.0);
    CHECK(odd.median_ms == 3.0);
    CHECK(odd.mean_ms == 3.0);
    CHECK(odd.fps == doctest::Approx(1000.0 / 3.0));
    CHECK(odd.iterations == 3);

    const BenchReport even = summarize_timings("m", 4, 2, 1, {4.0, 1.0, 2.0, 9.0});
    CHECK(even.median_ms == 3.0);
    CHECK(even.mean_ms == 4.0);

    // Left-skewed samples: the mean is lifted to the median.
    const BenchReport skew = summarize_timings("m", 4, 2, 1, {1.0, 10.0, 10.0});
    CHECK(skew.median_ms == 10.0);
    CHECK(skew.mean_ms == 10.0);

    CHECK_THROWS_AS(summarize_timings("m", 1, 1, 1, {}), std::invalid_argument);
}

TEST_CASE("bench_interp runs and verifies every mode") {
    REQUIRE(bench_modes().size() == 5);
    for (const auto& mode : bench_modes()) {
        for (int threads : {1, 3}) {
            const BenchReport r = bench_interp(mode, 24, 16, 3, threads, 1, 7);
            CHECK(r.mode == mode);
            CHECK(r.width == 24);
            CHECK(r.height == 16);
            CHECK(r.iterations == 3);
            CHECK(r.threads == threads);
            CHECK(r.min_ms <= r.median_ms);
            CHECK(r.median_ms <= r.mean_ms);
            CHECK(r.fps == doctest::Approx(1000.0 / r.median_ms));
            CHECK_FALSE(r.verified.empty());
            if (threads > 1) CHECK(r.verified.find("threads") != std::string::npos);
        }
    }
}

TEST_CASE("bench_interp argument errors") {
    CHECK_THROWS_AS(bench_interp("warp", 8, 8, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(bench_interp("order_table", 0, 8, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(bench_interp("order_table", 8, 8, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(bench_interp("order_table", 8, 8, 1, 1, -1), std::invalid_argument);
}
