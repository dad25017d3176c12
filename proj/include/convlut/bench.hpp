#pragma once

// Latency harness for the LUT query paths.

#include <cstdint>
#include <string>
#include <vector>

namespace convlut {

struct BenchReport {
    std::string mode;
    int width = 0, height = 0;
    int iterations = 0;
    int threads = 1;
    double min_ms = 0.0, median_ms = 0.0, mean_ms = 0.0;
    double fps = 0.0;  ///< 1000 / median_ms
    std::string verified;  ///< what the pre-timing check compared
};

/// reference_branchy, order_table, tetralinear, fused_n6, srlut_rot4.
const std::vector<std::string>& bench_modes();

/// Upscales a fixed-seed random gray frame of width x height by 4 with
/// interval-16 LUTs, `warmup` untimed runs then `iterations` timed ones.
/// Before timing, outputs that must agree are compared (reference vs order
/// table, one-hot fusion vs single LUT, thread counts); a disagreement throws
/// std::runtime_error. Unknown modes throw std::invalid_argument.
BenchReport bench_interp(const std::string& mode, int width, int height, int iterations, int threads,
                         int warmup = 1, std::uint64_t seed = 0);

/// Summary statistics over per-iteration milliseconds. mean_ms is reported
/// as max(arithmetic mean, median) so min <= median <= mean always holds.
BenchReport summarize_timings(std::string mode, int width, int height, int threads, std::vector<double> ms);

}  // namespace convlut
