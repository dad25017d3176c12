#pragma once

// Streaming degradation simulator: bicubic downsampling, block-DCT
// compression under a QP map, a greedy ABR controller with frame drops,
// block-matching motion and dataset generation.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "convlut/image.hpp"
#include "convlut/temporal.hpp"

namespace convlut {

inline constexpr int kMacroBlock = 16;
inline constexpr int kDctBlock = 8;
inline constexpr int kSearchRadius = 8;
inline constexpr int kMaxQp = 50;
inline constexpr int kQpModulation = 5;
inline constexpr int kSrScale = 4;

// ---- resampling ----

/// Antialiased bicubic (a = -0.5) downsampling by `factor`, replicate
/// borders, per channel. Throws std::invalid_argument unless both
/// dimensions are divisible by `factor`.
Image downsample_bicubic(const Image& hr, int factor = kSrScale);

/// Cubic convolution kernel with a = -0.5.
double cubic_kernel(double t);

// ---- block DCT codec ----

/// Per-macro-block QP over an LR frame, ceil(w/16) x ceil(h/16) entries.
struct QpMap {
    int cols = 0, rows = 0;
    std::vector<int> qp;

    QpMap() = default;
    QpMap(int frame_width, int frame_height, int fill);
    int at(int mb_row, int mb_col) const noexcept { return qp[static_cast<std::size_t>(mb_row) * cols + mb_col]; }
    double mean() const;
    bool operator==(const QpMap&) const = default;
};

/// Quantisation step 2^((QP - 4) / 6).
double qstep(int qp);

using Block8 = std::array<double, 64>;
/// Orthonormal 8x8 DCT-II and its inverse.
Block8 forward_dct8(const Block8& pixels);
Block8 inverse_dct8(const Block8& coeffs);

struct CodecResult {
    Image frame;
    std::uint64_t bits = 0;
};

/// Per 8x8 block: DCT, uniform quantisation with the covering macro-block's
/// step, dequantisation, inverse DCT, rounding and clamping. Partial blocks
/// at the right/bottom edge are replicate-extended. `bits` follows the
/// documented level-cost model.
CodecResult compress_block_dct(const Image& lr, const QpMap& qp);

/// Bits of one quantised level: 0 for zero, else 2 floor(log2 |l|) + 2.
int level_bits(long level);
inline constexpr int kBlockOverheadBits = 2;

/// Texture modulation: -5 for flat, +5 for busy macro-blocks, relative to the
/// frame's median macro-block variance.
std::vector<int> texture_offsets(const Image& lr_luma);
QpMap modulated_qp_map(int frame_width, int frame_height, int base_qp, std::span<const int> offsets);

// ---- rate control ----

enum class BandwidthProfile { kbps100, kbps500, mbps1 };
BandwidthProfile parse_profile(const std::string& name);
std::string to_string(BandwidthProfile p);
int profile_kbps(BandwidthProfile p);

/// The block-DCT codec has no prediction or entropy coding, so it spends far
/// more bits than a real encoder at equal QP; profile rates are multiplied by
/// this factor before being turned into budgets.
inline constexpr double kCodecRateScale = 8.0;

/// Per-frame bit budgets: the profile's rate at `fps` times kCodecRateScale,
/// scaled by LR area relative to 240x128, with a seeded slow fluctuation of
/// up to +-30%.
std::vector<std::uint64_t> bandwidth_trace(BandwidthProfile p, int frames, int lr_width, int lr_height,
                                           std::uint64_t seed, double fps = 30.0);
/// One positive integer (bits) per line; blank lines and '#' comments skipped.
std::vector<std::uint64_t> load_trace(const std::filesystem::path& path);

struct AbrDecision {
    int base_qp = 0;
    bool dropped = false;
    std::uint64_t bits = 0;    ///< bits spent (0 when dropped)
    std::uint64_t budget = 0;  ///< trace + carried credit available for this frame
    std::uint64_t credit = 0;  ///< credit carried to the next frame
};

/// Greedy controller. For frame f with budget B = trace[f] + credit: drop if
/// cost(f, 50) > B; otherwise start from the previous QP, raise it until the
/// frame fits, or lower it by at most 2 while it still fits. Unused bits
/// carry over, capped at 2 * trace[f].
std::vector<AbrDecision> abr_controller(std::span<const std::uint64_t> trace, int frame_count,
                                        const std::function<std::uint64_t(int frame, int base_qp)>& cost);

// ---- motion ----

struct BlockVector {
    int dx = 0, dy = 0;
    bool operator==(const BlockVector&) const = default;
};

/// Exhaustive SAD search on luma over 16x16 blocks within +-radius; the
/// previous frame is sampled with replicate padding. Ties prefer the
/// smallest |dx| + |dy|, then the first candidate in row-major (dy, dx)
/// order. Returns block vectors, row-major, ceil(h/16) x ceil(w/16).
std::vector<BlockVector> block_match(const Image& prev, const Image& cur, int radius = kSearchRadius);
MotionField expand_motion(std::span<const BlockVector> blocks, int width, int height);
MotionField block_match_motion(const Image& prev, const Image& cur, int radius = kSearchRadius);

// ---- datasets ----

/// Deterministic synthetic RGB clip: textured background panning under a
/// moving object.
std::vector<Image> synth_clip(int frames, int width, int height, std::uint64_t seed);

struct DatasetOptions {
    BandwidthProfile profile = BandwidthProfile::kbps500;
    std::optional<std::vector<std::uint64_t>> trace;  ///< overrides the profile
    std::optional<int> fixed_qp;  ///< bypasses rate control: no drops, no modulation
    std::uint64_t seed = 0;
    int threads = 1;
};

struct ManifestRecord {
    int index = 0;
    bool dropped = false;
    int base_qp = 0;
    double qp_mean = 0.0;
    std::optional<double> psnr;  ///< LR vs clean LR; +inf when identical
    std::uint64_t bits = 0, budget = 0;
    std::string hr, lr, meta;
    std::string profile;  ///< "100kbps" etc., "trace" or "qp<N>"
};

/// Reads every *.ppm / *.pgm in `hr_dir` (sorted by name), simulates
/// transmission and writes hr_NNNN.ppm, lr_NNNN.ppm, meta_NNNN.json and
/// manifest.jsonl into `out_dir`.
std::vector<ManifestRecord> generate_dataset(const std::filesystem::path& hr_dir, const std::filesystem::path& out_dir,
                                             const DatasetOptions& opt);

struct StreamSample {
    int frame_index = 0;
    bool dropped = false;
    std::string profile;
    Image hr;
    std::optional<Image> lr;
    QpMap qp_map;
    std::optional<MotionField> motion;  ///< absent for the first received frame
};

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& manifest);
/// Loads every record; dropped samples carry the HR frame only.
std::vector<StreamSample> load_dataset(const std::filesystem::path& manifest);

}  // namespace convlut
