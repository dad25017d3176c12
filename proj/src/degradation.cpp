#include "convlut/degradation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "convlut/common.hpp"
#include "convlut/metrics.hpp"

namespace convlut {

using nlohmann::json;

// ---- resampling ----

double cubic_kernel(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

namespace {

struct Taps {
    std::vector<int> first;  // first input index per output
    std::vector<std::vector<double>> w;
};

Taps downsample_taps(int in_size, int factor) {
    const int out_size = in_size / factor;
    Taps taps;
    taps.first.resize(static_cast<std::size_t>(out_size));
    taps.w.resize(static_cast<std::size_t>(out_size));
    for (int o = 0; o < out_size; ++o) {
        const double u = (o + 0.5) * factor - 0.5;
        const int lo = static_cast<int>(std::floor(u - 2.0 * factor)) + 1;
        const int hi = static_cast<int>(std::ceil(u + 2.0 * factor)) - 1;
        std::vector<double> w;
        double sum = 0.0;
        for (int j = lo; j <= hi; ++j) {
            w.push_back(cubic_kernel((u - j) / factor));
            sum += w.back();
        }
        for (auto& v : w) v /= sum;
        taps.first[static_cast<std::size_t>(o)] = lo;
        taps.w[static_cast<std::size_t>(o)] = std::move(w);
    }
    return taps;
}

}  // namespace

Image downsample_bicubic(const Image& hr, int factor) {
    if (factor < 1) throw std::invalid_argument("downsample factor must be positive");
    if (hr.empty() || hr.width % factor != 0 || hr.height % factor != 0)
        throw std::invalid_argument("frame size " + std::to_string(hr.width) + "x" + std::to_string(hr.height) +
                                    " is not divisible by " + std::to_string(factor));
    const int ow = hr.width / factor, oh = hr.height / factor;
    const Taps tx = downsample_taps(hr.width, factor), ty = downsample_taps(hr.height, factor);
    Image out(ow, oh, hr.channels);
    std::vector<double> tmp(static_cast<std::size_t>(ow) * hr.height);
    for (int c = 0; c < hr.channels; ++c) {
        for (int y = 0; y < hr.height; ++y)
            for (int x = 0; x < ow; ++x) {
                const auto& w = tx.w[static_cast<std::size_t>(x)];
                double acc = 0.0;
                for (std::size_t k = 0; k < w.size(); ++k)
                    acc += w[k] * hr.clamped(c, y, tx.first[static_cast<std::size_t>(x)] + static_cast<int>(k));
                tmp[static_cast<std::size_t>(y) * ow + x] = acc;
            }
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                const auto& w = ty.w[static_cast<std::size_t>(y)];
                double acc = 0.0;
                for (std::size_t k = 0; k < w.size(); ++k) {
                    const int sy = std::clamp(ty.first[static_cast<std::size_t>(y)] + static_cast<int>(k), 0, hr.height - 1);
                    acc += w[k] * tmp[static_cast<std::size_t>(sy) * ow + x];
                }
                out.at(c, y, x) = clamp_u8(acc);
            }
    }
    return out;
}

// ---- block DCT codec ----

QpMap::QpMap(int frame_width, int frame_height, int fill)
    : cols((frame_width + kMacroBlock - 1) / kMacroBlock), rows((frame_height + kMacroBlock - 1) / kMacroBlock) {
    if (fill < 0 || fill > kMaxQp) throw std::invalid_argument("QP must lie in [0, 50]");
    qp.assign(static_cast<std::size_t>(cols) * rows, fill);
}

double QpMap::mean() const {
    if (qp.empty()) return 0.0;
    double s = 0.0;
    for (int v : qp) s += v;
    return s / static_cast<double>(qp.size());
}

double qstep(int qp) { return std::pow(2.0, (qp - 4) / 6.0); }

namespace {

const std::array<double, 64>& dct_matrix() {
    static const std::array<double, 64> m = [] {
        std::array<double, 64> c{};
        for (int k = 0; k < 8; ++k)
            for (int n = 0; n < 8; ++n)
                c[static_cast<std::size_t>(k * 8 + n)] =
                    (k == 0 ? std::sqrt(1.0 / 8) : std::sqrt(2.0 / 8)) * std::cos((2 * n + 1) * k * std::numbers::pi / 16);
        return c;
    }();
    return m;
}

// out = A * in * B, with A/B given as (matrix, transposed?) pairs.
Block8 transform(const Block8& in, bool inverse) {
    const auto& c = dct_matrix();
    auto C = [&](int i, int j) { return inverse ? c[static_cast<std::size_t>(j * 8 + i)] : c[static_cast<std::size_t>(i * 8 + j)]; };
    Block8 tmp{}, out{};
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 8; ++k) acc += C(i, k) * in[static_cast<std::size_t>(k * 8 + j)];
            tmp[static_cast<std::size_t>(i * 8 + j)] = acc;
        }
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 8; ++k) acc += tmp[static_cast<std::size_t>(i * 8 + k)] * C(j, k);
            out[static_cast<std::size_t>(i * 8 + j)] = acc;
        }
    return out;
}

}  // namespace

Block8 forward_dct8(const Block8& pixels) { return transform(pixels, false); }
Block8 inverse_dct8(const Block8& coeffs) { return transform(coeffs, true); }

int level_bits(long level) {
    if (level == 0) return 0;
    unsigned long m = static_cast<unsigned long>(level < 0 ? -level : level);
    int lg = 0;
    while (m >>= 1) ++lg;
    return 2 * lg + 2;
}

CodecResult compress_block_dct(const Image& lr, const QpMap& qp) {
    if (lr.empty()) throw std::invalid_argument("compress_block_dct: empty frame");
    const QpMap expect(lr.width, lr.height, 0);
    if (qp.cols != expect.cols || qp.rows != expect.rows) throw std::invalid_argument("QP map does not cover the frame");
    for (int v : qp.qp)
        if (v < 0 || v > kMaxQp) throw std::invalid_argument("QP must lie in [0, 50]");
    CodecResult res{Image(lr.width, lr.height, lr.channels), 0};
    const int bw = (lr.width + kDctBlock - 1) / kDctBlock, bh = (lr.height + kDctBlock - 1) / kDctBlock;
    const int per_mb = kMacroBlock / kDctBlock;
    for (int c = 0; c < lr.channels; ++c)
        for (int by = 0; by < bh; ++by)
            for (int bx = 0; bx < bw; ++bx) {
                Block8 px{};
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j)
                        px[static_cast<std::size_t>(i * 8 + j)] = lr.clamped(c, by * 8 + i, bx * 8 + j) - 128.0;
                Block8 co = forward_dct8(px);
                const double step = qstep(qp.at(by / per_mb, bx / per_mb));
                res.bits += kBlockOverheadBits;
                for (auto& v : co) {
                    const double level = round_half_away(v / step);
                    res.bits += static_cast<std::uint64_t>(level_bits(static_cast<long>(level)));
                    v = level * step;
                }
                const Block8 rec = inverse_dct8(co);
                for (int i = 0; i < 8 && by * 8 + i < lr.height; ++i)
                    for (int j = 0; j < 8 && bx * 8 + j < lr.width; ++j)
                        res.frame.at(c, by * 8 + i, bx * 8 + j) = clamp_u8(rec[static_cast<std::size_t>(i * 8 + j)] + 128.0);
            }
    return res;
}

std::vector<int> texture_offsets(const Image& lr_luma) {
    const Image luma = to_luma(lr_luma);
    const QpMap shape(luma.width, luma.height, 0);
    std::vector<double> var(shape.qp.size());
    for (int r = 0; r < shape.rows; ++r)
        for (int c = 0; c < shape.cols; ++c) {
            double s = 0.0, s2 = 0.0;
            int n = 0;
            for (int y = r * kMacroBlock; y < std::min(luma.height, (r + 1) * kMacroBlock); ++y)
                for (int x = c * kMacroBlock; x < std::min(luma.width, (c + 1) * kMacroBlock); ++x) {
                    const double v = luma.at(0, y, x);
                    s += v;
                    s2 += v * v;
                    ++n;
                }
            var[static_cast<std::size_t>(r * shape.cols + c)] = s2 / n - (s / n) * (s / n);
        }
    std::vector<double> sorted = var;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[sorted.size() / 2];
    std::vector<int> off(var.size(), 0);
    for (std::size_t i = 0; i < var.size(); ++i) {
        if (var[i] > 2.0 * median + 4.0)
            off[i] = kQpModulation;
        else if (var[i] < 0.5 * median)
            off[i] = -kQpModulation;
    }
    return off;
}

QpMap modulated_qp_map(int frame_width, int frame_height, int base_qp, std::span<const int> offsets) {
    QpMap m(frame_width, frame_height, base_qp);
    if (!offsets.empty()) {
        if (offsets.size() != m.qp.size()) throw std::invalid_argument("texture offsets do not match the QP map");
        for (std::size_t i = 0; i < m.qp.size(); ++i) m.qp[i] = std::clamp(base_qp + offsets[i], 0, kMaxQp);
    }
    return m;
}

// ---- rate control ----

BandwidthProfile parse_profile(const std::string& name) {
    if (name == "100kbps") return BandwidthProfile::kbps100;
    if (name == "500kbps") return BandwidthProfile::kbps500;
    if (name == "1mbps") return BandwidthProfile::mbps1;
    throw std::invalid_argument("unknown bandwidth profile '" + name + "' (expected 100kbps, 500kbps or 1mbps)");
}

std::string to_string(BandwidthProfile p) {
    switch (p) {
        case BandwidthProfile::kbps100: return "100kbps";
        case BandwidthProfile::kbps500: return "500kbps";
        case BandwidthProfile::mbps1: return "1mbps";
    }
    return "?";
}

int profile_kbps(BandwidthProfile p) {
    switch (p) {
        case BandwidthProfile::kbps100: return 100;
        case BandwidthProfile::kbps500: return 500;
        case BandwidthProfile::mbps1: return 1000;
    }
    return 0;
}

std::vector<std::uint64_t> bandwidth_trace(BandwidthProfile p, int frames, int lr_width, int lr_height,
                                           std::uint64_t seed, double fps) {
    if (frames < 0 || lr_width <= 0 || lr_height <= 0 || !(fps > 0)) throw std::invalid_argument("bad trace geometry");
    const double area = static_cast<double>(lr_width) * lr_height / (240.0 * 128.0);
    const double mean = profile_kbps(p) * 1000.0 / fps * area * kCodecRateScale;
    Rng rng(seed ^ 0xB0A7u);
    const double period = rng.uniform(20.0, 60.0);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    std::vector<std::uint64_t> t(static_cast<std::size_t>(frames));
    for (int f = 0; f < frames; ++f) {
        const double factor = 1.0 + 0.25 * std::sin(2.0 * std::numbers::pi * f / period + phase) + rng.uniform(-0.05, 0.05);
        t[static_cast<std::size_t>(f)] = static_cast<std::uint64_t>(std::max(1.0, std::round(mean * factor)));
    }
    return t;
}

std::vector<std::uint64_t> load_trace(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open trace " + path.string());
    std::vector<std::uint64_t> out;
    std::string line;
    std::uint64_t offset = 0;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        std::string body = line.substr(0, hash);
        body.erase(0, body.find_first_not_of(" \t\r"));
        body.erase(body.find_last_not_of(" \t\r") + 1);
        if (!body.empty()) {
            std::size_t used = 0;
            long long v = 0;
            try {
                v = std::stoll(body, &used);
            } catch (const std::exception&) {
                throw FormatError("trace line is not an integer: '" + body + "'", offset);
            }
            if (used != body.size() || v <= 0) throw FormatError("trace values must be positive integers", offset);
            out.push_back(static_cast<std::uint64_t>(v));
        }
        offset += line.size() + 1;
    }
    return out;
}

namespace {
std::uint64_t sat_add(std::uint64_t a, std::uint64_t b) {
    return a > std::numeric_limits<std::uint64_t>::max() - b ? std::numeric_limits<std::uint64_t>::max() : a + b;
}
std::uint64_t sat_mul2(std::uint64_t a) { return sat_add(a, a); }
}  // namespace

std::vector<AbrDecision> abr_controller(std::span<const std::uint64_t> trace, int frame_count,
                                        const std::function<std::uint64_t(int, int)>& cost) {
    if (frame_count < 0 || trace.size() < static_cast<std::size_t>(frame_count))
        throw std::invalid_argument("bandwidth trace shorter than the clip");
    std::vector<AbrDecision> out(static_cast<std::size_t>(frame_count));
    std::uint64_t credit = 0;
    int qp = 0;
    for (int f = 0; f < frame_count; ++f) {
        AbrDecision& d = out[static_cast<std::size_t>(f)];
        const std::uint64_t tr = trace[static_cast<std::size_t>(f)];
        d.budget = sat_add(tr, credit);
        if (cost(f, kMaxQp) > d.budget) {
            d.dropped = true;
            d.base_qp = qp;
            d.bits = 0;
        } else {
            int q = qp;
            if (cost(f, q) > d.budget) {
                while (q < kMaxQp && cost(f, q) > d.budget) ++q;
            } else {
                const int floor_qp = std::max(0, qp - 2);
                while (q > floor_qp && cost(f, q - 1) <= d.budget) --q;
            }
            qp = q;
            d.base_qp = q;
            d.bits = cost(f, q);
        }
        credit = std::min(d.budget - d.bits, sat_mul2(tr));
        d.credit = credit;
    }
    return out;
}

// ---- motion ----

std::vector<BlockVector> block_match(const Image& prev_in, const Image& cur_in, int radius) {
    if (prev_in.width != cur_in.width || prev_in.height != cur_in.height)
        throw std::invalid_argument("block_match: frames differ in size");
    if (radius < 0) throw std::invalid_argument("block_match: negative radius");
    const Image prev = to_luma(prev_in), cur = to_luma(cur_in);
    const int cols = (cur.width + kMacroBlock - 1) / kMacroBlock, rows = (cur.height + kMacroBlock - 1) / kMacroBlock;
    std::vector<BlockVector> out(static_cast<std::size_t>(cols) * rows);
    for (int br = 0; br < rows; ++br)
        for (int bc = 0; bc < cols; ++bc) {
            const int y0 = br * kMacroBlock, y1 = std::min(cur.height, y0 + kMacroBlock);
            const int x0 = bc * kMacroBlock, x1 = std::min(cur.width, x0 + kMacroBlock);
            long best = std::numeric_limits<long>::max();
            int best_len = 0;
            BlockVector bv;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    long sad = 0;
                    for (int y = y0; y < y1; ++y)
                        for (int x = x0; x < x1; ++x) sad += std::abs(int{cur.at(0, y, x)} - int{prev.clamped(0, y - dy, x - dx)});
                    const int len = std::abs(dx) + std::abs(dy);
                    if (sad < best || (sad == best && len < best_len)) {
                        best = sad;
                        best_len = len;
                        bv = {dx, dy};
                    }
                }
            out[static_cast<std::size_t>(br * cols + bc)] = bv;
        }
    return out;
}

MotionField expand_motion(std::span<const BlockVector> blocks, int width, int height) {
    const int cols = (width + kMacroBlock - 1) / kMacroBlock, rows = (height + kMacroBlock - 1) / kMacroBlock;
    if (blocks.size() != static_cast<std::size_t>(cols) * rows) throw std::invalid_argument("block vector count mismatch");
    MotionField mf(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const auto& b = blocks[static_cast<std::size_t>((y / kMacroBlock) * cols + x / kMacroBlock)];
            mf.dx[mf.index(y, x)] = b.dx;
            mf.dy[mf.index(y, x)] = b.dy;
        }
    return mf;
}

MotionField block_match_motion(const Image& prev, const Image& cur, int radius) {
    return expand_motion(block_match(prev, cur, radius), cur.width, cur.height);
}

// ---- synthetic clip ----

namespace {

double hash01(std::int64_t x, std::int64_t y, std::uint64_t seed) {
    std::uint64_t z = seed ^ (static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ull) ^ (static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4Full);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z ^= z >> 31;
    return static_cast<double>(z >> 11) * 0x1.0p-53;
}

double value_noise(double x, double y, double cell, std::uint64_t seed) {
    const double gx = x / cell, gy = y / cell;
    const auto ix = static_cast<std::int64_t>(std::floor(gx)), iy = static_cast<std::int64_t>(std::floor(gy));
    double fx = gx - ix, fy = gy - iy;
    fx = fx * fx * (3 - 2 * fx);
    fy = fy * fy * (3 - 2 * fy);
    const double a = hash01(ix, iy, seed), b = hash01(ix + 1, iy, seed);
    const double c = hash01(ix, iy + 1, seed), d = hash01(ix + 1, iy + 1, seed);
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy;
}

}  // namespace

std::vector<Image> synth_clip(int frames, int width, int height, std::uint64_t seed) {
    if (frames < 0 || width <= 0 || height <= 0) throw std::invalid_argument("synth_clip: bad geometry");
    Rng rng(seed);
    const double pan_x = rng.uniform(0.5, 2.0), pan_y = rng.uniform(-1.0, 1.0);
    const double obj_vx = rng.uniform(-3.0, 3.0), obj_vy = rng.uniform(-2.0, 2.0);
    const double obj_r = std::min(width, height) * rng.uniform(0.15, 0.3);
    const double obj_x0 = width * rng.uniform(0.3, 0.7), obj_y0 = height * rng.uniform(0.3, 0.7);
    const double stripe = rng.uniform(0.15, 0.35);
    const std::uint64_t s1 = rng.next_u64(), s2 = rng.next_u64(), s3 = rng.next_u64();
    std::vector<Image> clip;
    for (int f = 0; f < frames; ++f) {
        Image img(width, height, 3);
        const double ox = obj_x0 + obj_vx * f, oy = obj_y0 + obj_vy * f;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const double X = x + pan_x * f, Y = y + pan_y * f;
                double base = 150.0 * value_noise(X, Y, 24.0, s1) + 60.0 * value_noise(X, Y, 6.0, s2) +
                              25.0 * hash01(static_cast<std::int64_t>(std::floor(X)), static_cast<std::int64_t>(std::floor(Y)), s3);
                double r = base, g = base * 0.9 + 20.0, b = 200.0 - base * 0.6;
                const double dx = x - ox, dy = y - oy;
                const double dist = std::sqrt(dx * dx + dy * dy);
                if (dist < obj_r) {
                    const double st = 0.5 + 0.5 * std::sin(stripe * (dx + 0.5 * dy) * 3.0);
                    r = 230.0 * st + 20.0;
                    g = 60.0 + 80.0 * st;
                    b = 40.0;
                }
                img.at(0, y, x) = clamp_u8(r);
                img.at(1, y, x) = clamp_u8(g);
                img.at(2, y, x) = clamp_u8(b);
            }
        clip.push_back(std::move(img));
    }
    return clip;
}

// ---- datasets ----

namespace {

std::string frame_name(const char* stem, int i, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%04d.%s", stem, i, ext);
    return buf;
}

json psnr_json(const std::optional<double>& v) {
    if (!v) return nullptr;
    if (std::isinf(*v)) return "inf";
    return *v;
}

std::optional<double> psnr_from_json(const json& j) {
    if (j.is_null()) return std::nullopt;
    if (j.is_string()) {
        if (j.get<std::string>() == "inf") return kPsnrInfinity;
        throw FormatError("bad psnr value in manifest", 0);
    }
    return j.get<double>();
}

void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + p.string() + " for writing");
    out << s;
    if (!out) throw IoError("write failed: " + p.string());
}

}  // namespace

std::vector<ManifestRecord> generate_dataset(const std::filesystem::path& hr_dir, const std::filesystem::path& out_dir,
                                             const DatasetOptions& opt) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(hr_dir, ec)) throw IoError("input directory not found: " + hr_dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(hr_dir)) {
        const auto ext = e.path().extension().string();
        if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir.string());

    const int n = static_cast<int>(files.size());
    std::vector<Image> hr(files.size()), clean(files.size());
    for (int i = 0; i < n; ++i) hr[static_cast<std::size_t>(i)] = read_pnm(files[static_cast<std::size_t>(i)]);
    for (int i = 1; i < n; ++i)
        if (hr[static_cast<std::size_t>(i)].width != hr[0].width || hr[static_cast<std::size_t>(i)].height != hr[0].height ||
            hr[static_cast<std::size_t>(i)].channels != hr[0].channels)
            throw std::invalid_argument("frames in " + hr_dir.string() + " differ in size");
    parallel_for(n, opt.threads, [&](int b, int e) {
        for (int i = b; i < e; ++i) clean[static_cast<std::size_t>(i)] = downsample_bicubic(hr[static_cast<std::size_t>(i)], kSrScale);
    });

    std::vector<std::vector<int>> offsets(files.size());
    for (int i = 0; i < n; ++i) offsets[static_cast<std::size_t>(i)] = texture_offsets(clean[static_cast<std::size_t>(i)]);

    auto qp_map_for = [&](int f, int base) {
        const Image& lr = clean[static_cast<std::size_t>(f)];
        if (opt.fixed_qp) return QpMap(lr.width, lr.height, base);
        return modulated_qp_map(lr.width, lr.height, base, offsets[static_cast<std::size_t>(f)]);
    };

    std::vector<AbrDecision> decisions;
    if (opt.fixed_qp) {
        if (*opt.fixed_qp < 0 || *opt.fixed_qp > kMaxQp) throw std::invalid_argument("QP must lie in [0, 50]");
        decisions.assign(files.size(), AbrDecision{*opt.fixed_qp, false, 0, 0, 0});
    } else if (n > 0) {
        const std::vector<std::uint64_t> trace =
            opt.trace ? *opt.trace : bandwidth_trace(opt.profile, n, clean[0].width, clean[0].height, opt.seed);
        std::map<std::pair<int, int>, std::uint64_t> cache;
        decisions = abr_controller(trace, n, [&](int f, int q) {
            auto [it, fresh] = cache.try_emplace({f, q}, 0);
            if (fresh) it->second = compress_block_dct(clean[static_cast<std::size_t>(f)], qp_map_for(f, q)).bits;
            return it->second;
        });
    }

    std::vector<std::optional<CodecResult>> coded(files.size());
    std::vector<QpMap> maps(files.size());
    for (int i = 0; i < n; ++i) maps[static_cast<std::size_t>(i)] = qp_map_for(i, decisions[static_cast<std::size_t>(i)].base_qp);
    parallel_for(n, opt.threads, [&](int b, int e) {
        for (int i = b; i < e; ++i)
            if (!decisions[static_cast<std::size_t>(i)].dropped)
                coded[static_cast<std::size_t>(i)] = compress_block_dct(clean[static_cast<std::size_t>(i)], maps[static_cast<std::size_t>(i)]);
    });

    const std::string profile = opt.fixed_qp ? "qp" + std::to_string(*opt.fixed_qp) : opt.trace ? "trace" : to_string(opt.profile);
    std::vector<ManifestRecord> records;
    std::ostringstream manifest;
    const Image* prev = nullptr;
    for (int i = 0; i < n; ++i) {
        const auto& d = decisions[static_cast<std::size_t>(i)];
        ManifestRecord rec;
        rec.index = i;
        rec.dropped = d.dropped;
        rec.base_qp = d.base_qp;
        rec.qp_mean = maps[static_cast<std::size_t>(i)].mean();
        rec.bits = d.dropped ? 0 : coded[static_cast<std::size_t>(i)]->bits;
        rec.budget = d.budget;
        rec.profile = profile;
        rec.hr = frame_name("hr", i, hr[static_cast<std::size_t>(i)].channels == 1 ? "pgm" : "ppm");
        rec.meta = frame_name("meta", i, "json");
        write_pnm(hr[static_cast<std::size_t>(i)], out_dir / rec.hr);

        json meta = {{"index", i}, {"dropped", d.dropped}, {"base_qp", d.base_qp}};
        const QpMap& qm = maps[static_cast<std::size_t>(i)];
        meta["qp_map"] = {{"block", kMacroBlock}, {"cols", qm.cols}, {"rows", qm.rows}, {"values", qm.qp}};
        meta["motion"] = nullptr;
        if (!d.dropped) {
            const Image& lr = coded[static_cast<std::size_t>(i)]->frame;
            rec.lr = frame_name("lr", i, lr.channels == 1 ? "pgm" : "ppm");
            rec.psnr = psnr(lr, clean[static_cast<std::size_t>(i)]);
            write_pnm(lr, out_dir / rec.lr);
            if (prev != nullptr) {
                const auto blocks = block_match(*prev, lr, kSearchRadius);
                json vec = json::array();
                for (const auto& b : blocks) vec.push_back({b.dx, b.dy});
                meta["motion"] = {{"block", kMacroBlock},
                                  {"radius", kSearchRadius},
                                  {"cols", (lr.width + kMacroBlock - 1) / kMacroBlock},
                                  {"rows", (lr.height + kMacroBlock - 1) / kMacroBlock},
                                  {"vectors", vec}};
            }
            prev = &lr;
        }
        write_text(out_dir / rec.meta, meta.dump(1) + "\n");

        json line = {{"index", rec.index},
                     {"dropped", rec.dropped},
                     {"base_qp", rec.base_qp},
                     {"qp_mean", rec.qp_mean},
                     {"psnr", psnr_json(rec.psnr)},
                     {"bits", rec.bits},
                     {"budget", rec.budget},
                     {"hr", rec.hr},
                     {"lr", rec.dropped ? json(nullptr) : json(rec.lr)},
                     {"meta", rec.meta},
                     {"profile", rec.profile},
                     {"qp_modulation", opt.fixed_qp ? "none" : "synthetic_texture_pm5"}};
        manifest << line.dump() << "\n";
        records.push_back(std::move(rec));
    }
    write_text(out_dir / "manifest.jsonl", manifest.str());
    return records;
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw IoError("cannot open manifest " + manifest.string());
    std::vector<ManifestRecord> out;
    std::string line;
    std::uint64_t offset = 0;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            try {
                const json j = json::parse(line);
                ManifestRecord r;
                r.index = j.at("index").get<int>();
                r.dropped = j.at("dropped").get<bool>();
                r.base_qp = j.value("base_qp", 0);
                r.qp_mean = j.at("qp_mean").get<double>();
                r.psnr = psnr_from_json(j.at("psnr"));
                r.bits = j.value("bits", std::uint64_t{0});
                r.budget = j.value("budget", std::uint64_t{0});
                r.hr = j.at("hr").get<std::string>();
                if (!j.at("lr").is_null()) r.lr = j.at("lr").get<std::string>();
                r.meta = j.value("meta", std::string());
                r.profile = j.value("profile", std::string());
                if (!out.empty() && r.index <= out.back().index)
                    throw FormatError("manifest indices must be strictly increasing", offset);
                out.push_back(std::move(r));
            } catch (const json::exception& e) {
                throw FormatError(std::string("bad manifest record: ") + e.what(), offset);
            }
        }
        offset += line.size() + 1;
    }
    return out;
}

std::vector<StreamSample> load_dataset(const std::filesystem::path& manifest) {
    const auto dir = manifest.parent_path();
    std::vector<StreamSample> out;
    for (const auto& r : read_manifest(manifest)) {
        StreamSample s;
        s.frame_index = r.index;
        s.dropped = r.dropped;
        s.profile = r.profile;
        s.hr = read_pnm(dir / r.hr);
        if (!r.dropped) {
            if (r.lr.empty()) throw FormatError("received frame without an LR file", 0);
            s.lr = read_pnm(dir / r.lr);
        }
        if (!r.meta.empty()) {
            std::ifstream in(dir / r.meta);
            if (!in) throw IoError("cannot open " + (dir / r.meta).string());
            json meta;
            try {
                meta = json::parse(in);
                const auto& q = meta.at("qp_map");
                s.qp_map.cols = q.at("cols").get<int>();
                s.qp_map.rows = q.at("rows").get<int>();
                s.qp_map.qp = q.at("values").get<std::vector<int>>();
                if (s.lr && !meta.at("motion").is_null()) {
                    std::vector<BlockVector> blocks;
                    for (const auto& v : meta["motion"].at("vectors")) blocks.push_back({v.at(0).get<int>(), v.at(1).get<int>()});
                    s.motion = expand_motion(blocks, s.lr->width, s.lr->height);
                }
            } catch (const json::exception& e) {
                throw FormatError("bad meta file " + r.meta + ": " + e.what(), 0);
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace convlut
