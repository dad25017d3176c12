#include "convlut/lut_builder.hpp"

#include <vector>

#include "convlut/common.hpp"

namespace convlut {

namespace {

constexpr double kSharpenGain = 0.5;
constexpr double kQpBlendMax = 0.6;

double bilinear_at(Pixel4 p, int a, int b, int r) {
    const double ty = (a + 0.5) / r - 0.5;
    const double tx = (b + 0.5) / r - 0.5;
    const double x = p.x, y = p.y, z = p.z, u = p.u;
    return x + tx * (y - x) + ty * (z - x) + tx * ty * (x - y - z + u);
}

double patch_mean(Pixel4 p) { return (p.x + p.y + p.z + p.u) / 4.0; }

}  // namespace

OracleKind parse_oracle_kind(std::string_view name) {
    if (name == "nearest") return OracleKind::nearest;
    if (name == "bilinear") return OracleKind::bilinear;
    if (name == "sharpen") return OracleKind::sharpen;
    if (name == "qp_adaptive") return OracleKind::qp_adaptive;
    throw std::invalid_argument("unknown oracle kind '" + std::string(name) +
                                "' (expected nearest, bilinear, sharpen or qp_adaptive)");
}

std::string_view to_string(OracleKind kind) {
    switch (kind) {
        case OracleKind::nearest: return "nearest";
        case OracleKind::bilinear: return "bilinear";
        case OracleKind::sharpen: return "sharpen";
        case OracleKind::qp_adaptive: return "qp_adaptive";
    }
    return "?";
}

SrOracle builtin_oracle(OracleKind kind, int qp_label, int scale) {
    if (qp_label < 0 || qp_label > 50) throw std::invalid_argument("qp_label must be in [0, 50]");
    if (scale < 1) throw std::invalid_argument("scale must be >= 1");
    SrOracle o;
    o.name = std::string(to_string(kind));
    o.scale = scale;
    o.qp_label = qp_label;
    const int r = scale;
    switch (kind) {
        case OracleKind::nearest:
            o.fn = [r](Pixel4 p, std::span<std::uint8_t> out) {
                for (int k = 0; k < r * r; ++k) out[static_cast<std::size_t>(k)] = p.x;
            };
            break;
        case OracleKind::bilinear:
            o.fn = [r](Pixel4 p, std::span<std::uint8_t> out) {
                for (int a = 0; a < r; ++a)
                    for (int b = 0; b < r; ++b)
                        out[static_cast<std::size_t>(a * r + b)] = clamp_u8(bilinear_at(p, a, b, r));
            };
            break;
        case OracleKind::sharpen:
            o.fn = [r](Pixel4 p, std::span<std::uint8_t> out) {
                const double m = patch_mean(p);
                for (int a = 0; a < r; ++a)
                    for (int b = 0; b < r; ++b) {
                        const double v = bilinear_at(p, a, b, r);
                        out[static_cast<std::size_t>(a * r + b)] = clamp_u8(v + kSharpenGain * (v - m));
                    }
            };
            break;
        case OracleKind::qp_adaptive: {
            const double alpha = kQpBlendMax * qp_label / 50.0;
            o.fn = [r, alpha](Pixel4 p, std::span<std::uint8_t> out) {
                const double m = patch_mean(p);
                for (int a = 0; a < r; ++a)
                    for (int b = 0; b < r; ++b) {
                        const double v = bilinear_at(p, a, b, r);
                        out[static_cast<std::size_t>(a * r + b)] = clamp_u8((1.0 - alpha) * v + alpha * m);
                    }
            };
            break;
        }
    }
    return o;
}

LutTable build_lut(const SrOracle& oracle, int interval, int threads) {
    if (!oracle.fn) throw std::invalid_argument("oracle has no function");
    LutTable lut(interval, oracle.scale);
    const int b = lut.bins();
    const std::size_t patch = static_cast<std::size_t>(lut.patch_size());
    parallel_for(b, threads, [&](int begin, int end) {
        for (int i = begin; i < end; ++i)
            for (int j = 0; j < b; ++j)
                for (int k = 0; k < b; ++k)
                    for (int l = 0; l < b; ++l) {
                        const Pixel4 p{lattice_value(i, interval), lattice_value(j, interval),
                                       lattice_value(k, interval), lattice_value(l, interval)};
                        try {
                            oracle(p, std::span<std::uint8_t>(lut.entry(i, j, k, l), patch));
                        } catch (const std::exception& e) {
                            throw OracleError("oracle '" + oracle.name + "' failed at lattice index (" +
                                                  std::to_string(i) + "," + std::to_string(j) + "," +
                                                  std::to_string(k) + "," + std::to_string(l) + "): " + e.what(),
                                              {i, j, k, l});
                        }
                    }
    });
    return lut;
}

ExpertBank build_bank(std::span<const int> qp_labels, OracleKind kind, int interval, int scale, int threads) {
    if (qp_labels.empty()) throw std::invalid_argument("at least one QP label is required");
    for (std::size_t i = 1; i < qp_labels.size(); ++i)
        if (qp_labels[i] <= qp_labels[i - 1]) throw std::invalid_argument("QP labels must be strictly increasing");
    check_interval(interval);
    ExpertBank bank;
    for (int qp : qp_labels) {
        bank.luts.push_back(build_lut(builtin_oracle(kind, qp, scale), interval, threads));
        bank.labels.push_back(qp);
    }
    bank.validate();
    return bank;
}

}  // namespace convlut
