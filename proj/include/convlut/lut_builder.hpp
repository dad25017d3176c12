#pragma once

// Transfers an SR oracle (2x2 patch -> r x r patch) into a sampled LutTable.

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "convlut/interp.hpp"
#include "convlut/lut_core.hpp"

namespace convlut {

struct SrOracle {
    std::string name;
    int scale = 4;
    int qp_label = 0;
    /// Writes scale*scale row-major output pixels. Must be deterministic.
    std::function<void(Pixel4, std::span<std::uint8_t>)> fn;

    void operator()(Pixel4 p, std::span<std::uint8_t> out) const { fn(p, out); }
};

enum class OracleKind { nearest, bilinear, sharpen, qp_adaptive };

OracleKind parse_oracle_kind(std::string_view name);
std::string_view to_string(OracleKind kind);

/// Closed-form oracles.
///   nearest      anchor pixel replicated over the r x r tile
///   bilinear     bilinear surface through the 2x2 patch sampled at the
///                centres of the anchor's r x r footprint (extrapolated
///                linearly on the upper/left side)
///   sharpen      bilinear pushed away from the patch mean by 0.5
///   qp_adaptive  bilinear blended toward the patch mean with strength
///                0.6 * qp / 50; identical to bilinear at qp 0
SrOracle builtin_oracle(OracleKind kind, int qp_label, int scale);

/// Raised when an oracle throws during a build; names the lattice index.
class OracleError : public std::runtime_error {
public:
    OracleError(const std::string& what, std::array<int, 4> index)
        : std::runtime_error(what), index_(index) {}
    const std::array<int, 4>& index() const noexcept { return index_; }

private:
    std::array<int, 4> index_;
};

/// Lattice index -> oracle input value.
inline std::uint8_t lattice_value(int index, int interval) {
    const int v = index * interval;
    return static_cast<std::uint8_t>(v > 255 ? 255 : v);
}

/// Evaluates the oracle at every lattice vertex. Parallel over the first
/// lattice dimension; output does not depend on `threads`.
LutTable build_lut(const SrOracle& oracle, int interval, int threads = 1);

/// One builtin-oracle expert per QP label (labels strictly increasing).
ExpertBank build_bank(std::span<const int> qp_labels, OracleKind kind, int interval, int scale, int threads = 1);

}  // namespace convlut
