#pragma once

// LUT query paths: the literal 24-branch tetrahedral reference, the
// order-table tetrahedral kernel and the 16-vertex tetralinear baseline.
//
// All three are integer-only and round half away from zero, so results are
// bit-exact across platforms and thread counts.

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "convlut/lut_core.hpp"

namespace convlut {

/// The 2x2 query window: x is the anchor, y its right neighbour, z the pixel
/// below and u the diagonal.
struct Pixel4 {
    std::uint8_t x = 0, y = 0, z = 0, u = 0;
};

struct MsbLsb {
    std::array<int, 4> msb{};  ///< lattice index per component
    std::array<int, 4> lsb{};  ///< offset inside the cell, in [0, interval)
};

MsbLsb split_msb_lsb(Pixel4 p, int interval);

/// One order-table row: the LSBs sorted in non-increasing order and the
/// corner masks of the three intermediate simplex vertices. The first and
/// last vertices are always 0000 and 1111.
struct OrderEntry {
    std::array<std::uint8_t, 4> sorted{};
    std::array<std::uint8_t, 3> masks{};
};
static_assert(sizeof(OrderEntry) == 7);

class OrderTable {
public:
    /// Largest interval whose table is materialised (64^4 entries, 112 MiB).
    static constexpr int kMaxInterval = 64;

    OrderTable() = default;
    OrderTable(int interval, std::vector<OrderEntry> entries);

    int interval() const noexcept { return interval_; }
    int shift() const noexcept { return shift_; }
    std::size_t size() const noexcept { return entries_.size(); }

    std::size_t index(int lx, int ly, int lz, int lu) const noexcept {
        return (((static_cast<std::size_t>(lx) << shift_ | static_cast<std::size_t>(ly)) << shift_ |
                 static_cast<std::size_t>(lz))
                << shift_) |
               static_cast<std::size_t>(lu);
    }
    const OrderEntry& at(int lx, int ly, int lz, int lu) const noexcept { return entries_[index(lx, ly, lz, lu)]; }
    const OrderEntry& operator[](std::size_t i) const noexcept { return entries_[i]; }
    const OrderEntry* data() const noexcept { return entries_.data(); }

private:
    int interval_ = 0;
    int shift_ = 0;
    std::vector<OrderEntry> entries_;
};

/// Sorts every LSB 4-tuple of the interval. Equal LSBs are ordered by
/// component, later components (u before z before y before x) first, which
/// reproduces the row the 24-branch chain selects.
OrderTable build_order_table(int interval);

struct SimplexWeights {
    std::array<int, 5> w{};
};

/// Barycentric weights of the 5 simplex vertices; throws std::logic_error if
/// `sorted` is not non-increasing inside [0, interval).
SimplexWeights simplex_weights(const std::array<int, 4>& sorted, int interval);

/// Row of the tetrahedral if-else chain (0..22 explicit rows, 23 = else)
/// selected for an LSB tuple, with the (O2, O3, O4) masks that row uses.
struct ChainRow {
    int row = 23;
    std::array<std::uint8_t, 3> masks{};
    std::array<int, 4> order{};  ///< component indices, largest LSB first
};
ChainRow classify_chain_row(const std::array<int, 4>& lsb);

using Patch = std::vector<std::uint8_t>;

/// Literal 24-branch reference; the chain is evaluated for every output
/// subpixel. Writes an r x r tile with row stride `stride`.
void tetra_interp_reference(const LutTable& lut, Pixel4 p, std::uint8_t* out, std::ptrdiff_t stride);
Patch tetra_interp_reference(const LutTable& lut, Pixel4 p);

/// Order-table kernel: 5 vertex fetches and 5 multiplications per subpixel,
/// no data-dependent branches. Throws std::invalid_argument if the table was
/// built for another interval.
void tetra_interp_fast(const LutTable& lut, const OrderTable& order, Pixel4 p, std::uint8_t* out,
                       std::ptrdiff_t stride);
Patch tetra_interp_fast(const LutTable& lut, const OrderTable& order, Pixel4 p);

/// 16-vertex multilinear interpolation.
void tetralinear_interp(const LutTable& lut, Pixel4 p, std::uint8_t* out, std::ptrdiff_t stride);
Patch tetralinear_interp(const LutTable& lut, Pixel4 p);

enum class InterpKind { reference, order_table, tetralinear };

/// Operation counts of one query, summed over all r*r subpixels.
struct OpCounts {
    std::uint64_t vertex_fetches = 0;
    std::uint64_t multiplications = 0;
    std::uint64_t branches = 0;  ///< data-dependent conditionals evaluated
};

/// Runs one query through an instrumented instance of the kernel.
/// `order` is required for InterpKind::order_table only.
OpCounts count_query_ops(InterpKind kind, const LutTable& lut, const OrderTable* order, Pixel4 p, Patch* out = nullptr);

}  // namespace convlut
