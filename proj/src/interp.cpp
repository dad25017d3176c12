#include "convlut/interp.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "convlut/common.hpp"
#include "convlut/detail/interp_kernels.hpp"

namespace convlut {

MsbLsb split_msb_lsb(Pixel4 p, int interval) {
    check_interval(interval);
    MsbLsb r;
    const int v[4] = {p.x, p.y, p.z, p.u};
    for (int c = 0; c < 4; ++c) {
        r.msb[static_cast<std::size_t>(c)] = v[c] / interval;
        r.lsb[static_cast<std::size_t>(c)] = v[c] - r.msb[static_cast<std::size_t>(c)] * interval;
    }
    return r;
}

OrderTable::OrderTable(int interval, std::vector<OrderEntry> entries)
    : interval_(interval), shift_(log2_exact(interval)), entries_(std::move(entries)) {
    const std::size_t s = static_cast<std::size_t>(interval);
    if (entries_.size() != s * s * s * s) throw std::invalid_argument("order table size must be interval^4");
}

OrderTable build_order_table(int interval) {
    check_interval(interval);
    if (interval > OrderTable::kMaxInterval)
        throw std::invalid_argument("order table for interval " + std::to_string(interval) + " exceeds the " +
                                    std::to_string(OrderTable::kMaxInterval) + "^4 entry limit");
    const int s = interval;
    std::vector<OrderEntry> entries(static_cast<std::size_t>(s) * s * s * s);
    std::size_t idx = 0;
    for (int lx = 0; lx < s; ++lx)
        for (int ly = 0; ly < s; ++ly)
            for (int lz = 0; lz < s; ++lz)
                for (int lu = 0; lu < s; ++lu, ++idx) {
                    const int l[4] = {lx, ly, lz, lu};
                    // Sort key (lsb, component) descending.
                    std::array<int, 4> order{3, 2, 1, 0};
                    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return l[a] > l[b]; });
                    OrderEntry& e = entries[idx];
                    int mask = 0;
                    for (int i = 0; i < 4; ++i) {
                        e.sorted[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(l[order[static_cast<std::size_t>(i)]]);
                        if (i < 3) {
                            mask |= 8 >> order[static_cast<std::size_t>(i)];
                            e.masks[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(mask);
                        }
                    }
                }
    return OrderTable(s, std::move(entries));
}

SimplexWeights simplex_weights(const std::array<int, 4>& sorted, int interval) {
    for (std::size_t i = 0; i < 4; ++i) {
        if (sorted[i] < 0 || sorted[i] >= interval)
            throw std::logic_error("simplex_weights: LSB out of [0, interval)");
        if (i > 0 && sorted[i] > sorted[i - 1]) throw std::logic_error("simplex_weights: LSBs not sorted");
    }
    return SimplexWeights{{interval - sorted[0], sorted[0] - sorted[1], sorted[1] - sorted[2], sorted[2] - sorted[3],
                           sorted[3]}};
}

ChainRow classify_chain_row(const std::array<int, 4>& lsb) {
    const int l[4] = {lsb[0], lsb[1], lsb[2], lsb[3]};
    int w[5], o[3];
    detail::PlainOps ops;
    ChainRow row;
    row.row = detail::tetra_chain(l, 256, w, o, ops);
    for (int i = 0; i < 3; ++i) row.masks[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(o[i]);
    // The order follows from the mask chain: each mask adds one component.
    int prev = 0;
    for (int i = 0; i < 3; ++i) {
        const int added = o[i] & ~prev;
        row.order[static_cast<std::size_t>(i)] = added == 8 ? 0 : added == 4 ? 1 : added == 2 ? 2 : 3;
        prev = o[i];
    }
    const int last = 15 & ~prev;
    row.order[3] = last == 8 ? 0 : last == 4 ? 1 : last == 2 ? 2 : 3;
    return row;
}

void tetra_interp_reference(const LutTable& lut, Pixel4 p, std::uint8_t* out, std::ptrdiff_t stride) {
    detail::PlainOps ops;
    detail::tetra_reference(lut, p, out, stride, ops);
}

Patch tetra_interp_reference(const LutTable& lut, Pixel4 p) {
    Patch out(static_cast<std::size_t>(lut.patch_size()));
    tetra_interp_reference(lut, p, out.data(), lut.scale());
    return out;
}

static void check_order(const LutTable& lut, const OrderTable& order) {
    if (order.interval() != lut.interval())
        throw std::invalid_argument("order table interval " + std::to_string(order.interval()) +
                                    " does not match LUT interval " + std::to_string(lut.interval()));
}

void tetra_interp_fast(const LutTable& lut, const OrderTable& order, Pixel4 p, std::uint8_t* out,
                       std::ptrdiff_t stride) {
    check_order(lut, order);
    detail::PlainOps ops;
    detail::tetra_fast(lut, order, p, out, stride, ops);
}

Patch tetra_interp_fast(const LutTable& lut, const OrderTable& order, Pixel4 p) {
    Patch out(static_cast<std::size_t>(lut.patch_size()));
    tetra_interp_fast(lut, order, p, out.data(), lut.scale());
    return out;
}

void tetralinear_interp(const LutTable& lut, Pixel4 p, std::uint8_t* out, std::ptrdiff_t stride) {
    detail::PlainOps ops;
    detail::tetralinear(lut, p, out, stride, ops);
}

Patch tetralinear_interp(const LutTable& lut, Pixel4 p) {
    Patch out(static_cast<std::size_t>(lut.patch_size()));
    tetralinear_interp(lut, p, out.data(), lut.scale());
    return out;
}

OpCounts count_query_ops(InterpKind kind, const LutTable& lut, const OrderTable* order, Pixel4 p, Patch* out) {
    OpCounts counts;
    detail::CountingOps ops{&counts};
    Patch tile(static_cast<std::size_t>(lut.patch_size()));
    switch (kind) {
        case InterpKind::reference:
            detail::tetra_reference(lut, p, tile.data(), lut.scale(), ops);
            break;
        case InterpKind::order_table:
            if (order == nullptr) throw std::invalid_argument("order table required");
            check_order(lut, *order);
            detail::tetra_fast(lut, *order, p, tile.data(), lut.scale(), ops);
            break;
        case InterpKind::tetralinear:
            detail::tetralinear(lut, p, tile.data(), lut.scale(), ops);
            break;
    }
    if (out != nullptr) *out = std::move(tile);
    return counts;
}

}  // namespace convlut
