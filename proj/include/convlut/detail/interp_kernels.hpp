#pragma once

// Kernel templates shared by the interp and fusion translation units. The
// Ops policy either forwards (PlainOps, fully inlined) or counts
// (CountingOps) every vertex fetch, multiplication and data-dependent branch.

#include <array>
#include <cstddef>
#include <cstdint>
#include <cstring>

#include "convlut/common.hpp"
#include "convlut/interp.hpp"

namespace convlut::detail {

struct PlainOps {
    static std::uint8_t fetch(const std::uint8_t* p) { return *p; }
    template <class A, class B>
    static auto mul(A a, B b) { return a * b; }
    static bool branch(bool c) { return c; }
};

struct CountingOps {
    OpCounts* counts;
    std::uint8_t fetch(const std::uint8_t* p) const {
        ++counts->vertex_fetches;
        return *p;
    }
    template <class A, class B>
    auto mul(A a, B b) const {
        ++counts->multiplications;
        return a * b;
    }
    bool branch(bool c) const {
        ++counts->branches;
        return c;
    }
};

inline void split(Pixel4 p, int shift, int mask, int h[4], int l[4]) {
    const int v[4] = {p.x, p.y, p.z, p.u};
    for (int c = 0; c < 4; ++c) {
        h[c] = v[c] >> shift;
        l[c] = v[c] & mask;
    }
}

/// out[k] = (w1 v1[k] + ... + w5 v5[k] + half) >> shift for k < n. The
/// restrict qualifiers let the plain instance vectorise.
template <class Ops>
inline void blend5(const std::uint8_t* __restrict v1, const std::uint8_t* __restrict v2,
                   const std::uint8_t* __restrict v3, const std::uint8_t* __restrict v4,
                   const std::uint8_t* __restrict v5, int w1, int w2, int w3, int w4, int w5, int half, int shift, int n,
                   std::uint8_t* __restrict out, Ops& ops) {
    // acc <= 255 * s + s / 2 < 2^16 for every interval up to 256.
    using u16 = std::uint16_t;
    for (int k = 0; k < n; ++k) {
        const u16 acc = static_cast<u16>(ops.mul(static_cast<u16>(w1), u16{ops.fetch(v1 + k)}) +
                                         ops.mul(static_cast<u16>(w2), u16{ops.fetch(v2 + k)}) +
                                         ops.mul(static_cast<u16>(w3), u16{ops.fetch(v3 + k)}) +
                                         ops.mul(static_cast<u16>(w4), u16{ops.fetch(v4 + k)}) +
                                         ops.mul(static_cast<u16>(w5), u16{ops.fetch(v5 + k)}) + half);
        out[k] = static_cast<std::uint8_t>(acc >> shift);
    }
}

/// Everything the order-table kernel reads, held by value so that stores
/// through the output pointer cannot force reloads.
struct FastGeometry {
    const std::uint8_t* values = nullptr;
    const OrderEntry* entries = nullptr;
    std::size_t axis[4]{};  ///< element stride of one lattice step per component
    std::array<std::size_t, 16> corners{};
    int shift = 0, r = 1;
};

inline FastGeometry fast_geometry(const LutTable& lut, const OrderTable& order) {
    FastGeometry g;
    g.values = lut.values().data();
    g.entries = order.data();
    const std::size_t rr = static_cast<std::size_t>(lut.patch_size());
    const std::size_t b = static_cast<std::size_t>(lut.bins());
    g.axis[3] = rr;
    g.axis[2] = rr * b;
    g.axis[1] = rr * b * b;
    g.axis[0] = rr * b * b * b;
    g.corners = lut.corner_offsets();
    g.shift = order.shift();
    g.r = lut.scale();
    return g;
}

template <class Ops>
inline void tetra_fast(const FastGeometry& g, Pixel4 p, std::uint8_t* out, std::ptrdiff_t stride, Ops& ops) {
    const int shift = g.shift;
    const int s = 1 << shift;
    const int m = s - 1;
    const OrderEntry e =
        g.entries[((((static_cast<std::size_t>(p.x & m) << shift) | static_cast<std::size_t>(p.y & m)) << shift |
                    static_cast<std::size_t>(p.z & m))
                   << shift) |
                  static_cast<std::size_t>(p.u & m)];
    const int w1 = s - e.sorted[0];
    const int w2 = e.sorted[0] - e.sorted[1];
    const int w3 = e.sorted[1] - e.sorted[2];
    const int w4 = e.sorted[2] - e.sorted[3];
    const int w5 = e.sorted[3];
    const std::uint8_t* v1 = g.values + static_cast<std::size_t>(p.x >> shift) * g.axis[0] +
                             static_cast<std::size_t>(p.y >> shift) * g.axis[1] +
                             static_cast<std::size_t>(p.z >> shift) * g.axis[2] +
                             static_cast<std::size_t>(p.u >> shift) * g.axis[3];
    const std::uint8_t* v2 = v1 + g.corners[e.masks[0]];
    const std::uint8_t* v3 = v1 + g.corners[e.masks[1]];
    const std::uint8_t* v4 = v1 + g.corners[e.masks[2]];
    const std::uint8_t* v5 = v1 + g.corners[15];
    const int r = g.r;
    const int half = s >> 1;
    if (r == 4) {
        alignas(16) std::uint8_t tile[16];
        blend5(v1, v2, v3, v4, v5, w1, w2, w3, w4, w5, half, shift, 16, tile, ops);
        for (int a = 0; a < 4; ++a) std::memcpy(out + a * stride, tile + 4 * a, 4);
    } else {
        for (int a = 0; a < r; ++a)
            blend5(v1 + a * r, v2 + a * r, v3 + a * r, v4 + a * r, v5 + a * r, w1, w2, w3, w4, w5, half, shift, r,
                   out + a * stride, ops);
    }
}

template <class Ops>
inline void tetra_fast(const LutTable& lut, const OrderTable& order, Pixel4 p, std::uint8_t* out,
                       std::ptrdiff_t stride, Ops& ops) {
    const FastGeometry g = fast_geometry(lut, order);
    tetra_fast(g, p, out, stride, ops);
}

template <class Ops>
inline void tetralinear(const LutTable& lut, Pixel4 p, std::uint8_t* out, std::ptrdiff_t stride, Ops& ops) {
    const int s = lut.interval();
    const int shift = log2_exact(s);
    int h[4], l[4];
    split(p, shift, s - 1, h, l);
    std::int64_t weight[16];
    for (int m = 0; m < 16; ++m) {
        std::int64_t w = 1;
        for (int c = 0; c < 4; ++c) w *= (m & (8 >> c)) ? l[c] : s - l[c];
        weight[m] = w;
    }
    const auto& co = lut.corner_offsets();
    const std::uint8_t* base = lut.entry(h[0], h[1], h[2], h[3]);
    const int r = lut.scale();
    const int total_shift = 4 * shift;
    const std::int64_t half = total_shift == 0 ? 0 : std::int64_t{1} << (total_shift - 1);
    for (int a = 0; a < r; ++a) {
        for (int b = 0; b < r; ++b) {
            const int k = a * r + b;
            std::int64_t acc = 0;
            for (int m = 0; m < 16; ++m) acc += ops.mul(weight[m], std::int64_t{ops.fetch(base + co[m] + k)});
            out[a * stride + b] = static_cast<std::uint8_t>((acc + half) >> total_shift);
        }
    }
}

/// Tie-broken strict comparison used by the reference chain: a larger LSB
/// wins; on equal LSBs the later component wins.
inline bool chain_gt(const int l[4], int a, int b) { return l[a] > l[b] || (l[a] == l[b] && a > b); }

/// Evaluates the 24-row if-else chain. Fills the five barycentric weights and
/// the three intermediate corner masks and returns the matching row index.
template <class Ops>
inline int tetra_chain(const int l[4], int s, int w[5], int o[3], Ops& ops) {
    enum { X = 0, Y = 1, Z = 2, U = 3 };
    const int Lx = l[X], Ly = l[Y], Lz = l[Z], Lu = l[U];
    auto gt3 = [&](int a, int b, int c, int d) {
        return ops.branch(chain_gt(l, a, b) && chain_gt(l, b, c) && chain_gt(l, c, d));
    };
    auto set = [&](int w1, int w2, int w3, int w4, int w5, int o2, int o3, int o4) {
        w[0] = w1, w[1] = w2, w[2] = w3, w[3] = w4, w[4] = w5;
        o[0] = o2, o[1] = o3, o[2] = o4;
    };
    // clang-format off
    if      (gt3(X, Y, Z, U)) { set(s - Lx, Lx - Ly, Ly - Lz, Lz - Lu, Lu, 0b1000, 0b1100, 0b1110); return 0; }
    else if (gt3(X, Y, U, Z)) { set(s - Lx, Lx - Ly, Ly - Lu, Lu - Lz, Lz, 0b1000, 0b1100, 0b1101); return 1; }
    else if (gt3(X, U, Y, Z)) { set(s - Lx, Lx - Lu, Lu - Ly, Ly - Lz, Lz, 0b1000, 0b1001, 0b1101); return 2; }
    else if (gt3(U, X, Y, Z)) { set(s - Lu, Lu - Lx, Lx - Ly, Ly - Lz, Lz, 0b0001, 0b1001, 0b1101); return 3; }
    else if (gt3(X, Z, Y, U)) { set(s - Lx, Lx - Lz, Lz - Ly, Ly - Lu, Lu, 0b1000, 0b1010, 0b1110); return 4; }
    else if (gt3(X, Z, U, Y)) { set(s - Lx, Lx - Lz, Lz - Lu, Lu - Ly, Ly, 0b1000, 0b1010, 0b1011); return 5; }
    else if (gt3(X, U, Z, Y)) { set(s - Lx, Lx - Lu, Lu - Lz, Lz - Ly, Ly, 0b1000, 0b1001, 0b1011); return 6; }
    else if (gt3(U, X, Z, Y)) { set(s - Lu, Lu - Lx, Lx - Lz, Lz - Ly, Ly, 0b0001, 0b1001, 0b1011); return 7; }
    else if (gt3(Z, X, Y, U)) { set(s - Lz, Lz - Lx, Lx - Ly, Ly - Lu, Lu, 0b0010, 0b1010, 0b1110); return 8; }
    else if (gt3(Z, X, U, Y)) { set(s - Lz, Lz - Lx, Lx - Lu, Lu - Ly, Ly, 0b0010, 0b1010, 0b1011); return 9; }
    else if (gt3(Z, U, X, Y)) { set(s - Lz, Lz - Lu, Lu - Lx, Lx - Ly, Ly, 0b0010, 0b0011, 0b1011); return 10; }
    else if (gt3(U, Z, X, Y)) { set(s - Lu, Lu - Lz, Lz - Lx, Lx - Ly, Ly, 0b0001, 0b0011, 0b1011); return 11; }
    else if (gt3(Y, X, Z, U)) { set(s - Ly, Ly - Lx, Lx - Lz, Lz - Lu, Lu, 0b0100, 0b1100, 0b1110); return 12; }
    else if (gt3(Y, X, U, Z)) { set(s - Ly, Ly - Lx, Lx - Lu, Lu - Lz, Lz, 0b0100, 0b1100, 0b1101); return 13; }
    else if (gt3(Y, U, X, Z)) { set(s - Ly, Ly - Lu, Lu - Lx, Lx - Lz, Lz, 0b0100, 0b0101, 0b1101); return 14; }
    else if (gt3(U, Y, X, Z)) { set(s - Lu, Lu - Ly, Ly - Lx, Lx - Lz, Lz, 0b0001, 0b0101, 0b1101); return 15; }
    else if (gt3(Y, Z, X, U)) { set(s - Ly, Ly - Lz, Lz - Lx, Lx - Lu, Lu, 0b0100, 0b0110, 0b1110); return 16; }
    else if (gt3(Y, Z, U, X)) { set(s - Ly, Ly - Lz, Lz - Lu, Lu - Lx, Lx, 0b0100, 0b0110, 0b0111); return 17; }
    else if (gt3(Y, U, Z, X)) { set(s - Ly, Ly - Lu, Lu - Lz, Lz - Lx, Lx, 0b0100, 0b0101, 0b0111); return 18; }
    else if (gt3(U, Y, Z, X)) { set(s - Lu, Lu - Ly, Ly - Lz, Lz - Lx, Lx, 0b0001, 0b0101, 0b0111); return 19; }
    else if (gt3(Z, Y, X, U)) { set(s - Lz, Lz - Ly, Ly - Lx, Lx - Lu, Lu, 0b0010, 0b0110, 0b1110); return 20; }
    else if (gt3(Z, Y, U, X)) { set(s - Lz, Lz - Ly, Ly - Lu, Lu - Lx, Lx, 0b0010, 0b0110, 0b0111); return 21; }
    else if (gt3(Z, U, Y, X)) { set(s - Lz, Lz - Lu, Lu - Ly, Ly - Lx, Lx, 0b0010, 0b0011, 0b0111); return 22; }
    else                      { set(s - Lu, Lu - Lz, Lz - Ly, Ly - Lx, Lx, 0b0001, 0b0011, 0b0111); return 23; }
    // clang-format on
}

template <class Ops>
inline void tetra_reference(const LutTable& lut, Pixel4 p, std::uint8_t* out, std::ptrdiff_t stride, Ops& ops) {
    const int s = lut.interval();
    const int shift = log2_exact(s);
    int h[4], l[4];
    split(p, shift, s - 1, h, l);
    const auto& co = lut.corner_offsets();
    const std::uint8_t* base = lut.entry(h[0], h[1], h[2], h[3]);
    const int r = lut.scale();
    for (int a = 0; a < r; ++a) {
        for (int b = 0; b < r; ++b) {
            const int k = a * r + b;
            int w[5], o[3];
            tetra_chain(l, s, w, o, ops);
            const int acc = ops.mul(w[0], int{ops.fetch(base + k)}) + ops.mul(w[1], int{ops.fetch(base + co[o[0]] + k)}) +
                            ops.mul(w[2], int{ops.fetch(base + co[o[1]] + k)}) +
                            ops.mul(w[3], int{ops.fetch(base + co[o[2]] + k)}) +
                            ops.mul(w[4], int{ops.fetch(base + co[15] + k)});
            // acc >= 0 and sum(w) == s, so this is round-half-away and stays in [0, 255].
            out[a * stride + b] = static_cast<std::uint8_t>((acc + s / 2) / s);
        }
    }
}

}  // namespace convlut::detail
