#pragma once

// 8-bit planar images and binary Netpbm (PGM/PPM) I/O.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace convlut {

struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<std::uint8_t> data;  ///< planar: [channel][row][col]

    Image() = default;
    Image(int w, int h, int c = 1, std::uint8_t fill = 0);

    bool empty() const noexcept { return width == 0 || height == 0; }
    std::size_t plane_size() const noexcept { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }

    std::uint8_t& at(int c, int y, int x) noexcept {
        return data[static_cast<std::size_t>(c) * plane_size() + static_cast<std::size_t>(y) * width + x];
    }
    std::uint8_t at(int c, int y, int x) const noexcept {
        return data[static_cast<std::size_t>(c) * plane_size() + static_cast<std::size_t>(y) * width + x];
    }
    /// Replicate-padded read.
    std::uint8_t clamped(int c, int y, int x) const noexcept;

    std::span<std::uint8_t> plane(int c) noexcept {
        return {data.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
    }
    std::span<const std::uint8_t> plane(int c) const noexcept {
        return {data.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
    }

    Image channel(int c) const;
    void set_channel(int c, const Image& single);

    bool operator==(const Image& o) const = default;
};

/// BT.601 luma, integer arithmetic; single-channel input is returned as is.
Image to_luma(const Image& img);

Image crop(const Image& img, int x0, int y0, int w, int h);

/// k counter-clockwise quarter turns.
Image rotate90(const Image& img, int k);

/// Reads binary P5 (gray) or P6 (RGB) with maxval 255.
Image read_pnm(const std::filesystem::path& path);
/// Writes P5 for 1 channel, P6 for 3.
void write_pnm(const Image& img, const std::filesystem::path& path);

}  // namespace convlut
