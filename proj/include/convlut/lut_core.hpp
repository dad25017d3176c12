#pragma once

// Compressed 4D look-up tables and the expert bank file format.
//
// A LutTable maps a 2x2 low-resolution patch (x, y, z, u) to an r x r
// high-resolution patch. Inputs are sampled on a uniform lattice with step
// `interval`; lattice index i stands for input value min(i * interval, 255).
// Values are stored row-major in [b, b, b, b, r, r] order.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace convlut {

/// Number of lattice bins per input dimension for a sampling interval.
/// Sampled tables keep one extra vertex past 255 so every cell has an upper
/// neighbour; the unsampled table (interval 1) has exactly 256.
std::int64_t lattice_bins(int interval);

/// Throws std::invalid_argument unless interval is a power of two in [1, 256].
void check_interval(int interval);

/// Serialized payload size of n experts: bins^4 * scale^2 * n bytes.
std::uint64_t lut_size_bytes(int interval, int scale, int n);

class LutTable {
public:
    LutTable() = default;
    /// Zero-filled table.
    LutTable(int interval, int scale);
    LutTable(int interval, int scale, std::vector<std::uint8_t> values);

    int interval() const noexcept { return interval_; }
    int bins() const noexcept { return bins_; }
    int scale() const noexcept { return scale_; }
    int patch_size() const noexcept { return scale_ * scale_; }

    std::span<const std::uint8_t> values() const noexcept { return values_; }
    std::span<std::uint8_t> values() noexcept { return values_; }

    /// Element offset of the r x r patch for lattice vertex (i, j, k, l).
    std::size_t offset(int i, int j, int k, int l) const noexcept {
        const std::size_t b = static_cast<std::size_t>(bins_);
        return (((static_cast<std::size_t>(i) * b + static_cast<std::size_t>(j)) * b +
                 static_cast<std::size_t>(k)) * b + static_cast<std::size_t>(l)) *
               static_cast<std::size_t>(patch_size());
    }

    const std::uint8_t* entry(int i, int j, int k, int l) const noexcept {
        return values_.data() + offset(i, j, k, l);
    }
    std::uint8_t* entry(int i, int j, int k, int l) noexcept { return values_.data() + offset(i, j, k, l); }

    /// Element offsets of the 16 cell corners relative to the lower corner.
    /// Corner mask bit 3 steps x, bit 2 y, bit 1 z, bit 0 u. For interval 1
    /// all corners alias the lower one (interpolation weights there are 0).
    const std::array<std::size_t, 16>& corner_offsets() const noexcept { return corners_; }

    bool operator==(const LutTable& o) const {
        return interval_ == o.interval_ && scale_ == o.scale_ && values_ == o.values_;
    }

private:
    void init_geometry();

    int interval_ = 16;
    int bins_ = 17;
    int scale_ = 1;
    std::vector<std::uint8_t> values_;
    std::array<std::size_t, 16> corners_{};
};

struct ExpertBank {
    std::vector<LutTable> luts;
    /// QP value each expert was built for; strictly increasing.
    std::vector<int> labels;

    int size() const noexcept { return static_cast<int>(luts.size()); }
    int interval() const { return luts.at(0).interval(); }
    int scale() const { return luts.at(0).scale(); }

    /// Throws std::invalid_argument on an empty bank, label/LUT count
    /// mismatch, non-increasing labels or differing member geometry.
    void validate() const;

    bool operator==(const ExpertBank& o) const { return luts == o.luts && labels == o.labels; }
};

struct LutFileHeader {
    static constexpr std::array<char, 4> kMagic{'C', 'L', 'U', 'T'};
    static constexpr std::uint32_t kVersion = 1;

    std::uint32_t version = kVersion;
    std::uint32_t interval = 16;
    std::uint32_t bins = 17;
    std::uint32_t scale = 4;
    std::uint32_t expert_count = 1;
    std::vector<std::int32_t> labels;

    std::size_t encoded_size() const noexcept { return 24 + 4 * labels.size(); }
    std::uint64_t payload_size() const;

    std::vector<std::uint8_t> encode() const;
    /// Parses and validates a header at the start of `bytes`.
    static LutFileHeader decode(std::span<const std::uint8_t> bytes);
};

std::vector<std::uint8_t> serialize_bank(const ExpertBank& bank);
ExpertBank deserialize_bank(std::span<const std::uint8_t> bytes);

void save_bank(const ExpertBank& bank, const std::filesystem::path& path);
ExpertBank load_bank(const std::filesystem::path& path);

}  // namespace convlut
