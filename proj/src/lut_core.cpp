#include "convlut/lut_core.hpp"

#include <fstream>
#include <limits>
#include <stdexcept>

#include "convlut/common.hpp"

namespace convlut {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
    if (at + 4 > bytes.size()) throw FormatError("truncated LUT header", bytes.size());
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
    return v;
}

}  // namespace

void check_interval(int interval) {
    if (interval < 1 || interval > 256 || !is_power_of_two(interval))
        throw std::invalid_argument("interval must divide 256 (power of two in [1, 256]), got " +
                                    std::to_string(interval));
}

std::int64_t lattice_bins(int interval) {
    check_interval(interval);
    return interval == 1 ? 256 : 256 / interval + 1;
}

std::uint64_t lut_size_bytes(int interval, int scale, int n) {
    if (scale < 1) throw std::invalid_argument("scale must be >= 1");
    if (n < 1) throw std::invalid_argument("expert count must be >= 1");
    const auto b = static_cast<std::uint64_t>(lattice_bins(interval));
    return b * b * b * b * static_cast<std::uint64_t>(scale) * static_cast<std::uint64_t>(scale) *
           static_cast<std::uint64_t>(n);
}

LutTable::LutTable(int interval, int scale)
    : LutTable(interval, scale, std::vector<std::uint8_t>(lut_size_bytes(interval, scale, 1), 0)) {}

LutTable::LutTable(int interval, int scale, std::vector<std::uint8_t> values)
    : interval_(interval), scale_(scale), values_(std::move(values)) {
    const auto expected = lut_size_bytes(interval, scale, 1);
    if (values_.size() != expected)
        throw std::invalid_argument("LUT value count " + std::to_string(values_.size()) + " != expected " +
                                    std::to_string(expected));
    bins_ = static_cast<int>(lattice_bins(interval));
    init_geometry();
}

void LutTable::init_geometry() {
    const std::size_t b = static_cast<std::size_t>(bins_);
    const std::size_t p = static_cast<std::size_t>(patch_size());
    const std::array<std::size_t, 4> stride{b * b * b * p, b * b * p, b * p, p};
    for (int m = 0; m < 16; ++m) {
        std::size_t off = 0;
        // Unsampled table: every input is a lattice point, upper corners carry zero weight.
        if (interval_ == 1) {
            corners_[static_cast<std::size_t>(m)] = 0;
            continue;
        }
        for (int c = 0; c < 4; ++c)
            if (m & (8 >> c)) off += stride[static_cast<std::size_t>(c)];
        corners_[static_cast<std::size_t>(m)] = off;
    }
}

void ExpertBank::validate() const {
    if (luts.empty()) throw std::invalid_argument("expert bank is empty");
    if (labels.size() != luts.size())
        throw std::invalid_argument("expert bank has " + std::to_string(luts.size()) + " LUTs but " +
                                    std::to_string(labels.size()) + " labels");
    for (std::size_t i = 1; i < luts.size(); ++i) {
        if (luts[i].interval() != luts[0].interval() || luts[i].scale() != luts[0].scale())
            throw std::invalid_argument("expert " + std::to_string(i) +
                                        " geometry differs from expert 0 (interval/scale mismatch)");
        if (labels[i] <= labels[i - 1]) throw std::invalid_argument("expert labels must be strictly increasing");
    }
}

std::uint64_t LutFileHeader::payload_size() const {
    const auto b = static_cast<std::uint64_t>(bins);
    return b * b * b * b * static_cast<std::uint64_t>(scale) * scale * expert_count;
}

std::vector<std::uint8_t> LutFileHeader::encode() const {
    std::vector<std::uint8_t> out;
    out.reserve(encoded_size());
    out.insert(out.end(), kMagic.begin(), kMagic.end());
    put_u32(out, version);
    put_u32(out, interval);
    put_u32(out, bins);
    put_u32(out, scale);
    put_u32(out, expert_count);
    for (auto l : labels) put_u32(out, static_cast<std::uint32_t>(l));
    return out;
}

LutFileHeader LutFileHeader::decode(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) throw FormatError("truncated LUT header", bytes.size());
    for (std::size_t i = 0; i < 4; ++i)
        if (bytes[i] != static_cast<std::uint8_t>(kMagic[i])) throw FormatError("bad LUT magic", i);
    LutFileHeader h;
    h.version = get_u32(bytes, 4);
    if (h.version != kVersion) throw FormatError("unsupported LUT version " + std::to_string(h.version), 4);
    h.interval = get_u32(bytes, 8);
    if (h.interval == 0 || h.interval > 256 || !is_power_of_two(static_cast<int>(h.interval)))
        throw FormatError("invalid interval " + std::to_string(h.interval), 8);
    h.bins = get_u32(bytes, 12);
    if (h.bins != static_cast<std::uint32_t>(lattice_bins(static_cast<int>(h.interval))))
        throw FormatError("bins " + std::to_string(h.bins) + " inconsistent with interval", 12);
    h.scale = get_u32(bytes, 16);
    if (h.scale == 0 || h.scale > 64) throw FormatError("invalid scale " + std::to_string(h.scale), 16);
    h.expert_count = get_u32(bytes, 20);
    if (h.expert_count == 0 || h.expert_count > 4096)
        throw FormatError("invalid expert count " + std::to_string(h.expert_count), 20);
    h.labels.resize(h.expert_count);
    for (std::uint32_t i = 0; i < h.expert_count; ++i)
        h.labels[i] = static_cast<std::int32_t>(get_u32(bytes, 24 + 4 * i));
    return h;
}

std::vector<std::uint8_t> serialize_bank(const ExpertBank& bank) {
    bank.validate();
    LutFileHeader h;
    h.interval = static_cast<std::uint32_t>(bank.interval());
    h.bins = static_cast<std::uint32_t>(bank.luts[0].bins());
    h.scale = static_cast<std::uint32_t>(bank.scale());
    h.expert_count = static_cast<std::uint32_t>(bank.size());
    h.labels.assign(bank.labels.begin(), bank.labels.end());
    std::vector<std::uint8_t> out = h.encode();
    out.reserve(out.size() + h.payload_size());
    for (const auto& lut : bank.luts) out.insert(out.end(), lut.values().begin(), lut.values().end());
    return out;
}

ExpertBank deserialize_bank(std::span<const std::uint8_t> bytes) {
    const LutFileHeader h = LutFileHeader::decode(bytes);
    const std::size_t head = h.encoded_size();
    const std::uint64_t payload = h.payload_size();
    if (bytes.size() - head != payload)
        throw FormatError("payload is " + std::to_string(bytes.size() - head) + " bytes, header implies " +
                              std::to_string(payload),
                          std::min<std::uint64_t>(bytes.size(), head + payload));
    ExpertBank bank;
    const std::size_t per = static_cast<std::size_t>(payload / h.expert_count);
    for (std::uint32_t e = 0; e < h.expert_count; ++e) {
        auto first = bytes.begin() + static_cast<std::ptrdiff_t>(head + e * per);
        bank.luts.emplace_back(static_cast<int>(h.interval), static_cast<int>(h.scale),
                               std::vector<std::uint8_t>(first, first + static_cast<std::ptrdiff_t>(per)));
        bank.labels.push_back(h.labels[e]);
    }
    try {
        bank.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(e.what(), 24);
    }
    return bank;
}

void save_bank(const ExpertBank& bank, const std::filesystem::path& path) {
    const auto bytes = serialize_bank(bank);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

ExpertBank load_bank(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_bank(bytes);
}

}  // namespace convlut
