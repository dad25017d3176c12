#include "convlut/image.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <stdexcept>
#include <string>

#include "convlut/common.hpp"

namespace convlut {

Image::Image(int w, int h, int c, std::uint8_t fill) : width(w), height(h), channels(c) {
    if (w < 0 || h < 0 || c < 1) throw std::invalid_argument("invalid image geometry");
    data.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), fill);
}

std::uint8_t Image::clamped(int c, int y, int x) const noexcept {
    return at(c, std::clamp(y, 0, height - 1), std::clamp(x, 0, width - 1));
}

Image Image::channel(int c) const {
    Image out(width, height, 1);
    std::copy(plane(c).begin(), plane(c).end(), out.data.begin());
    return out;
}

void Image::set_channel(int c, const Image& single) {
    if (single.width != width || single.height != height || single.channels != 1)
        throw std::invalid_argument("set_channel: geometry mismatch");
    std::copy(single.data.begin(), single.data.end(), plane(c).begin());
}

Image to_luma(const Image& img) {
    if (img.channels == 1) return img;
    if (img.channels != 3) throw std::invalid_argument("to_luma expects 1 or 3 channels");
    Image out(img.width, img.height, 1);
    const auto r = img.plane(0), g = img.plane(1), b = img.plane(2);
    for (std::size_t i = 0; i < img.plane_size(); ++i)
        out.data[i] = static_cast<std::uint8_t>((299 * r[i] + 587 * g[i] + 114 * b[i] + 500) / 1000);
    return out;
}

Image crop(const Image& img, int x0, int y0, int w, int h) {
    if (x0 < 0 || y0 < 0 || w < 0 || h < 0 || x0 + w > img.width || y0 + h > img.height)
        throw std::invalid_argument("crop out of bounds");
    Image out(w, h, img.channels);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
    return out;
}

Image rotate90(const Image& img, int k) {
    k = ((k % 4) + 4) % 4;
    if (k == 0) return img;
    const int W = img.width, H = img.height;
    Image out = (k == 2) ? Image(W, H, img.channels) : Image(H, W, img.channels);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x) {
                std::uint8_t v;
                if (k == 1)
                    v = img.at(c, x, W - 1 - y);
                else if (k == 2)
                    v = img.at(c, H - 1 - y, W - 1 - x);
                else
                    v = img.at(c, H - 1 - x, y);
                out.at(c, y, x) = v;
            }
    return out;
}

namespace {

int read_header_int(std::istream& in) {
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = in.get();
        } else if (!std::isspace(ch)) {
            break;
        }
        ch = in.get();
    }
    if (ch == EOF || !std::isdigit(ch)) throw FormatError("malformed PNM header", static_cast<std::uint64_t>(in.tellg()));
    int v = 0;
    while (ch != EOF && std::isdigit(ch)) {
        v = v * 10 + (ch - '0');
        ch = in.get();
    }
    return v;  // the single whitespace after the number is consumed
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
        throw FormatError(path.string() + ": not a binary PGM/PPM file", 0);
    const int channels = magic[1] == '5' ? 1 : 3;
    const int w = read_header_int(in);
    const int h = read_header_int(in);
    const int maxval = read_header_int(in);
    if (w <= 0 || h <= 0 || maxval != 255)
        throw FormatError(path.string() + ": unsupported PNM geometry/maxval", static_cast<std::uint64_t>(in.tellg()));
    std::vector<std::uint8_t> interleaved(static_cast<std::size_t>(w) * h * channels);
    const auto start = static_cast<std::uint64_t>(in.tellg());
    in.read(reinterpret_cast<char*>(interleaved.data()), static_cast<std::streamsize>(interleaved.size()));
    if (static_cast<std::size_t>(in.gcount()) != interleaved.size())
        throw FormatError(path.string() + ": truncated pixel data", start + static_cast<std::uint64_t>(in.gcount()));
    Image img(w, h, channels);
    for (int c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < img.plane_size(); ++i)
            img.data[static_cast<std::size_t>(c) * img.plane_size() + i] = interleaved[i * channels + c];
    return img;
}

void write_pnm(const Image& img, const std::filesystem::path& path) {
    if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("write_pnm expects 1 or 3 channels");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(img.width) + " " +
                               std::to_string(img.height) + "\n255\n";
    out << header;
    std::vector<std::uint8_t> interleaved(img.data.size());
    for (int c = 0; c < img.channels; ++c)
        for (std::size_t i = 0; i < img.plane_size(); ++i)
            interleaved[i * img.channels + c] = img.data[static_cast<std::size_t>(c) * img.plane_size() + i];
    out.write(reinterpret_cast<const char*>(interleaved.data()), static_cast<std::streamsize>(interleaved.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace convlut
