#include "convlut/metrics.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace convlut {

namespace {

void check_same(const Image& a, const Image& b, const char* what) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels)
        throw std::invalid_argument(std::string(what) + ": images differ in shape");
    if (a.empty()) throw std::invalid_argument(std::string(what) + ": empty image");
}

constexpr int kWin = 11;

std::array<double, kWin> gaussian_window() {
    std::array<double, kWin> g{};
    double sum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double d = i - kWin / 2;
        sum += (g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5)));
    }
    for (auto& v : g) v /= sum;
    return g;
}

// Separable 'valid' filtering of a w x h plane.
std::vector<double> filter_valid(const std::vector<double>& src, int w, int h, const std::array<double, kWin>& g) {
    const int ow = w - kWin + 1, oh = h - kWin + 1;
    std::vector<double> tmp(static_cast<std::size_t>(ow) * h), out(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kWin; ++k) acc += g[static_cast<std::size_t>(k)] * src[static_cast<std::size_t>(y) * w + x + k];
            tmp[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kWin; ++k) acc += g[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>(y + k) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
    check_same(a, b, "psnr");
    double se = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        se += d * d;
    }
    if (se == 0.0) return kPsnrInfinity;
    const double mse = se / static_cast<double>(a.data.size());
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim(const Image& a, const Image& b) {
    check_same(a, b, "ssim");
    if (a.width < kWin || a.height < kWin) throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    const Image la = to_luma(a), lb = to_luma(b);
    const int w = la.width, h = la.height;
    const std::size_t n = la.data.size();
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = la.data[i];
        y[i] = lb.data[i];
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto g = gaussian_window();
    const auto mx = filter_valid(x, w, h, g), my = filter_valid(y, w, h, g);
    const auto exx = filter_valid(xx, w, h, g), eyy = filter_valid(yy, w, h, g), exy = filter_valid(xy, w, h, g);
    const double c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
    double sum = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double sx = exx[i] - mx[i] * mx[i];
        const double sy = eyy[i] - my[i] * my[i];
        const double sxy = exy[i] - mx[i] * my[i];
        sum += ((2 * mx[i] * my[i] + c1) * (2 * sxy + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (sx + sy + c2));
    }
    return sum / static_cast<double>(mx.size());
}

}  // namespace convlut
