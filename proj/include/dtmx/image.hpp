#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dtmx/xai.hpp"

namespace dtmx {

struct ImageGray {
    int64_t width = 0;
    int64_t height = 0;
    std::vector<uint8_t> px;  // row-major
};

struct ImageRgb {
    int64_t width = 0;
    int64_t height = 0;
    std::vector<uint8_t> px;  // row-major, 3 bytes per pixel

    uint8_t at(int64_t x, int64_t y, int c) const {
        return px[static_cast<size_t>((y * width + x) * 3 + c)];
    }
};

/// Fixed 256-level ramp from dark blue through magenta to yellow; v clamped
/// to [0, 1].
std::array<uint8_t, 3> heatColor(double v);

/// Min-max normalized grayscale of `values` (constant images render mid-gray).
ImageGray renderGray(int64_t rows, int64_t cols, const std::vector<double>& values);

/// Anatomy in gray with the colormapped heat blended on top; heat doubles as
/// the blend weight so zero-importance pixels stay anatomical.
ImageRgb renderOverlay(const Projection2D& proj);

ImageRgb resizeBilinear(const ImageRgb& src, int64_t width, int64_t height);

std::string pgmBytes(const ImageGray& img);
void writePgm(const std::string& path, const ImageGray& img);

std::string pngBytes(const ImageRgb& img);
void writePng(const std::string& path, const ImageRgb& img);

}  // namespace dtmx
