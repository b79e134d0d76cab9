#include "dtmx/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>

#include "dtmx/common.hpp"

namespace dtmx {

namespace {

struct RampAnchor {
    double v;
    double r, g, b;
};

constexpr RampAnchor kRamp[] = {
    {0.00, 13.0, 8.0, 135.0},   {0.25, 126.0, 3.0, 168.0}, {0.50, 204.0, 71.0, 120.0},
    {0.75, 248.0, 149.0, 64.0}, {1.00, 240.0, 249.0, 33.0},
};

uint8_t clampByte(double v) {
    return static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

void pushU32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

void pushChunk(std::string& out, const char type[4], const std::string& data) {
    pushU32(out, static_cast<uint32_t>(data.size()));
    std::string payload(type, 4);
    payload += data;
    out += payload;
    uint32_t crc = static_cast<uint32_t>(
        crc32(0, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
    pushU32(out, crc);
}

void checkImage(int64_t width, int64_t height, size_t pxSize, size_t perPixel, const char* who) {
    if (width < 1 || height < 1)
        throw ConfigError(std::string(who) + ": image extents must be positive");
    if (pxSize != static_cast<size_t>(width * height) * perPixel)
        throw DataError(std::string(who) + ": pixel buffer size does not match extents");
}

}  // namespace

std::array<uint8_t, 3> heatColor(double v) {
    v = std::clamp(v, 0.0, 1.0);
    // quantize to the fixed 256-level ramp
    v = std::round(v * 255.0) / 255.0;
    size_t hi = 1;
    while (hi + 1 < std::size(kRamp) && kRamp[hi].v < v) ++hi;
    const RampAnchor& a = kRamp[hi - 1];
    const RampAnchor& b = kRamp[hi];
    double t = (v - a.v) / (b.v - a.v);
    return {clampByte(a.r + t * (b.r - a.r)), clampByte(a.g + t * (b.g - a.g)),
            clampByte(a.b + t * (b.b - a.b))};
}

ImageGray renderGray(int64_t rows, int64_t cols, const std::vector<double>& values) {
    checkImage(cols, rows, values.size(), 1, "render gray");
    double lo = values[0], hi = values[0];
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    ImageGray img;
    img.width = cols;
    img.height = rows;
    img.px.resize(values.size());
    double span = hi - lo;
    for (size_t i = 0; i < values.size(); ++i)
        img.px[i] = span > 0.0 ? clampByte((values[i] - lo) / span * 255.0) : 128;
    return img;
}

ImageRgb renderOverlay(const Projection2D& proj) {
    checkImage(proj.cols, proj.rows, proj.heat.size(), 1, "render overlay");
    if (proj.base.size() != proj.heat.size())
        throw DataError("render overlay: heat and base sizes differ");
    ImageGray gray = renderGray(proj.rows, proj.cols, proj.base);
    ImageRgb img;
    img.width = proj.cols;
    img.height = proj.rows;
    img.px.resize(proj.heat.size() * 3);
    for (size_t i = 0; i < proj.heat.size(); ++i) {
        double h = std::clamp(proj.heat[i], 0.0, 1.0);
        std::array<uint8_t, 3> c = heatColor(h);
        double alpha = 0.65 * h;
        for (int ch = 0; ch < 3; ++ch)
            img.px[i * 3 + static_cast<size_t>(ch)] = clampByte(
                (1.0 - alpha) * gray.px[i] + alpha * c[static_cast<size_t>(ch)]);
    }
    return img;
}

ImageRgb resizeBilinear(const ImageRgb& src, int64_t width, int64_t height) {
    checkImage(src.width, src.height, src.px.size(), 3, "resize");
    if (width < 1 || height < 1) throw ConfigError("resize: target extents must be positive");
    ImageRgb out;
    out.width = width;
    out.height = height;
    out.px.resize(static_cast<size_t>(width * height) * 3);
    double sx = width > 1 ? static_cast<double>(src.width - 1) / static_cast<double>(width - 1)
                          : 0.0;
    double sy = height > 1 ? static_cast<double>(src.height - 1) / static_cast<double>(height - 1)
                           : 0.0;
    for (int64_t y = 0; y < height; ++y) {
        double fy = static_cast<double>(y) * sy;
        int64_t y0 = static_cast<int64_t>(fy);
        int64_t y1 = std::min(y0 + 1, src.height - 1);
        double ty = fy - static_cast<double>(y0);
        for (int64_t x = 0; x < width; ++x) {
            double fx = static_cast<double>(x) * sx;
            int64_t x0 = static_cast<int64_t>(fx);
            int64_t x1 = std::min(x0 + 1, src.width - 1);
            double tx = fx - static_cast<double>(x0);
            for (int c = 0; c < 3; ++c) {
                double top = (1.0 - tx) * src.at(x0, y0, c) + tx * src.at(x1, y0, c);
                double bot = (1.0 - tx) * src.at(x0, y1, c) + tx * src.at(x1, y1, c);
                out.px[static_cast<size_t>((y * width + x) * 3 + c)] =
                    clampByte((1.0 - ty) * top + ty * bot);
            }
        }
    }
    return out;
}

std::string pgmBytes(const ImageGray& img) {
    checkImage(img.width, img.height, img.px.size(), 1, "pgm");
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                      "\n255\n";
    out.append(reinterpret_cast<const char*>(img.px.data()), img.px.size());
    return out;
}

void writePgm(const std::string& path, const ImageGray& img) {
    writeFileOrThrow(path, pgmBytes(img));
}

std::string pngBytes(const ImageRgb& img) {
    checkImage(img.width, img.height, img.px.size(), 3, "png");

    std::string raw;
    raw.reserve(static_cast<size_t>(img.height) * (static_cast<size_t>(img.width) * 3 + 1));
    for (int64_t y = 0; y < img.height; ++y) {
        raw.push_back('\0');  // filter type 0 per scanline
        raw.append(reinterpret_cast<const char*>(img.px.data() + y * img.width * 3),
                   static_cast<size_t>(img.width) * 3);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::string deflated(bound, '\0');
    if (compress2(reinterpret_cast<Bytef*>(deflated.data()), &bound,
                  reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                  9) != Z_OK)
        throw NumericError("png: deflate failed");
    deflated.resize(bound);

    std::string ihdr;
    pushU32(ihdr, static_cast<uint32_t>(img.width));
    pushU32(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);

    std::string out("\x89PNG\r\n\x1a\n", 8);
    pushChunk(out, "IHDR", ihdr);
    pushChunk(out, "IDAT", deflated);
    pushChunk(out, "IEND", "");
    return out;
}

void writePng(const std::string& path, const ImageRgb& img) {
    writeFileOrThrow(path, pngBytes(img));
}

}  // namespace dtmx
