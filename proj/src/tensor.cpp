#include "dtmx/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace dtmx {

int64_t Tensor::checkedNumel(const std::vector<int64_t>& shape) {
    if (shape.empty()) throw DataError("tensor shape must have at least one extent");
    int64_t n = 1;
    for (int64_t e : shape) {
        if (e <= 0) throw DataError("tensor extents must be positive, got " + std::to_string(e));
        if (n > (int64_t{1} << 40) / e) throw DataError("tensor extent overflow");
        n *= e;
    }
    return n;
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
    Tensor t;
    int64_t n = checkedNumel(shape);
    t.shape_ = std::move(shape);
    t.v_.assign(static_cast<size_t>(n), 0.0f);
    return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, float value) {
    Tensor t = zeros(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::fromValues(std::vector<int64_t> shape, std::vector<float> values) {
    Tensor t;
    int64_t n = checkedNumel(shape);
    if (n != static_cast<int64_t>(values.size()))
        throw DataError("tensor value count " + std::to_string(values.size()) +
                        " does not match shape product " + std::to_string(n));
    for (float v : values)
        if (!std::isfinite(v)) throw DataError("tensor values must be finite");
    t.shape_ = std::move(shape);
    t.v_ = std::move(values);
    return t;
}

void Tensor::reshape(std::vector<int64_t> shape) {
    int64_t n = checkedNumel(shape);
    if (n != numel())
        throw DataError("reshape to " + std::to_string(n) + " elements from " +
                        std::to_string(numel()));
    shape_ = std::move(shape);
}

float Tensor::minValue() const {
    return *std::min_element(v_.begin(), v_.end());
}

float Tensor::maxValue() const {
    return *std::max_element(v_.begin(), v_.end());
}

std::pair<double, double> Tensor::meanStd() const {
    double sum = 0.0;
    for (float v : v_) sum += v;
    double mean = sum / static_cast<double>(v_.size());
    double ss = 0.0;
    for (float v : v_) {
        double d = v - mean;
        ss += d * d;
    }
    return {mean, std::sqrt(ss / static_cast<double>(v_.size()))};
}

std::string Tensor::shapeString() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << ")";
    return os.str();
}

Tensor trilinearUpsample(const Tensor& map, const std::array<int64_t, 3>& target) {
    if (map.rank() != 3) throw DataError("trilinearUpsample expects a rank-3 map, got " + map.shapeString());
    for (int a = 0; a < 3; ++a) {
        if (target[static_cast<size_t>(a)] < map.extent(a))
            throw DataError("trilinearUpsample target extent " +
                            std::to_string(target[static_cast<size_t>(a)]) +
                            " smaller than source extent " + std::to_string(map.extent(a)));
    }

    const int64_t sd = map.extent(0), sh = map.extent(1), sw = map.extent(2);
    const int64_t td = target[0], th = target[1], tw = target[2];
    Tensor out = Tensor::zeros({td, th, tw});

    // corner-aligned sample coordinate for output index j on an axis
    auto coord = [](int64_t j, int64_t tExt, int64_t sExt) -> double {
        if (tExt == 1) return 0.0;
        return static_cast<double>(j) * static_cast<double>(sExt - 1) / static_cast<double>(tExt - 1);
    };

    for (int64_t d = 0; d < td; ++d) {
        double zc = coord(d, td, sd);
        int64_t z0 = std::min<int64_t>(static_cast<int64_t>(zc), sd > 1 ? sd - 2 : 0);
        double fz = zc - static_cast<double>(z0);
        int64_t z1 = std::min<int64_t>(z0 + 1, sd - 1);
        for (int64_t h = 0; h < th; ++h) {
            double yc = coord(h, th, sh);
            int64_t y0 = std::min<int64_t>(static_cast<int64_t>(yc), sh > 1 ? sh - 2 : 0);
            double fy = yc - static_cast<double>(y0);
            int64_t y1 = std::min<int64_t>(y0 + 1, sh - 1);
            for (int64_t w = 0; w < tw; ++w) {
                double xc = coord(w, tw, sw);
                int64_t x0 = std::min<int64_t>(static_cast<int64_t>(xc), sw > 1 ? sw - 2 : 0);
                double fx = xc - static_cast<double>(x0);
                int64_t x1 = std::min<int64_t>(x0 + 1, sw - 1);

                double c000 = map.at3(z0, y0, x0), c001 = map.at3(z0, y0, x1);
                double c010 = map.at3(z0, y1, x0), c011 = map.at3(z0, y1, x1);
                double c100 = map.at3(z1, y0, x0), c101 = map.at3(z1, y0, x1);
                double c110 = map.at3(z1, y1, x0), c111 = map.at3(z1, y1, x1);

                double c00 = c000 + (c001 - c000) * fx;
                double c01 = c010 + (c011 - c010) * fx;
                double c10 = c100 + (c101 - c100) * fx;
                double c11 = c110 + (c111 - c110) * fx;
                double c0 = c00 + (c01 - c00) * fy;
                double c1 = c10 + (c11 - c10) * fy;
                out.at3(d, h, w) = static_cast<float>(c0 + (c1 - c0) * fz);
            }
        }
    }
    return out;
}

}  // namespace dtmx
