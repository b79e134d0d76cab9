#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dtmx/common.hpp"

namespace dtmx {

/// Dense row-major float32 N-d array. The carrier of volumes, activations,
/// gradients and explanation maps. Externally supplied values are checked
/// finite at construction; internal factories (zeros/full) are trusted.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, float value);
    /// Validating constructor: value count must equal the shape product and
    /// every entry must be finite.
    static Tensor fromValues(std::vector<int64_t> shape, std::vector<float> values);

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t extent(int axis) const { return shape_[static_cast<size_t>(axis)]; }
    int64_t numel() const { return static_cast<int64_t>(v_.size()); }
    bool empty() const { return v_.empty(); }
    bool sameShape(const Tensor& o) const { return shape_ == o.shape_; }

    float* data() { return v_.data(); }
    const float* data() const { return v_.data(); }
    std::span<float> values() { return v_; }
    std::span<const float> values() const { return v_; }

    float& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

    // indexed access for the common rank-3 (D,H,W) and rank-4 (C,D,H,W) cases
    float& at3(int64_t d, int64_t h, int64_t w) {
        return v_[static_cast<size_t>((d * shape_[1] + h) * shape_[2] + w)];
    }
    float at3(int64_t d, int64_t h, int64_t w) const {
        return v_[static_cast<size_t>((d * shape_[1] + h) * shape_[2] + w)];
    }
    float& at4(int64_t c, int64_t d, int64_t h, int64_t w) {
        return v_[static_cast<size_t>(((c * shape_[1] + d) * shape_[2] + h) * shape_[3] + w)];
    }
    float at4(int64_t c, int64_t d, int64_t h, int64_t w) const {
        return v_[static_cast<size_t>(((c * shape_[1] + d) * shape_[2] + h) * shape_[3] + w)];
    }

    void fill(float v) { std::fill(v_.begin(), v_.end(), v); }

    /// In-place shape change; the element count must stay the same.
    void reshape(std::vector<int64_t> shape);

    float minValue() const;
    float maxValue() const;
    /// Mean and population standard deviation over all entries (f64 accumulation).
    std::pair<double, double> meanStd() const;

    std::string shapeString() const;

private:
    std::vector<int64_t> shape_;
    std::vector<float> v_;

    static int64_t checkedNumel(const std::vector<int64_t>& shape);
};

/// Corner-aligned trilinear upsampling of a rank-3 map to `target` extents
/// (each >= the source extent). Interpolation runs in f64 and is exact for
/// constant inputs; outputs stay within [min, max] of the source.
Tensor trilinearUpsample(const Tensor& map, const std::array<int64_t, 3>& target);

}  // namespace dtmx
