#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "dtmx/model.hpp"

namespace dtmx {

/// Per-channel pooled gradient weights of the cam_target layer.
struct ChannelImportance {
    std::vector<double> alpha;
    int64_t poolCount = 0;  // voxels averaged per channel
};

/// Nonnegative voxel importance over the input volume's extents.
struct ExplanationMap3D {
    Tensor values;
    std::string method;  // "gradcam" | "occlusion"
    Label k = kUnfavorable;
    std::vector<double> weights;  // member weights baked into the map
    std::string modelId;

    void validate() const;
};

struct OcclusionConfig {
    std::array<int64_t, 3> window{18, 18, 4};
    std::array<int64_t, 3> stride{10, 10, 3};
    float fill = 0.0f;

    void validate(const std::array<int64_t, 3>& extents) const;
};

/// Stride-grid window origins; a border-clamped extra origin is appended per
/// axis when the grid does not reach the far edge.
std::vector<std::array<int64_t, 3>> occlusionOrigins(const std::array<int64_t, 3>& extents,
                                                     const OcclusionConfig& cfg);

/// Gradient of p_k pooled per channel and recombined over the cam_target
/// activations, rectified, then trilinearly upsampled to the input extents.
ExplanationMap3D gradcam(const TransformationModel& member, const Tensor& volume,
                         const std::vector<double>* tabular, Label k,
                         ChannelImportance* importance = nullptr);

/// Mean drop of p_k over all windows covering each voxel when the window is
/// replaced by the fill value; negative means are zeroed.
ExplanationMap3D occlusion(const TransformationModel& member, const Tensor& volume,
                           const std::vector<double>* tabular, const OcclusionConfig& cfg,
                           Label k, int jobs = 1);

/// Voxelwise convex combination of per-member maps.
ExplanationMap3D ensembleMap(std::span<const ExplanationMap3D> maps,
                             std::span<const double> weights);

/// Axial means of the max-normalized map and of the raw volume.
struct Projection2D {
    int64_t rows = 0;  // first volume extent
    int64_t cols = 0;  // second volume extent
    std::vector<double> heat;  // row-major, in [0, 1]
    std::vector<double> base;

    double heatAt(int64_t i, int64_t j) const { return heat[static_cast<size_t>(i * cols + j)]; }
    double baseAt(int64_t i, int64_t j) const { return base[static_cast<size_t>(i * cols + j)]; }
};

Projection2D axialProjection(const ExplanationMap3D& map, const Tensor& volume);

/// Pixelwise mean of already-normalized projections.
Projection2D classAverageMap(std::span<const Projection2D> group);

}  // namespace dtmx
