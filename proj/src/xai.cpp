#include "dtmx/xai.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "dtmx/common.hpp"
#include "dtmx/network.hpp"

namespace dtmx {

namespace {

void requireImageVariant(const TransformationModel& member, const char* who) {
    if (!variantUsesImage(member.variant))
        throw ConfigError(std::string(who) + ": variant " + variantName(member.variant) +
                          " has no image network");
}

double shiftTerm(const TransformationModel& member, const std::vector<double>* tabular,
                 const char* who) {
    if (!variantUsesShift(member.variant)) return 0.0;
    if (tabular == nullptr)
        throw DataError(std::string(who) + ": variant " + variantName(member.variant) +
                        " requires tabular features");
    if (tabular->size() != member.beta.size())
        throw DataError(std::string(who) + ": tabular width " + std::to_string(tabular->size()) +
                        " does not match coefficient width " + std::to_string(member.beta.size()));
    double s = 0.0;
    for (size_t i = 0; i < member.beta.size(); ++i) s += member.beta[i] * (*tabular)[i];
    return s;
}

std::array<int64_t, 3> volumeExtents(const Tensor& volume, const char* who) {
    if (volume.rank() != 3)
        throw DataError(std::string(who) + ": volume must be rank 3, got " + volume.shapeString());
    return {volume.extent(0), volume.extent(1), volume.extent(2)};
}

void requireMatchingInput(const TransformationModel& member, const std::array<int64_t, 3>& ext,
                          const char* who) {
    if (ext != member.net.inputExtents)
        throw DataError(std::string(who) + ": volume extents do not match the network input");
}

}  // namespace

void ExplanationMap3D::validate() const {
    if (values.rank() != 3) throw DataError("explanation map must be rank 3");
    if (method != "gradcam" && method != "occlusion")
        throw DataError("explanation map method must be gradcam or occlusion");
    for (int64_t i = 0; i < values.numel(); ++i)
        if (!(values.data()[i] >= 0.0f))
            throw NumericError("explanation map has a negative or non-finite entry");
}

void OcclusionConfig::validate(const std::array<int64_t, 3>& extents) const {
    for (int a = 0; a < 3; ++a) {
        size_t ai = static_cast<size_t>(a);
        if (window[ai] < 1) throw ConfigError("occlusion window must be at least 1 per axis");
        if (stride[ai] < 1) throw ConfigError("occlusion stride must be at least 1 per axis");
        if (window[ai] > extents[ai])
            throw ConfigError("occlusion window exceeds the volume extents on axis " +
                              std::to_string(a));
    }
}

std::vector<std::array<int64_t, 3>> occlusionOrigins(const std::array<int64_t, 3>& extents,
                                                     const OcclusionConfig& cfg) {
    cfg.validate(extents);
    std::array<std::vector<int64_t>, 3> axis;
    for (size_t a = 0; a < 3; ++a) {
        for (int64_t o = 0; o + cfg.window[a] <= extents[a]; o += cfg.stride[a])
            axis[a].push_back(o);
        if (axis[a].back() != extents[a] - cfg.window[a])
            axis[a].push_back(extents[a] - cfg.window[a]);
    }
    std::vector<std::array<int64_t, 3>> origins;
    origins.reserve(axis[0].size() * axis[1].size() * axis[2].size());
    for (int64_t o0 : axis[0])
        for (int64_t o1 : axis[1])
            for (int64_t o2 : axis[2]) origins.push_back({o0, o1, o2});
    return origins;
}

ExplanationMap3D gradcam(const TransformationModel& member, const Tensor& volume,
                         const std::vector<double>* tabular, Label k,
                         ChannelImportance* importance) {
    requireImageVariant(member, "gradcam");
    std::array<int64_t, 3> ext = volumeExtents(volume, "gradcam");
    requireMatchingInput(member, ext, "gradcam");

    NetworkEval eval(member.net);
    NetTape tape;
    double theta = eval.forwardScalar(member.params, volume, &tape);
    double h = theta + shiftTerm(member, tabular, "gradcam");
    double p0 = stableSigmoid(h);
    double factor = (k == kFavorable ? 1.0 : -1.0) * p0 * (1.0 - p0);

    NetGrads grads = eval.backward(member.params, tape, 1.0);
    const Tensor& a = tape.camActivation();
    const Tensor& da = grads.cam;  // d theta / d cam activation
    int64_t channels = a.extent(0);
    int64_t voxels = a.numel() / channels;

    std::vector<double> alpha(static_cast<size_t>(channels), 0.0);
    for (int64_t l = 0; l < channels; ++l) {
        double sum = 0.0;
        const float* g = da.data() + l * voxels;
        for (int64_t v = 0; v < voxels; ++v) sum += factor * static_cast<double>(g[v]);
        alpha[static_cast<size_t>(l)] = sum / static_cast<double>(voxels);
    }
    if (importance != nullptr) {
        importance->alpha = alpha;
        importance->poolCount = voxels;
    }

    Tensor raw = Tensor::zeros({a.extent(1), a.extent(2), a.extent(3)});
    for (int64_t l = 0; l < channels; ++l) {
        const float* src = a.data() + l * voxels;
        float w = static_cast<float>(alpha[static_cast<size_t>(l)]);
        for (int64_t v = 0; v < voxels; ++v) raw.data()[v] += w * src[v];
    }
    for (int64_t v = 0; v < voxels; ++v) raw.data()[v] = std::max(0.0f, raw.data()[v]);

    ExplanationMap3D map;
    map.values = trilinearUpsample(raw, ext);
    map.method = "gradcam";
    map.k = k;
    map.weights = {1.0};
    return map;
}

ExplanationMap3D occlusion(const TransformationModel& member, const Tensor& volume,
                           const std::vector<double>* tabular, const OcclusionConfig& cfg,
                           Label k, int jobs) {
    requireImageVariant(member, "occlusion");
    if (jobs < 1) throw ConfigError("occlusion: jobs must be at least 1");
    std::array<int64_t, 3> ext = volumeExtents(volume, "occlusion");
    requireMatchingInput(member, ext, "occlusion");
    double shift = shiftTerm(member, tabular, "occlusion");

    std::vector<std::array<int64_t, 3>> origins = occlusionOrigins(ext, cfg);
    const int64_t nWindows = static_cast<int64_t>(origins.size());

    NetworkEval baseEval(member.net);
    double hOrig = baseEval.forwardScalar(member.params, volume) + shift;
    OutcomeDistribution orig = outcomeProbabilities(hOrig);
    double pOrig = k == kFavorable ? orig.p0 : orig.p1;

    // per-window deltas computed in parallel, then folded in fixed order so
    // the map does not depend on the job count
    std::vector<double> delta(static_cast<size_t>(nWindows), 0.0);
    int workers = static_cast<int>(std::min<int64_t>(jobs, nWindows));
    auto runChunk = [&](int64_t lo, int64_t hi) {
        NetworkEval eval(member.net);
        Tensor patched = volume;
        for (int64_t wIdx = lo; wIdx < hi; ++wIdx) {
            const std::array<int64_t, 3>& o = origins[static_cast<size_t>(wIdx)];
            for (int64_t d = o[0]; d < o[0] + cfg.window[0]; ++d)
                for (int64_t h = o[1]; h < o[1] + cfg.window[1]; ++h)
                    for (int64_t w = o[2]; w < o[2] + cfg.window[2]; ++w)
                        patched.at3(d, h, w) = cfg.fill;
            double hOcc = eval.forwardScalar(member.params, patched) + shift;
            OutcomeDistribution occ = outcomeProbabilities(hOcc);
            delta[static_cast<size_t>(wIdx)] = pOrig - (k == kFavorable ? occ.p0 : occ.p1);
            for (int64_t d = o[0]; d < o[0] + cfg.window[0]; ++d)
                for (int64_t h = o[1]; h < o[1] + cfg.window[1]; ++h)
                    for (int64_t w = o[2]; w < o[2] + cfg.window[2]; ++w)
                        patched.at3(d, h, w) = volume.at3(d, h, w);
        }
    };
    if (workers <= 1) {
        runChunk(0, nWindows);
    } else {
        std::vector<std::thread> pool;
        int64_t chunk = (nWindows + workers - 1) / workers;
        for (int t = 0; t < workers; ++t) {
            int64_t lo = t * chunk;
            int64_t hi = std::min<int64_t>(nWindows, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back(runChunk, lo, hi);
        }
        for (std::thread& th : pool) th.join();
    }

    std::vector<double> sum(static_cast<size_t>(volume.numel()), 0.0);
    std::vector<int32_t> cover(static_cast<size_t>(volume.numel()), 0);
    for (int64_t wIdx = 0; wIdx < nWindows; ++wIdx) {
        const std::array<int64_t, 3>& o = origins[static_cast<size_t>(wIdx)];
        double dv = delta[static_cast<size_t>(wIdx)];
        for (int64_t d = o[0]; d < o[0] + cfg.window[0]; ++d)
            for (int64_t h = o[1]; h < o[1] + cfg.window[1]; ++h)
                for (int64_t w = o[2]; w < o[2] + cfg.window[2]; ++w) {
                    size_t i = static_cast<size_t>((d * ext[1] + h) * ext[2] + w);
                    sum[i] += dv;
                    ++cover[i];
                }
    }

    ExplanationMap3D map;
    map.values = Tensor::zeros({ext[0], ext[1], ext[2]});
    for (int64_t i = 0; i < volume.numel(); ++i) {
        size_t si = static_cast<size_t>(i);
        if (cover[si] == 0) throw NumericError("occlusion: uncovered voxel");
        double mean = sum[si] / static_cast<double>(cover[si]);
        map.values.data()[i] = static_cast<float>(std::max(0.0, mean));
    }
    map.method = "occlusion";
    map.k = k;
    map.weights = {1.0};
    return map;
}

ExplanationMap3D ensembleMap(std::span<const ExplanationMap3D> maps,
                             std::span<const double> weights) {
    if (maps.empty()) throw DataError("ensemble map: no member maps");
    if (maps.size() != weights.size())
        throw ConfigError("ensemble map: weight count does not match map count");
    for (const ExplanationMap3D& m : maps) {
        if (!m.values.sameShape(maps.front().values))
            throw DataError("ensemble map: member map extents differ");
        if (m.method != maps.front().method)
            throw DataError("ensemble map: member map methods differ");
        if (m.k != maps.front().k) throw DataError("ensemble map: member map classes differ");
    }
    ExplanationMap3D out;
    out.values = Tensor::zeros(maps.front().values.shape());
    for (size_t m = 0; m < maps.size(); ++m) {
        float w = static_cast<float>(weights[m]);
        const float* src = maps[m].values.data();
        for (int64_t i = 0; i < out.values.numel(); ++i)
            out.values.data()[i] += w * src[i];
    }
    out.method = maps.front().method;
    out.k = maps.front().k;
    out.weights.assign(weights.begin(), weights.end());
    out.modelId = maps.front().modelId;
    return out;
}

Projection2D axialProjection(const ExplanationMap3D& map, const Tensor& volume) {
    if (!map.values.sameShape(volume))
        throw DataError("axial projection: map and volume extents differ");
    if (volume.rank() != 3) throw DataError("axial projection: volume must be rank 3");
    int64_t rows = volume.extent(0), cols = volume.extent(1), depth = volume.extent(2);

    float peak = 0.0f;
    for (int64_t i = 0; i < map.values.numel(); ++i)
        peak = std::max(peak, map.values.data()[i]);

    Projection2D proj;
    proj.rows = rows;
    proj.cols = cols;
    proj.heat.assign(static_cast<size_t>(rows * cols), 0.0);
    proj.base.assign(static_cast<size_t>(rows * cols), 0.0);
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) {
            double hSum = 0.0, bSum = 0.0;
            for (int64_t a = 0; a < depth; ++a) {
                hSum += map.values.at3(i, j, a);
                bSum += volume.at3(i, j, a);
            }
            size_t px = static_cast<size_t>(i * cols + j);
            proj.heat[px] = peak > 0.0f ? hSum / (static_cast<double>(peak) *
                                                  static_cast<double>(depth))
                                        : 0.0;
            proj.base[px] = bSum / static_cast<double>(depth);
        }
    return proj;
}

Projection2D classAverageMap(std::span<const Projection2D> group) {
    if (group.empty()) throw DataError("class average: empty projection group");
    for (const Projection2D& p : group)
        if (p.rows != group.front().rows || p.cols != group.front().cols)
            throw DataError("class average: projection extents differ");
    Projection2D out;
    out.rows = group.front().rows;
    out.cols = group.front().cols;
    size_t n = group.front().heat.size();
    out.heat.assign(n, 0.0);
    out.base.assign(n, 0.0);
    for (const Projection2D& p : group)
        for (size_t i = 0; i < n; ++i) {
            out.heat[i] += p.heat[i];
            out.base[i] += p.base[i];
        }
    double inv = 1.0 / static_cast<double>(group.size());
    for (size_t i = 0; i < n; ++i) {
        out.heat[i] *= inv;
        out.base[i] *= inv;
    }
    return out;
}

}  // namespace dtmx
