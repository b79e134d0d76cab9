#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dtmx/training.hpp"
#include "dtmx/xai.hpp"

namespace dtmx {

/// Concatenated per-member global-average-pooled cam_target activations of
/// the ensemble applied to an explanation map; dimension = channels * members.
std::vector<double> extractFeatures(const EnsembleModel& ensemble, const Tensor& map);
/// Projection overload: the heat image is replicated along the axial axis to
/// the ensemble's input extents.
std::vector<double> extractFeatures(const EnsembleModel& ensemble, const Projection2D& proj);

/// Symmetrized pairwise t-SNE affinities with per-point bandwidths.
struct AffinitySet {
    size_t n = 0;
    std::vector<double> p;      // row-major n*n, symmetric, zero diagonal
    std::vector<double> sigma;  // per-point bandwidth
    double perplexity = 0.0;
    std::string warning;  // set when duplicate points required jitter

    double at(size_t i, size_t j) const { return p[i * n + j]; }
};

/// Binary search on each point's bandwidth (at most 50 iterations, tolerance
/// 1e-5 on log-perplexity), then p_ij = (p_j|i + p_i|j) / (2N).
AffinitySet calibrateAffinities(const std::vector<std::vector<double>>& features,
                                double perplexity);

struct TsneResult {
    std::vector<std::array<double, 2>> y;
    std::vector<double> kl;  // KL(P || Q) of the state entering each iteration
};

/// Exact O(N^2) t-SNE: early exaggeration x12 for the first 250 iterations,
/// learning rate 200, momentum 0.5 switching to 0.8 at iteration 250, seeded
/// Gaussian init with sd 1e-4.
TsneResult tsne(const AffinitySet& affinities, int iterations = 1000, uint64_t seed = 1);

struct EmbeddingPoint {
    std::string id;
    double x = 0.0;
    double y = 0.0;
    Label predicted = kFavorable;
    Label truth = kFavorable;
    bool correct = true;
};

std::string embeddingCsv(std::span<const EmbeddingPoint> points);
std::vector<EmbeddingPoint> parseEmbeddingCsv(const std::string& text);

/// Self-contained scatter page; thumbnails[i] holds PNG bytes for points[i]
/// (empty entries render a placeholder and add a warning).
std::string embeddingHtml(std::span<const EmbeddingPoint> points,
                          std::span<const std::string> thumbnails, std::string* warning = nullptr);

}  // namespace dtmx
