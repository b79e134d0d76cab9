#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dtmx/network.hpp"
#include "dtmx/tensor.hpp"

namespace dtmx {

/// Model variants: simple intercept (SI), simple intercept + linear shift
/// (SI-LS), complex image intercept (CI), and CI with linear shift (CI-LS).
enum class Variant { SI, SILS, CI, CILS };

std::string variantName(Variant v);
Variant parseVariant(const std::string& name);

inline bool variantUsesImage(Variant v) { return v == Variant::CI || v == Variant::CILS; }
inline bool variantUsesShift(Variant v) { return v == Variant::SILS || v == Variant::CILS; }

/// Outcome labels. Unfavorable is the positive class throughout (sensitivity,
/// F1, thresholds on p1).
using Label = uint8_t;
inline constexpr Label kFavorable = 0;
inline constexpr Label kUnfavorable = 1;

inline const char* labelName(Label l) { return l == kUnfavorable ? "unfavorable" : "favorable"; }

struct OutcomeDistribution {
    double h = 0.0;   // transformation value
    double p0 = 0.5;  // P(favorable)
    double p1 = 0.5;  // P(unfavorable)
};

/// p0 = sigma(h) under the standard-logistic latent distribution.
OutcomeDistribution outcomeProbabilities(double h);

/// Mean negative log-likelihood of binary outcomes; probabilities are clamped
/// at 1e-12 before the log.
double nll(std::span<const double> p0, std::span<const Label> labels);

/// One transformation model h(y0 | B, x) = theta0(B) + x^T beta. Holds only
/// the fields its variant demands: a scalar intercept (SI*), an image network
/// (CI*), and shift coefficients (*-LS).
struct TransformationModel {
    Variant variant = Variant::SI;
    double theta0 = 0.0;         // SI, SI-LS
    NetworkSpec net;             // CI, CI-LS
    NetParams params;            // CI, CI-LS
    std::vector<double> beta;    // SI-LS, CI-LS

    double transformationValue(const Tensor* volume, const std::vector<double>* tabular) const;
    /// Hot-path overload reusing a caller-owned evaluator for the image term.
    double transformationValue(const NetworkEval& eval, const Tensor* volume,
                               const std::vector<double>* tabular) const;
};

struct CoefficientEntry {
    std::string name;
    double beta = 0.0;
    double oddsRatio = 1.0;
    double ciLow = 0.0;
    double ciHigh = 0.0;
    std::string note;  // reference level for dummies, "per 1 SD" for numerics
};

struct CoefficientReport {
    std::vector<CoefficientEntry> entries;
    /// feature,beta,odds_ratio,ci_low,ci_high
    std::string toCsv() const;
};

/// Builds the per-feature report from a point estimate plus resampled draws
/// (bootstrap replicates or per-fold ensemble coefficients). With no draws the
/// interval collapses onto the point estimate.
CoefficientReport coefficientReport(const std::vector<double>& beta,
                                    const std::vector<std::vector<double>>& draws,
                                    const std::vector<std::string>& names,
                                    const std::vector<std::string>& notes = {});

}  // namespace dtmx
