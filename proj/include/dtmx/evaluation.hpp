#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dtmx/model.hpp"
#include "dtmx/training.hpp"

namespace dtmx {

/// Per-sample fold labels from stratified assignment: within each class,
/// fold counts differ from perfect proportionality by less than one sample.
struct FoldAssignment {
    std::vector<int> fold;
    int k = 0;
    uint64_t seed = 0;

    std::vector<size_t> testIndices(int f) const;
    std::vector<size_t> trainIndices(int f) const;
};

FoldAssignment stratifiedKFold(std::span<const Label> labels, int k, uint64_t seed);

/// Stratified train/validation split of `pool`: per class,
/// clamp(round(fraction * count), 1, count - 1) samples go to validation.
struct HoldoutSplit {
    std::vector<size_t> train;
    std::vector<size_t> val;
};

HoldoutSplit stratifiedHoldout(std::span<const Label> labels, std::span<const size_t> pool,
                               double fraction, uint64_t seed);

/// Mann-Whitney AUC of p1 scores with positive class = unfavorable; ties
/// count one half via midranks.
double auc(std::span<const double> scores, std::span<const Label> labels);

struct ConfusionMetrics {
    int64_t tp = 0;
    int64_t fp = 0;
    int64_t tn = 0;
    int64_t fn = 0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double accuracy = 0.0;
    double f1 = 0.0;
};

/// Positive class = unfavorable. Rates with an empty denominator are 0.
ConfusionMetrics confusionMetrics(std::span<const Label> predicted,
                                  std::span<const Label> labels);

/// Wilson score interval, clipped to [0,1]. level 0.95 uses z = 1.959964.
std::pair<double, double> wilsonCi(int64_t successes, int64_t n, double level = 0.95);

using PairedMetric =
    std::function<double(std::span<const double>, std::span<const Label>)>;

/// Percentile interval over B seeded with-replacement resamples of
/// (score, label) pairs. Resamples on which the metric is undefined are
/// redrawn; more than 10% undefined aborts with an instability error.
std::pair<double, double> bootstrapCi(const PairedMetric& metric, std::span<const double> scores,
                                      std::span<const Label> labels, int B, uint64_t seed,
                                      double level = 0.95);

/// Classification rule on p1: predict unfavorable when p1 >= threshold.
struct ThresholdRule {
    double threshold = 0.5;
    int sourceFold = -1;
    double gmean = 0.0;
};

std::vector<Label> classify(std::span<const double> scores, double threshold);

/// Maximizes sqrt(TPR * TNR) over candidate thresholds: midpoints of
/// consecutive sorted unique scores plus {0, 1}; ties pick the smallest.
ThresholdRule selectThreshold(std::span<const double> scores, std::span<const Label> labels);

struct MetricCell {
    double value = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

struct VariantMetrics {
    std::string name;
    MetricCell nll;
    MetricCell auc;
    MetricCell specificity;
    MetricCell sensitivity;
    MetricCell accuracy;
    MetricCell f1;
};

/// Rows = metrics, columns = model variants, cells "est [low, high]".
struct MetricsTable {
    std::vector<VariantMetrics> columns;

    std::string toCsv() const;
    std::string toText() const;
};

struct CrossvalConfig {
    int k = 10;
    uint64_t seed = 1;
    int members = 5;
    int bootstrapB = 2000;
    TrainConfig train;
    int jobs = 1;

    void validate() const;
};

struct FoldDiagnostics {
    int fold = -1;
    ThresholdRule rule;
    double valNll = 0.0;
    double testNll = 0.0;
    std::vector<size_t> testIdx;
    std::vector<double> testP1;
};

struct VariantReport {
    Variant variant = Variant::SI;
    VariantMetrics metrics;
    std::vector<FoldDiagnostics> folds;
    std::vector<EnsembleModel> foldModels;
    std::vector<double> pooledP1;
    std::vector<Label> pooledPredicted;

    std::string foldCsv() const;
};

struct CrossvalReport {
    FoldAssignment folds;
    std::vector<VariantReport> variants;

    MetricsTable table() const;
};

/// Per fold and variant: encode tabular data on the fold's training portion,
/// fit an ensemble (shared stratified inner holdout for early stopping,
/// weight tuning and threshold selection), then pool test-fold predictions
/// and attach confidence intervals. Image-free variants train one member;
/// image variants train cfg.members.
CrossvalReport crossvalReport(const LabeledDataset& data, const std::vector<Variant>& variants,
                              const CrossvalConfig& cfg);

}  // namespace dtmx
