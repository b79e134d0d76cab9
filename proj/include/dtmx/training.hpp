#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dtmx/data.hpp"
#include "dtmx/model.hpp"

namespace dtmx {

/// Optimizer and inner-split settings. `lrDecay` multiplies the learning rate
/// once per epoch; `earlyStop = false` runs every epoch on the full split,
/// which keeps deterministic full-data fits available.
struct TrainConfig {
    double learningRate = 1e-3;
    double lrDecay = 1.0;
    int batchSize = 16;
    int epochs = 150;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int patience = 20;
    double validationFraction = 0.2;
    bool earlyStop = true;
    int jobs = 1;
    /// Image-variant architecture; unset means the stock small CNN sized to
    /// the dataset extents.
    std::optional<NetworkSpec> network;

    void validate() const;
};

/// Tabular rows encoded against training-split statistics; volumes stay in
/// the referenced dataset. `x` has one row per dataset record.
struct EncodedDataset {
    const LabeledDataset* data = nullptr;
    EncodingStats stats;
    std::vector<std::vector<double>> x;

    int64_t width() const { return static_cast<int64_t>(stats.width()); }
    const LabeledDataset& dataset() const;
};

EncodedDataset encodeDataset(const LabeledDataset& data, std::span<const size_t> trainIdx);

struct MemberFit {
    TransformationModel model;
    double initialNll = 0.0;
    double trainNll = 0.0;
    double valNll = 0.0;
    int bestEpoch = -1;
    int epochsRun = 0;
};

/// Fits one transformation model by mini-batch NLL descent with adaptive
/// moments. When `valIdx` is empty and cfg.earlyStop is set, a stratified
/// cfg.validationFraction holdout is carved from `trainIdx` (seeded from
/// `seed`) for early stopping.
MemberFit trainMember(Variant variant, const EncodedDataset& enc, std::span<const size_t> trainIdx,
                      std::span<const size_t> valIdx, const TrainConfig& cfg, uint64_t seed);

/// Convex-weighted ensemble of independently trained members.
struct EnsembleModel {
    Variant variant = Variant::SI;
    std::vector<TransformationModel> members;
    std::vector<double> weights;

    int memberCount() const { return static_cast<int>(members.size()); }
    void validate() const;
    double transformation(const Tensor* volume, const std::vector<double>* tabular) const;
    /// Hot-path overload; members share one NetworkSpec, so one evaluator.
    double transformation(const NetworkEval& eval, const Tensor* volume,
                          const std::vector<double>* tabular) const;
};

double ensembleTransformation(const EnsembleModel& model, const Tensor* volume,
                              const std::vector<double>* tabular);

struct EnsembleFit {
    EnsembleModel model;
    std::vector<MemberFit> members;
    std::vector<size_t> trainIdx;
    std::vector<size_t> valIdx;
};

/// Trains `seeds.size()` members from distinct seeds, then tunes the ensemble
/// weights on the validation split. When `valIdx` is empty a shared stratified
/// holdout is carved from `trainIdx`.
EnsembleFit fitEnsemble(Variant variant, const EncodedDataset& enc,
                        std::span<const size_t> trainIdx, std::span<const size_t> valIdx,
                        std::span<const uint64_t> seeds, const TrainConfig& cfg);

/// Minimizes validation NLL of the weighted transformation over the simplex.
/// `memberH[m][j]` is member m's transformation value on validation sample j.
/// Softmax-parameterized descent from the uniform start keeps the result a
/// convex combination; the best visited point is returned, so uniform weights
/// are never beaten by the answer and identical members stay uniform.
std::vector<double> optimizeEnsembleWeights(const std::vector<std::vector<double>>& memberH,
                                            std::span<const Label> valLabels);

struct EnsembleCoefficients {
    bool hasIntercept = false;
    double theta0 = 0.0;
    std::vector<double> beta;
};

/// Weighted average of member shift coefficients; SI-LS also averages the
/// intercept. Variants without a linear shift are rejected.
EnsembleCoefficients ensembleCoefficients(const EnsembleModel& model);

/// Everything needed to score new records: the ensemble plus the tabular
/// schema, encoding statistics, and expected volume extents.
struct ModelBundle {
    EnsembleModel ensemble;
    TabularSchema schema;
    EncodingStats stats;
    std::array<int64_t, 3> extents{0, 0, 0};
};

void saveModel(const std::string& path, const ModelBundle& bundle);
ModelBundle loadModel(const std::string& path);

}  // namespace dtmx
