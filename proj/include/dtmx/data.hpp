#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dtmx/model.hpp"
#include "dtmx/tensor.hpp"

namespace dtmx {

struct TabularField {
    std::string name;
    bool numeric = true;
    /// Categorical fields: declared levels, first one is the reference. Leave
    /// empty to discover levels from the training split (first appearance).
    std::vector<std::string> levels;
};

struct TabularSchema {
    std::vector<TabularField> fields;
    int fieldIndex(const std::string& name) const;
};

/// Raw per-patient tabular values; one slot per schema field, the slot of the
/// other kind stays at its default.
struct TabularRecord {
    std::vector<double> numeric;
    std::vector<std::string> categorical;
};

/// Encoding statistics fitted on the training split only: per-numeric mean/sd
/// and per-categorical level lists (reference first).
struct EncodingStats {
    std::vector<double> mean;
    std::vector<double> sd;
    std::vector<std::vector<std::string>> levels;
    std::vector<std::string> encodedNames;
    std::vector<std::string> encodedNotes;
    int64_t width() const { return static_cast<int64_t>(encodedNames.size()); }
};

EncodingStats fitEncoding(const TabularSchema& schema, const std::vector<TabularRecord>& records,
                          const std::vector<int64_t>& trainIndices);
/// K-1 dummy indicators against the reference level plus standardized
/// numerics. Unseen categorical levels raise a DataError naming the feature.
std::vector<double> encodeRecord(const TabularSchema& schema, const EncodingStats& stats,
                                 const TabularRecord& rec);

/// (v - mean) / sd over all voxels; f64 statistics. Constant volumes are
/// rejected.
Tensor standardizeVolume(const Tensor& raw);

struct LabeledDataset {
    std::vector<std::string> ids;
    std::vector<Tensor> volumes;  // empty unless hasVolumes
    std::vector<TabularRecord> tabular;
    std::vector<Label> labels;
    TabularSchema schema;
    bool hasVolumes = false;
    bool volumesStandardized = false;
    std::array<int64_t, 3> extents{0, 0, 0};

    int64_t size() const { return static_cast<int64_t>(labels.size()); }
    void validate() const;
    /// Standardizes every volume in place (no-op when already done).
    void standardizeVolumes();
};

struct SyntheticSpec {
    int64_t n = 400;
    std::array<int64_t, 3> extents{32, 32, 8};
    double radiusMin = 2.5;
    double radiusMax = 6.0;
    double intensityMin = 1.5;
    double intensityMax = 3.0;
    double noiseSd = 1.0;
    double thetaStar = 1.0;              // true intercept
    double gammaStar = -2.0;             // effect of standardized lesion volume
    std::vector<double> betaStar{1.0, -0.5};
    uint64_t seed = 1;

    void validate() const;
};

/// One generated record handed to the streaming consumer.
struct SyntheticRow {
    int64_t index;
    std::string id;
    const Tensor& volume;
    const Tensor& mask;  // 1 inside the planted lesion, 0 outside
    const TabularRecord& tabular;
    Label label;
    double lesionVolume;
    double z;
    double pUnfavorable;
};

struct SyntheticSummary {
    std::vector<double> lesionVolume;
    std::vector<double> z;
    std::vector<double> pUnfavorable;
    std::vector<Label> labels;
    double prevalence = 0.0;
    std::string warning;  // set when realized prevalence leaves [0.05, 0.95]
};

/// Generates records one at a time (volumes and masks are not retained), so
/// paper-scale cohorts stream to disk in O(1) memory.
SyntheticSummary synthesizeStream(const SyntheticSpec& spec,
                                  const std::function<void(const SyntheticRow&)>& fn);

struct SyntheticResult {
    LabeledDataset data;
    std::vector<Tensor> masks;
    SyntheticSummary summary;
    SyntheticSpec spec;
};

SyntheticResult synthesizeDataset(const SyntheticSpec& spec);

/// Writes manifest.json, labels.csv, tabular.csv, volumes/<id>.vol and, when
/// writeTruth, truth/ (masks plus per-record generator internals).
SyntheticSummary writeSyntheticDataset(const std::string& dir, const SyntheticSpec& spec,
                                       bool writeTruth = true);

// -- binary volume format ("VOL1": magic, u8 rank, u32 LE extents, f32 LE payload)

void saveVolume(const std::string& path, const Tensor& t);
Tensor loadVolume(const std::string& path);

// -- CSV and manifest I/O

std::vector<std::pair<std::string, TabularRecord>> loadTabularCsv(const std::string& path,
                                                                  const TabularSchema& schema);
std::vector<std::pair<std::string, Label>> loadLabelsCsv(const std::string& path);

struct DatasetManifest {
    std::string name;
    std::array<int64_t, 3> extents{0, 0, 0};
    std::string volumesDir;  // empty for image-free datasets
    std::string labelsCsv = "labels.csv";
    std::string tabularCsv = "tabular.csv";
    TabularSchema schema;
    uint64_t seed = 0;
};

DatasetManifest loadManifest(const std::string& path);
void saveManifest(const std::string& path, const DatasetManifest& m);

/// Loads the full dataset behind a manifest; volumes load in parallel over
/// `jobs` workers. Volumes stay raw (standardize explicitly downstream).
LabeledDataset loadDataset(const std::string& manifestPath, int jobs = 1);

}  // namespace dtmx
