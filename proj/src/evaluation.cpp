#include "dtmx/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>

#include "dtmx/common.hpp"

namespace dtmx {

namespace {

const char* className(Label l) { return labelName(l); }

void checkBothClasses(std::span<const Label> labels, const char* who) {
    bool fav = false, unfav = false;
    for (Label l : labels) (l == kUnfavorable ? unfav : fav) = true;
    if (!fav || !unfav)
        throw DataError(std::string(who) + ": both outcome classes must be present");
}

double zForLevel(double level) {
    if (level <= 0.0 || level >= 1.0)
        throw ConfigError("confidence level must lie in (0, 1)");
    if (std::abs(level - 0.95) < 1e-12) return 1.959964;
    double lo = 0.0, hi = 40.0;
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
        double mid = 0.5 * (lo + hi);
        (std::erf(mid / std::sqrt(2.0)) < level ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

FoldAssignment stratifiedKFold(std::span<const Label> labels, int k, uint64_t seed) {
    if (k < 2) throw ConfigError("stratified k-fold: k must be at least 2");
    if (labels.empty()) throw DataError("stratified k-fold: no samples");
    FoldAssignment fa;
    fa.k = k;
    fa.seed = seed;
    fa.fold.assign(labels.size(), -1);
    for (Label cls : {kFavorable, kUnfavorable}) {
        std::vector<size_t> idx;
        for (size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == cls) idx.push_back(i);
        if (idx.size() < static_cast<size_t>(k))
            throw DataError(std::string("stratified k-fold: class '") + className(cls) + "' has " +
                            std::to_string(idx.size()) + " samples, fewer than k = " +
                            std::to_string(k));
        Rng rng(mixSeed(seed, cls + 1));
        rng.shuffle(idx);
        for (size_t pos = 0; pos < idx.size(); ++pos)
            fa.fold[idx[pos]] = static_cast<int>(pos % static_cast<size_t>(k));
    }
    return fa;
}

std::vector<size_t> FoldAssignment::testIndices(int f) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < fold.size(); ++i)
        if (fold[i] == f) out.push_back(i);
    return out;
}

std::vector<size_t> FoldAssignment::trainIndices(int f) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < fold.size(); ++i)
        if (fold[i] != f) out.push_back(i);
    return out;
}

HoldoutSplit stratifiedHoldout(std::span<const Label> labels, std::span<const size_t> pool,
                               double fraction, uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 0.5))
        throw ConfigError("holdout fraction must lie in (0, 0.5]");
    if (pool.empty()) throw DataError("stratified holdout: empty pool");
    for (size_t i : pool)
        if (i >= labels.size()) throw DataError("stratified holdout: pool index out of range");
    HoldoutSplit split;
    for (Label cls : {kFavorable, kUnfavorable}) {
        std::vector<size_t> idx;
        for (size_t i : pool)
            if (labels[i] == cls) idx.push_back(i);
        if (idx.size() < 2)
            throw DataError(std::string("stratified holdout: class '") + className(cls) +
                            "' has fewer than 2 samples in the pool");
        Rng rng(mixSeed(seed, cls + 1));
        rng.shuffle(idx);
        auto nVal = static_cast<size_t>(std::llround(fraction * static_cast<double>(idx.size())));
        nVal = std::clamp<size_t>(nVal, 1, idx.size() - 1);
        split.val.insert(split.val.end(), idx.begin(), idx.begin() + static_cast<long>(nVal));
        split.train.insert(split.train.end(), idx.begin() + static_cast<long>(nVal), idx.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    return split;
}

double auc(std::span<const double> scores, std::span<const Label> labels) {
    if (scores.size() != labels.size()) throw DataError("auc: score/label count mismatch");
    if (scores.empty()) throw DataError("auc: no samples");
    checkBothClasses(labels, "auc");
    const size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t(0));
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        double mid = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t t = i; t <= j; ++t) rank[order[t]] = mid;
        i = j + 1;
    }
    double sumPos = 0.0;
    int64_t nPos = 0;
    for (size_t s = 0; s < n; ++s)
        if (labels[s] == kUnfavorable) {
            sumPos += rank[s];
            ++nPos;
        }
    int64_t nNeg = static_cast<int64_t>(n) - nPos;
    double np = static_cast<double>(nPos);
    return (sumPos - np * (np + 1.0) / 2.0) / (np * static_cast<double>(nNeg));
}

ConfusionMetrics confusionMetrics(std::span<const Label> predicted,
                                  std::span<const Label> labels) {
    if (predicted.size() != labels.size())
        throw DataError("confusion metrics: prediction/label count mismatch");
    if (labels.empty()) throw DataError("confusion metrics: no samples");
    ConfusionMetrics m;
    for (size_t i = 0; i < labels.size(); ++i) {
        bool truthPos = labels[i] == kUnfavorable;
        bool predPos = predicted[i] == kUnfavorable;
        if (truthPos)
            ++(predPos ? m.tp : m.fn);
        else
            ++(predPos ? m.fp : m.tn);
    }
    auto rate = [](int64_t num, int64_t den) {
        return den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
    };
    m.sensitivity = rate(m.tp, m.tp + m.fn);
    m.specificity = rate(m.tn, m.tn + m.fp);
    m.accuracy = rate(m.tp + m.tn, static_cast<int64_t>(labels.size()));
    m.f1 = rate(2 * m.tp, 2 * m.tp + m.fp + m.fn);
    return m;
}

std::pair<double, double> wilsonCi(int64_t successes, int64_t n, double level) {
    if (n <= 0) throw DataError("wilson interval: n must be positive");
    if (successes < 0 || successes > n)
        throw DataError("wilson interval: successes outside [0, n]");
    double z = zForLevel(level);
    double nn = static_cast<double>(n);
    double p = static_cast<double>(successes) / nn;
    double z2 = z * z;
    double denom = 1.0 + z2 / nn;
    double center = (p + z2 / (2.0 * nn)) / denom;
    double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
    // at the corners the bound equals the endpoint algebraically
    double lo = successes == 0 ? 0.0 : std::max(0.0, center - half);
    double hi = successes == n ? 1.0 : std::min(1.0, center + half);
    return {lo, hi};
}

std::pair<double, double> bootstrapCi(const PairedMetric& metric, std::span<const double> scores,
                                      std::span<const Label> labels, int B, uint64_t seed,
                                      double level) {
    if (B < 100) throw ConfigError("bootstrap: B must be at least 100");
    if (level <= 0.0 || level >= 1.0)
        throw ConfigError("confidence level must lie in (0, 1)");
    if (scores.size() != labels.size()) throw DataError("bootstrap: score/label count mismatch");
    if (scores.empty()) throw DataError("bootstrap: no samples");
    const size_t n = scores.size();
    std::vector<double> values;
    values.reserve(static_cast<size_t>(B));
    std::vector<double> rs(n);
    std::vector<Label> rl(n);
    int64_t failures = 0;
    auto fail = [&]() {
        if (10 * ++failures > B)
            throw NumericError(
                "bootstrap instability: metric undefined on more than 10% of resamples");
    };
    for (int b = 0; b < B; ++b) {
        Rng rng(mixSeed(seed, static_cast<uint64_t>(b)));
        for (;;) {
            bool fav = false, unfav = false;
            for (size_t i = 0; i < n; ++i) {
                size_t j = static_cast<size_t>(rng.below(n));
                rs[i] = scores[j];
                rl[i] = labels[j];
                (rl[i] == kUnfavorable ? unfav : fav) = true;
            }
            if (!fav || !unfav) {
                fail();
                continue;
            }
            double v;
            try {
                v = metric(rs, rl);
            } catch (const std::exception&) {
                fail();
                continue;
            }
            if (!std::isfinite(v)) {
                fail();
                continue;
            }
            values.push_back(v);
            break;
        }
    }
    double alpha = (1.0 - level) / 2.0;
    return {percentile(values, alpha), percentile(values, 1.0 - alpha)};
}

std::vector<Label> classify(std::span<const double> scores, double threshold) {
    std::vector<Label> out(scores.size());
    for (size_t i = 0; i < scores.size(); ++i)
        out[i] = scores[i] >= threshold ? kUnfavorable : kFavorable;
    return out;
}

ThresholdRule selectThreshold(std::span<const double> scores, std::span<const Label> labels) {
    if (scores.size() != labels.size())
        throw DataError("threshold selection: score/label count mismatch");
    if (scores.empty()) throw DataError("threshold selection: no samples");
    checkBothClasses(labels, "threshold selection");
    for (double s : scores)
        if (!std::isfinite(s) || s < 0.0 || s > 1.0)
            throw DataError("threshold selection: scores must be probabilities in [0, 1]");
    std::vector<double> uniq(scores.begin(), scores.end());
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    std::vector<double> candidates{0.0, 1.0};
    for (size_t i = 0; i + 1 < uniq.size(); ++i)
        candidates.push_back(uniq[i] + 0.5 * (uniq[i + 1] - uniq[i]));
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    int64_t pos = 0, neg = 0;
    for (Label l : labels) ++(l == kUnfavorable ? pos : neg);
    ThresholdRule best;
    double bestG = -1.0;
    for (double t : candidates) {
        int64_t tp = 0, tn = 0;
        for (size_t i = 0; i < scores.size(); ++i) {
            bool predPos = scores[i] >= t;
            if (labels[i] == kUnfavorable && predPos) ++tp;
            if (labels[i] != kUnfavorable && !predPos) ++tn;
        }
        double g = std::sqrt(static_cast<double>(tp) / static_cast<double>(pos) *
                             (static_cast<double>(tn) / static_cast<double>(neg)));
        if (g > bestG) {
            bestG = g;
            best.threshold = t;
            best.gmean = g;
        }
    }
    return best;
}

// -- report rendering

namespace {

struct RowSpec {
    const char* name;
    MetricCell VariantMetrics::*cell;
};

constexpr RowSpec kRows[] = {
    {"NLL", &VariantMetrics::nll},           {"AUC", &VariantMetrics::auc},
    {"Specificity", &VariantMetrics::specificity}, {"Sensitivity", &VariantMetrics::sensitivity},
    {"Accuracy", &VariantMetrics::accuracy}, {"F1-score", &VariantMetrics::f1},
};

std::string cellText(const MetricCell& c) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%.3f [%.3f, %.3f]", c.value, c.lo, c.hi);
    return buf;
}

}  // namespace

std::string MetricsTable::toCsv() const {
    std::string out = "variant,metric,estimate,ci_low,ci_high\n";
    char buf[160];
    for (const VariantMetrics& col : columns)
        for (const RowSpec& row : kRows) {
            const MetricCell& c = col.*(row.cell);
            std::snprintf(buf, sizeof(buf), "%s,%s,%.9g,%.9g,%.9g\n", col.name.c_str(), row.name,
                          c.value, c.lo, c.hi);
            out += buf;
        }
    return out;
}

std::string MetricsTable::toText() const {
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> header{"metric"};
    for (const VariantMetrics& col : columns) header.push_back(col.name);
    cells.push_back(header);
    for (const RowSpec& row : kRows) {
        std::vector<std::string> line{row.name};
        for (const VariantMetrics& col : columns) line.push_back(cellText(col.*(row.cell)));
        cells.push_back(line);
    }
    std::vector<size_t> width(cells[0].size(), 0);
    for (const auto& line : cells)
        for (size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
    std::string out;
    for (const auto& line : cells) {
        for (size_t c = 0; c < line.size(); ++c) {
            out += line[c];
            if (c + 1 < line.size()) out.append(width[c] - line[c].size() + 2, ' ');
        }
        out += '\n';
    }
    return out;
}

std::string VariantReport::foldCsv() const {
    std::string out = "fold,threshold,gmean,val_nll,test_nll,test_n\n";
    char buf[160];
    for (const FoldDiagnostics& d : folds) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%zu\n", d.fold, d.rule.threshold,
                      d.rule.gmean, d.valNll, d.testNll, d.testIdx.size());
        out += buf;
    }
    return out;
}

MetricsTable CrossvalReport::table() const {
    MetricsTable t;
    for (const VariantReport& v : variants) t.columns.push_back(v.metrics);
    return t;
}

// -- cross-validation driver

void CrossvalConfig::validate() const {
    if (k < 2) throw ConfigError("crossval: k must be at least 2");
    if (members < 1) throw ConfigError("crossval: members must be at least 1");
    if (bootstrapB < 100) throw ConfigError("crossval: bootstrap B must be at least 100");
    if (jobs < 1) throw ConfigError("crossval: jobs must be at least 1");
    train.validate();
}

namespace {

double nllFromP1(std::span<const double> p1, std::span<const Label> labels) {
    double sum = 0.0;
    for (size_t i = 0; i < p1.size(); ++i) {
        double p = labels[i] == kUnfavorable ? p1[i] : 1.0 - p1[i];
        sum -= std::log(std::max(p, 1e-12));
    }
    return sum / static_cast<double>(p1.size());
}

std::vector<double> scoreP1(const EnsembleModel& model, const EncodedDataset& enc,
                            std::span<const size_t> idx, NetworkEval* eval) {
    const LabeledDataset& ds = enc.dataset();
    std::vector<double> p1(idx.size());
    for (size_t j = 0; j < idx.size(); ++j) {
        size_t i = idx[j];
        const Tensor* vol = variantUsesImage(model.variant) ? &ds.volumes[i] : nullptr;
        const std::vector<double>* tab = variantUsesShift(model.variant) ? &enc.x[i] : nullptr;
        double h = eval ? model.transformation(*eval, vol, tab) : model.transformation(vol, tab);
        p1[j] = outcomeProbabilities(h).p1;
    }
    return p1;
}

std::vector<Label> subsetLabels(const LabeledDataset& ds, std::span<const size_t> idx) {
    std::vector<Label> out(idx.size());
    for (size_t j = 0; j < idx.size(); ++j) out[j] = ds.labels[idx[j]];
    return out;
}

}  // namespace

CrossvalReport crossvalReport(const LabeledDataset& data, const std::vector<Variant>& variants,
                              const CrossvalConfig& cfg) {
    cfg.validate();
    data.validate();
    if (variants.empty()) throw ConfigError("crossval: no model variants requested");
    bool needsImage = false;
    for (Variant v : variants) needsImage = needsImage || variantUsesImage(v);
    if (needsImage && !data.hasVolumes)
        throw DataError("crossval: requested variant needs image volumes but the dataset has none");
    if (needsImage && !data.volumesStandardized)
        throw DataError("crossval: standardize volumes before cross-validation");

    CrossvalReport report;
    report.folds = stratifiedKFold(data.labels, cfg.k, cfg.seed);
    const size_t n = data.size();

    for (Variant variant : variants) {
        VariantReport rep;
        rep.variant = variant;
        rep.metrics.name = variantName(variant);
        rep.folds.resize(static_cast<size_t>(cfg.k));
        rep.foldModels.resize(static_cast<size_t>(cfg.k));
        rep.pooledP1.assign(n, 0.0);
        rep.pooledPredicted.assign(n, kFavorable);

        int foldJobs = std::min(cfg.jobs, cfg.k);
        parallelFor(cfg.k, foldJobs, [&](int64_t f) {
            auto fold = static_cast<int>(f);
            std::vector<size_t> pool = report.folds.trainIndices(fold);
            std::vector<size_t> test = report.folds.testIndices(fold);
            HoldoutSplit split = stratifiedHoldout(data.labels, pool, cfg.train.validationFraction,
                                                   mixSeed(cfg.seed, static_cast<uint64_t>(fold), 7));
            EncodedDataset enc =
                variantUsesShift(variant) ? encodeDataset(data, pool) : EncodedDataset{&data, {}, {}};
            if (!variantUsesShift(variant)) enc.x.resize(n);

            int m = variantUsesImage(variant) ? cfg.members : 1;
            std::vector<uint64_t> seeds;
            for (int s = 0; s < m; ++s)
                seeds.push_back(mixSeed(cfg.seed, static_cast<uint64_t>(fold),
                                        static_cast<uint64_t>(s), 17));
            TrainConfig tc = cfg.train;
            tc.jobs = foldJobs > 1 ? 1 : cfg.jobs;
            EnsembleFit fit = fitEnsemble(variant, enc, split.train, split.val, seeds, tc);

            std::optional<NetworkEval> eval;
            if (variantUsesImage(variant)) eval.emplace(fit.model.members.front().net);
            NetworkEval* ev = eval ? &*eval : nullptr;
            std::vector<double> valP1 = scoreP1(fit.model, enc, split.val, ev);
            std::vector<Label> valLabels = subsetLabels(data, split.val);
            ThresholdRule rule = selectThreshold(valP1, valLabels);
            rule.sourceFold = fold;
            if (rule.gmean == 0.0) rule.threshold = 0.5;

            std::vector<double> testP1 = scoreP1(fit.model, enc, test, ev);
            std::vector<Label> testLabels = subsetLabels(data, test);

            FoldDiagnostics diag;
            diag.fold = fold;
            diag.rule = rule;
            diag.valNll = nllFromP1(valP1, valLabels);
            diag.testNll = nllFromP1(testP1, testLabels);
            diag.testIdx = test;
            diag.testP1 = testP1;
            rep.folds[static_cast<size_t>(fold)] = std::move(diag);
            rep.foldModels[static_cast<size_t>(fold)] = std::move(fit.model);
        });

        for (const FoldDiagnostics& d : rep.folds)
            for (size_t j = 0; j < d.testIdx.size(); ++j) {
                rep.pooledP1[d.testIdx[j]] = d.testP1[j];
                rep.pooledPredicted[d.testIdx[j]] =
                    d.testP1[j] >= d.rule.threshold ? kUnfavorable : kFavorable;
            }

        ConfusionMetrics cm = confusionMetrics(rep.pooledPredicted, data.labels);
        rep.metrics.nll.value = nllFromP1(rep.pooledP1, data.labels);
        rep.metrics.auc.value = auc(rep.pooledP1, data.labels);
        rep.metrics.sensitivity.value = cm.sensitivity;
        rep.metrics.specificity.value = cm.specificity;
        rep.metrics.accuracy.value = cm.accuracy;
        rep.metrics.f1.value = cm.f1;

        auto setWilson = [&](MetricCell& cell, int64_t s, int64_t total) {
            auto [lo, hi] = wilsonCi(s, total);
            cell.lo = lo;
            cell.hi = hi;
        };
        setWilson(rep.metrics.sensitivity, cm.tp, cm.tp + cm.fn);
        setWilson(rep.metrics.specificity, cm.tn, cm.tn + cm.fp);
        setWilson(rep.metrics.accuracy, cm.tp + cm.tn, static_cast<int64_t>(n));

        auto setBoot = [&](MetricCell& cell, const PairedMetric& metric,
                           std::span<const double> s, uint64_t tag) {
            auto [lo, hi] = bootstrapCi(metric, s, data.labels, cfg.bootstrapB,
                                        mixSeed(cfg.seed, tag, static_cast<uint64_t>(variant)));
            cell.lo = lo;
            cell.hi = hi;
        };
        setBoot(rep.metrics.nll,
                [](std::span<const double> s, std::span<const Label> l) { return nllFromP1(s, l); },
                rep.pooledP1, 101);
        setBoot(rep.metrics.auc,
                [](std::span<const double> s, std::span<const Label> l) { return auc(s, l); },
                rep.pooledP1, 102);
        std::vector<double> predScore(n);
        for (size_t i = 0; i < n; ++i)
            predScore[i] = rep.pooledPredicted[i] == kUnfavorable ? 1.0 : 0.0;
        setBoot(rep.metrics.f1,
                [](std::span<const double> s, std::span<const Label> l) {
                    return confusionMetrics(classify(s, 0.5), l).f1;
                },
                predScore, 103);

        report.variants.push_back(std::move(rep));
    }
    return report;
}

}  // namespace dtmx
