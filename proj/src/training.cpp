#include "dtmx/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <optional>

#include "dtmx/common.hpp"
#include "dtmx/evaluation.hpp"
#include "dtmx/serialize.hpp"
#include "json.hpp"

using nlohmann::json;

namespace dtmx {

void TrainConfig::validate() const {
    if (!(learningRate > 0.0)) throw ConfigError("train: learning rate must be positive");
    if (!(lrDecay > 0.0 && lrDecay <= 1.0))
        throw ConfigError("train: lr decay must lie in (0, 1]");
    if (batchSize < 1) throw ConfigError("train: batch size must be at least 1");
    if (epochs < 1) throw ConfigError("train: epoch count must be at least 1");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
        throw ConfigError("train: moment decays must lie in (0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("train: epsilon must be positive");
    if (patience < 1) throw ConfigError("train: patience must be at least 1");
    if (!(validationFraction > 0.0 && validationFraction <= 0.5))
        throw ConfigError("train: validation fraction must lie in (0, 0.5]");
    if (jobs < 1) throw ConfigError("train: jobs must be at least 1");
}

const LabeledDataset& EncodedDataset::dataset() const {
    if (!data) throw std::logic_error("EncodedDataset used before initialization");
    return *data;
}

EncodedDataset encodeDataset(const LabeledDataset& data, std::span<const size_t> trainIdx) {
    EncodedDataset enc;
    enc.data = &data;
    enc.x.resize(data.size());
    if (data.schema.fields.empty()) return enc;
    std::vector<int64_t> idx(trainIdx.begin(), trainIdx.end());
    enc.stats = fitEncoding(data.schema, data.tabular, idx);
    for (size_t i = 0; i < data.size(); ++i)
        enc.x[i] = encodeRecord(data.schema, enc.stats, data.tabular[i]);
    return enc;
}

// -- single-member training

namespace {

struct Moments {
    std::vector<double> m;
    std::vector<double> v;
    explicit Moments(size_t n) : m(n, 0.0), v(n, 0.0) {}
};

struct AdamScalar {
    double lr, beta1, beta2, eps;
    double c1, c2;  // 1 - beta^t corrections

    double step(double& m, double& v, double g) const {
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        return lr * (m / c1) / (std::sqrt(v / c2) + eps);
    }
};

/// All optimizer state for one member; theta0 and beta stay in double, the
/// network parameters are f32 tensors with double moments.
struct MemberState {
    Variant variant;
    double theta0 = 0.0;
    std::vector<double> beta;
    NetworkSpec paramsSpec;
    NetParams params;

    Moments theta0M{1};
    std::optional<Moments> betaM;
    std::vector<Moments> weightM;
    std::vector<Moments> biasM;

    std::vector<double> dTheta0;
    std::vector<double> dBeta;
    std::vector<std::vector<double>> dWeight;
    std::vector<std::vector<double>> dBias;

    void zeroGrads() {
        std::fill(dTheta0.begin(), dTheta0.end(), 0.0);
        std::fill(dBeta.begin(), dBeta.end(), 0.0);
        for (auto& g : dWeight) std::fill(g.begin(), g.end(), 0.0);
        for (auto& g : dBias) std::fill(g.begin(), g.end(), 0.0);
    }
};

void applyAdam(MemberState& st, const AdamScalar& adam) {
    if (variantUsesImage(st.variant)) {
        for (size_t l = 0; l < st.params.weight.size(); ++l) {
            auto wv = st.params.weight[l].values();
            for (size_t i = 0; i < wv.size(); ++i)
                wv[i] -= static_cast<float>(
                    adam.step(st.weightM[l].m[i], st.weightM[l].v[i], st.dWeight[l][i]));
            auto bv = st.params.bias[l].values();
            for (size_t i = 0; i < bv.size(); ++i)
                bv[i] -= static_cast<float>(
                    adam.step(st.biasM[l].m[i], st.biasM[l].v[i], st.dBias[l][i]));
        }
    } else {
        st.theta0 -= adam.step(st.theta0M.m[0], st.theta0M.v[0], st.dTheta0[0]);
    }
    if (variantUsesShift(st.variant)) {
        auto& bm = *st.betaM;
        for (size_t i = 0; i < st.beta.size(); ++i)
            st.beta[i] -= adam.step(bm.m[i], bm.v[i], st.dBeta[i]);
    }
}

double shiftDot(const std::vector<double>& beta, const std::vector<double>& x) {
    double s = 0.0;
    for (size_t i = 0; i < beta.size(); ++i) s += beta[i] * x[i];
    return s;
}

double meanNllOn(const MemberState& st, const EncodedDataset& enc, const NetworkEval* eval,
                 std::span<const size_t> idx) {
    const LabeledDataset& ds = enc.dataset();
    double sum = 0.0;
    for (size_t i : idx) {
        double h = 0.0;
        if (variantUsesImage(st.variant))
            h = eval->forwardScalar(st.params, ds.volumes[i]);
        else
            h = st.theta0;
        if (variantUsesShift(st.variant)) h += shiftDot(st.beta, enc.x[i]);
        OutcomeDistribution d = outcomeProbabilities(h);
        double p = ds.labels[i] == kUnfavorable ? d.p1 : d.p0;
        sum -= std::log(std::max(p, 1e-12));
    }
    return sum / static_cast<double>(idx.size());
}

}  // namespace

MemberFit trainMember(Variant variant, const EncodedDataset& enc, std::span<const size_t> trainIdx,
                      std::span<const size_t> valIdx, const TrainConfig& cfg, uint64_t seed) {
    cfg.validate();
    const LabeledDataset& ds = enc.dataset();
    if (trainIdx.empty()) throw DataError("train: empty training split");
    for (size_t i : trainIdx)
        if (i >= ds.size()) throw DataError("train: training index out of range");
    {
        bool fav = false, unfav = false;
        for (size_t i : trainIdx) (ds.labels[i] == kUnfavorable ? unfav : fav) = true;
        if (!fav || !unfav) throw DataError("train: single-class training split");
    }
    if (variantUsesImage(variant) && !ds.hasVolumes)
        throw DataError("train: variant " + variantName(variant) + " requires image volumes");
    if (variantUsesShift(variant) && enc.width() == 0)
        throw ConfigError("train: variant " + variantName(variant) + " requires tabular features");

    std::vector<size_t> train(trainIdx.begin(), trainIdx.end());
    std::vector<size_t> val(valIdx.begin(), valIdx.end());
    if (val.empty() && cfg.earlyStop) {
        HoldoutSplit split =
            stratifiedHoldout(ds.labels, train, cfg.validationFraction, mixSeed(seed, 7));
        train = std::move(split.train);
        val = std::move(split.val);
    }

    MemberState st;
    st.variant = variant;
    std::optional<NetworkEval> eval;
    if (variantUsesImage(variant)) {
        NetworkSpec spec = cfg.network ? *cfg.network : NetworkSpec::defaultSpec(ds.extents);
        if (spec.inputExtents != ds.extents)
            throw ConfigError("train: network input extents do not match the dataset extents");
        st.params = glorotInit(spec, seed);
        st.dWeight.resize(st.params.weight.size());
        st.dBias.resize(st.params.bias.size());
        for (size_t l = 0; l < st.params.weight.size(); ++l) {
            st.dWeight[l].resize(st.params.weight[l].numel());
            st.dBias[l].resize(st.params.bias[l].numel());
            st.weightM.emplace_back(st.params.weight[l].numel());
            st.biasM.emplace_back(st.params.bias[l].numel());
        }
        // the spec must outlive the evaluator; park it in the model up front
        st.paramsSpec = std::move(spec);
        eval.emplace(st.paramsSpec);
    }
    st.dTheta0.assign(1, 0.0);
    if (variantUsesShift(variant)) {
        st.beta.assign(static_cast<size_t>(enc.width()), 0.0);
        st.dBeta.assign(st.beta.size(), 0.0);
        st.betaM.emplace(st.beta.size());
    }

    MemberFit fit;
    fit.initialNll = meanNllOn(st, enc, eval ? &*eval : nullptr, train);

    struct Snapshot {
        double theta0;
        std::vector<double> beta;
        NetParams params;
    };
    double bestValNll = std::numeric_limits<double>::infinity();
    Snapshot best{st.theta0, st.beta, st.params};
    int stale = 0;
    int64_t step = 0;
    NetTape tape;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = cfg.learningRate * std::pow(cfg.lrDecay, epoch);
        std::vector<size_t> order = train;
        Rng epochRng(mixSeed(seed, 11, static_cast<uint64_t>(epoch)));
        epochRng.shuffle(order);

        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batchSize)) {
            size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batchSize));
            double invB = 1.0 / static_cast<double>(stop - start);
            st.zeroGrads();
            for (size_t b = start; b < stop; ++b) {
                size_t i = order[b];
                double h = 0.0;
                if (variantUsesImage(variant))
                    h = eval->forwardScalar(st.params, ds.volumes[i], &tape);
                else
                    h = st.theta0;
                if (variantUsesShift(variant)) h += shiftDot(st.beta, enc.x[i]);
                OutcomeDistribution d = outcomeProbabilities(h);
                double g = (d.p0 - (ds.labels[i] == kFavorable ? 1.0 : 0.0)) * invB;
                if (variantUsesImage(variant)) {
                    NetGrads ng = eval->backward(st.params, tape, g);
                    for (size_t l = 0; l < st.dWeight.size(); ++l) {
                        auto wv = ng.weight[l].values();
                        for (size_t t = 0; t < wv.size(); ++t) st.dWeight[l][t] += wv[t];
                        auto bv = ng.bias[l].values();
                        for (size_t t = 0; t < bv.size(); ++t) st.dBias[l][t] += bv[t];
                    }
                } else {
                    st.dTheta0[0] += g;
                }
                if (variantUsesShift(variant))
                    for (size_t t = 0; t < st.beta.size(); ++t) st.dBeta[t] += g * enc.x[i][t];
            }
            ++step;
            AdamScalar adam{lr, cfg.beta1, cfg.beta2, cfg.epsilon,
                            1.0 - std::pow(cfg.beta1, static_cast<double>(step)),
                            1.0 - std::pow(cfg.beta2, static_cast<double>(step))};
            applyAdam(st, adam);
        }
        fit.epochsRun = epoch + 1;

        if (cfg.earlyStop && !val.empty()) {
            double valNll = meanNllOn(st, enc, eval ? &*eval : nullptr, val);
            if (valNll < bestValNll) {
                bestValNll = valNll;
                best = {st.theta0, st.beta, st.params};
                fit.bestEpoch = epoch;
                stale = 0;
            } else if (++stale >= cfg.patience) {
                break;
            }
        } else {
            fit.bestEpoch = epoch;
        }
    }

    if (cfg.earlyStop && !val.empty()) {
        st.theta0 = best.theta0;
        st.beta = std::move(best.beta);
        st.params = std::move(best.params);
    }
    fit.trainNll = meanNllOn(st, enc, eval ? &*eval : nullptr, train);
    fit.valNll = val.empty() ? std::numeric_limits<double>::quiet_NaN()
                             : meanNllOn(st, enc, eval ? &*eval : nullptr, val);
    eval.reset();

    fit.model.variant = variant;
    fit.model.theta0 = st.theta0;
    fit.model.beta = std::move(st.beta);
    if (variantUsesImage(variant)) {
        fit.model.net = std::move(st.paramsSpec);
        fit.model.params = std::move(st.params);
    }
    return fit;
}

// -- ensembles

void EnsembleModel::validate() const {
    if (members.empty()) throw ConfigError("ensemble: no members");
    if (weights.size() != members.size())
        throw ConfigError("ensemble: weight/member count mismatch");
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw ConfigError("ensemble: weights must be nonnegative");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("ensemble: weights must sum to 1");
    json net0;
    for (const TransformationModel& m : members) {
        if (m.variant != variant) throw ConfigError("ensemble: members must share the variant");
        if (variantUsesImage(variant)) {
            json net = networkSpecToJson(m.net);
            if (net0.is_null())
                net0 = std::move(net);
            else if (net != net0)
                throw ConfigError("ensemble: members must share the network architecture");
        }
        if (variantUsesShift(variant) && m.beta.size() != members.front().beta.size())
            throw ConfigError("ensemble: members must share the coefficient dimension");
    }
}

double EnsembleModel::transformation(const NetworkEval& eval, const Tensor* volume,
                                     const std::vector<double>* tabular) const {
    double h = 0.0;
    for (size_t m = 0; m < members.size(); ++m)
        h += weights[m] * members[m].transformationValue(eval, volume, tabular);
    return h;
}

double EnsembleModel::transformation(const Tensor* volume,
                                     const std::vector<double>* tabular) const {
    if (variantUsesImage(variant)) {
        NetworkEval eval(members.front().net);
        return transformation(eval, volume, tabular);
    }
    double h = 0.0;
    for (size_t m = 0; m < members.size(); ++m)
        h += weights[m] * members[m].transformationValue(volume, tabular);
    return h;
}

double ensembleTransformation(const EnsembleModel& model, const Tensor* volume,
                              const std::vector<double>* tabular) {
    return model.transformation(volume, tabular);
}

std::vector<double> optimizeEnsembleWeights(const std::vector<std::vector<double>>& memberH,
                                            std::span<const Label> valLabels) {
    const size_t M = memberH.size();
    if (M == 0) throw ConfigError("weight tuning: no members");
    const size_t V = valLabels.size();
    if (V == 0) throw DataError("weight tuning: empty validation split");
    for (const auto& row : memberH)
        if (row.size() != V) throw DataError("weight tuning: member score width mismatch");
    if (M == 1) return {1.0};

    auto nllOf = [&](const std::vector<double>& w) {
        double sum = 0.0;
        for (size_t j = 0; j < V; ++j) {
            double h = 0.0;
            for (size_t m = 0; m < M; ++m) h += w[m] * memberH[m][j];
            OutcomeDistribution d = outcomeProbabilities(h);
            double p = valLabels[j] == kUnfavorable ? d.p1 : d.p0;
            sum -= std::log(std::max(p, 1e-12));
        }
        return sum / static_cast<double>(V);
    };
    auto softmax = [&](const std::vector<double>& z) {
        double zMax = *std::max_element(z.begin(), z.end());
        std::vector<double> w(M);
        double sum = 0.0;
        for (size_t m = 0; m < M; ++m) sum += (w[m] = std::exp(z[m] - zMax));
        for (double& v : w) v /= sum;
        return w;
    };

    std::vector<double> z(M, 0.0);
    std::vector<double> w = softmax(z);
    std::vector<double> best = w;
    double bestNll = nllOf(w);

    const int steps = 500;
    const double rate = 0.05;
    for (int it = 0; it < steps; ++it) {
        w = softmax(z);
        std::vector<double> g(M, 0.0);
        for (size_t j = 0; j < V; ++j) {
            double h = 0.0;
            for (size_t m = 0; m < M; ++m) h += w[m] * memberH[m][j];
            double e = outcomeProbabilities(h).p0 - (valLabels[j] == kFavorable ? 1.0 : 0.0);
            for (size_t m = 0; m < M; ++m) g[m] += e * memberH[m][j];
        }
        for (double& v : g) v /= static_cast<double>(V);
        double gDotW = 0.0;
        for (size_t m = 0; m < M; ++m) gDotW += w[m] * g[m];
        for (size_t m = 0; m < M; ++m) z[m] -= rate * w[m] * (g[m] - gDotW);
        w = softmax(z);
        double cur = nllOf(w);
        if (cur < bestNll) {
            bestNll = cur;
            best = w;
        }
    }
    for (size_t m = 0; m < M; ++m) {
        std::vector<double> vertex(M, 0.0);
        vertex[m] = 1.0;
        double cur = nllOf(vertex);
        if (cur < bestNll - 1e-12) {
            bestNll = cur;
            best = vertex;
        }
    }
    double sum = 0.0;
    for (double v : best) sum += v;
    for (double& v : best) v /= sum;
    return best;
}

EnsembleFit fitEnsemble(Variant variant, const EncodedDataset& enc,
                        std::span<const size_t> trainIdx, std::span<const size_t> valIdx,
                        std::span<const uint64_t> seeds, const TrainConfig& cfg) {
    cfg.validate();
    if (seeds.empty()) throw ConfigError("ensemble: at least one seed required");
    {
        std::vector<uint64_t> s(seeds.begin(), seeds.end());
        std::sort(s.begin(), s.end());
        if (std::adjacent_find(s.begin(), s.end()) != s.end())
            throw ConfigError("ensemble: duplicate seeds");
    }
    const size_t M = seeds.size();
    const LabeledDataset& ds = enc.dataset();

    EnsembleFit fit;
    fit.trainIdx.assign(trainIdx.begin(), trainIdx.end());
    fit.valIdx.assign(valIdx.begin(), valIdx.end());
    if (fit.valIdx.empty() && (M > 1 || cfg.earlyStop)) {
        HoldoutSplit split = stratifiedHoldout(ds.labels, fit.trainIdx, cfg.validationFraction,
                                               mixSeed(seeds[0], 7));
        fit.trainIdx = std::move(split.train);
        fit.valIdx = std::move(split.val);
    }

    fit.members.resize(M);
    parallelFor(static_cast<int64_t>(M), std::min<int>(cfg.jobs, static_cast<int>(M)),
                [&](int64_t m) {
                    TrainConfig tc = cfg;
                    tc.jobs = 1;
                    fit.members[static_cast<size_t>(m)] = trainMember(
                        variant, enc, fit.trainIdx, fit.valIdx, tc, seeds[static_cast<size_t>(m)]);
                });

    fit.model.variant = variant;
    for (MemberFit& mf : fit.members) fit.model.members.push_back(mf.model);

    if (M == 1) {
        fit.model.weights = {1.0};
    } else {
        std::vector<std::vector<double>> memberH(M, std::vector<double>(fit.valIdx.size()));
        std::optional<NetworkEval> eval;
        if (variantUsesImage(variant)) eval.emplace(fit.model.members.front().net);
        for (size_t m = 0; m < M; ++m)
            for (size_t j = 0; j < fit.valIdx.size(); ++j) {
                size_t i = fit.valIdx[j];
                const Tensor* vol = variantUsesImage(variant) ? &ds.volumes[i] : nullptr;
                const std::vector<double>* tab = variantUsesShift(variant) ? &enc.x[i] : nullptr;
                memberH[m][j] = eval ? fit.model.members[m].transformationValue(*eval, vol, tab)
                                     : fit.model.members[m].transformationValue(vol, tab);
            }
        std::vector<Label> valLabels(fit.valIdx.size());
        for (size_t j = 0; j < fit.valIdx.size(); ++j) valLabels[j] = ds.labels[fit.valIdx[j]];
        fit.model.weights = optimizeEnsembleWeights(memberH, valLabels);
    }
    fit.model.validate();
    return fit;
}

EnsembleCoefficients ensembleCoefficients(const EnsembleModel& model) {
    model.validate();
    if (!variantUsesShift(model.variant))
        throw ConfigError("variant " + variantName(model.variant) + " has no shift coefficients");
    EnsembleCoefficients out;
    out.beta.assign(model.members.front().beta.size(), 0.0);
    out.hasIntercept = model.variant == Variant::SILS;
    for (size_t m = 0; m < model.members.size(); ++m) {
        double w = model.weights[m];
        const TransformationModel& tm = model.members[m];
        for (size_t k = 0; k < out.beta.size(); ++k) out.beta[k] += w * tm.beta[k];
        if (out.hasIntercept) out.theta0 += w * tm.theta0;
    }
    return out;
}

}  // namespace dtmx
