#include "dtmx/model.hpp"

#include <cmath>
#include <cstdio>

#include "dtmx/common.hpp"

namespace dtmx {

std::string variantName(Variant v) {
    switch (v) {
        case Variant::SI: return "SI";
        case Variant::SILS: return "SI-LS";
        case Variant::CI: return "CI";
        case Variant::CILS: return "CI-LS";
    }
    return "?";
}

Variant parseVariant(const std::string& name) {
    if (name == "SI") return Variant::SI;
    if (name == "SI-LS") return Variant::SILS;
    if (name == "CI") return Variant::CI;
    if (name == "CI-LS") return Variant::CILS;
    throw ConfigError("unknown model variant '" + name + "' (expected SI, SI-LS, CI or CI-LS)");
}

OutcomeDistribution outcomeProbabilities(double h) {
    if (!std::isfinite(h)) throw NumericError("non-finite transformation value");
    OutcomeDistribution d;
    d.h = h;
    d.p0 = stableSigmoid(h);
    d.p1 = 1.0 - d.p0;
    return d;
}

double nll(std::span<const double> p0, std::span<const Label> labels) {
    if (p0.empty()) throw DataError("nll over an empty sample set");
    if (p0.size() != labels.size())
        throw DataError("nll: " + std::to_string(p0.size()) + " probabilities vs " +
                        std::to_string(labels.size()) + " labels");
    double sum = 0.0;
    for (size_t i = 0; i < p0.size(); ++i) {
        double p = labels[i] == kUnfavorable ? 1.0 - p0[i] : p0[i];
        sum -= std::log(std::max(p, 1e-12));
    }
    return sum / static_cast<double>(p0.size());
}

namespace {

double shiftTerm(const TransformationModel& m, const std::vector<double>* tabular) {
    if (!variantUsesShift(m.variant)) return 0.0;
    if (!tabular)
        throw DataError("variant " + variantName(m.variant) + " requires tabular features");
    if (tabular->size() != m.beta.size())
        throw DataError("variant " + variantName(m.variant) + " has " +
                        std::to_string(m.beta.size()) + " coefficients but got " +
                        std::to_string(tabular->size()) + " features");
    double s = 0.0;
    for (size_t i = 0; i < m.beta.size(); ++i) s += m.beta[i] * (*tabular)[i];
    return s;
}

const Tensor* requireVolume(const TransformationModel& m, const Tensor* volume) {
    if (!volume) throw DataError("variant " + variantName(m.variant) + " requires an image volume");
    return volume;
}

}  // namespace

double TransformationModel::transformationValue(const Tensor* volume,
                                                const std::vector<double>* tabular) const {
    if (!variantUsesImage(variant)) return theta0 + shiftTerm(*this, tabular);
    NetworkEval eval(net);
    return transformationValue(eval, volume, tabular);
}

double TransformationModel::transformationValue(const NetworkEval& eval, const Tensor* volume,
                                                const std::vector<double>* tabular) const {
    double intercept = theta0;
    if (variantUsesImage(variant))
        intercept = eval.forwardScalar(params, *requireVolume(*this, volume));
    return intercept + shiftTerm(*this, tabular);
}

std::string CoefficientReport::toCsv() const {
    std::string out = "feature,beta,odds_ratio,ci_low,ci_high\n";
    char buf[256];
    for (const CoefficientEntry& e : entries) {
        std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g,%.9g\n", e.name.c_str(), e.beta,
                      e.oddsRatio, e.ciLow, e.ciHigh);
        out += buf;
    }
    return out;
}

CoefficientReport coefficientReport(const std::vector<double>& beta,
                                    const std::vector<std::vector<double>>& draws,
                                    const std::vector<std::string>& names,
                                    const std::vector<std::string>& notes) {
    if (names.size() != beta.size())
        throw DataError("coefficient report: " + std::to_string(beta.size()) + " coefficients vs " +
                        std::to_string(names.size()) + " names");
    for (const auto& d : draws)
        if (d.size() != beta.size())
            throw DataError("coefficient report: draw width " + std::to_string(d.size()) +
                            " does not match " + std::to_string(beta.size()));
    CoefficientReport rep;
    for (size_t k = 0; k < beta.size(); ++k) {
        CoefficientEntry e;
        e.name = names[k];
        e.beta = beta[k];
        e.oddsRatio = std::exp(beta[k]);
        if (draws.empty()) {
            e.ciLow = e.ciHigh = beta[k];
        } else {
            std::vector<double> col(draws.size());
            for (size_t r = 0; r < draws.size(); ++r) col[r] = draws[r][k];
            e.ciLow = percentile(col, 0.025);
            e.ciHigh = percentile(col, 0.975);
        }
        if (k < notes.size()) e.note = notes[k];
        rep.entries.push_back(std::move(e));
    }
    return rep;
}

}  // namespace dtmx
