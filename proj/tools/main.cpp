#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "configIo.hpp"
#include "dtmx/common.hpp"
#include "dtmx/data.hpp"
#include "dtmx/embedding.hpp"
#include "dtmx/evaluation.hpp"
#include "dtmx/image.hpp"
#include "dtmx/model.hpp"
#include "dtmx/training.hpp"
#include "dtmx/xai.hpp"

namespace fs = std::filesystem;
using namespace dtmx;
using dtmxcli::json;

namespace {

struct Args {
    std::string config;
    std::string out;
    int jobs = 1;
    int64_t seed = -1;  // negative = keep the config value
    std::string method;
    bool force = false;
};

uint64_t resolveSeed(const json& cfg, const Args& args) {
    if (args.seed >= 0) return static_cast<uint64_t>(args.seed);
    return static_cast<uint64_t>(dtmxcli::getInt(cfg, "seed", 1, "config"));
}

std::vector<std::string> resolveMethods(const json& cfg, const Args& args) {
    std::string m = args.method.empty()
                        ? dtmxcli::getString(cfg, "method", "gradcam", "config")
                        : args.method;
    if (m == "gradcam" || m == "occlusion") return {m};
    if (m == "both") return {"gradcam", "occlusion"};
    throw ConfigError("method must be gradcam, occlusion, or both; got '" + m + "'");
}

void writeSnapshot(const std::string& outDir, const json& resolved) {
    dtmxcli::writeTextFile(outDir + "/config.json", resolved.dump(2) + "\n");
}

std::vector<size_t> allIndices(int64_t n) {
    std::vector<size_t> idx(static_cast<size_t>(n));
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
}

LabeledDataset loadStandardized(const std::string& manifestPath, int jobs) {
    LabeledDataset data = loadDataset(manifestPath, jobs);
    if (data.hasVolumes) data.standardizeVolumes();
    return data;
}

std::optional<NetworkSpec> networkFromConfig(const json& cfg, std::array<int64_t, 3> extents,
                                             json& resolved) {
    if (!cfg.contains("network")) {
        resolved["network"] = "default";
        return std::nullopt;
    }
    NetworkSpec spec = dtmxcli::networkFrom(cfg["network"], extents);
    resolved["network"] = dtmxcli::networkJson(spec);
    return spec;
}

std::string heatPgmBytes(const Projection2D& proj) {
    ImageGray img;
    img.width = proj.cols;
    img.height = proj.rows;
    img.px.resize(proj.heat.size());
    for (size_t i = 0; i < proj.heat.size(); ++i) {
        double h = std::clamp(proj.heat[i], 0.0, 1.0);
        img.px[i] = static_cast<uint8_t>(std::lround(h * 255.0));
    }
    return pgmBytes(img);
}

// -- synth ------------------------------------------------------------------

int cmdSynth(const Args& args) {
    json cfg = args.config.empty() ? json::object() : dtmxcli::loadConfigFile(args.config);
    json resolved;
    resolved["command"] = "synth";
    SyntheticSpec spec = dtmxcli::syntheticFrom(cfg, resolved);
    if (args.seed >= 0) {
        spec.seed = static_cast<uint64_t>(args.seed);
        resolved["synthetic"]["seed"] = spec.seed;
    }
    bool writeTruth = true;
    if (cfg.contains("synthetic"))
        writeTruth = dtmxcli::getBool(cfg["synthetic"], "writeTruth", true, "synthetic");
    resolved["synthetic"]["writeTruth"] = writeTruth;

    dtmxcli::prepareOutDir(args.out, args.force);
    SyntheticSummary summary = writeSyntheticDataset(args.out, spec, writeTruth);
    writeSnapshot(args.out, resolved);

    int64_t unfavorable = 0;
    for (Label l : summary.labels)
        if (l == kUnfavorable) ++unfavorable;
    std::cout << "synth: wrote " << spec.n << " records to " << args.out << " ("
              << unfavorable << " unfavorable, prevalence "
              << formatG17(summary.prevalence) << ")\n";
    if (!summary.warning.empty()) std::cout << "warning: " << summary.warning << "\n";
    return 0;
}

// -- train ------------------------------------------------------------------

std::string trainingCsv(const EnsembleFit& fit) {
    std::string out = "member,weight,initial_nll,train_nll,val_nll,best_epoch,epochs_run\n";
    for (size_t m = 0; m < fit.members.size(); ++m) {
        const MemberFit& mf = fit.members[m];
        out += std::to_string(m) + "," + formatG17(fit.model.weights[m]) + "," +
               formatG17(mf.initialNll) + "," + formatG17(mf.trainNll) + "," +
               formatG17(mf.valNll) + "," + std::to_string(mf.bestEpoch) + "," +
               std::to_string(mf.epochsRun) + "\n";
    }
    return out;
}

std::string coefficientsCsv(const EnsembleModel& model, const EncodingStats& stats) {
    EnsembleCoefficients coef = ensembleCoefficients(model);
    std::string out = "name,beta,odds_ratio\n";
    if (coef.hasIntercept)
        out += "(intercept)," + formatG17(coef.theta0) + "," + formatG17(std::exp(coef.theta0)) +
               "\n";
    for (size_t j = 0; j < coef.beta.size(); ++j)
        out += stats.encodedNames[j] + "," + formatG17(coef.beta[j]) + "," +
               formatG17(std::exp(coef.beta[j])) + "\n";
    return out;
}

int cmdTrain(const Args& args) {
    json cfg = dtmxcli::loadConfigFile(args.config);
    json resolved;
    resolved["command"] = "train";
    std::string manifest = dtmxcli::existingPath(cfg, "dataset", "config");
    resolved["dataset"] = manifest;
    Variant variant = parseVariant(dtmxcli::getString(cfg, "variant", "CI", "config"));
    resolved["variant"] = variantName(variant);
    uint64_t seed = resolveSeed(cfg, args);
    resolved["seed"] = seed;
    resolved["jobs"] = args.jobs;
    int members = static_cast<int>(dtmxcli::getInt(cfg, "members", 5, "config"));
    if (!variantUsesImage(variant)) members = 1;
    if (members < 1) throw ConfigError("members must be at least 1");
    resolved["members"] = members;
    TrainConfig tc = dtmxcli::trainConfigFrom(cfg, resolved);
    tc.jobs = args.jobs;

    LabeledDataset data = loadStandardized(manifest, args.jobs);
    tc.network = networkFromConfig(cfg, data.extents, resolved);

    dtmxcli::prepareOutDir(args.out, args.force);
    std::vector<size_t> idx = allIndices(data.size());
    EncodedDataset enc = encodeDataset(data, idx);
    std::vector<uint64_t> seeds;
    for (int m = 0; m < members; ++m) seeds.push_back(mixSeed(seed, 0, static_cast<uint64_t>(m), 17));
    EnsembleFit fit = fitEnsemble(variant, enc, idx, {}, seeds, tc);

    ModelBundle bundle{fit.model, data.schema, enc.stats, data.extents};
    saveModel(args.out + "/model.dtm", bundle);
    dtmxcli::writeTextFile(args.out + "/training.csv", trainingCsv(fit));
    if (variantUsesShift(variant))
        dtmxcli::writeTextFile(args.out + "/coefficients.csv",
                               coefficientsCsv(fit.model, enc.stats));
    writeSnapshot(args.out, resolved);

    std::cout << "train: fitted " << variantName(variant) << " ensemble (" << members
              << " member" << (members == 1 ? "" : "s") << ") on " << data.size()
              << " records\n";
    for (size_t m = 0; m < fit.members.size(); ++m)
        std::cout << "  member " << m << ": val NLL " << formatG17(fit.members[m].valNll)
                  << ", weight " << formatG17(fit.model.weights[m]) << "\n";
    std::cout << "train: wrote " << args.out << "/model.dtm\n";
    return 0;
}

// -- crossval ---------------------------------------------------------------

std::string predictionsCsv(const LabeledDataset& data, const VariantReport& rep) {
    std::string out = "id,fold,p1,threshold,predicted,true\n";
    for (const FoldDiagnostics& d : rep.folds)
        for (size_t j = 0; j < d.testIdx.size(); ++j) {
            size_t idx = d.testIdx[j];
            out += data.ids[idx] + "," + std::to_string(d.fold) + "," +
                   formatG17(d.testP1[j]) + "," + formatG17(d.rule.threshold) + "," +
                   labelName(rep.pooledPredicted[idx]) + "," + labelName(data.labels[idx]) +
                   "\n";
        }
    return out;
}

int cmdCrossval(const Args& args) {
    json cfg = dtmxcli::loadConfigFile(args.config);
    json resolved;
    resolved["command"] = "crossval";
    std::string manifest = dtmxcli::existingPath(cfg, "dataset", "config");
    resolved["dataset"] = manifest;
    std::vector<Variant> variants = dtmxcli::variantsFrom(cfg, resolved);

    CrossvalConfig cc;
    cc.k = static_cast<int>(dtmxcli::getInt(cfg, "k", cc.k, "config"));
    cc.seed = resolveSeed(cfg, args);
    cc.members = static_cast<int>(dtmxcli::getInt(cfg, "members", cc.members, "config"));
    cc.bootstrapB = static_cast<int>(dtmxcli::getInt(cfg, "bootstrapB", cc.bootstrapB, "config"));
    cc.train = dtmxcli::trainConfigFrom(cfg, resolved);
    cc.jobs = args.jobs;
    cc.train.jobs = args.jobs;
    resolved["k"] = cc.k;
    resolved["seed"] = cc.seed;
    resolved["members"] = cc.members;
    resolved["bootstrapB"] = cc.bootstrapB;
    resolved["jobs"] = args.jobs;

    LabeledDataset data = loadStandardized(manifest, args.jobs);
    cc.train.network = networkFromConfig(cfg, data.extents, resolved);

    dtmxcli::prepareOutDir(args.out, args.force);
    CrossvalReport report = crossvalReport(data, variants, cc);

    MetricsTable table = report.table();
    dtmxcli::writeTextFile(args.out + "/table.txt", table.toText());
    dtmxcli::writeTextFile(args.out + "/table.csv", table.toCsv());
    for (const VariantReport& rep : report.variants) {
        std::string name = variantName(rep.variant);
        dtmxcli::writeTextFile(args.out + "/folds-" + name + ".csv", rep.foldCsv());
        dtmxcli::writeTextFile(args.out + "/predictions-" + name + ".csv",
                               predictionsCsv(data, rep));
        fs::create_directories(args.out + "/models/" + name);
        for (size_t f = 0; f < rep.foldModels.size(); ++f) {
            EncodedDataset enc = encodeDataset(data, report.folds.trainIndices(static_cast<int>(f)));
            ModelBundle bundle{rep.foldModels[f], data.schema, enc.stats, data.extents};
            saveModel(args.out + "/models/" + name + "/fold-" + std::to_string(f) + ".dtm",
                      bundle);
        }
    }
    writeSnapshot(args.out, resolved);

    std::cout << table.toText();
    std::cout << "crossval: wrote tables, predictions, and fold models to " << args.out << "\n";
    return 0;
}

// -- explain ----------------------------------------------------------------

struct ExplainRow {
    std::string id;
    Label predicted = kFavorable;
    double p1 = 0.0;
    std::string method;
};

int cmdExplain(const Args& args) {
    json cfg = dtmxcli::loadConfigFile(args.config);
    json resolved;
    resolved["command"] = "explain";
    std::string manifest = dtmxcli::existingPath(cfg, "dataset", "config");
    std::string modelPath = dtmxcli::existingPath(cfg, "model", "config");
    resolved["dataset"] = manifest;
    resolved["model"] = modelPath;
    std::vector<std::string> methods = resolveMethods(cfg, args);
    resolved["method"] = methods.size() == 2 ? "both" : methods[0];
    double threshold = dtmxcli::getNumber(cfg, "threshold", 0.5, "config");
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw ConfigError("threshold must lie in [0, 1]");
    resolved["threshold"] = threshold;
    resolved["jobs"] = args.jobs;
    OcclusionConfig oc = dtmxcli::occlusionFrom(cfg, resolved);

    ModelBundle bundle = loadModel(modelPath);
    if (!variantUsesImage(bundle.ensemble.variant))
        throw ConfigError("explain: variant " + variantName(bundle.ensemble.variant) +
                          " has no image network to explain");
    LabeledDataset data = loadStandardized(manifest, args.jobs);
    if (data.extents != bundle.extents)
        throw DataError("explain: dataset extents do not match the model input extents");
    if (!data.hasVolumes) throw DataError("explain: dataset has no volumes");

    bool wantOcclusion = false;
    for (const std::string& m : methods) wantOcclusion |= m == "occlusion";
    if (wantOcclusion) {
        size_t windows = occlusionOrigins(data.extents, oc).size();
        std::cout << "occlusion grid: " << windows << " windows per patient\n";
    }

    dtmxcli::prepareOutDir(args.out, args.force);
    fs::create_directories(args.out + "/maps");
    fs::create_directories(args.out + "/projections");
    const EnsembleModel& ens = bundle.ensemble;
    bool usesShift = variantUsesShift(ens.variant);

    std::map<std::string, std::map<std::string, std::vector<Projection2D>>> classProjections;
    std::string metaCsv = "id,predicted,p1,method\n";

    for (int64_t i = 0; i < data.size(); ++i) {
        const Tensor& vol = data.volumes[static_cast<size_t>(i)];
        std::vector<double> x;
        const std::vector<double>* xp = nullptr;
        if (usesShift) {
            x = encodeRecord(bundle.schema, bundle.stats, data.tabular[static_cast<size_t>(i)]);
            xp = &x;
        }
        double p0 = stableSigmoid(ens.transformation(&vol, xp));
        double p1 = 1.0 - p0;
        Label k = p1 >= threshold ? kUnfavorable : kFavorable;

        for (const std::string& method : methods) {
            std::vector<ExplanationMap3D> memberMaps;
            for (const TransformationModel& member : ens.members)
                memberMaps.push_back(method == "gradcam"
                                         ? gradcam(member, vol, xp, k)
                                         : occlusion(member, vol, xp, oc, k, args.jobs));
            ExplanationMap3D map = ensembleMap(memberMaps, ens.weights);

            const std::string& id = data.ids[static_cast<size_t>(i)];
            saveVolume(args.out + "/maps/" + id + "." + method + ".vol", map.values);
            Projection2D proj = axialProjection(map, vol);
            dtmxcli::writeTextFile(args.out + "/projections/" + id + "." + method + ".pgm",
                                   heatPgmBytes(proj));
            dtmxcli::writeTextFile(args.out + "/projections/" + id + "." + method + ".png",
                                   pngBytes(renderOverlay(proj)));
            classProjections[method][labelName(k)].push_back(std::move(proj));
            metaCsv += id + std::string(",") + labelName(k) + "," + formatG17(p1) + "," +
                       method + "\n";
        }
    }

    for (const auto& [method, byClass] : classProjections)
        for (const auto& [cls, projections] : byClass) {
            Projection2D avg = classAverageMap(projections);
            dtmxcli::writeTextFile(args.out + "/class-" + cls + "." + method + ".png",
                                   pngBytes(renderOverlay(avg)));
        }
    dtmxcli::writeTextFile(args.out + "/explain.csv", metaCsv);
    writeSnapshot(args.out, resolved);

    std::cout << "explain: wrote " << data.size() << " patient map(s) per method to "
              << args.out << "\n";
    return 0;
}

// -- embed ------------------------------------------------------------------

std::vector<ExplainRow> readExplainCsv(const std::string& path) {
    std::istringstream in(dtmxcli::readTextFile(path));
    std::string line;
    if (!std::getline(in, line) || line != "id,predicted,p1,method")
        throw DataError("explain csv: unexpected header in " + path);
    std::vector<ExplainRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream cells(line);
        ExplainRow row;
        std::string predicted, p1;
        if (!std::getline(cells, row.id, ',') || !std::getline(cells, predicted, ',') ||
            !std::getline(cells, p1, ',') || !std::getline(cells, row.method))
            throw DataError("explain csv: malformed row '" + line + "'");
        if (predicted == "unfavorable")
            row.predicted = kUnfavorable;
        else if (predicted == "favorable")
            row.predicted = kFavorable;
        else
            throw DataError("explain csv: unknown class '" + predicted + "'");
        row.p1 = std::stod(p1);
        rows.push_back(std::move(row));
    }
    return rows;
}

int cmdEmbed(const Args& args) {
    json cfg = dtmxcli::loadConfigFile(args.config);
    json resolved;
    resolved["command"] = "embed";
    std::string manifest = dtmxcli::existingPath(cfg, "dataset", "config");
    std::string modelPath = dtmxcli::existingPath(cfg, "model", "config");
    std::string mapsDir = dtmxcli::existingPath(cfg, "maps", "config");
    resolved["dataset"] = manifest;
    resolved["model"] = modelPath;
    resolved["maps"] = mapsDir;
    std::vector<std::string> methods = resolveMethods(cfg, args);
    if (methods.size() != 1)
        throw ConfigError("embed: pick one method (gradcam or occlusion), not both");
    std::string method = methods[0];
    resolved["method"] = method;
    uint64_t seed = resolveSeed(cfg, args);
    resolved["seed"] = seed;
    resolved["jobs"] = args.jobs;

    json embedNode = cfg.contains("embed") ? cfg["embed"] : json::object();
    if (!embedNode.is_object()) throw ConfigError("embed: expected an object");
    dtmxcli::requireKnownKeys(embedNode, {"perplexity", "iterations"}, "embed");
    double perplexity = dtmxcli::getNumber(embedNode, "perplexity", 30.0, "embed");
    int iterations = static_cast<int>(dtmxcli::getInt(embedNode, "iterations", 1000, "embed"));
    resolved["embed"]["perplexity"] = perplexity;
    resolved["embed"]["iterations"] = iterations;

    ModelBundle bundle = loadModel(modelPath);
    if (!variantUsesImage(bundle.ensemble.variant))
        throw ConfigError("embed: variant " + variantName(bundle.ensemble.variant) +
                          " has no image network to extract features with");
    LabeledDataset data = loadStandardized(manifest, args.jobs);

    std::map<std::string, size_t> indexOf;
    for (size_t i = 0; i < data.ids.size(); ++i) indexOf[data.ids[i]] = i;

    std::vector<ExplainRow> rows;
    for (ExplainRow& row : readExplainCsv(mapsDir + "/explain.csv"))
        if (row.method == method) rows.push_back(std::move(row));
    if (rows.empty()) throw DataError("embed: no " + method + " maps listed in " + mapsDir);

    size_t n = rows.size();
    std::vector<std::string> warnings;
    double capped = std::floor((static_cast<double>(n) - 1.0) / 3.0);
    if (static_cast<double>(n) < 3.0 * perplexity + 1.0) {
        if (capped < 1.0)
            throw DataError("embed: " + std::to_string(n) + " maps are too few to embed");
        warnings.push_back("perplexity " + formatG17(perplexity) + " needs at least " +
                           formatG17(3.0 * perplexity + 1.0) + " maps; capped to " +
                           formatG17(capped) + " for " + std::to_string(n) + " maps");
        perplexity = capped;
    }
    resolved["embed"]["effectivePerplexity"] = perplexity;

    std::vector<std::vector<double>> features;
    std::vector<EmbeddingPoint> points;
    std::vector<std::string> thumbnails;
    for (const ExplainRow& row : rows) {
        auto it = indexOf.find(row.id);
        if (it == indexOf.end())
            throw DataError("embed: map id '" + row.id + "' is not in the dataset");
        Tensor mapValues = loadVolume(mapsDir + "/maps/" + row.id + "." + method + ".vol");
        features.push_back(extractFeatures(bundle.ensemble, mapValues));

        EmbeddingPoint pt;
        pt.id = row.id;
        pt.predicted = row.predicted;
        pt.truth = data.labels[it->second];
        pt.correct = pt.predicted == pt.truth;
        points.push_back(std::move(pt));

        if (data.hasVolumes) {
            ExplanationMap3D map;
            map.values = std::move(mapValues);
            map.method = method;
            map.k = row.predicted;
            Projection2D proj = axialProjection(map, data.volumes[it->second]);
            thumbnails.push_back(pngBytes(resizeBilinear(renderOverlay(proj), 64, 64)));
        } else {
            thumbnails.emplace_back();
        }
    }

    AffinitySet aff = calibrateAffinities(features, perplexity);
    if (!aff.warning.empty()) warnings.push_back(aff.warning);
    TsneResult res = tsne(aff, iterations, seed);
    for (size_t i = 0; i < n; ++i) {
        points[i].x = res.y[i][0];
        points[i].y = res.y[i][1];
    }

    dtmxcli::prepareOutDir(args.out, args.force);
    dtmxcli::writeTextFile(args.out + "/embedding.csv", embeddingCsv(points));
    std::string htmlWarning;
    std::string html = embeddingHtml(points, thumbnails, &htmlWarning);
    if (!htmlWarning.empty()) warnings.push_back(htmlWarning);
    dtmxcli::writeTextFile(args.out + "/embedding.html", html);
    if (!warnings.empty()) {
        std::string text;
        for (const std::string& w : warnings) text += w + "\n";
        dtmxcli::writeTextFile(args.out + "/warnings.txt", text);
        for (const std::string& w : warnings) std::cout << "warning: " << w << "\n";
    }
    writeSnapshot(args.out, resolved);

    std::cout << "embed: placed " << n << " maps (final KL " << formatG17(res.kl.back())
              << "); wrote " << args.out << "/embedding.csv and embedding.html\n";
    return 0;
}

// -- report -----------------------------------------------------------------

std::vector<std::vector<std::string>> parseCsv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream cellStream(line);
        std::string cell;
        while (std::getline(cellStream, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

std::string markdownTable(const std::vector<std::vector<std::string>>& rows) {
    if (rows.empty()) return "";
    std::string out = "|";
    for (const std::string& cell : rows[0]) out += " " + cell + " |";
    out += "\n|";
    for (size_t c = 0; c < rows[0].size(); ++c) out += " --- |";
    out += "\n";
    for (size_t r = 1; r < rows.size(); ++r) {
        out += "|";
        for (const std::string& cell : rows[r]) out += " " + cell + " |";
        out += "\n";
    }
    return out;
}

std::string relativeTo(const std::string& target, const std::string& outDir) {
    std::error_code ec;
    fs::path rel = fs::relative(target, outDir, ec);
    if (ec || rel.empty()) return target;
    return rel.generic_string();
}

int cmdReport(const Args& args) {
    json cfg = dtmxcli::loadConfigFile(args.config);
    json resolved;
    resolved["command"] = "report";
    json node = cfg.contains("report") ? cfg["report"] : json::object();
    if (!node.is_object()) throw ConfigError("report: expected an object");
    dtmxcli::requireKnownKeys(node, {"crossval", "train", "explain", "embed", "title"}, "report");
    std::string title = dtmxcli::getString(node, "title", "Model report", "report");
    auto dirOf = [&](const char* key) {
        return dtmxcli::getString(node, key, "", "report");
    };
    std::string cvDir = dirOf("crossval");
    std::string trainDir = dirOf("train");
    std::string explainDir = dirOf("explain");
    std::string embedDir = dirOf("embed");
    resolved["report"] = {{"crossval", cvDir},
                          {"train", trainDir},
                          {"explain", explainDir},
                          {"embed", embedDir},
                          {"title", title}};

    dtmxcli::prepareOutDir(args.out, args.force);
    std::string md = "# " + title + "\n";
    std::vector<std::string> gaps;

    md += "\n## Cross-validated metrics\n\n";
    if (!cvDir.empty() && fs::exists(cvDir + "/table.txt")) {
        md += "```\n" + dtmxcli::readTextFile(cvDir + "/table.txt") + "```\n\n";
        md += "Full values: [" + relativeTo(cvDir + "/table.csv", args.out) + "](" +
              relativeTo(cvDir + "/table.csv", args.out) + ")\n";
        std::vector<std::string> predictionFiles;
        for (const auto& entry : fs::directory_iterator(cvDir))
            if (entry.path().filename().string().rfind("predictions-", 0) == 0)
                predictionFiles.push_back(entry.path().filename().string());
        std::sort(predictionFiles.begin(), predictionFiles.end());
        for (const std::string& f : predictionFiles)
            md += "- per-patient predictions: [" + f + "](" +
                  relativeTo(cvDir + "/" + f, args.out) + ")\n";
    } else {
        md += "_Missing: no cross-validation artifacts were provided._\n";
        gaps.push_back("cross-validated metrics");
    }

    md += "\n## Ensemble coefficients (log-odds)\n\n";
    if (!trainDir.empty() && fs::exists(trainDir + "/coefficients.csv")) {
        md += markdownTable(parseCsv(dtmxcli::readTextFile(trainDir + "/coefficients.csv")));
        md += "\nSource: [" + relativeTo(trainDir + "/coefficients.csv", args.out) + "](" +
              relativeTo(trainDir + "/coefficients.csv", args.out) + ")\n";
    } else {
        md += "_Missing: no trained linear-shift coefficients were provided (train a *-LS "
              "variant to produce them)._\n";
        gaps.push_back("ensemble coefficients");
    }

    md += "\n## Explanation maps\n\n";
    if (!explainDir.empty() && fs::exists(explainDir + "/explain.csv")) {
        std::vector<std::vector<std::string>> rows =
            parseCsv(dtmxcli::readTextFile(explainDir + "/explain.csv"));
        std::set<std::string> ids, methodsSeen;
        for (size_t r = 1; r < rows.size(); ++r) {
            if (rows[r].size() < 4) continue;
            ids.insert(rows[r][0]);
            methodsSeen.insert(rows[r][3]);
        }
        md += std::to_string(ids.size()) + " patients explained";
        if (!methodsSeen.empty()) {
            md += " (";
            bool first = true;
            for (const std::string& m : methodsSeen) {
                if (!first) md += ", ";
                md += m;
                first = false;
            }
            md += ")";
        }
        md += ".\n";
        std::vector<std::string> classImages;
        for (const auto& entry : fs::directory_iterator(explainDir))
            if (entry.path().filename().string().rfind("class-", 0) == 0)
                classImages.push_back(entry.path().filename().string());
        std::sort(classImages.begin(), classImages.end());
        for (const std::string& f : classImages)
            md += "- class average: [" + f + "](" + relativeTo(explainDir + "/" + f, args.out) +
                  ")\n";
        md += "- per-patient metadata: [explain.csv](" +
              relativeTo(explainDir + "/explain.csv", args.out) + ")\n";
    } else {
        md += "_Missing: no explanation-map artifacts were provided._\n";
        gaps.push_back("explanation maps");
    }

    md += "\n## Similarity embedding\n\n";
    if (!embedDir.empty() && fs::exists(embedDir + "/embedding.csv")) {
        size_t n = parseCsv(dtmxcli::readTextFile(embedDir + "/embedding.csv")).size();
        md += std::to_string(n > 0 ? n - 1 : 0) + " patients embedded.\n";
        md += "- interactive page: [embedding.html](" +
              relativeTo(embedDir + "/embedding.html", args.out) + ")\n";
        md += "- coordinates: [embedding.csv](" +
              relativeTo(embedDir + "/embedding.csv", args.out) + ")\n";
    } else {
        md += "_Missing: no embedding artifacts were provided._\n";
        gaps.push_back("similarity embedding");
    }

    if (!gaps.empty()) {
        md += "\n## Gaps\n\n";
        for (const std::string& g : gaps) md += "- missing section: " + g + "\n";
    }

    dtmxcli::writeTextFile(args.out + "/report.md", md);
    writeSnapshot(args.out, resolved);
    std::cout << "report: wrote " << args.out << "/report.md ("
              << (gaps.empty() ? "all sections present" : std::to_string(gaps.size()) +
                                                              " section(s) missing")
              << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deep transformation models for binary stroke outcome: synthesize, train, "
                 "cross-validate, explain, embed, report"};
    app.require_subcommand(1);

    std::map<std::string, Args> argsByCmd;
    std::map<std::string, int (*)(const Args&)> handlers{
        {"synth", cmdSynth},     {"train", cmdTrain}, {"crossval", cmdCrossval},
        {"explain", cmdExplain}, {"embed", cmdEmbed}, {"report", cmdReport}};

    auto addCommon = [&](CLI::App* sub, const std::string& name, bool configRequired) {
        Args& a = argsByCmd[name];
        CLI::Option* opt = sub->add_option("--config", a.config, "JSON run configuration");
        if (configRequired) opt->required();
        sub->add_option("--out", a.out, "output directory")->required();
        sub->add_option("--jobs", a.jobs, "worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--seed", a.seed, "override the config seed");
        sub->add_flag("--force", a.force, "write into a non-empty output directory");
    };

    addCommon(app.add_subcommand("synth", "generate a synthetic dataset"), "synth", false);
    addCommon(app.add_subcommand("train", "fit one ensemble on a full dataset"), "train", true);
    addCommon(app.add_subcommand("crossval", "stratified k-fold evaluation"), "crossval", true);
    CLI::App* explainSub =
        app.add_subcommand("explain", "grad-cam / occlusion maps for every patient");
    addCommon(explainSub, "explain", true);
    explainSub->add_option("--method", argsByCmd["explain"].method,
                           "gradcam, occlusion, or both");
    CLI::App* embedSub = app.add_subcommand("embed", "t-sne similarity map of explanations");
    addCommon(embedSub, "embed", true);
    embedSub->add_option("--method", argsByCmd["embed"].method, "gradcam or occlusion");
    addCommon(app.add_subcommand("report", "consolidated markdown report"), "report", true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    std::string chosen = app.get_subcommands().front()->get_name();
    try {
        return handlers[chosen](argsByCmd[chosen]);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
