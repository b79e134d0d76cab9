#include "configIo.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

namespace dtmxcli {

namespace fs = std::filesystem;
using dtmx::ConfigError;

json loadConfigFile(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path);
    json cfg;
    try {
        in >> cfg;
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    if (!cfg.is_object()) throw ConfigError("config " + path + ": top level must be an object");
    return cfg;
}

void requireKnownKeys(const json& obj, const std::vector<std::string>& known,
                      const std::string& where) {
    for (const auto& item : obj.items())
        if (std::find(known.begin(), known.end(), item.key()) == known.end())
            throw ConfigError(where + ": unknown key '" + item.key() + "'");
}

double getNumber(const json& obj, const std::string& key, double fallback,
                 const std::string& where) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number()) throw ConfigError(where + "." + key + ": expected a number");
    return obj[key].get<double>();
}

int64_t getInt(const json& obj, const std::string& key, int64_t fallback,
               const std::string& where) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number_integer())
        throw ConfigError(where + "." + key + ": expected an integer");
    return obj[key].get<int64_t>();
}

bool getBool(const json& obj, const std::string& key, bool fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_boolean()) throw ConfigError(where + "." + key + ": expected a boolean");
    return obj[key].get<bool>();
}

std::string getString(const json& obj, const std::string& key, const std::string& fallback,
                      const std::string& where) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_string()) throw ConfigError(where + "." + key + ": expected a string");
    return obj[key].get<std::string>();
}

std::array<int64_t, 3> getExtents(const json& obj, const std::string& key,
                                  std::array<int64_t, 3> fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const json& node = obj[key];
    if (!node.is_array() || node.size() != 3)
        throw ConfigError(where + "." + key + ": expected an array of 3 integers");
    std::array<int64_t, 3> out{};
    for (size_t i = 0; i < 3; ++i) {
        if (!node[i].is_number_integer())
            throw ConfigError(where + "." + key + ": expected an array of 3 integers");
        out[i] = node[i].get<int64_t>();
    }
    return out;
}

dtmx::TrainConfig trainConfigFrom(const json& cfg, json& resolved) {
    dtmx::TrainConfig tc;
    json node = cfg.contains("train") ? cfg["train"] : json::object();
    if (!node.is_object()) throw ConfigError("train: expected an object");
    requireKnownKeys(node,
                     {"learningRate", "lrDecay", "batchSize", "epochs", "beta1", "beta2",
                      "epsilon", "patience", "validationFraction", "earlyStop"},
                     "train");
    tc.learningRate = getNumber(node, "learningRate", tc.learningRate, "train");
    tc.lrDecay = getNumber(node, "lrDecay", tc.lrDecay, "train");
    tc.batchSize = static_cast<int>(getInt(node, "batchSize", tc.batchSize, "train"));
    tc.epochs = static_cast<int>(getInt(node, "epochs", tc.epochs, "train"));
    tc.beta1 = getNumber(node, "beta1", tc.beta1, "train");
    tc.beta2 = getNumber(node, "beta2", tc.beta2, "train");
    tc.epsilon = getNumber(node, "epsilon", tc.epsilon, "train");
    tc.patience = static_cast<int>(getInt(node, "patience", tc.patience, "train"));
    tc.validationFraction =
        getNumber(node, "validationFraction", tc.validationFraction, "train");
    tc.earlyStop = getBool(node, "earlyStop", tc.earlyStop, "train");
    tc.validate();

    json& out = resolved["train"];
    out["learningRate"] = tc.learningRate;
    out["lrDecay"] = tc.lrDecay;
    out["batchSize"] = tc.batchSize;
    out["epochs"] = tc.epochs;
    out["beta1"] = tc.beta1;
    out["beta2"] = tc.beta2;
    out["epsilon"] = tc.epsilon;
    out["patience"] = tc.patience;
    out["validationFraction"] = tc.validationFraction;
    out["earlyStop"] = tc.earlyStop;
    return tc;
}

dtmx::SyntheticSpec syntheticFrom(const json& cfg, json& resolved) {
    dtmx::SyntheticSpec spec;
    json node = cfg.contains("synthetic") ? cfg["synthetic"] : json::object();
    if (!node.is_object()) throw ConfigError("synthetic: expected an object");
    requireKnownKeys(node,
                     {"n", "extents", "radiusMin", "radiusMax", "intensityMin", "intensityMax",
                      "noiseSd", "thetaStar", "gammaStar", "betaStar", "seed", "writeTruth"},
                     "synthetic");
    spec.n = getInt(node, "n", spec.n, "synthetic");
    spec.extents = getExtents(node, "extents", spec.extents, "synthetic");
    spec.radiusMin = getNumber(node, "radiusMin", spec.radiusMin, "synthetic");
    spec.radiusMax = getNumber(node, "radiusMax", spec.radiusMax, "synthetic");
    spec.intensityMin = getNumber(node, "intensityMin", spec.intensityMin, "synthetic");
    spec.intensityMax = getNumber(node, "intensityMax", spec.intensityMax, "synthetic");
    spec.noiseSd = getNumber(node, "noiseSd", spec.noiseSd, "synthetic");
    spec.thetaStar = getNumber(node, "thetaStar", spec.thetaStar, "synthetic");
    spec.gammaStar = getNumber(node, "gammaStar", spec.gammaStar, "synthetic");
    if (node.contains("betaStar")) {
        if (!node["betaStar"].is_array())
            throw ConfigError("synthetic.betaStar: expected an array of numbers");
        spec.betaStar.clear();
        for (const json& v : node["betaStar"]) {
            if (!v.is_number())
                throw ConfigError("synthetic.betaStar: expected an array of numbers");
            spec.betaStar.push_back(v.get<double>());
        }
    }
    spec.seed = static_cast<uint64_t>(getInt(node, "seed", static_cast<int64_t>(spec.seed),
                                             "synthetic"));

    json& out = resolved["synthetic"];
    out["n"] = spec.n;
    out["extents"] = spec.extents;
    out["radiusMin"] = spec.radiusMin;
    out["radiusMax"] = spec.radiusMax;
    out["intensityMin"] = spec.intensityMin;
    out["intensityMax"] = spec.intensityMax;
    out["noiseSd"] = spec.noiseSd;
    out["thetaStar"] = spec.thetaStar;
    out["gammaStar"] = spec.gammaStar;
    out["betaStar"] = spec.betaStar;
    out["seed"] = spec.seed;
    return spec;
}

dtmx::OcclusionConfig occlusionFrom(const json& cfg, json& resolved) {
    dtmx::OcclusionConfig oc;
    json node = cfg.contains("occlusion") ? cfg["occlusion"] : json::object();
    if (!node.is_object()) throw ConfigError("occlusion: expected an object");
    requireKnownKeys(node, {"window", "stride", "fill"}, "occlusion");
    oc.window = getExtents(node, "window", oc.window, "occlusion");
    oc.stride = getExtents(node, "stride", oc.stride, "occlusion");
    oc.fill = static_cast<float>(getNumber(node, "fill", oc.fill, "occlusion"));

    json& out = resolved["occlusion"];
    out["window"] = oc.window;
    out["stride"] = oc.stride;
    out["fill"] = oc.fill;
    return oc;
}

dtmx::NetworkSpec networkFrom(const json& node, std::array<int64_t, 3> extents) {
    if (!node.is_object() || !node.contains("layers") || !node["layers"].is_array())
        throw ConfigError("network: expected an object with a 'layers' array");
    requireKnownKeys(node, {"layers"}, "network");
    dtmx::NetworkSpec spec;
    spec.inputExtents = extents;
    for (const json& ln : node["layers"]) {
        if (!ln.is_object() || !ln.contains("kind"))
            throw ConfigError("network.layers: each layer needs a 'kind'");
        std::string kind = ln["kind"].get<std::string>();
        if (kind == "conv") {
            requireKnownKeys(ln, {"kind", "kernel", "in", "out", "stride", "pad", "cam"},
                             "network.conv");
            spec.layers.push_back(dtmx::conv3dLayer(
                getExtents(ln, "kernel", {3, 3, 3}, "network.conv"),
                getInt(ln, "in", 0, "network.conv"), getInt(ln, "out", 0, "network.conv"),
                getExtents(ln, "stride", {1, 1, 1}, "network.conv"),
                getExtents(ln, "pad", {0, 0, 0}, "network.conv"),
                getBool(ln, "cam", false, "network.conv")));
        } else if (kind == "relu") {
            requireKnownKeys(ln, {"kind"}, "network.relu");
            spec.layers.push_back(dtmx::reluLayer());
        } else if (kind == "maxpool") {
            requireKnownKeys(ln, {"kind", "window", "stride"}, "network.maxpool");
            std::array<int64_t, 3> window = getExtents(ln, "window", {2, 2, 2}, "network.maxpool");
            spec.layers.push_back(dtmx::maxPool3dLayer(
                window, getExtents(ln, "stride", window, "network.maxpool")));
        } else if (kind == "gap") {
            requireKnownKeys(ln, {"kind"}, "network.gap");
            spec.layers.push_back(dtmx::globalAveragePoolLayer());
        } else if (kind == "dense") {
            requireKnownKeys(ln, {"kind", "in", "out"}, "network.dense");
            spec.layers.push_back(dtmx::denseLayer(getInt(ln, "in", 0, "network.dense"),
                                                   getInt(ln, "out", 0, "network.dense")));
        } else {
            throw ConfigError("network.layers: unknown kind '" + kind + "'");
        }
    }
    spec.validate();
    return spec;
}

json networkJson(const dtmx::NetworkSpec& spec) {
    json layers = json::array();
    for (const dtmx::LayerSpec& ls : spec.layers) {
        json ln;
        switch (ls.kind) {
            case dtmx::LayerKind::Conv3d:
                ln["kind"] = "conv";
                ln["kernel"] = ls.kernel;
                ln["in"] = ls.inChannels;
                ln["out"] = ls.outChannels;
                ln["stride"] = ls.stride;
                ln["pad"] = ls.pad;
                ln["cam"] = ls.camTarget;
                break;
            case dtmx::LayerKind::Relu:
                ln["kind"] = "relu";
                break;
            case dtmx::LayerKind::MaxPool3d:
                ln["kind"] = "maxpool";
                ln["window"] = ls.window;
                ln["stride"] = ls.poolStride;
                break;
            case dtmx::LayerKind::GlobalAvgPool:
                ln["kind"] = "gap";
                break;
            case dtmx::LayerKind::Dense:
                ln["kind"] = "dense";
                ln["in"] = ls.denseIn;
                ln["out"] = ls.denseOut;
                break;
            case dtmx::LayerKind::Sigmoid:
                ln["kind"] = "sigmoid";
                break;
        }
        layers.push_back(std::move(ln));
    }
    return json{{"layers", std::move(layers)}};
}

std::vector<dtmx::Variant> variantsFrom(const json& cfg, json& resolved) {
    std::vector<std::string> names;
    if (cfg.contains("variants")) {
        if (!cfg["variants"].is_array())
            throw ConfigError("variants: expected an array of variant names");
        for (const json& v : cfg["variants"]) {
            if (!v.is_string()) throw ConfigError("variants: expected an array of variant names");
            names.push_back(v.get<std::string>());
        }
    } else if (cfg.contains("variant")) {
        names.push_back(getString(cfg, "variant", "", "config"));
    } else {
        names = {"SI", "SI-LS", "CI", "CI-LS"};
    }
    std::vector<dtmx::Variant> out;
    for (const std::string& name : names) out.push_back(dtmx::parseVariant(name));
    resolved["variants"] = names;
    return out;
}

void prepareOutDir(const std::string& dir, bool force) {
    fs::path p(dir);
    if (fs::exists(p)) {
        if (!fs::is_directory(p)) throw ConfigError("output path is not a directory: " + dir);
        if (!fs::is_empty(p) && !force)
            throw ConfigError("output directory " + dir +
                              " is not empty; pass --force to write into it");
    } else {
        fs::create_directories(p);
    }
}

std::string readTextFile(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw dtmx::DataError("cannot read " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void writeTextFile(const std::string& path, const std::string& content) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw dtmx::DataError("cannot write " + path);
    out << content;
    if (!out) throw dtmx::DataError("short write to " + path);
}

std::string existingPath(const json& cfg, const std::string& key, const std::string& where) {
    std::string path = getString(cfg, key, "", where);
    if (path.empty()) throw ConfigError(where + ": missing required path '" + key + "'");
    if (!fs::exists(path)) throw ConfigError(where + "." + key + ": path does not exist: " + path);
    return path;
}

}  // namespace dtmxcli
