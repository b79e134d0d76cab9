#include "dtmx/serialize.hpp"

#include "dtmx/common.hpp"

using nlohmann::json;

namespace dtmx {

namespace {

std::array<int64_t, 3> triple(const json& j, const std::string& context, const char* key) {
    if (!j.is_array() || j.size() != 3)
        throw ConfigError(context + ": '" + key + "' must be a 3-array");
    return {j[0].get<int64_t>(), j[1].get<int64_t>(), j[2].get<int64_t>()};
}

}  // namespace

json networkSpecToJson(const NetworkSpec& spec) {
    json layers = json::array();
    for (const LayerSpec& ls : spec.layers) {
        json l;
        l["kind"] = layerKindName(ls.kind);
        switch (ls.kind) {
            case LayerKind::Conv3d:
                l["kernel"] = {ls.kernel[0], ls.kernel[1], ls.kernel[2]};
                l["stride"] = {ls.stride[0], ls.stride[1], ls.stride[2]};
                l["pad"] = {ls.pad[0], ls.pad[1], ls.pad[2]};
                l["in_channels"] = ls.inChannels;
                l["out_channels"] = ls.outChannels;
                if (ls.camTarget) l["cam_target"] = true;
                break;
            case LayerKind::MaxPool3d:
                l["window"] = {ls.window[0], ls.window[1], ls.window[2]};
                l["stride"] = {ls.poolStride[0], ls.poolStride[1], ls.poolStride[2]};
                break;
            case LayerKind::Dense:
                l["in_features"] = ls.denseIn;
                l["out_features"] = ls.denseOut;
                break;
            default: break;
        }
        layers.push_back(l);
    }
    return json{{"input_extents", {spec.inputExtents[0], spec.inputExtents[1], spec.inputExtents[2]}},
                {"layers", layers}};
}

NetworkSpec networkSpecFromJson(const json& j, const std::string& context) {
    NetworkSpec spec;
    try {
        if (!j.contains("input_extents") || !j.contains("layers"))
            throw ConfigError(context + ": network needs 'input_extents' and 'layers'");
        spec.inputExtents = triple(j["input_extents"], context, "input_extents");
        for (const json& l : j["layers"]) {
            std::string kind = l.at("kind").get<std::string>();
            if (kind == "conv3d") {
                LayerSpec ls = conv3dLayer(triple(l.at("kernel"), context, "kernel"),
                                           l.at("in_channels").get<int64_t>(),
                                           l.at("out_channels").get<int64_t>());
                if (l.contains("stride")) ls.stride = triple(l["stride"], context, "stride");
                if (l.contains("pad")) ls.pad = triple(l["pad"], context, "pad");
                ls.camTarget = l.value("cam_target", false);
                spec.layers.push_back(ls);
            } else if (kind == "relu") {
                spec.layers.push_back(reluLayer());
            } else if (kind == "maxpool3d") {
                spec.layers.push_back(maxPool3dLayer(triple(l.at("window"), context, "window"),
                                                     triple(l.at("stride"), context, "stride")));
            } else if (kind == "global_average_pool") {
                spec.layers.push_back(globalAveragePoolLayer());
            } else if (kind == "dense") {
                spec.layers.push_back(
                    denseLayer(l.at("in_features").get<int64_t>(), l.at("out_features").get<int64_t>()));
            } else if (kind == "sigmoid") {
                spec.layers.push_back(sigmoidLayer());
            } else {
                throw ConfigError(context + ": unknown layer kind '" + kind + "'");
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(context + ": malformed network spec (" + std::string(e.what()) + ")");
    }
    return spec;
}

json schemaToJson(const TabularSchema& schema) {
    json fields = json::array();
    for (const TabularField& f : schema.fields) {
        json jf;
        jf["name"] = f.name;
        jf["type"] = f.numeric ? "numeric" : "categorical";
        if (!f.numeric && !f.levels.empty()) jf["levels"] = f.levels;
        fields.push_back(jf);
    }
    return json{{"fields", fields}};
}

TabularSchema schemaFromJson(const json& j, const std::string& context) {
    TabularSchema schema;
    if (!j.is_object() || !j.contains("fields") || !j["fields"].is_array())
        throw DataError(context + ": schema must be an object with a 'fields' array");
    for (const json& f : j["fields"]) {
        TabularField field;
        if (!f.contains("name") || !f["name"].is_string() || !f.contains("type") ||
            !f["type"].is_string())
            throw DataError(context + ": each schema field needs 'name' and 'type'");
        field.name = f["name"].get<std::string>();
        std::string type = f["type"].get<std::string>();
        if (type == "numeric") {
            field.numeric = true;
        } else if (type == "categorical") {
            field.numeric = false;
            if (f.contains("levels"))
                for (const json& l : f["levels"]) field.levels.push_back(l.get<std::string>());
        } else {
            throw DataError(context + ": field '" + field.name + "' has unknown type '" + type +
                            "'");
        }
        schema.fields.push_back(std::move(field));
    }
    return schema;
}

json encodingStatsToJson(const EncodingStats& stats) {
    json j;
    j["mean"] = stats.mean;
    j["sd"] = stats.sd;
    j["levels"] = stats.levels;
    j["encoded_names"] = stats.encodedNames;
    j["encoded_notes"] = stats.encodedNotes;
    return j;
}

EncodingStats encodingStatsFromJson(const json& j, const std::string& context) {
    EncodingStats st;
    try {
        st.mean = j.at("mean").get<std::vector<double>>();
        st.sd = j.at("sd").get<std::vector<double>>();
        st.levels = j.at("levels").get<std::vector<std::vector<std::string>>>();
        st.encodedNames = j.at("encoded_names").get<std::vector<std::string>>();
        st.encodedNotes = j.at("encoded_notes").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw DataError(context + ": malformed encoding stats (" + std::string(e.what()) + ")");
    }
    return st;
}

}  // namespace dtmx
