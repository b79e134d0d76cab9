#include <cmath>
#include <cstring>

#include "dtmx/common.hpp"
#include "dtmx/serialize.hpp"
#include "dtmx/training.hpp"
#include "json.hpp"

using nlohmann::json;

namespace dtmx {

namespace {

constexpr char kMagic[4] = {'D', 'T', 'M', '1'};
constexpr uint32_t kVersion = 1;

uint32_t variantTag(Variant v) { return static_cast<uint32_t>(v); }

Variant variantFromTag(uint32_t tag, const std::string& path) {
    if (tag > 3) throw DataError("'" + path + "': unknown variant tag " + std::to_string(tag));
    return static_cast<Variant>(tag);
}

void putU32(std::string& out, uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

void putU64(std::string& out, uint64_t v) {
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

void putF32(std::string& out, std::span<const float> v) {
    size_t at = out.size();
    out.resize(at + v.size() * 4);
    std::memcpy(out.data() + at, v.data(), v.size() * 4);
}

void putF64(std::string& out, std::span<const double> v) {
    size_t at = out.size();
    out.resize(at + v.size() * 8);
    std::memcpy(out.data() + at, v.data(), v.size() * 8);
}

struct Reader {
    const std::string& bytes;
    const std::string& path;
    size_t at = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw DataError("'" + path + "' at byte " + std::to_string(at) + ": " + what);
    }
    void need(size_t n, const char* what) const {
        if (at + n > bytes.size())
            throw DataError("'" + path + "' at byte " + std::to_string(at) + ": truncated " +
                            what);
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int b = 0; b < 4; ++b)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes[at + b])) << (8 * b);
        at += 4;
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int b = 0; b < 8; ++b)
            v |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[at + b])) << (8 * b);
        at += 8;
        return v;
    }
    double f64(const char* what) {
        need(8, what);
        double v;
        std::memcpy(&v, bytes.data() + at, 8);
        at += 8;
        if (!std::isfinite(v)) fail(std::string("non-finite ") + what);
        return v;
    }
    void f32Into(std::span<float> dst, const char* what) {
        need(dst.size() * 4, what);
        std::memcpy(dst.data(), bytes.data() + at, dst.size() * 4);
        at += dst.size() * 4;
        for (float v : dst)
            if (!std::isfinite(v)) fail(std::string("non-finite ") + what);
    }
};

}  // namespace

void saveModel(const std::string& path, const ModelBundle& bundle) {
    bundle.ensemble.validate();
    const EnsembleModel& em = bundle.ensemble;
    bool image = variantUsesImage(em.variant);
    bool shift = variantUsesShift(em.variant);

    json meta;
    meta["variant"] = variantName(em.variant);
    meta["members"] = em.memberCount();
    meta["schema"] = schemaToJson(bundle.schema);
    meta["stats"] = encodingStatsToJson(bundle.stats);
    meta["encoded_width"] = shift ? em.members.front().beta.size() : size_t(0);
    if (image) {
        meta["network"] = networkSpecToJson(em.members.front().net);
        meta["extents"] = {bundle.extents[0], bundle.extents[1], bundle.extents[2]};
    }
    std::string metaStr = meta.dump();

    std::string out(kMagic, 4);
    putU32(out, kVersion);
    putU32(out, variantTag(em.variant));
    putU32(out, static_cast<uint32_t>(em.memberCount()));
    putU32(out, static_cast<uint32_t>(metaStr.size()));
    out += metaStr;

    for (const TransformationModel& m : em.members) {
        if (image) {
            for (size_t l = 0; l < m.params.weight.size(); ++l) {
                if (m.params.weight[l].empty()) continue;
                putU64(out, static_cast<uint64_t>(m.params.weight[l].numel()));
                putF32(out, m.params.weight[l].values());
                putU64(out, static_cast<uint64_t>(m.params.bias[l].numel()));
                putF32(out, m.params.bias[l].values());
            }
        } else {
            putF64(out, std::span<const double>(&m.theta0, 1));
        }
        if (shift) {
            putU64(out, m.beta.size());
            putF64(out, m.beta);
        }
    }
    putF64(out, em.weights);
    writeFileOrThrow(path, out);
}

ModelBundle loadModel(const std::string& path) {
    const std::string bytes = readFileOrThrow(path);
    Reader r{bytes, path};
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) r.fail("bad magic (want DTM1)");
    r.at = 4;
    uint32_t version = r.u32("version");
    if (version != kVersion)
        r.fail("unsupported model version " + std::to_string(version));
    Variant variant = variantFromTag(r.u32("variant tag"), path);
    uint32_t members = r.u32("member count");
    if (members == 0) r.fail("zero members");
    uint32_t metaLen = r.u32("metadata length");
    r.need(metaLen, "metadata");
    json meta;
    try {
        meta = json::parse(bytes.substr(r.at, metaLen));
    } catch (const json::exception& e) {
        r.fail("malformed metadata (" + std::string(e.what()) + ")");
    }
    r.at += metaLen;

    ModelBundle bundle;
    bundle.ensemble.variant = variant;
    std::string context = "'" + path + "'";
    try {
        if (meta.contains("schema")) bundle.schema = schemaFromJson(meta["schema"], context);
        if (meta.contains("stats")) bundle.stats = encodingStatsFromJson(meta["stats"], context);
    } catch (const json::exception& e) {
        r.fail("malformed metadata (" + std::string(e.what()) + ")");
    }

    bool image = variantUsesImage(variant);
    bool shift = variantUsesShift(variant);
    NetworkSpec spec;
    if (image) {
        if (!meta.contains("network")) r.fail("image variant without a network spec");
        spec = networkSpecFromJson(meta["network"], context);
        spec.validate();
        if (meta.contains("extents"))
            for (int a = 0; a < 3; ++a)
                bundle.extents[static_cast<size_t>(a)] = meta["extents"][size_t(a)].get<int64_t>();
        else
            bundle.extents = spec.inputExtents;
    }
    uint64_t width = meta.value("encoded_width", uint64_t(0));

    for (uint32_t m = 0; m < members; ++m) {
        TransformationModel tm;
        tm.variant = variant;
        if (image) {
            tm.net = spec;
            tm.params = glorotInit(spec, 0);
            for (size_t l = 0; l < tm.params.weight.size(); ++l) {
                if (tm.params.weight[l].empty()) continue;
                uint64_t wc = r.u64("weight count");
                if (wc != static_cast<uint64_t>(tm.params.weight[l].numel()))
                    r.fail("layer " + std::to_string(l) + " weight count " + std::to_string(wc) +
                           ", expected " + std::to_string(tm.params.weight[l].numel()));
                r.f32Into(tm.params.weight[l].values(), "weights");
                uint64_t bc = r.u64("bias count");
                if (bc != static_cast<uint64_t>(tm.params.bias[l].numel()))
                    r.fail("layer " + std::to_string(l) + " bias count " + std::to_string(bc) +
                           ", expected " + std::to_string(tm.params.bias[l].numel()));
                r.f32Into(tm.params.bias[l].values(), "biases");
            }
        } else {
            tm.theta0 = r.f64("intercept");
        }
        if (shift) {
            uint64_t bw = r.u64("coefficient count");
            if (bw != width)
                r.fail("coefficient count " + std::to_string(bw) + ", expected " +
                       std::to_string(width));
            tm.beta.resize(bw);
            for (uint64_t k = 0; k < bw; ++k) tm.beta[k] = r.f64("coefficient");
        }
        bundle.ensemble.members.push_back(std::move(tm));
    }
    bundle.ensemble.weights.resize(members);
    for (uint32_t m = 0; m < members; ++m) bundle.ensemble.weights[m] = r.f64("ensemble weight");
    if (r.at != bytes.size()) r.fail("trailing bytes");
    bundle.ensemble.validate();
    return bundle;
}

}  // namespace dtmx
