#include "dtmx/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dtmx/common.hpp"
#include "dtmx/serialize.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "volume file I/O assumes a little-endian host");

namespace fs = std::filesystem;
using nlohmann::json;

namespace dtmx {

int TabularSchema::fieldIndex(const std::string& name) const {
    for (size_t i = 0; i < fields.size(); ++i)
        if (fields[i].name == name) return static_cast<int>(i);
    return -1;
}

EncodingStats fitEncoding(const TabularSchema& schema, const std::vector<TabularRecord>& records,
                          const std::vector<int64_t>& trainIndices) {
    if (trainIndices.empty()) throw DataError("encoding requires a nonempty training split");
    for (int64_t i : trainIndices)
        if (i < 0 || i >= static_cast<int64_t>(records.size()))
            throw DataError("training index " + std::to_string(i) + " out of range");

    EncodingStats st;
    const size_t F = schema.fields.size();
    st.mean.assign(F, 0.0);
    st.sd.assign(F, 1.0);
    st.levels.assign(F, {});

    for (size_t f = 0; f < F; ++f) {
        const TabularField& field = schema.fields[f];
        if (field.numeric) {
            double sum = 0.0;
            for (int64_t i : trainIndices) sum += records[static_cast<size_t>(i)].numeric[f];
            double mean = sum / static_cast<double>(trainIndices.size());
            double ss = 0.0;
            for (int64_t i : trainIndices) {
                double d = records[static_cast<size_t>(i)].numeric[f] - mean;
                ss += d * d;
            }
            double sd = std::sqrt(ss / static_cast<double>(trainIndices.size()));
            if (sd <= 1e-12)
                throw DataError("numeric feature '" + field.name +
                                "' is constant on the training split");
            st.mean[f] = mean;
            st.sd[f] = sd;
            st.encodedNames.push_back(field.name);
            st.encodedNotes.push_back("per 1 SD");
        } else {
            std::vector<std::string> levels = field.levels;
            for (int64_t i : trainIndices) {
                const std::string& lev = records[static_cast<size_t>(i)].categorical[f];
                bool known = std::find(levels.begin(), levels.end(), lev) != levels.end();
                if (!known) {
                    if (!field.levels.empty())
                        throw DataError("feature '" + field.name + "': unseen level '" + lev + "'");
                    levels.push_back(lev);
                }
            }
            if (levels.size() < 2)
                throw DataError("categorical feature '" + field.name +
                                "' has fewer than two levels on the training split");
            st.levels[f] = levels;
            for (size_t l = 1; l < levels.size(); ++l) {
                st.encodedNames.push_back(field.name + "=" + levels[l]);
                st.encodedNotes.push_back("vs " + levels[0]);
            }
        }
    }
    return st;
}

std::vector<double> encodeRecord(const TabularSchema& schema, const EncodingStats& stats,
                                 const TabularRecord& rec) {
    std::vector<double> x;
    x.reserve(static_cast<size_t>(stats.width()));
    for (size_t f = 0; f < schema.fields.size(); ++f) {
        const TabularField& field = schema.fields[f];
        if (field.numeric) {
            x.push_back((rec.numeric[f] - stats.mean[f]) / stats.sd[f]);
        } else {
            const std::vector<std::string>& levels = stats.levels[f];
            const std::string& lev = rec.categorical[f];
            auto it = std::find(levels.begin(), levels.end(), lev);
            if (it == levels.end())
                throw DataError("feature '" + field.name + "': unseen level '" + lev + "'");
            size_t pos = static_cast<size_t>(it - levels.begin());
            for (size_t l = 1; l < levels.size(); ++l) x.push_back(l == pos ? 1.0 : 0.0);
        }
    }
    return x;
}

Tensor standardizeVolume(const Tensor& raw) {
    auto [mean, sd] = raw.meanStd();
    if (sd <= 1e-10) throw DataError("constant volume cannot be standardized");
    Tensor out = raw;
    const double inv = 1.0 / sd;
    for (float& v : out.values()) v = static_cast<float>((v - mean) * inv);
    return out;
}

void LabeledDataset::validate() const {
    const size_t n = labels.size();
    if (n == 0) throw DataError("dataset is empty");
    if (ids.size() != n || tabular.size() != n)
        throw DataError("dataset columns are misaligned (" + std::to_string(ids.size()) + " ids, " +
                        std::to_string(tabular.size()) + " tabular rows, " + std::to_string(n) +
                        " labels)");
    if (hasVolumes) {
        if (volumes.size() != n)
            throw DataError("dataset has " + std::to_string(volumes.size()) + " volumes for " +
                            std::to_string(n) + " records");
        for (size_t i = 0; i < n; ++i) {
            const Tensor& v = volumes[i];
            if (v.rank() != 3 || v.extent(0) != extents[0] || v.extent(1) != extents[1] ||
                v.extent(2) != extents[2])
                throw DataError("volume for '" + ids[i] + "' has extents " + v.shapeString());
        }
    }
    for (size_t f = 0; f < schema.fields.size(); ++f)
        for (size_t i = 0; i < n; ++i)
            if (tabular[i].numeric.size() != schema.fields.size() ||
                tabular[i].categorical.size() != schema.fields.size())
                throw DataError("tabular record '" + ids[i] + "' does not match the schema width");
    bool fav = false, unfav = false;
    for (Label l : labels) (l == kUnfavorable ? unfav : fav) = true;
    if (!fav || !unfav) throw DataError("dataset must contain both outcome classes");
}

void LabeledDataset::standardizeVolumes() {
    if (!hasVolumes || volumesStandardized) return;
    for (Tensor& v : volumes) v = standardizeVolume(v);
    volumesStandardized = true;
}

void SyntheticSpec::validate() const {
    if (n < 2) throw ConfigError("synthetic n must be at least 2");
    for (int64_t e : extents)
        if (e < 4) throw ConfigError("synthetic extents must be at least 4 voxels per axis");
    if (!(radiusMin > 0) || radiusMax < radiusMin)
        throw ConfigError("synthetic radius range must satisfy 0 < min <= max");
    if (intensityMax < intensityMin) throw ConfigError("synthetic intensity range is inverted");
    if (noiseSd < 0) throw ConfigError("synthetic noise sd must be non-negative");
    for (double b : betaStar)
        if (!std::isfinite(b)) throw ConfigError("synthetic beta* must be finite");
    if (!std::isfinite(thetaStar) || !std::isfinite(gammaStar))
        throw ConfigError("synthetic effects must be finite");
}

namespace {

struct Geometry {
    double cz, cy, cx, radius, intensity;
};

// Streams 1, 2, 3, 4 are geometry, tabular, label and noise draws; keeping
// them separate lets pass 1 compute lesion volumes without materializing
// voxels.
Geometry drawGeometry(const SyntheticSpec& spec, int64_t i) {
    Rng rng(mixSeed(spec.seed, static_cast<uint64_t>(i), 1));
    Geometry g;
    g.cz = rng.uniform(0.25 * double(spec.extents[0]), 0.75 * double(spec.extents[0]));
    g.cy = rng.uniform(0.25 * double(spec.extents[1]), 0.75 * double(spec.extents[1]));
    g.cx = rng.uniform(0.25 * double(spec.extents[2]), 0.75 * double(spec.extents[2]));
    g.radius = rng.uniform(spec.radiusMin, spec.radiusMax);
    g.intensity = rng.uniform(spec.intensityMin, spec.intensityMax);
    return g;
}

double countLesionVoxels(const SyntheticSpec& spec, const Geometry& g) {
    int64_t count = 0;
    const double r2 = g.radius * g.radius;
    for (int64_t z = 0; z < spec.extents[0]; ++z)
        for (int64_t y = 0; y < spec.extents[1]; ++y)
            for (int64_t x = 0; x < spec.extents[2]; ++x) {
                double dz = double(z) - g.cz, dy = double(y) - g.cy, dx = double(x) - g.cx;
                if (dz * dz + dy * dy + dx * dx <= r2) ++count;
            }
    return static_cast<double>(count);
}

std::string recordId(int64_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "p%05lld", static_cast<long long>(i + 1));
    return buf;
}

}  // namespace

SyntheticSummary synthesizeStream(const SyntheticSpec& spec,
                                  const std::function<void(const SyntheticRow&)>& fn) {
    spec.validate();
    const int64_t n = spec.n;
    SyntheticSummary sum;
    sum.lesionVolume.resize(static_cast<size_t>(n));
    sum.z.resize(static_cast<size_t>(n));
    sum.pUnfavorable.resize(static_cast<size_t>(n));
    sum.labels.resize(static_cast<size_t>(n));

    std::vector<std::vector<double>> xs(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        Geometry g = drawGeometry(spec, i);
        sum.lesionVolume[static_cast<size_t>(i)] = countLesionVoxels(spec, g);
        Rng tab(mixSeed(spec.seed, static_cast<uint64_t>(i), 2));
        std::vector<double>& x = xs[static_cast<size_t>(i)];
        x.resize(spec.betaStar.size());
        for (double& v : x) v = tab.normal();
    }

    double lvMean = 0.0;
    for (double v : sum.lesionVolume) lvMean += v;
    lvMean /= static_cast<double>(n);
    double lvSs = 0.0;
    for (double v : sum.lesionVolume) lvSs += (v - lvMean) * (v - lvMean);
    double lvSd = std::sqrt(lvSs / static_cast<double>(n));

    int64_t unfav = 0;
    for (int64_t i = 0; i < n; ++i) {
        double z = lvSd > 1e-12 ? (sum.lesionVolume[static_cast<size_t>(i)] - lvMean) / lvSd : 0.0;
        sum.z[static_cast<size_t>(i)] = z;
        double eta = spec.thetaStar + spec.gammaStar * z;
        for (size_t k = 0; k < spec.betaStar.size(); ++k)
            eta += spec.betaStar[k] * xs[static_cast<size_t>(i)][k];
        double p1 = stableSigmoid(-eta);
        sum.pUnfavorable[static_cast<size_t>(i)] = p1;
        Rng lab(mixSeed(spec.seed, static_cast<uint64_t>(i), 3));
        Label y = lab.uniform01() < p1 ? kUnfavorable : kFavorable;
        sum.labels[static_cast<size_t>(i)] = y;
        unfav += y == kUnfavorable;
    }
    sum.prevalence = static_cast<double>(unfav) / static_cast<double>(n);
    if (sum.prevalence < 0.05 || sum.prevalence > 0.95)
        sum.warning = "realized unfavorable prevalence " + std::to_string(sum.prevalence) +
                      " is outside [0.05, 0.95]";

    if (fn) {
        for (int64_t i = 0; i < n; ++i) {
            Geometry g = drawGeometry(spec, i);
            Tensor vol = Tensor::zeros({spec.extents[0], spec.extents[1], spec.extents[2]});
            Tensor mask = Tensor::zeros(vol.shape());
            Rng noise(mixSeed(spec.seed, static_cast<uint64_t>(i), 4));
            const double r2 = g.radius * g.radius;
            const double blobSd = g.radius / 2.0;
            int64_t vi = 0;
            for (int64_t z = 0; z < spec.extents[0]; ++z)
                for (int64_t y = 0; y < spec.extents[1]; ++y)
                    for (int64_t x = 0; x < spec.extents[2]; ++x, ++vi) {
                        double dz = double(z) - g.cz, dy = double(y) - g.cy,
                               dx = double(x) - g.cx;
                        double d2 = dz * dz + dy * dy + dx * dx;
                        double v = spec.noiseSd * noise.normal() +
                                   g.intensity * std::exp(-d2 / (2.0 * blobSd * blobSd));
                        vol[vi] = static_cast<float>(v);
                        if (d2 <= r2) mask[vi] = 1.0f;
                    }
            TabularRecord rec;
            rec.numeric.assign(spec.betaStar.size(), 0.0);
            rec.categorical.assign(spec.betaStar.size(), "");
            for (size_t k = 0; k < spec.betaStar.size(); ++k)
                rec.numeric[k] = xs[static_cast<size_t>(i)][k];
            SyntheticRow row{i,
                             recordId(i),
                             vol,
                             mask,
                             rec,
                             sum.labels[static_cast<size_t>(i)],
                             sum.lesionVolume[static_cast<size_t>(i)],
                             sum.z[static_cast<size_t>(i)],
                             sum.pUnfavorable[static_cast<size_t>(i)]};
            fn(row);
        }
    }
    return sum;
}

static TabularSchema syntheticSchema(const SyntheticSpec& spec) {
    TabularSchema schema;
    for (size_t k = 0; k < spec.betaStar.size(); ++k) {
        TabularField f;
        f.name = "x" + std::to_string(k + 1);
        f.numeric = true;
        schema.fields.push_back(f);
    }
    return schema;
}

SyntheticResult synthesizeDataset(const SyntheticSpec& spec) {
    SyntheticResult res;
    res.spec = spec;
    res.data.schema = syntheticSchema(spec);
    res.data.hasVolumes = true;
    res.data.extents = spec.extents;
    res.summary = synthesizeStream(spec, [&](const SyntheticRow& row) {
        res.data.ids.push_back(row.id);
        res.data.volumes.push_back(row.volume);
        res.data.tabular.push_back(row.tabular);
        res.data.labels.push_back(row.label);
        res.masks.push_back(row.mask);
    });
    // degenerate prevalence only warns; consumers validate when they need both classes
    if (res.summary.warning.empty()) res.data.validate();
    return res;
}

// -- binary volume format

namespace {

void appendU32(std::string& out, uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}


}  // namespace

void saveVolume(const std::string& path, const Tensor& t) {
    if (t.rank() < 1 || t.rank() > 8)
        throw DataError("volume files support ranks 1..8, got " + std::to_string(t.rank()));
    std::string out;
    out.reserve(static_cast<size_t>(t.numel()) * 4 + 64);
    out += "VOL1";
    out.push_back(static_cast<char>(t.rank()));
    for (int a = 0; a < t.rank(); ++a) {
        int64_t e = t.extent(a);
        if (e > 0xffffffffll) throw DataError("extent too large for the volume format");
        appendU32(out, static_cast<uint32_t>(e));
    }
    size_t payload = static_cast<size_t>(t.numel()) * 4;
    size_t head = out.size();
    out.resize(head + payload);
    std::memcpy(out.data() + head, t.data(), payload);
    writeFileOrThrow(path, out);
}

Tensor loadVolume(const std::string& path) {
    const std::string bytes = readFileOrThrow(path);
    auto fail = [&](size_t offset, const std::string& what) {
        throw DataError("'" + path + "': " + what + " at byte " + std::to_string(offset));
    };
    if (bytes.size() < 5 || bytes.compare(0, 4, "VOL1") != 0) fail(0, "bad magic (want VOL1)");
    const int rank = static_cast<unsigned char>(bytes[4]);
    if (rank < 1 || rank > 8) fail(4, "unsupported rank " + std::to_string(rank));
    size_t off = 5;
    std::vector<int64_t> shape;
    int64_t numel = 1;
    for (int a = 0; a < rank; ++a, off += 4) {
        if (off + 4 > bytes.size()) fail(off, "truncated extent header");
        uint32_t e = 0;
        for (int b = 0; b < 4; ++b)
            e |= static_cast<uint32_t>(static_cast<unsigned char>(bytes[off + size_t(b)])) << (8 * b);
        if (e == 0) fail(off, "zero extent");
        shape.push_back(static_cast<int64_t>(e));
        if (numel > (int64_t(1) << 40) / static_cast<int64_t>(e)) fail(off, "extent overflow");
        numel *= static_cast<int64_t>(e);
    }
    const size_t want = static_cast<size_t>(numel) * 4;
    if (bytes.size() - off < want)
        fail(bytes.size(), "truncated payload (expected " + std::to_string(want) + " bytes after byte " +
                               std::to_string(off) + ")");
    if (bytes.size() - off > want) fail(off + want, "trailing bytes");
    std::vector<float> vals(static_cast<size_t>(numel));
    std::memcpy(vals.data(), bytes.data() + off, want);
    for (float v : vals)
        if (!std::isfinite(v)) fail(off, "non-finite payload value");
    return Tensor::fromValues(std::move(shape), std::move(vals));
}

// -- CSV

namespace {

std::vector<std::string> splitCsvLine(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    cells.push_back(cur);
    return cells;
}

std::vector<std::string> readCsvLines(const std::string& path) {
    std::string text = readFileOrThrow(path);
    std::vector<std::string> lines;
    std::string cur;
    for (char c : text) {
        if (c == '\n') {
            lines.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) lines.push_back(cur);
    if (lines.empty()) throw DataError("'" + path + "': empty file");
    return lines;
}

double parseNumericCell(const std::string& path, size_t row, const std::string& column,
                        const std::string& cell) {
    if (cell.empty())
        throw DataError("'" + path + "' row " + std::to_string(row) + ": missing value in column '" +
                        column + "'");
    size_t used = 0;
    double v = 0;
    try {
        v = std::stod(cell, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != cell.size() || !std::isfinite(v))
        throw DataError("'" + path + "' row " + std::to_string(row) + ": non-numeric value '" +
                        cell + "' in column '" + column + "'");
    return v;
}

}  // namespace

std::vector<std::pair<std::string, TabularRecord>> loadTabularCsv(const std::string& path,
                                                                  const TabularSchema& schema) {
    std::vector<std::string> lines = readCsvLines(path);
    std::vector<std::string> header = splitCsvLine(lines[0]);
    if (header.empty() || header[0] != "id")
        throw DataError("'" + path + "': first header column must be 'id'");
    if (header.size() != schema.fields.size() + 1)
        throw DataError("'" + path + "': header has " + std::to_string(header.size() - 1) +
                        " feature columns, schema expects " + std::to_string(schema.fields.size()));
    for (size_t f = 0; f < schema.fields.size(); ++f)
        if (header[f + 1] != schema.fields[f].name)
            throw DataError("'" + path + "': header column '" + header[f + 1] +
                            "' does not match schema field '" + schema.fields[f].name + "'");

    std::vector<std::pair<std::string, TabularRecord>> out;
    for (size_t r = 1; r < lines.size(); ++r) {
        if (lines[r].empty()) continue;
        std::vector<std::string> cells = splitCsvLine(lines[r]);
        if (cells.size() != header.size())
            throw DataError("'" + path + "' row " + std::to_string(r + 1) + ": expected " +
                            std::to_string(header.size()) + " cells, got " +
                            std::to_string(cells.size()));
        if (cells[0].empty())
            throw DataError("'" + path + "' row " + std::to_string(r + 1) + ": missing id");
        TabularRecord rec;
        rec.numeric.assign(schema.fields.size(), 0.0);
        rec.categorical.assign(schema.fields.size(), "");
        for (size_t f = 0; f < schema.fields.size(); ++f) {
            const std::string& cell = cells[f + 1];
            if (schema.fields[f].numeric) {
                rec.numeric[f] = parseNumericCell(path, r + 1, schema.fields[f].name, cell);
            } else {
                if (cell.empty())
                    throw DataError("'" + path + "' row " + std::to_string(r + 1) +
                                    ": missing value in column '" + schema.fields[f].name + "'");
                rec.categorical[f] = cell;
            }
        }
        out.emplace_back(cells[0], std::move(rec));
    }
    if (out.empty()) throw DataError("'" + path + "': no data rows");
    return out;
}

std::vector<std::pair<std::string, Label>> loadLabelsCsv(const std::string& path) {
    std::vector<std::string> lines = readCsvLines(path);
    std::vector<std::string> header = splitCsvLine(lines[0]);
    if (header.size() != 2 || header[0] != "id" || header[1] != "label")
        throw DataError("'" + path + "': header must be 'id,label'");
    std::vector<std::pair<std::string, Label>> out;
    for (size_t r = 1; r < lines.size(); ++r) {
        if (lines[r].empty()) continue;
        std::vector<std::string> cells = splitCsvLine(lines[r]);
        if (cells.size() != 2 || cells[0].empty())
            throw DataError("'" + path + "' row " + std::to_string(r + 1) + ": expected 'id,label'");
        Label l;
        if (cells[1] == "favorable")
            l = kFavorable;
        else if (cells[1] == "unfavorable")
            l = kUnfavorable;
        else
            throw DataError("'" + path + "' row " + std::to_string(r + 1) + ": unknown label '" +
                            cells[1] + "'");
        out.emplace_back(cells[0], l);
    }
    if (out.empty()) throw DataError("'" + path + "': no data rows");
    return out;
}

// -- manifest

DatasetManifest loadManifest(const std::string& path) {
    json j;
    try {
        j = json::parse(readFileOrThrow(path));
    } catch (const json::exception& e) {
        throw DataError("'" + path + "': invalid JSON (" + std::string(e.what()) + ")");
    }
    DatasetManifest m;
    try {
        m.name = j.value("name", std::string("dataset"));
        if (!j.contains("extents") && j.contains("volumes_dir"))
            throw DataError("'" + path + "': manifest with volumes needs 'extents'");
        if (j.contains("extents")) {
            auto e = j["extents"];
            if (!e.is_array() || e.size() != 3)
                throw DataError("'" + path + "': 'extents' must be a 3-array");
            for (int a = 0; a < 3; ++a) m.extents[static_cast<size_t>(a)] = e[size_t(a)].get<int64_t>();
        }
        m.volumesDir = j.value("volumes_dir", std::string());
        m.labelsCsv = j.value("labels_csv", std::string("labels.csv"));
        m.tabularCsv = j.value("tabular_csv", std::string("tabular.csv"));
        m.seed = j.value("seed", uint64_t(0));
        if (j.contains("schema")) m.schema = schemaFromJson(j["schema"], "'" + path + "'");
    } catch (const json::exception& e) {
        throw DataError("'" + path + "': malformed manifest (" + std::string(e.what()) + ")");
    }
    return m;
}

void saveManifest(const std::string& path, const DatasetManifest& m) {
    json j;
    j["name"] = m.name;
    if (!m.volumesDir.empty()) {
        j["volumes_dir"] = m.volumesDir;
        j["extents"] = {m.extents[0], m.extents[1], m.extents[2]};
    }
    j["labels_csv"] = m.labelsCsv;
    j["tabular_csv"] = m.tabularCsv;
    j["schema"] = schemaToJson(m.schema);
    j["seed"] = m.seed;
    writeFileOrThrow(path, j.dump(2) + "\n");
}

LabeledDataset loadDataset(const std::string& manifestPath, int jobs) {
    DatasetManifest m = loadManifest(manifestPath);
    const fs::path base = fs::path(manifestPath).parent_path();

    LabeledDataset ds;
    ds.schema = m.schema;
    ds.extents = m.extents;
    ds.hasVolumes = !m.volumesDir.empty();

    auto labels = loadLabelsCsv((base / m.labelsCsv).string());
    auto tab = loadTabularCsv((base / m.tabularCsv).string(), m.schema);
    if (tab.size() != labels.size())
        throw DataError("dataset '" + m.name + "': " + std::to_string(labels.size()) +
                        " labels vs " + std::to_string(tab.size()) + " tabular rows");

    std::vector<std::pair<std::string, TabularRecord>> byId = std::move(tab);
    for (auto& [id, l] : labels) {
        ds.ids.push_back(id);
        ds.labels.push_back(l);
        bool found = false;
        for (auto& [tid, rec] : byId) {
            if (tid == id) {
                ds.tabular.push_back(rec);
                found = true;
                break;
            }
        }
        if (!found) throw DataError("dataset '" + m.name + "': no tabular row for id '" + id + "'");
    }

    if (ds.hasVolumes) {
        ds.volumes.assign(ds.ids.size(), Tensor());
        const fs::path vdir = base / m.volumesDir;
        parallelFor(static_cast<int64_t>(ds.ids.size()), jobs, [&](int64_t i) {
            ds.volumes[static_cast<size_t>(i)] =
                loadVolume((vdir / (ds.ids[static_cast<size_t>(i)] + ".vol")).string());
        });
    }
    ds.validate();
    return ds;
}

SyntheticSummary writeSyntheticDataset(const std::string& dir, const SyntheticSpec& spec,
                                       bool writeTruth) {
    spec.validate();
    const fs::path base(dir);
    fs::create_directories(base / "volumes");
    if (writeTruth) fs::create_directories(base / "truth" / "masks");

    std::string labelsCsv = "id,label\n";
    std::string tabularCsv = "id";
    for (size_t k = 0; k < spec.betaStar.size(); ++k) tabularCsv += ",x" + std::to_string(k + 1);
    tabularCsv += "\n";
    std::string truthCsv = "id,lesion_volume,z,p_unfavorable\n";

    char buf[96];
    SyntheticSummary sum = synthesizeStream(spec, [&](const SyntheticRow& row) {
        saveVolume((base / "volumes" / (row.id + ".vol")).string(), row.volume);
        labelsCsv += row.id;
        labelsCsv += row.label == kUnfavorable ? ",unfavorable\n" : ",favorable\n";
        tabularCsv += row.id;
        for (double v : row.tabular.numeric) {
            std::snprintf(buf, sizeof(buf), ",%.17g", v);
            tabularCsv += buf;
        }
        tabularCsv += "\n";
        if (writeTruth) {
            saveVolume((base / "truth" / "masks" / (row.id + ".vol")).string(), row.mask);
            std::snprintf(buf, sizeof(buf), ",%.17g,%.17g,%.17g\n", row.lesionVolume, row.z,
                          row.pUnfavorable);
            truthCsv += row.id + buf;
        }
    });

    writeFileOrThrow((base / "labels.csv").string(), labelsCsv);
    writeFileOrThrow((base / "tabular.csv").string(), tabularCsv);

    DatasetManifest m;
    m.name = "synthetic";
    m.extents = spec.extents;
    m.volumesDir = "volumes";
    m.schema = syntheticSchema(spec);
    m.seed = spec.seed;
    saveManifest((base / "manifest.json").string(), m);

    if (writeTruth) {
        writeFileOrThrow((base / "truth" / "truth.csv").string(), truthCsv);
        json params;
        params["theta_star"] = spec.thetaStar;
        params["gamma_star"] = spec.gammaStar;
        params["beta_star"] = spec.betaStar;
        params["noise_sd"] = spec.noiseSd;
        params["radius"] = {spec.radiusMin, spec.radiusMax};
        params["intensity"] = {spec.intensityMin, spec.intensityMax};
        params["seed"] = spec.seed;
        params["n"] = spec.n;
        params["prevalence"] = sum.prevalence;
        writeFileOrThrow((base / "truth" / "params.json").string(), params.dump(2) + "\n");
    }
    return sum;
}

}  // namespace dtmx
