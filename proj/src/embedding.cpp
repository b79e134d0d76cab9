#include "dtmx/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "dtmx/common.hpp"
#include "dtmx/network.hpp"

namespace dtmx {

namespace {

std::vector<double> gapChannels(const Tensor& activation) {
    int64_t channels = activation.extent(0);
    int64_t voxels = activation.numel() / channels;
    std::vector<double> out(static_cast<size_t>(channels));
    for (int64_t l = 0; l < channels; ++l) {
        double sum = 0.0;
        const float* src = activation.data() + l * voxels;
        for (int64_t v = 0; v < voxels; ++v) sum += src[v];
        out[static_cast<size_t>(l)] = sum / static_cast<double>(voxels);
    }
    return out;
}

}  // namespace

std::vector<double> extractFeatures(const EnsembleModel& ensemble, const Tensor& map) {
    if (!variantUsesImage(ensemble.variant))
        throw ConfigError("feature extraction: variant " + variantName(ensemble.variant) +
                          " has no image network");
    if (ensemble.members.empty()) throw DataError("feature extraction: empty ensemble");
    if (map.rank() != 3)
        throw DataError("feature extraction: map must be rank 3, got " + map.shapeString());

    std::vector<double> features;
    for (const TransformationModel& member : ensemble.members) {
        const NetworkSpec& spec = member.net;
        if (std::array<int64_t, 3>{map.extent(0), map.extent(1), map.extent(2)} !=
            spec.inputExtents)
            throw DataError("feature extraction: map extents do not match the network input");
        NetworkEval eval(spec);
        Tensor cam = eval.forwardUpTo(member.params, map, spec.camLayer());
        std::vector<double> pooled = gapChannels(cam);
        features.insert(features.end(), pooled.begin(), pooled.end());
    }
    return features;
}

std::vector<double> extractFeatures(const EnsembleModel& ensemble, const Projection2D& proj) {
    if (!variantUsesImage(ensemble.variant))
        throw ConfigError("feature extraction: variant " + variantName(ensemble.variant) +
                          " has no image network");
    if (ensemble.members.empty()) throw DataError("feature extraction: empty ensemble");
    const std::array<int64_t, 3>& ext = ensemble.members.front().net.inputExtents;
    if (proj.rows != ext[0] || proj.cols != ext[1])
        throw DataError("feature extraction: projection extents do not match the network input");
    Tensor lifted = Tensor::zeros({ext[0], ext[1], ext[2]});
    for (int64_t i = 0; i < ext[0]; ++i)
        for (int64_t j = 0; j < ext[1]; ++j) {
            float v = static_cast<float>(proj.heatAt(i, j));
            for (int64_t a = 0; a < ext[2]; ++a) lifted.at3(i, j, a) = v;
        }
    return extractFeatures(ensemble, lifted);
}

AffinitySet calibrateAffinities(const std::vector<std::vector<double>>& features,
                                double perplexity) {
    const size_t n = features.size();
    if (n < 3) throw DataError("affinities: need at least 3 points");
    if (!(perplexity > 0.0)) throw ConfigError("affinities: perplexity must be positive");
    if (perplexity >= static_cast<double>(n - 1))
        throw ConfigError("affinities: perplexity must be below N - 1");
    const size_t d = features.front().size();
    if (d == 0) throw DataError("affinities: empty feature vectors");
    for (const std::vector<double>& f : features) {
        if (f.size() != d) throw DataError("affinities: inconsistent feature dimensions");
        for (double v : f)
            if (!std::isfinite(v)) throw DataError("affinities: non-finite feature value");
    }

    AffinitySet out;
    out.n = n;
    out.perplexity = perplexity;
    out.sigma.assign(n, 0.0);

    std::vector<double> dist2(n * n, 0.0);
    double minOff = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (size_t kDim = 0; kDim < d; ++kDim) {
                double diff = features[i][kDim] - features[j][kDim];
                s += diff * diff;
            }
            dist2[i * n + j] = s;
            dist2[j * n + i] = s;
            minOff = std::min(minOff, s);
        }
    if (minOff == 0.0) {
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < n; ++j)
                if (i != j) dist2[i * n + j] += 1e-10;
        out.warning = "duplicate feature vectors; 1e-10 jitter added to pairwise distances";
    }

    const double targetH = std::log(perplexity);
    std::vector<double> conditional(n * n, 0.0);
    std::vector<double> row(n);
    for (size_t i = 0; i < n; ++i) {
        double beta = 1.0;
        double betaLo = 0.0;
        double betaHi = std::numeric_limits<double>::infinity();
        double dMin = std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < n; ++j)
            if (j != i) dMin = std::min(dMin, dist2[i * n + j]);
        for (int iter = 0; iter < 50; ++iter) {
            double sum = 0.0;
            for (size_t j = 0; j < n; ++j) {
                row[j] = j == i ? 0.0 : std::exp(-beta * (dist2[i * n + j] - dMin));
                sum += row[j];
            }
            double entropy = 0.0;
            for (size_t j = 0; j < n; ++j) {
                if (row[j] <= 0.0) continue;
                double p = row[j] / sum;
                entropy -= p * std::log(p);
            }
            double diff = entropy - targetH;
            if (std::abs(diff) < 1e-5) break;
            if (diff > 0.0) {
                betaLo = beta;
                beta = std::isinf(betaHi) ? beta * 2.0 : 0.5 * (beta + betaHi);
            } else {
                betaHi = beta;
                beta = betaLo == 0.0 ? beta * 0.5 : 0.5 * (beta + betaLo);
            }
        }
        double sum = 0.0;
        for (size_t j = 0; j < n; ++j) {
            row[j] = j == i ? 0.0 : std::exp(-beta * (dist2[i * n + j] - dMin));
            sum += row[j];
        }
        for (size_t j = 0; j < n; ++j) conditional[i * n + j] = row[j] / sum;
        out.sigma[i] = std::sqrt(0.5 / beta);
    }

    out.p.assign(n * n, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j)
            if (i != j)
                out.p[i * n + j] =
                    (conditional[i * n + j] + conditional[j * n + i]) / (2.0 * static_cast<double>(n));
    return out;
}

TsneResult tsne(const AffinitySet& affinities, int iterations, uint64_t seed) {
    const size_t n = affinities.n;
    if (n < 2) throw DataError("t-sne: need at least 2 points");
    if (affinities.p.size() != n * n) throw DataError("t-sne: malformed affinity matrix");
    if (iterations < 1) throw ConfigError("t-sne: iterations must be positive");

    constexpr double kRate = 200.0;
    constexpr int kExaggerationEnd = 250;
    constexpr double kExaggeration = 12.0;

    Rng rng(seed);
    TsneResult res;
    res.y.assign(n, {0.0, 0.0});
    for (size_t i = 0; i < n; ++i) {
        res.y[i][0] = 1e-4 * rng.normal();
        res.y[i][1] = 1e-4 * rng.normal();
    }
    res.kl.reserve(static_cast<size_t>(iterations));

    std::vector<double> w(n * n, 0.0);
    std::vector<std::array<double, 2>> inc(n, {0.0, 0.0});
    std::vector<std::array<double, 2>> gain(n, {1.0, 1.0});
    std::vector<std::array<double, 2>> grad(n);

    for (int iter = 0; iter < iterations; ++iter) {
        double z = 0.0;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = i + 1; j < n; ++j) {
                double dx = res.y[i][0] - res.y[j][0];
                double dy = res.y[i][1] - res.y[j][1];
                double v = 1.0 / (1.0 + dx * dx + dy * dy);
                w[i * n + j] = v;
                w[j * n + i] = v;
                z += 2.0 * v;
            }

        double kl = 0.0;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                double p = affinities.p[i * n + j];
                if (p <= 0.0) continue;
                double q = std::max(w[i * n + j] / z, 1e-12);
                kl += p * std::log(p / q);
            }
        res.kl.push_back(kl);

        double exaggeration = iter < kExaggerationEnd ? kExaggeration : 1.0;
        double momentum = iter < kExaggerationEnd ? 0.5 : 0.8;
        for (size_t i = 0; i < n; ++i) {
            double gx = 0.0, gy = 0.0;
            for (size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                double p = exaggeration * affinities.p[i * n + j];
                double q = w[i * n + j] / z;
                double mult = 4.0 * (p - q) * w[i * n + j];
                gx += mult * (res.y[i][0] - res.y[j][0]);
                gy += mult * (res.y[i][1] - res.y[j][1]);
            }
            grad[i] = {gx, gy};
        }
        for (size_t i = 0; i < n; ++i)
            for (int c = 0; c < 2; ++c) {
                size_t ci = static_cast<size_t>(c);
                double g = grad[i][ci];
                gain[i][ci] = (g > 0.0) == (inc[i][ci] > 0.0) ? gain[i][ci] * 0.8
                                                              : gain[i][ci] + 0.2;
                gain[i][ci] = std::max(gain[i][ci], 0.01);
                inc[i][ci] = momentum * inc[i][ci] - kRate * gain[i][ci] * g;
                res.y[i][ci] += inc[i][ci];
            }
        double mx = 0.0, my = 0.0;
        for (size_t i = 0; i < n; ++i) {
            mx += res.y[i][0];
            my += res.y[i][1];
        }
        mx /= static_cast<double>(n);
        my /= static_cast<double>(n);
        for (size_t i = 0; i < n; ++i) {
            res.y[i][0] -= mx;
            res.y[i][1] -= my;
            if (!std::isfinite(res.y[i][0]) || !std::isfinite(res.y[i][1]))
                throw NumericError("t-sne: non-finite update at iteration " +
                                   std::to_string(iter));
        }
    }
    return res;
}

std::string embeddingCsv(std::span<const EmbeddingPoint> points) {
    std::string out = "id,x,y,predicted,true,correct\n";
    for (const EmbeddingPoint& pt : points) {
        out += pt.id;
        out += ',';
        out += formatG17(pt.x);
        out += ',';
        out += formatG17(pt.y);
        out += ',';
        out += labelName(pt.predicted);
        out += ',';
        out += labelName(pt.truth);
        out += ',';
        out += pt.correct ? '1' : '0';
        out += '\n';
    }
    return out;
}

std::vector<EmbeddingPoint> parseEmbeddingCsv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw DataError("embedding csv: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "id,x,y,predicted,true,correct")
        throw DataError("embedding csv: unexpected header '" + line + "'");

    auto parseLabelName = [](const std::string& s, size_t rowNo) {
        if (s == "favorable") return kFavorable;
        if (s == "unfavorable") return kUnfavorable;
        throw DataError("embedding csv: row " + std::to_string(rowNo) + ": unknown label '" + s +
                        "'");
    };
    std::vector<EmbeddingPoint> points;
    size_t rowNo = 1;
    while (std::getline(in, line)) {
        ++rowNo;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream row(line);
        while (std::getline(row, cell, ',')) cells.push_back(cell);
        if (cells.size() != 6)
            throw DataError("embedding csv: row " + std::to_string(rowNo) + ": expected 6 cells");
        EmbeddingPoint pt;
        pt.id = cells[0];
        size_t used = 0;
        try {
            pt.x = std::stod(cells[1], &used);
            if (used != cells[1].size()) throw std::invalid_argument("");
            pt.y = std::stod(cells[2], &used);
            if (used != cells[2].size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw DataError("embedding csv: row " + std::to_string(rowNo) +
                            ": malformed coordinate");
        }
        pt.predicted = parseLabelName(cells[3], rowNo);
        pt.truth = parseLabelName(cells[4], rowNo);
        if (cells[5] != "0" && cells[5] != "1")
            throw DataError("embedding csv: row " + std::to_string(rowNo) +
                            ": correct flag must be 0 or 1");
        pt.correct = cells[5] == "1";
        points.push_back(std::move(pt));
    }
    return points;
}

std::string embeddingHtml(std::span<const EmbeddingPoint> points,
                          std::span<const std::string> thumbnails, std::string* warning) {
    if (points.empty()) throw DataError("embedding html: no points");
    if (!thumbnails.empty() && thumbnails.size() != points.size())
        throw ConfigError("embedding html: thumbnail count does not match point count");

    double xLo = points[0].x, xHi = points[0].x, yLo = points[0].y, yHi = points[0].y;
    for (const EmbeddingPoint& pt : points) {
        xLo = std::min(xLo, pt.x);
        xHi = std::max(xHi, pt.x);
        yLo = std::min(yLo, pt.y);
        yHi = std::max(yHi, pt.y);
    }
    double xSpan = xHi > xLo ? xHi - xLo : 1.0;
    double ySpan = yHi > yLo ? yHi - yLo : 1.0;
    const double canvasW = 960.0, canvasH = 720.0, margin = 48.0;

    auto markerClass = [](const EmbeddingPoint& pt) {
        std::string cls = pt.predicted == kUnfavorable ? "unfav" : "fav";
        cls += pt.correct ? " hit" : " miss";
        return cls;
    };

    size_t missing = 0;
    std::string body;
    for (size_t i = 0; i < points.size(); ++i) {
        const EmbeddingPoint& pt = points[i];
        double px = margin + (pt.x - xLo) / xSpan * (canvasW - 2.0 * margin);
        double py = margin + (pt.y - yLo) / ySpan * (canvasH - 2.0 * margin);
        std::string title = pt.id + " | predicted " + labelName(pt.predicted) + ", true " +
                            labelName(pt.truth);
        body += "<div class=\"pt " + markerClass(pt) + "\" style=\"left:" +
                std::to_string(static_cast<int>(px)) + "px;top:" +
                std::to_string(static_cast<int>(py)) + "px\" title=\"" + title + "\" data-id=\"" +
                pt.id + "\" data-x=\"" + formatG17(pt.x) + "\" data-y=\"" + formatG17(pt.y) +
                "\">";
        if (i < thumbnails.size() && !thumbnails[i].empty()) {
            body += "<img src=\"data:image/png;base64," + base64Encode(thumbnails[i]) + "\">";
        } else {
            ++missing;
            body += "<span class=\"ph\"></span>";
        }
        body += "</div>\n";
    }
    if (missing > 0 && warning != nullptr)
        *warning = std::to_string(missing) + " thumbnails missing; placeholders rendered";

    std::string html;
    html += "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\n";
    html += "<title>similarity embedding</title>\n<style>\n";
    html += "body{font-family:sans-serif;background:#fafafa}\n";
    html += ".canvas{position:relative;width:" + std::to_string(static_cast<int>(canvasW)) +
            "px;height:" + std::to_string(static_cast<int>(canvasH)) +
            "px;border:1px solid #ccc;background:#fff}\n";
    html += ".pt{position:absolute;transform:translate(-50%,-50%)}\n";
    html += ".pt img,.pt .ph{display:block;width:32px;height:32px;border:3px solid #000}\n";
    html += ".pt .ph{background:#d8d8d8}\n";
    html += ".fav.hit img,.fav.hit .ph{border-color:#2a9d2a}\n";
    html += ".fav.miss img,.fav.miss .ph{border-color:#e7a400}\n";
    html += ".unfav.hit img,.unfav.hit .ph{border-color:#2456c4}\n";
    html += ".unfav.miss img,.unfav.miss .ph{border-color:#d13030}\n";
    html += ".legend span{display:inline-block;margin-right:16px;padding-left:6px;"
            "border-left:12px solid #000}\n";
    html += ".legend .c1{border-color:#2a9d2a}.legend .c2{border-color:#e7a400}"
            ".legend .c3{border-color:#2456c4}.legend .c4{border-color:#d13030}\n";
    html += "</style></head><body>\n<h1>similarity embedding</h1>\n";
    html += "<p class=\"legend\"><span class=\"c1\">favorable, correct</span>"
            "<span class=\"c2\">favorable, wrong</span>"
            "<span class=\"c3\">unfavorable, correct</span>"
            "<span class=\"c4\">unfavorable, wrong</span></p>\n";
    html += "<div class=\"canvas\">\n" + body + "</div>\n</body></html>\n";
    return html;
}

}  // namespace dtmx
