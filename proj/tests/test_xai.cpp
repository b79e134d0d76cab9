#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "dtmx/common.hpp"
#include "dtmx/network.hpp"
#include "dtmx/xai.hpp"

using namespace dtmx;

namespace {

Tensor randomVolume(std::array<int64_t, 3> ext, uint64_t seed) {
    Tensor t = Tensor::zeros({ext[0], ext[1], ext[2]});
    Rng rng(seed);
    for (int64_t i = 0; i < t.numel(); ++i)
        t.data()[i] = static_cast<float>(rng.normal());
    return t;
}

TransformationModel ciMember(std::array<int64_t, 3> ext, uint64_t seed,
                             Variant variant = Variant::CI) {
    TransformationModel m;
    m.variant = variant;
    m.net = NetworkSpec::defaultSpec(ext);
    m.params = glorotInit(m.net, seed);
    return m;
}

double mapMax(const Tensor& t) {
    float peak = 0.0f;
    for (int64_t i = 0; i < t.numel(); ++i) peak = std::max(peak, t.data()[i]);
    return peak;
}

}  // namespace

TEST_CASE("gradcam factorization matches finite differences on cam activations") {
    std::array<int64_t, 3> ext{10, 10, 6};
    TransformationModel m = ciMember(ext, 42);
    Tensor vol = randomVolume(ext, 7);

    NetworkEval eval(m.net);
    NetTape tape;
    double theta = eval.forwardScalar(m.params, vol, &tape);
    double p0 = stableSigmoid(theta);
    NetGrads grads = eval.backward(m.params, tape, 1.0);
    const Tensor& a = tape.camActivation();
    const Tensor& da = grads.cam;
    int cam = m.net.camLayer();

    for (Label k : {kFavorable, kUnfavorable}) {
        double sk = k == kFavorable ? 1.0 : -1.0;
        Rng rng(k + 1);
        int checked = 0;
        int64_t tried = 0;
        while (checked < 20 && tried < 400) {
            ++tried;
            int64_t v = static_cast<int64_t>(rng.below(static_cast<uint64_t>(a.numel())));
            double analytic = sk * p0 * (1.0 - p0) * static_cast<double>(da.data()[v]);
            if (std::abs(analytic) < 1e-4) continue;

            const double eps = 5e-3;
            Tensor bumped = a;
            bumped.data()[v] = a.data()[v] + static_cast<float>(eps);
            double hPlus = eval.forwardFrom(m.params, cam, bumped).data()[0];
            bumped.data()[v] = a.data()[v] - static_cast<float>(eps);
            double hMinus = eval.forwardFrom(m.params, cam, bumped).data()[0];
            double pPlus = k == kFavorable ? stableSigmoid(hPlus) : 1.0 - stableSigmoid(hPlus);
            double pMinus = k == kFavorable ? stableSigmoid(hMinus) : 1.0 - stableSigmoid(hMinus);
            double numeric = (pPlus - pMinus) / (2.0 * eps);
            CHECK(std::abs(analytic - numeric) <= 1e-3 * std::abs(analytic));
            ++checked;
        }
        CHECK(checked == 20);
    }
}

TEST_CASE("gradcam output contract") {
    std::array<int64_t, 3> ext{10, 10, 6};
    TransformationModel m = ciMember(ext, 5);
    Tensor vol = randomVolume(ext, 11);

    ChannelImportance imp;
    ExplanationMap3D map = gradcam(m, vol, nullptr, kUnfavorable, &imp);
    CHECK(map.method == "gradcam");
    CHECK(map.k == kUnfavorable);
    CHECK(map.weights == std::vector<double>{1.0});
    CHECK(map.values.shape() == vol.shape());
    CHECK_NOTHROW(map.validate());
    CHECK(mapMax(map.values) > 0.0);
    CHECK(imp.alpha.size() == 16);
    CHECK(imp.poolCount == 5 * 5 * 3);

    SUBCASE("predicted-class sign flips the channel weights exactly") {
        ChannelImportance impFav;
        gradcam(m, vol, nullptr, kFavorable, &impFav);
        REQUIRE(impFav.alpha.size() == imp.alpha.size());
        for (size_t l = 0; l < imp.alpha.size(); ++l)
            CHECK(impFav.alpha[l] == doctest::Approx(-imp.alpha[l]).epsilon(1e-12));
    }

    SUBCASE("deterministic across calls") {
        ExplanationMap3D again = gradcam(m, vol, nullptr, kUnfavorable);
        CHECK(std::memcmp(again.values.data(), map.values.data(),
                          static_cast<size_t>(map.values.numel()) * 4) == 0);
    }

    SUBCASE("zero downstream weights kill the map") {
        TransformationModel flat = m;
        // zero the dense head so theta is constant in the activations
        flat.params.weight.back() = Tensor::zeros(flat.params.weight.back().shape());
        ExplanationMap3D dead = gradcam(flat, vol, nullptr, kUnfavorable);
        for (int64_t i = 0; i < dead.values.numel(); ++i)
            CHECK(dead.values.data()[i] == 0.0f);
    }
}

TEST_CASE("gradcam is shift-invariant up to normalization") {
    std::array<int64_t, 3> ext{10, 10, 6};
    TransformationModel ci = ciMember(ext, 23);
    TransformationModel cils = ci;
    cils.variant = Variant::CILS;
    cils.beta = {0.8, -1.1};
    std::vector<double> x{1.5, 0.25};
    Tensor vol = randomVolume(ext, 3);

    ExplanationMap3D a = gradcam(ci, vol, nullptr, kUnfavorable);
    ExplanationMap3D b = gradcam(cils, vol, &x, kUnfavorable);
    double peakA = mapMax(a.values);
    double peakB = mapMax(b.values);
    REQUIRE(peakA > 0.0);
    REQUIRE(peakB > 0.0);
    for (int64_t i = 0; i < a.values.numel(); ++i)
        CHECK(std::abs(a.values.data()[i] / peakA - b.values.data()[i] / peakB) <= 1e-6);
}

TEST_CASE("gradcam rejects unusable inputs") {
    std::array<int64_t, 3> ext{10, 10, 6};
    Tensor vol = randomVolume(ext, 1);

    TransformationModel si;
    si.variant = Variant::SI;
    CHECK_THROWS_AS(gradcam(si, vol, nullptr, kUnfavorable), ConfigError);

    TransformationModel cils = ciMember(ext, 2, Variant::CILS);
    cils.beta = {1.0};
    CHECK_THROWS_AS(gradcam(cils, vol, nullptr, kUnfavorable), DataError);
    std::vector<double> narrow{1.0, 2.0};
    CHECK_THROWS_AS(gradcam(cils, vol, &narrow, kUnfavorable), DataError);

    TransformationModel ci = ciMember(ext, 3);
    Tensor wrong = randomVolume({8, 8, 6}, 1);
    CHECK_THROWS_AS(gradcam(ci, wrong, nullptr, kUnfavorable), DataError);
}

TEST_CASE("occlusion grid tiles the paper extents exactly") {
    OcclusionConfig cfg;
    std::array<int64_t, 3> ext{128, 128, 28};
    std::vector<std::array<int64_t, 3>> origins = occlusionOrigins(ext, cfg);
    CHECK(origins.size() == 1296);

    std::array<int64_t, 3> last{0, 0, 0};
    for (const auto& o : origins)
        for (size_t a = 0; a < 3; ++a) last[a] = std::max(last[a], o[a]);
    CHECK(last == std::array<int64_t, 3>{110, 110, 24});

    std::vector<int32_t> cover(static_cast<size_t>(128 * 128 * 28), 0);
    for (const auto& o : origins)
        for (int64_t d = o[0]; d < o[0] + cfg.window[0]; ++d)
            for (int64_t h = o[1]; h < o[1] + cfg.window[1]; ++h)
                for (int64_t w = o[2]; w < o[2] + cfg.window[2]; ++w)
                    ++cover[static_cast<size_t>((d * 128 + h) * 28 + w)];
    int32_t lo = cover[0], hi = cover[0];
    for (int32_t c : cover) {
        lo = std::min(lo, c);
        hi = std::max(hi, c);
    }
    CHECK(lo >= 1);
    CHECK(hi <= 8);
}

TEST_CASE("occlusion grid clamps a border window when strides do not tile") {
    OcclusionConfig cfg;
    cfg.window = {5, 5, 2};
    cfg.stride = {4, 4, 2};
    std::array<int64_t, 3> ext{13, 13, 5};
    std::vector<std::array<int64_t, 3>> origins = occlusionOrigins(ext, cfg);
    // axes 0/1 tile exactly (0,4,8); axis 2 needs the clamped extra (0,2,3)
    CHECK(origins.size() == 3 * 3 * 3);
    bool sawClamp = false;
    for (const auto& o : origins) {
        CHECK(o[0] + cfg.window[0] <= ext[0]);
        CHECK(o[2] + cfg.window[2] <= ext[2]);
        if (o[2] == 3) sawClamp = true;
    }
    CHECK(sawClamp);

    cfg.window = {5, 5, 2};
    cfg.stride = {3, 3, 1};
    CHECK(occlusionOrigins({32, 32, 8}, cfg).size() == 700);

    cfg.window = {40, 5, 2};
    CHECK_THROWS_AS(occlusionOrigins({32, 32, 8}, cfg), ConfigError);
}

TEST_CASE("occlusion finds a planted blob") {
    std::array<int64_t, 3> ext{12, 12, 6};
    TransformationModel m;
    m.variant = Variant::CI;
    m.net = NetworkSpec::defaultSpec(ext);
    m.params = glorotInit(m.net, 0);
    for (Tensor& w : m.params.weight)
        if (!w.empty()) w = Tensor::zeros(w.shape());
    // pass the volume through channel 0 of both convolutions, then weight the
    // pooled mean negatively so a bright blob pushes toward unfavorable
    const int64_t center = (1 * 3 + 1) * 3 + 1;  // middle of a 3x3x3 kernel block
    m.params.weight[0].data()[center] = 1.0f;      // conv1, out 0 <- in 0
    m.params.weight[3].data()[center] = 1.0f;      // cam conv, out 0 <- in 0
    m.params.weight.back().data()[0] = -4.0f;      // dense on gap channel 0

    Tensor vol = Tensor::zeros({12, 12, 6});
    std::vector<bool> inBlob(static_cast<size_t>(vol.numel()), false);
    for (int64_t d = 3; d <= 5; ++d)
        for (int64_t h = 3; h <= 5; ++h)
            for (int64_t w = 1; w <= 3; ++w) {
                vol.at3(d, h, w) = 3.0f;
                inBlob[static_cast<size_t>((d * 12 + h) * 6 + w)] = true;
            }

    OcclusionConfig cfg;
    cfg.window = {4, 4, 2};
    cfg.stride = {2, 2, 1};
    ExplanationMap3D map = occlusion(m, vol, nullptr, cfg, kUnfavorable);
    CHECK(map.method == "occlusion");
    CHECK_NOTHROW(map.validate());

    double inSum = 0.0, outSum = 0.0;
    int64_t inN = 0, outN = 0;
    for (int64_t i = 0; i < map.values.numel(); ++i) {
        if (inBlob[static_cast<size_t>(i)]) {
            inSum += map.values.data()[i];
            ++inN;
        } else {
            outSum += map.values.data()[i];
            ++outN;
        }
    }
    CHECK(inSum > 0.0);
    CHECK(inSum / static_cast<double>(inN) > 2.0 * (outSum / static_cast<double>(outN)));

    SUBCASE("parallel evaluation is bit-identical") {
        ExplanationMap3D par = occlusion(m, vol, nullptr, cfg, kUnfavorable, 3);
        CHECK(std::memcmp(par.values.data(), map.values.data(),
                          static_cast<size_t>(map.values.numel()) * 4) == 0);
    }

    SUBCASE("a model blind to the image yields a zero map") {
        TransformationModel blind = m;
        for (Tensor& w : blind.params.weight)
            if (!w.empty()) w = Tensor::zeros(w.shape());
        ExplanationMap3D dead = occlusion(blind, vol, nullptr, cfg, kUnfavorable);
        for (int64_t i = 0; i < dead.values.numel(); ++i)
            CHECK(dead.values.data()[i] == 0.0f);
    }
}

TEST_CASE("ensemble maps are weighted voxel averages") {
    std::array<int64_t, 3> ext{6, 6, 4};
    auto constantMap = [&](float v) {
        ExplanationMap3D m;
        m.values = Tensor::full({ext[0], ext[1], ext[2]}, v);
        m.method = "gradcam";
        m.k = kUnfavorable;
        m.weights = {1.0};
        return m;
    };

    SUBCASE("identity and vertex") {
        std::vector<ExplanationMap3D> maps{constantMap(0.5f)};
        std::vector<double> w{1.0};
        ExplanationMap3D out = ensembleMap(maps, w);
        CHECK(out.values.data()[0] == 0.5f);

        std::vector<ExplanationMap3D> three{constantMap(0.1f), constantMap(0.9f),
                                            constantMap(0.4f)};
        std::vector<double> vertex{0.0, 1.0, 0.0};
        CHECK(ensembleMap(three, vertex).values.data()[5] == 0.9f);
    }

    SUBCASE("random maps match direct recomputation") {
        Rng rng(9);
        std::vector<ExplanationMap3D> maps;
        for (int m = 0; m < 4; ++m) {
            ExplanationMap3D e = constantMap(0.0f);
            for (int64_t i = 0; i < e.values.numel(); ++i)
                e.values.data()[i] = static_cast<float>(rng.uniform01());
            maps.push_back(std::move(e));
        }
        std::vector<double> w{0.1, 0.2, 0.3, 0.4};
        ExplanationMap3D out = ensembleMap(maps, w);
        CHECK(out.weights == w);
        for (int64_t i = 0; i < out.values.numel(); ++i) {
            double want = 0.0;
            for (size_t m = 0; m < 4; ++m) want += w[m] * maps[m].values.data()[i];
            CHECK(std::abs(out.values.data()[i] - want) <= 1e-7);
        }
    }

    SUBCASE("mismatches are rejected") {
        std::vector<ExplanationMap3D> maps{constantMap(0.2f), constantMap(0.3f)};
        std::vector<double> w{0.5};
        CHECK_THROWS_AS(ensembleMap(maps, w), ConfigError);
        std::vector<double> w2{0.5, 0.5};
        maps[1].method = "occlusion";
        CHECK_THROWS_AS(ensembleMap(maps, w2), DataError);
        maps[1].method = "gradcam";
        maps[1].k = kFavorable;
        CHECK_THROWS_AS(ensembleMap(maps, w2), DataError);
        maps[1].k = kUnfavorable;
        maps[1].values = Tensor::zeros({3, 3, 3});
        CHECK_THROWS_AS(ensembleMap(maps, w2), DataError);
        CHECK_THROWS_AS(ensembleMap(std::vector<ExplanationMap3D>{}, std::vector<double>{}),
                        DataError);
    }
}

TEST_CASE("axial projection normalizes and averages along the slice axis") {
    Tensor vol = randomVolume({5, 4, 3}, 2);
    ExplanationMap3D map;
    map.method = "gradcam";
    map.k = kUnfavorable;

    SUBCASE("constant positive map projects to all-ones heat") {
        map.values = Tensor::full({5, 4, 3}, 2.5f);
        Projection2D p = axialProjection(map, vol);
        CHECK(p.rows == 5);
        CHECK(p.cols == 4);
        for (double h : p.heat) CHECK(h == 1.0);
        for (int64_t i = 0; i < 5; ++i)
            for (int64_t j = 0; j < 4; ++j) {
                double want = (vol.at3(i, j, 0) + vol.at3(i, j, 1) + vol.at3(i, j, 2)) / 3.0;
                CHECK(std::abs(p.baseAt(i, j) - want) <= 1e-6);
            }
    }

    SUBCASE("single hot voxel spreads as 1/depth") {
        map.values = Tensor::zeros({5, 4, 3});
        map.values.at3(2, 1, 0) = 7.0f;
        Projection2D p = axialProjection(map, vol);
        CHECK(p.heatAt(2, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
        CHECK(p.heatAt(0, 0) == 0.0);
    }

    SUBCASE("all-zero map stays zero") {
        map.values = Tensor::zeros({5, 4, 3});
        Projection2D p = axialProjection(map, vol);
        for (double h : p.heat) CHECK(h == 0.0);
    }

    SUBCASE("scaling the map does not change the projection") {
        map.values = Tensor::zeros({5, 4, 3});
        Rng rng(4);
        for (int64_t i = 0; i < map.values.numel(); ++i)
            map.values.data()[i] = static_cast<float>(rng.uniform01());
        Projection2D p = axialProjection(map, vol);
        ExplanationMap3D scaled = map;
        for (int64_t i = 0; i < scaled.values.numel(); ++i) scaled.values.data()[i] *= 8.0f;
        Projection2D q = axialProjection(scaled, vol);
        for (size_t i = 0; i < p.heat.size(); ++i)
            CHECK(p.heat[i] == doctest::Approx(q.heat[i]).epsilon(1e-9));
    }

    SUBCASE("extent mismatch is rejected") {
        map.values = Tensor::zeros({4, 4, 3});
        CHECK_THROWS_AS(axialProjection(map, vol), DataError);
    }
}

TEST_CASE("class averages are pixelwise means of projections") {
    auto constantProj = [](double heat, double base) {
        Projection2D p;
        p.rows = 3;
        p.cols = 2;
        p.heat.assign(6, heat);
        p.base.assign(6, base);
        return p;
    };

    std::vector<Projection2D> one{constantProj(0.3, -1.0)};
    Projection2D same = classAverageMap(one);
    CHECK(same.heat == one[0].heat);
    CHECK(same.base == one[0].base);

    std::vector<Projection2D> two{constantProj(0.2, 0.0), constantProj(0.6, 1.0)};
    Projection2D avg = classAverageMap(two);
    for (double h : avg.heat) CHECK(h == doctest::Approx(0.4).epsilon(1e-15));
    for (double b : avg.base) CHECK(b == doctest::Approx(0.5).epsilon(1e-15));

    Rng rng(11);
    std::vector<Projection2D> group;
    for (int g = 0; g < 7; ++g) {
        Projection2D p = constantProj(0.0, 0.0);
        for (size_t i = 0; i < p.heat.size(); ++i) {
            p.heat[i] = rng.uniform01();
            p.base[i] = rng.normal();
        }
        group.push_back(std::move(p));
    }
    Projection2D mean = classAverageMap(group);
    for (size_t i = 0; i < mean.heat.size(); ++i) {
        double hWant = 0.0;
        for (const Projection2D& p : group) hWant += p.heat[i];
        CHECK(std::abs(mean.heat[i] - hWant / 7.0) <= 1e-7);
    }

    CHECK_THROWS_AS(classAverageMap(std::vector<Projection2D>{}), DataError);
    std::vector<Projection2D> bad{constantProj(0.1, 0.0), Projection2D{}};
    CHECK_THROWS_AS(classAverageMap(bad), DataError);
}
