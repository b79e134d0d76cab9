#include <cmath>
#include <vector>

#include "doctest.h"
#include "dtmx/common.hpp"
#include "dtmx/model.hpp"
#include "dtmx/network.hpp"

using namespace dtmx;

TEST_CASE("outcome probabilities follow the standard logistic") {
    OutcomeDistribution mid = outcomeProbabilities(0.0);
    CHECK(mid.h == 0.0);
    CHECK(mid.p0 == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(mid.p1 == doctest::Approx(0.5).epsilon(1e-15));

    // sigma(log(a/b)) = a/(a+b)
    double h = std::log(332.0 / 75.0);
    OutcomeDistribution d = outcomeProbabilities(h);
    CHECK(d.p0 == doctest::Approx(332.0 / 407.0).epsilon(1e-14));
    CHECK(d.p1 == doctest::Approx(75.0 / 407.0).epsilon(1e-14));
    CHECK(h == doctest::Approx(1.4876).epsilon(1e-4));
}

TEST_CASE("p0 and p1 always sum to one exactly") {
    Rng rng(404);
    for (int i = 0; i < 2000; ++i) {
        OutcomeDistribution d = outcomeProbabilities(rng.uniform(-40.0, 40.0));
        CHECK(d.p0 + d.p1 == 1.0);
        CHECK(d.p0 >= 0.0);
        CHECK(d.p1 >= 0.0);
    }
}

TEST_CASE("extreme transformation values stay finite") {
    OutcomeDistribution hi = outcomeProbabilities(800.0);
    CHECK(hi.p0 == 1.0);
    CHECK(hi.p1 == 0.0);
    OutcomeDistribution lo = outcomeProbabilities(-800.0);
    CHECK(lo.p0 == 0.0);
    CHECK(lo.p1 == 1.0);
    CHECK_THROWS_AS(outcomeProbabilities(std::nan("")), NumericError);
    CHECK_THROWS_AS(outcomeProbabilities(std::numeric_limits<double>::infinity()), NumericError);
}

TEST_CASE("mean negative log-likelihood") {
    std::vector<double> p0{0.8, 0.3};
    std::vector<Label> labels{kFavorable, kUnfavorable};
    double want = -(std::log(0.8) + std::log(0.7)) / 2.0;
    CHECK(nll(p0, labels) == doctest::Approx(want).epsilon(1e-14));

    SUBCASE("null model on the 332/75 cohort") {
        double prop = 332.0 / 407.0;
        std::vector<double> flat(407, prop);
        std::vector<Label> y(407, kFavorable);
        for (int i = 0; i < 75; ++i) y[static_cast<size_t>(i)] = kUnfavorable;
        double want407 = -(332.0 * std::log(prop) + 75.0 * std::log(1.0 - prop)) / 407.0;
        CHECK(nll(flat, y) == doctest::Approx(want407).epsilon(1e-14));
        CHECK(nll(flat, y) == doctest::Approx(0.478).epsilon(0.002));
    }

    SUBCASE("probabilities are clamped before the log") {
        std::vector<double> sure{1.0};
        std::vector<Label> unfav{kUnfavorable};
        CHECK(nll(sure, unfav) == doctest::Approx(-std::log(1e-12)).epsilon(1e-12));
    }

    SUBCASE("degenerate inputs") {
        CHECK_THROWS_AS(nll({}, {}), DataError);
        std::vector<double> one{0.5};
        std::vector<Label> two{kFavorable, kUnfavorable};
        CHECK_THROWS_AS(nll(one, two), DataError);
    }
}

TEST_CASE("variant names round-trip") {
    CHECK(variantName(Variant::SI) == "SI");
    CHECK(variantName(Variant::SILS) == "SI-LS");
    CHECK(variantName(Variant::CI) == "CI");
    CHECK(variantName(Variant::CILS) == "CI-LS");
    for (Variant v : {Variant::SI, Variant::SILS, Variant::CI, Variant::CILS})
        CHECK(parseVariant(variantName(v)) == v);
    CHECK_THROWS_AS(parseVariant("CI_LS"), ConfigError);
    CHECK_THROWS_AS(parseVariant(""), ConfigError);
}

TEST_CASE("variant capability flags") {
    CHECK_FALSE(variantUsesImage(Variant::SI));
    CHECK_FALSE(variantUsesImage(Variant::SILS));
    CHECK(variantUsesImage(Variant::CI));
    CHECK(variantUsesImage(Variant::CILS));
    CHECK_FALSE(variantUsesShift(Variant::SI));
    CHECK(variantUsesShift(Variant::SILS));
    CHECK_FALSE(variantUsesShift(Variant::CI));
    CHECK(variantUsesShift(Variant::CILS));
}

TEST_CASE("transformation values per variant") {
    std::vector<double> x{1.5, -2.0, 0.5};

    SUBCASE("SI is the bare intercept") {
        TransformationModel m;
        m.variant = Variant::SI;
        m.theta0 = 1.25;
        CHECK(m.transformationValue(nullptr, nullptr) == 1.25);
        CHECK(m.transformationValue(nullptr, &x) == 1.25);
    }

    SUBCASE("SI-LS adds the linear shift") {
        TransformationModel m;
        m.variant = Variant::SILS;
        m.theta0 = 0.5;
        m.beta = {2.0, 1.0, -4.0};
        double want = 0.5 + 2.0 * 1.5 + 1.0 * -2.0 + -4.0 * 0.5;
        CHECK(m.transformationValue(nullptr, &x) == doctest::Approx(want).epsilon(1e-15));
        CHECK_THROWS_AS(m.transformationValue(nullptr, nullptr), DataError);
        std::vector<double> narrow{1.0};
        CHECK_THROWS_AS(m.transformationValue(nullptr, &narrow), DataError);
    }

    SUBCASE("CI equals the network output") {
        TransformationModel m;
        m.variant = Variant::CI;
        m.net = NetworkSpec::defaultSpec({6, 6, 4});
        m.params = glorotInit(m.net, 31);
        Tensor vol = Tensor::zeros({6, 6, 4});
        Rng rng(99);
        for (float& v : vol.values()) v = static_cast<float>(rng.normal());
        NetworkEval eval(m.net);
        double want = eval.forwardScalar(m.params, vol);
        CHECK(m.transformationValue(&vol, nullptr) == doctest::Approx(want).epsilon(1e-12));
        CHECK(m.transformationValue(eval, &vol, nullptr) == want);
        CHECK_THROWS_AS(m.transformationValue(nullptr, nullptr), DataError);
    }

    SUBCASE("CI-LS is network plus shift") {
        TransformationModel m;
        m.variant = Variant::CILS;
        m.net = NetworkSpec::defaultSpec({6, 6, 4});
        m.params = glorotInit(m.net, 32);
        m.beta = {0.25, 0.5, -1.0};
        Tensor vol = Tensor::zeros({6, 6, 4});
        Rng rng(100);
        for (float& v : vol.values()) v = static_cast<float>(rng.normal());
        NetworkEval eval(m.net);
        double img = eval.forwardScalar(m.params, vol);
        double shift = 0.25 * 1.5 + 0.5 * -2.0 + -1.0 * 0.5;
        CHECK(m.transformationValue(&vol, &x) == doctest::Approx(img + shift).epsilon(1e-12));
        CHECK_THROWS_AS(m.transformationValue(&vol, nullptr), DataError);
        CHECK_THROWS_AS(m.transformationValue(nullptr, &x), DataError);
    }
}

TEST_CASE("coefficient report") {
    SUBCASE("odds ratios and point collapse") {
        CoefficientReport rep = coefficientReport({0.7, -0.2}, {}, {"age", "sex:male"});
        REQUIRE(rep.entries.size() == 2);
        CHECK(rep.entries[0].name == "age");
        CHECK(rep.entries[0].oddsRatio == doctest::Approx(std::exp(0.7)).epsilon(1e-14));
        CHECK(rep.entries[0].ciLow == 0.7);
        CHECK(rep.entries[0].ciHigh == 0.7);
        CHECK(rep.entries[1].oddsRatio == doctest::Approx(std::exp(-0.2)).epsilon(1e-14));
    }

    SUBCASE("interval from draws matches a direct percentile") {
        Rng rng(7);
        std::vector<std::vector<double>> draws;
        std::vector<double> col;
        for (int r = 0; r < 200; ++r) {
            double v = rng.normal();
            draws.push_back({v});
            col.push_back(v);
        }
        CoefficientReport rep = coefficientReport({0.0}, draws, {"x"});
        CHECK(rep.entries[0].ciLow == doctest::Approx(percentile(col, 0.025)).epsilon(1e-12));
        CHECK(rep.entries[0].ciHigh == doctest::Approx(percentile(col, 0.975)).epsilon(1e-12));
        CHECK(rep.entries[0].ciLow < rep.entries[0].ciHigh);
    }

    SUBCASE("csv layout") {
        CoefficientReport rep = coefficientReport({0.5}, {}, {"nihss"}, {"per 1 SD"});
        std::string csv = rep.toCsv();
        CHECK(csv.rfind("feature,beta,odds_ratio,ci_low,ci_high", 0) == 0);
        CHECK(csv.find("nihss") != std::string::npos);
        CHECK(rep.entries[0].note == "per 1 SD");
    }

    SUBCASE("mismatched widths are rejected") {
        CHECK_THROWS_AS(coefficientReport({0.1, 0.2}, {}, {"only"}), DataError);
        CHECK_THROWS_AS(coefficientReport({0.1}, {{0.1, 0.2}}, {"x"}), DataError);
    }
}
