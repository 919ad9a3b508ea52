#include <doctest.h>

#include <cmath>

#include "avfp/error.hpp"
#include "avfp/evaluation.hpp"
#include "avfp/training.hpp"
#include "support.hpp"

using namespace avfp;

TEST_CASE("rmse examples") {
    CHECK(rmse({{1, {4, 4}}, {2, {7, 7}}}) == 0.0);
    CHECK(rmse({{1, {14, 4}}, {2, {17, 7}}, {3, {10, 0}}}) == doctest::Approx(10.0).epsilon(1e-15));
    CHECK(rmse({{1, {5, 0}}, {2, {0, 5}}}) == 5.0);
    CHECK_THROWS_AS(rmse({}), DataError);
}

TEST_CASE("rmse is permutation invariant and scales with the residuals") {
    CounterRng rng(1, 1);
    PredictionSet a, b, scaled;
    std::vector<std::pair<double, double>> pairs;
    for (int i = 0; i < 30; ++i) pairs.emplace_back(rng.uniform(0, 150), rng.uniform(0, 150));
    for (int i = 0; i < 30; ++i) {
        a[i] = {pairs[i].first, pairs[i].second};
        b[29 - i + 100] = {pairs[i].first, pairs[i].second};
        scaled[i] = {3.0 * pairs[i].first, 3.0 * pairs[i].second};
    }
    CHECK(rmse(a) == doctest::Approx(rmse(b)).epsilon(1e-14));
    CHECK(rmse(scaled) == doctest::Approx(3.0 * rmse(a)).epsilon(1e-14));
}

TEST_CASE("prediction modes parse") {
    CHECK(parse_prediction_mode("supervised") == PredictionMode::supervised);
    CHECK(parse_prediction_mode("health_index") == PredictionMode::health_index);
    CHECK_THROWS_AS(parse_prediction_mode("other"), ConfigError);
}

namespace {

struct Data {
    std::map<int, double> truth;
    Dataset raw_train = test::tiny_dataset(8, 20, 30, 1);
    Dataset raw_test = test::tiny_dataset(5, 20, 30, 2, Split::test, &truth);
    PreparedData data = prepare_data(raw_train, &raw_test, &truth);
    NetworkSpec spec = network_for(data, test::tiny_network());
};

}  // namespace

TEST_CASE("constant rul head predicts its constant everywhere") {
    Data d;
    ModelParams p = ModelParams::initialize(d.spec, 3);
    for (const ParamId id : p.group(ParamGroup::rho)) p.value(id) = Tensor::zeros(p.value(id).shape());
    // softplus(125 b) = c
    const double c = 42.0;
    p["rul_head.out.b"] = Tensor::vector({(c + std::log(-std::expm1(-c))) / d.spec.rul_scale});
    const PredictionSet preds = predict_rul(p, d.spec, *d.data.test, d.data.test_truth, PredictionMode::supervised);
    CHECK(preds.size() == 5);
    const double first = preds.begin()->second.predicted;
    CHECK(first == doctest::Approx(c).epsilon(1e-12));
    for (const auto& [id, pr] : preds) {
        CHECK(pr.predicted == first);
        CHECK(pr.truth == d.truth.at(id));
    }
}

TEST_CASE("supervised predictions are deterministic and order independent") {
    Data d;
    const ModelParams p = ModelParams::initialize(d.spec, 4);
    const PredictionSet a = predict_rul(p, d.spec, *d.data.test, d.data.test_truth, PredictionMode::supervised);
    CHECK(predict_rul(p, d.spec, *d.data.test, d.data.test_truth, PredictionMode::supervised) == a);

    // Same units under reversed ids, mapped back.
    Dataset reversed;
    reversed.split = Split::test;
    std::map<int, double> rtruth;
    for (const auto& [id, rows] : d.data.test->units) {
        reversed.units.emplace(100 - id, rows);
        rtruth[100 - id] = d.data.test_truth.at(id);
    }
    const PredictionSet b = predict_rul(p, d.spec, reversed, rtruth, PredictionMode::supervised);
    for (const auto& [id, pr] : a) CHECK(b.at(100 - id) == pr);
    for (const auto& [id, pr] : a) CHECK(pr.predicted >= 0.0);
}

TEST_CASE("health index retrieves an exact prefix copy") {
    const HealthIndexModel hi = HealthIndexModel::from_curves(
        {{1, {0.0, 0.1, 0.3, 0.6, 1.0, 1.5, 2.1}}, {2, {0.0, 0.2, 0.2, 0.5, 0.9}}}, 125.0);
    CHECK(hi.match({0.0, 0.1, 0.3}) == 4.0);
    CHECK(hi.match({0.0, 0.2, 0.2, 0.5}) == 1.0);
    const HealthIndexModel capped = HealthIndexModel::from_curves({{1, std::vector<double>(300, 0.0)}}, 125.0);
    CHECK(capped.match({0.0}) <= 125.0);
    CHECK_THROWS_AS(hi.match({}), DataError);
}

TEST_CASE("health index on a trained model retrieves prefixes of training units") {
    Data d;
    const ModelParams p = ModelParams::initialize(d.spec, 5);
    const HealthIndexModel hi = HealthIndexModel::fit(p, d.spec, d.data.train);
    CHECK(hi.curves().size() == d.data.train.units.size());
    Dataset prefixes;
    prefixes.split = Split::test;
    std::map<int, double> truth;
    for (const auto& [id, rows] : d.data.train.units) {
        const std::size_t cut = rows.size() / 2;
        prefixes.units.emplace(id, std::vector<TrajectoryRecord>(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(cut)));
        truth[id] = static_cast<double>(rows.size() - cut);
    }
    const PredictionSet preds = predict_rul(p, d.spec, prefixes, truth, PredictionMode::health_index, &hi);
    for (const auto& [id, pr] : preds) CHECK(pr.predicted == std::min(pr.truth, 125.0));
    CHECK_THROWS_AS(predict_rul(p, d.spec, prefixes, truth, PredictionMode::health_index), ConfigError);
}

TEST_CASE("prediction errors") {
    Data d;
    const ModelParams p = ModelParams::initialize(d.spec, 6);
    std::map<int, double> partial = d.data.test_truth;
    partial.erase(partial.begin());
    CHECK_THROWS_AS(predict_rul(p, d.spec, *d.data.test, partial, PredictionMode::supervised), DataError);
    CHECK_THROWS_AS(predict_rul(p, d.spec, d.raw_test, d.truth, PredictionMode::supervised), DataError);
}
