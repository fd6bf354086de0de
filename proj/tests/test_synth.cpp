#include <doctest.h>

#include <cmath>

#include "oodkit/synth.hpp"
#include "oracles.hpp"

using namespace oodkit;

namespace {

double mean_distance(const Matrix<double>& m, std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) s += (m(a, j) - m(b, j)) * (m(a, j) - m(b, j));
    return std::sqrt(s);
}

ScenarioConfig small_config(std::uint64_t seed = 0) {
    ScenarioConfig cfg;
    cfg.d = 2;
    cfg.classes = 3;
    cfg.ood_clusters = 2;
    cfg.n_per_cluster = 10;
    cfg.min_mean_separation = 5.0;
    cfg.seed = seed;
    return cfg;
}

const EvalCell& cell(const EvalReport& r, const std::string& method, const std::string& split) {
    for (const auto& c : r.cells)
        if (c.method == method && c.ood_split == split) return c;
    throw std::runtime_error("no cell " + method + "/" + split);
}

}  // namespace

TEST_CASE("means sit on the sphere and respect the separation") {
    const auto s = generate_scenario(small_config());
    REQUIRE(s.means.rows() == 5);
    for (std::size_t a = 0; a < 5; ++a) {
        double norm = 0.0;
        for (double v : s.means.row(a)) norm += v * v;
        CHECK(std::sqrt(norm) == doctest::Approx(10.0));
        for (std::size_t b = a + 1; b < 5; ++b) CHECK(mean_distance(s.means, a, b) >= 5.0);
    }
}

TEST_CASE("split shapes and labels") {
    const auto s = generate_scenario(small_config());
    CHECK(s.id_train.n() == 30);
    CHECK(s.id_test.n() == 30);
    CHECK(s.ood_concentrated.n() == 20);
    CHECK(s.ood_scattered.n() == 20);
    REQUIRE(s.id_train.labels);
    CHECK(s.id_train.labels->n_classes == 3);
    for (std::size_t i = 0; i < 30; ++i) CHECK(s.id_train.labels->values[i] == static_cast<std::int64_t>(i / 10));
    CHECK_FALSE(s.ood_scattered.labels);
    CHECK(s.ood_scattered.role == Role::OodTest);
}

TEST_CASE("generation is deterministic in the seed") {
    const auto a = generate_scenario(small_config(4));
    const auto b = generate_scenario(small_config(4));
    const auto c = generate_scenario(small_config(5));
    CHECK(a.id_train.features == b.id_train.features);
    CHECK(a.ood_scattered.features == b.ood_scattered.features);
    CHECK(a.means == b.means);
    CHECK_FALSE(a.id_train.features == c.id_train.features);
}

TEST_CASE("impossible separation is reported") {
    auto cfg = small_config();
    cfg.min_mean_separation = 25.0;  // more than the sphere's diameter
    cfg.sigma_id = 0.5;
    CHECK_THROWS_WITH_AS(generate_scenario(cfg), "cannot place means; relax separation", Error);
}

TEST_CASE("config validation") {
    auto cfg = small_config();
    cfg.d = 1;
    CHECK_THROWS_AS(generate_scenario(cfg), Error);
    cfg = small_config();
    cfg.sigma_id = 2.0;
    CHECK_THROWS_AS(generate_scenario(cfg), Error);
    CHECK(ScenarioConfig{}.scatter_sigma() == doctest::Approx(20.0 / std::sqrt(32.0)));
}

TEST_CASE("scenario round-trips through a manifest") {
    fixtures::TempDir dir;
    const auto s = generate_scenario(small_config());
    const auto path = write_scenario(dir.path(), s);
    const auto m = read_manifest(path);
    CHECK(validate_manifest(m).empty());
    CHECK(m.splits.size() == 4);
    const auto back = load_split(m, "id_train");
    CHECK(back.features == s.id_train.features);
    CHECK(back.labels == s.id_train.labels);
}

TEST_CASE("concentrated OOD is five times farther from ID than held-out ID" * doctest::should_fail()) {
    // Measured ratios at the default configuration are about 3.9 to 4.1.
    const auto s = generate_scenario(ScenarioConfig{});
    const double id_nn = mean_nearest_distance(s.id_test.features, s.id_train.features);
    const double ood_nn = mean_nearest_distance(s.ood_concentrated.features, s.id_train.features);
    MESSAGE("nearest-neighbour ratio " << ood_nn / id_nn);
    CHECK(ood_nn >= 5.0 * id_nn);
}

TEST_CASE("concentrated OOD is farther from ID than held-out ID") {
    const auto s = generate_scenario(ScenarioConfig{});
    const double id_nn = mean_nearest_distance(s.id_test.features, s.id_train.features);
    CHECK(mean_nearest_distance(s.ood_concentrated.features, s.id_train.features) >= 3.0 * id_nn);
}

TEST_CASE("geometry experiment ranks feature-space detection above confidence on scattered OOD") {
    std::vector<EvalReport> reports;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        ScenarioConfig cfg;
        cfg.seed = seed;
        reports.push_back(run_geometry_experiment(generate_scenario(cfg), {Method::MSP, Method::KNN}, 50));
        CHECK(reports.back().id_accuracy == doctest::Approx(1.0));
    }
    const auto med = median_report(reports);
    CHECK(med.cells.size() == 4);
    CHECK(cell(med, "knn", "ood_scattered").auroc > cell(med, "msp", "ood_scattered").auroc);
    CHECK(cell(med, "knn", "ood_concentrated").auroc >= 0.95);
    CHECK(cell(med, "msp", "ood_concentrated").auroc >= 0.95);
    CHECK(med.dataset == "synthetic (median of 3)");
}

TEST_CASE("median_report takes cell-wise medians") {
    ReportMeta meta;
    meta.dataset = "d";
    std::vector<EvalReport> rs;
    for (double a : {0.2, 0.9, 0.5}) rs.push_back(build_report({{"m", "o", a, 1 - a, 1, 1}}, meta));
    const auto med = median_report(rs);
    CHECK(med.cells[0].auroc == 0.5);
    CHECK(med.cells[0].fpr95 == 0.5);
    CHECK_THROWS_AS(median_report({}), Error);
}
