#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "oodkit/evaluator.hpp"
#include "oodkit/probe.hpp"
#include "oodkit/scorers.hpp"
#include "oodkit/store.hpp"

namespace oodkit {

/// Two feature-space OOD regimes around C labelled Gaussian ID clusters:
/// "concentrated" OOD forms M extra tight clusters on the same sphere,
/// "scattered" OOD is a broad Gaussian at the origin that overlaps the ID
/// decision regions.
struct ScenarioConfig {
    std::size_t d = 32;
    std::size_t classes = 10;
    std::size_t ood_clusters = 5;
    std::size_t n_per_cluster = 200;
    double radius = 10.0;                 // norm of every cluster mean
    double sigma_id = 0.5;                // per-coordinate within-cluster std
    std::optional<double> sigma_scatter;  // per-coordinate; default 2 r / sqrt(d)
    double min_mean_separation = 10.0;
    std::uint64_t seed = 0;

    double scatter_sigma() const;
    void validate() const;
};

struct Scenario {
    DatasetSplit id_train;
    DatasetSplit id_test;
    DatasetSplit ood_concentrated;
    DatasetSplit ood_scattered;
    Matrix<double> means;  // (C + M) x d; first C rows are the ID classes
};

/// Deterministic in cfg. Draw order: cluster means (rejection sampled), then
/// id_train, id_test, ood_concentrated and ood_scattered, each cluster-major
/// and row-major. Every split holds n_per_cluster rows per cluster;
/// ood_scattered holds M * n_per_cluster rows.
Scenario generate_scenario(const ScenarioConfig& cfg);

/// Writes <dir>/manifest.json plus one NPY per matrix/label vector.
std::filesystem::path write_scenario(const std::filesystem::path& dir, const Scenario& s,
                                     const std::string& dataset = "synthetic");

struct GeometryOptions {
    ProbeConfig probe;
    ScorerParams scorer;
};

/// Trains a linear probe on id_train, then fits and scores every method and
/// reports AUROC of id_test against each OOD regime.
EvalReport run_geometry_experiment(const Scenario& s, const std::vector<Method>& methods, std::size_t k,
                                   const GeometryOptions& options = {});

/// Cell-wise median (AUROC, FPR) over reports sharing the same grid.
EvalReport median_report(const std::vector<EvalReport>& reports);

/// Mean distance from each query row to its nearest reference row.
double mean_nearest_distance(const EmbeddingMatrix& query, const EmbeddingMatrix& reference);

}  // namespace oodkit
