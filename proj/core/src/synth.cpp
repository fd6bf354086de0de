#include "oodkit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "oodkit/parallel.hpp"
#include "oodkit/rng.hpp"

namespace oodkit {
namespace {

std::vector<double> gaussian_vector(Rng& rng, std::size_t d, double sigma) {
    std::vector<double> v(d);
    for (double& x : v) x = sigma * rng.normal();
    return v;
}

Matrix<double> place_means(Rng& rng, const ScenarioConfig& cfg) {
    const std::size_t total = cfg.classes + cfg.ood_clusters;
    const std::size_t max_attempts = 10 * total * total;
    Matrix<double> means(total, cfg.d);
    std::size_t placed = 0, attempts = 0;
    while (placed < total) {
        if (attempts++ >= max_attempts) throw Error("cannot place means; relax separation");
        auto v = gaussian_vector(rng, cfg.d, 1.0);
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0.0) continue;
        for (double& x : v) x *= cfg.radius / norm;
        bool ok = true;
        for (std::size_t p = 0; p < placed && ok; ++p) {
            double sq = 0.0;
            for (std::size_t j = 0; j < cfg.d; ++j) sq += (v[j] - means(p, j)) * (v[j] - means(p, j));
            ok = std::sqrt(sq) >= cfg.min_mean_separation;
        }
        if (!ok) continue;
        std::copy(v.begin(), v.end(), means.row(placed).begin());
        ++placed;
    }
    return means;
}

// n rows around each mean in [first, last), labelled by cluster - first.
DatasetSplit sample_clusters(Rng& rng, const Matrix<double>& means, std::size_t first, std::size_t last,
                             std::size_t n, double sigma, std::string name, Role role, bool labelled) {
    const std::size_t d = means.cols();
    DatasetSplit s;
    s.name = std::move(name);
    s.role = role;
    s.features = EmbeddingMatrix((last - first) * n, d);
    std::vector<std::int64_t> labels;
    std::size_t row = 0;
    for (std::size_t c = first; c < last; ++c) {
        for (std::size_t i = 0; i < n; ++i, ++row) {
            for (std::size_t j = 0; j < d; ++j) {
                s.features(row, j) = static_cast<float>(means(c, j) + sigma * rng.normal());
            }
            labels.push_back(static_cast<std::int64_t>(c - first));
        }
    }
    if (labelled) s.labels = make_labels(std::move(labels), last - first);
    return s;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

double ScenarioConfig::scatter_sigma() const {
    return sigma_scatter.value_or(2.0 * radius / std::sqrt(static_cast<double>(d)));
}

void ScenarioConfig::validate() const {
    if (d < 2) throw Error("scenario: d >= 2 required");
    if (classes < 2) throw Error("scenario: at least 2 ID classes required");
    if (ood_clusters < 1) throw Error("scenario: at least 1 OOD cluster required");
    if (n_per_cluster < 1) throw Error("scenario: n_per_cluster >= 1 required");
    if (!(radius > 0.0)) throw Error("scenario: radius must be positive");
    if (!(min_mean_separation > 0.0)) throw Error("scenario: min_mean_separation must be positive");
    if (!(sigma_id > 0.0) || !(sigma_id < min_mean_separation / 4.0)) {
        throw Error("scenario: sigma_id must be in (0, min_mean_separation / 4)");
    }
    if (!(scatter_sigma() > 0.0)) throw Error("scenario: sigma_scatter must be positive");
}

Scenario generate_scenario(const ScenarioConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    Scenario s;
    s.means = place_means(rng, cfg);
    const std::size_t C = cfg.classes, total = cfg.classes + cfg.ood_clusters, n = cfg.n_per_cluster;
    s.id_train = sample_clusters(rng, s.means, 0, C, n, cfg.sigma_id, "id_train", Role::IdTrain, true);
    s.id_test = sample_clusters(rng, s.means, 0, C, n, cfg.sigma_id, "id_test", Role::IdTest, true);
    s.ood_concentrated =
        sample_clusters(rng, s.means, C, total, n, cfg.sigma_id, "ood_concentrated", Role::OodTest, false);

    s.ood_scattered.name = "ood_scattered";
    s.ood_scattered.role = Role::OodTest;
    s.ood_scattered.features = EmbeddingMatrix(cfg.ood_clusters * n, cfg.d);
    const double sigma = cfg.scatter_sigma();
    for (float& v : s.ood_scattered.features.data()) v = static_cast<float>(sigma * rng.normal());
    return s;
}

std::filesystem::path write_scenario(const std::filesystem::path& dir, const Scenario& s,
                                     const std::string& dataset) {
    std::filesystem::create_directories(dir);
    Manifest m;
    m.dataset = dataset;
    m.base_dir = dir;
    for (const DatasetSplit* split : {&s.id_train, &s.id_test, &s.ood_concentrated, &s.ood_scattered}) {
        SplitEntry e;
        e.role = split->role;
        e.matrix = split->name + ".npy";
        e.n = split->n();
        e.d = split->d();
        write_matrix(dir / e.matrix, split->features);
        if (split->labels) {
            e.labels = split->name + "_labels.npy";
            write_labels(dir / *e.labels, *split->labels);
        }
        m.splits.emplace(split->name, std::move(e));
    }
    const auto path = dir / "manifest.json";
    write_manifest(path, m);
    return path;
}

EvalReport run_geometry_experiment(const Scenario& s, const std::vector<Method>& methods, std::size_t k,
                                   const GeometryOptions& options) {
    const ProbeHead head = train_linear_probe(s.id_train, options.probe);
    ScorerParams params = options.scorer;
    params.k = k;

    const std::vector<const DatasetSplit*> splits{&s.id_test, &s.ood_concentrated, &s.ood_scattered};
    const auto results = score_all(methods, s.id_train, &head, splits, params);

    std::vector<EvalCell> cells;
    ReportMeta meta;
    meta.dataset = "synthetic";
    meta.id_accuracy = accuracy(head, s.id_test);
    for (const auto& r : results) {
        const std::string name(to_string(r.method));
        if (r.error) {
            meta.failures.push_back({name, *r.error});
            continue;
        }
        for (std::size_t o = 1; o < splits.size(); ++o) {
            cells.push_back(make_cell(name, splits[o]->name, r.scores[0].values, r.scores[o].values));
        }
    }
    return build_report(std::move(cells), std::move(meta));
}

EvalReport median_report(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw Error("median of zero reports");
    std::map<std::pair<std::string, std::string>, std::vector<const EvalCell*>> groups;
    for (const auto& r : reports)
        for (const auto& c : r.cells) groups[{c.method, c.ood_split}].push_back(&c);

    std::vector<EvalCell> cells;
    for (const auto& c : reports.front().cells) {
        const auto& group = groups.at({c.method, c.ood_split});
        std::vector<double> au, fpr;
        for (const EvalCell* g : group) {
            au.push_back(g->auroc);
            fpr.push_back(g->fpr95);
        }
        cells.push_back(EvalCell{c.method, c.ood_split, median(au), median(fpr), c.n_id, c.n_ood});
    }
    ReportMeta meta;
    meta.dataset = reports.front().dataset + " (median of " + std::to_string(reports.size()) + ")";
    std::vector<double> acc;
    for (const auto& r : reports)
        if (r.id_accuracy) acc.push_back(*r.id_accuracy);
    if (!acc.empty()) meta.id_accuracy = median(acc);
    for (const auto& r : reports)
        for (const auto& f : r.failures)
            if (std::find(meta.failures.begin(), meta.failures.end(), f) == meta.failures.end())
                meta.failures.push_back(f);
    meta.config = reports.front().config;
    return build_report(std::move(cells), std::move(meta));
}

double mean_nearest_distance(const EmbeddingMatrix& query, const EmbeddingMatrix& reference) {
    std::vector<double> nearest(query.rows());
    parallel_for(query.rows(), [&](std::size_t i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < reference.rows(); ++r) {
            best = std::min(best, squared_distance(query.row(i), reference.row(r)));
        }
        nearest[i] = std::sqrt(best);
    });
    double sum = 0.0;
    for (double v : nearest) sum += v;
    return sum / static_cast<double>(nearest.size());
}

}  // namespace oodkit
