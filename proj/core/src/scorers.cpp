#include "oodkit/scorers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "oodkit/parallel.hpp"

namespace oodkit {
namespace {

constexpr double kTemplateFloor = 1e-12;

struct MethodName {
    Method method;
    std::string_view name;
};

constexpr MethodName kNames[] = {
    {Method::MSP, "msp"},           {Method::MaxLogit, "maxlogit"},
    {Method::Energy, "energy"},     {Method::GradNorm, "gradnorm"},
    {Method::ReAct, "react"},       {Method::DICE, "dice"},
    {Method::KLMatch, "klmatch"},   {Method::Mahalanobis, "mahalanobis"},
    {Method::Residual, "residual"}, {Method::ViM, "vim"},
    {Method::KNN, "knn"},
};

Error method_error(Method m, const std::string& what) {
    return Error(std::string(to_string(m)) + ": " + what);
}

std::vector<double> logits_of(const ProbeHead& head, std::span<const float> z) {
    std::vector<double> out(num_classes(head));
    logits_row(head, z, out);
    return out;
}

Matrix<double> from_eigen(const Eigen::MatrixXd& m) {
    Matrix<double> out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = m(r, c);
    return out;
}

void require_finite(const Matrix<double>& m, Method method) {
    for (double v : m.data())
        if (!std::isfinite(v)) throw method_error(method, "fitted state is not finite");
}

// ---- fitting -------------------------------------------------------------

ReActState fit_react(const DatasetSplit& train, const ScorerParams& p) {
    if (!(p.react_percentile >= 0.0 && p.react_percentile <= 100.0)) {
        throw method_error(Method::ReAct, "percentile must be in [0, 100]");
    }
    return {percentile(train.features.data(), p.react_percentile)};
}

DiceState fit_dice(const DatasetSplit& train, const ProbeHead& head, const ScorerParams& p) {
    if (!(p.dice_sparsity >= 0.0 && p.dice_sparsity < 1.0)) {
        throw method_error(Method::DICE, "sparsity must be in [0, 1)");
    }
    const DenseLayer& out = output_layer(head);
    const std::size_t classes = out.out_dim(), width = out.in_dim();

    std::vector<double> mean(width, 0.0);
    for (std::size_t i = 0; i < train.n(); ++i) {
        auto h = penultimate_row(head, train.features.row(i));
        for (std::size_t j = 0; j < width; ++j) mean[j] += h[j];
    }
    for (double& m : mean) m /= static_cast<double>(train.n());

    const auto keep = static_cast<std::size_t>(std::clamp<long>(
        std::lround((1.0 - p.dice_sparsity) * static_cast<double>(width)), 1L, static_cast<long>(width)));

    DiceState st{Matrix<double>(classes, width, 0.0), head};
    DenseLayer masked = out;
    std::vector<std::size_t> idx(width);
    std::vector<double> contrib(width);
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t j = 0; j < width; ++j) contrib[j] = static_cast<double>(out.W(c, j)) * mean[j];
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return contrib[a] > contrib[b]; });
        for (std::size_t r = 0; r < keep; ++r) st.mask(c, idx[r]) = 1.0;
        for (std::size_t j = 0; j < width; ++j) {
            if (st.mask(c, j) == 0.0) masked.W(c, j) = 0.0f;
        }
    }
    if (auto* lin = std::get_if<LinearHead>(&st.masked_head)) {
        lin->layer = std::move(masked);
    } else {
        std::get<MlpHead>(st.masked_head).layers[2] = std::move(masked);
    }
    return st;
}

KlMatchState fit_klmatch(const DatasetSplit& train, const ProbeHead& head, FittedScorer& fs) {
    const std::size_t classes = num_classes(head);
    if (train.labels->n_classes > classes) {
        throw method_error(Method::KLMatch, "labels exceed the head's class count");
    }
    KlMatchState st{Matrix<double>(classes, classes, 0.0), std::vector<bool>(classes, false)};
    std::vector<std::size_t> counts(classes, 0);
    for (std::size_t i = 0; i < train.n(); ++i) {
        const auto y = static_cast<std::size_t>(train.labels->values[i]);
        const auto post = softmax(logits_of(head, train.features.row(i)));
        for (std::size_t c = 0; c < classes; ++c) st.templates(y, c) += post[c];
        ++counts[y];
    }
    for (std::size_t y = 0; y < classes; ++y) {
        if (counts[y] == 0) {
            fs.warnings.push_back("klmatch: class " + std::to_string(y) + " absent, no template");
            continue;
        }
        st.present[y] = true;
        for (std::size_t c = 0; c < classes; ++c) {
            st.templates(y, c) = std::max(st.templates(y, c) / static_cast<double>(counts[y]), kTemplateFloor);
        }
    }
    return st;
}

MahalanobisState fit_mahalanobis(const DatasetSplit& train, const ScorerParams& p) {
    const std::size_t n = train.n(), d = train.d(), classes = train.labels->n_classes;
    const auto& y = train.labels->values;
    Matrix<double> means(classes, d, 0.0);
    std::vector<std::size_t> counts(classes, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<std::size_t>(y[i]);
        ++counts[c];
        for (std::size_t j = 0; j < d; ++j) means(c, j) += train.features(i, j);
    }
    for (std::size_t c = 0; c < classes; ++c) {
        if (counts[c] == 0) throw method_error(Method::Mahalanobis, "class " + std::to_string(c) + " absent");
        for (std::size_t j = 0; j < d; ++j) means(c, j) /= static_cast<double>(counts[c]);
    }

    Eigen::MatrixXd centered(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<std::size_t>(y[i]);
        for (std::size_t j = 0; j < d; ++j) centered(i, j) = train.features(i, j) - means(c, j);
    }
    Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n);
    cov = 0.5 * (cov + cov.transpose());
    double eps = p.mahalanobis_shrinkage * cov.trace() / static_cast<double>(d);
    // Degenerate (zero-spread) data has trace 0; fall back to an absolute ridge.
    if (eps <= 0.0) eps = p.mahalanobis_shrinkage;
    cov.diagonal().array() += eps;

    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
        throw method_error(Method::Mahalanobis, "singular covariance despite regularization");
    }
    Eigen::MatrixXd precision = llt.solve(Eigen::MatrixXd::Identity(d, d));
    precision = 0.5 * (precision + precision.transpose());
    MahalanobisState st{std::move(means), from_eigen(precision)};
    require_finite(st.precision, Method::Mahalanobis);
    return st;
}

// Residual of x = z - u after removing its projection on the basis.
double residual_norm(const SubspaceState& st, std::span<const float> z) {
    const std::size_t d = st.offset.size(), k = st.basis.cols();
    std::vector<double> x(d);
    for (std::size_t j = 0; j < d; ++j) x[j] = static_cast<double>(z[j]) - st.offset[j];
    std::vector<double> coeff(k, 0.0);
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t c = 0; c < k; ++c) coeff[c] += st.basis(j, c) * x[j];
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        double r = x[j];
        for (std::size_t c = 0; c < k; ++c) r -= st.basis(j, c) * coeff[c];
        sq += r * r;
    }
    return std::sqrt(sq);
}

SubspaceState fit_subspace(Method method, const DatasetSplit& train, const ProbeHead* head,
                           const ScorerParams& p, FittedScorer& fs) {
    const std::size_t n = train.n(), d = train.d();
    const std::size_t dim = p.vim_dim.value_or(std::max<std::size_t>(1, d / 4));
    if (dim < 1 || dim > d) throw method_error(method, "principal dimension must be in [1, d]");

    SubspaceState st;
    st.offset.assign(d, 0.0);
    const auto* lin = head ? std::get_if<LinearHead>(head) : nullptr;
    if (lin) {
        // u = -W^+ b: the point whose logits are all zero (minimum-norm solution).
        Eigen::MatrixXd w(lin->layer.out_dim(), d);
        Eigen::VectorXd b(lin->layer.out_dim());
        for (std::size_t c = 0; c < lin->layer.out_dim(); ++c) {
            b(c) = lin->layer.b[c];
            for (std::size_t j = 0; j < d; ++j) w(c, j) = lin->layer.W(c, j);
        }
        Eigen::VectorXd u = -(w.completeOrthogonalDecomposition().pseudoInverse() * b);
        for (std::size_t j = 0; j < d; ++j) st.offset[j] = u(j);
    } else {
        if (head) fs.warnings.push_back(std::string(to_string(method)) + ": non-linear head, offset = feature mean");
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) st.offset[j] += train.features(i, j);
        for (double& v : st.offset) v /= static_cast<double>(n);
    }

    Eigen::MatrixXd x(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) x(i, j) = train.features(i, j) - st.offset[j];
    Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
    cov = 0.5 * (cov + cov.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw method_error(method, "eigendecomposition failed");

    // Eigen returns ascending eigenvalues; take the top `dim` in descending order.
    st.basis = Matrix<double>(d, dim);
    for (std::size_t c = 0; c < dim; ++c) {
        Eigen::VectorXd v = eig.eigenvectors().col(static_cast<Eigen::Index>(d - 1 - c));
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        for (std::size_t j = 0; j < d; ++j) st.basis(j, c) = v(static_cast<Eigen::Index>(j));
    }
    require_finite(st.basis, method);

    if (method == Method::ViM) {
        double logit_sum = 0.0, residual_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto logits = logits_of(*head, train.features.row(i));
            logit_sum += *std::max_element(logits.begin(), logits.end());
            residual_sum += residual_norm(st, train.features.row(i));
        }
        if (!(residual_sum > 0.0)) throw method_error(method, "zero residual on id_train; lower vim_dim");
        st.alpha = logit_sum / residual_sum;
        if (!(st.alpha > 0.0) || !std::isfinite(st.alpha)) {
            throw method_error(method, "alpha must be positive (mean max-logit is not positive)");
        }
    }
    return st;
}

KnnState fit_knn(const DatasetSplit& train, const ScorerParams& p, FittedScorer& fs) {
    if (p.k < 1) throw method_error(Method::KNN, "k >= 1 required");
    KnnState st{l2_normalize_rows(train.features), p.k};
    if (st.k > train.n()) {
        fs.warnings.push_back("knn: k=" + std::to_string(p.k) + " clamped to N_train=" + std::to_string(train.n()));
        st.k = train.n();
    }
    return st;
}

// ---- per-row scoring -----------------------------------------------------

double knn_row(const KnnState& st, std::span<const float> z, std::vector<float>& query,
               std::vector<std::pair<double, std::size_t>>& dist) {
    l2_normalize_row(z, query);
    const std::size_t n = st.reference.rows();
    dist.resize(n);
    for (std::size_t r = 0; r < n; ++r) dist[r] = {squared_distance(query, st.reference.row(r)), r};
    auto kth = dist.begin() + static_cast<std::ptrdiff_t>(st.k - 1);
    std::nth_element(dist.begin(), kth, dist.end());
    return std::max(-2.0, -std::sqrt(kth->first));
}

double kl_row(const KlMatchState& st, std::span<const double> post) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < st.templates.rows(); ++t) {
        if (!st.present[t]) continue;
        double kl = 0.0;
        for (std::size_t c = 0; c < post.size(); ++c) {
            if (post[c] > 0.0) kl += post[c] * (std::log(post[c]) - std::log(st.templates(t, c)));
        }
        best = std::min(best, kl);
    }
    return -best;
}

double mahalanobis_row(const MahalanobisState& st, std::span<const float> z) {
    const std::size_t d = z.size();
    std::vector<double> diff(d);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < st.means.rows(); ++c) {
        for (std::size_t j = 0; j < d; ++j) diff[j] = static_cast<double>(z[j]) - st.means(c, j);
        double q = 0.0;
        for (std::size_t a = 0; a < d; ++a) {
            const double* prow = st.precision.row(a).data();
            double s = 0.0;
            for (std::size_t b = 0; b < d; ++b) s += prow[b] * diff[b];
            q += diff[a] * s;
        }
        best = std::min(best, q);
    }
    return -best;
}

double vim_row(const SubspaceState& st, const ProbeHead& head, std::span<const float> z) {
    auto logits = logits_of(head, z);
    logits.push_back(st.alpha * residual_norm(st, z));
    const double lse = log_sum_exp(logits);
    return -std::exp(logits.back() - lse);
}

}  // namespace

// ---- public API ------------------------------------------------------------

std::string_view to_string(Method m) noexcept {
    for (const auto& n : kNames)
        if (n.method == m) return n.name;
    return "?";
}

Method method_from_string(std::string_view s) {
    for (const auto& n : kNames)
        if (n.name == s) return n.method;
    std::string valid;
    for (const auto& n : kNames) valid += (valid.empty() ? "" : ", ") + std::string(n.name);
    throw IoError("unknown method '" + std::string(s) + "' (valid: " + valid + ")");
}

const std::vector<Method>& all_methods() {
    static const std::vector<Method> methods = [] {
        std::vector<Method> v;
        for (const auto& n : kNames) v.push_back(n.method);
        return v;
    }();
    return methods;
}

bool requires_head(Method m) noexcept {
    switch (m) {
        case Method::Mahalanobis:
        case Method::Residual:
        case Method::KNN: return false;
        default: return true;
    }
}

bool requires_labels(Method m) noexcept { return m == Method::Mahalanobis || m == Method::KLMatch; }

double log_sum_exp(std::span<const double> logits) noexcept {
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double v : logits) s += std::exp(v - m);
    return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] = std::exp(logits[i] - m));
    for (double& v : p) v /= s;
    return p;
}

double gradnorm_row(std::span<const double> logits, std::span<const float> z) {
    const auto p = softmax(logits);
    const double u = 1.0 / static_cast<double>(p.size());
    double dev = 0.0;
    for (double v : p) dev += std::abs(v - u);
    double zl1 = 0.0;
    for (float v : z) zl1 += std::abs(static_cast<double>(v));
    return dev * (zl1 + 1.0);
}

void l2_normalize_row(std::span<const float> in, std::span<float> out) {
    double sq = 0.0;
    for (float v : in) sq += static_cast<double>(v) * v;
    const double norm = std::sqrt(sq);
    for (std::size_t j = 0; j < in.size(); ++j) {
        out[j] = norm > 0.0 ? static_cast<float>(in[j] / norm) : 0.0f;
    }
}

EmbeddingMatrix l2_normalize_rows(const EmbeddingMatrix& m) {
    EmbeddingMatrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) l2_normalize_row(m.row(i), out.row(i));
    return out;
}

double squared_distance(std::span<const float> a, std::span<const float> b) noexcept {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double diff = static_cast<double>(a[j]) - static_cast<double>(b[j]);
        s += diff * diff;
    }
    return s;
}

double percentile(std::vector<float> values, double p) {
    if (values.empty()) throw Error("percentile of empty data");
    const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
    const double a = values[lo];
    if (pos == static_cast<double>(lo)) return a;
    // After nth_element the next order statistic is the minimum of the tail.
    const double b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
    return a + (b - a) * (pos - static_cast<double>(lo));
}

FittedScorer fit(Method method, const DatasetSplit& id_train, const ProbeHead* head,
                 const ScorerParams& params) {
    if (id_train.role != Role::IdTrain) throw method_error(method, "fit requires an id_train split");
    if (requires_head(method) && !head) throw method_error(method, "requires a probe head");
    if (requires_labels(method) && !id_train.labels) throw method_error(method, "requires id_train labels");
    if (head && input_dim(*head) != id_train.d()) {
        throw method_error(method, "head expects d=" + std::to_string(input_dim(*head)) +
                                       " but id_train has d=" + std::to_string(id_train.d()));
    }
    if (method == Method::GradNorm && !std::holds_alternative<LinearHead>(*head)) {
        throw method_error(method, "defined only for a linear head");
    }

    FittedScorer fs;
    fs.method = method;
    fs.params = params;
    fs.dim = id_train.d();
    if (requires_head(method)) fs.head = *head;

    switch (method) {
        case Method::MSP:
        case Method::MaxLogit:
        case Method::Energy:
        case Method::GradNorm: break;
        case Method::ReAct: fs.state = fit_react(id_train, params); break;
        case Method::DICE: fs.state = fit_dice(id_train, *head, params); break;
        case Method::KLMatch: fs.state = fit_klmatch(id_train, *head, fs); break;
        case Method::Mahalanobis: fs.state = fit_mahalanobis(id_train, params); break;
        case Method::Residual:
        case Method::ViM: fs.state = fit_subspace(method, id_train, head, params, fs); break;
        case Method::KNN: fs.state = fit_knn(id_train, params, fs); break;
    }
    return fs;
}

ScoreVector score(const FittedScorer& fs, const EmbeddingMatrix& features) {
    if (features.cols() != fs.dim) {
        throw method_error(fs.method, "dimension mismatch: fitted d=" + std::to_string(fs.dim) +
                                          ", input d=" + std::to_string(features.cols()));
    }
    if (fs.method == Method::GradNorm && !std::holds_alternative<LinearHead>(*fs.head)) {
        throw method_error(fs.method, "defined only for a linear head");
    }
    ScoreVector out{std::vector<double>(features.rows()), fs.method, true};
    auto& values = out.values;

    parallel_for(
        features.rows(),
        [&](std::size_t i) {
            const auto z = features.row(i);
            switch (fs.method) {
                case Method::MSP: {
                    const auto p = softmax(logits_of(*fs.head, z));
                    values[i] = *std::max_element(p.begin(), p.end());
                    break;
                }
                case Method::MaxLogit: {
                    const auto l = logits_of(*fs.head, z);
                    values[i] = *std::max_element(l.begin(), l.end());
                    break;
                }
                case Method::Energy: values[i] = log_sum_exp(logits_of(*fs.head, z)); break;
                case Method::GradNorm: values[i] = gradnorm_row(logits_of(*fs.head, z), z); break;
                case Method::ReAct: {
                    const double c = std::get<ReActState>(fs.state).threshold;
                    std::vector<float> clipped(z.begin(), z.end());
                    for (float& v : clipped) {
                        if (static_cast<double>(v) > c) v = static_cast<float>(c);
                    }
                    values[i] = log_sum_exp(logits_of(*fs.head, clipped));
                    break;
                }
                case Method::DICE:
                    values[i] = log_sum_exp(logits_of(std::get<DiceState>(fs.state).masked_head, z));
                    break;
                case Method::KLMatch:
                    values[i] = kl_row(std::get<KlMatchState>(fs.state), softmax(logits_of(*fs.head, z)));
                    break;
                case Method::Mahalanobis:
                    values[i] = mahalanobis_row(std::get<MahalanobisState>(fs.state), z);
                    break;
                case Method::Residual:
                    values[i] = -residual_norm(std::get<SubspaceState>(fs.state), z);
                    break;
                case Method::ViM: values[i] = vim_row(std::get<SubspaceState>(fs.state), *fs.head, z); break;
                case Method::KNN: {
                    thread_local std::vector<float> query;
                    thread_local std::vector<std::pair<double, std::size_t>> dist;
                    query.resize(z.size());
                    values[i] = knn_row(std::get<KnnState>(fs.state), z, query, dist);
                    break;
                }
            }
        },
        fs.params.threads);

    for (double v : values) {
        if (!std::isfinite(v)) throw method_error(fs.method, "non-finite score");
    }
    return out;
}

std::vector<MethodScores> score_all(const std::vector<Method>& methods, const DatasetSplit& id_train,
                                    const ProbeHead* head, const std::vector<const DatasetSplit*>& splits,
                                    const ScorerParams& params) {
    std::vector<MethodScores> out;
    for (Method m : methods) {
        MethodScores entry{m, std::nullopt, {}, {}};
        try {
            const FittedScorer fs = fit(m, id_train, head, params);
            entry.warnings = fs.warnings;
            for (const DatasetSplit* s : splits) entry.scores.push_back(score(fs, *s));
        } catch (const Error& e) {
            entry.error = e.what();
            entry.scores.clear();
        }
        out.push_back(std::move(entry));
    }
    return out;
}

}  // namespace oodkit
