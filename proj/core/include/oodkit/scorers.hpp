#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "oodkit/matrix.hpp"
#include "oodkit/probe.hpp"
#include "oodkit/store.hpp"

namespace oodkit {

// Every score follows one sign convention: higher means more ID-like.

enum class Method { MSP, MaxLogit, Energy, GradNorm, ReAct, DICE, KLMatch, Mahalanobis, Residual, ViM, KNN };

/// Lower-case CLI names: msp, maxlogit, energy, gradnorm, react, dice,
/// klmatch, mahalanobis, residual, vim, knn.
std::string_view to_string(Method m) noexcept;
Method method_from_string(std::string_view s);
const std::vector<Method>& all_methods();

bool requires_head(Method m) noexcept;
bool requires_labels(Method m) noexcept;

struct ScorerParams {
    std::size_t k = 50;                    // KNN, clamped to N_train
    double react_percentile = 90.0;        // ReAct clip percentile in [0, 100]
    double dice_sparsity = 0.7;            // DICE, fraction of weights pruned per class
    std::optional<std::size_t> vim_dim;    // Residual/ViM principal dim, default max(1, d/4)
    double mahalanobis_shrinkage = 1e-6;   // eps = shrinkage * trace(cov) / d
    std::size_t threads = 0;               // 0 = default_threads()
};

struct ReActState {
    double threshold = 0.0;
};

struct DiceState {
    Matrix<double> mask;  // C x p, 1 = kept
    ProbeHead masked_head;
};

struct KlMatchState {
    Matrix<double> templates;   // C x C, row c = mean posterior of class c
    std::vector<bool> present;  // classes seen in id_train
};

struct MahalanobisState {
    Matrix<double> means;      // C x d
    Matrix<double> precision;  // d x d
};

struct SubspaceState {
    std::vector<double> offset;  // u, length d
    Matrix<double> basis;        // d x D', orthonormal columns
    double alpha = 0.0;          // ViM only
};

struct KnnState {
    EmbeddingMatrix reference;  // row-normalized id_train
    std::size_t k = 1;
};

using ScorerState = std::variant<std::monostate, ReActState, DiceState, KlMatchState,
                                 MahalanobisState, SubspaceState, KnnState>;

struct FittedScorer {
    Method method = Method::MSP;
    ScorerParams params;
    std::optional<ProbeHead> head;
    ScorerState state;
    std::size_t dim = 0;
    std::vector<std::string> warnings;
};

struct ScoreVector {
    std::vector<double> values;
    Method method = Method::MSP;
    bool higher_is_id = true;
};

/// Fits per-method state on id_train. `head` is required for the
/// boundary-dependent methods and ViM; labels for Mahalanobis and KLMatch.
FittedScorer fit(Method method, const DatasetSplit& id_train, const ProbeHead* head,
                 const ScorerParams& params = {});

ScoreVector score(const FittedScorer& fs, const EmbeddingMatrix& features);
inline ScoreVector score(const FittedScorer& fs, const DatasetSplit& split) {
    return score(fs, split.features);
}

struct MethodScores {
    Method method;
    std::optional<std::string> error;  // set when fit or any score call failed
    std::vector<ScoreVector> scores;   // one per split, input order
    std::vector<std::string> warnings;
};

/// Fits each method once and scores every split. A failing method is
/// reported in its entry; the remaining methods still run.
std::vector<MethodScores> score_all(const std::vector<Method>& methods, const DatasetSplit& id_train,
                                    const ProbeHead* head, const std::vector<const DatasetSplit*>& splits,
                                    const ScorerParams& params = {});

// Row-level primitives shared by the scorers.
double log_sum_exp(std::span<const double> logits) noexcept;
std::vector<double> softmax(std::span<const double> logits);
/// ||p - 1/C||_1 * (||z||_1 + 1), the L1 norm of d KL(u || softmax(Wz+b)) / d(W, b).
double gradnorm_row(std::span<const double> logits, std::span<const float> z);

/// Divides each row by its L2 norm (computed in double); zero rows stay zero.
EmbeddingMatrix l2_normalize_rows(const EmbeddingMatrix& m);
void l2_normalize_row(std::span<const float> in, std::span<float> out);
/// Squared Euclidean distance accumulated in double, index order.
double squared_distance(std::span<const float> a, std::span<const float> b) noexcept;

/// p-th percentile (0..100) with linear interpolation between order statistics.
double percentile(std::vector<float> values, double p);

/// Score vectors: <f8 NPY plus a sidecar JSON {method, split, params}.
void save_scores(const std::filesystem::path& npy_path, const ScoreVector& scores,
                 const std::string& split, const ScorerParams& params);
ScoreVector load_scores(const std::filesystem::path& npy_path);

/// Fitted state: state.json plus one NPY per array, and head/ when present.
void save_fitted(const std::filesystem::path& dir, const FittedScorer& fs);
FittedScorer load_fitted(const std::filesystem::path& dir);

/// Canonical JSON text of the parameters (threads excluded).
std::string params_to_json(const ScorerParams& params);

}  // namespace oodkit
