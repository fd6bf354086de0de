#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "oodkit/matrix.hpp"
#include "oodkit/store.hpp"

namespace oodkit {

/// Affine map out = W * in + b with W stored row-major as (out x in).
struct DenseLayer {
    Matrix<float> W;
    std::vector<float> b;

    std::size_t in_dim() const noexcept { return W.cols(); }
    std::size_t out_dim() const noexcept { return W.rows(); }
    bool operator==(const DenseLayer&) const = default;
};

/// Linear probe: logits(z) = W z + b, W is C x d.
struct LinearHead {
    DenseLayer layer;
    bool operator==(const LinearHead&) const = default;
};

/// d -> h -> h -> C with ReLU after the first two layers.
struct MlpHead {
    std::array<DenseLayer, 3> layers;
    bool operator==(const MlpHead&) const = default;
};

using ProbeHead = std::variant<LinearHead, MlpHead>;

std::size_t input_dim(const ProbeHead& head) noexcept;
std::size_t num_classes(const ProbeHead& head) noexcept;
/// The last affine layer, whose input is the representation DICE/GradNorm act on.
const DenseLayer& output_layer(const ProbeHead& head) noexcept;

struct ProbeConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 256;
    double learning_rate = 0.1;  // peak; cosine-decayed to 0 over all steps
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    bool standardize_features = false;
    std::size_t hidden = 512;  // MLP only

    void validate() const;
};

/// Mean training loss per epoch, filled when passed to a trainer.
struct TrainLog {
    std::vector<double> epoch_loss;
};

LinearHead train_linear_probe(const DatasetSplit& train, const ProbeConfig& cfg,
                              TrainLog* log = nullptr);
MlpHead train_mlp_probe(const DatasetSplit& train, const ProbeConfig& cfg,
                        TrainLog* log = nullptr);

/// Logits of one embedding, accumulated in double. Every scorer goes
/// through this routine, so equal inputs give bit-equal logits.
void logits_row(const ProbeHead& head, std::span<const float> z, std::span<double> out);

/// Input to the output layer: z itself for a linear head, the second ReLU
/// activation for an MLP head.
std::vector<double> penultimate_row(const ProbeHead& head, std::span<const float> z);

/// Row-wise logits (n x C). Throws on dimension mismatch.
Matrix<double> predict_logits(const ProbeHead& head, const EmbeddingMatrix& m);

/// Fraction of rows whose argmax logit (lowest index on ties) equals the label.
double accuracy(const ProbeHead& head, const DatasetSplit& split);

/// Index of the maximum; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> v) noexcept;

/// Directory layout: head.json {type, d, C, h} plus W.npy/b.npy (linear) or
/// W0..W2.npy/b0..b2.npy (mlp), all float32.
void save_head(const std::filesystem::path& dir, const ProbeHead& head);
ProbeHead load_head(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Training objectives over flat double parameter vectors. Exposed so the
// analytic gradients can be checked against finite differences.
//
// Linear layout: [W (C x d) row-major, b (C)].
// MLP layout:    [W0 (h x d), b0 (h), W1 (h x h), b1 (h), W2 (C x h), b2 (C)].
// ---------------------------------------------------------------------------

struct HeadShape {
    std::size_t d = 0;
    std::size_t classes = 0;
    std::size_t hidden = 0;  // 0 means linear

    std::size_t param_count() const noexcept;
};

/// Mean cross-entropy over `rows` of (features, labels); writes d loss/d params
/// into grad when non-null. Uses max-subtracted log-sum-exp.
double probe_loss(const HeadShape& shape, std::span<const double> params,
                  const EmbeddingMatrix& features, std::span<const std::int64_t> labels,
                  std::span<const std::size_t> rows, std::vector<double>* grad);

/// Kaiming-uniform (bound sqrt(6 / fan_in)) weights, zero biases.
std::vector<double> init_params(const HeadShape& shape, std::uint64_t seed);

/// Packs float32 head parameters into the flat layout, and back.
ProbeHead unpack_head(const HeadShape& shape, std::span<const double> params);
std::vector<double> pack_head(const ProbeHead& head);

}  // namespace oodkit
