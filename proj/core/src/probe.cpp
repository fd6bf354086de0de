#include "oodkit/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <Eigen/Dense>
#include <json.hpp>

#include "oodkit/rng.hpp"

namespace oodkit {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using ConstVec = Eigen::Map<const Eigen::VectorXd>;
using MutVec = Eigen::Map<Eigen::VectorXd>;

// Offsets of each (W, b) block in the flat layout.
struct Block {
    std::size_t w_offset, b_offset, out, in;
};

std::vector<Block> blocks(const HeadShape& s) {
    std::vector<std::pair<std::size_t, std::size_t>> dims;  // (out, in)
    if (s.hidden == 0) {
        dims = {{s.classes, s.d}};
    } else {
        dims = {{s.hidden, s.d}, {s.hidden, s.hidden}, {s.classes, s.hidden}};
    }
    std::vector<Block> out;
    std::size_t off = 0;
    for (auto [o, i] : dims) {
        out.push_back({off, off + o * i, o, i});
        off += o * i + o;
    }
    return out;
}

void apply_layer(const DenseLayer& layer, std::span<const double> in, std::span<double> out) {
    const std::size_t n_in = layer.in_dim();
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
        const float* w = layer.W.row(o).data();
        double acc = static_cast<double>(layer.b[o]);
        for (std::size_t j = 0; j < n_in; ++j) acc += static_cast<double>(w[j]) * in[j];
        out[o] = acc;
    }
}

HeadShape shape_of(const ProbeHead& head) {
    if (const auto* lin = std::get_if<LinearHead>(&head)) {
        return {lin->layer.in_dim(), lin->layer.out_dim(), 0};
    }
    const auto& mlp = std::get<MlpHead>(head);
    return {mlp.layers[0].in_dim(), mlp.layers[2].out_dim(), mlp.layers[0].out_dim()};
}

struct Standardizer {
    std::vector<double> mean, scale;
};

Standardizer fit_standardizer(const EmbeddingMatrix& x) {
    const std::size_t n = x.rows(), d = x.cols();
    Standardizer s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) s.mean[j] += x(i, j);
    for (auto& m : s.mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double dv = x(i, j) - s.mean[j];
            s.scale[j] += dv * dv;
        }
    for (auto& v : s.scale) {
        v = std::sqrt(v / static_cast<double>(n));
        if (v == 0.0) v = 1.0;
    }
    return s;
}

// Folds z -> (z - mean) / scale into the first affine layer of `params`.
void fold_standardizer(const HeadShape& shape, const Standardizer& st, std::vector<double>& params) {
    const Block first = blocks(shape).front();
    for (std::size_t o = 0; o < first.out; ++o) {
        double shift = 0.0;
        for (std::size_t j = 0; j < first.in; ++j) {
            double& w = params[first.w_offset + o * first.in + j];
            w /= st.scale[j];
            shift += w * st.mean[j];
        }
        params[first.b_offset + o] -= shift;
    }
}

std::size_t count_classes(const DatasetSplit& train) {
    if (train.role != Role::IdTrain) throw Error("probe training requires an id_train split");
    if (!train.labels) throw Error("id_train requires labels");
    const std::size_t classes = train.labels->n_classes;
    if (classes < 2) throw Error("degenerate single-class data");
    if (train.n() < classes) throw Error("fewer training rows than classes");
    return classes;
}

std::vector<double> run_sgd(const HeadShape& shape, const DatasetSplit& train,
                            const ProbeConfig& cfg, TrainLog* log) {
    cfg.validate();
    const EmbeddingMatrix* features = &train.features;
    EmbeddingMatrix standardized;
    Standardizer st;
    if (cfg.standardize_features) {
        st = fit_standardizer(train.features);
        standardized = EmbeddingMatrix(train.n(), train.d());
        for (std::size_t i = 0; i < train.n(); ++i)
            for (std::size_t j = 0; j < train.d(); ++j)
                standardized(i, j) =
                    static_cast<float>((train.features(i, j) - st.mean[j]) / st.scale[j]);
        features = &standardized;
    }

    // Draw order: parameter init first, then one shuffle per epoch.
    Rng rng(cfg.seed);
    std::vector<double> params = init_params(shape, rng.below(UINT64_MAX));
    std::vector<double> velocity(params.size(), 0.0), grad;
    std::vector<std::size_t> order(train.n());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    const std::size_t batches = (train.n() + cfg.batch_size - 1) / cfg.batch_size;
    const double total_steps = static_cast<double>(cfg.epochs * batches);
    std::size_t step = 0;
    if (log) log->epoch_loss.clear();

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < batches; ++b, ++step) {
            const std::size_t lo = b * cfg.batch_size;
            const std::size_t hi = std::min(train.n(), lo + cfg.batch_size);
            std::span<const std::size_t> rows(order.data() + lo, hi - lo);
            const double loss = probe_loss(shape, params, *features, train.labels->values, rows, &grad);
            if (!std::isfinite(loss)) {
                throw Error("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                            std::to_string(b + 1));
            }
            epoch_loss += loss * static_cast<double>(rows.size());
            const double lr = cfg.learning_rate * 0.5 *
                              (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps));
            for (std::size_t p = 0; p < params.size(); ++p) {
                const double g = grad[p] + cfg.weight_decay * params[p];
                velocity[p] = cfg.momentum * velocity[p] + g;
                params[p] -= lr * velocity[p];
            }
        }
        if (log) log->epoch_loss.push_back(epoch_loss / static_cast<double>(train.n()));
    }
    if (cfg.standardize_features) fold_standardizer(shape, st, params);
    for (double p : params) {
        if (!std::isfinite(p)) throw Error("training produced non-finite parameters");
    }
    return params;
}

}  // namespace

std::size_t HeadShape::param_count() const noexcept {
    if (hidden == 0) return classes * d + classes;
    return hidden * d + hidden + hidden * hidden + hidden + classes * hidden + classes;
}

void ProbeConfig::validate() const {
    if (epochs < 1) throw Error("epochs >= 1 required");
    if (batch_size < 1) throw Error("batch_size >= 1 required");
    if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw Error("weight_decay must be non-negative");
    if (hidden < 1) throw Error("hidden width >= 1 required");
}

std::size_t input_dim(const ProbeHead& head) noexcept { return shape_of(head).d; }
std::size_t num_classes(const ProbeHead& head) noexcept { return shape_of(head).classes; }

const DenseLayer& output_layer(const ProbeHead& head) noexcept {
    if (const auto* lin = std::get_if<LinearHead>(&head)) return lin->layer;
    return std::get<MlpHead>(head).layers[2];
}

std::vector<double> init_params(const HeadShape& shape, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> params(shape.param_count(), 0.0);
    for (const Block& blk : blocks(shape)) {
        const double bound = std::sqrt(6.0 / static_cast<double>(blk.in));
        for (std::size_t i = 0; i < blk.out * blk.in; ++i) {
            params[blk.w_offset + i] = rng.uniform(-bound, bound);
        }
    }
    return params;
}

double probe_loss(const HeadShape& shape, std::span<const double> params,
                  const EmbeddingMatrix& features, std::span<const std::int64_t> labels,
                  std::span<const std::size_t> rows, std::vector<double>* grad) {
    if (params.size() != shape.param_count()) throw Error("parameter vector has wrong length");
    if (features.cols() != shape.d) throw Error("feature dimension mismatch");
    const auto bl = blocks(shape);
    const Eigen::Index batch = static_cast<Eigen::Index>(rows.size());

    RowMat x(batch, static_cast<Eigen::Index>(shape.d));
    for (Eigen::Index r = 0; r < batch; ++r) {
        auto src = features.row(rows[static_cast<std::size_t>(r)]);
        for (std::size_t j = 0; j < shape.d; ++j) x(r, static_cast<Eigen::Index>(j)) = src[j];
    }
    auto weight = [&](const Block& b) {
        return ConstMap(params.data() + b.w_offset, static_cast<Eigen::Index>(b.out),
                        static_cast<Eigen::Index>(b.in));
    };
    auto bias = [&](const Block& b) {
        return ConstVec(params.data() + b.b_offset, static_cast<Eigen::Index>(b.out));
    };

    // Forward.
    std::vector<RowMat> acts{x};  // inputs to each layer
    RowMat z;
    for (std::size_t l = 0; l < bl.size(); ++l) {
        z = acts.back() * weight(bl[l]).transpose();
        z.rowwise() += bias(bl[l]).transpose();
        if (l + 1 < bl.size()) acts.push_back(z.cwiseMax(0.0));
    }

    // Loss and d loss / d logits.
    double loss = 0.0;
    RowMat dz(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < batch; ++r) {
        const double m = z.row(r).maxCoeff();
        const double sum = (z.row(r).array() - m).exp().sum();
        const double lse = m + std::log(sum);
        const auto y = labels[rows[static_cast<std::size_t>(r)]];
        if (y < 0 || static_cast<std::size_t>(y) >= shape.classes) throw Error("label out of range");
        loss += lse - z(r, static_cast<Eigen::Index>(y));
        dz.row(r) = (z.row(r).array() - lse).exp().matrix();
        dz(r, static_cast<Eigen::Index>(y)) -= 1.0;
    }
    const double inv_b = 1.0 / static_cast<double>(batch);
    loss *= inv_b;
    if (!grad) return loss;

    grad->assign(params.size(), 0.0);
    RowMat delta = dz * inv_b;
    for (std::size_t l = bl.size(); l-- > 0;) {
        const Block& b = bl[l];
        MutMap(grad->data() + b.w_offset, static_cast<Eigen::Index>(b.out),
               static_cast<Eigen::Index>(b.in)) = delta.transpose() * acts[l];
        MutVec(grad->data() + b.b_offset, static_cast<Eigen::Index>(b.out)) =
            delta.colwise().sum().transpose();
        if (l > 0) {
            RowMat back = delta * weight(b);
            delta = back.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
        }
    }
    return loss;
}

ProbeHead unpack_head(const HeadShape& shape, std::span<const double> params) {
    if (params.size() != shape.param_count()) throw Error("parameter vector has wrong length");
    std::vector<DenseLayer> layers;
    for (const Block& b : blocks(shape)) {
        DenseLayer layer{Matrix<float>(b.out, b.in), std::vector<float>(b.out)};
        for (std::size_t i = 0; i < b.out * b.in; ++i)
            layer.W.data()[i] = static_cast<float>(params[b.w_offset + i]);
        for (std::size_t o = 0; o < b.out; ++o) layer.b[o] = static_cast<float>(params[b.b_offset + o]);
        layers.push_back(std::move(layer));
    }
    if (shape.hidden == 0) return LinearHead{std::move(layers[0])};
    return MlpHead{{std::move(layers[0]), std::move(layers[1]), std::move(layers[2])}};
}

std::vector<double> pack_head(const ProbeHead& head) {
    std::vector<double> out;
    auto push = [&](const DenseLayer& l) {
        out.insert(out.end(), l.W.data().begin(), l.W.data().end());
        out.insert(out.end(), l.b.begin(), l.b.end());
    };
    if (const auto* lin = std::get_if<LinearHead>(&head)) {
        push(lin->layer);
    } else {
        for (const auto& l : std::get<MlpHead>(head).layers) push(l);
    }
    return out;
}

LinearHead train_linear_probe(const DatasetSplit& train, const ProbeConfig& cfg, TrainLog* log) {
    const HeadShape shape{train.d(), count_classes(train), 0};
    return std::get<LinearHead>(unpack_head(shape, run_sgd(shape, train, cfg, log)));
}

MlpHead train_mlp_probe(const DatasetSplit& train, const ProbeConfig& cfg, TrainLog* log) {
    cfg.validate();
    const HeadShape shape{train.d(), count_classes(train), cfg.hidden};
    return std::get<MlpHead>(unpack_head(shape, run_sgd(shape, train, cfg, log)));
}

std::vector<double> penultimate_row(const ProbeHead& head, std::span<const float> z) {
    std::vector<double> in(z.begin(), z.end());
    if (std::holds_alternative<LinearHead>(head)) return in;
    const auto& mlp = std::get<MlpHead>(head);
    std::vector<double> h;
    for (std::size_t l = 0; l < 2; ++l) {
        h.assign(mlp.layers[l].out_dim(), 0.0);
        apply_layer(mlp.layers[l], in, h);
        for (double& v : h) v = std::max(v, 0.0);
        in.swap(h);
    }
    return in;
}

void logits_row(const ProbeHead& head, std::span<const float> z, std::span<double> out) {
    apply_layer(output_layer(head), penultimate_row(head, z), out);
}

Matrix<double> predict_logits(const ProbeHead& head, const EmbeddingMatrix& m) {
    const HeadShape s = shape_of(head);
    if (m.cols() != s.d) {
        throw Error("dimension mismatch: head expects d=" + std::to_string(s.d) + ", got " +
                    std::to_string(m.cols()));
    }
    Matrix<double> out(m.rows(), s.classes);
    for (std::size_t i = 0; i < m.rows(); ++i) logits_row(head, m.row(i), out.row(i));
    return out;
}

std::size_t argmax(std::span<const double> v) noexcept {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

double accuracy(const ProbeHead& head, const DatasetSplit& split) {
    if (!split.labels) throw Error("accuracy requires labels on split " + split.name);
    const Matrix<double> logits = predict_logits(head, split.features);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        if (static_cast<std::int64_t>(argmax(logits.row(i))) == split.labels->values[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

void save_head(const std::filesystem::path& dir, const ProbeHead& head) {
    std::filesystem::create_directories(dir);
    const HeadShape s = shape_of(head);
    nlohmann::json meta{{"type", s.hidden == 0 ? "linear" : "mlp"},
                        {"d", s.d},
                        {"C", s.classes},
                        {"h", s.hidden}};
    auto write_layer = [&](const DenseLayer& l, const std::string& suffix) {
        write_matrix(dir / ("W" + suffix + ".npy"), l.W);
        write_matrix(dir / ("b" + suffix + ".npy"), EmbeddingMatrix(1, l.b.size(), l.b));
    };
    if (const auto* lin = std::get_if<LinearHead>(&head)) {
        write_layer(lin->layer, "");
    } else {
        const auto& mlp = std::get<MlpHead>(head);
        for (std::size_t l = 0; l < 3; ++l) write_layer(mlp.layers[l], std::to_string(l));
    }
    std::ofstream out(dir / "head.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "head.json").string());
    out << meta.dump(2) << "\n";
}

ProbeHead load_head(const std::filesystem::path& dir) {
    std::ifstream in(dir / "head.json");
    if (!in) throw IoError("cannot open " + (dir / "head.json").string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("invalid head.json: ") + e.what());
    }
    auto read_layer = [&](const std::string& suffix) {
        DenseLayer l;
        l.W = read_matrix(dir / ("W" + suffix + ".npy"));
        l.b = read_matrix(dir / ("b" + suffix + ".npy")).data();
        if (l.b.size() != l.W.rows()) throw IoError("bias length does not match weight rows");
        return l;
    };
    const std::string type = meta.value("type", "");
    ProbeHead head;
    if (type == "linear") {
        head = LinearHead{read_layer("")};
    } else if (type == "mlp") {
        head = MlpHead{{read_layer("0"), read_layer("1"), read_layer("2")}};
    } else {
        throw IoError("unknown head type '" + type + "'");
    }
    const HeadShape s = shape_of(head);
    if (meta.value("d", std::size_t{0}) != s.d || meta.value("C", std::size_t{0}) != s.classes) {
        throw IoError("head.json shape does not match stored arrays");
    }
    return head;
}

}  // namespace oodkit
