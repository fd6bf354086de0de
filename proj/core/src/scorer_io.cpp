#include <fstream>

#include <json.hpp>

#include "oodkit/scorers.hpp"

namespace oodkit {

using nlohmann::json;

namespace {

json params_json(const ScorerParams& p) {
    return json{{"k", p.k},
                {"react_percentile", p.react_percentile},
                {"dice_sparsity", p.dice_sparsity},
                {"vim_dim", p.vim_dim ? json(*p.vim_dim) : json(nullptr)},
                {"mahalanobis_shrinkage", p.mahalanobis_shrinkage}};
}

ScorerParams params_from(const json& j) {
    ScorerParams p;
    p.k = j.at("k").get<std::size_t>();
    p.react_percentile = j.at("react_percentile").get<double>();
    p.dice_sparsity = j.at("dice_sparsity").get<double>();
    if (!j.at("vim_dim").is_null()) p.vim_dim = j.at("vim_dim").get<std::size_t>();
    p.mahalanobis_shrinkage = j.at("mahalanobis_shrinkage").get<double>();
    return p;
}

void write_json(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError("invalid JSON in " + path.string() + ": " + e.what());
    }
}

std::filesystem::path sidecar(const std::filesystem::path& npy) {
    auto p = npy;
    return p.replace_extension(".json");
}

}  // namespace

std::string params_to_json(const ScorerParams& params) { return params_json(params).dump(); }

void save_scores(const std::filesystem::path& npy_path, const ScoreVector& scores,
                 const std::string& split, const ScorerParams& params) {
    write_vector_f64(npy_path, scores.values);
    write_json(sidecar(npy_path), json{{"method", std::string(to_string(scores.method))},
                                       {"split", split},
                                       {"params", params_json(params)}});
}

ScoreVector load_scores(const std::filesystem::path& npy_path) {
    const json meta = read_json(sidecar(npy_path));
    ScoreVector out;
    out.values = read_vector_f64(npy_path);
    out.method = method_from_string(meta.at("method").get<std::string>());
    return out;
}

void save_fitted(const std::filesystem::path& dir, const FittedScorer& fs) {
    std::filesystem::create_directories(dir);
    json meta{{"method", std::string(to_string(fs.method))},
              {"dim", fs.dim},
              {"params", params_json(fs.params)},
              {"warnings", fs.warnings},
              {"has_head", fs.head.has_value()}};
    if (fs.head) save_head(dir / "head", *fs.head);

    std::visit(
        [&](const auto& st) {
            using T = std::decay_t<decltype(st)>;
            if constexpr (std::is_same_v<T, ReActState>) {
                meta["threshold"] = st.threshold;
            } else if constexpr (std::is_same_v<T, DiceState>) {
                write_matrix_f64(dir / "mask.npy", st.mask);
                save_head(dir / "masked_head", st.masked_head);
            } else if constexpr (std::is_same_v<T, KlMatchState>) {
                write_matrix_f64(dir / "templates.npy", st.templates);
                std::vector<double> present(st.present.begin(), st.present.end());
                write_vector_f64(dir / "present.npy", present);
            } else if constexpr (std::is_same_v<T, MahalanobisState>) {
                write_matrix_f64(dir / "means.npy", st.means);
                write_matrix_f64(dir / "precision.npy", st.precision);
            } else if constexpr (std::is_same_v<T, SubspaceState>) {
                write_vector_f64(dir / "offset.npy", st.offset);
                write_matrix_f64(dir / "basis.npy", st.basis);
                meta["alpha"] = st.alpha;
            } else if constexpr (std::is_same_v<T, KnnState>) {
                write_matrix(dir / "reference.npy", st.reference);
                meta["knn_k"] = st.k;
            }
        },
        fs.state);
    write_json(dir / "state.json", meta);
}

FittedScorer load_fitted(const std::filesystem::path& dir) {
    const json meta = read_json(dir / "state.json");
    FittedScorer fs;
    try {
        fs.method = method_from_string(meta.at("method").get<std::string>());
        fs.dim = meta.at("dim").get<std::size_t>();
        fs.params = params_from(meta.at("params"));
        fs.warnings = meta.at("warnings").get<std::vector<std::string>>();
        if (meta.at("has_head").get<bool>()) fs.head = load_head(dir / "head");

        switch (fs.method) {
            case Method::ReAct: fs.state = ReActState{meta.at("threshold").get<double>()}; break;
            case Method::DICE:
                fs.state = DiceState{read_matrix_f64(dir / "mask.npy"), load_head(dir / "masked_head")};
                break;
            case Method::KLMatch: {
                KlMatchState st{read_matrix_f64(dir / "templates.npy"), {}};
                for (double v : read_vector_f64(dir / "present.npy")) st.present.push_back(v != 0.0);
                fs.state = std::move(st);
                break;
            }
            case Method::Mahalanobis:
                fs.state = MahalanobisState{read_matrix_f64(dir / "means.npy"),
                                            read_matrix_f64(dir / "precision.npy")};
                break;
            case Method::Residual:
            case Method::ViM:
                fs.state = SubspaceState{read_vector_f64(dir / "offset.npy"), read_matrix_f64(dir / "basis.npy"),
                                         meta.at("alpha").get<double>()};
                break;
            case Method::KNN:
                fs.state = KnnState{read_matrix(dir / "reference.npy"), meta.at("knn_k").get<std::size_t>()};
                break;
            default: break;
        }
    } catch (const json::exception& e) {
        throw IoError("invalid state.json in " + dir.string() + ": " + e.what());
    }
    if (requires_head(fs.method) && !fs.head) throw IoError("fitted state is missing its head");
    return fs;
}

}  // namespace oodkit
