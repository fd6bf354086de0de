#include <fstream>
#include <map>

#include <json.hpp>

#include "oodkit/store.hpp"

namespace oodkit {

using nlohmann::json;

std::string_view to_string(Role role) noexcept {
    switch (role) {
        case Role::IdTrain: return "id_train";
        case Role::IdTest: return "id_test";
        case Role::OodTest: return "ood_test";
    }
    return "?";
}

Role role_from_string(std::string_view s) {
    if (s == "id_train") return Role::IdTrain;
    if (s == "id_test") return Role::IdTest;
    if (s == "ood_test") return Role::OodTest;
    throw IoError("unknown role '" + std::string(s) + "'");
}

std::filesystem::path Manifest::resolve(const std::string& relative) const {
    std::filesystem::path p(relative);
    return p.is_absolute() ? p : base_dir / p;
}

std::vector<std::string> Manifest::names_with_role(Role role) const {
    std::vector<std::string> out;
    for (const auto& [name, entry] : splits) {
        if (entry.role == role) out.push_back(name);
    }
    return out;
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    Manifest m;
    m.base_dir = path.parent_path();
    try {
        json j = json::parse(in);
        m.dataset = j.at("dataset").get<std::string>();
        for (const auto& [name, s] : j.at("splits").items()) {
            SplitEntry e;
            e.matrix = s.at("matrix").get<std::string>();
            if (s.contains("labels") && !s.at("labels").is_null()) {
                e.labels = s.at("labels").get<std::string>();
            }
            e.role = role_from_string(s.at("role").get<std::string>());
            if (s.contains("n")) e.n = s.at("n").get<std::size_t>();
            if (s.contains("d")) e.d = s.at("d").get<std::size_t>();
            m.splits.emplace(name, std::move(e));
        }
    } catch (const json::exception& e) {
        throw IoError("invalid manifest " + path.string() + ": " + e.what());
    }
    return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    json splits = json::object();
    for (const auto& [name, e] : manifest.splits) {
        json s;
        s["matrix"] = e.matrix;
        s["labels"] = e.labels ? json(*e.labels) : json(nullptr);
        s["role"] = std::string(to_string(e.role));
        if (e.n) s["n"] = *e.n;
        if (e.d) s["d"] = *e.d;
        splits[name] = std::move(s);
    }
    json j{{"dataset", manifest.dataset}, {"splits", std::move(splits)}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << j.dump(2) << "\n";
}

namespace {

// Most common feature dimension across readable splits; ties go to the
// id_train split's dimension, then the smaller value.
std::optional<std::size_t> reference_dim(const Manifest& manifest,
                                         const std::map<std::string, NpyHeader>& headers) {
    std::map<std::size_t, int> counts;
    std::optional<std::size_t> train_d;
    for (const auto& [name, h] : headers) {
        if (h.shape.size() != 2) continue;
        ++counts[h.shape[1]];
        if (manifest.splits.at(name).role == Role::IdTrain) train_d = h.shape[1];
    }
    if (counts.empty()) return std::nullopt;
    int best = 0;
    for (const auto& [d, c] : counts) best = std::max(best, c);
    if (train_d && counts[*train_d] == best) return train_d;
    for (const auto& [d, c] : counts) {
        if (c == best) return d;
    }
    return std::nullopt;
}

std::map<std::string, NpyHeader> readable_headers(const Manifest& manifest,
                                                  std::vector<std::string>* issues) {
    std::map<std::string, NpyHeader> headers;
    for (const auto& [name, e] : manifest.splits) {
        try {
            headers.emplace(name, read_npy_header(manifest.resolve(e.matrix)));
        } catch (const Error& err) {
            if (issues) issues->push_back("unreadable matrix: " + name + " (" + err.what() + ")");
        }
    }
    return headers;
}

}  // namespace

std::vector<std::string> validate_manifest(const Manifest& manifest) {
    std::vector<std::string> issues;
    auto count = [&](Role r) { return manifest.names_with_role(r).size(); };
    if (count(Role::IdTrain) == 0) issues.emplace_back("missing id_train role");
    if (count(Role::IdTrain) > 1) issues.emplace_back("duplicate id_train role");
    if (count(Role::IdTest) == 0) issues.emplace_back("missing id_test role");

    auto headers = readable_headers(manifest, &issues);
    auto ref_d = reference_dim(manifest, headers);
    for (const auto& [name, e] : manifest.splits) {
        if (e.role == Role::IdTrain && !e.labels) issues.push_back("id_train requires labels: " + name);
        auto it = headers.find(name);
        if (it == headers.end()) continue;
        const NpyHeader& h = it->second;
        if (h.descr != "<f4" || h.shape.size() != 2 || h.fortran_order) {
            issues.push_back("not a 2-D <f4 array: " + name);
            continue;
        }
        if (ref_d && h.shape[1] != *ref_d) issues.push_back("dimension mismatch: " + name);
        if (e.n && *e.n != h.shape[0]) issues.push_back("declared n mismatch: " + name);
        if (e.d && *e.d != h.shape[1]) issues.push_back("declared d mismatch: " + name);
        if (e.labels) {
            try {
                NpyHeader lh = read_npy_header(manifest.resolve(*e.labels));
                if (lh.shape.size() != 1 || lh.shape[0] != h.shape[0]) {
                    issues.push_back("label count mismatch: " + name);
                }
            } catch (const Error& err) {
                issues.push_back("unreadable labels: " + name + " (" + err.what() + ")");
            }
        }
    }
    return issues;
}

DatasetSplit load_split(const Manifest& manifest, const std::string& name) {
    auto it = manifest.splits.find(name);
    if (it == manifest.splits.end()) throw IoError("missing split '" + name + "'");
    const SplitEntry& e = it->second;
    if (e.role == Role::IdTrain && !e.labels) throw Error("id_train requires labels");

    DatasetSplit split;
    split.name = name;
    split.role = e.role;
    split.features = read_matrix(manifest.resolve(e.matrix));
    if (e.n && *e.n != split.n()) throw Error("declared n mismatch: " + name);
    if (e.d && *e.d != split.d()) throw Error("declared d mismatch: " + name);

    for (const auto& [other, h] : readable_headers(manifest, nullptr)) {
        if (other != name && h.shape.size() == 2 && h.shape[1] != split.d()) {
            throw Error("dimension mismatch: " + name + " has d=" + std::to_string(split.d()) +
                        " but " + other + " has d=" + std::to_string(h.shape[1]));
        }
    }

    if (e.labels) {
        split.labels = read_labels(manifest.resolve(*e.labels));
        if (split.labels->size() != split.n()) throw Error("label count mismatch: " + name);
        if (e.role == Role::IdTrain) split.warnings = class_coverage_warnings(*split.labels);
    }
    return split;
}

}  // namespace oodkit
