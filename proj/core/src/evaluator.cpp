#include "oodkit/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "oodkit/matrix.hpp"

namespace oodkit {
namespace {

void check_scores(std::span<const double> id, std::span<const double> ood) {
    if (id.empty() || ood.empty()) throw Error("AUROC requires non-empty ID and OOD scores");
    for (double v : id)
        if (!std::isfinite(v)) throw Error("non-finite ID score");
    for (double v : ood)
        if (!std::isfinite(v)) throw Error("non-finite OOD score");
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return buf;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
    check_scores(id_scores, ood_scores);
    const std::size_t n_id = id_scores.size(), n_ood = ood_scores.size(), n = n_id + n_ood;

    std::vector<std::pair<double, bool>> pooled;  // (score, is_id)
    pooled.reserve(n);
    for (double v : id_scores) pooled.emplace_back(v, true);
    for (double v : ood_scores) pooled.emplace_back(v, false);
    std::sort(pooled.begin(), pooled.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    // Ranks are 1-based; a tie group spanning [i, j) gets the midrank (i + 1 + j) / 2.
    double id_rank_sum = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        std::size_t ids = 0;
        while (j < n && pooled[j].first == pooled[i].first) ids += pooled[j++].second;
        id_rank_sum += static_cast<double>(ids) * 0.5 * static_cast<double>(i + 1 + j);
        i = j;
    }
    const double nid = static_cast<double>(n_id);
    const double u = id_rank_sum - nid * (nid + 1.0) / 2.0;
    return std::clamp(u / (nid * static_cast<double>(n_ood)), 0.0, 1.0);
}

double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores, double tpr) {
    check_scores(id_scores, ood_scores);
    if (!(tpr > 0.0 && tpr <= 1.0)) throw Error("tpr must be in (0, 1]");
    std::vector<double> id(id_scores.begin(), id_scores.end());
    std::sort(id.begin(), id.end(), std::greater<>());
    const std::size_t n = id.size();

    // Smallest count k with k / n >= tpr; the k-th largest ID score is the threshold.
    auto k = static_cast<std::size_t>(std::ceil(tpr * static_cast<double>(n)));
    k = std::clamp<std::size_t>(k, 1, n);
    while (k > 1 && static_cast<double>(k - 1) / static_cast<double>(n) >= tpr) --k;
    while (k < n && static_cast<double>(k) / static_cast<double>(n) < tpr) ++k;
    const double threshold = id[k - 1];

    const auto accepted = std::count_if(ood_scores.begin(), ood_scores.end(),
                                        [&](double v) { return v >= threshold; });
    return static_cast<double>(accepted) / static_cast<double>(ood_scores.size());
}

EvalCell make_cell(std::string method, std::string ood_split, std::span<const double> id_scores,
                   std::span<const double> ood_scores) {
    return EvalCell{std::move(method),
                    std::move(ood_split),
                    auroc(id_scores, ood_scores),
                    fpr_at_tpr(id_scores, ood_scores, 0.95),
                    id_scores.size(),
                    ood_scores.size()};
}

std::vector<std::string> EvalReport::methods() const {
    std::vector<std::string> out;
    for (const auto& c : cells)
        if (std::find(out.begin(), out.end(), c.method) == out.end()) out.push_back(c.method);
    return out;
}

std::vector<std::string> EvalReport::ood_splits() const {
    std::vector<std::string> out;
    for (const auto& c : cells)
        if (std::find(out.begin(), out.end(), c.ood_split) == out.end()) out.push_back(c.ood_split);
    return out;
}

EvalReport build_report(std::vector<EvalCell> cells, ReportMeta meta) {
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& c : cells) {
        if (!seen.emplace(c.method, c.ood_split).second) {
            throw Error("duplicate cell (" + c.method + ", " + c.ood_split + ")");
        }
        if (!(c.auroc >= 0.0 && c.auroc <= 1.0) || !(c.fpr95 >= 0.0 && c.fpr95 <= 1.0)) {
            throw Error("cell (" + c.method + ", " + c.ood_split + ") out of [0, 1]");
        }
        if (c.n_id < 1 || c.n_ood < 1) throw Error("cell counts must be >= 1");
    }
    if (meta.config.empty()) meta.config = "{}";
    return EvalReport{std::move(meta.dataset), meta.id_accuracy, std::move(cells),
                      std::move(meta.failures), nlohmann::json::parse(meta.config).dump()};
}

ReportFormat report_format_from_string(std::string_view s) {
    if (s == "text" || s == "txt") return ReportFormat::Text;
    if (s == "csv") return ReportFormat::Csv;
    if (s == "json") return ReportFormat::Json;
    throw IoError("unknown report format '" + std::string(s) + "' (valid: text, csv, json)");
}

std::string_view extension(ReportFormat f) noexcept {
    switch (f) {
        case ReportFormat::Text: return "txt";
        case ReportFormat::Csv: return "csv";
        case ReportFormat::Json: return "json";
    }
    return "";
}

std::string render_report(const EvalReport& report, ReportFormat format) {
    std::ostringstream out;
    if (format == ReportFormat::Csv) {
        out << "method,ood_split,auroc,fpr95,n_id,n_ood\n";
        for (const auto& c : report.cells) {
            out << c.method << ',' << c.ood_split << ',' << format_double(c.auroc) << ','
                << format_double(c.fpr95) << ',' << c.n_id << ',' << c.n_ood << '\n';
        }
        return out.str();
    }
    if (format == ReportFormat::Json) {
        nlohmann::json cells = nlohmann::json::array();
        for (const auto& c : report.cells) {
            cells.push_back({{"method", c.method},
                             {"ood_split", c.ood_split},
                             {"auroc", c.auroc},
                             {"fpr95", c.fpr95},
                             {"n_id", c.n_id},
                             {"n_ood", c.n_ood}});
        }
        nlohmann::json failures = nlohmann::json::array();
        for (const auto& f : report.failures) failures.push_back({{"method", f.method}, {"message", f.message}});
        nlohmann::json j{{"dataset", report.dataset},
                         {"id_accuracy", report.id_accuracy ? nlohmann::json(*report.id_accuracy)
                                                            : nlohmann::json(nullptr)},
                         {"cells", std::move(cells)},
                         {"failures", std::move(failures)},
                         {"config", nlohmann::json::parse(report.config.empty() ? "{}" : report.config)}};
        return j.dump(2) + "\n";
    }

    const auto methods = report.methods();
    const auto columns = report.ood_splits();
    std::map<std::pair<std::string, std::string>, double> grid;
    for (const auto& c : report.cells) grid[{c.method, c.ood_split}] = c.auroc;
    std::map<std::string, double> column_max;
    for (const auto& c : report.cells) {
        auto [it, inserted] = column_max.emplace(c.ood_split, c.auroc);
        if (!inserted) it->second = std::max(it->second, c.auroc);
    }

    std::size_t label_w = std::string("AUROC (%)").size();
    for (const auto& m : methods) label_w = std::max(label_w, m.size());
    std::vector<std::size_t> col_w;
    for (const auto& c : columns) col_w.push_back(std::max<std::size_t>(c.size(), 7));

    out << "dataset: " << report.dataset << "\n";
    if (report.id_accuracy) out << "ID accuracy: " << percent(*report.id_accuracy) << "%\n";
    auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };
    auto lpad = [](const std::string& s, std::size_t w) { return std::string(w > s.size() ? w - s.size() : 0, ' ') + s; };

    out << pad("AUROC (%)", label_w);
    for (std::size_t i = 0; i < columns.size(); ++i) out << "  " << lpad(columns[i], col_w[i]) << ' ';
    out << "\n";
    for (const auto& m : methods) {
        out << pad(m, label_w);
        for (std::size_t i = 0; i < columns.size(); ++i) {
            auto it = grid.find({m, columns[i]});
            if (it == grid.end()) {
                out << "  " << lpad("-", col_w[i]) << ' ';
                continue;
            }
            const bool best = it->second == column_max[columns[i]];
            out << "  " << lpad(percent(it->second), col_w[i]) << (best ? '*' : ' ');
        }
        out << "\n";
    }
    for (const auto& f : report.failures) out << "failed: " << f.method << " (" << f.message << ")\n";
    return out.str();
}

EvalReport parse_report_json(std::string_view text) {
    try {
        const auto j = nlohmann::json::parse(text);
        EvalReport r;
        r.dataset = j.at("dataset").get<std::string>();
        if (!j.at("id_accuracy").is_null()) r.id_accuracy = j.at("id_accuracy").get<double>();
        for (const auto& c : j.at("cells")) {
            r.cells.push_back(EvalCell{c.at("method").get<std::string>(), c.at("ood_split").get<std::string>(),
                                       c.at("auroc").get<double>(), c.at("fpr95").get<double>(),
                                       c.at("n_id").get<std::size_t>(), c.at("n_ood").get<std::size_t>()});
        }
        for (const auto& f : j.at("failures")) {
            r.failures.push_back({f.at("method").get<std::string>(), f.at("message").get<std::string>()});
        }
        r.config = j.at("config").dump();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("invalid report JSON: ") + e.what());
    }
}

std::vector<EvalCell> parse_cells_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line != "method,ood_split,auroc,fpr95,n_id,n_ood") {
        throw IoError("CSV report header mismatch");
    }
    std::vector<EvalCell> cells;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_line(line);
        if (f.size() != 6) throw IoError("CSV row has " + std::to_string(f.size()) + " fields");
        try {
            cells.push_back(EvalCell{f[0], f[1], std::stod(f[2]), std::stod(f[3]),
                                     static_cast<std::size_t>(std::stoull(f[4])),
                                     static_cast<std::size_t>(std::stoull(f[5]))});
        } catch (const std::logic_error&) {
            throw IoError("malformed CSV row: " + line);
        }
    }
    return cells;
}

}  // namespace oodkit
