#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace oodkit {

/// Area under the ROC curve with ID as the positive class, computed as the
/// Mann-Whitney statistic over midranks of the pooled scores. Equals
/// P(id > ood) + P(id == ood) / 2. Throws on empty or non-finite input.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

/// False-positive rate at the largest threshold t that still accepts at
/// least `tpr` of the ID scores (s >= t); returns the fraction of OOD >= t.
double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores,
                  double tpr = 0.95);

struct EvalCell {
    std::string method;
    std::string ood_split;
    double auroc = 0.0;
    double fpr95 = 0.0;
    std::size_t n_id = 0;
    std::size_t n_ood = 0;

    bool operator==(const EvalCell&) const = default;
};

EvalCell make_cell(std::string method, std::string ood_split, std::span<const double> id_scores,
                   std::span<const double> ood_scores);

struct MethodFailure {
    std::string method;
    std::string message;
    bool operator==(const MethodFailure&) const = default;
};

struct EvalReport {
    std::string dataset;
    std::optional<double> id_accuracy;
    std::vector<EvalCell> cells;
    std::vector<MethodFailure> failures;
    std::string config;  // compact JSON object text, "{}" when empty

    /// Row and column labels in first-appearance order.
    std::vector<std::string> methods() const;
    std::vector<std::string> ood_splits() const;

    bool operator==(const EvalReport&) const = default;
};

struct ReportMeta {
    std::string dataset;
    std::optional<double> id_accuracy;
    std::vector<MethodFailure> failures;
    std::string config = "{}";
};

/// Validates cells (AUROC/FPR in [0,1], counts >= 1, unique (method, split))
/// and assembles the report.
EvalReport build_report(std::vector<EvalCell> cells, ReportMeta meta);

enum class ReportFormat { Text, Csv, Json };
ReportFormat report_format_from_string(std::string_view s);
std::string_view extension(ReportFormat f) noexcept;

/// Text: AUROC percentages with two decimals, methods as rows, OOD splits as
/// columns, '*' after each column maximum. CSV: method,ood_split,auroc,fpr95,
/// n_id,n_ood with round-trippable numbers. JSON: every report field.
std::string render_report(const EvalReport& report, ReportFormat format);

EvalReport parse_report_json(std::string_view text);
std::vector<EvalCell> parse_cells_csv(std::string_view text);

}  // namespace oodkit
