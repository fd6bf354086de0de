#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "oodkit/matrix.hpp"

namespace oodkit {

// ---------------------------------------------------------------------------
// NPY v1.0 arrays
// ---------------------------------------------------------------------------

/// Header of an NPY file: dtype descriptor (e.g. "<f4") and C-order shape.
struct NpyHeader {
    std::string descr;
    std::vector<std::size_t> shape;
    bool fortran_order = false;

    std::size_t element_count() const;
};

/// Parses only the header of an NPY file. Throws IoError on bad magic,
/// unsupported version, or a malformed header dictionary.
NpyHeader read_npy_header(const std::filesystem::path& path);

/// Writes/reads a float32 2-D array ("<f4"). Non-finite values are rejected
/// in both directions; the error names the offending (row,col).
void write_matrix(const std::filesystem::path& path, const EmbeddingMatrix& m);
EmbeddingMatrix read_matrix(const std::filesystem::path& path);

/// float64 2-D arrays ("<f8"), used for persisted fitted state.
void write_matrix_f64(const std::filesystem::path& path, const Matrix<double>& m);
Matrix<double> read_matrix_f64(const std::filesystem::path& path);

/// float64 1-D vectors ("<f8").
void write_vector_f64(const std::filesystem::path& path, std::span<const double> v);
std::vector<double> read_vector_f64(const std::filesystem::path& path);

/// int64 1-D label arrays ("<i8"). When n_classes is 0 it is inferred as
/// max label + 1. Throws "label out of range" for negative or too-large labels.
void write_labels(const std::filesystem::path& path, const LabelVector& labels);
LabelVector read_labels(const std::filesystem::path& path, std::size_t n_classes = 0);

/// One "class <c> absent" message per class in [0, n_classes) with no rows.
std::vector<std::string> class_coverage_warnings(const LabelVector& labels);

// ---------------------------------------------------------------------------
// Manifests and splits
// ---------------------------------------------------------------------------

enum class Role { IdTrain, IdTest, OodTest };

std::string_view to_string(Role role) noexcept;
Role role_from_string(std::string_view s);

struct SplitEntry {
    std::string matrix;                 // relative to the manifest directory
    std::optional<std::string> labels;  // relative to the manifest directory
    Role role = Role::IdTest;
    std::optional<std::size_t> n;       // declared shape, checked against headers
    std::optional<std::size_t> d;
};

struct Manifest {
    std::string dataset;
    std::map<std::string, SplitEntry> splits;
    std::filesystem::path base_dir;  // directory relative paths resolve against

    std::filesystem::path resolve(const std::string& relative) const;
    /// Split names carrying the given role, in name order.
    std::vector<std::string> names_with_role(Role role) const;
};

/// Throws IoError if the file cannot be read or does not match the schema
/// { "dataset": str, "splits": { name: { "matrix", "labels", "role" [, "n", "d"] } } }.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct DatasetSplit {
    std::string name;
    Role role = Role::IdTest;
    EmbeddingMatrix features;
    std::optional<LabelVector> labels;
    std::vector<std::string> warnings;

    std::size_t n() const noexcept { return features.rows(); }
    std::size_t d() const noexcept { return features.cols(); }
};

/// Loads a split and cross-checks it against the manifest. Errors: unknown
/// split, dimension mismatch with other splits, "id_train requires labels",
/// label/row count mismatch, and anything read_matrix/read_labels raise.
DatasetSplit load_split(const Manifest& manifest, const std::string& name);

/// Returns one human-readable issue per violated manifest rule; empty when
/// the manifest is well formed. Only file headers are read.
std::vector<std::string> validate_manifest(const Manifest& manifest);

}  // namespace oodkit
