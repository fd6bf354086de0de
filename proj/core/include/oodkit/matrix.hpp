#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace oodkit {

/// Base class for every domain failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or unreadable input (files, manifests, flags).
class IoError : public Error {
public:
    using Error::Error;
};

/// Row-major dense matrix. Used with T = float for embeddings and
/// T = double for intermediate quantities (logits, fitted state).
template <typename T>
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw Error("matrix data length does not match shape");
        }
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::vector<T>& data() noexcept { return data_; }
    const std::vector<T>& data() const noexcept { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

/// N x d feature matrix, one raw (un-normalized) embedding per row.
using EmbeddingMatrix = Matrix<float>;

struct LabelVector {
    std::vector<std::int64_t> values;
    std::size_t n_classes = 0;

    std::size_t size() const noexcept { return values.size(); }
    bool operator==(const LabelVector&) const = default;
};

/// Infers n_classes as max label + 1 and checks every label is in range.
LabelVector make_labels(std::vector<std::int64_t> values, std::size_t n_classes = 0);

/// Throws Error naming the first non-finite element as "(row,col)".
void check_finite(const EmbeddingMatrix& m);

}  // namespace oodkit
