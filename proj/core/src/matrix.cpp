#include "oodkit/matrix.hpp"

#include <algorithm>
#include <cmath>

namespace oodkit {

LabelVector make_labels(std::vector<std::int64_t> values, std::size_t n_classes) {
    std::int64_t max_label = -1;
    for (std::int64_t v : values) {
        if (v < 0) throw Error("label out of range: " + std::to_string(v));
        max_label = std::max(max_label, v);
    }
    if (n_classes == 0) {
        n_classes = static_cast<std::size_t>(max_label + 1);
    } else if (max_label >= static_cast<std::int64_t>(n_classes)) {
        throw Error("label out of range: " + std::to_string(max_label));
    }
    return LabelVector{std::move(values), n_classes};
}

void check_finite(const EmbeddingMatrix& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            if (!std::isfinite(m(r, c))) {
                throw Error("non-finite value at (" + std::to_string(r) + "," +
                            std::to_string(c) + ")");
            }
        }
    }
}

}  // namespace oodkit
