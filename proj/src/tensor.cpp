#include "clipos/tensor.hpp"

#include <cmath>
#include <string>

#include "clipos/error.hpp"

namespace clipos {

PatchGrid::PatchGrid(std::size_t rows, std::size_t cols, std::size_t dim)
    : rows_(rows), cols_(cols), tokens_(TokenMat::Zero(static_cast<Eigen::Index>(rows * cols),
                                                       static_cast<Eigen::Index>(dim))) {}

PatchGrid::PatchGrid(std::size_t rows, std::size_t cols, TokenMat tokens)
    : rows_(rows), cols_(cols), tokens_(std::move(tokens)) {
    if (static_cast<std::size_t>(tokens_.rows()) != rows * cols) {
        throw ContractError("PatchGrid: token count " + std::to_string(tokens_.rows()) + " does not match " +
                            std::to_string(rows) + "x" + std::to_string(cols) + " grid");
    }
}

void PatchGrid::validate() const {
    if (rows_ == 0 || cols_ == 0 || dim() == 0) {
        throw ContractError("PatchGrid: rows, cols and dim must all be >= 1");
    }
    if (!all_finite(tokens_)) {
        throw NumericError("PatchGrid: non-finite patch embedding");
    }
}

bool all_finite(const TokenMat& m) {
    return m.allFinite();
}

Vec l2_normalized(const Vec& v) {
    const double norm = v.norm();
    if (!std::isfinite(norm) || norm == 0.0) {
        throw NumericError("cannot normalize a zero or non-finite vector");
    }
    return v / norm;
}

ImageFeature ImageFeature::from_raw(const Vec& raw) {
    return ImageFeature{l2_normalized(raw), true};
}

}  // namespace clipos
