#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace clipos {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
/// One token per row. Row-major so a token is a contiguous span.
using TokenMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// rows x cols grid of dim-dimensional patch embeddings. Cells are stored
/// row-major as the rows of a (rows*cols) x dim token matrix, which is also
/// the token order used by every attention computation.
class PatchGrid {
public:
    PatchGrid() = default;
    PatchGrid(std::size_t rows, std::size_t cols, std::size_t dim);
    PatchGrid(std::size_t rows, std::size_t cols, TokenMat tokens);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t cells() const noexcept { return rows_ * cols_; }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(tokens_.cols()); }

    std::size_t index(std::size_t row, std::size_t col) const noexcept { return row * cols_ + col; }

    double& at(std::size_t row, std::size_t col, std::size_t d) { return tokens_(index(row, col), d); }
    double at(std::size_t row, std::size_t col, std::size_t d) const { return tokens_(index(row, col), d); }

    auto cell(std::size_t row, std::size_t col) { return tokens_.row(index(row, col)); }
    auto cell(std::size_t row, std::size_t col) const { return tokens_.row(index(row, col)); }

    TokenMat& tokens() noexcept { return tokens_; }
    const TokenMat& tokens() const noexcept { return tokens_; }

    bool same_shape(const PatchGrid& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_ && dim() == other.dim();
    }

    /// Throws ContractError on empty shape, NumericError on non-finite values.
    void validate() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    TokenMat tokens_;
};

/// Preprocessed image, channel-major (C x H x W).
struct Image {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> data;

    Image() = default;
    Image(std::size_t c, std::size_t h, std::size_t w) : channels(c), height(h), width(w), data(c * h * w, 0.0) {}

    double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
    double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
};

/// Pooled global image embedding.
struct ImageFeature {
    Vec vector;
    bool normalized = false;

    /// L2-normalizes; a zero or non-finite vector has no direction and
    /// raises NumericError.
    static ImageFeature from_raw(const Vec& raw);
};

/// Unit-norm copy of v. Throws NumericError when v has zero or non-finite norm.
Vec l2_normalized(const Vec& v);

bool all_finite(const TokenMat& m);

}  // namespace clipos
