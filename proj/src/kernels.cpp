#include "clipos/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "clipos/error.hpp"

namespace clipos::kernels {
namespace {

// Per-cell bodies shared by the serial and OpenMP drivers, so both paths
// perform the exact same floating-point operations in the same order.

void context_cell(const PatchGrid& grid, double beta, Padding padding, std::size_t row, std::size_t col,
                  TokenMat& out) {
    const auto rows = static_cast<long>(grid.rows());
    const auto cols = static_cast<long>(grid.cols());
    const std::size_t dim = grid.dim();
    const std::size_t dst = grid.index(row, col);
    for (std::size_t d = 0; d < dim; ++d) {
        double sum = 0.0;
        for (long dr = -1; dr <= 1; ++dr) {
            for (long dc = -1; dc <= 1; ++dc) {
                long r = static_cast<long>(row) + dr;
                long c = static_cast<long>(col) + dc;
                if (r < 0 || r >= rows || c < 0 || c >= cols) {
                    if (padding == Padding::zero) {
                        continue;
                    }
                    r = std::clamp(r, 0L, rows - 1);
                    c = std::clamp(c, 0L, cols - 1);
                }
                sum += grid.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c), d);
            }
        }
        out(static_cast<Eigen::Index>(dst), static_cast<Eigen::Index>(d)) =
            grid.at(row, col, d) + beta * (sum / 9.0);
    }
}

void check_heads(const PatchGrid& grid, std::size_t heads) {
    if (heads == 0 || grid.dim() % heads != 0) {
        throw ContractError("vv_attention: dim " + std::to_string(grid.dim()) + " not divisible by " +
                            std::to_string(heads) + " heads");
    }
}

// Softmax weights of token `query` against all tokens for one head.
// Returns false when a logit is non-finite.
bool attention_row(const TokenMat& tokens, double scale, std::size_t query, std::size_t offset, std::size_t width,
                   std::vector<double>& weights) {
    const auto n = static_cast<std::size_t>(tokens.rows());
    const auto q = tokens.row(static_cast<Eigen::Index>(query))
                       .segment(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(width));
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
        const double logit = scale * q.dot(tokens.row(static_cast<Eigen::Index>(j))
                                               .segment(static_cast<Eigen::Index>(offset),
                                                        static_cast<Eigen::Index>(width)));
        if (!std::isfinite(logit)) {
            return false;
        }
        weights[j] = logit;
        max_logit = std::max(max_logit, logit);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        weights[j] = std::exp(weights[j] - max_logit);
        total += weights[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
        weights[j] /= total;
    }
    return true;
}

bool vv_cell(const PatchGrid& grid, double scale, std::size_t heads, std::size_t query, std::vector<double>& weights,
             TokenMat& out) {
    const TokenMat& tokens = grid.tokens();
    const std::size_t width = grid.dim() / heads;
    const auto n = static_cast<std::size_t>(tokens.rows());
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t offset = h * width;
        if (!attention_row(tokens, scale, query, offset, width, weights)) {
            return false;
        }
        for (std::size_t d = offset; d < offset + width; ++d) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                acc += weights[j] * tokens(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(d));
            }
            out(static_cast<Eigen::Index>(query), static_cast<Eigen::Index>(d)) = acc;
        }
    }
    return true;
}

double cosine_cell(const PatchGrid& grid, const Vec& unit_direction, std::size_t cell) {
    const auto token = grid.tokens().row(static_cast<Eigen::Index>(cell));
    const double norm = token.norm();
    if (norm == 0.0) {
        return 0.0;
    }
    return token.dot(unit_direction) / norm;
}

Vec unit_direction(const PatchGrid& grid, const Vec& direction) {
    if (static_cast<std::size_t>(direction.size()) != grid.dim()) {
        throw ContractError("cosine_map: direction has dim " + std::to_string(direction.size()) + ", grid has " +
                            std::to_string(grid.dim()));
    }
    return l2_normalized(direction);
}

[[noreturn]] void throw_non_finite() {
    throw NumericError("vv_attention: non-finite attention logit");
}

}  // namespace

namespace serial {

PatchGrid context_incorporate(const PatchGrid& grid, double beta, Padding padding) {
    grid.validate();
    PatchGrid out(grid.rows(), grid.cols(), grid.dim());
    for (std::size_t r = 0; r < grid.rows(); ++r) {
        for (std::size_t c = 0; c < grid.cols(); ++c) {
            context_cell(grid, beta, padding, r, c, out.tokens());
        }
    }
    return out;
}

PatchGrid vv_attention(const PatchGrid& grid, double scale, std::size_t heads) {
    grid.validate();
    check_heads(grid, heads);
    PatchGrid out(grid.rows(), grid.cols(), grid.dim());
    std::vector<double> weights(grid.cells());
    for (std::size_t i = 0; i < grid.cells(); ++i) {
        if (!vv_cell(grid, scale, heads, i, weights, out.tokens())) {
            throw_non_finite();
        }
    }
    return out;
}

Vec cosine_map(const PatchGrid& grid, const Vec& direction) {
    const Vec unit = unit_direction(grid, direction);
    Vec out(static_cast<Eigen::Index>(grid.cells()));
    for (std::size_t i = 0; i < grid.cells(); ++i) {
        out(static_cast<Eigen::Index>(i)) = cosine_cell(grid, unit, i);
    }
    return out;
}

}  // namespace serial

namespace parallel {

PatchGrid context_incorporate(const PatchGrid& grid, double beta, Padding padding) {
    grid.validate();
    PatchGrid out(grid.rows(), grid.cols(), grid.dim());
    const auto cells = static_cast<long>(grid.cells());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < cells; ++i) {
        const auto cell = static_cast<std::size_t>(i);
        context_cell(grid, beta, padding, cell / grid.cols(), cell % grid.cols(), out.tokens());
    }
    return out;
}

PatchGrid vv_attention(const PatchGrid& grid, double scale, std::size_t heads) {
    grid.validate();
    check_heads(grid, heads);
    PatchGrid out(grid.rows(), grid.cols(), grid.dim());
    const auto cells = static_cast<long>(grid.cells());
    std::atomic<bool> failed{false};
#pragma omp parallel
    {
        std::vector<double> weights(grid.cells());
#pragma omp for schedule(static)
        for (long i = 0; i < cells; ++i) {
            if (!vv_cell(grid, scale, heads, static_cast<std::size_t>(i), weights, out.tokens())) {
                failed.store(true, std::memory_order_relaxed);
            }
        }
    }
    if (failed.load()) {
        throw_non_finite();
    }
    return out;
}

Vec cosine_map(const PatchGrid& grid, const Vec& direction) {
    const Vec unit = unit_direction(grid, direction);
    Vec out(static_cast<Eigen::Index>(grid.cells()));
    const auto cells = static_cast<long>(grid.cells());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < cells; ++i) {
        out(i) = cosine_cell(grid, unit, static_cast<std::size_t>(i));
    }
    return out;
}

}  // namespace parallel

Mat vv_attention_weights(const PatchGrid& grid, double scale, std::size_t head, std::size_t heads) {
    grid.validate();
    check_heads(grid, heads);
    if (head >= heads) {
        throw ContractError("vv_attention_weights: head index out of range");
    }
    const std::size_t width = grid.dim() / heads;
    const auto n = static_cast<Eigen::Index>(grid.cells());
    Mat weights(n, n);
    std::vector<double> row(grid.cells());
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!attention_row(grid.tokens(), scale, static_cast<std::size_t>(i), head * width, width, row)) {
            throw_non_finite();
        }
        for (Eigen::Index j = 0; j < n; ++j) {
            weights(i, j) = row[static_cast<std::size_t>(j)];
        }
    }
    return weights;
}

}  // namespace clipos::kernels
