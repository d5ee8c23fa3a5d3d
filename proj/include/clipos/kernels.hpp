#pragma once

// Grid kernels on the surgery path. Each kernel has a serial reference and
// an OpenMP version; the parallel version distributes independent output
// cells, so both produce bit-identical results.

#include <cstddef>

#include "clipos/tensor.hpp"

namespace clipos {

enum class Padding { replicate, zero };

namespace kernels {

namespace serial {

/// out = grid + beta * mean3x3(grid), channelwise.
PatchGrid context_incorporate(const PatchGrid& grid, double beta, Padding padding);

/// softmax(scale * V V^T) V per head over the flattened grid tokens.
/// dim must be divisible by heads; scale applies to every head.
PatchGrid vv_attention(const PatchGrid& grid, double scale, std::size_t heads);

/// Cosine similarity of every cell with `direction` (zero cells give 0).
Vec cosine_map(const PatchGrid& grid, const Vec& direction);

}  // namespace serial

namespace parallel {

PatchGrid context_incorporate(const PatchGrid& grid, double beta, Padding padding);
PatchGrid vv_attention(const PatchGrid& grid, double scale, std::size_t heads);
Vec cosine_map(const PatchGrid& grid, const Vec& direction);

}  // namespace parallel

/// Attention weight matrix of a single head (cells x cells), exposed for
/// inspection and tests.
Mat vv_attention_weights(const PatchGrid& grid, double scale, std::size_t head, std::size_t heads);

}  // namespace kernels
}  // namespace clipos
