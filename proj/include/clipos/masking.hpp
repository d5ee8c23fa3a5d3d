#pragma once

#include <cstddef>
#include <vector>

#include "clipos/backbone/backbone.hpp"
#include "clipos/tensor.hpp"
#include "clipos/textbank.hpp"

namespace clipos {

/// Per-patch similarity to a class text embedding, min-max normalized per
/// image to [0, 1]. A constant raw map normalizes to 0.5 everywhere.
struct SimilarityMap {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec scores;  // row-major

    double at(std::size_t r, std::size_t c) const { return scores(static_cast<Eigen::Index>(r * cols + c)); }
    std::size_t cells() const { return rows * cols; }
};

/// Foreground (ID-relevant) and background (ID-irrelevant) cell indices,
/// both sorted ascending, disjoint and jointly covering the grid.
struct RegionPartition {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> foreground;
    std::vector<std::size_t> background;

    std::size_t cells() const { return rows * cols; }
    bool is_foreground(std::size_t cell) const;

    static RegionPartition from_mask(std::size_t rows, std::size_t cols, const std::vector<bool>& foreground);
    /// Every cell foreground.
    static RegionPartition whole(std::size_t rows, std::size_t cols);
};

struct MaskingConfig {
    double discrepancy = 0.1;
    double threshold = 0.5;
};

/// (x - min) / (max - min); a constant map becomes all 0.5.
SimilarityMap normalize_map(std::size_t rows, std::size_t cols, const Vec& raw);

/// Cosine similarity of surgery-path patch features with the ground-truth
/// class embedding, normalized.
SimilarityMap similarity_map(const PatchGrid& patches, const Vec& class_embedding);

/// Same map on the unmodified backbone path.
SimilarityMap clip_similarity_map(const Backbone& backbone, const Image& image, const Vec& class_embedding);

/// Cell is foreground iff s + discrepancy * (s - s_clip) > threshold.
/// May return an empty foreground; see ensure_foreground().
RegionPartition discrepancy_partition(const SimilarityMap& smap, const SimilarityMap& smap_clip,
                                      const MaskingConfig& cfg = {});

/// The corrected score s + discrepancy * (s - s_clip) per cell.
Vec discrepancy_scores(const SimilarityMap& smap, const SimilarityMap& smap_clip, const MaskingConfig& cfg = {});

/// Plain threshold of a single map: foreground iff s > threshold.
RegionPartition threshold_partition(const SimilarityMap& smap, double threshold = 0.5);

/// Empty foreground falls back to the single highest-scoring cell (lowest
/// index on ties), with a warning. Non-empty partitions pass through.
RegionPartition ensure_foreground(RegionPartition partition, const Vec& scores);

/// Top-K rank baseline: a cell is foreground iff the true class is among
/// the K ID classes most similar to that patch. The unknown row is not
/// ranked. Rank of the true class = 1 + number of classes strictly more
/// similar, so ties favour the true class.
RegionPartition topk_partition(const PatchGrid& patches, const TextEmbeddings& embeddings, std::size_t true_class,
                               std::size_t k);

}  // namespace clipos
