#include "clipos/masking.hpp"

#include <algorithm>
#include <string>

#include <spdlog/spdlog.h>

#include "clipos/error.hpp"
#include "clipos/kernels.hpp"

namespace clipos {
namespace {

void require_same_shape(const SimilarityMap& a, const SimilarityMap& b) {
    if (a.rows != b.rows || a.cols != b.cols || a.scores.size() != b.scores.size() ||
        static_cast<std::size_t>(a.scores.size()) != a.cells()) {
        throw ContractError("similarity maps differ in shape: " + std::to_string(a.rows) + "x" +
                            std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
    }
}

}  // namespace

bool RegionPartition::is_foreground(std::size_t cell) const {
    return std::binary_search(foreground.begin(), foreground.end(), cell);
}

RegionPartition RegionPartition::from_mask(std::size_t rows, std::size_t cols, const std::vector<bool>& mask) {
    if (mask.size() != rows * cols) {
        throw ContractError("RegionPartition: mask size does not match grid");
    }
    RegionPartition p;
    p.rows = rows;
    p.cols = cols;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        (mask[i] ? p.foreground : p.background).push_back(i);
    }
    return p;
}

RegionPartition RegionPartition::whole(std::size_t rows, std::size_t cols) {
    return from_mask(rows, cols, std::vector<bool>(rows * cols, true));
}

SimilarityMap normalize_map(std::size_t rows, std::size_t cols, const Vec& raw) {
    if (rows == 0 || cols == 0 || static_cast<std::size_t>(raw.size()) != rows * cols) {
        throw ContractError("normalize_map: raw map does not match " + std::to_string(rows) + "x" +
                            std::to_string(cols));
    }
    if (!raw.allFinite()) {
        throw NumericError("normalize_map: non-finite similarity");
    }
    SimilarityMap map;
    map.rows = rows;
    map.cols = cols;
    const double lo = raw.minCoeff();
    const double hi = raw.maxCoeff();
    if (hi - lo <= 0.0) {
        map.scores = Vec::Constant(raw.size(), 0.5);
    } else {
        map.scores = ((raw.array() - lo) / (hi - lo)).matrix();
    }
    return map;
}

SimilarityMap similarity_map(const PatchGrid& patches, const Vec& class_embedding) {
    if (static_cast<std::size_t>(class_embedding.size()) != patches.dim()) {
        throw ContractError("similarity_map: embedding dim " + std::to_string(class_embedding.size()) +
                            " vs patch dim " + std::to_string(patches.dim()));
    }
    return normalize_map(patches.rows(), patches.cols(), kernels::parallel::cosine_map(patches, class_embedding));
}

SimilarityMap clip_similarity_map(const Backbone& backbone, const Image& image, const Vec& class_embedding) {
    return similarity_map(backbone.clip_patch_features(image), class_embedding);
}

Vec discrepancy_scores(const SimilarityMap& smap, const SimilarityMap& smap_clip, const MaskingConfig& cfg) {
    require_same_shape(smap, smap_clip);
    return smap.scores + cfg.discrepancy * (smap.scores - smap_clip.scores);
}

RegionPartition discrepancy_partition(const SimilarityMap& smap, const SimilarityMap& smap_clip,
                                      const MaskingConfig& cfg) {
    const Vec corrected = discrepancy_scores(smap, smap_clip, cfg);
    std::vector<bool> mask(smap.cells());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = corrected(static_cast<Eigen::Index>(i)) > cfg.threshold;
    }
    return RegionPartition::from_mask(smap.rows, smap.cols, mask);
}

RegionPartition threshold_partition(const SimilarityMap& smap, double threshold) {
    std::vector<bool> mask(smap.cells());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = smap.scores(static_cast<Eigen::Index>(i)) > threshold;
    }
    return RegionPartition::from_mask(smap.rows, smap.cols, mask);
}

RegionPartition ensure_foreground(RegionPartition partition, const Vec& scores) {
    if (!partition.foreground.empty()) {
        return partition;
    }
    if (static_cast<std::size_t>(scores.size()) != partition.cells() || scores.size() == 0) {
        throw ContractError("ensure_foreground: scores do not match grid");
    }
    Eigen::Index best = 0;
    scores.maxCoeff(&best);
    spdlog::warn("empty foreground region, falling back to cell {}", best);
    std::vector<bool> mask(partition.cells(), false);
    mask[static_cast<std::size_t>(best)] = true;
    return RegionPartition::from_mask(partition.rows, partition.cols, mask);
}

RegionPartition topk_partition(const PatchGrid& patches, const TextEmbeddings& embeddings, std::size_t true_class,
                               std::size_t k) {
    const std::size_t m = embeddings.num_id_classes();
    if (k < 1 || k > m) {
        throw ContractError("topk_partition: K=" + std::to_string(k) + " outside 1.." + std::to_string(m));
    }
    if (true_class >= m) {
        throw ContractError("topk_partition: true class " + std::to_string(true_class) + " is not an ID class");
    }
    if (embeddings.dim() != patches.dim()) {
        throw ContractError("topk_partition: embedding dim does not match patch dim");
    }
    std::vector<Vec> sims(m);
    for (std::size_t c = 0; c < m; ++c) {
        sims[c] = kernels::parallel::cosine_map(patches, embeddings.row(c));
    }
    std::vector<bool> mask(patches.cells());
    for (std::size_t cell = 0; cell < mask.size(); ++cell) {
        const auto i = static_cast<Eigen::Index>(cell);
        const double own = sims[true_class](i);
        std::size_t higher = 0;
        for (std::size_t c = 0; c < m; ++c) {
            if (sims[c](i) > own) ++higher;
        }
        mask[cell] = higher + 1 <= k;
    }
    return RegionPartition::from_mask(patches.rows(), patches.cols(), mask);
}

}  // namespace clipos
