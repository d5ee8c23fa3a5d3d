#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "clipos/rng.hpp"
#include "clipos/tensor.hpp"

namespace clipos {

enum class FeatureSource { foreground, background };

struct PooledFeature {
    Vec vector;  // unit norm
    std::size_t class_id = 0;  // 0-based ID class
    FeatureSource source = FeatureSource::foreground;
};

struct SyntheticOutlier {
    Vec raw;     // lambda * a + (1 - lambda) * b, before normalization
    Vec vector;  // raw, L2-normalized
    double lambda = 0.5;
    std::size_t class_a = 0;
    std::size_t class_b = 0;
    std::size_t source_a = 0;  // indices into the pooled list
    std::size_t source_b = 0;
};

struct LambdaPolicy {
    enum class Kind { uniform, fixed };
    Kind kind = Kind::uniform;
    double low = 0.4;
    double high = 0.6;
    double value = 0.5;  // used when kind == fixed

    double draw(Rng& rng) const;
    void validate() const;
};

/// Mean of the region's cells, then L2-normalized. Cells are summed in
/// ascending index order regardless of the order given.
Vec masked_pool(const PatchGrid& patches, const std::vector<std::size_t>& region);

/// lambda * a + (1 - lambda) * b.
Vec mix(const Vec& a, const Vec& b, double lambda);

/// One outlier per ordered pair (i, j) of foreground features with
/// different classes, in index order; lambda drawn per pair. Background
/// features are ignored. Fewer than two classes gives an empty result.
std::vector<SyntheticOutlier> synthesize_outliers(const std::vector<PooledFeature>& pooled,
                                                  const LambdaPolicy& policy, Rng& rng);

std::string to_string(FeatureSource source);

}  // namespace clipos
