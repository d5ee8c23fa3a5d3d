#include "clipos/synthesis.hpp"

#include <algorithm>
#include <set>

#include <spdlog/spdlog.h>

#include "clipos/error.hpp"

namespace clipos {

double LambdaPolicy::draw(Rng& rng) const {
    return kind == Kind::fixed ? value : rng.uniform(low, high);
}

void LambdaPolicy::validate() const {
    if (kind == Kind::fixed) {
        if (!(value >= 0.0 && value <= 1.0)) {
            throw ConfigError("synthesis.lambda.value: must lie in [0, 1]");
        }
        return;
    }
    if (!(low >= 0.0 && high <= 1.0 && low <= high)) {
        throw ConfigError("synthesis.lambda: need 0 <= low <= high <= 1");
    }
}

Vec masked_pool(const PatchGrid& patches, const std::vector<std::size_t>& region) {
    if (region.empty()) {
        throw ContractError("masked_pool: empty region");
    }
    std::vector<std::size_t> cells = region;
    std::sort(cells.begin(), cells.end());
    Vec sum = Vec::Zero(static_cast<Eigen::Index>(patches.dim()));
    for (const auto c : cells) {
        if (c >= patches.cells()) {
            throw ContractError("masked_pool: cell " + std::to_string(c) + " outside grid");
        }
        sum += patches.tokens().row(static_cast<Eigen::Index>(c)).transpose();
    }
    return l2_normalized(sum / static_cast<double>(cells.size()));
}

Vec mix(const Vec& a, const Vec& b, double lambda) {
    if (a.size() != b.size()) {
        throw ContractError("mix: parents differ in dimension");
    }
    return lambda * a + (1.0 - lambda) * b;
}

std::vector<SyntheticOutlier> synthesize_outliers(const std::vector<PooledFeature>& pooled,
                                                  const LambdaPolicy& policy, Rng& rng) {
    policy.validate();
    std::vector<std::size_t> fg;
    std::set<std::size_t> classes;
    for (std::size_t i = 0; i < pooled.size(); ++i) {
        if (pooled[i].source == FeatureSource::foreground) {
            fg.push_back(i);
            classes.insert(pooled[i].class_id);
        }
    }
    std::vector<SyntheticOutlier> out;
    if (classes.size() < 2) {
        spdlog::warn("fewer than two ID classes in batch, no outliers synthesized");
        return out;
    }
    for (const auto i : fg) {
        for (const auto j : fg) {
            const auto& a = pooled[i];
            const auto& b = pooled[j];
            if (a.class_id == b.class_id) continue;
            SyntheticOutlier o;
            o.lambda = policy.draw(rng);
            o.class_a = a.class_id;
            o.class_b = b.class_id;
            o.source_a = i;
            o.source_b = j;
            o.raw = mix(a.vector, b.vector, o.lambda);
            o.vector = l2_normalized(o.raw);
            out.push_back(std::move(o));
        }
    }
    return out;
}

std::string to_string(FeatureSource source) {
    return source == FeatureSource::foreground ? "foreground" : "background";
}

}  // namespace clipos
