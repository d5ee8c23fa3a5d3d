#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "clipos/tensor.hpp"
#include "clipos/textbank.hpp"

namespace clipos {

struct ScoringConfig {
    /// Put the unknown prompt in the softmax denominator. The score and the
    /// prediction still range over ID classes only.
    bool include_unknown = false;
};

struct ScoredSample {
    double score = 0.0;
    std::size_t predicted_class = 0;
    bool is_id = false;
    std::size_t label = 0;  // meaningful for ID samples only
};

struct McmResult {
    double score = 0.0;
    std::size_t predicted_class = 0;
};

/// Maximum softmax probability of sims / tau over the ID classes.
McmResult mcm_from_sims(const Vec& sims, std::size_t num_id_classes, double tau, const ScoringConfig& cfg = {});
McmResult mcm_score(const Vec& feature, const TextEmbeddings& embeddings, double tau, const ScoringConfig& cfg = {});

/// P(id > ood) + 0.5 P(id == ood), via midranks in O(n log n).
double auroc(const std::vector<double>& scores_id, const std::vector<double>& scores_ood);

struct DatasetMetrics {
    std::string dataset;
    double auroc = 0.0;
    std::size_t count = 0;
};

struct MetricsReport {
    std::vector<DatasetMetrics> per_dataset;
    double average_auroc = 0.0;
    double id_accuracy = 0.0;
    std::size_t id_count = 0;
};

struct NamedScores {
    std::string dataset;
    std::vector<ScoredSample> samples;
};

/// One AUROC per OOD set against the shared ID set, their macro average,
/// and top-1 ID accuracy.
MetricsReport summarize(const std::vector<ScoredSample>& id_samples, const std::vector<NamedScores>& ood_sets);

}  // namespace clipos
