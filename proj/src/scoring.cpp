#include "clipos/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "clipos/error.hpp"

namespace clipos {

McmResult mcm_from_sims(const Vec& sims, std::size_t num_id_classes, double tau, const ScoringConfig& cfg) {
    if (!(tau > 0.0)) {
        throw ContractError("mcm_score: temperature must be positive");
    }
    if (num_id_classes == 0 || static_cast<std::size_t>(sims.size()) < num_id_classes) {
        throw ContractError("mcm_score: similarity vector shorter than the ID class count");
    }
    const auto m = static_cast<Eigen::Index>(num_id_classes);
    const Eigen::Index used = cfg.include_unknown ? sims.size() : m;
    const Vec z = sims.head(used) / tau;
    const double top = z.maxCoeff();
    const Vec e = (z.array() - top).exp().matrix();
    Eigen::Index best = 0;
    const double best_e = e.head(m).maxCoeff(&best);
    return {best_e / e.sum(), static_cast<std::size_t>(best)};
}

McmResult mcm_score(const Vec& feature, const TextEmbeddings& embeddings, double tau, const ScoringConfig& cfg) {
    return mcm_from_sims(similarity(feature, embeddings), embeddings.num_id_classes(), tau, cfg);
}

double auroc(const std::vector<double>& scores_id, const std::vector<double>& scores_ood) {
    if (scores_id.empty() || scores_ood.empty()) {
        throw ContractError("auroc: both score lists must be non-empty");
    }
    const std::size_t n_id = scores_id.size();
    const std::size_t n = n_id + scores_ood.size();
    std::vector<std::pair<double, bool>> all;
    all.reserve(n);
    for (const double s : scores_id) all.emplace_back(s, true);
    for (const double s : scores_ood) all.emplace_back(s, false);
    for (const auto& [s, _] : all) {
        if (std::isnan(s)) throw NumericError("auroc: NaN score");
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    // Twice the midrank keeps every rank an exact integer.
    std::uint64_t rank_sum_x2 = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && all[j].first == all[i].first) ++j;
        const std::uint64_t midrank_x2 = (i + 1) + j;  // ranks i+1 .. j
        for (std::size_t k = i; k < j; ++k) {
            if (all[k].second) rank_sum_x2 += midrank_x2;
        }
        i = j;
    }
    const double u = static_cast<double>(rank_sum_x2) / 2.0 -
                     static_cast<double>(n_id) * static_cast<double>(n_id + 1) / 2.0;
    return u / (static_cast<double>(n_id) * static_cast<double>(scores_ood.size()));
}

MetricsReport summarize(const std::vector<ScoredSample>& id_samples, const std::vector<NamedScores>& ood_sets) {
    if (id_samples.empty()) {
        throw ContractError("summarize: no ID samples");
    }
    if (ood_sets.empty()) {
        throw ContractError("summarize: no OOD datasets");
    }
    MetricsReport report;
    std::vector<double> id_scores;
    std::size_t correct = 0;
    for (const auto& s : id_samples) {
        id_scores.push_back(s.score);
        if (s.predicted_class == s.label) ++correct;
    }
    report.id_count = id_samples.size();
    report.id_accuracy = static_cast<double>(correct) / static_cast<double>(id_samples.size());
    double sum = 0.0;
    for (const auto& set : ood_sets) {
        std::vector<double> ood_scores;
        for (const auto& s : set.samples) ood_scores.push_back(s.score);
        DatasetMetrics m;
        m.dataset = set.dataset;
        m.count = set.samples.size();
        m.auroc = auroc(id_scores, ood_scores);
        sum += m.auroc;
        report.per_dataset.push_back(m);
    }
    report.average_auroc = sum / static_cast<double>(ood_sets.size());
    return report;
}

}  // namespace clipos
