#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "clipos/data.hpp"
#include "clipos/synthesis.hpp"
#include "clipos/tensor.hpp"
#include "clipos/textbank.hpp"

namespace clipos {

/// Loss value with its gradient w.r.t. the (normalized) embedding matrix.
struct LossGrad {
    double loss = 0.0;
    Mat d_embeddings;
};

/// -log softmax(sims / tau)[target] over all entries of `sims`.
double softmax_cross_entropy(const Vec& sims, std::size_t target, double tau);

/// Cross-entropy toward the true ID class over all M+1 prompts.
double id_loss(const Vec& feature, const TextEmbeddings& embeddings, std::size_t true_class, double tau);
LossGrad id_loss_grad(const Vec& feature, const TextEmbeddings& embeddings, std::size_t true_class, double tau);

/// Cross-entropy toward the unknown prompt over all M+1 prompts.
double ood_loss(const Vec& feature, const TextEmbeddings& embeddings, double tau);
LossGrad ood_loss_grad(const Vec& feature, const TextEmbeddings& embeddings, double tau);

/// sum p ln p of the softmax over the M ID prompts only, i.e. the negative
/// entropy; minimizing it pushes OOD features toward uniform ID scores.
double entropy_max_loss(const Vec& feature, const TextEmbeddings& embeddings, double tau);
LossGrad entropy_max_loss_grad(const Vec& feature, const TextEmbeddings& embeddings, double tau);

enum class OodObjective { unknown_prompt, entropy };

struct LossReport {
    double id_loss = 0.0;
    double ood_loss = 0.0;
    double beta_loss = 1.0;
    double total = 0.0;
};

struct LabeledFeature {
    Vec feature;  // unit norm
    std::size_t label = 0;
};

/// Features for one optimization step.
struct Batch {
    std::vector<LabeledFeature> id;
    std::vector<Vec> ood;
};

struct BatchEvaluation {
    LossReport report;
    TokenMat d_context;  // gradient of report.total w.r.t. the context
};

/// total = mean(id terms) + beta_loss * mean(ood terms); an empty OOD set
/// contributes 0.
BatchEvaluation evaluate_batch(const PromptBank& bank, const Batch& batch, double beta_loss, OodObjective objective);

/// Per-image features derived from one episode image: the pooled
/// foreground (or whole-image) feature and, when the masking left a
/// non-empty background, the pooled background feature.
struct PreparedSample {
    std::size_t class_id = 0;
    Vec foreground;
    std::optional<Vec> background;
};

/// Training input. It can only be built from an Episode, so nothing but
/// the episode's ID images reaches the optimizer.
class TrainingSet {
public:
    using Preparer = std::function<PreparedSample(const EpisodeSample&)>;

    /// `prepare` runs concurrently across samples and must be thread-safe.
    static TrainingSet from_episode(const Episode& episode, const Preparer& prepare);

    const std::vector<PreparedSample>& samples() const { return samples_; }
    std::size_t num_classes() const { return num_classes_; }

private:
    TrainingSet() = default;
    std::vector<PreparedSample> samples_;
    std::size_t num_classes_ = 0;
};

struct TrainConfig {
    std::size_t epochs = 10;
    double learning_rate = 0.002;
    std::size_t batch_size = 8;
    double beta_loss = 1.0;
    std::uint64_t seed = 0;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    OodObjective ood_objective = OodObjective::unknown_prompt;
    bool synthesize = true;       // mixup outliers from foreground features
    bool use_background = true;   // pooled background features as OOD
    LambdaPolicy lambda;

    void validate() const;
};

struct TrainResult {
    std::vector<LossReport> history;  // one per epoch, mean over its batches
};

/// SGD with momentum, weight decay and a per-epoch cosine learning-rate
/// schedule over the bank's context. Outliers come from episode_outliers();
/// sample order is reshuffled each epoch from Rng(cfg.seed). Reported losses are measured before each update.
/// A non-finite loss aborts with NumericError.
TrainResult train(PromptBank& bank, const TrainingSet& data, const TrainConfig& cfg);

/// Outliers mixed from the foreground features of every cross-class pair of
/// training samples; source indices refer to data.samples(). The lambdas
/// are drawn once from Rng(cfg.seed ^ fnv1a64("outliers")). Empty when
/// cfg.synthesize is off.
std::vector<SyntheticOutlier> episode_outliers(const TrainingSet& data, const TrainConfig& cfg);

/// Step batch for `samples` (indices into data): their ID features, their
/// background features if cfg.use_background, and the outliers whose
/// source_a is among them.
Batch make_batch(const TrainingSet& data, const std::vector<std::size_t>& samples,
                 const std::vector<SyntheticOutlier>& outliers, const TrainConfig& cfg);

}  // namespace clipos
