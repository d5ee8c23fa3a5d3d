#include "clipos/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "clipos/error.hpp"
#include "clipos/parallel.hpp"

namespace clipos {
namespace {

/// Numerically stable softmax of sims / tau.
Vec softmax(const Vec& sims, double tau) {
    const Vec z = sims / tau;
    const double top = z.maxCoeff();
    Vec e = (z.array() - top).exp().matrix();
    return e / e.sum();
}

double log_softmax_at(const Vec& sims, std::size_t target, double tau) {
    const Vec z = sims / tau;
    const double top = z.maxCoeff();
    const double lse = top + std::log((z.array() - top).exp().sum());
    return z(static_cast<Eigen::Index>(target)) - lse;
}

void check_tau(double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) {
        throw ContractError("temperature must be positive and finite");
    }
}

Vec sims_of(const Vec& feature, const Mat& rows) {
    if (feature.size() != rows.cols()) {
        throw ContractError("feature dim " + std::to_string(feature.size()) + " vs embedding dim " +
                            std::to_string(rows.cols()));
    }
    return rows * feature;
}

/// Cross-entropy toward `target` with gradient d/dE = (p - y) f^T / tau.
LossGrad cross_entropy_grad(const Vec& feature, const Mat& rows, std::size_t target, double tau) {
    check_tau(tau);
    const Vec sims = sims_of(feature, rows);
    LossGrad out;
    out.loss = -log_softmax_at(sims, target, tau);
    Vec d_logits = softmax(sims, tau);
    d_logits(static_cast<Eigen::Index>(target)) -= 1.0;
    out.d_embeddings = (d_logits / tau) * feature.transpose();
    return out;
}

}  // namespace

double softmax_cross_entropy(const Vec& sims, std::size_t target, double tau) {
    check_tau(tau);
    if (target >= static_cast<std::size_t>(sims.size())) {
        throw ContractError("softmax_cross_entropy: target out of range");
    }
    return -log_softmax_at(sims, target, tau);
}

double id_loss(const Vec& feature, const TextEmbeddings& embeddings, std::size_t true_class, double tau) {
    return id_loss_grad(feature, embeddings, true_class, tau).loss;
}

LossGrad id_loss_grad(const Vec& feature, const TextEmbeddings& embeddings, std::size_t true_class, double tau) {
    if (true_class >= embeddings.num_id_classes()) {
        throw ContractError("id_loss: class " + std::to_string(true_class) + " is not an ID class");
    }
    return cross_entropy_grad(feature, embeddings.matrix, true_class, tau);
}

double ood_loss(const Vec& feature, const TextEmbeddings& embeddings, double tau) {
    return ood_loss_grad(feature, embeddings, tau).loss;
}

LossGrad ood_loss_grad(const Vec& feature, const TextEmbeddings& embeddings, double tau) {
    return cross_entropy_grad(feature, embeddings.matrix, embeddings.unknown_index(), tau);
}

double entropy_max_loss(const Vec& feature, const TextEmbeddings& embeddings, double tau) {
    return entropy_max_loss_grad(feature, embeddings, tau).loss;
}

LossGrad entropy_max_loss_grad(const Vec& feature, const TextEmbeddings& embeddings, double tau) {
    check_tau(tau);
    const auto m = static_cast<Eigen::Index>(embeddings.num_id_classes());
    const Mat id_rows = embeddings.matrix.topRows(m);
    const Vec sims = sims_of(feature, id_rows);
    const Vec p = softmax(sims, tau);
    const Vec z = sims / tau;
    const double lse = z.maxCoeff() + std::log((z.array() - z.maxCoeff()).exp().sum());
    const Vec log_p = (z.array() - lse).matrix();
    LossGrad out;
    out.loss = p.dot(log_p);
    // d/dz_k sum p ln p = p_k (ln p_k - sum p ln p)
    const Vec d_logits = (p.array() * (log_p.array() - out.loss)).matrix();
    out.d_embeddings = Mat::Zero(embeddings.matrix.rows(), embeddings.matrix.cols());
    out.d_embeddings.topRows(m) = (d_logits / tau) * feature.transpose();
    return out;
}

BatchEvaluation evaluate_batch(const PromptBank& bank, const Batch& batch, double beta_loss,
                               OodObjective objective) {
    if (batch.id.empty()) {
        throw ContractError("evaluate_batch: batch has no ID features");
    }
    const auto fwd = bank.forward();
    const auto& emb = fwd.embeddings;
    const double tau = bank.temperature();

    Mat d_emb = Mat::Zero(emb.matrix.rows(), emb.matrix.cols());
    double id_sum = 0.0;
    const double id_weight = 1.0 / static_cast<double>(batch.id.size());
    for (const auto& s : batch.id) {
        const auto lg = id_loss_grad(s.feature, emb, s.label, tau);
        id_sum += lg.loss;
        d_emb += id_weight * lg.d_embeddings;
    }
    double ood_sum = 0.0;
    if (!batch.ood.empty()) {
        const double ood_weight = beta_loss / static_cast<double>(batch.ood.size());
        for (const auto& f : batch.ood) {
            const auto lg = objective == OodObjective::unknown_prompt ? ood_loss_grad(f, emb, tau)
                                                                      : entropy_max_loss_grad(f, emb, tau);
            ood_sum += lg.loss;
            d_emb += ood_weight * lg.d_embeddings;
        }
    }

    BatchEvaluation out;
    out.report.id_loss = id_sum * id_weight;
    out.report.ood_loss = batch.ood.empty() ? 0.0 : ood_sum / static_cast<double>(batch.ood.size());
    out.report.beta_loss = beta_loss;
    out.report.total = out.report.id_loss + beta_loss * out.report.ood_loss;
    out.d_context = bank.backward(fwd, d_emb);
    return out;
}

TrainingSet TrainingSet::from_episode(const Episode& episode, const Preparer& prepare) {
    if (episode.class_list.empty() || episode.samples.empty()) {
        throw ContractError("TrainingSet: empty episode");
    }
    std::vector<std::size_t> per_class(episode.class_list.size(), 0);
    TrainingSet set;
    set.num_classes_ = episode.class_list.size();
    for (const auto& s : episode.samples) {
        if (s.class_id >= set.num_classes_) {
            throw ContractError("TrainingSet: sample class out of range");
        }
        ++per_class[s.class_id];
    }
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        if (per_class[c] == 0) {
            throw ContractError("TrainingSet: class '" + episode.class_list[c] + "' has no samples");
        }
    }
    set.samples_.resize(episode.samples.size());
    parallel_for(episode.samples.size(), [&](std::size_t i) {
        PreparedSample p = prepare(episode.samples[i]);
        p.class_id = episode.samples[i].class_id;
        set.samples_[i] = std::move(p);
    });
    return set;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train.epochs: must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate: must be > 0");
    if (batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
    if (!(beta_loss >= 0.0)) throw ConfigError("train.beta_loss: must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum: must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay: must be >= 0");
    lambda.validate();
}

std::vector<SyntheticOutlier> episode_outliers(const TrainingSet& data, const TrainConfig& cfg) {
    if (!cfg.synthesize) return {};
    std::vector<PooledFeature> pooled;
    pooled.reserve(data.samples().size());
    for (const auto& s : data.samples()) {
        pooled.push_back({s.foreground, s.class_id, FeatureSource::foreground});
    }
    Rng rng(cfg.seed ^ fnv1a64("outliers"));
    return synthesize_outliers(pooled, cfg.lambda, rng);
}

Batch make_batch(const TrainingSet& data, const std::vector<std::size_t>& samples,
                 const std::vector<SyntheticOutlier>& outliers, const TrainConfig& cfg) {
    Batch batch;
    std::vector<bool> in_batch(data.samples().size(), false);
    for (const auto i : samples) {
        const auto& s = data.samples().at(i);
        in_batch[i] = true;
        batch.id.push_back({s.foreground, s.class_id});
        if (cfg.use_background && s.background) {
            batch.ood.push_back(*s.background);
        }
    }
    for (const auto& o : outliers) {
        if (o.source_a < in_batch.size() && in_batch[o.source_a]) {
            batch.ood.push_back(o.vector);
        }
    }
    return batch;
}

TrainResult train(PromptBank& bank, const TrainingSet& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.num_classes() != bank.num_id_classes()) {
        throw ContractError("train: episode has " + std::to_string(data.num_classes()) + " classes, bank has " +
                            std::to_string(bank.num_id_classes()));
    }
    const auto outliers = episode_outliers(data, cfg);
    Rng rng(cfg.seed);
    TrainResult result;
    TokenMat velocity = TokenMat::Zero(bank.context().rows(), bank.context().cols());
    std::vector<std::size_t> order(data.samples().size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = 0.5 * cfg.learning_rate *
                          (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                                          static_cast<double>(cfg.epochs)));
        rng.shuffle(order);
        LossReport sum;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            const std::vector<std::size_t> idx(order.begin() + static_cast<long>(start),
                                               order.begin() + static_cast<long>(stop));
            const Batch batch = make_batch(data, idx, outliers, cfg);
            auto step = evaluate_batch(bank, batch, cfg.beta_loss, cfg.ood_objective);
            if (!std::isfinite(step.report.total) || !step.d_context.allFinite()) {
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                   std::to_string(batches + 1));
            }
            const TokenMat grad = step.d_context + cfg.weight_decay * bank.context();
            velocity = cfg.momentum * velocity + grad;
            bank.context() -= lr * velocity;
            sum.id_loss += step.report.id_loss;
            sum.ood_loss += step.report.ood_loss;
            ++batches;
        }
        LossReport mean;
        mean.beta_loss = cfg.beta_loss;
        mean.id_loss = sum.id_loss / static_cast<double>(batches);
        mean.ood_loss = sum.ood_loss / static_cast<double>(batches);
        mean.total = mean.id_loss + cfg.beta_loss * mean.ood_loss;
        result.history.push_back(mean);
    }
    return result;
}

}  // namespace clipos
