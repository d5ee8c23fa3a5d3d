#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "clipos/config.hpp"
#include "clipos/data.hpp"
#include "clipos/masking.hpp"
#include "clipos/objective.hpp"
#include "clipos/scoring.hpp"
#include "clipos/textbank.hpp"

namespace clipos {

/// Frozen template embeddings for the ID classes plus the unknown name,
/// in TextEmbeddings layout. Masks are computed against these, so they do
/// not change while the prompt context trains.
TextEmbeddings mask_embeddings(const Backbone& backbone, const std::vector<std::string>& class_names,
                               const RunConfig& cfg);

struct MaskResult {
    SimilarityMap smap;
    SimilarityMap smap_clip;
    Vec scores;  // score the partition thresholds (corrected map for discrepancy mode)
    RegionPartition partition;
};

/// Partition of one analyzed image under cfg.masking. Mode none selects
/// every cell; an empty foreground falls back to the top-scoring cell.
MaskResult compute_mask(const ImageAnalysis& analysis, const TextEmbeddings& mask_emb, std::size_t class_id,
                        const RunConfig& cfg);
/// Surgery-path map against `surgery_emb`, clip-path map against `clip_emb`.
MaskResult compute_mask(const ImageAnalysis& analysis, const TextEmbeddings& surgery_emb,
                        const TextEmbeddings& clip_emb, std::size_t class_id, const RunConfig& cfg);

/// ID feature (pooled foreground, or the global feature without masking)
/// and pooled background of one training image.
PreparedSample prepare_sample(const Backbone& backbone, const Image& image, std::size_t class_id,
                              const TextEmbeddings& mask_emb, const RunConfig& cfg);

struct TrainOutcome {
    Episode episode;
    std::unique_ptr<PromptBank> bank;
    TrainResult result;
};

struct EvalOutcome {
    MetricsReport metrics;
    std::vector<ScoredSample> id_samples;
    std::vector<NamedScores> ood_sets;
};

class Pipeline {
public:
    explicit Pipeline(RunConfig cfg);
    Pipeline(RunConfig cfg, std::shared_ptr<const Backbone> backbone);

    const RunConfig& config() const { return cfg_; }
    const Backbone& backbone() const { return *backbone_; }
    std::shared_ptr<const Backbone> backbone_ptr() const { return backbone_; }

    Episode sample() const;
    TrainingSet prepare(const Episode& episode) const;
    /// Fresh bank with the context drawn from the train seed.
    std::unique_ptr<PromptBank> initial_bank(const std::vector<std::string>& class_names) const;
    TrainOutcome train() const;
    EvalOutcome evaluate(const PromptBank& bank) const;

private:
    RunConfig cfg_;
    std::shared_ptr<const Backbone> backbone_;
};

// Checkpoints: JSON with format_version, M, token_len, dim, class names,
// unknown name, train seed and the context matrix.
void save_checkpoint(const std::filesystem::path& path, const PromptBank& bank, const RunConfig& cfg);
std::unique_ptr<PromptBank> load_checkpoint(const std::filesystem::path& path,
                                            std::shared_ptr<const Backbone> backbone);

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossReport>& history);
void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& metrics);
std::string metrics_table(const MetricsReport& metrics);

enum class Variant { full, no_masking, no_synthesis, entropy_loss, topk_masking };
std::string to_string(Variant v);
Variant parse_variant(const std::string& text);
const std::vector<Variant>& all_variants();
RunConfig apply_variant(RunConfig cfg, Variant v);

// Commands. Each writes the resolved config beside its outputs.
struct TrainFiles {
    std::filesystem::path checkpoint;
    std::filesystem::path loss_csv;
};
TrainFiles cmd_train(const RunConfig& cfg);
MetricsReport cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint);
std::vector<std::pair<Variant, MetricsReport>> cmd_ablate(const RunConfig& cfg, const std::vector<Variant>& variants);
std::vector<std::pair<double, MetricsReport>> cmd_sweep_beta(const RunConfig& cfg, const std::vector<double>& betas);

/// Per image: <stem>_mask.png (255 foreground, 0 background, upsampled to
/// the input size), <stem>_heatmap.png and <stem>_scores.txt. With a
/// checkpoint the learned class prompt replaces the template for the
/// surgery-path map.
std::vector<MaskResult> cmd_mask(const RunConfig& cfg, const std::vector<std::filesystem::path>& images,
                                 const std::string& class_name, const std::filesystem::path& checkpoint,
                                 const std::filesystem::path& out_dir);

}  // namespace clipos
