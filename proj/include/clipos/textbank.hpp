#pragma once

#include <memory>
#include <string>
#include <vector>

#include "clipos/backbone/backbone.hpp"
#include "clipos/rng.hpp"
#include "clipos/tensor.hpp"

namespace clipos {

struct PromptConfig {
    std::size_t token_len = 16;
    double init_std = 0.02;
    std::string unknown_name = "unknown";
};

/// Row-normalized text embeddings: rows 0..M-1 are the ID classes in
/// declared order, row M is the "unknown" prompt.
struct TextEmbeddings {
    Mat matrix;

    std::size_t num_prompts() const { return static_cast<std::size_t>(matrix.rows()); }
    std::size_t num_id_classes() const { return num_prompts() - 1; }
    std::size_t unknown_index() const { return num_prompts() - 1; }
    std::size_t dim() const { return static_cast<std::size_t>(matrix.cols()); }
    Vec row(std::size_t i) const { return matrix.row(static_cast<Eigen::Index>(i)).transpose(); }
};

/// M class prompts plus the unknown prompt, all sharing one learnable
/// context: "[SOT] ctx_1 .. ctx_L <class name tokens> [EOT]".
class PromptBank {
public:
    /// Context drawn from N(0, init_std^2).
    PromptBank(std::shared_ptr<const Backbone> backbone, std::vector<std::string> class_names, const PromptConfig& cfg,
               Rng& rng);
    /// Context supplied (e.g. from a checkpoint); shape token_len x text width.
    PromptBank(std::shared_ptr<const Backbone> backbone, std::vector<std::string> class_names, TokenMat context,
               std::string unknown_name = "unknown");

    std::size_t num_id_classes() const { return class_names_.size(); }
    std::size_t num_prompts() const { return class_names_.size() + 1; }
    std::size_t token_len() const { return static_cast<std::size_t>(context_.rows()); }
    const std::vector<std::string>& class_names() const { return class_names_; }
    const std::string& unknown_name() const { return unknown_name_; }
    double temperature() const { return backbone_->temperature(); }
    const Backbone& backbone() const { return *backbone_; }

    const TokenMat& context() const { return context_; }
    TokenMat& context() { return context_; }

    struct Forward {
        TextEmbeddings embeddings;
        std::vector<Vec> raw;  // unnormalized text features per prompt
        std::vector<TextTower::Cache> caches;
    };

    TextEmbeddings embed() const;
    Forward forward() const;

    /// Gradient of a scalar loss w.r.t. the context, given its gradient
    /// w.r.t. the normalized embedding matrix ((M+1) x dim).
    TokenMat backward(const Forward& fwd, const Mat& d_embeddings) const;

private:
    void init(const std::vector<std::string>& class_names);
    TokenMat prompt_tokens(std::size_t prompt) const;

    std::shared_ptr<const Backbone> backbone_;
    std::vector<std::string> class_names_;
    std::string unknown_name_;
    TokenMat context_;
    std::vector<std::vector<int>> name_ids_;  // per prompt, unknown last
};

/// Cosine similarities of a feature with every embedding row.
Vec similarity(const ImageFeature& feature, const TextEmbeddings& embeddings);
Vec similarity(const Vec& feature, const TextEmbeddings& embeddings);

/// Frozen template embeddings (one unit row per class), "{}" in the
/// template is replaced by the class name.
Mat template_embeddings(const Backbone& backbone, const std::vector<std::string>& class_names,
                        const std::string& text_template);

}  // namespace clipos
