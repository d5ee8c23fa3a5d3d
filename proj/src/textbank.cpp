#include "clipos/textbank.hpp"

#include <cmath>
#include <set>
#include <string>

#include "clipos/error.hpp"
#include "clipos/parallel.hpp"

namespace clipos {

PromptBank::PromptBank(std::shared_ptr<const Backbone> backbone, std::vector<std::string> class_names,
                       const PromptConfig& cfg, Rng& rng)
    : backbone_(std::move(backbone)), unknown_name_(cfg.unknown_name) {
    if (!backbone_) {
        throw ContractError("PromptBank: backbone required");
    }
    if (cfg.token_len == 0) {
        throw ConfigError("prompt.token_len: must be >= 1");
    }
    if (!(cfg.init_std >= 0.0)) {
        throw ConfigError("prompt.init_std: must be >= 0");
    }
    const auto width = static_cast<Eigen::Index>(backbone_->text().width());
    context_.resize(static_cast<Eigen::Index>(cfg.token_len), width);
    for (Eigen::Index i = 0; i < context_.rows(); ++i) {
        for (Eigen::Index j = 0; j < width; ++j) {
            context_(i, j) = rng.normal(0.0, cfg.init_std);
        }
    }
    init(class_names);
}

PromptBank::PromptBank(std::shared_ptr<const Backbone> backbone, std::vector<std::string> class_names,
                       TokenMat context, std::string unknown_name)
    : backbone_(std::move(backbone)), unknown_name_(std::move(unknown_name)), context_(std::move(context)) {
    if (!backbone_) {
        throw ContractError("PromptBank: backbone required");
    }
    if (context_.rows() == 0 || static_cast<std::size_t>(context_.cols()) != backbone_->text().width()) {
        throw ContractError("PromptBank: context must be token_len x " + std::to_string(backbone_->text().width()));
    }
    init(class_names);
}

void PromptBank::init(const std::vector<std::string>& class_names) {
    if (class_names.empty()) {
        throw ConfigError("class_names: at least one ID class required");
    }
    std::set<std::string> seen;
    for (const auto& name : class_names) {
        if (!seen.insert(name).second) {
            throw ConfigError("class_names: duplicate class '" + name + "'");
        }
        if (name == unknown_name_) {
            throw ConfigError("class_names: '" + name + "' collides with the unknown prompt");
        }
    }
    class_names_ = class_names;
    name_ids_.clear();
    const auto& tokenizer = backbone_->tokenizer();
    for (const auto& name : class_names_) {
        name_ids_.push_back(tokenizer.encode(name));
    }
    name_ids_.push_back(tokenizer.encode(unknown_name_));
    for (std::size_t p = 0; p < name_ids_.size(); ++p) {
        if (name_ids_[p].empty()) {
            throw ConfigError("class_names: prompt " + std::to_string(p) + " tokenizes to nothing");
        }
        const std::size_t length = 2 + token_len() + name_ids_[p].size();
        if (length > backbone_->text().context_length()) {
            throw ConfigError("prompt.token_len: prompt " + std::to_string(p) + " needs " + std::to_string(length) +
                              " tokens, text encoder allows " +
                              std::to_string(backbone_->text().context_length()));
        }
    }
}

TokenMat PromptBank::prompt_tokens(std::size_t prompt) const {
    const auto& tokenizer = backbone_->tokenizer();
    const auto& text = backbone_->text();
    const auto& names = name_ids_[prompt];
    const auto len = static_cast<Eigen::Index>(token_len());
    TokenMat tokens(len + static_cast<Eigen::Index>(names.size()) + 2, context_.cols());
    const int sot = tokenizer.start_token();
    const int eot = tokenizer.end_token();
    tokens.row(0) = text.token_embedding.row(sot);
    tokens.middleRows(1, len) = context_;
    tokens.middleRows(1 + len, static_cast<Eigen::Index>(names.size())) = text.embed(names);
    tokens.bottomRows(1) = text.token_embedding.row(eot);
    return tokens;
}

PromptBank::Forward PromptBank::forward() const {
    const std::size_t n = num_prompts();
    Forward fwd;
    fwd.raw.resize(n);
    fwd.caches.resize(n);
    const auto& text = backbone_->text();
    fwd.embeddings.matrix.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(text.embed_dim()));
    parallel_for(n, [&](std::size_t p) { fwd.raw[p] = text.forward(prompt_tokens(p), &fwd.caches[p]); });
    for (std::size_t p = 0; p < n; ++p) {
        fwd.embeddings.matrix.row(static_cast<Eigen::Index>(p)) = l2_normalized(fwd.raw[p]).transpose();
    }
    return fwd;
}

TextEmbeddings PromptBank::embed() const {
    return forward().embeddings;
}

TokenMat PromptBank::backward(const Forward& fwd, const Mat& d_embeddings) const {
    const std::size_t n = num_prompts();
    if (static_cast<std::size_t>(d_embeddings.rows()) != n ||
        d_embeddings.cols() != fwd.embeddings.matrix.cols()) {
        throw ContractError("PromptBank::backward: gradient shape mismatch");
    }
    const auto& text = backbone_->text();
    const auto len = static_cast<Eigen::Index>(token_len());
    std::vector<TokenMat> per_prompt(n);
    parallel_for(n, [&](std::size_t p) {
        const Vec& raw = fwd.raw[p];
        const double norm = raw.norm();
        const Vec unit = raw / norm;
        const Vec d_unit = d_embeddings.row(static_cast<Eigen::Index>(p)).transpose();
        const Vec d_raw = (d_unit - unit * unit.dot(d_unit)) / norm;
        per_prompt[p] = text.backward(d_raw, fwd.caches[p]).middleRows(1, len);
    });
    // Fixed summation order keeps the result independent of thread count.
    TokenMat d_context = TokenMat::Zero(context_.rows(), context_.cols());
    for (const auto& g : per_prompt) {
        d_context += g;
    }
    return d_context;
}

Vec similarity(const Vec& feature, const TextEmbeddings& embeddings) {
    if (static_cast<std::size_t>(feature.size()) != embeddings.dim()) {
        throw ContractError("similarity: feature dim " + std::to_string(feature.size()) + " vs embedding dim " +
                            std::to_string(embeddings.dim()));
    }
    const Vec unit = l2_normalized(feature);
    return embeddings.matrix * unit;
}

Vec similarity(const ImageFeature& feature, const TextEmbeddings& embeddings) {
    return similarity(feature.vector, embeddings);
}

Mat template_embeddings(const Backbone& backbone, const std::vector<std::string>& class_names,
                        const std::string& text_template) {
    const auto slot = text_template.find("{}");
    if (slot == std::string::npos) {
        throw ConfigError("masking.template: must contain {}");
    }
    Mat out(static_cast<Eigen::Index>(class_names.size()), static_cast<Eigen::Index>(backbone.embed_dim()));
    for (std::size_t i = 0; i < class_names.size(); ++i) {
        std::string text = text_template;
        text.replace(slot, 2, class_names[i]);
        out.row(static_cast<Eigen::Index>(i)) = backbone.encode_text(text).transpose();
    }
    return out;
}

}  // namespace clipos
