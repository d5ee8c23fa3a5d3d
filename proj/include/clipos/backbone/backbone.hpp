#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clipos/backbone/layers.hpp"
#include "clipos/backbone/safetensors.hpp"
#include "clipos/backbone/tokenizer.hpp"
#include "clipos/kernels.hpp"
#include "clipos/tensor.hpp"

namespace clipos {

/// Patch-context incorporation: each cell gains beta_ctx times the mean of
/// its 3x3 neighbourhood (centre included).
struct ContextConfig {
    double beta_ctx = 0.1;
    Padding padding = Padding::replicate;
};

struct VVAttentionConfig {
    double scale = 1.0;
    std::size_t heads = 1;
};

/// Resize shortest side to image_size, centre-crop, scale to [0,1], then
/// (x - mean) / std per channel.
struct PreprocessConfig {
    std::size_t image_size = 224;
    std::array<double, 3> mean{0.48145466, 0.4578275, 0.40821073};
    std::array<double, 3> std{0.26862954, 0.26130258, 0.27577711};
};

struct ToyBackboneConfig {
    std::uint64_t seed = 7;
    std::size_t image_size = 32;
    std::size_t patch_size = 8;
    std::size_t width = 16;
    std::size_t embed_dim = 16;
    std::size_t text_width = 16;
    std::size_t text_layers = 1;
    std::size_t text_heads = 2;
    std::size_t context_length = 24;
    double temperature = 0.05;
    std::vector<std::string> vocabulary;  // empty selects default_toy_vocabulary()
    // Content words carry a shared salience direction that text head 0 attends to.
    double salience = 1.0;
    double content_focus = 6.0;
    std::vector<std::string> function_words = {"a", "photo", "of", "the"};
};

struct PretrainedBackboneConfig {
    std::filesystem::path weights;  // Hugging Face CLIPModel .safetensors
    std::filesystem::path vocab;    // vocab.json
    std::filesystem::path merges;   // merges.txt
    std::size_t vision_heads = 12;
    std::size_t text_heads = 8;
    double layer_norm_eps = 1e-5;
};

struct BackboneConfig {
    std::string kind = "toy";  // "toy" or "pretrained"
    ToyBackboneConfig toy;
    PretrainedBackboneConfig pretrained;
    PreprocessConfig preprocess;
};

std::vector<std::string> default_toy_vocabulary();

/// out = grid + beta_ctx * mean3x3(grid). Identity for beta_ctx == 0.
PatchGrid patch_context_incorporate(const PatchGrid& grid, const ContextConfig& cfg);

/// softmax(scale * V V^T) V over the row-major flattened grid.
PatchGrid vv_attention(const PatchGrid& grid, const VVAttentionConfig& cfg);

struct VisionTower {
    enum class Pool { class_token, mean };

    std::size_t image_size = 0;
    std::size_t patch_size = 0;
    std::size_t channels = 3;
    Mat patch_weight;     // width x (channels * patch * patch), flattened c, y, x
    Vec class_embedding;  // empty: no class token
    TokenMat position;    // empty: no positional embedding
    std::optional<nn::LayerNorm> ln_pre;
    std::vector<nn::Block> blocks;
    std::optional<nn::LayerNorm> ln_post;
    nn::Linear proj;
    Pool pool = Pool::mean;

    std::size_t grid_side() const { return image_size / patch_size; }
    std::size_t width() const { return static_cast<std::size_t>(patch_weight.rows()); }
    std::size_t embed_dim() const { return proj.out_features(); }
    bool has_class_token() const { return class_embedding.size() > 0; }

    /// Activations of the final block needed by both feature paths.
    struct Trace {
        TokenMat values;  // value tokens of the final attention block
        TokenMat output;  // final block output
    };

    TokenMat patchify(const Image& image) const;
    Trace run(const Image& image) const;
};

struct TextTower {
    TokenMat token_embedding;  // vocab x width
    TokenMat position;         // context_length x width
    std::vector<nn::Block> blocks;
    std::optional<nn::LayerNorm> ln_final;
    nn::Linear proj;

    std::size_t width() const { return static_cast<std::size_t>(token_embedding.cols()); }
    std::size_t embed_dim() const { return proj.out_features(); }
    std::size_t context_length() const { return static_cast<std::size_t>(position.rows()); }

    struct Cache {
        std::vector<nn::Block::Cache> blocks;
        nn::LayerNorm::Cache ln_final;
        Eigen::Index length = 0;
    };

    TokenMat embed(std::span<const int> ids) const;

    /// Sequence must end with the end-of-text token; returns the projected,
    /// unnormalized feature at that last position. Causal masking makes the
    /// result independent of any padding after it, so none is added.
    Vec forward(const TokenMat& token_embeddings, Cache* cache = nullptr) const;

    /// Gradient w.r.t. the token embeddings passed to forward().
    TokenMat backward(const Vec& d_feature, const Cache& cache) const;
};

/// Per-image features of both the surgery and the unmodified path.
struct ImageAnalysis {
    PatchGrid surgery_patches;  // v-v path, joint embedding space
    PatchGrid clip_patches;     // unmodified path, joint embedding space
    ImageFeature global;
};

/// Frozen vision-language backbone. Immutable after construction; every
/// method is const and safe to call from several threads.
class Backbone {
public:
    Backbone(VisionTower vision, TextTower text, std::shared_ptr<const Tokenizer> tokenizer, double temperature,
             std::string kind);

    static Backbone create(const BackboneConfig& cfg);
    static Backbone toy(const ToyBackboneConfig& cfg);
    static Backbone pretrained(const PretrainedBackboneConfig& cfg);

    /// Builds from tensors named as in a Hugging Face CLIPModel checkpoint.
    static Backbone from_hf_tensors(const std::map<std::string, safetensors::Tensor>& tensors,
                                    const PretrainedBackboneConfig& cfg, std::shared_ptr<const Tokenizer> tokenizer);
    /// Inverse of from_hf_tensors. Requires every optional component
    /// (class token, position, layer norms, MLPs, biases) to be present.
    std::map<std::string, safetensors::Tensor> to_hf_tensors() const;

    const VisionTower& vision() const { return vision_; }
    const TextTower& text() const { return text_; }
    const Tokenizer& tokenizer() const { return *tokenizer_; }
    double temperature() const { return temperature_; }
    const std::string& kind() const { return kind_; }

    std::size_t image_size() const { return vision_.image_size; }
    std::size_t grid_rows() const { return vision_.grid_side(); }
    std::size_t grid_cols() const { return vision_.grid_side(); }
    std::size_t embed_dim() const { return vision_.embed_dim(); }

    /// Value tokens of the final visual attention block.
    PatchGrid encode_patches(const Image& image) const;
    /// Unmodified path: final-block patch outputs projected to the joint space.
    PatchGrid clip_patch_features(const Image& image) const;
    /// Value tokens -> context incorporation -> v-v attention -> output
    /// projection -> joint space. No residual, no MLP.
    PatchGrid surgery_patch_features(const Image& image, const ContextConfig& ctx) const;
    /// Pooled, L2-normalized image embedding.
    ImageFeature encode_image(const Image& image) const;
    /// All of the above from a single forward pass.
    ImageAnalysis analyze(const Image& image, const ContextConfig& ctx) const;

    /// Normalized embedding of a fixed text (no learnable context).
    Vec encode_text(std::string_view text) const;

    VVAttentionConfig vv_config() const;

private:
    TokenMat project(const TokenMat& tokens) const;
    PatchGrid patch_rows(const TokenMat& tokens) const;
    PatchGrid surgery_from_values(const TokenMat& values, const ContextConfig& ctx) const;
    ImageFeature pool(const TokenMat& output) const;

    VisionTower vision_;
    TextTower text_;
    std::shared_ptr<const Tokenizer> tokenizer_;
    double temperature_;
    std::string kind_;
};

}  // namespace clipos
