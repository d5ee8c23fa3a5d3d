#include "clipos/backbone/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "clipos/error.hpp"
#include "clipos/rng.hpp"

namespace clipos {

std::vector<std::string> default_toy_vocabulary() {
    return {"a",     "photo", "of",    "the",   "unknown", "background", "airplane", "automobile", "bird",
            "cat",   "deer",  "dog",   "frog",  "horse",   "ship",       "truck",    "apple",      "tree",
            "car",   "flower", "house", "fish",  "chair",   "cloud",      "rock",     "lamp",       "x"};
}

PatchGrid patch_context_incorporate(const PatchGrid& grid, const ContextConfig& cfg) {
    if (!(cfg.beta_ctx >= 0.0)) {
        throw ContractError("patch_context_incorporate: beta_ctx must be >= 0");
    }
    return kernels::parallel::context_incorporate(grid, cfg.beta_ctx, cfg.padding);
}

PatchGrid vv_attention(const PatchGrid& grid, const VVAttentionConfig& cfg) {
    if (!(cfg.scale > 0.0)) {
        throw ContractError("vv_attention: scale must be > 0");
    }
    return kernels::parallel::vv_attention(grid, cfg.scale, cfg.heads);
}

// ---------------------------------------------------------------- vision

TokenMat VisionTower::patchify(const Image& image) const {
    if (image.channels != channels || image.height != image_size || image.width != image_size) {
        throw ContractError("backbone: expected " + std::to_string(channels) + "x" + std::to_string(image_size) + "x" +
                            std::to_string(image_size) + " image, got " + std::to_string(image.channels) + "x" +
                            std::to_string(image.height) + "x" + std::to_string(image.width));
    }
    const std::size_t side = grid_side();
    TokenMat patches(static_cast<Eigen::Index>(side * side),
                     static_cast<Eigen::Index>(channels * patch_size * patch_size));
    for (std::size_t gr = 0; gr < side; ++gr) {
        for (std::size_t gc = 0; gc < side; ++gc) {
            const auto row = static_cast<Eigen::Index>(gr * side + gc);
            Eigen::Index col = 0;
            for (std::size_t c = 0; c < channels; ++c) {
                for (std::size_t y = 0; y < patch_size; ++y) {
                    for (std::size_t x = 0; x < patch_size; ++x) {
                        patches(row, col++) = image.at(c, gr * patch_size + y, gc * patch_size + x);
                    }
                }
            }
        }
    }
    return patches;
}

VisionTower::Trace VisionTower::run(const Image& image) const {
    if (blocks.empty()) {
        throw ContractError("backbone: vision tower has no blocks");
    }
    const TokenMat patches = patchify(image);
    TokenMat x = patches * patch_weight.transpose();
    if (has_class_token()) {
        TokenMat with_cls(x.rows() + 1, x.cols());
        with_cls.row(0) = class_embedding.transpose();
        with_cls.bottomRows(x.rows()) = x;
        x = std::move(with_cls);
    }
    if (position.size() > 0) {
        if (position.rows() != x.rows()) {
            throw ContractError("backbone: position embedding has " + std::to_string(position.rows()) +
                                " rows for " + std::to_string(x.rows()) + " tokens");
        }
        x += position;
    }
    if (ln_pre) {
        x = ln_pre->forward(x);
    }
    for (std::size_t i = 0; i + 1 < blocks.size(); ++i) {
        x = blocks[i].forward(x, false);
    }
    const nn::Block& last = blocks.back();
    Trace trace;
    trace.values = last.attn.v.forward(last.attention_input(x));
    trace.output = last.forward(x, false);
    if (!all_finite(trace.output) || !all_finite(trace.values)) {
        throw NumericError("backbone: non-finite activations in vision tower");
    }
    return trace;
}

// ---------------------------------------------------------------- text

TokenMat TextTower::embed(std::span<const int> ids) const {
    TokenMat out(static_cast<Eigen::Index>(ids.size()), token_embedding.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= token_embedding.rows()) {
            throw ContractError("text: token id " + std::to_string(ids[i]) + " out of range");
        }
        out.row(static_cast<Eigen::Index>(i)) = token_embedding.row(ids[i]);
    }
    return out;
}

Vec TextTower::forward(const TokenMat& token_embeddings, Cache* cache) const {
    const Eigen::Index length = token_embeddings.rows();
    if (length == 0 || static_cast<std::size_t>(length) > context_length()) {
        throw ContractError("text: sequence length " + std::to_string(length) + " outside 1.." +
                            std::to_string(context_length()));
    }
    TokenMat x = token_embeddings + position.topRows(length);
    if (cache != nullptr) {
        cache->blocks.assign(blocks.size(), nn::Block::Cache{});
        cache->length = length;
    }
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        x = blocks[i].forward(x, true, cache ? &cache->blocks[i] : nullptr);
    }
    TokenMat last = x.bottomRows(1);
    if (ln_final) {
        last = ln_final->forward(last, cache ? &cache->ln_final : nullptr);
    }
    Vec feature = proj.forward(Vec(last.row(0).transpose()));
    if (!feature.allFinite()) {
        throw NumericError("text: non-finite text feature");
    }
    return feature;
}

TokenMat TextTower::backward(const Vec& d_feature, const Cache& cache) const {
    TokenMat d_last(1, static_cast<Eigen::Index>(width()));
    d_last.row(0) = proj.backward(d_feature).transpose();
    if (ln_final) {
        d_last = ln_final->backward(d_last, cache.ln_final);
    }
    TokenMat dx = TokenMat::Zero(cache.length, static_cast<Eigen::Index>(width()));
    dx.bottomRows(1) = d_last;
    for (std::size_t i = blocks.size(); i-- > 0;) {
        dx = blocks[i].backward(dx, cache.blocks[i]);
    }
    return dx;
}

// ---------------------------------------------------------------- backbone

Backbone::Backbone(VisionTower vision, TextTower text, std::shared_ptr<const Tokenizer> tokenizer, double temperature,
                   std::string kind)
    : vision_(std::move(vision)),
      text_(std::move(text)),
      tokenizer_(std::move(tokenizer)),
      temperature_(temperature),
      kind_(std::move(kind)) {
    if (!tokenizer_) {
        throw ContractError("backbone: tokenizer required");
    }
    if (!(temperature_ > 0.0)) {
        throw ConfigError("backbone: temperature must be > 0");
    }
    if (vision_.patch_size == 0 || vision_.image_size % vision_.patch_size != 0) {
        throw ConfigError("backbone: image_size must be a multiple of patch_size");
    }
    if (vision_.embed_dim() != text_.embed_dim()) {
        throw ConfigError("backbone: vision and text embedding dims differ");
    }
}

Backbone Backbone::create(const BackboneConfig& cfg) {
    if (cfg.kind == "toy") {
        return toy(cfg.toy);
    }
    if (cfg.kind == "pretrained") {
        return pretrained(cfg.pretrained);
    }
    throw ConfigError("backbone.kind: expected \"toy\" or \"pretrained\", got \"" + cfg.kind + "\"");
}

namespace {

Mat gaussian(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            m(i, j) = rng.normal(0.0, stddev);
        }
    }
    return m;
}

Vec gaussian_vec(Rng& rng, std::size_t n, double stddev) {
    return gaussian(rng, n, 1, stddev).col(0);
}

nn::Linear linear(Rng& rng, std::size_t out, std::size_t in, bool bias) {
    nn::Linear layer;
    layer.weight = gaussian(rng, out, in, 1.0 / std::sqrt(static_cast<double>(in)));
    if (bias) {
        layer.bias = gaussian_vec(rng, out, 0.02);
    }
    return layer;
}

nn::LayerNorm layer_norm(Rng& rng, std::size_t width) {
    nn::LayerNorm ln;
    ln.gamma = Vec::Ones(static_cast<Eigen::Index>(width)) + gaussian_vec(rng, width, 0.1);
    ln.beta = gaussian_vec(rng, width, 0.05);
    return ln;
}

// Near-identity map; keeps the value and output projections of the toy
// vision block close to direction preserving.
nn::Linear near_identity(Rng& rng, std::size_t width) {
    nn::Linear layer;
    layer.weight = Mat::Identity(static_cast<Eigen::Index>(width), static_cast<Eigen::Index>(width)) +
                   gaussian(rng, width, width, 0.1 / std::sqrt(static_cast<double>(width)));
    return layer;
}

/// Random matrix with orthonormal rows (or columns, whichever is shorter).
nn::Linear orthogonal(Rng& rng, std::size_t out, std::size_t in) {
    const std::size_t n = std::max(out, in);
    const Mat q = Eigen::HouseholderQR<Mat>(gaussian(rng, n, n, 1.0)).householderQ();
    nn::Linear layer;
    layer.weight = q.topLeftCorner(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    return layer;
}

}  // namespace

Backbone Backbone::toy(const ToyBackboneConfig& cfg) {
    if (cfg.patch_size == 0 || cfg.image_size % cfg.patch_size != 0) {
        throw ConfigError("backbone.toy.image_size: must be a multiple of patch_size");
    }
    if (cfg.text_heads == 0 || cfg.text_width % cfg.text_heads != 0) {
        throw ConfigError("backbone.toy.text_heads: must divide text_width");
    }
    Rng rng(cfg.seed);

    VisionTower vision;
    vision.image_size = cfg.image_size;
    vision.patch_size = cfg.patch_size;
    vision.channels = 3;
    const std::size_t patch_pixels = 3 * cfg.patch_size * cfg.patch_size;
    vision.patch_weight = gaussian(rng, cfg.width, patch_pixels, 1.0 / std::sqrt(static_cast<double>(patch_pixels)));
    nn::Block vblock;
    vblock.attn.q = linear(rng, cfg.width, cfg.width, false);
    vblock.attn.k = linear(rng, cfg.width, cfg.width, false);
    vblock.attn.v = near_identity(rng, cfg.width);
    vblock.attn.out = near_identity(rng, cfg.width);
    vblock.attn.heads = 1;
    vision.blocks.push_back(std::move(vblock));
    vision.proj = orthogonal(rng, cfg.embed_dim, cfg.width);
    vision.pool = VisionTower::Pool::mean;

    auto words = cfg.vocabulary.empty() ? default_toy_vocabulary() : cfg.vocabulary;
    auto tokenizer = std::make_shared<WordTokenizer>(words);

    TextTower text;
    const std::size_t tw = cfg.text_width;
    text.token_embedding.resize(static_cast<Eigen::Index>(tokenizer->vocab_size()), static_cast<Eigen::Index>(tw));
    auto word_row = [&](std::string_view word, Eigen::Index row) {
        Rng word_rng(fnv1a64(word) ^ cfg.seed);
        for (Eigen::Index d = 0; d < static_cast<Eigen::Index>(tw); ++d) {
            text.token_embedding(row, d) = word_rng.normal(0.0, 0.5);
        }
    };
    Vec salient = Vec::Zero(static_cast<Eigen::Index>(tw));
    for (auto& x : salient) x = rng.normal();
    salient.array() -= salient.mean();
    salient.normalize();
    word_row("<|startoftext|>", tokenizer->start_token());
    word_row("<|endoftext|>", tokenizer->end_token());
    for (std::size_t i = 0; i < tokenizer->words().size(); ++i) {
        word_row(tokenizer->words()[i], static_cast<Eigen::Index>(i) + 2);
    }
    text.position = gaussian(rng, cfg.context_length, tw, 0.1);
    // content words, and nothing else, point along the salient direction
    for (TokenMat* m : {&text.token_embedding, &text.position}) {
        const Vec along = *m * salient;
        *m -= along * salient.transpose();
    }
    for (std::size_t i = 0; i < tokenizer->words().size(); ++i) {
        const auto& word = tokenizer->words()[i];
        if (std::find(cfg.function_words.begin(), cfg.function_words.end(), word) == cfg.function_words.end()) {
            text.token_embedding.row(static_cast<Eigen::Index>(i) + 2) += cfg.salience * salient.transpose();
        }
    }
    for (std::size_t layer = 0; layer < cfg.text_layers; ++layer) {
        nn::Block block;
        block.ln1 = layer_norm(rng, tw);
        block.attn.q = linear(rng, tw, tw, true);
        block.attn.k = linear(rng, tw, tw, true);
        block.attn.v = linear(rng, tw, tw, true);
        block.attn.out = linear(rng, tw, tw, true);
        block.attn.heads = cfg.text_heads;
        if (layer == 0) {
            // head 0: every query looks for the salience direction
            const std::size_t hd = tw / cfg.text_heads;
            Vec a = Vec::Zero(static_cast<Eigen::Index>(hd));
            for (auto& x : a) x = rng.normal();
            a.normalize();
            const auto n = static_cast<Eigen::Index>(hd);
            auto k_head = block.attn.k.weight.topRows(n);
            k_head -= a * (a.transpose() * k_head);
            block.attn.q.bias.head(n) += cfg.content_focus * a;
            block.attn.k.weight.topRows(n) += cfg.content_focus * a * salient.transpose();
        }
        block.ln2 = layer_norm(rng, tw);
        nn::Mlp mlp;
        mlp.fc1 = linear(rng, 4 * tw, tw, true);
        mlp.fc2 = linear(rng, tw, 4 * tw, true);
        block.mlp = std::move(mlp);
        text.blocks.push_back(std::move(block));
    }
    text.ln_final = layer_norm(rng, tw);
    text.proj = linear(rng, cfg.embed_dim, tw, false);

    return Backbone(std::move(vision), std::move(text), std::move(tokenizer), cfg.temperature, "toy");
}

// ---------------------------------------------------------------- HF layout

namespace {

using TensorMap = std::map<std::string, safetensors::Tensor>;

const safetensors::Tensor& fetch(const TensorMap& tensors, const std::string& name) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) {
        throw DataError("weights: missing tensor " + name);
    }
    return it->second;
}

Mat fetch_matrix(const TensorMap& tensors, const std::string& name) {
    const auto& t = fetch(tensors, name);
    if (t.shape.size() < 2) {
        throw DataError("weights: tensor " + name + " is not a matrix");
    }
    const std::int64_t rows = t.shape[0];
    const std::int64_t cols = t.numel() / rows;
    Mat m(rows, cols);
    for (std::int64_t i = 0; i < rows; ++i) {
        for (std::int64_t j = 0; j < cols; ++j) {
            m(i, j) = t.values[static_cast<std::size_t>(i * cols + j)];
        }
    }
    return m;
}

Vec fetch_vector(const TensorMap& tensors, const std::string& name) {
    const auto& t = fetch(tensors, name);
    return Eigen::Map<const Vec>(t.values.data(), static_cast<Eigen::Index>(t.values.size()));
}

nn::Linear fetch_linear(const TensorMap& tensors, const std::string& prefix, bool bias) {
    nn::Linear layer;
    layer.weight = fetch_matrix(tensors, prefix + ".weight");
    if (bias) {
        layer.bias = fetch_vector(tensors, prefix + ".bias");
    }
    return layer;
}

nn::LayerNorm fetch_ln(const TensorMap& tensors, const std::string& prefix, double eps) {
    nn::LayerNorm ln;
    ln.gamma = fetch_vector(tensors, prefix + ".weight");
    ln.beta = fetch_vector(tensors, prefix + ".bias");
    ln.eps = eps;
    return ln;
}

std::vector<nn::Block> fetch_blocks(const TensorMap& tensors, const std::string& prefix, std::size_t heads,
                                    double eps) {
    std::vector<nn::Block> blocks;
    for (std::size_t i = 0;; ++i) {
        const std::string p = prefix + ".encoder.layers." + std::to_string(i);
        if (!tensors.contains(p + ".self_attn.q_proj.weight")) {
            break;
        }
        nn::Block block;
        block.ln1 = fetch_ln(tensors, p + ".layer_norm1", eps);
        block.attn.q = fetch_linear(tensors, p + ".self_attn.q_proj", true);
        block.attn.k = fetch_linear(tensors, p + ".self_attn.k_proj", true);
        block.attn.v = fetch_linear(tensors, p + ".self_attn.v_proj", true);
        block.attn.out = fetch_linear(tensors, p + ".self_attn.out_proj", true);
        block.attn.heads = heads;
        if (block.attn.width() % heads != 0) {
            throw ConfigError("backbone.pretrained: heads must divide width " + std::to_string(block.attn.width()));
        }
        block.ln2 = fetch_ln(tensors, p + ".layer_norm2", eps);
        nn::Mlp mlp;
        mlp.fc1 = fetch_linear(tensors, p + ".mlp.fc1", true);
        mlp.fc2 = fetch_linear(tensors, p + ".mlp.fc2", true);
        block.mlp = std::move(mlp);
        blocks.push_back(std::move(block));
    }
    if (blocks.empty()) {
        throw DataError("weights: no encoder layers under " + prefix);
    }
    return blocks;
}

safetensors::Tensor to_tensor(const Mat& m) {
    safetensors::Tensor t;
    t.shape = {m.rows(), m.cols()};
    t.values.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            t.values.push_back(m(i, j));
        }
    }
    return t;
}

safetensors::Tensor to_tensor(const Vec& v) {
    safetensors::Tensor t;
    t.shape = {v.size()};
    t.values.assign(v.data(), v.data() + v.size());
    return t;
}

void put_linear(TensorMap& out, const std::string& prefix, const nn::Linear& layer) {
    out[prefix + ".weight"] = to_tensor(layer.weight);
    if (layer.bias.size() == 0) {
        throw ContractError("to_hf_tensors: layer " + prefix + " has no bias");
    }
    out[prefix + ".bias"] = to_tensor(layer.bias);
}

void put_ln(TensorMap& out, const std::string& prefix, const std::optional<nn::LayerNorm>& ln) {
    if (!ln) {
        throw ContractError("to_hf_tensors: missing layer norm " + prefix);
    }
    out[prefix + ".weight"] = to_tensor(ln->gamma);
    out[prefix + ".bias"] = to_tensor(ln->beta);
}

void put_blocks(TensorMap& out, const std::string& prefix, const std::vector<nn::Block>& blocks) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = prefix + ".encoder.layers." + std::to_string(i);
        const auto& b = blocks[i];
        if (!b.mlp) {
            throw ContractError("to_hf_tensors: block without MLP");
        }
        put_ln(out, p + ".layer_norm1", b.ln1);
        put_linear(out, p + ".self_attn.q_proj", b.attn.q);
        put_linear(out, p + ".self_attn.k_proj", b.attn.k);
        put_linear(out, p + ".self_attn.v_proj", b.attn.v);
        put_linear(out, p + ".self_attn.out_proj", b.attn.out);
        put_ln(out, p + ".layer_norm2", b.ln2);
        put_linear(out, p + ".mlp.fc1", b.mlp->fc1);
        put_linear(out, p + ".mlp.fc2", b.mlp->fc2);
    }
}

}  // namespace

Backbone Backbone::from_hf_tensors(const TensorMap& tensors, const PretrainedBackboneConfig& cfg,
                                   std::shared_ptr<const Tokenizer> tokenizer) {
    const double eps = cfg.layer_norm_eps;
    VisionTower vision;
    const auto& patch = fetch(tensors, "vision_model.embeddings.patch_embedding.weight");
    if (patch.shape.size() != 4 || patch.shape[2] != patch.shape[3]) {
        throw DataError("weights: patch embedding must be [width, channels, patch, patch]");
    }
    vision.channels = static_cast<std::size_t>(patch.shape[1]);
    vision.patch_size = static_cast<std::size_t>(patch.shape[2]);
    vision.patch_weight = fetch_matrix(tensors, "vision_model.embeddings.patch_embedding.weight");
    vision.class_embedding = fetch_vector(tensors, "vision_model.embeddings.class_embedding");
    vision.position = fetch_matrix(tensors, "vision_model.embeddings.position_embedding.weight");
    const auto patches = static_cast<std::size_t>(vision.position.rows() - 1);
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(patches))));
    if (side * side != patches) {
        throw DataError("weights: position embedding does not describe a square patch grid");
    }
    vision.image_size = side * vision.patch_size;
    vision.ln_pre = fetch_ln(tensors, "vision_model.pre_layrnorm", eps);
    vision.blocks = fetch_blocks(tensors, "vision_model", cfg.vision_heads, eps);
    vision.ln_post = fetch_ln(tensors, "vision_model.post_layernorm", eps);
    vision.proj = fetch_linear(tensors, "visual_projection", false);
    vision.pool = VisionTower::Pool::class_token;

    TextTower text;
    text.token_embedding = fetch_matrix(tensors, "text_model.embeddings.token_embedding.weight");
    text.position = fetch_matrix(tensors, "text_model.embeddings.position_embedding.weight");
    text.blocks = fetch_blocks(tensors, "text_model", cfg.text_heads, eps);
    text.ln_final = fetch_ln(tensors, "text_model.final_layer_norm", eps);
    text.proj = fetch_linear(tensors, "text_projection", false);

    const auto& logit_scale = fetch(tensors, "logit_scale");
    if (logit_scale.values.size() != 1) {
        throw DataError("weights: logit_scale must be a scalar");
    }
    const double temperature = 1.0 / std::exp(logit_scale.values[0]);
    return Backbone(std::move(vision), std::move(text), std::move(tokenizer), temperature, "pretrained");
}

std::map<std::string, safetensors::Tensor> Backbone::to_hf_tensors() const {
    if (!vision_.has_class_token() || vision_.position.size() == 0 || !vision_.ln_pre || !vision_.ln_post ||
        !text_.ln_final) {
        throw ContractError("to_hf_tensors: backbone lacks components of the CLIP layout");
    }
    TensorMap out;
    safetensors::Tensor patch = to_tensor(vision_.patch_weight);
    const auto p = static_cast<std::int64_t>(vision_.patch_size);
    patch.shape = {static_cast<std::int64_t>(vision_.width()), static_cast<std::int64_t>(vision_.channels), p, p};
    out["vision_model.embeddings.patch_embedding.weight"] = std::move(patch);
    out["vision_model.embeddings.class_embedding"] = to_tensor(vision_.class_embedding);
    out["vision_model.embeddings.position_embedding.weight"] = to_tensor(Mat(vision_.position));
    put_ln(out, "vision_model.pre_layrnorm", vision_.ln_pre);
    put_blocks(out, "vision_model", vision_.blocks);
    put_ln(out, "vision_model.post_layernorm", vision_.ln_post);
    out["visual_projection.weight"] = to_tensor(vision_.proj.weight);
    out["text_model.embeddings.token_embedding.weight"] = to_tensor(Mat(text_.token_embedding));
    out["text_model.embeddings.position_embedding.weight"] = to_tensor(Mat(text_.position));
    put_blocks(out, "text_model", text_.blocks);
    put_ln(out, "text_model.final_layer_norm", text_.ln_final);
    out["text_projection.weight"] = to_tensor(text_.proj.weight);
    safetensors::Tensor scale;
    scale.values = {std::log(1.0 / temperature_)};
    out["logit_scale"] = std::move(scale);
    return out;
}

Backbone Backbone::pretrained(const PretrainedBackboneConfig& cfg) {
    if (cfg.weights.empty()) {
        throw ConfigError("backbone.pretrained.weights: path required");
    }
    if (!std::filesystem::exists(cfg.weights)) {
        throw DataError("backbone.pretrained.weights: file not found: " + cfg.weights.string());
    }
    auto tokenizer = std::make_shared<BpeTokenizer>(BpeTokenizer::from_files(cfg.vocab, cfg.merges));
    return from_hf_tensors(safetensors::load(cfg.weights), cfg, std::move(tokenizer));
}

// ---------------------------------------------------------------- features

VVAttentionConfig Backbone::vv_config() const {
    const auto& attn = vision_.blocks.back().attn;
    return VVAttentionConfig{attn.scale(), attn.heads};
}

TokenMat Backbone::project(const TokenMat& tokens) const {
    if (vision_.ln_post) {
        return vision_.proj.forward(vision_.ln_post->forward(tokens));
    }
    return vision_.proj.forward(tokens);
}

PatchGrid Backbone::patch_rows(const TokenMat& tokens) const {
    const Eigen::Index skip = vision_.has_class_token() ? 1 : 0;
    return PatchGrid(grid_rows(), grid_cols(), TokenMat(tokens.bottomRows(tokens.rows() - skip)));
}

PatchGrid Backbone::surgery_from_values(const TokenMat& values, const ContextConfig& ctx) const {
    const PatchGrid v = patch_rows(values);
    const PatchGrid mixed = vv_attention(patch_context_incorporate(v, ctx), vv_config());
    const TokenMat out = vision_.blocks.back().attn.out.forward(mixed.tokens());
    return PatchGrid(grid_rows(), grid_cols(), project(out));
}

ImageFeature Backbone::pool(const TokenMat& output) const {
    TokenMat pooled(1, output.cols());
    if (vision_.pool == VisionTower::Pool::class_token) {
        pooled.row(0) = output.row(0);
    } else {
        const Eigen::Index skip = vision_.has_class_token() ? 1 : 0;
        pooled.row(0) = output.bottomRows(output.rows() - skip).colwise().mean();
    }
    const TokenMat projected = project(pooled);
    return ImageFeature::from_raw(Vec(projected.row(0).transpose()));
}

PatchGrid Backbone::encode_patches(const Image& image) const {
    return patch_rows(vision_.run(image).values);
}

PatchGrid Backbone::clip_patch_features(const Image& image) const {
    return patch_rows(project(vision_.run(image).output));
}

PatchGrid Backbone::surgery_patch_features(const Image& image, const ContextConfig& ctx) const {
    return surgery_from_values(vision_.run(image).values, ctx);
}

ImageFeature Backbone::encode_image(const Image& image) const {
    return pool(vision_.run(image).output);
}

ImageAnalysis Backbone::analyze(const Image& image, const ContextConfig& ctx) const {
    const auto trace = vision_.run(image);
    return ImageAnalysis{surgery_from_values(trace.values, ctx), patch_rows(project(trace.output)),
                         pool(trace.output)};
}

Vec Backbone::encode_text(std::string_view text) const {
    std::vector<int> ids{tokenizer_->start_token()};
    const auto body = tokenizer_->encode(text);
    ids.insert(ids.end(), body.begin(), body.end());
    ids.push_back(tokenizer_->end_token());
    return l2_normalized(text_.forward(text_.embed(ids)));
}

}  // namespace clipos
