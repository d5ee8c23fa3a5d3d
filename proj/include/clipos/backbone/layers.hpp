#pragma once

// Transformer building blocks shared by the vision and text towers.
// Weights are frozen; backward passes return input gradients only, which is
// all prompt learning needs.

#include <cstddef>
#include <optional>
#include <vector>

#include "clipos/tensor.hpp"

namespace clipos::nn {

struct Linear {
    Mat weight;  // out x in
    Vec bias;    // empty when the layer has no bias

    std::size_t in_features() const { return static_cast<std::size_t>(weight.cols()); }
    std::size_t out_features() const { return static_cast<std::size_t>(weight.rows()); }

    TokenMat forward(const TokenMat& x) const;
    Vec forward(const Vec& x) const;
    TokenMat backward(const TokenMat& dy) const { return dy * weight; }
    Vec backward(const Vec& dy) const { return weight.transpose() * dy; }
};

struct LayerNorm {
    Vec gamma;
    Vec beta;
    double eps = 1e-5;

    struct Cache {
        TokenMat normalized;
        Vec inv_std;
    };

    TokenMat forward(const TokenMat& x, Cache* cache = nullptr) const;
    TokenMat backward(const TokenMat& dy, const Cache& cache) const;
};

/// Multi-head self-attention with optional causal masking.
struct Attention {
    Linear q;
    Linear k;
    Linear v;
    Linear out;
    std::size_t heads = 1;

    struct Cache {
        TokenMat q, k, v;
        std::vector<TokenMat> probs;  // one (n x n) matrix per head
    };

    std::size_t width() const { return q.out_features(); }
    std::size_t head_dim() const { return width() / heads; }
    double scale() const;

    TokenMat forward(const TokenMat& x, bool causal, Cache* cache = nullptr) const;
    TokenMat backward(const TokenMat& dy, const Cache& cache) const;
};

/// fc2(quick_gelu(fc1(x))).
struct Mlp {
    Linear fc1;
    Linear fc2;

    struct Cache {
        TokenMat pre_activation;
    };

    TokenMat forward(const TokenMat& x, Cache* cache = nullptr) const;
    TokenMat backward(const TokenMat& dy, const Cache& cache) const;
};

/// Pre-norm residual block: h = x + attn(ln1(x)); y = h + mlp(ln2(h)).
/// Missing norms act as identity, a missing MLP skips the second residual.
struct Block {
    std::optional<LayerNorm> ln1;
    Attention attn;
    std::optional<LayerNorm> ln2;
    std::optional<Mlp> mlp;

    struct Cache {
        LayerNorm::Cache ln1, ln2;
        Attention::Cache attn;
        Mlp::Cache mlp;
    };

    /// Input to the attention projections, i.e. ln1(x) or x.
    TokenMat attention_input(const TokenMat& x) const;

    TokenMat forward(const TokenMat& x, bool causal, Cache* cache = nullptr) const;
    TokenMat backward(const TokenMat& dy, const Cache& cache) const;
};

double quick_gelu(double x);
double quick_gelu_grad(double x);

}  // namespace clipos::nn
