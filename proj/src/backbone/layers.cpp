#include "clipos/backbone/layers.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "clipos/error.hpp"

namespace clipos::nn {

TokenMat Linear::forward(const TokenMat& x) const {
    if (static_cast<std::size_t>(x.cols()) != in_features()) {
        throw ContractError("Linear: input width " + std::to_string(x.cols()) + ", expected " +
                            std::to_string(in_features()));
    }
    TokenMat y = x * weight.transpose();
    if (bias.size() > 0) {
        y.rowwise() += bias.transpose();
    }
    return y;
}

Vec Linear::forward(const Vec& x) const {
    if (static_cast<std::size_t>(x.size()) != in_features()) {
        throw ContractError("Linear: input width " + std::to_string(x.size()) + ", expected " +
                            std::to_string(in_features()));
    }
    Vec y = weight * x;
    if (bias.size() > 0) {
        y += bias;
    }
    return y;
}

TokenMat LayerNorm::forward(const TokenMat& x, Cache* cache) const {
    const Eigen::Index n = x.rows();
    const auto width = static_cast<double>(x.cols());
    TokenMat normalized(n, x.cols());
    Vec inv_std(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mean = x.row(i).sum() / width;
        const Eigen::RowVectorXd centered = (x.row(i).array() - mean).matrix();
        const double var = centered.squaredNorm() / width;
        inv_std(i) = 1.0 / std::sqrt(var + eps);
        normalized.row(i) = centered * inv_std(i);
    }
    TokenMat y = normalized;
    y.array().rowwise() *= gamma.transpose().array();
    y.rowwise() += beta.transpose();
    if (cache != nullptr) {
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

TokenMat LayerNorm::backward(const TokenMat& dy, const Cache& cache) const {
    const Eigen::Index n = dy.rows();
    const auto width = static_cast<double>(dy.cols());
    TokenMat dx(n, dy.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::RowVectorXd dnorm = (dy.row(i).array() * gamma.transpose().array()).matrix();
        const double mean_d = dnorm.sum() / width;
        const double mean_dx = dnorm.dot(cache.normalized.row(i)) / width;
        dx.row(i) = cache.inv_std(i) *
                    (dnorm.array() - mean_d - cache.normalized.row(i).array() * mean_dx).matrix();
    }
    return dx;
}

double Attention::scale() const {
    return 1.0 / std::sqrt(static_cast<double>(head_dim()));
}

TokenMat Attention::forward(const TokenMat& x, bool causal, Cache* cache) const {
    const Eigen::Index n = x.rows();
    const auto hd = static_cast<Eigen::Index>(head_dim());
    TokenMat qs = q.forward(x);
    TokenMat ks = k.forward(x);
    TokenMat vs = v.forward(x);
    TokenMat context(n, qs.cols());
    if (cache != nullptr) {
        cache->probs.assign(heads, TokenMat());
    }
    const double s = scale();
    for (std::size_t h = 0; h < heads; ++h) {
        const Eigen::Index off = static_cast<Eigen::Index>(h) * hd;
        TokenMat logits = (qs.middleCols(off, hd) * ks.middleCols(off, hd).transpose()) * s;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (causal) {
                for (Eigen::Index j = i + 1; j < n; ++j) {
                    logits(i, j) = -std::numeric_limits<double>::infinity();
                }
            }
            const double max_logit = logits.row(i).maxCoeff();
            if (!std::isfinite(max_logit)) {
                throw NumericError("attention: non-finite logit");
            }
            logits.row(i) = (logits.row(i).array() - max_logit).exp().matrix();
            logits.row(i) /= logits.row(i).sum();
        }
        context.middleCols(off, hd) = logits * vs.middleCols(off, hd);
        if (cache != nullptr) {
            cache->probs[h] = std::move(logits);
        }
    }
    if (cache != nullptr) {
        cache->q = std::move(qs);
        cache->k = std::move(ks);
        cache->v = std::move(vs);
    }
    return out.forward(context);
}

TokenMat Attention::backward(const TokenMat& dy, const Cache& cache) const {
    const Eigen::Index n = dy.rows();
    const auto hd = static_cast<Eigen::Index>(head_dim());
    const TokenMat dcontext = out.backward(dy);
    TokenMat dq(n, cache.q.cols());
    TokenMat dk(n, cache.k.cols());
    TokenMat dv(n, cache.v.cols());
    const double s = scale();
    for (std::size_t h = 0; h < heads; ++h) {
        const Eigen::Index off = static_cast<Eigen::Index>(h) * hd;
        const TokenMat& probs = cache.probs[h];
        const auto dctx_h = dcontext.middleCols(off, hd);
        dv.middleCols(off, hd) = probs.transpose() * dctx_h;
        const TokenMat dprobs = dctx_h * cache.v.middleCols(off, hd).transpose();
        TokenMat dlogits(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double inner = dprobs.row(i).dot(probs.row(i));
            dlogits.row(i) = (probs.row(i).array() * (dprobs.row(i).array() - inner)).matrix();
        }
        dlogits *= s;
        dq.middleCols(off, hd) = dlogits * cache.k.middleCols(off, hd);
        dk.middleCols(off, hd) = dlogits.transpose() * cache.q.middleCols(off, hd);
    }
    return q.backward(dq) + k.backward(dk) + v.backward(dv);
}

double quick_gelu(double x) {
    return x / (1.0 + std::exp(-1.702 * x));
}

double quick_gelu_grad(double x) {
    const double sig = 1.0 / (1.0 + std::exp(-1.702 * x));
    return sig + 1.702 * x * sig * (1.0 - sig);
}

TokenMat Mlp::forward(const TokenMat& x, Cache* cache) const {
    TokenMat pre = fc1.forward(x);
    TokenMat act = pre.unaryExpr([](double value) { return quick_gelu(value); });
    if (cache != nullptr) {
        cache->pre_activation = std::move(pre);
    }
    return fc2.forward(act);
}

TokenMat Mlp::backward(const TokenMat& dy, const Cache& cache) const {
    TokenMat dact = fc2.backward(dy);
    dact.array() *= cache.pre_activation.unaryExpr([](double value) { return quick_gelu_grad(value); }).array();
    return fc1.backward(dact);
}

TokenMat Block::attention_input(const TokenMat& x) const {
    return ln1 ? ln1->forward(x) : x;
}

TokenMat Block::forward(const TokenMat& x, bool causal, Cache* cache) const {
    const TokenMat a = ln1 ? ln1->forward(x, cache ? &cache->ln1 : nullptr) : x;
    TokenMat h = x + attn.forward(a, causal, cache ? &cache->attn : nullptr);
    if (!mlp) {
        return h;
    }
    const TokenMat b = ln2 ? ln2->forward(h, cache ? &cache->ln2 : nullptr) : h;
    h += mlp->forward(b, cache ? &cache->mlp : nullptr);
    return h;
}

TokenMat Block::backward(const TokenMat& dy, const Cache& cache) const {
    TokenMat dh = dy;
    if (mlp) {
        TokenMat db = mlp->backward(dy, cache.mlp);
        dh += ln2 ? ln2->backward(db, cache.ln2) : db;
    }
    TokenMat da = attn.backward(dh, cache.attn);
    TokenMat dx = dh;
    dx += ln1 ? ln1->backward(da, cache.ln1) : da;
    return dx;
}

}  // namespace clipos::nn
