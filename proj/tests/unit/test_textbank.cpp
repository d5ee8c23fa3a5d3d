#include "doctest.h"

#include "clipos/error.hpp"
#include "clipos/textbank.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace clipos;

namespace {

PromptBank make_bank(std::uint64_t seed = 1) {
    Rng rng(seed);
    return PromptBank(fixture::toy_backbone(), {"cat", "ship", "truck"}, PromptConfig{}, rng);
}

}  // namespace

TEST_CASE("bank of M classes has M+1 unit rows") {
    const PromptBank bank = make_bank();
    const TextEmbeddings e = bank.embed();
    CHECK(e.num_prompts() == 4);
    CHECK(e.num_id_classes() == 3);
    CHECK(e.unknown_index() == 3);
    CHECK(bank.context().rows() == 16);
    for (long i = 0; i < e.matrix.rows(); ++i) {
        CHECK(e.matrix.row(i).norm() == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("bank embeddings are deterministic for a fixed context") {
    CHECK(make_bank(3).embed().matrix == make_bank(3).embed().matrix);
    const PromptBank a = make_bank(3);
    const PromptBank b(fixture::toy_backbone(), {"cat", "ship", "truck"}, a.context());
    CHECK(a.embed().matrix == b.embed().matrix);
}

TEST_CASE("context init follows N(0, init_std)") {
    Rng rng(4);
    PromptConfig cfg;
    cfg.init_std = 0.0;
    const PromptBank bank(fixture::toy_backbone(), {"cat"}, cfg, rng);
    CHECK(bank.context().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bank rejects bad class lists and contexts") {
    Rng rng(5);
    const auto bb = fixture::toy_backbone();
    CHECK_THROWS_AS(PromptBank(bb, {}, PromptConfig{}, rng), ConfigError);
    CHECK_THROWS_AS(PromptBank(bb, {"cat", "cat"}, PromptConfig{}, rng), ConfigError);
    CHECK_THROWS_AS(PromptBank(bb, {"cat", "unknown"}, PromptConfig{}, rng), ConfigError);
    CHECK_THROWS_AS(PromptBank(bb, {"zebra"}, PromptConfig{}, rng), ConfigError);
    PromptConfig long_ctx;
    long_ctx.token_len = 30;
    CHECK_THROWS_AS(PromptBank(bb, {"cat"}, long_ctx, rng), ConfigError);
    CHECK_THROWS_AS(PromptBank(bb, {"cat"}, TokenMat::Zero(4, 3)), ContractError);
}

TEST_CASE("similarity examples") {
    TextEmbeddings e;
    e.matrix = Mat::Identity(2, 2);
    Vec f(2);
    f << 1.0, 0.0;
    const Vec s = similarity(f, e);
    CHECK(s(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s(1) == doctest::Approx(0.0));

    Rng rng(6);
    const PromptBank bank = make_bank();
    const TextEmbeddings emb = bank.embed();
    const Vec self = similarity(emb.row(2), emb);
    CHECK(self(2) == doctest::Approx(1.0).epsilon(1e-6));

    // orthogonal to every row
    TextEmbeddings two;
    two.matrix = Mat::Zero(2, 3);
    two.matrix(0, 0) = 1.0;
    two.matrix(1, 1) = 1.0;
    Vec z(3);
    z << 0.0, 0.0, 1.0;
    CHECK(similarity(z, two).cwiseAbs().maxCoeff() < 1e-6);
    CHECK_THROWS_AS(similarity(Vec::Ones(5), two), ContractError);
}

TEST_CASE("bank backward matches finite differences") {
    PromptBank bank = make_bank(7);
    Rng rng(8);
    const Mat w = Mat::NullaryExpr(4, static_cast<long>(bank.backbone().embed_dim()), [&] { return rng.normal(); });
    const auto fwd = bank.forward();
    const TokenMat grad = bank.backward(fwd, w);
    const double h = 1e-6;
    for (int k = 0; k < 20; ++k) {
        const long i = static_cast<long>(rng.below(static_cast<std::uint64_t>(bank.context().rows())));
        const long j = static_cast<long>(rng.below(static_cast<std::uint64_t>(bank.context().cols())));
        const double saved = bank.context()(i, j);
        bank.context()(i, j) = saved + h;
        const double up = bank.embed().matrix.cwiseProduct(w).sum();
        bank.context()(i, j) = saved - h;
        const double down = bank.embed().matrix.cwiseProduct(w).sum();
        bank.context()(i, j) = saved;
        CHECK(grad(i, j) == doctest::Approx((up - down) / (2.0 * h)).epsilon(1e-5));
    }
}

TEST_CASE("template embeddings") {
    const auto bb = fixture::toy_backbone();
    const Mat t = template_embeddings(*bb, {"cat", "ship"}, "a photo of a {}");
    CHECK(t.rows() == 2);
    CHECK((t.row(0).transpose() - bb->encode_text("a photo of a cat")).norm() < 1e-12);
    CHECK_THROWS_AS(template_embeddings(*bb, {"cat"}, "a photo"), ConfigError);
}
