#include "doctest.h"

#include <algorithm>
#include <numeric>

#include "clipos/error.hpp"
#include "clipos/masking.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace clipos;

namespace {

SimilarityMap map_of(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return SimilarityMap{rows, cols, Eigen::Map<Vec>(v.data(), static_cast<long>(v.size()))};
}

}  // namespace

TEST_CASE("min-max normalization examples") {
    Vec raw(3);
    raw << 0.2, 0.4, 0.6;
    const SimilarityMap m = normalize_map(1, 3, raw);
    CHECK(m.scores(0) == doctest::Approx(0.0));
    CHECK(m.scores(1) == doctest::Approx(0.5));
    CHECK(m.scores(2) == doctest::Approx(1.0));

    Vec two(2);
    two << 1.0, 3.0;
    const SimilarityMap t = normalize_map(2, 1, two);
    CHECK(t.scores(0) == 0.0);
    CHECK(t.scores(1) == 1.0);

    const SimilarityMap c = normalize_map(2, 2, Vec::Constant(4, 0.3));
    CHECK(c.scores == Vec::Constant(4, 0.5));

    Vec bad(2);
    bad << 1.0, std::nan("");
    CHECK_THROWS_AS(normalize_map(1, 2, bad), NumericError);
    CHECK_THROWS_AS(normalize_map(2, 2, two), ContractError);
}

TEST_CASE("patches equal to the class embedding give a constant 0.5 map") {
    Vec e(3);
    e << 0.0, 0.6, 0.8;
    PatchGrid g(2, 3, 3);
    for (long i = 0; i < 6; ++i) g.tokens().row(i) = e.transpose();
    const SimilarityMap m = similarity_map(g, e);
    CHECK(m.scores == Vec::Constant(6, 0.5));
}

TEST_CASE("clip similarity map equals the similarity map of the unmodified path") {
    const auto bb = fixture::toy_backbone();
    Rng rng(21);
    Image img(3, 32, 32);
    for (auto& v : img.data) v = rng.normal();
    const Vec e = bb->encode_text("a photo of a cat");
    const SimilarityMap a = clip_similarity_map(*bb, img, e);
    const SimilarityMap b = similarity_map(bb->clip_patch_features(img), e);
    CHECK(a.scores == b.scores);
}

TEST_CASE("corrected score 0.48 + 0.1 * 0.38 = 0.518 puts the cell in the foreground") {
    const SimilarityMap s = map_of(1, 2, {0.48, 0.2});
    const SimilarityMap c = map_of(1, 2, {0.10, 0.2});
    const Vec scores = discrepancy_scores(s, c);
    CHECK(scores(0) == doctest::Approx(0.518).epsilon(1e-12));
    const RegionPartition p = discrepancy_partition(s, c);
    CHECK(p.foreground == std::vector<std::size_t>{0});
    CHECK(p.background == std::vector<std::size_t>{1});
}

TEST_CASE("saturated map selects every cell") {
    Rng rng(22);
    std::vector<double> clip(12);
    for (auto& v : clip) v = rng.uniform();
    const RegionPartition p = discrepancy_partition(map_of(3, 4, std::vector<double>(12, 1.0)), map_of(3, 4, clip));
    CHECK(p.foreground.size() == 12);
    CHECK(p.background.empty());
}

TEST_CASE("zero discrepancy reduces to the plain threshold") {
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> s(20);
        for (auto& v : s) v = rng.uniform();
        const SimilarityMap m = map_of(4, 5, s);
        const RegionPartition a = discrepancy_partition(m, m);
        const RegionPartition b = threshold_partition(m, 0.5);
        CHECK(a.foreground == b.foreground);
        CHECK(a.background == b.background);
    }
}

TEST_CASE("map shapes must agree") {
    CHECK_THROWS_AS(discrepancy_partition(map_of(1, 2, {0, 1}), map_of(2, 1, {0, 1})), ContractError);
}

TEST_CASE("partition from a mask") {
    const RegionPartition p = RegionPartition::from_mask(2, 2, {true, false, false, true});
    CHECK(p.foreground == std::vector<std::size_t>{0, 3});
    CHECK(p.background == std::vector<std::size_t>{1, 2});
    CHECK(p.is_foreground(3));
    CHECK_FALSE(p.is_foreground(1));
    CHECK(RegionPartition::whole(2, 3).foreground.size() == 6);
    CHECK_THROWS_AS(RegionPartition::from_mask(2, 2, {true}), ContractError);
}

TEST_CASE("empty foreground falls back to the best cell") {
    const RegionPartition empty = RegionPartition::from_mask(1, 4, {false, false, false, false});
    Vec scores(4);
    scores << 0.1, 0.4, 0.4, 0.2;
    const RegionPartition p = ensure_foreground(empty, scores);
    CHECK(p.foreground == std::vector<std::size_t>{1});
    CHECK(p.background == std::vector<std::size_t>{0, 2, 3});
    const RegionPartition full = RegionPartition::whole(1, 4);
    CHECK(ensure_foreground(full, scores).foreground == full.foreground);
}

TEST_CASE("top-K with K = M selects every cell") {
    Rng rng(24);
    const PatchGrid g = oracle::random_grid(rng, 3, 3, 5);
    TextEmbeddings e;
    e.matrix = Mat::NullaryExpr(4, 5, [&] { return rng.normal(); }).rowwise().normalized();
    CHECK(topk_partition(g, e, 1, 3).foreground.size() == 9);
    CHECK_THROWS_AS(topk_partition(g, e, 1, 0), ContractError);
    CHECK_THROWS_AS(topk_partition(g, e, 1, 4), ContractError);
    CHECK_THROWS_AS(topk_partition(g, e, 3, 1), ContractError);
}

TEST_CASE("top-K matches a sorting oracle on an explicit similarity table") {
    // rows: patches, columns: classes; embeddings are the axes, so cosine = table / |row|
    const double table[2][3] = {{0.9, 0.5, 0.7}, {0.2, 0.3, 0.8}};
    PatchGrid g(1, 2, 4);
    for (long p = 0; p < 2; ++p) {
        for (long c = 0; c < 3; ++c) g.tokens()(p, c) = table[p][c];
        g.tokens()(p, 3) = 0.0;
    }
    TextEmbeddings e;
    e.matrix = Mat::Identity(4, 4);
    for (std::size_t truth = 0; truth < 3; ++truth) {
        std::vector<bool> expect(2);
        for (std::size_t p = 0; p < 2; ++p) {
            std::vector<std::size_t> order{0, 1, 2};
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return table[p][a] > table[p][b]; });
            const auto pos = std::find(order.begin(), order.end(), truth) - order.begin();
            expect[p] = pos < 2;
        }
        const RegionPartition got = topk_partition(g, e, truth, 2);
        CHECK(got.is_foreground(0) == expect[0]);
        CHECK(got.is_foreground(1) == expect[1]);
    }
}

TEST_CASE("top-1 selects a patch whose true class is strictly most similar") {
    PatchGrid g(1, 2, 3);
    g.tokens() << 1.0, 0.1, 0.0, 0.1, 1.0, 0.0;
    TextEmbeddings e;
    e.matrix = Mat::Identity(3, 3);
    const RegionPartition p = topk_partition(g, e, 0, 1);
    CHECK(p.foreground == std::vector<std::size_t>{0});
}
