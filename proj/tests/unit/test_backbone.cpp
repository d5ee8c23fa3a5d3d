#include "doctest.h"

#include <cmath>
#include <fstream>
#include <functional>

#include "clipos/backbone/backbone.hpp"
#include "clipos/error.hpp"
#include "clipos/rng.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace clipos;

namespace {

Image random_image(Rng& rng, std::size_t size) {
    Image img(3, size, size);
    for (auto& v : img.data) v = rng.normal();
    return img;
}

Mat randn(Rng& rng, long rows, long cols, double stddev) {
    Mat m(rows, cols);
    for (long i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
    return m;
}

nn::Linear rand_linear(Rng& rng, long out, long in) {
    nn::Linear l;
    l.weight = randn(rng, out, in, 1.0 / std::sqrt(static_cast<double>(in)));
    l.bias = randn(rng, out, 1, 0.1).col(0);
    return l;
}

nn::LayerNorm rand_ln(Rng& rng, long w) {
    nn::LayerNorm ln;
    ln.gamma = (Vec::Ones(w) + randn(rng, w, 1, 0.1).col(0)).eval();
    ln.beta = randn(rng, w, 1, 0.1).col(0);
    return ln;
}

nn::Block rand_block(Rng& rng, long w, std::size_t heads) {
    nn::Block b;
    b.ln1 = rand_ln(rng, w);
    b.attn.q = rand_linear(rng, w, w);
    b.attn.k = rand_linear(rng, w, w);
    b.attn.v = rand_linear(rng, w, w);
    b.attn.out = rand_linear(rng, w, w);
    b.attn.heads = heads;
    b.ln2 = rand_ln(rng, w);
    nn::Mlp mlp;
    mlp.fc1 = rand_linear(rng, 2 * w, w);
    mlp.fc2 = rand_linear(rng, w, 2 * w);
    b.mlp = std::move(mlp);
    return b;
}

/// A two-layer model with every component of the CLIP checkpoint layout.
Backbone tiny_clip(std::shared_ptr<const Tokenizer> tokenizer) {
    Rng rng(77);
    VisionTower v;
    v.image_size = 8;
    v.patch_size = 4;
    v.channels = 3;
    v.patch_weight = randn(rng, 8, 48, 0.2);
    v.class_embedding = randn(rng, 8, 1, 0.5).col(0);
    v.position = randn(rng, 5, 8, 0.1);
    v.ln_pre = rand_ln(rng, 8);
    v.blocks = {rand_block(rng, 8, 2), rand_block(rng, 8, 2)};
    v.ln_post = rand_ln(rng, 8);
    v.proj.weight = randn(rng, 6, 8, 0.3);
    v.pool = VisionTower::Pool::class_token;
    TextTower t;
    t.token_embedding = randn(rng, static_cast<long>(tokenizer->vocab_size()), 8, 0.5);
    t.position = randn(rng, 6, 8, 0.1);
    t.blocks = {rand_block(rng, 8, 2)};
    t.ln_final = rand_ln(rng, 8);
    t.proj.weight = randn(rng, 6, 8, 0.3);
    return Backbone(std::move(v), std::move(t), std::move(tokenizer), 0.01, "pretrained");
}

double fd(const std::function<double(double)>& f, double h = 1e-5) { return (f(h) - f(-h)) / (2.0 * h); }

}  // namespace

TEST_CASE("toy backbone maps a zero image to a zero patch grid") {
    const auto bb = fixture::toy_backbone();
    const Image zero(3, bb->image_size(), bb->image_size());
    const PatchGrid g = bb->encode_patches(zero);
    CHECK(g.rows() == 4);
    CHECK(g.cols() == 4);
    CHECK(g.tokens().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("toy zero image has no direction") {
    const auto bb = fixture::toy_backbone();
    const Image zero(3, bb->image_size(), bb->image_size());
    CHECK_THROWS_AS(bb->encode_image(zero), NumericError);
}

TEST_CASE("toy backbone is deterministic and normalizes the global feature") {
    Rng rng(8);
    const Image img = random_image(rng, 32);
    const Backbone a = Backbone::toy({});
    const Backbone b = Backbone::toy({});
    CHECK(a.encode_patches(img).tokens() == b.encode_patches(img).tokens());
    const ImageFeature f = a.encode_image(img);
    CHECK(f.normalized);
    CHECK(f.vector.norm() == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(f.vector == b.encode_image(img).vector);
}

TEST_CASE("analyze agrees with the individual feature paths") {
    Rng rng(9);
    const auto bb = fixture::toy_backbone();
    const Image img = random_image(rng, 32);
    const ContextConfig ctx{0.3, Padding::replicate};
    const ImageAnalysis a = bb->analyze(img, ctx);
    CHECK(a.surgery_patches.tokens() == bb->surgery_patch_features(img, ctx).tokens());
    CHECK(a.clip_patches.tokens() == bb->clip_patch_features(img).tokens());
    CHECK(a.global.vector == bb->encode_image(img).vector);
    CHECK(a.surgery_patches.dim() == bb->embed_dim());
}

TEST_CASE("wrong image size is a contract error") {
    const auto bb = fixture::toy_backbone();
    CHECK_THROWS_AS(bb->encode_patches(Image(3, 16, 16)), ContractError);
}

TEST_CASE("toy template embeddings separate class words") {
    const auto bb = fixture::toy_backbone();
    const Vec cat = bb->encode_text("a photo of a cat");
    const Vec ship = bb->encode_text("a photo of a ship");
    CHECK(cat.norm() == doctest::Approx(1.0));
    CHECK(cat.dot(ship) < 0.9);
    CHECK(cat == bb->encode_text("A photo of a CAT"));
}

TEST_CASE("word tokenizer") {
    WordTokenizer tok({"a", "Cat", "a"});
    CHECK(tok.vocab_size() == 4);
    CHECK(tok.encode("a cat") == std::vector<int>{2, 3});
    CHECK(tok.contains("CAT"));
    CHECK_THROWS_AS(tok.encode("a dog"), ConfigError);
}

TEST_CASE("clip pre-tokenization") {
    CHECK(clip_pretokenize("A photo, isn't it? 42") ==
          std::vector<std::string>{"a", "photo", ",", "isn", "'t", "it", "?", "4", "2"});
    CHECK(clip_pretokenize("<|startoftext|>hi") == std::vector<std::string>{"<|startoftext|>", "hi"});
}

TEST_CASE("byte-level BPE applies merges by rank") {
    std::unordered_map<std::string, int> vocab{{"a", 0},  {"b", 1},   {"c", 2},       {"a</w>", 3},
                                               {"b</w>", 4}, {"c</w>", 5}, {"ab", 6}, {"abc</w>", 7},
                                               {"<|startoftext|>", 8}, {"<|endoftext|>", 9}};
    BpeTokenizer tok(vocab, {{"a", "b"}, {"ab", "c</w>"}});
    CHECK(tok.encode("abc") == std::vector<int>{7});
    CHECK(tok.encode("ab") == std::vector<int>{0, 4});
    CHECK(tok.encode("cab ABC") == std::vector<int>{2, 0, 4, 7});
    CHECK(tok.start_token() == 8);
    CHECK(tok.end_token() == 9);
    CHECK_THROWS_AS(tok.encode("d"), ConfigError);
}

TEST_CASE("BPE files load") {
    fixture::TempDir dir("bpe");
    {
        std::ofstream(dir / "vocab.json") << R"({"a": 0, "b</w>": 1, "ab</w>": 2, "b": 3,
            "<|startoftext|>": 4, "<|endoftext|>": 5})";
        std::ofstream(dir / "merges.txt") << "#version: 0.2\na b</w>\n";
    }
    const BpeTokenizer tok = BpeTokenizer::from_files(dir / "vocab.json", dir / "merges.txt");
    CHECK(tok.encode("ab") == std::vector<int>{2});
    CHECK_THROWS_AS(BpeTokenizer::from_files(dir / "missing.json", dir / "merges.txt"), DataError);
}

TEST_CASE("layer norm backward matches finite differences") {
    Rng rng(12);
    const nn::LayerNorm ln = rand_ln(rng, 6);
    TokenMat x = randn(rng, 3, 6, 1.0);
    const TokenMat w = randn(rng, 3, 6, 1.0);
    nn::LayerNorm::Cache cache;
    ln.forward(x, &cache);
    const TokenMat grad = ln.backward(w, cache);
    for (long i = 0; i < 3; ++i) {
        for (long j = 0; j < 6; ++j) {
            const double num = fd([&](double h) {
                TokenMat xp = x;
                xp(i, j) += h;
                return ln.forward(xp).cwiseProduct(w).sum();
            });
            CHECK(grad(i, j) == doctest::Approx(num).epsilon(1e-6));
        }
    }
}

TEST_CASE("causal block backward matches finite differences") {
    Rng rng(13);
    const nn::Block block = rand_block(rng, 8, 2);
    const TokenMat x = randn(rng, 5, 8, 1.0);
    const TokenMat w = randn(rng, 5, 8, 1.0);
    nn::Block::Cache cache;
    block.forward(x, true, &cache);
    const TokenMat grad = block.backward(w, cache);
    for (long i = 0; i < 5; ++i) {
        for (long j = 0; j < 8; j += 3) {
            const double num = fd([&](double h) {
                TokenMat xp = x;
                xp(i, j) += h;
                return block.forward(xp, true).cwiseProduct(w).sum();
            });
            CHECK(grad(i, j) == doctest::Approx(num).epsilon(1e-6));
        }
    }
}

TEST_CASE("causal attention ignores later tokens") {
    Rng rng(14);
    const nn::Block block = rand_block(rng, 8, 2);
    TokenMat x = randn(rng, 4, 8, 1.0);
    const TokenMat y = block.forward(x, true);
    x.row(3).setRandom();
    const TokenMat y2 = block.forward(x, true);
    CHECK(oracle::max_abs_diff(y.topRows(3), y2.topRows(3)) == 0.0);
}

namespace {

/// One 16-bit tensor "h" of the given dtype, written byte by byte.
void write_half_file(const std::filesystem::path& path, const std::string& dtype, const std::vector<std::uint16_t>& bits) {
    const std::string header = R"({"h":{"dtype":")" + dtype + R"(","shape":[)" + std::to_string(bits.size()) +
                               R"(],"data_offsets":[0,)" + std::to_string(2 * bits.size()) + "]}}";
    std::ofstream out(path, std::ios::binary);
    std::uint64_t n = header.size();
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((n >> (8 * i)) & 0xff));
    out << header;
    for (const auto b : bits) {
        out.put(static_cast<char>(b & 0xff));
        out.put(static_cast<char>(b >> 8));
    }
}

}  // namespace

TEST_CASE("safetensors round trip") {
    fixture::TempDir dir("st");
    std::map<std::string, safetensors::Tensor> t;
    t["m"] = {{2, 3}, {1.0, -2.5, 0.125, 3.0, 1e-3, 65504.0}};
    t["s"] = {{}, {0.75}};
    safetensors::save(dir / "f64.safetensors", t, safetensors::DType::f64);
    safetensors::save(dir / "f32.safetensors", t, safetensors::DType::f32);
    const auto f64 = safetensors::load(dir / "f64.safetensors");
    CHECK(f64.at("m").values == t["m"].values);
    CHECK(f64.at("m").shape == t["m"].shape);
    CHECK(f64.at("s").numel() == 1);
    const auto f32 = safetensors::load(dir / "f32.safetensors");
    CHECK(f32.at("m").values[4] == doctest::Approx(1e-3).epsilon(1e-7));
    CHECK(f32.at("s").values[0] == 0.75);
    CHECK_THROWS_AS(safetensors::save(dir / "x.safetensors", t, safetensors::DType::f16), ContractError);
}

TEST_CASE("safetensors reads half precision") {
    fixture::TempDir dir("st-half");
    // 1.0, -2.5, 0.125, 65504 (largest half), 2^-24 (smallest subnormal)
    write_half_file(dir / "f16.safetensors", "F16", {0x3C00, 0xC100, 0x3000, 0x7BFF, 0x0001});
    const auto f16 = safetensors::load(dir / "f16.safetensors").at("h").values;
    CHECK(f16 == std::vector<double>{1.0, -2.5, 0.125, 65504.0, std::ldexp(1.0, -24)});
    // 1.0, -2.5, 0.125, 0.75
    write_half_file(dir / "bf16.safetensors", "BF16", {0x3F80, 0xC020, 0x3E00, 0x3F40});
    const auto bf16 = safetensors::load(dir / "bf16.safetensors").at("h").values;
    CHECK(bf16 == std::vector<double>{1.0, -2.5, 0.125, 0.75});
}

TEST_CASE("safetensors rejects malformed files") {
    fixture::TempDir dir("st-bad");
    std::ofstream(dir / "bad.safetensors") << "xx";
    CHECK_THROWS_AS(safetensors::load(dir / "bad.safetensors"), DataError);
    CHECK_THROWS_AS(safetensors::load(dir / "missing.safetensors"), DataError);
}

TEST_CASE("Hugging Face tensor layout round trip") {
    auto tok = std::make_shared<WordTokenizer>(std::vector<std::string>{"a", "b", "c"});
    const Backbone original = tiny_clip(tok);
    fixture::TempDir dir("hf");
    safetensors::save(dir / "model.safetensors", original.to_hf_tensors(), safetensors::DType::f64);
    PretrainedBackboneConfig cfg;
    cfg.vision_heads = 2;
    cfg.text_heads = 2;
    const Backbone loaded = Backbone::from_hf_tensors(safetensors::load(dir / "model.safetensors"), cfg, tok);
    CHECK(loaded.temperature() == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(loaded.grid_rows() == 2);
    Rng rng(15);
    const Image img = random_image(rng, 8);
    const ContextConfig ctx{0.2, Padding::replicate};
    CHECK(oracle::max_abs_diff(loaded.analyze(img, ctx).surgery_patches.tokens(),
                               original.analyze(img, ctx).surgery_patches.tokens()) < 1e-12);
    CHECK((loaded.encode_image(img).vector - original.encode_image(img).vector).norm() < 1e-12);
    CHECK((loaded.encode_text("a b c") - original.encode_text("a b c")).norm() < 1e-12);
}

TEST_CASE("toy backbone cannot be exported to the checkpoint layout") {
    CHECK_THROWS_AS(fixture::toy_backbone()->to_hf_tensors(), ContractError);
}

TEST_CASE("missing pretrained weights") {
    PretrainedBackboneConfig cfg;
    CHECK_THROWS_AS(Backbone::pretrained(cfg), ConfigError);
    cfg.weights = "/nonexistent/model.safetensors";
    CHECK_THROWS_AS(Backbone::pretrained(cfg), DataError);
}
