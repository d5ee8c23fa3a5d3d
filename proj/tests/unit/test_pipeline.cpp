#include "doctest.h"

#include <fstream>
#include <sstream>

#include "clipos/error.hpp"
#include "clipos/pipeline.hpp"
#include "support/fixtures.hpp"

using namespace clipos;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunConfig short_run(const fs::path& out) {
    RunConfig cfg = fixture::toy_config(out);
    cfg.train.epochs = 2;
    return cfg;
}

}  // namespace

TEST_CASE("checkpoint round trip") {
    fixture::TempDir dir("ckpt");
    const RunConfig cfg = short_run(dir.path());
    const Pipeline p(cfg, fixture::toy_backbone());
    auto bank = p.initial_bank({"cat", "dog"});
    bank->context()(0, 0) = 0.1234567890123456789;
    save_checkpoint(dir / "c.json", *bank, cfg);
    const auto back = load_checkpoint(dir / "c.json", fixture::toy_backbone());
    CHECK(back->class_names() == bank->class_names());
    CHECK(back->unknown_name() == bank->unknown_name());
    CHECK(back->context() == bank->context());
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.json", fixture::toy_backbone()), DataError);
    std::ofstream(dir / "bad.json") << R"({"format_version": 99})";
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.json", fixture::toy_backbone()), DataError);
}

TEST_CASE("loss and metrics CSV layout") {
    fixture::TempDir dir("csv");
    write_loss_csv(dir / "loss.csv", {{0.5, 0.25, 1.0, 0.75}, {0.4, 0.2, 1.0, 0.6}});
    CHECK(slurp(dir / "loss.csv") ==
          "epoch,id_loss,ood_loss,total\n1,0.5000000000,0.2500000000,0.7500000000\n"
          "2,0.4000000000,0.2000000000,0.6000000000\n");
    MetricsReport m;
    m.per_dataset = {{"far", 0.75, 2}};
    m.average_auroc = 0.75;
    write_metrics_csv(dir / "metrics.csv", m);
    CHECK(slurp(dir / "metrics.csv") == "dataset,auroc\nfar,75.000000\nAvg,75.000000\n");
}

TEST_CASE("variants change one setting each") {
    const RunConfig base;
    CHECK(config_to_json(apply_variant(base, Variant::full)) == config_to_json(base));
    CHECK(apply_variant(base, Variant::no_masking).masking.mode == MaskingMode::none);
    CHECK_FALSE(apply_variant(base, Variant::no_synthesis).synthesis.enabled);
    CHECK(apply_variant(base, Variant::entropy_loss).train.ood_objective == OodObjective::entropy);
    CHECK(apply_variant(base, Variant::topk_masking).masking.mode == MaskingMode::topk);
    for (const Variant v : all_variants()) CHECK(parse_variant(to_string(v)) == v);
    CHECK_THROWS_AS(parse_variant("nope"), ConfigError);
}

TEST_CASE("toy training and evaluation") {
    fixture::TempDir dir("toy-run");
    const RunConfig cfg = fixture::toy_config(dir.path());
    const Pipeline p(cfg, fixture::toy_backbone());
    const TrainOutcome t = p.train();
    CHECK(t.result.history.size() == cfg.train.epochs);
    CHECK(t.episode.samples.size() == t.episode.class_list.size());
    const EvalOutcome a = p.evaluate(*t.bank);
    const EvalOutcome b = p.evaluate(*t.bank);
    REQUIRE(a.metrics.per_dataset.size() == 2);
    CHECK(a.metrics.average_auroc > 0.5);
    CHECK(a.metrics.average_auroc == b.metrics.average_auroc);
    CHECK(a.metrics.id_accuracy > 1.0 / static_cast<double>(t.episode.class_list.size()));

    RunConfig one = cfg;
    one.data.ood.resize(1);
    const EvalOutcome single = Pipeline(one, fixture::toy_backbone()).evaluate(*t.bank);
    REQUIRE(single.metrics.per_dataset.size() == 1);
    CHECK(single.metrics.average_auroc == single.metrics.per_dataset[0].auroc);
    CHECK(single.metrics.per_dataset[0].auroc == a.metrics.per_dataset[0].auroc);
}

TEST_CASE("masks of a training image") {
    const RunConfig cfg = fixture::toy_config(fs::temp_directory_path());
    const Pipeline p(cfg, fixture::toy_backbone());
    const Episode ep = p.sample();
    const TextEmbeddings emb = mask_embeddings(p.backbone(), ep.class_list, cfg);
    CHECK(emb.num_prompts() == ep.class_list.size() + 1);
    const Image img = load_image(ep.samples[0].path, cfg.backbone.preprocess);
    const MaskResult r = compute_mask(p.backbone().analyze(img, cfg.context), emb, ep.samples[0].class_id, cfg);
    CHECK_FALSE(r.partition.foreground.empty());
    CHECK(r.partition.foreground.size() + r.partition.background.size() == r.smap.scores.size());

    RunConfig none = cfg;
    none.masking.mode = MaskingMode::none;
    const MaskResult all = compute_mask(p.backbone().analyze(img, cfg.context), emb, 0, none);
    CHECK(all.partition.background.empty());
}
