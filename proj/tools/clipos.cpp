// clipos: few-shot OOD detection command-line driver.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"

#include "clipos/config.hpp"
#include "clipos/data.hpp"
#include "clipos/error.hpp"
#include "clipos/pipeline.hpp"
#include "clipos/synthetic_data.hpp"

namespace fs = std::filesystem;
using namespace clipos;

namespace {

struct ConfigArgs {
    std::string path;
    std::vector<std::string> overrides;

    void attach(CLI::App* cmd) {
        cmd->add_option("-c,--config", path, "run config (JSON)");
        cmd->add_option("--set", overrides, "override a config field, e.g. --set train.epochs=5")
            ->allow_extra_args(false);
    }

    RunConfig load() const { return load_config(path, overrides); }
};

int run(int argc, char** argv) {
    CLI::App app{"CLIP-OS few-shot out-of-distribution detection"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "only print warnings and errors");

    ConfigArgs train_args;
    auto* train = app.add_subcommand("train", "sample an episode, train the prompt context, write a checkpoint");
    train_args.attach(train);

    ConfigArgs eval_args;
    std::string eval_checkpoint;
    auto* eval = app.add_subcommand("eval", "score ID and OOD test sets with a checkpoint");
    eval_args.attach(eval);
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint.json")->required();

    ConfigArgs mask_args;
    std::string mask_class;
    std::string mask_checkpoint;
    std::string mask_out;
    std::vector<std::string> mask_images;
    auto* mask = app.add_subcommand("mask", "write foreground masks and similarity heatmaps");
    mask_args.attach(mask);
    mask->add_option("--class", mask_class, "ground-truth class name")->required();
    mask->add_option("--checkpoint", mask_checkpoint, "use learned prompts for the surgery map");
    mask->add_option("-o,--out", mask_out, "output directory (default <run dir>/masks)");
    mask->add_option("images", mask_images, "input images")->required();

    ConfigArgs ablate_args;
    std::vector<std::string> ablate_variants;
    auto* ablate = app.add_subcommand("ablate", "train and evaluate ablation variants");
    ablate_args.attach(ablate);
    ablate->add_option("--variant", ablate_variants,
                       "full, no_masking, no_synthesis, entropy_loss, topk_masking (default: all)");

    ConfigArgs sweep_args;
    std::vector<double> sweep_betas;
    auto* sweep = app.add_subcommand("sweep-beta", "AUROC as a function of the patch-context weight");
    sweep_args.attach(sweep);
    sweep->add_option("--betas", sweep_betas, "comma-separated values")->delimiter(',')->required();

    CifarConvertConfig cifar;
    auto* convert = app.add_subcommand("convert-dataset", "unpack CIFAR-10/100 binary archives");
    convert->add_option("--input", cifar.input, "directory with the extracted .bin files")->required();
    convert->add_option("--output", cifar.output, "dataset root to create")->required();
    convert->add_option("--variant", cifar.variant, "10 or 100")->default_val(10);
    convert->add_option("--per-class-limit", cifar.per_class_limit, "max images per class and split (0 = all)")
        ->default_val(0);

    ConfigArgs gen_args;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-synthetic", "write toy-backbone ID and OOD datasets");
    gen_args.attach(gen);
    gen->add_option("-o,--out", gen_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ExitCode::validation);
    }
    spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

    if (*train) {
        const RunConfig cfg = train_args.load();
        const TrainFiles files = cmd_train(cfg);
        std::cout << "checkpoint " << files.checkpoint.string() << "\n"
                  << "loss       " << files.loss_csv.string() << "\n";
    } else if (*eval) {
        const RunConfig cfg = eval_args.load();
        std::cout << metrics_table(cmd_eval(cfg, eval_checkpoint));
    } else if (*mask) {
        const RunConfig cfg = mask_args.load();
        std::vector<fs::path> images(mask_images.begin(), mask_images.end());
        const fs::path out = mask_out.empty() ? cfg.run_dir() / "masks" : fs::path(mask_out);
        const auto results = cmd_mask(cfg, images, mask_class, mask_checkpoint, out);
        for (std::size_t i = 0; i < images.size(); ++i) {
            std::cout << images[i].string() << ": " << results[i].partition.foreground.size() << "/"
                      << results[i].partition.cells() << " foreground cells\n";
        }
    } else if (*ablate) {
        const RunConfig cfg = ablate_args.load();
        std::vector<Variant> variants;
        for (const auto& v : ablate_variants) variants.push_back(parse_variant(v));
        if (variants.empty()) variants = all_variants();
        for (const auto& [v, m] : cmd_ablate(cfg, variants)) {
            std::cout << "== " << to_string(v) << "\n" << metrics_table(m);
        }
    } else if (*sweep) {
        const RunConfig cfg = sweep_args.load();
        for (const auto& [beta, m] : cmd_sweep_beta(cfg, sweep_betas)) {
            std::cout << "beta_ctx " << beta << "  Avg AUROC " << 100.0 * m.average_auroc << "\n";
        }
    } else if (*convert) {
        convert_cifar(cifar);
        std::cout << "wrote " << cifar.output.string() << "\n";
    } else if (*gen) {
        const RunConfig cfg = gen_args.load();
        if (cfg.backbone.kind != "toy") {
            throw ConfigError("backbone.kind: gen-synthetic needs the toy backbone");
        }
        const Backbone backbone = Backbone::toy(cfg.backbone.toy);
        const SyntheticLayout layout = generate_synthetic(backbone, cfg.backbone.preprocess, cfg.synthetic, gen_out);
        std::cout << "id       " << layout.id.string() << "\n"
                  << "near_ood " << layout.near_ood.string() << "\n"
                  << "far_ood  " << layout.far_ood.string() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.code());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::data);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::validation);
    }
}
