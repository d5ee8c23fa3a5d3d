#include "clipos/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <spdlog/spdlog.h>

#include "json.hpp"

#include "clipos/error.hpp"
#include "clipos/parallel.hpp"
#include "clipos/synthesis.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace clipos {
namespace {

constexpr int kCheckpointVersion = 1;

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    return out;
}

DatasetSpec id_spec(const RunConfig& cfg, Split split) {
    if (cfg.data.id.root.empty()) {
        throw ConfigError("data.id.root: required");
    }
    return {cfg.data.id.name, cfg.data.id.root, split, Role::id};
}

std::vector<ScoredSample> score_items(const Backbone& backbone, const TextEmbeddings& emb, double tau,
                                      const std::vector<DatasetItem>& items, bool is_id, const RunConfig& cfg) {
    std::vector<ScoredSample> out(items.size());
    parallel_for(items.size(), [&](std::size_t i) {
        const Image img = load_image(items[i].path, cfg.backbone.preprocess);
        const auto mcm = mcm_score(backbone.encode_image(img).vector, emb, tau, cfg.scoring);
        out[i] = ScoredSample{mcm.score, mcm.predicted_class, is_id, items[i].label.value_or(0)};
    });
    return out;
}

cv::Mat upsample(const cv::Mat& grid, std::size_t size) {
    cv::Mat big;
    cv::resize(grid, big, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_NEAREST);
    return big;
}

void write_grid(std::ostream& out, const std::string& title, std::size_t rows, std::size_t cols, const Vec& v) {
    out << "# " << title << "\n";
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out << (c ? " " : "") << fmt::format("{:.6f}", v(static_cast<Eigen::Index>(r * cols + c)));
        }
        out << "\n";
    }
}

}  // namespace

TextEmbeddings mask_embeddings(const Backbone& backbone, const std::vector<std::string>& class_names,
                               const RunConfig& cfg) {
    std::vector<std::string> names = class_names;
    names.push_back(cfg.prompt.unknown_name);
    return TextEmbeddings{template_embeddings(backbone, names, cfg.masking.text_template)};
}

MaskResult compute_mask(const ImageAnalysis& analysis, const TextEmbeddings& mask_emb, std::size_t class_id,
                        const RunConfig& cfg) {
    return compute_mask(analysis, mask_emb, mask_emb, class_id, cfg);
}

MaskResult compute_mask(const ImageAnalysis& analysis, const TextEmbeddings& surgery_emb,
                        const TextEmbeddings& clip_emb, std::size_t class_id, const RunConfig& cfg) {
    if (class_id >= surgery_emb.num_id_classes() || class_id >= clip_emb.num_id_classes()) {
        throw ContractError("compute_mask: class index out of range");
    }
    const std::size_t rows = analysis.surgery_patches.rows();
    const std::size_t cols = analysis.surgery_patches.cols();
    MaskResult m;
    m.smap = similarity_map(analysis.surgery_patches, surgery_emb.row(class_id));
    m.smap_clip = similarity_map(analysis.clip_patches, clip_emb.row(class_id));
    switch (cfg.masking.mode) {
        case MaskingMode::discrepancy:
            m.scores = discrepancy_scores(m.smap, m.smap_clip, cfg.masking.partition);
            m.partition = discrepancy_partition(m.smap, m.smap_clip, cfg.masking.partition);
            break;
        case MaskingMode::threshold:
            m.scores = m.smap.scores;
            m.partition = threshold_partition(m.smap, cfg.masking.partition.threshold);
            break;
        case MaskingMode::topk: {
            const std::size_t k = std::min(cfg.masking.topk, surgery_emb.num_id_classes());
            m.scores = m.smap.scores;
            m.partition = topk_partition(analysis.surgery_patches, surgery_emb, class_id, k);
            break;
        }
        case MaskingMode::none:
            m.scores = m.smap.scores;
            m.partition = RegionPartition::whole(rows, cols);
            break;
    }
    m.partition = ensure_foreground(std::move(m.partition), m.scores);
    return m;
}

PreparedSample prepare_sample(const Backbone& backbone, const Image& image, std::size_t class_id,
                              const TextEmbeddings& mask_emb, const RunConfig& cfg) {
    const ImageAnalysis analysis = backbone.analyze(image, cfg.context);
    PreparedSample s;
    s.class_id = class_id;
    if (cfg.masking.mode == MaskingMode::none) {
        s.foreground = analysis.global.vector;
        return s;
    }
    const MaskResult m = compute_mask(analysis, mask_emb, class_id, cfg);
    s.foreground = masked_pool(analysis.surgery_patches, m.partition.foreground);
    if (!m.partition.background.empty()) {
        s.background = masked_pool(analysis.surgery_patches, m.partition.background);
    }
    return s;
}

Pipeline::Pipeline(RunConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    backbone_ = std::make_shared<const Backbone>(Backbone::create(cfg_.backbone));
}

Pipeline::Pipeline(RunConfig cfg, std::shared_ptr<const Backbone> backbone)
    : cfg_(std::move(cfg)), backbone_(std::move(backbone)) {
    cfg_.validate();
    if (!backbone_) throw ContractError("Pipeline: backbone required");
}

Episode Pipeline::sample() const {
    return sample_episode(id_spec(cfg_, Split::train), cfg_.data.shots, cfg_.data.episode_seed);
}

TrainingSet Pipeline::prepare(const Episode& episode) const {
    const TextEmbeddings mask_emb = mask_embeddings(*backbone_, episode.class_list, cfg_);
    return TrainingSet::from_episode(episode, [&](const EpisodeSample& s) {
        return prepare_sample(*backbone_, load_image(s.path, cfg_.backbone.preprocess), s.class_id, mask_emb, cfg_);
    });
}

std::unique_ptr<PromptBank> Pipeline::initial_bank(const std::vector<std::string>& class_names) const {
    Rng rng(cfg_.train.seed ^ fnv1a64("context"));
    return std::make_unique<PromptBank>(backbone_, class_names, cfg_.prompt, rng);
}

TrainOutcome Pipeline::train() const {
    TrainOutcome out;
    out.episode = sample();
    const TrainingSet data = prepare(out.episode);
    out.bank = initial_bank(out.episode.class_list);
    out.result = clipos::train(*out.bank, data, cfg_.train_config());
    return out;
}

EvalOutcome Pipeline::evaluate(const PromptBank& bank) const {
    const DatasetSpec id = id_spec(cfg_, Split::test);
    const Manifest id_manifest = Manifest::load(id.root);
    if (id_manifest.classes != bank.class_names()) {
        throw ConfigError("data.id: classes of '" + cfg_.data.id.name + "' do not match the checkpoint");
    }
    if (cfg_.data.ood.empty()) {
        throw ConfigError("data.ood: at least one OOD dataset required");
    }
    const std::set<std::string> id_classes(id_manifest.classes.begin(), id_manifest.classes.end());
    const TextEmbeddings emb = bank.embed();
    const double tau = bank.temperature();

    EvalOutcome out;
    out.id_samples = score_items(*backbone_, emb, tau, list_items(id), true, cfg_);
    for (const auto& ref : cfg_.data.ood) {
        const DatasetSpec spec{ref.name, ref.root, Split::test, Role::ood};
        const Manifest m = Manifest::load(spec.root);
        for (const auto& c : m.classes) {
            if (id_classes.count(c)) {
                throw ConfigError("data.ood: dataset '" + ref.name + "' shares class '" + c + "' with the ID set");
            }
        }
        out.ood_sets.push_back({ref.name, score_items(*backbone_, emb, tau, list_items(spec), false, cfg_)});
    }
    out.metrics = summarize(out.id_samples, out.ood_sets);
    return out;
}

void save_checkpoint(const fs::path& path, const PromptBank& bank, const RunConfig& cfg) {
    json j;
    j["format_version"] = kCheckpointVersion;
    j["M"] = bank.num_id_classes();
    j["token_len"] = bank.token_len();
    j["dim"] = bank.context().cols();
    j["class_names"] = bank.class_names();
    j["unknown_name"] = bank.unknown_name();
    j["seed"] = cfg.train.seed;
    j["backbone"] = cfg.backbone.kind;
    json ctx = json::array();
    for (Eigen::Index r = 0; r < bank.context().rows(); ++r) {
        std::vector<double> row(bank.context().row(r).begin(), bank.context().row(r).end());
        ctx.push_back(row);
    }
    j["context"] = ctx;
    open_out(path) << j.dump(1) << "\n";
}

std::unique_ptr<PromptBank> load_checkpoint(const fs::path& path, std::shared_ptr<const Backbone> backbone) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("checkpoint not found: " + path.string());
    }
    try {
        const json j = json::parse(in);
        if (j.at("format_version").get<int>() != kCheckpointVersion) {
            throw DataError("checkpoint " + path.string() + ": unsupported format_version");
        }
        const auto len = j.at("token_len").get<std::size_t>();
        const auto dim = j.at("dim").get<std::size_t>();
        const auto names = j.at("class_names").get<std::vector<std::string>>();
        if (names.size() != j.at("M").get<std::size_t>()) {
            throw DataError("checkpoint " + path.string() + ": M does not match class_names");
        }
        if (dim != backbone->text().width()) {
            throw DataError("checkpoint " + path.string() + ": context dim " + std::to_string(dim) +
                            " does not match the backbone text width " + std::to_string(backbone->text().width()));
        }
        const auto& rows = j.at("context");
        if (rows.size() != len) {
            throw DataError("checkpoint " + path.string() + ": context has wrong row count");
        }
        TokenMat ctx(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(dim));
        for (std::size_t r = 0; r < len; ++r) {
            const auto row = rows[r].get<std::vector<double>>();
            if (row.size() != dim) throw DataError("checkpoint " + path.string() + ": ragged context");
            for (std::size_t c = 0; c < dim; ++c) {
                ctx(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
            }
        }
        return std::make_unique<PromptBank>(std::move(backbone), names, ctx, j.at("unknown_name").get<std::string>());
    } catch (const json::exception& e) {
        throw DataError("checkpoint " + path.string() + ": " + e.what());
    }
}

void write_loss_csv(const fs::path& path, const std::vector<LossReport>& history) {
    auto out = open_out(path);
    out << "epoch,id_loss,ood_loss,total\n";
    for (std::size_t i = 0; i < history.size(); ++i) {
        const auto& h = history[i];
        out << fmt::format("{},{:.10f},{:.10f},{:.10f}\n", i + 1, h.id_loss, h.ood_loss, h.total);
    }
}

void write_metrics_csv(const fs::path& path, const MetricsReport& metrics) {
    auto out = open_out(path);
    out << "dataset,auroc\n";
    for (const auto& d : metrics.per_dataset) {
        out << fmt::format("{},{:.6f}\n", d.dataset, 100.0 * d.auroc);
    }
    out << fmt::format("Avg,{:.6f}\n", 100.0 * metrics.average_auroc);
}

std::string metrics_table(const MetricsReport& metrics) {
    std::size_t width = 7;
    for (const auto& d : metrics.per_dataset) width = std::max(width, d.dataset.size());
    std::string s = fmt::format("{:<{}}  {:>8}  {:>6}\n", "dataset", width, "AUROC", "n");
    for (const auto& d : metrics.per_dataset) {
        s += fmt::format("{:<{}}  {:>8.2f}  {:>6}\n", d.dataset, width, 100.0 * d.auroc, d.count);
    }
    s += fmt::format("{:<{}}  {:>8.2f}\n", "Avg", width, 100.0 * metrics.average_auroc);
    s += fmt::format("ID accuracy {:.2f} ({} images)\n", 100.0 * metrics.id_accuracy, metrics.id_count);
    return s;
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_masking: return "no_masking";
        case Variant::no_synthesis: return "no_synthesis";
        case Variant::entropy_loss: return "entropy_loss";
        case Variant::topk_masking: return "topk_masking";
    }
    return "?";
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v{Variant::full, Variant::no_masking, Variant::no_synthesis,
                                        Variant::entropy_loss, Variant::topk_masking};
    return v;
}

Variant parse_variant(const std::string& text) {
    for (const auto v : all_variants()) {
        if (to_string(v) == text) return v;
    }
    throw ConfigError("variant: expected full, no_masking, no_synthesis, entropy_loss or topk_masking, got '" +
                      text + "'");
}

RunConfig apply_variant(RunConfig cfg, Variant v) {
    switch (v) {
        case Variant::full: break;
        case Variant::no_masking: cfg.masking.mode = MaskingMode::none; break;
        case Variant::no_synthesis: cfg.synthesis.enabled = false; break;
        case Variant::entropy_loss: cfg.train.ood_objective = OodObjective::entropy; break;
        case Variant::topk_masking: cfg.masking.mode = MaskingMode::topk; break;
    }
    return cfg;
}

TrainFiles cmd_train(const RunConfig& cfg) {
    const Pipeline pipeline(cfg);
    const fs::path dir = cfg.run_dir();
    save_config(cfg, dir / "config.json");
    const TrainOutcome t = pipeline.train();
    TrainFiles files{dir / "checkpoint.json", dir / "loss.csv"};
    save_checkpoint(files.checkpoint, *t.bank, cfg);
    write_loss_csv(files.loss_csv, t.result.history);
    for (std::size_t i = 0; i < t.result.history.size(); ++i) {
        const auto& h = t.result.history[i];
        spdlog::info("epoch {:>3}  id {:.6f}  ood {:.6f}  total {:.6f}", i + 1, h.id_loss, h.ood_loss, h.total);
    }
    return files;
}

MetricsReport cmd_eval(const RunConfig& cfg, const fs::path& checkpoint) {
    const Pipeline pipeline(cfg);
    const auto bank = load_checkpoint(checkpoint, pipeline.backbone_ptr());
    const fs::path dir = cfg.run_dir();
    const EvalOutcome e = pipeline.evaluate(*bank);
    save_config(cfg, dir / "eval_config.json");
    write_metrics_csv(dir / "metrics.csv", e.metrics);
    open_out(dir / "metrics.txt") << metrics_table(e.metrics);
    return e.metrics;
}

std::vector<std::pair<Variant, MetricsReport>> cmd_ablate(const RunConfig& cfg, const std::vector<Variant>& variants) {
    std::vector<std::pair<Variant, MetricsReport>> rows;
    const fs::path dir = cfg.run_dir();
    save_config(cfg, dir / "config.json");
    for (const auto v : variants) {
        RunConfig vc = apply_variant(cfg, v);
        vc.output_dir = dir / "ablate";
        vc.run_id = to_string(v);
        const TrainFiles files = cmd_train(vc);
        rows.emplace_back(v, cmd_eval(vc, files.checkpoint));
    }
    auto out = open_out(dir / "ablation.csv");
    out << "variant";
    if (!rows.empty()) {
        for (const auto& d : rows.front().second.per_dataset) out << "," << d.dataset;
    }
    out << ",Avg,id_accuracy\n";
    for (const auto& [v, m] : rows) {
        out << to_string(v);
        for (const auto& d : m.per_dataset) out << fmt::format(",{:.6f}", 100.0 * d.auroc);
        out << fmt::format(",{:.6f},{:.6f}\n", 100.0 * m.average_auroc, 100.0 * m.id_accuracy);
    }
    return rows;
}

std::vector<std::pair<double, MetricsReport>> cmd_sweep_beta(const RunConfig& cfg, const std::vector<double>& betas) {
    if (betas.empty()) {
        throw ConfigError("sweep-beta: need at least one beta");
    }
    std::vector<std::pair<double, MetricsReport>> rows;
    const fs::path dir = cfg.run_dir();
    save_config(cfg, dir / "config.json");
    for (const double beta : betas) {
        RunConfig bc = cfg;
        bc.context.beta_ctx = beta;
        bc.output_dir = dir / "sweep";
        bc.run_id = fmt::format("beta_{:g}", beta);
        bc.validate();
        const TrainFiles files = cmd_train(bc);
        rows.emplace_back(beta, cmd_eval(bc, files.checkpoint));
    }
    auto out = open_out(dir / "sweep_beta.csv");
    out << "beta";
    for (const auto& d : rows.front().second.per_dataset) out << "," << d.dataset;
    out << ",Avg\n";
    for (const auto& [beta, m] : rows) {
        out << fmt::format("{:g}", beta);
        for (const auto& d : m.per_dataset) out << fmt::format(",{:.6f}", 100.0 * d.auroc);
        out << fmt::format(",{:.6f}\n", 100.0 * m.average_auroc);
    }
    return rows;
}

std::vector<MaskResult> cmd_mask(const RunConfig& cfg, const std::vector<fs::path>& images,
                                 const std::string& class_name, const fs::path& checkpoint, const fs::path& out_dir) {
    if (images.empty()) {
        throw ConfigError("mask: no images given");
    }
    const Pipeline pipeline(cfg);
    std::vector<std::string> classes{class_name};
    if (!cfg.data.id.root.empty()) {
        classes = Manifest::load(cfg.data.id.root).classes;
    }
    const auto it = std::find(classes.begin(), classes.end(), class_name);
    if (it == classes.end()) {
        throw ConfigError("mask: class '" + class_name + "' is not an ID class");
    }
    const auto class_id = static_cast<std::size_t>(it - classes.begin());
    TextEmbeddings mask_emb = mask_embeddings(pipeline.backbone(), classes, cfg);
    TextEmbeddings surgery_emb = mask_emb;
    if (!checkpoint.empty()) {
        const auto bank = load_checkpoint(checkpoint, pipeline.backbone_ptr());
        if (bank->class_names() != classes) {
            throw ConfigError("mask: checkpoint classes do not match data.id");
        }
        surgery_emb = bank->embed();
    }
    save_config(cfg, out_dir / "mask_config.json");

    std::vector<MaskResult> results(images.size());
    parallel_for(images.size(), [&](std::size_t i) {
        const Image img = load_image(images[i], cfg.backbone.preprocess);
        const ImageAnalysis analysis = pipeline.backbone().analyze(img, cfg.context);
        results[i] = compute_mask(analysis, surgery_emb, mask_emb, class_id, cfg);
    });

    const std::size_t size = cfg.backbone.preprocess.image_size;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const MaskResult& m = results[i];
        const std::string stem = images[i].stem().string();
        const auto rows = static_cast<int>(m.smap.rows);
        const auto cols = static_cast<int>(m.smap.cols);
        cv::Mat mask(rows, cols, CV_8UC1, cv::Scalar(0));
        cv::Mat heat(rows, cols, CV_8UC1);
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                const auto cell = static_cast<std::size_t>(r * cols + c);
                if (m.partition.is_foreground(cell)) mask.at<std::uint8_t>(r, c) = 255;
                const double v = std::clamp(m.scores(static_cast<Eigen::Index>(cell)), 0.0, 1.0);
                heat.at<std::uint8_t>(r, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        }
        fs::create_directories(out_dir);
        cv::Mat colored;
        cv::applyColorMap(upsample(heat, size), colored, cv::COLORMAP_JET);
        if (!cv::imwrite((out_dir / (stem + "_mask.png")).string(), upsample(mask, size)) ||
            !cv::imwrite((out_dir / (stem + "_heatmap.png")).string(), colored)) {
            throw DataError("mask: cannot write images in " + out_dir.string());
        }
        auto txt = open_out(out_dir / (stem + "_scores.txt"));
        write_grid(txt, "smap", m.smap.rows, m.smap.cols, m.smap.scores);
        write_grid(txt, "smap_clip", m.smap.rows, m.smap.cols, m.smap_clip.scores);
        write_grid(txt, "score", m.smap.rows, m.smap.cols, m.scores);
    }
    return results;
}

}  // namespace clipos
