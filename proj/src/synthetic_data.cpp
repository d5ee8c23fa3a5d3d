#include "clipos/synthetic_data.hpp"

#include <algorithm>
#include <cstdio>

#include "clipos/data.hpp"
#include "clipos/error.hpp"
#include "clipos/rng.hpp"
#include "clipos/textbank.hpp"

namespace fs = std::filesystem;

namespace clipos {
namespace {

Vec jittered(const Vec& direction, double sd, Rng& rng) {
    Vec v = direction;
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += rng.normal(0.0, sd);
    return l2_normalized(v);
}

class Painter {
public:
    Painter(const Backbone& backbone, const PreprocessConfig& preprocess, const SyntheticConfig& cfg,
            const std::vector<Vec>& directions)
        : vision_(backbone.vision()), preprocess_(preprocess), cfg_(cfg) {
        const Mat a = vision_.proj.weight * vision_.patch_weight;
        pinv_ = a.completeOrthogonalDecomposition().pseudoInverse();
        double peak = 0.0;
        for (const auto& d : directions) peak = std::max(peak, (pinv_ * d).cwiseAbs().maxCoeff());
        scale_ = cfg.amplitude / peak;
    }

    /// Foreground cells near `fg`, all other cells near `bg`; values in [0, 1].
    Image paint(const Vec& fg, const Vec& bg, Rng& rng) const {
        const std::size_t grid = vision_.grid_side();
        const std::size_t ps = vision_.patch_size;
        const std::size_t h = cfg_.fg_min_cells + rng.below(cfg_.fg_max_cells - cfg_.fg_min_cells + 1);
        const std::size_t w = cfg_.fg_min_cells + rng.below(cfg_.fg_max_cells - cfg_.fg_min_cells + 1);
        const std::size_t top = rng.below(grid - h + 1);
        const std::size_t left = rng.below(grid - w + 1);

        Image img(3, vision_.image_size, vision_.image_size);
        for (std::size_t r = 0; r < grid; ++r) {
            for (std::size_t c = 0; c < grid; ++c) {
                const bool inside = r >= top && r < top + h && c >= left && c < left + w;
                Vec target = inside ? fg : bg;
                for (Eigen::Index i = 0; i < target.size(); ++i) target(i) += rng.normal(0.0, cfg_.cell_noise);
                const Vec pixels = scale_ * (pinv_ * target);
                for (std::size_t ch = 0; ch < 3; ++ch) {
                    for (std::size_t y = 0; y < ps; ++y) {
                        for (std::size_t x = 0; x < ps; ++x) {
                            const double normalized = pixels(static_cast<Eigen::Index>((ch * ps + y) * ps + x));
                            img.at(ch, r * ps + y, c * ps + x) =
                                normalized * preprocess_.std[ch] + preprocess_.mean[ch];
                        }
                    }
                }
            }
        }
        return img;
    }

private:
    const VisionTower& vision_;
    PreprocessConfig preprocess_;
    SyntheticConfig cfg_;
    Mat pinv_;
    double scale_ = 1.0;
};

fs::path image_path(const fs::path& dir, std::size_t index) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.png", index);
    return dir / name;
}

}  // namespace

SyntheticLayout generate_synthetic(const Backbone& backbone, const PreprocessConfig& preprocess,
                                   const SyntheticConfig& cfg, const fs::path& out) {
    const auto& vision = backbone.vision();
    if (backbone.kind() != "toy" || vision.ln_pre || vision.ln_post || vision.blocks.empty()) {
        throw ConfigError("gen-synthetic: requires the toy backbone");
    }
    if (preprocess.image_size != vision.image_size) {
        throw ConfigError("backbone.preprocess.image_size: must equal the toy image size " +
                          std::to_string(vision.image_size));
    }
    if (cfg.id_classes.size() < 2) {
        throw ConfigError("synthetic.id_classes: need at least two classes");
    }
    if (cfg.far_ood_words.empty()) {
        throw ConfigError("synthetic.far_ood_words: must not be empty");
    }
    if (cfg.fg_min_cells < 1 || cfg.fg_min_cells > cfg.fg_max_cells || cfg.fg_max_cells > vision.grid_side()) {
        throw ConfigError("synthetic.fg_cells: need 1 <= min <= max <= grid side");
    }
    for (const auto& w : cfg.far_ood_words) {
        if (std::find(cfg.id_classes.begin(), cfg.id_classes.end(), w) != cfg.id_classes.end()) {
            throw ConfigError("synthetic.far_ood_words: '" + w + "' is also an ID class");
        }
    }

    const Mat id_dirs = template_embeddings(backbone, cfg.id_classes, cfg.text_template);
    const Mat far_dirs = template_embeddings(backbone, cfg.far_ood_words, cfg.text_template);
    const Vec bg = template_embeddings(backbone, {cfg.background_word}, cfg.text_template).row(0).transpose();

    std::vector<Vec> directions{bg};
    for (Eigen::Index i = 0; i < id_dirs.rows(); ++i) directions.push_back(id_dirs.row(i).transpose());
    for (Eigen::Index i = 0; i < far_dirs.rows(); ++i) directions.push_back(far_dirs.row(i).transpose());
    const Painter painter(backbone, preprocess, cfg, directions);

    SyntheticLayout layout{out / "id", out / "near_ood", out / "far_ood"};
    Rng rng(cfg.seed);

    for (const auto& [split, count] : {std::pair{Split::train, cfg.train_per_class},
                                       std::pair{Split::test, cfg.test_per_class}}) {
        for (std::size_t c = 0; c < cfg.id_classes.size(); ++c) {
            const fs::path dir = layout.id / to_string(split) / cfg.id_classes[c];
            fs::create_directories(dir);
            const Vec centre = id_dirs.row(static_cast<Eigen::Index>(c)).transpose();
            for (std::size_t i = 0; i < count; ++i) {
                save_png_rgb(image_path(dir, i), painter.paint(jittered(centre, cfg.jitter, rng), bg, rng));
            }
        }
    }
    Manifest id_manifest{"synthetic_id", cfg.id_classes, {{"train", "train"}, {"test", "test"}}};
    id_manifest.save(layout.id);

    const std::size_t m = cfg.id_classes.size();
    fs::create_directories(layout.near_ood / "test");
    for (std::size_t i = 0; i < cfg.ood_per_set; ++i) {
        const std::size_t a = rng.below(m);
        std::size_t b = rng.below(m - 1);
        if (b >= a) ++b;
        const Vec centre = l2_normalized(Vec(id_dirs.row(static_cast<Eigen::Index>(a)).transpose() +
                                             id_dirs.row(static_cast<Eigen::Index>(b)).transpose()));
        save_png_rgb(image_path(layout.near_ood / "test", i), painter.paint(jittered(centre, cfg.jitter, rng), bg, rng));
    }
    Manifest{"synthetic_near_ood", {}, {{"test", "test"}}}.save(layout.near_ood);

    fs::create_directories(layout.far_ood / "test");
    for (std::size_t i = 0; i < cfg.ood_per_set; ++i) {
        const auto w = static_cast<Eigen::Index>(rng.below(cfg.far_ood_words.size()));
        const Vec centre = far_dirs.row(w).transpose();
        save_png_rgb(image_path(layout.far_ood / "test", i), painter.paint(jittered(centre, cfg.jitter, rng), bg, rng));
    }
    Manifest{"synthetic_far_ood", {}, {{"test", "test"}}}.save(layout.far_ood);
    return layout;
}

}  // namespace clipos
