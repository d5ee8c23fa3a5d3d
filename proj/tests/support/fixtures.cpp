#include "fixtures.hpp"

#include <atomic>
#include <unistd.h>

#include "clipos/data.hpp"

namespace fs = std::filesystem;

namespace fixture {

TempDir::TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("clipos-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

std::shared_ptr<const clipos::Backbone> toy_backbone() {
    static const auto backbone = std::make_shared<const clipos::Backbone>(clipos::Backbone::toy({}));
    return backbone;
}

clipos::RunConfig toy_config(const fs::path& output_dir) {
    clipos::RunConfig cfg = clipos::load_config(fs::path(CLIPOS_SOURCE_DIR) / "configs" / "toy.json");
    const auto& layout = toy_datasets();
    cfg.data.id.root = layout.id;
    cfg.data.ood = {{"near_ood", layout.near_ood}, {"far_ood", layout.far_ood}};
    cfg.output_dir = output_dir;
    return cfg;
}

const clipos::SyntheticLayout& toy_datasets() {
    static TempDir dir("toy-data");
    static const clipos::SyntheticLayout layout = [] {
        const clipos::RunConfig cfg = clipos::load_config(fs::path(CLIPOS_SOURCE_DIR) / "configs" / "toy.json");
        return clipos::generate_synthetic(*toy_backbone(), cfg.backbone.preprocess, cfg.synthetic, dir.path());
    }();
    return layout;
}

void write_solid_png(const fs::path& path, int w, int h, unsigned char r, unsigned char g, unsigned char b) {
    clipos::Image img(3, static_cast<std::size_t>(h), static_cast<std::size_t>(w));
    const unsigned char rgb[3] = {r, g, b};
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < img.height; ++y) {
            for (std::size_t x = 0; x < img.width; ++x) {
                img.at(c, y, x) = rgb[c] / 255.0;
            }
        }
    }
    fs::create_directories(path.parent_path());
    clipos::save_png_rgb(path, img);
}

void write_labeled_dataset(const fs::path& root, const std::vector<std::string>& classes, std::size_t per_class) {
    clipos::Manifest m;
    m.name = root.filename().string();
    m.classes = classes;
    m.splits = {{"train", "train"}, {"test", "test"}};
    m.save(root);
    for (const char* split : {"train", "test"}) {
        for (std::size_t c = 0; c < classes.size(); ++c) {
            for (std::size_t i = 0; i < per_class; ++i) {
                const auto v = static_cast<unsigned char>(10 * c + i);
                write_solid_png(root / split / classes[c] / ("img_" + std::to_string(i) + ".png"), 8, 8, v, v, v);
            }
        }
    }
}

}  // namespace fixture
