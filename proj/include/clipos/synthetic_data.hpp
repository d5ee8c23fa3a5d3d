#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clipos/backbone/backbone.hpp"

namespace clipos {

/// Desk-scale image datasets for the toy backbone. Each image is a grid of
/// patches whose pixels are chosen so the toy's linear patch embedding
/// lands near a text direction: foreground cells (a random rectangle) near
/// the image's class direction, the rest near the background direction.
/// Class directions are template text embeddings plus per-image jitter, so
/// ID and OOD images form Gaussian clusters around disjoint centres.
struct SyntheticConfig {
    std::uint64_t seed = 0;
    std::vector<std::string> id_classes{"cat", "ship", "truck"};
    std::vector<std::string> far_ood_words{"tree", "flower", "house", "fish", "rock", "lamp"};
    std::string background_word = "background";
    std::string text_template = "a photo of a {}";
    std::size_t train_per_class = 8;
    std::size_t test_per_class = 30;
    std::size_t ood_per_set = 90;
    std::size_t fg_min_cells = 2;  // side length of the foreground rectangle, in cells
    std::size_t fg_max_cells = 3;
    double jitter = 0.08;        // per-image class-direction noise (per embedding coordinate)
    double cell_noise = 0.1;     // per-cell noise
    double amplitude = 0.7;      // peak |normalized pixel| of a noise-free cell
};

struct SyntheticLayout {
    std::filesystem::path id;        // labeled, train + test
    std::filesystem::path near_ood;  // unlabeled test: midpoints of ID class pairs
    std::filesystem::path far_ood;   // unlabeled test: other vocabulary words
};

/// Writes three datasets (each with manifest.json) under `out`. Requires
/// a toy backbone without layer norms between patch embedding and
/// projection, so the patch-to-feature map is linear.
SyntheticLayout generate_synthetic(const Backbone& backbone, const PreprocessConfig& preprocess,
                                   const SyntheticConfig& cfg, const std::filesystem::path& out);

}  // namespace clipos
