#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "clipos/backbone/backbone.hpp"
#include "clipos/config.hpp"
#include "clipos/synthetic_data.hpp"

namespace fixture {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

std::shared_ptr<const clipos::Backbone> toy_backbone();

/// Synthetic ID / near-OOD / far-OOD datasets for the default toy backbone,
/// generated once per process.
const clipos::SyntheticLayout& toy_datasets();

/// Toy run config pointing at toy_datasets(), writing under `output_dir`.
clipos::RunConfig toy_config(const std::filesystem::path& output_dir);

/// Writes a w x h solid-colour RGB PNG.
void write_solid_png(const std::filesystem::path& path, int w, int h, unsigned char r, unsigned char g,
                     unsigned char b);

/// Labeled dataset of solid-colour PNGs: classes x per_class images per split.
void write_labeled_dataset(const std::filesystem::path& root, const std::vector<std::string>& classes,
                           std::size_t per_class);

}  // namespace fixture
