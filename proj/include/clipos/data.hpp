#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "clipos/backbone/backbone.hpp"
#include "clipos/tensor.hpp"

namespace clipos {

enum class Split { train, test };
enum class Role { id, ood };

std::string to_string(Split split);
std::string to_string(Role role);
Split parse_split(const std::string& text);
Role parse_role(const std::string& text);

/// manifest.json at a dataset root:
///   {"name": "...", "classes": ["cat", ...], "splits": {"train": "train", "test": "test"}}
/// Labeled splits hold one sub-directory per class; a dataset with an
/// empty class list is unlabeled and keeps its images directly in the
/// split directory.
struct Manifest {
    std::string name;
    std::vector<std::string> classes;
    std::vector<std::pair<std::string, std::string>> splits;  // split name -> relative dir

    bool labeled() const { return !classes.empty(); }
    std::filesystem::path split_dir(const std::filesystem::path& root, Split split) const;

    static Manifest load(const std::filesystem::path& root);
    void save(const std::filesystem::path& root) const;
};

struct DatasetSpec {
    std::string name;
    std::filesystem::path root;
    Split split = Split::test;
    Role role = Role::ood;
};

struct DatasetItem {
    std::filesystem::path path;
    std::optional<std::size_t> label;  // absent for unlabeled datasets
};

/// Items sorted by (class order, file name). Missing directories raise
/// DataError naming the path.
std::vector<DatasetItem> list_items(const DatasetSpec& spec);

struct EpisodeSample {
    std::filesystem::path path;
    std::size_t class_id = 0;  // index into Episode::class_list
};

struct Episode {
    std::size_t shots = 0;
    std::vector<std::string> class_list;
    std::vector<EpisodeSample> samples;  // grouped by class, declared order
    std::uint64_t seed = 0;
};

/// Draws `shots` images per class without replacement: one Rng(seed),
/// classes visited in declared order, each class's files sorted by name,
/// then a partial Fisher-Yates over that class's indices (swap position i
/// with i + below(n - i) for i < shots). Only ID specs are accepted.
Episode sample_episode(const DatasetSpec& spec, std::size_t shots, std::uint64_t seed);

/// Decode, resize the shorter side to cfg.image_size (bicubic), center
/// crop, scale to [0, 1] and normalize per channel.
Image load_image(const std::filesystem::path& path, const PreprocessConfig& cfg);

/// 8-bit RGB in [0, 255] from an unnormalized [0, 1] image.
void save_png_rgb(const std::filesystem::path& path, const Image& image);
void save_png_gray(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                   const std::vector<std::uint8_t>& pixels);

/// Unpacks CIFAR-10 or CIFAR-100 binary archives (already extracted) into
/// the directory-per-class layout with a manifest. `per_class_limit` caps
/// images written per class and split (0 = all).
struct CifarConvertConfig {
    std::filesystem::path input;
    std::filesystem::path output;
    int variant = 10;  // 10 or 100
    std::size_t per_class_limit = 0;
};
void convert_cifar(const CifarConvertConfig& cfg);

}  // namespace clipos
