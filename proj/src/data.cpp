#include "clipos/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "json.hpp"

#include "clipos/error.hpp"
#include "clipos/rng.hpp"

namespace fs = std::filesystem;

namespace clipos {
namespace {

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".ppm";
}

std::vector<fs::path> sorted_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) {
        throw DataError("missing dataset directory: " + dir.string());
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && is_image_file(entry.path())) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    return files;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

}  // namespace

std::string to_string(Split split) {
    return split == Split::train ? "train" : "test";
}

std::string to_string(Role role) {
    return role == Role::id ? "id" : "ood";
}

Split parse_split(const std::string& text) {
    if (text == "train") return Split::train;
    if (text == "test") return Split::test;
    throw ConfigError("split: expected train or test, got '" + text + "'");
}

Role parse_role(const std::string& text) {
    if (text == "id") return Role::id;
    if (text == "ood") return Role::ood;
    throw ConfigError("role: expected id or ood, got '" + text + "'");
}

fs::path Manifest::split_dir(const fs::path& root, Split split) const {
    const std::string key = to_string(split);
    for (const auto& [name, dir] : splits) {
        if (name == key) return root / dir;
    }
    throw DataError("dataset '" + name + "' at " + root.string() + " has no " + key + " split");
}

Manifest Manifest::load(const fs::path& root) {
    const fs::path file = root / "manifest.json";
    std::ifstream in(file);
    if (!in) {
        throw DataError("missing manifest: " + file.string());
    }
    Manifest m;
    try {
        const auto j = nlohmann::json::parse(in);
        m.name = j.at("name").get<std::string>();
        m.classes = j.value("classes", std::vector<std::string>{});
        for (const auto& [k, v] : j.at("splits").items()) {
            m.splits.emplace_back(k, v.get<std::string>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest " + file.string() + ": " + e.what());
    }
    std::set<std::string> seen;
    for (const auto& c : m.classes) {
        if (!seen.insert(c).second) {
            throw DataError("manifest " + file.string() + ": duplicate class '" + c + "'");
        }
    }
    return m;
}

void Manifest::save(const fs::path& root) const {
    nlohmann::json j;
    j["name"] = name;
    j["classes"] = classes;
    j["splits"] = nlohmann::json::object();
    for (const auto& [k, v] : splits) j["splits"][k] = v;
    fs::create_directories(root);
    std::ofstream out(root / "manifest.json");
    if (!out) {
        throw DataError("cannot write manifest in " + root.string());
    }
    out << j.dump(2) << "\n";
}

std::vector<DatasetItem> list_items(const DatasetSpec& spec) {
    const Manifest manifest = Manifest::load(spec.root);
    const fs::path dir = manifest.split_dir(spec.root, spec.split);
    std::vector<DatasetItem> items;
    if (!manifest.labeled()) {
        for (auto& p : sorted_images(dir)) items.push_back({std::move(p), std::nullopt});
        return items;
    }
    for (std::size_t c = 0; c < manifest.classes.size(); ++c) {
        for (auto& p : sorted_images(dir / manifest.classes[c])) items.push_back({std::move(p), c});
    }
    return items;
}

Episode sample_episode(const DatasetSpec& spec, std::size_t shots, std::uint64_t seed) {
    if (spec.role != Role::id) {
        throw ConfigError("sample_episode: dataset '" + spec.name + "' is not an ID dataset");
    }
    if (shots == 0) {
        throw ConfigError("data.shots: must be >= 1");
    }
    const Manifest manifest = Manifest::load(spec.root);
    if (!manifest.labeled()) {
        throw DataError("sample_episode: dataset '" + spec.name + "' has no class list");
    }
    const fs::path dir = manifest.split_dir(spec.root, spec.split);
    Episode episode;
    episode.shots = shots;
    episode.class_list = manifest.classes;
    episode.seed = seed;
    Rng rng(seed);
    for (std::size_t c = 0; c < manifest.classes.size(); ++c) {
        std::vector<fs::path> files = sorted_images(dir / manifest.classes[c]);
        if (files.size() < shots) {
            throw DataError("class '" + manifest.classes[c] + "' has " + std::to_string(files.size()) +
                            " images, " + std::to_string(shots) + " shots requested");
        }
        const std::size_t n = files.size();
        for (std::size_t i = 0; i < shots; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
            std::swap(files[i], files[j]);
            episode.samples.push_back({files[i], c});
        }
    }
    return episode;
}

Image load_image(const fs::path& path, const PreprocessConfig& cfg) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) {
        throw DataError("cannot decode image " + path.string());
    }
    const int size = static_cast<int>(cfg.image_size);
    if (size <= 0) {
        throw ConfigError("backbone.preprocess.image_size: must be >= 1");
    }
    const int h = bgr.rows;
    const int w = bgr.cols;
    int new_h = size;
    int new_w = size;
    if (h <= w) {
        new_w = static_cast<int>(std::lround(static_cast<double>(w) * size / h));
    } else {
        new_h = static_cast<int>(std::lround(static_cast<double>(h) * size / w));
    }
    cv::Mat resized = bgr;
    if (new_h != h || new_w != w) {
        cv::resize(bgr, resized, cv::Size(new_w, new_h), 0, 0, cv::INTER_CUBIC);
    }
    const int top = (new_h - size) / 2;
    const int left = (new_w - size) / 2;
    const cv::Mat crop = resized(cv::Rect(left, top, size, size));

    Image img(3, cfg.image_size, cfg.image_size);
    for (int y = 0; y < size; ++y) {
        const auto* row = crop.ptr<cv::Vec3b>(y);
        for (int x = 0; x < size; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = row[x][2 - c] / 255.0;  // BGR -> RGB
                img.at(static_cast<std::size_t>(c), static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
                    (v - cfg.mean[static_cast<std::size_t>(c)]) / cfg.std[static_cast<std::size_t>(c)];
            }
        }
    }
    return img;
}

void save_png_rgb(const fs::path& path, const Image& image) {
    if (image.channels != 3) {
        throw ContractError("save_png_rgb: need 3 channels");
    }
    cv::Mat out(static_cast<int>(image.height), static_cast<int>(image.width), CV_8UC3);
    for (std::size_t y = 0; y < image.height; ++y) {
        auto* row = out.ptr<cv::Vec3b>(static_cast<int>(y));
        for (std::size_t x = 0; x < image.width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
                row[x][2 - c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        }
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), out)) {
        throw DataError("cannot write " + path.string());
    }
}

void save_png_gray(const fs::path& path, std::size_t rows, std::size_t cols, const std::vector<std::uint8_t>& pixels) {
    if (pixels.size() != rows * cols) {
        throw ContractError("save_png_gray: pixel count does not match shape");
    }
    cv::Mat out(static_cast<int>(rows), static_cast<int>(cols), CV_8UC1);
    std::copy(pixels.begin(), pixels.end(), out.data);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), out)) {
        throw DataError("cannot write " + path.string());
    }
}

void convert_cifar(const CifarConvertConfig& cfg) {
    if (cfg.variant != 10 && cfg.variant != 100) {
        throw ConfigError("convert-dataset: variant must be 10 or 100");
    }
    const bool fine = cfg.variant == 100;
    const std::vector<std::string> classes =
        read_lines(cfg.input / (fine ? "fine_label_names.txt" : "batches.meta.txt"));
    if (classes.size() != static_cast<std::size_t>(cfg.variant)) {
        throw DataError("convert-dataset: expected " + std::to_string(cfg.variant) + " class names, found " +
                        std::to_string(classes.size()));
    }
    std::vector<std::pair<std::string, std::vector<std::string>>> splits;
    if (fine) {
        splits = {{"train", {"train.bin"}}, {"test", {"test.bin"}}};
    } else {
        splits = {{"train", {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin",
                             "data_batch_5.bin"}},
                  {"test", {"test_batch.bin"}}};
    }
    const std::size_t label_bytes = fine ? 2 : 1;
    const std::size_t record = label_bytes + 3072;
    for (const auto& [split, files] : splits) {
        std::vector<std::size_t> written(classes.size(), 0);
        for (const auto& name : classes) fs::create_directories(cfg.output / split / name);
        std::size_t index = 0;
        for (const auto& file : files) {
            const auto bytes = read_bytes(cfg.input / file);
            if (bytes.size() % record != 0) {
                throw DataError("convert-dataset: " + file + " is not a whole number of records");
            }
            for (std::size_t off = 0; off < bytes.size(); off += record, ++index) {
                const std::size_t label = bytes[off + label_bytes - 1];
                if (label >= classes.size()) {
                    throw DataError("convert-dataset: label " + std::to_string(label) + " out of range in " + file);
                }
                if (cfg.per_class_limit != 0 && written[label] >= cfg.per_class_limit) continue;
                cv::Mat img(32, 32, CV_8UC3);
                const std::uint8_t* px = bytes.data() + off + label_bytes;
                for (int y = 0; y < 32; ++y) {
                    for (int x = 0; x < 32; ++x) {
                        const int i = y * 32 + x;
                        img.at<cv::Vec3b>(y, x) = cv::Vec3b(px[2048 + i], px[1024 + i], px[i]);
                    }
                }
                const fs::path dir = cfg.output / split / classes[label];
                char name[32];
                std::snprintf(name, sizeof name, "%06zu.png", index);
                if (!cv::imwrite((dir / name).string(), img)) {
                    throw DataError("cannot write " + (dir / name).string());
                }
                ++written[label];
            }
        }
    }
    Manifest m;
    m.name = fine ? "cifar100" : "cifar10";
    m.classes = classes;
    m.splits = {{"train", "train"}, {"test", "test"}};
    m.save(cfg.output);
}

}  // namespace clipos
