#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "clipos/backbone/backbone.hpp"
#include "clipos/masking.hpp"
#include "clipos/objective.hpp"
#include "clipos/scoring.hpp"
#include "clipos/synthetic_data.hpp"
#include "clipos/textbank.hpp"

namespace clipos {

enum class MaskingMode { discrepancy, threshold, topk, none };

struct MaskingSettings {
    MaskingMode mode = MaskingMode::discrepancy;
    MaskingConfig partition;
    std::size_t topk = 1;
    std::string text_template = "a photo of a {}";
};

struct SynthesisSettings {
    bool enabled = true;
    bool use_background = true;
    LambdaPolicy lambda;
};

struct DatasetRef {
    std::string name;
    std::filesystem::path root;
};

struct DataSettings {
    DatasetRef id;
    std::vector<DatasetRef> ood;
    std::size_t shots = 1;
    std::uint64_t episode_seed = 0;
};

struct RunConfig {
    BackboneConfig backbone;
    ContextConfig context;
    MaskingSettings masking;
    PromptConfig prompt;
    SynthesisSettings synthesis;
    TrainConfig train;
    ScoringConfig scoring;
    DataSettings data;
    SyntheticConfig synthetic;
    std::string run_id = "run";
    std::filesystem::path output_dir = "runs";

    /// Range checks across sections; errors name the field path.
    void validate() const;
    std::filesystem::path run_dir() const { return output_dir / run_id; }
    /// TrainConfig with the synthesis section folded in.
    TrainConfig train_config() const;
};

/// Every field, including defaults. Paths are written as stored.
nlohmann::json config_to_json(const RunConfig& cfg);

/// Missing fields keep their defaults; unknown fields and wrong types raise
/// ConfigError naming the field path. Relative paths are resolved against
/// `base_dir` so the result is independent of the working directory.
RunConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

/// Applies "section.field=value" overrides to a JSON document. The value is
/// parsed as JSON when possible and used as a string otherwise.
void apply_overrides(nlohmann::json& j, const std::vector<std::string>& overrides);

/// Reads the file, applies overrides, resolves and validates. An empty
/// path starts from defaults, with paths relative to the working directory.
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

void save_config(const RunConfig& cfg, const std::filesystem::path& path);

std::string to_string(MaskingMode mode);

}  // namespace clipos
