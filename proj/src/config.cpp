#include "clipos/config.hpp"

#include <fstream>
#include <set>
#include <type_traits>

#include "clipos/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace clipos {
namespace {

std::string type_name(const json& v) {
    return v.type_name();
}

/// Reads one JSON object, tracking which keys were consumed so leftovers
/// can be reported.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) {
            throw ConfigError(label() + ": expected an object, got " + type_name(j_));
        }
    }

    Reader section(const std::string& key) {
        used_.insert(key);
        static const json empty = json::object();
        const auto it = j_.find(key);
        return Reader(it == j_.end() ? empty : *it, child(key));
    }

    bool has(const std::string& key) const { return j_.contains(key); }
    void mark(const std::string& key) { used_.insert(key); }

    template <typename T>
    void get(const std::string& key, T& out) {
        used_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        read(*it, child(key), out);
    }

    void finish() const {
        for (const auto& [k, _] : j_.items()) {
            if (!used_.count(k)) {
                throw ConfigError(child(k) + ": unknown field");
            }
        }
    }

    std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    std::string label() const { return path_.empty() ? "config" : path_; }

    static void read(const json& v, const std::string& path, double& out) {
        if (!v.is_number()) throw ConfigError(path + ": expected a number, got " + type_name(v));
        out = v.get<double>();
    }
    static void read(const json& v, const std::string& path, bool& out) {
        if (!v.is_boolean()) throw ConfigError(path + ": expected true or false, got " + type_name(v));
        out = v.get<bool>();
    }
    static void read(const json& v, const std::string& path, std::string& out) {
        if (!v.is_string()) throw ConfigError(path + ": expected a string, got " + type_name(v));
        out = v.get<std::string>();
    }
    static void read(const json& v, const std::string& path, fs::path& out) {
        std::string s;
        read(v, path, s);
        out = s;
    }
    template <typename T>
        requires std::is_unsigned_v<T>
    static void read(const json& v, const std::string& path, T& out) {
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned())) {
            throw ConfigError(path + ": expected a non-negative integer, got " +
                              (v.is_number() ? v.dump() : type_name(v)));
        }
        out = v.get<T>();
    }
    static void read(const json& v, const std::string& path, std::vector<std::string>& out) {
        if (!v.is_array()) throw ConfigError(path + ": expected an array of strings");
        out.clear();
        for (std::size_t i = 0; i < v.size(); ++i) {
            std::string s;
            read(v[i], path + "[" + std::to_string(i) + "]", s);
            out.push_back(s);
        }
    }
    static void read(const json& v, const std::string& path, std::array<double, 3>& out) {
        if (!v.is_array() || v.size() != 3) throw ConfigError(path + ": expected an array of three numbers");
        for (std::size_t i = 0; i < 3; ++i) read(v[i], path + "[" + std::to_string(i) + "]", out[i]);
    }

    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

template <typename Enum>
Enum parse_enum(const std::string& path, const std::string& text,
                const std::vector<std::pair<std::string, Enum>>& options) {
    std::string names;
    for (const auto& [name, value] : options) {
        if (name == text) return value;
        names += (names.empty() ? "" : ", ") + name;
    }
    throw ConfigError(path + ": expected one of " + names + ", got '" + text + "'");
}

const std::vector<std::pair<std::string, MaskingMode>> kMaskingModes{
    {"discrepancy", MaskingMode::discrepancy},
    {"threshold", MaskingMode::threshold},
    {"topk", MaskingMode::topk},
    {"none", MaskingMode::none}};
const std::vector<std::pair<std::string, Padding>> kPaddings{{"replicate", Padding::replicate},
                                                             {"zero", Padding::zero}};
const std::vector<std::pair<std::string, OodObjective>> kOodObjectives{
    {"unknown_prompt", OodObjective::unknown_prompt}, {"entropy", OodObjective::entropy}};
const std::vector<std::pair<std::string, LambdaPolicy::Kind>> kLambdaKinds{{"uniform", LambdaPolicy::Kind::uniform},
                                                                           {"fixed", LambdaPolicy::Kind::fixed}};

template <typename Enum>
std::string enum_name(Enum value, const std::vector<std::pair<std::string, Enum>>& options) {
    for (const auto& [name, v] : options) {
        if (v == value) return name;
    }
    return "?";
}

template <typename Enum>
void get_enum(Reader& r, const std::string& key, Enum& out, const std::vector<std::pair<std::string, Enum>>& options) {
    if (!r.has(key)) return;
    std::string text;
    r.get(key, text);
    out = parse_enum(r.child(key), text, options);
}

fs::path resolve(const fs::path& base, const fs::path& p) {
    if (p.empty() || p.is_absolute()) return p;
    return fs::weakly_canonical(base / p);
}

DatasetRef read_dataset(Reader r) {
    DatasetRef d;
    r.get("name", d.name);
    r.get("root", d.root);
    r.finish();
    return d;
}

json dataset_json(const DatasetRef& d) {
    return {{"name", d.name}, {"root", d.root.string()}};
}

}  // namespace

std::string to_string(MaskingMode mode) {
    return enum_name(mode, kMaskingModes);
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t = train;
    t.synthesize = synthesis.enabled;
    t.use_background = synthesis.use_background && masking.mode != MaskingMode::none;
    t.lambda = synthesis.lambda;
    return t;
}

void RunConfig::validate() const {
    if (backbone.kind != "toy" && backbone.kind != "pretrained") {
        throw ConfigError("backbone.kind: expected toy or pretrained, got '" + backbone.kind + "'");
    }
    if (backbone.preprocess.image_size == 0) throw ConfigError("backbone.preprocess.image_size: must be >= 1");
    for (std::size_t i = 0; i < 3; ++i) {
        if (!(backbone.preprocess.std[i] > 0.0)) {
            throw ConfigError("backbone.preprocess.std[" + std::to_string(i) + "]: must be > 0");
        }
    }
    if (backbone.kind == "toy" && !(backbone.toy.temperature > 0.0)) {
        throw ConfigError("backbone.toy.temperature: must be > 0");
    }
    if (!(context.beta_ctx >= 0.0)) throw ConfigError("context.beta_ctx: must be >= 0");
    if (!(masking.partition.discrepancy >= 0.0)) throw ConfigError("masking.discrepancy: must be >= 0");
    if (!(masking.partition.threshold >= 0.0 && masking.partition.threshold <= 1.0)) {
        throw ConfigError("masking.threshold: must lie in [0, 1]");
    }
    if (masking.topk < 1) throw ConfigError("masking.topk: must be >= 1");
    if (masking.text_template.find("{}") == std::string::npos) {
        throw ConfigError("masking.template: must contain {}");
    }
    if (prompt.token_len < 1) throw ConfigError("prompt.token_len: must be >= 1");
    if (!(prompt.init_std >= 0.0)) throw ConfigError("prompt.init_std: must be >= 0");
    if (prompt.unknown_name.empty()) throw ConfigError("prompt.unknown_name: must not be empty");
    train_config().validate();
    if (data.shots < 1) throw ConfigError("data.shots: must be >= 1");
    if (run_id.empty() || run_id.find('/') != std::string::npos) {
        throw ConfigError("run_id: must be a non-empty name without '/'");
    }
}

json config_to_json(const RunConfig& c) {
    json j;
    const auto& b = c.backbone;
    j["backbone"] = {
        {"kind", b.kind},
        {"toy",
         {{"seed", b.toy.seed},
          {"image_size", b.toy.image_size},
          {"patch_size", b.toy.patch_size},
          {"width", b.toy.width},
          {"embed_dim", b.toy.embed_dim},
          {"text_width", b.toy.text_width},
          {"text_layers", b.toy.text_layers},
          {"text_heads", b.toy.text_heads},
          {"context_length", b.toy.context_length},
          {"temperature", b.toy.temperature},
          {"vocabulary", b.toy.vocabulary},
          {"salience", b.toy.salience},
          {"content_focus", b.toy.content_focus},
          {"function_words", b.toy.function_words}}},
        {"pretrained",
         {{"weights", b.pretrained.weights.string()},
          {"vocab", b.pretrained.vocab.string()},
          {"merges", b.pretrained.merges.string()},
          {"vision_heads", b.pretrained.vision_heads},
          {"text_heads", b.pretrained.text_heads},
          {"layer_norm_eps", b.pretrained.layer_norm_eps}}},
        {"preprocess",
         {{"image_size", b.preprocess.image_size}, {"mean", b.preprocess.mean}, {"std", b.preprocess.std}}}};
    j["context"] = {{"beta_ctx", c.context.beta_ctx}, {"padding", enum_name(c.context.padding, kPaddings)}};
    j["masking"] = {{"mode", to_string(c.masking.mode)},
                    {"discrepancy", c.masking.partition.discrepancy},
                    {"threshold", c.masking.partition.threshold},
                    {"topk", c.masking.topk},
                    {"template", c.masking.text_template}};
    j["prompt"] = {{"token_len", c.prompt.token_len},
                   {"init_std", c.prompt.init_std},
                   {"unknown_name", c.prompt.unknown_name}};
    j["synthesis"] = {{"enabled", c.synthesis.enabled},
                      {"use_background", c.synthesis.use_background},
                      {"lambda",
                       {{"kind", enum_name(c.synthesis.lambda.kind, kLambdaKinds)},
                        {"low", c.synthesis.lambda.low},
                        {"high", c.synthesis.lambda.high},
                        {"value", c.synthesis.lambda.value}}}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"learning_rate", c.train.learning_rate},
                  {"batch_size", c.train.batch_size},
                  {"beta_loss", c.train.beta_loss},
                  {"seed", c.train.seed},
                  {"momentum", c.train.momentum},
                  {"weight_decay", c.train.weight_decay},
                  {"ood_objective", enum_name(c.train.ood_objective, kOodObjectives)}};
    j["scoring"] = {{"include_unknown", c.scoring.include_unknown}};
    json ood = json::array();
    for (const auto& d : c.data.ood) ood.push_back(dataset_json(d));
    j["data"] = {{"id", dataset_json(c.data.id)},
                 {"ood", ood},
                 {"shots", c.data.shots},
                 {"episode_seed", c.data.episode_seed}};
    const auto& s = c.synthetic;
    j["synthetic"] = {{"seed", s.seed},
                      {"id_classes", s.id_classes},
                      {"far_ood_words", s.far_ood_words},
                      {"background_word", s.background_word},
                      {"template", s.text_template},
                      {"train_per_class", s.train_per_class},
                      {"test_per_class", s.test_per_class},
                      {"ood_per_set", s.ood_per_set},
                      {"fg_min_cells", s.fg_min_cells},
                      {"fg_max_cells", s.fg_max_cells},
                      {"jitter", s.jitter},
                      {"cell_noise", s.cell_noise},
                      {"amplitude", s.amplitude}};
    j["run_id"] = c.run_id;
    j["output_dir"] = c.output_dir.string();
    return j;
}

RunConfig config_from_json(const json& j, const fs::path& base_dir) {
    RunConfig c;
    Reader root(j, "");
    {
        Reader b = root.section("backbone");
        b.get("kind", c.backbone.kind);
        Reader t = b.section("toy");
        auto& toy = c.backbone.toy;
        t.get("seed", toy.seed);
        t.get("image_size", toy.image_size);
        t.get("patch_size", toy.patch_size);
        t.get("width", toy.width);
        t.get("embed_dim", toy.embed_dim);
        t.get("text_width", toy.text_width);
        t.get("text_layers", toy.text_layers);
        t.get("text_heads", toy.text_heads);
        t.get("context_length", toy.context_length);
        t.get("temperature", toy.temperature);
        t.get("vocabulary", toy.vocabulary);
        t.get("salience", toy.salience);
        t.get("content_focus", toy.content_focus);
        t.get("function_words", toy.function_words);
        t.finish();
        Reader p = b.section("pretrained");
        auto& pre = c.backbone.pretrained;
        p.get("weights", pre.weights);
        p.get("vocab", pre.vocab);
        p.get("merges", pre.merges);
        p.get("vision_heads", pre.vision_heads);
        p.get("text_heads", pre.text_heads);
        p.get("layer_norm_eps", pre.layer_norm_eps);
        p.finish();
        Reader pp = b.section("preprocess");
        pp.get("image_size", c.backbone.preprocess.image_size);
        pp.get("mean", c.backbone.preprocess.mean);
        pp.get("std", c.backbone.preprocess.std);
        pp.finish();
        b.finish();
        pre.weights = resolve(base_dir, pre.weights);
        pre.vocab = resolve(base_dir, pre.vocab);
        pre.merges = resolve(base_dir, pre.merges);
    }
    {
        Reader r = root.section("context");
        r.get("beta_ctx", c.context.beta_ctx);
        get_enum(r, "padding", c.context.padding, kPaddings);
        r.finish();
    }
    {
        Reader r = root.section("masking");
        get_enum(r, "mode", c.masking.mode, kMaskingModes);
        r.get("discrepancy", c.masking.partition.discrepancy);
        r.get("threshold", c.masking.partition.threshold);
        r.get("topk", c.masking.topk);
        r.get("template", c.masking.text_template);
        r.finish();
    }
    {
        Reader r = root.section("prompt");
        r.get("token_len", c.prompt.token_len);
        r.get("init_std", c.prompt.init_std);
        r.get("unknown_name", c.prompt.unknown_name);
        r.finish();
    }
    {
        Reader r = root.section("synthesis");
        r.get("enabled", c.synthesis.enabled);
        r.get("use_background", c.synthesis.use_background);
        Reader l = r.section("lambda");
        get_enum(l, "kind", c.synthesis.lambda.kind, kLambdaKinds);
        l.get("low", c.synthesis.lambda.low);
        l.get("high", c.synthesis.lambda.high);
        l.get("value", c.synthesis.lambda.value);
        l.finish();
        r.finish();
    }
    {
        Reader r = root.section("train");
        r.get("epochs", c.train.epochs);
        r.get("learning_rate", c.train.learning_rate);
        r.get("batch_size", c.train.batch_size);
        r.get("beta_loss", c.train.beta_loss);
        r.get("seed", c.train.seed);
        r.get("momentum", c.train.momentum);
        r.get("weight_decay", c.train.weight_decay);
        get_enum(r, "ood_objective", c.train.ood_objective, kOodObjectives);
        r.finish();
    }
    {
        Reader r = root.section("scoring");
        r.get("include_unknown", c.scoring.include_unknown);
        r.finish();
    }
    {
        Reader r = root.section("data");
        c.data.id = read_dataset(r.section("id"));
        c.data.id.root = resolve(base_dir, c.data.id.root);
        r.get("shots", c.data.shots);
        r.get("episode_seed", c.data.episode_seed);
        if (r.has("ood")) {
            const json& arr = j.at("data").at("ood");
            if (!arr.is_array()) throw ConfigError("data.ood: expected an array");
            for (std::size_t i = 0; i < arr.size(); ++i) {
                DatasetRef d = read_dataset(Reader(arr[i], "data.ood[" + std::to_string(i) + "]"));
                d.root = resolve(base_dir, d.root);
                c.data.ood.push_back(d);
            }
        }
        r.mark("ood");
        r.finish();
    }
    {
        Reader r = root.section("synthetic");
        auto& s = c.synthetic;
        r.get("seed", s.seed);
        r.get("id_classes", s.id_classes);
        r.get("far_ood_words", s.far_ood_words);
        r.get("background_word", s.background_word);
        r.get("template", s.text_template);
        r.get("train_per_class", s.train_per_class);
        r.get("test_per_class", s.test_per_class);
        r.get("ood_per_set", s.ood_per_set);
        r.get("fg_min_cells", s.fg_min_cells);
        r.get("fg_max_cells", s.fg_max_cells);
        r.get("jitter", s.jitter);
        r.get("cell_noise", s.cell_noise);
        r.get("amplitude", s.amplitude);
        r.finish();
    }
    root.get("run_id", c.run_id);
    root.get("output_dir", c.output_dir);
    c.output_dir = resolve(base_dir, c.output_dir);
    root.finish();
    return c;
}

void apply_overrides(json& j, const std::vector<std::string>& overrides) {
    for (const auto& item : overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("--set " + item + ": expected key=value");
        }
        const std::string key = item.substr(0, eq);
        const std::string text = item.substr(eq + 1);
        json value;
        try {
            value = json::parse(text);
        } catch (const json::parse_error&) {
            value = text;
        }
        json* node = &j;
        std::size_t start = 0;
        while (true) {
            const auto dot = key.find('.', start);
            const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (part.empty()) throw ConfigError("--set " + item + ": empty path component");
            if (!node->is_object()) {
                if (!node->is_null()) throw ConfigError("--set " + key + ": parent is not an object");
                *node = json::object();
            }
            node = &(*node)[part];
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        *node = value;
    }
}

RunConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
    json j = json::object();
    fs::path base = fs::current_path();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) {
            throw ConfigError("cannot read config " + path.string());
        }
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError("config " + path.string() + ": " + e.what());
        }
        base = fs::absolute(path).parent_path();
    }
    apply_overrides(j, overrides);
    RunConfig cfg = config_from_json(j, base);
    cfg.validate();
    return cfg;
}

void save_config(const RunConfig& cfg, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << config_to_json(cfg).dump(2) << "\n";
}

}  // namespace clipos
