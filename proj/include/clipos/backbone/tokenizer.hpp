#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace clipos {

/// Text to token ids. Start/end markers are not included in encode().
class Tokenizer {
public:
    virtual ~Tokenizer() = default;

    virtual std::vector<int> encode(std::string_view text) const = 0;
    virtual int start_token() const = 0;
    virtual int end_token() const = 0;
    virtual std::size_t vocab_size() const = 0;
};

/// Whitespace-split, lowercased, closed vocabulary. Used by the toy backbone.
/// Ids 0 and 1 are the start and end markers; words follow in given order.
class WordTokenizer final : public Tokenizer {
public:
    explicit WordTokenizer(std::vector<std::string> words);

    /// Throws ConfigError naming the first out-of-vocabulary word.
    std::vector<int> encode(std::string_view text) const override;
    int start_token() const override { return 0; }
    int end_token() const override { return 1; }
    std::size_t vocab_size() const override { return words_.size() + 2; }

    bool contains(std::string_view word) const;
    const std::vector<std::string>& words() const { return words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> ids_;
};

/// Byte-level BPE compatible with the CLIP tokenizer files (vocab.json and
/// merges.txt in the Hugging Face layout).
///
/// Pre-tokenization follows CLIP's pattern with ASCII character classes:
/// runs of letters, single digits, runs of other non-space characters, and
/// the English contractions 's 't 're 've 'm 'll 'd. Bytes >= 0x80 are
/// treated as letters.
class BpeTokenizer final : public Tokenizer {
public:
    BpeTokenizer(std::unordered_map<std::string, int> vocab, std::vector<std::pair<std::string, std::string>> merges);

    static BpeTokenizer from_files(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt);

    std::vector<int> encode(std::string_view text) const override;
    int start_token() const override { return start_; }
    int end_token() const override { return end_; }
    std::size_t vocab_size() const override { return vocab_.size(); }

private:
    std::vector<std::string> bpe(const std::string& word) const;

    std::unordered_map<std::string, int> vocab_;
    std::map<std::pair<std::string, std::string>, std::size_t> ranks_;
    std::vector<std::string> byte_to_unicode_;
    int start_ = 0;
    int end_ = 0;
};

/// Splits text into pre-tokens using the rules documented on BpeTokenizer.
std::vector<std::string> clip_pretokenize(std::string_view text);

}  // namespace clipos
