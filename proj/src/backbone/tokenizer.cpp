#include "clipos/backbone/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "clipos/error.hpp"

namespace clipos {
namespace {

std::string to_lower(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string utf8(unsigned codepoint) {
    std::string out;
    if (codepoint < 0x80) {
        out.push_back(static_cast<char>(codepoint));
    } else if (codepoint < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (codepoint >> 6)));
        out.push_back(static_cast<char>(0x80 | (codepoint & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xE0 | (codepoint >> 12)));
        out.push_back(static_cast<char>(0x80 | ((codepoint >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (codepoint & 0x3F)));
    }
    return out;
}

// GPT-2 / CLIP reversible byte -> printable unicode table.
std::vector<std::string> build_byte_table() {
    std::vector<int> printable;
    for (int b = '!'; b <= '~'; ++b) printable.push_back(b);
    for (int b = 0xA1; b <= 0xAC; ++b) printable.push_back(b);
    for (int b = 0xAE; b <= 0xFF; ++b) printable.push_back(b);
    std::vector<std::string> table(256);
    int extra = 0;
    for (int b = 0; b < 256; ++b) {
        if (std::find(printable.begin(), printable.end(), b) != printable.end()) {
            table[static_cast<std::size_t>(b)] = utf8(static_cast<unsigned>(b));
        } else {
            table[static_cast<std::size_t>(b)] = utf8(static_cast<unsigned>(256 + extra));
            ++extra;
        }
    }
    return table;
}

bool is_letter(unsigned char c) {
    return std::isalpha(c) != 0 || c >= 0x80;
}

bool is_digit(unsigned char c) {
    return std::isdigit(c) != 0;
}

bool is_space(unsigned char c) {
    return std::isspace(c) != 0;
}

}  // namespace

WordTokenizer::WordTokenizer(std::vector<std::string> words) {
    for (auto& word : words) {
        word = to_lower(word);
        if (ids_.contains(word)) {
            continue;
        }
        ids_.emplace(word, static_cast<int>(words_.size()) + 2);
        words_.push_back(word);
    }
}

bool WordTokenizer::contains(std::string_view word) const {
    return ids_.contains(to_lower(word));
}

std::vector<int> WordTokenizer::encode(std::string_view text) const {
    std::istringstream stream{std::string(text)};
    std::vector<int> ids;
    std::string word;
    while (stream >> word) {
        const auto it = ids_.find(to_lower(word));
        if (it == ids_.end()) {
            throw ConfigError("tokenizer: word '" + word + "' is not in the vocabulary");
        }
        ids.push_back(it->second);
    }
    return ids;
}

std::vector<std::string> clip_pretokenize(std::string_view raw) {
    static constexpr std::string_view specials[] = {"<|startoftext|>", "<|endoftext|>"};
    static constexpr std::string_view contractions[] = {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"};
    const std::string text = to_lower(raw);
    std::vector<std::string> pieces;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (is_space(c)) {
            ++i;
            continue;
        }
        const std::string_view rest(text.data() + i, text.size() - i);
        bool matched = false;
        for (const auto special : specials) {
            if (rest.starts_with(special)) {
                pieces.emplace_back(special);
                i += special.size();
                matched = true;
                break;
            }
        }
        if (matched) {
            continue;
        }
        for (const auto contraction : contractions) {
            if (rest.starts_with(contraction)) {
                pieces.emplace_back(contraction);
                i += contraction.size();
                matched = true;
                break;
            }
        }
        if (matched) {
            continue;
        }
        std::size_t j = i + 1;
        if (is_letter(c)) {
            while (j < text.size() && is_letter(static_cast<unsigned char>(text[j]))) ++j;
        } else if (!is_digit(c)) {
            while (j < text.size()) {
                const auto d = static_cast<unsigned char>(text[j]);
                if (is_space(d) || is_letter(d) || is_digit(d)) break;
                ++j;
            }
        }
        pieces.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return pieces;
}

BpeTokenizer::BpeTokenizer(std::unordered_map<std::string, int> vocab,
                           std::vector<std::pair<std::string, std::string>> merges)
    : vocab_(std::move(vocab)), byte_to_unicode_(build_byte_table()) {
    for (std::size_t rank = 0; rank < merges.size(); ++rank) {
        ranks_.emplace(std::move(merges[rank]), rank);
    }
    const auto start = vocab_.find("<|startoftext|>");
    const auto end = vocab_.find("<|endoftext|>");
    if (start == vocab_.end() || end == vocab_.end()) {
        throw ConfigError("tokenizer: vocabulary lacks <|startoftext|> / <|endoftext|>");
    }
    start_ = start->second;
    end_ = end->second;
}

BpeTokenizer BpeTokenizer::from_files(const std::filesystem::path& vocab_json,
                                      const std::filesystem::path& merges_txt) {
    std::ifstream vocab_in(vocab_json);
    if (!vocab_in) {
        throw DataError("tokenizer: cannot open " + vocab_json.string());
    }
    std::unordered_map<std::string, int> vocab;
    try {
        const auto json = nlohmann::json::parse(vocab_in);
        for (const auto& [token, id] : json.items()) {
            vocab.emplace(token, id.get<int>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("tokenizer: malformed " + vocab_json.string() + ": " + e.what());
    }
    std::ifstream merges_in(merges_txt);
    if (!merges_in) {
        throw DataError("tokenizer: cannot open " + merges_txt.string());
    }
    std::vector<std::pair<std::string, std::string>> merges;
    std::string line;
    while (std::getline(merges_in, line)) {
        if (line.empty() || line.starts_with("#version")) {
            continue;
        }
        const auto space = line.find(' ');
        if (space == std::string::npos) {
            throw DataError("tokenizer: malformed merge line '" + line + "'");
        }
        merges.emplace_back(line.substr(0, space), line.substr(space + 1));
    }
    return BpeTokenizer(std::move(vocab), std::move(merges));
}

std::vector<std::string> BpeTokenizer::bpe(const std::string& word) const {
    // Split the byte-encoded word into unicode characters.
    std::vector<std::string> symbols;
    for (std::size_t i = 0; i < word.size();) {
        const auto lead = static_cast<unsigned char>(word[i]);
        const std::size_t len = lead < 0x80 ? 1 : (lead >> 5) == 0x6 ? 2 : (lead >> 4) == 0xE ? 3 : 4;
        symbols.push_back(word.substr(i, len));
        i += len;
    }
    if (symbols.empty()) {
        return symbols;
    }
    symbols.back() += "</w>";
    while (symbols.size() > 1) {
        std::size_t best_rank = std::numeric_limits<std::size_t>::max();
        std::size_t best = 0;
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
            const auto it = ranks_.find({symbols[i], symbols[i + 1]});
            if (it != ranks_.end() && it->second < best_rank) {
                best_rank = it->second;
                best = i;
            }
        }
        if (best_rank == std::numeric_limits<std::size_t>::max()) {
            break;
        }
        // Merge every occurrence of the best pair, left to right.
        const std::string first = symbols[best];
        const std::string second = symbols[best + 1];
        std::vector<std::string> merged;
        for (std::size_t i = 0; i < symbols.size();) {
            if (i + 1 < symbols.size() && symbols[i] == first && symbols[i + 1] == second) {
                merged.push_back(first + second);
                i += 2;
            } else {
                merged.push_back(symbols[i]);
                ++i;
            }
        }
        symbols = std::move(merged);
    }
    return symbols;
}

std::vector<int> BpeTokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& piece : clip_pretokenize(text)) {
        if (const auto special = vocab_.find(piece); special != vocab_.end() && piece.starts_with("<|")) {
            ids.push_back(special->second);
            continue;
        }
        std::string encoded;
        for (const char ch : piece) {
            encoded += byte_to_unicode_[static_cast<unsigned char>(ch)];
        }
        for (const auto& symbol : bpe(encoded)) {
            const auto it = vocab_.find(symbol);
            if (it == vocab_.end()) {
                throw ConfigError("tokenizer: BPE symbol '" + symbol + "' missing from vocabulary");
            }
            ids.push_back(it->second);
        }
    }
    return ids;
}

}  // namespace clipos
