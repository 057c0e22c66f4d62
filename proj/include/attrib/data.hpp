#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace attrib {

struct Example {
    std::string text;
    int label = 0;
};

struct Dataset {
    std::string name;
    std::vector<Example> examples;

    std::size_t size() const { return examples.size(); }
    bool empty() const { return examples.empty(); }
};

// Word -> id mapping with fixed specials. Ids are dense: specials first, then
// surviving words in descending-frequency order (ties lexicographic).
struct Vocabulary {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kCls = 2;

    std::unordered_map<std::string, int> word_to_id;
    std::vector<std::string> id_to_word;  // index == id, includes specials
    int min_freq = 1;
    std::uint64_t content_hash = 0;

    int size() const { return static_cast<int>(id_to_word.size()); }
    int id_of(const std::string& word) const;
    const std::string& word_of(int id) const;
    bool is_special(int id) const { return id <= kCls; }
};

// Rows are "label<TAB>text". Blank lines skipped; parse failures carry the
// 1-based line number.
Dataset load_tsv(const std::string& path);

// Splits examples by alternating rows: even indices -> first, odd -> second.
std::pair<Dataset, Dataset> split_even(const Dataset& d);

// Lowercase, whitespace split, leading/trailing punctuation stripped
// (interior punctuation kept), empties dropped.
std::vector<std::string> tokenize(const std::string& text);

// True when the token consists solely of punctuation characters.
bool is_punctuation_token(const std::string& token);

Vocabulary build_vocab(const Dataset& dataset, int min_freq);

// [CLS] first, [UNK] for out-of-vocabulary words, truncated to max_len.
std::vector<int> encode(const Vocabulary& vocab, const std::string& text, int max_len);

// Surface forms for an encoded sequence ("[CLS]", "[UNK]", ... for specials).
std::vector<std::string> decode_tokens(const Vocabulary& vocab, const std::vector<int>& ids);

std::string vocab_to_json(const Vocabulary& vocab);
Vocabulary vocab_from_json(const std::string& json_text);

}  // namespace attrib
