#include "attrib/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "attrib/util.hpp"

namespace attrib {

int Vocabulary::id_of(const std::string& word) const {
    auto it = word_to_id.find(word);
    return it == word_to_id.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word_of(int id) const {
    if (id < 0 || id >= size()) throw_contract("vocabulary: id out of range: " + std::to_string(id));
    return id_to_word[static_cast<std::size_t>(id)];
}

Dataset load_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw_input("cannot open corpus file: " + path);
    Dataset out;
    out.name = path;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw_input(path + ":" + std::to_string(line_no) + ": missing tab separator");
        }
        std::string label_str = line.substr(0, tab);
        std::string text = line.substr(tab + 1);
        std::size_t pos = 0;
        int label = 0;
        try {
            label = std::stoi(label_str, &pos);
        } catch (const std::exception&) {
            pos = std::string::npos;
        }
        if (pos != label_str.size() || label_str.empty()) {
            throw_input(path + ":" + std::to_string(line_no) + ": non-integer label '" + label_str + "'");
        }
        out.examples.push_back({text, label});
    }
    return out;
}

std::pair<Dataset, Dataset> split_even(const Dataset& d) {
    Dataset a, b;
    a.name = d.name + "#even";
    b.name = d.name + "#odd";
    std::map<int, std::size_t> seen;  // round-robin per label keeps both halves balanced
    for (const auto& ex : d.examples) {
        (seen[ex.label]++ % 2 == 0 ? a : b).examples.push_back(ex);
    }
    return {a, b};
}

bool is_punctuation_token(const std::string& token) {
    if (token.empty()) return false;
    for (unsigned char c : token) {
        if (c >= 0x80) return false;  // non-ASCII treated as word content
        if (!std::ispunct(c)) return false;
    }
    return true;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::istringstream ss(text);
    std::string raw;
    while (ss >> raw) {
        for (char& c : raw) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        std::size_t begin = 0, end = raw.size();
        while (begin < end && raw[begin] < 0x80 && std::ispunct(static_cast<unsigned char>(raw[begin]))) ++begin;
        while (end > begin && raw[end - 1] < 0x80 && std::ispunct(static_cast<unsigned char>(raw[end - 1]))) --end;
        if (end > begin) tokens.push_back(raw.substr(begin, end - begin));
    }
    return tokens;
}

Vocabulary build_vocab(const Dataset& dataset, int min_freq) {
    if (min_freq < 1) throw_contract("build_vocab: min_freq must be >= 1");
    std::map<std::string, std::size_t> counts;  // ordered for deterministic ties
    for (const auto& ex : dataset.examples) {
        for (const auto& w : tokenize(ex.text)) ++counts[w];
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [w, c] : counts) {
        if (c >= static_cast<std::size_t>(min_freq)) kept.emplace_back(w, c);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary v;
    v.min_freq = min_freq;
    v.id_to_word = {"[PAD]", "[UNK]", "[CLS]"};
    for (const auto& [w, c] : kept) {
        v.word_to_id[w] = v.size();
        v.id_to_word.push_back(w);
    }
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int id = 0; id < v.size(); ++id) {
        std::string entry = v.id_to_word[static_cast<std::size_t>(id)] + ":" + std::to_string(id) + "\n";
        h = fnv1a64(entry.data(), entry.size(), h);
    }
    v.content_hash = h;
    return v;
}

std::vector<int> encode(const Vocabulary& vocab, const std::string& text, int max_len) {
    if (max_len < 2) throw_contract("encode: max_len must be >= 2");
    std::vector<int> ids;
    ids.push_back(Vocabulary::kCls);
    for (const auto& w : tokenize(text)) {
        if (static_cast<int>(ids.size()) >= max_len) break;
        ids.push_back(vocab.id_of(w));
    }
    return ids;
}

std::vector<std::string> decode_tokens(const Vocabulary& vocab, const std::vector<int>& ids) {
    std::vector<std::string> words;
    words.reserve(ids.size());
    for (int id : ids) words.push_back(vocab.word_of(id));
    return words;
}

std::string vocab_to_json(const Vocabulary& vocab) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json words = nlohmann::ordered_json::object();
    for (int id = 0; id < vocab.size(); ++id) {
        words[vocab.id_to_word[static_cast<std::size_t>(id)]] = id;
    }
    j["words"] = std::move(words);
    j["min_freq"] = vocab.min_freq;
    j["hash"] = hex64(vocab.content_hash);
    return j.dump();
}

Vocabulary vocab_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    Vocabulary v;
    v.min_freq = j.at("min_freq").get<int>();
    std::size_t n = j.at("words").size();
    v.id_to_word.assign(n, "");
    for (auto it = j.at("words").begin(); it != j.at("words").end(); ++it) {
        int id = it.value().get<int>();
        if (id < 0 || static_cast<std::size_t>(id) >= n) throw_io("vocabulary json: id out of range");
        v.id_to_word[static_cast<std::size_t>(id)] = it.key();
        if (id > Vocabulary::kCls) v.word_to_id[it.key()] = id;
    }
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int id = 0; id < v.size(); ++id) {
        std::string entry = v.id_to_word[static_cast<std::size_t>(id)] + ":" + std::to_string(id) + "\n";
        h = fnv1a64(entry.data(), entry.size(), h);
    }
    v.content_hash = h;
    std::string expected = j.at("hash").get<std::string>();
    if (expected != hex64(v.content_hash)) throw_io("vocabulary json: content hash mismatch");
    return v;
}

}  // namespace attrib
