#include "attrib/toy_corpus.hpp"

#include <random>
#include <sstream>

#include "attrib/util.hpp"

namespace attrib {

const std::vector<std::string>& toy_filler_words() {
    static const std::vector<std::string> words = {
        "the",   "a",      "this",  "that",   "movie",  "film",   "plot",    "scene",
        "actor", "story",  "was",   "is",     "seemed", "felt",   "looked",  "very",
        "quite", "rather", "fairly", "pretty", "long",   "short",  "new",     "old",
        "again", "still",  "today", "music",  "camera", "script", "dialogue", "ending",
        "start", "middle", "cast",  "crew",   "set",    "light",  "sound",   "color",
    };
    return words;
}

const std::vector<std::string>& toy_positive_cues() {
    static const std::vector<std::string> words = {
        "superb",    "delightful", "marvelous", "wonderful", "excellent", "stunning",
        "brilliant", "charming",   "gorgeous",  "splendid",  "graceful",  "uplifting",
    };
    return words;
}

const std::vector<std::string>& toy_negative_cues() {
    static const std::vector<std::string> words = {
        "dreadful", "terrible", "atrocious", "horrible", "awful",    "dismal",
        "wretched", "lousy",    "abysmal",   "dire",     "ghastly",  "appalling",
    };
    return words;
}

Dataset make_cue_corpus(const ToyCorpusSpec& spec) {
    if (spec.n_sentences < 1) throw_contract("make_cue_corpus: n_sentences must be >= 1");
    if (spec.min_fillers < 1 || spec.max_fillers < spec.min_fillers) {
        throw_contract("make_cue_corpus: bad filler length range");
    }
    std::mt19937_64 rng(spec.seed);
    const auto& fillers = toy_filler_words();
    const auto& pos = toy_positive_cues();
    const auto& neg = toy_negative_cues();
    std::uniform_int_distribution<int> len_dist(spec.min_fillers, spec.max_fillers);
    std::uniform_int_distribution<std::size_t> filler_dist(0, fillers.size() - 1);

    Dataset out;
    out.name = spec.name;
    out.examples.reserve(static_cast<std::size_t>(spec.n_sentences));
    for (int i = 0; i < spec.n_sentences; ++i) {
        int label = i % 2;  // balanced by construction
        const auto& cues = label == 1 ? pos : neg;
        std::uniform_int_distribution<std::size_t> cue_dist(0, cues.size() - 1);
        int n_fill = len_dist(rng);
        std::vector<std::string> words;
        words.reserve(static_cast<std::size_t>(n_fill) + 1);
        for (int w = 0; w < n_fill; ++w) words.push_back(fillers[filler_dist(rng)]);
        std::uniform_int_distribution<std::size_t> pos_dist(0, words.size());
        words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos_dist(rng)), cues[cue_dist(rng)]);
        std::ostringstream ss;
        for (std::size_t w = 0; w < words.size(); ++w) {
            if (w) ss << ' ';
            ss << words[w];
        }
        out.examples.push_back({ss.str(), label});
    }
    return out;
}

}  // namespace attrib
