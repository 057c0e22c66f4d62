#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attrib/data.hpp"

namespace attrib {

// Synthetic cue-word sentiment corpus. Every sentence is filler words plus
// exactly one cue word inserted at a random position; the label is 1 iff the
// cue is positive. Balanced labels, deterministic for a given seed.
//
// Filler/cue pools are fixed so disjoint slices of one corpus share a
// vocabulary.
struct ToyCorpusSpec {
    int n_sentences = 2000;
    std::uint64_t seed = 7;
    int min_fillers = 5;
    int max_fillers = 11;
    std::string name = "toy";
};

Dataset make_cue_corpus(const ToyCorpusSpec& spec);

const std::vector<std::string>& toy_filler_words();
const std::vector<std::string>& toy_positive_cues();
const std::vector<std::string>& toy_negative_cues();

}  // namespace attrib
