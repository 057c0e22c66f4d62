#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "attrib/attribution.hpp"
#include "attrib/data.hpp"
#include "attrib/model.hpp"

namespace attrib {

struct AblationCurve {
    std::string method;                 // "gs", "gi", "lrp", "lat" or "random"
    std::vector<double> accuracy;       // index k = 0..k_max, each in [0,1], accuracy[0] == 1
    std::size_t subset_size = 0;        // initially correct sentences
    bool random_baseline = false;
    int repeats = 1;
};

struct WordStat {
    double mean = 0.0;
    std::size_t count = 0;
};

// word -> (mean relevance, occurrence count); ordered for deterministic output
using WordRelevanceTable = std::map<std::string, WordStat>;

struct CorrelationReport {
    std::vector<std::string> labels;
    Tensor matrix;                                     // [n,n], symmetric, unit diagonal
    std::vector<std::vector<std::size_t>> shared;      // shared vocabulary size per pair
};

// Sample Pearson correlation. Lengths must agree and be >= 2 (input error);
// zero variance in either series is a numeric error.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

// Word-deletion ablation over the initially-correct subset: rank tokens by
// per-token relevance (descending, ties by position), delete top-k, keep
// [CLS], re-classify. acfg.method supplies the ranking.
AblationCurve deletion_curve(const ModelConfig& cfg, const Parameters& params, const Vocabulary& vocab,
                             const Dataset& dataset, const AttributionConfig& acfg, int k_max);

// Same protocol with uniformly random deletion order, averaged over repeats.
AblationCurve random_deletion_curve(const ModelConfig& cfg, const Parameters& params,
                                    const Vocabulary& vocab, const Dataset& dataset, int k_max,
                                    int repeats, std::uint64_t seed);

// Mean per-token relevance per surface word. Specials are always excluded;
// punctuation-only tokens excluded when the flag is set; words occurring
// fewer than min_count times are dropped.
WordRelevanceTable word_table(const std::vector<RelevanceMap>& maps, int min_count,
                              bool exclude_punct);

struct RankedWord {
    std::string word;
    double mean = 0.0;
    std::size_t count = 0;
};
std::pair<std::vector<RankedWord>, std::vector<RankedWord>> top_bottom(const WordRelevanceTable& table,
                                                                       int k);

// Trains one model per seed and correlates word-level mean relevances over
// the shared filtered vocabulary, per method.
std::vector<std::pair<Method, CorrelationReport>> seed_robustness(
    ModelConfig cfg, const Vocabulary& vocab, const Dataset& train, const Dataset& dev,
    const Dataset& test, std::pair<std::uint64_t, std::uint64_t> seeds,
    const std::vector<Method>& methods, const Hyper& hyper, int min_count = 5);

// Pairwise Pearson over the common (all-dataset) filtered vocabulary.
CorrelationReport cross_dataset(const std::vector<Checkpoint>& checkpoints,
                                const std::vector<Dataset>& test_sets, Method method,
                                int min_count = 5);

std::string curves_to_csv(const std::vector<AblationCurve>& curves);
std::string report_to_json(const CorrelationReport& report);
std::string reports_to_json(const std::vector<std::pair<Method, CorrelationReport>>& reports);

}  // namespace attrib
