#include "attrib/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "attrib/util.hpp"

namespace attrib {

namespace {

int argmax_class(const Tensor& logits) {
    int best = 0;
    for (std::size_t c = 1; c < logits.size(); ++c) {
        if (logits.at(c) > logits.at(best)) best = static_cast<int>(c);
    }
    return best;
}

struct CorrectSentence {
    std::vector<int> ids;   // includes [CLS]
    int label = 0;
    std::vector<std::size_t> ranked;  // deletable positions, best first (empty for random)
};

std::vector<int> delete_positions(const std::vector<int>& ids, const std::vector<std::size_t>& order,
                                  std::size_t k) {
    std::set<std::size_t> gone(order.begin(), order.begin() + std::min(k, order.size()));
    std::vector<int> kept;
    kept.reserve(ids.size());
    for (std::size_t p = 0; p < ids.size(); ++p) {
        if (p == 0 || gone.count(p) == 0) kept.push_back(ids[p]);
    }
    return kept;
}

// Initially-correct subset; ranks deletable tokens when acfg is given.
std::vector<CorrectSentence> correct_subset(const ModelConfig& cfg, const Parameters& params,
                                            const Vocabulary& vocab, const Dataset& dataset,
                                            const AttributionConfig* acfg) {
    std::vector<std::optional<CorrectSentence>> picked(dataset.size());
    parallel_for(dataset.size(), [&](std::size_t i) {
        const auto& ex = dataset.examples[i];
        std::vector<int> ids = encode(vocab, ex.text, cfg.max_seq_len);
        ForwardTrace trace = forward(cfg, params, ids, Mode::Eval);
        int predicted = argmax_class(trace.logits);
        if (predicted != ex.label) return;
        CorrectSentence cs;
        cs.ids = ids;
        cs.label = ex.label;
        if (acfg != nullptr) {
            RelevanceMap map = attribute(cfg, params, trace, predicted, *acfg);
            std::vector<std::size_t> pos(ids.size() > 1 ? ids.size() - 1 : 0);
            std::iota(pos.begin(), pos.end(), 1);  // [CLS] at 0 is never deleted
            std::stable_sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
                return map.token_scores[a] > map.token_scores[b];
            });
            cs.ranked = std::move(pos);
        }
        picked[i] = std::move(cs);
    });
    std::vector<CorrectSentence> subset;
    for (auto& p : picked) {
        if (p) subset.push_back(std::move(*p));
    }
    if (subset.empty()) throw_input("deletion curve: empty initially-correct subset");
    return subset;
}

}  // namespace

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw_input("pearson: length mismatch");
    if (x.size() < 2) throw_input("pearson: need at least 2 points");
    double n = static_cast<double>(x.size());
    double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw_numeric("pearson: undefined correlation (zero variance)");
    double r = sxy / std::sqrt(sxx * syy);
    return std::clamp(r, -1.0, 1.0);
}

AblationCurve deletion_curve(const ModelConfig& cfg, const Parameters& params, const Vocabulary& vocab,
                             const Dataset& dataset, const AttributionConfig& acfg, int k_max) {
    if (k_max < 0) throw_contract("deletion_curve: k_max must be >= 0");
    auto subset = correct_subset(cfg, params, vocab, dataset, &acfg);
    std::vector<std::vector<int>> correct(subset.size(), std::vector<int>(static_cast<std::size_t>(k_max) + 1, 0));
    parallel_for(subset.size(), [&](std::size_t i) {
        const auto& cs = subset[i];
        correct[i][0] = 1;  // initially correct by construction
        for (int k = 1; k <= k_max; ++k) {
            std::vector<int> kept = delete_positions(cs.ids, cs.ranked, static_cast<std::size_t>(k));
            correct[i][static_cast<std::size_t>(k)] = predict(cfg, params, kept) == cs.label ? 1 : 0;
        }
    });
    AblationCurve curve;
    curve.method = method_name(acfg.method);
    curve.subset_size = subset.size();
    for (int k = 0; k <= k_max; ++k) {
        long sum = 0;
        for (const auto& row : correct) sum += row[static_cast<std::size_t>(k)];
        curve.accuracy.push_back(static_cast<double>(sum) / static_cast<double>(subset.size()));
    }
    return curve;
}

AblationCurve random_deletion_curve(const ModelConfig& cfg, const Parameters& params,
                                    const Vocabulary& vocab, const Dataset& dataset, int k_max,
                                    int repeats, std::uint64_t seed) {
    if (k_max < 0) throw_contract("random_deletion_curve: k_max must be >= 0");
    if (repeats < 1) throw_contract("random_deletion_curve: repeats must be >= 1");
    auto subset = correct_subset(cfg, params, vocab, dataset, nullptr);
    // correct counts per (sentence, k), summed over repeats
    std::vector<std::vector<long>> correct(subset.size(), std::vector<long>(static_cast<std::size_t>(k_max) + 1, 0));
    parallel_for(subset.size(), [&](std::size_t i) {
        const auto& cs = subset[i];
        for (int rep = 0; rep < repeats; ++rep) {
            std::seed_seq seq{static_cast<std::uint64_t>(seed), static_cast<std::uint64_t>(rep),
                              static_cast<std::uint64_t>(i)};
            std::mt19937_64 rng(seq);
            std::vector<std::size_t> order(cs.ids.size() > 1 ? cs.ids.size() - 1 : 0);
            std::iota(order.begin(), order.end(), 1);
            std::shuffle(order.begin(), order.end(), rng);
            correct[i][0] += 1;
            for (int k = 1; k <= k_max; ++k) {
                std::vector<int> kept = delete_positions(cs.ids, order, static_cast<std::size_t>(k));
                correct[i][static_cast<std::size_t>(k)] +=
                    predict(cfg, params, kept) == cs.label ? 1 : 0;
            }
        }
    });
    AblationCurve curve;
    curve.method = "random";
    curve.subset_size = subset.size();
    curve.random_baseline = true;
    curve.repeats = repeats;
    double denom = static_cast<double>(subset.size()) * static_cast<double>(repeats);
    for (int k = 0; k <= k_max; ++k) {
        long sum = 0;
        for (const auto& row : correct) sum += row[static_cast<std::size_t>(k)];
        curve.accuracy.push_back(static_cast<double>(sum) / denom);
    }
    return curve;
}

WordRelevanceTable word_table(const std::vector<RelevanceMap>& maps, int min_count,
                              bool exclude_punct) {
    std::map<std::string, std::pair<double, std::size_t>> acc;  // word -> (sum, count)
    for (const auto& map : maps) {
        for (std::size_t t = 0; t < map.tokens.size(); ++t) {
            const std::string& w = map.tokens[t];
            if (w == "[CLS]" || w == "[PAD]" || w == "[UNK]") continue;
            if (exclude_punct && is_punctuation_token(w)) continue;
            auto& entry = acc[w];
            entry.first += map.token_scores[t];
            entry.second += 1;
        }
    }
    WordRelevanceTable table;
    for (const auto& [w, sc] : acc) {
        if (sc.second >= static_cast<std::size_t>(std::max(1, min_count))) {
            table[w] = WordStat{sc.first / static_cast<double>(sc.second), sc.second};
        }
    }
    return table;
}

std::pair<std::vector<RankedWord>, std::vector<RankedWord>> top_bottom(const WordRelevanceTable& table,
                                                                       int k) {
    if (table.empty()) throw_input("top_bottom: empty word table");
    std::vector<RankedWord> sorted;
    sorted.reserve(table.size());
    for (const auto& [w, st] : table) sorted.push_back({w, st.mean, st.count});
    std::sort(sorted.begin(), sorted.end(), [](const RankedWord& a, const RankedWord& b) {
        if (a.mean != b.mean) return a.mean > b.mean;
        return a.word < b.word;
    });
    std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(std::max(0, k)), sorted.size());
    std::vector<RankedWord> top(sorted.begin(), sorted.begin() + take);
    std::vector<RankedWord> bottom(sorted.end() - static_cast<std::ptrdiff_t>(take), sorted.end());
    std::reverse(bottom.begin(), bottom.end());
    return {top, bottom};
}

namespace {

// Pearson over the means of the words both tables share.
std::pair<double, std::size_t> table_correlation(const WordRelevanceTable& a,
                                                 const WordRelevanceTable& b) {
    std::vector<double> x, y;
    for (const auto& [w, st] : a) {
        auto it = b.find(w);
        if (it == b.end()) continue;
        x.push_back(st.mean);
        y.push_back(it->second.mean);
    }
    if (x.size() < 2) {
        throw_input("insufficient vocabulary overlap: " + std::to_string(x.size()) + " shared words");
    }
    return {pearson(x, y), x.size()};
}

CorrelationReport pairwise_report(const std::vector<std::string>& labels,
                                  const std::vector<WordRelevanceTable>& tables) {
    std::size_t n = tables.size();
    CorrelationReport report;
    report.labels = labels;
    report.matrix = Tensor({n, n});
    report.shared.assign(n, std::vector<std::size_t>(n, 0));
    for (std::size_t i = 0; i < n; ++i) {
        report.matrix.at(i, i) = 1.0;
        report.shared[i][i] = tables[i].size();
        for (std::size_t j = i + 1; j < n; ++j) {
            auto [r, shared] = table_correlation(tables[i], tables[j]);
            report.matrix.at(i, j) = r;
            report.matrix.at(j, i) = r;
            report.shared[i][j] = shared;
            report.shared[j][i] = shared;
        }
    }
    return report;
}

}  // namespace

std::vector<std::pair<Method, CorrelationReport>> seed_robustness(
    ModelConfig cfg, const Vocabulary& vocab, const Dataset& train, const Dataset& dev,
    const Dataset& test, std::pair<std::uint64_t, std::uint64_t> seeds,
    const std::vector<Method>& methods, const Hyper& hyper, int min_count) {
    if (methods.empty()) throw_contract("seed_robustness: no methods given");
    // both runs start from the same base initialization (cfg.seed); the
    // robustness seeds re-randomize the training run itself
    ModelConfig cfg_a = cfg, cfg_b = cfg;
    Checkpoint a = fit(cfg_a, vocab, train, dev, hyper, seeds.first);
    Checkpoint b = fit(cfg_b, vocab, train, dev, hyper, seeds.second);
    std::vector<std::pair<Method, CorrelationReport>> out;
    for (Method m : methods) {
        AttributionConfig acfg;
        acfg.method = m;
        WordRelevanceTable ta =
            word_table(attribute_dataset(cfg_a, a.params, vocab, test, acfg), min_count, true);
        WordRelevanceTable tb =
            word_table(attribute_dataset(cfg_b, b.params, vocab, test, acfg), min_count, true);
        std::vector<std::string> labels = {"seed-" + std::to_string(seeds.first),
                                           "seed-" + std::to_string(seeds.second)};
        out.emplace_back(m, pairwise_report(labels, {ta, tb}));
    }
    return out;
}

CorrelationReport cross_dataset(const std::vector<Checkpoint>& checkpoints,
                                const std::vector<Dataset>& test_sets, Method method,
                                int min_count) {
    if (checkpoints.size() != test_sets.size()) {
        throw_contract("cross_dataset: checkpoint/dataset count mismatch");
    }
    if (checkpoints.size() < 2) throw_input("cross_dataset: need at least 2 dataset/model pairs");
    AttributionConfig acfg;
    acfg.method = method;
    std::vector<WordRelevanceTable> tables;
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
        const Checkpoint& ck = checkpoints[i];
        tables.push_back(word_table(
            attribute_dataset(ck.config, ck.params, ck.vocab, test_sets[i], acfg), min_count, true));
        labels.push_back(test_sets[i].name);
    }
    // common vocabulary across every dataset
    std::set<std::string> common;
    for (const auto& [w, st] : tables[0]) common.insert(w);
    for (std::size_t i = 1; i < tables.size(); ++i) {
        std::set<std::string> next;
        for (const auto& w : common) {
            if (tables[i].count(w)) next.insert(w);
        }
        common = std::move(next);
    }
    if (common.size() < 2) {
        throw_input("cross_dataset: insufficient shared vocabulary: " +
                    std::to_string(common.size()) + " common words");
    }
    std::vector<WordRelevanceTable> restricted(tables.size());
    for (std::size_t i = 0; i < tables.size(); ++i) {
        for (const auto& w : common) restricted[i][w] = tables[i][w];
    }
    return pairwise_report(labels, restricted);
}

std::string curves_to_csv(const std::vector<AblationCurve>& curves) {
    std::ostringstream ss;
    ss << "method,k,accuracy,n\n";
    for (const auto& c : curves) {
        for (std::size_t k = 0; k < c.accuracy.size(); ++k) {
            ss << c.method << "," << k << "," << format_g17(c.accuracy[k]) << "," << c.subset_size
               << "\n";
        }
    }
    return ss.str();
}

namespace {

nlohmann::ordered_json report_json_obj(const CorrelationReport& report) {
    nlohmann::ordered_json j;
    j["labels"] = report.labels;
    nlohmann::ordered_json matrix = nlohmann::ordered_json::array();
    std::size_t n = report.labels.size();
    for (std::size_t i = 0; i < n; ++i) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (std::size_t jj = 0; jj < n; ++jj) row.push_back(report.matrix.at(i, jj));
        matrix.push_back(std::move(row));
    }
    j["pearson"] = std::move(matrix);
    j["shared_vocabulary"] = report.shared;
    return j;
}

}  // namespace

std::string report_to_json(const CorrelationReport& report) { return report_json_obj(report).dump(2); }

std::string reports_to_json(const std::vector<std::pair<Method, CorrelationReport>>& reports) {
    nlohmann::ordered_json j;
    for (const auto& [m, rep] : reports) j[method_name(m)] = report_json_obj(rep);
    return j.dump(2);
}

}  // namespace attrib
