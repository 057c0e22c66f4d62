// Command-line front end: train models, compute relevance maps, run the
// word-deletion and correlation protocols, and sanity-check gradients.
#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <sstream>

#include "attrib/attribution.hpp"
#include "attrib/data.hpp"
#include "attrib/evaluation.hpp"
#include "attrib/model.hpp"
#include "attrib/toy_corpus.hpp"
#include "attrib/util.hpp"

namespace fs = std::filesystem;
using namespace attrib;

namespace {

// ---- run manifest -------------------------------------------------------

struct ManifestBuilder {
    std::string command;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    std::vector<std::pair<std::string, std::string>> inputs;  // path, hash
    std::uint64_t seed = 0;
    std::vector<std::string> artifacts;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void add_input(const std::string& path) { inputs.emplace_back(path, hex64(fnv1a64_file(path))); }

    void write(const std::string& path) {
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        nlohmann::ordered_json j;
        j["command"] = command;
        j["config"] = config;
        j["inputs"] = nlohmann::ordered_json::array();
        for (const auto& [p, h] : inputs) j["inputs"].push_back({{"path", p}, {"fnv1a64", h}});
        j["seed"] = seed;
        j["artifacts"] = artifacts;
        j["duration_seconds"] = secs;
        atomic_write_file(path, j.dump(2) + "\n");
    }
};

// ---- config file: model config + training hyperparameters ---------------

struct CliConfig {
    ModelConfig model;
    Hyper hyper;
    int min_freq = 1;
};

CliConfig load_cli_config(const std::string& path) {
    CliConfig out;
    if (path.empty()) return out;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw_input(path + ": " + e.what());
    }
    try {
        ModelConfig d;  // defaults
        out.model.n_layers = j.value("n_layers", d.n_layers);
        out.model.n_heads = j.value("n_heads", d.n_heads);
        out.model.d_model = j.value("d_model", d.d_model);
        out.model.d_ff = j.value("d_ff", d.d_ff);
        out.model.max_seq_len = j.value("max_seq_len", d.max_seq_len);
        out.model.n_classes = j.value("n_classes", d.n_classes);
        out.model.dropout_prob = j.value("dropout_prob", d.dropout_prob);
        out.model.seed = j.value("seed", d.seed);
        out.model.ln_eps = j.value("ln_eps", d.ln_eps);
        out.hyper.lr = j.value("lr", out.hyper.lr);
        out.hyper.batch_size = j.value("batch_size", out.hyper.batch_size);
        out.hyper.epochs = j.value("epochs", out.hyper.epochs);
        out.min_freq = j.value("min_freq", out.min_freq);
    } catch (const nlohmann::json::exception& e) {
        throw_input(path + ": " + e.what());
    }
    if (out.min_freq < 1) throw_input(path + ": min_freq must be >= 1");
    return out;
}

nlohmann::ordered_json resolved_config_json(const CliConfig& cfg) {
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(config_to_json_string(cfg.model));
    j["lr"] = cfg.hyper.lr;
    j["batch_size"] = cfg.hyper.batch_size;
    j["epochs"] = cfg.hyper.epochs;
    j["min_freq"] = cfg.min_freq;
    return j;
}

AttributionConfig make_acfg(const std::string& method, const std::string& target) {
    AttributionConfig acfg;
    auto m = method_from_name(method);
    if (!m) throw_input("unknown method '" + method + "' (expected gs, gi, lrp, or lat)");
    acfg.method = *m;
    if (target == "prob") {
        acfg.target_probability = true;
    } else if (target != "logit") {
        throw_input("unknown target '" + target + "' (expected logit or prob)");
    }
    acfg.validate();
    return acfg;
}

// ---- heatmap ------------------------------------------------------------

std::string escape_html(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string render_heatmap(const std::vector<RelevanceMap>& maps) {
    std::ostringstream html;
    auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    html << "<!doctype html>\n<html><head><meta charset=\"utf-8\">\n"
         << "<title>relevance heatmap</title>\n"
         << "<style>body{font-family:sans-serif;margin:2em}"
         << ".s{margin:0.6em 0}.t{padding:2px 4px;border-radius:3px}"
         << ".m{color:#666;font-size:0.8em}</style></head>\n<body>\n"
         << "<!-- generated " << now << " -->\n";
    for (const auto& map : maps) {
        double max_abs = 0.0;
        for (double v : map.token_scores) max_abs = std::max(max_abs, std::fabs(v));
        if (max_abs == 0.0) max_abs = 1.0;
        html << "<div class=\"s\"><span class=\"m\">[" << method_name(map.method)
             << " class " << map.target_class << "]</span> ";
        for (std::size_t i = 0; i < map.tokens.size(); ++i) {
            double a = std::fabs(map.token_scores[i]) / max_abs;
            html << "<span class=\"t\" style=\"background:rgba(214,69,65," << format_g17(a)
                 << ")\">" << escape_html(map.tokens[i]) << "</span> ";
        }
        html << "</div>\n";
    }
    html << "</body></html>\n";
    return html.str();
}

// ---- commands -----------------------------------------------------------

int cmd_train(const std::string& train_path, const std::string& dev_path,
              const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed_override) {
    ManifestBuilder man;
    man.command = "train";
    CliConfig cfg = load_cli_config(config_path);
    if (seed_override) cfg.model.seed = *seed_override;
    man.seed = cfg.model.seed;
    man.add_input(train_path);
    man.add_input(dev_path);
    if (!config_path.empty()) man.add_input(config_path);

    Dataset train = load_tsv(train_path);
    Dataset dev = load_tsv(dev_path);
    Vocabulary vocab = build_vocab(train, cfg.min_freq);
    cfg.model.vocab_size = vocab.size();
    man.config = resolved_config_json(cfg);

    Checkpoint ckpt = fit(cfg.model, vocab, train, dev, cfg.hyper);

    fs::create_directories(out_dir);
    std::string ckpt_path = (fs::path(out_dir) / "model.ckpt").string();
    std::string log_path = (fs::path(out_dir) / "dev_accuracy.log").string();
    save_checkpoint(ckpt, ckpt_path);
    std::ostringstream log;
    for (std::size_t e = 0; e < ckpt.meta.dev_accuracy_per_epoch.size(); ++e) {
        log << "epoch " << (e + 1) << " dev_accuracy " << format_g17(ckpt.meta.dev_accuracy_per_epoch[e])
            << " train_loss " << format_g17(ckpt.meta.train_loss_per_epoch[e]) << "\n";
    }
    log << "best_epoch " << ckpt.meta.best_epoch << " dev_accuracy "
        << format_g17(ckpt.meta.dev_accuracy) << "\n";
    atomic_write_file(log_path, log.str());

    man.artifacts = {ckpt_path, log_path};
    man.write((fs::path(out_dir) / "manifest.json").string());
    std::printf("dev_accuracy %s (best epoch %d)\n", format_g17(ckpt.meta.dev_accuracy).c_str(),
                ckpt.meta.best_epoch);
    return 0;
}

int cmd_attribute(const std::string& ckpt_path, const std::string& data_path,
                  const std::string& method, const std::string& target, bool dims,
                  const std::string& out_path) {
    ManifestBuilder man;
    man.command = "attribute";
    man.add_input(ckpt_path);
    man.add_input(data_path);
    AttributionConfig acfg = make_acfg(method, target);
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    man.seed = ckpt.config.seed;
    man.config = nlohmann::ordered_json{{"method", method}, {"target", target}, {"dims", dims}};
    Dataset data = load_tsv(data_path);

    auto maps = attribute_dataset(ckpt.config, ckpt.params, ckpt.vocab, data, acfg);
    std::string lines;
    for (const auto& m : maps) lines += relevance_map_to_json_line(m, dims) + "\n";
    atomic_write_file(out_path, lines);
    std::string heatmap_path = (fs::path(out_path).parent_path() / "heatmap.html").string();
    atomic_write_file(heatmap_path, render_heatmap(maps));

    man.artifacts = {out_path, heatmap_path};
    man.write(out_path + ".manifest.json");
    std::printf("wrote %zu relevance maps\n", maps.size());
    return 0;
}

int cmd_ablate(const std::string& ckpt_path, const std::string& data_path,
               const std::vector<std::string>& methods, int kmax, int random_repeats,
               std::uint64_t seed, const std::string& out_path) {
    if (kmax < 0) throw_input("--kmax must be >= 0");
    if (random_repeats < 1) throw_input("--random-repeats must be >= 1");
    ManifestBuilder man;
    man.command = "ablate";
    man.seed = seed;
    man.add_input(ckpt_path);
    man.add_input(data_path);
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    Dataset data = load_tsv(data_path);

    std::vector<AblationCurve> curves;
    for (const auto& m : methods) {
        AttributionConfig acfg = make_acfg(m, "logit");
        curves.push_back(deletion_curve(ckpt.config, ckpt.params, ckpt.vocab, data, acfg, kmax));
    }
    curves.push_back(random_deletion_curve(ckpt.config, ckpt.params, ckpt.vocab, data, kmax,
                                           random_repeats, seed));
    atomic_write_file(out_path, curves_to_csv(curves));

    man.config = nlohmann::ordered_json{
        {"methods", methods}, {"kmax", kmax}, {"random_repeats", random_repeats}};
    man.artifacts = {out_path};
    man.write(out_path + ".manifest.json");
    return 0;
}

int cmd_correlate_seeds(const std::string& train_path, const std::string& dev_path,
                        const std::string& test_path, const std::string& config_path,
                        std::uint64_t seed_a, std::uint64_t seed_b,
                        const std::vector<std::string>& methods, int min_count,
                        const std::string& out_path, ManifestBuilder& man) {
    CliConfig cfg = load_cli_config(config_path);
    man.add_input(train_path);
    man.add_input(test_path);
    if (!config_path.empty()) man.add_input(config_path);
    Dataset train = load_tsv(train_path);
    Dataset dev;
    if (dev_path.empty()) {
        std::tie(train, dev) = split_even(train);
    } else {
        man.add_input(dev_path);
        dev = load_tsv(dev_path);
    }
    Dataset test = load_tsv(test_path);
    Vocabulary vocab = build_vocab(train, cfg.min_freq);
    cfg.model.vocab_size = vocab.size();
    man.config = resolved_config_json(cfg);
    man.config["seeds"] = {seed_a, seed_b};
    man.seed = seed_a;

    std::vector<Method> ms;
    for (const auto& m : methods) ms.push_back(make_acfg(m, "logit").method);
    auto reports =
        seed_robustness(cfg.model, vocab, train, dev, test, {seed_a, seed_b}, ms, cfg.hyper, min_count);
    atomic_write_file(out_path, reports_to_json(reports));
    man.artifacts = {out_path};
    return 0;
}

int cmd_correlate_datasets(const std::vector<std::string>& ckpt_paths,
                           const std::vector<std::string>& data_paths, const std::string& method,
                           int min_count, const std::string& out_path, ManifestBuilder& man) {
    if (ckpt_paths.size() != data_paths.size()) {
        throw_input("--ckpt and --data counts must match");
    }
    if (ckpt_paths.size() < 2) throw_input("datasets mode needs at least 2 checkpoint/data pairs");
    std::vector<Checkpoint> ckpts;
    std::vector<Dataset> sets;
    for (std::size_t i = 0; i < ckpt_paths.size(); ++i) {
        man.add_input(ckpt_paths[i]);
        man.add_input(data_paths[i]);
        ckpts.push_back(load_checkpoint(ckpt_paths[i]));
        sets.push_back(load_tsv(data_paths[i]));
    }
    Method m = make_acfg(method, "logit").method;
    man.config = nlohmann::ordered_json{{"method", method}, {"min_count", min_count}};
    CorrelationReport rep = cross_dataset(ckpts, sets, m, min_count);
    atomic_write_file(out_path, report_to_json(rep));
    man.artifacts = {out_path};
    return 0;
}

int cmd_rank(const std::string& maps_path, int min_count, int k, bool keep_punct,
             const std::string& out_path) {
    ManifestBuilder man;
    man.command = "rank";
    man.add_input(maps_path);
    std::istringstream in(read_file(maps_path));
    std::vector<RelevanceMap> maps;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            maps.push_back(relevance_map_from_json_line(line));
        } catch (const Error& e) {
            throw_input(maps_path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    WordRelevanceTable table = word_table(maps, min_count, !keep_punct);
    auto [top, bottom] = top_bottom(table, k);
    auto to_json = [](const std::vector<RankedWord>& words) {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const auto& w : words) {
            arr.push_back({{"word", w.word}, {"mean", w.mean}, {"count", w.count}});
        }
        return arr;
    };
    nlohmann::ordered_json j;
    j["top"] = to_json(top);
    j["bottom"] = to_json(bottom);
    atomic_write_file(out_path, j.dump(2) + "\n");
    man.config = nlohmann::ordered_json{{"min_count", min_count}, {"k", k}};
    man.artifacts = {out_path};
    man.write(out_path + ".manifest.json");
    return 0;
}

int cmd_gradcheck(const std::string& config_path, std::uint64_t seed, int trials,
                  bool corrupt_vjp) {
    if (trials <= 0) throw_input("--trials must be >= 1");
    CliConfig cli = load_cli_config(config_path);
    ModelConfig base = cli.model;
    if (config_path.empty()) {
        // small default so the finite-difference sweep stays fast
        base.n_layers = 2;
        base.n_heads = 2;
        base.d_model = 8;
        base.d_ff = 16;
        base.max_seq_len = 16;
    }
    base.dropout_prob = 0.0;
    if (base.vocab_size <= 0) base.vocab_size = 24;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 0.4);
    double worst_grad = 0.0, worst_lrp = 0.0, worst_lat = 0.0;
    bool ok = true;
    const double h = 1e-5;

    for (int trial = 0; trial < trials; ++trial) {
        ModelConfig cfg = base;
        cfg.seed = seed + static_cast<std::uint64_t>(trial);
        Parameters p = init_params(cfg);
        for (double& v : p.head_w.data()) v = dist(rng);
        std::uniform_int_distribution<int> tok(3, cfg.vocab_size - 1);
        std::vector<int> ids = {Vocabulary::kCls};
        for (int i = 0; i < 5; ++i) ids.push_back(tok(rng));
        ForwardTrace trace = forward(cfg, p, ids, Mode::Eval);
        int target = trial % cfg.n_classes;

        Tensor grad = input_gradient(cfg, p, trace, {target, false});
        if (corrupt_vjp) grad.at(0) += 0.5;
        double scale = 1.0;
        for (double v : grad.data()) scale = std::max(scale, std::fabs(v));
        for (std::size_t t = 0; t < ids.size(); ++t) {
            for (std::size_t j = 0; j < static_cast<std::size_t>(cfg.d_model); ++j) {
                Parameters pp = p;
                pp.pos_emb.at(t, j) += h;
                double fp = forward(cfg, pp, ids, Mode::Eval).logits.at(target);
                pp.pos_emb.at(t, j) -= 2 * h;
                double fm = forward(cfg, pp, ids, Mode::Eval).logits.at(target);
                double fd = (fp - fm) / (2 * h);
                worst_grad = std::max(worst_grad, std::fabs(grad.at(t, j) - fd) / scale);
            }
        }

        AttributionConfig acfg;
        acfg.method = Method::LRP;
        RelevanceMap lrp = attribute_lrp(cfg, p, trace, target, acfg);
        double total = 0.0;
        for (double v : lrp.dims.data()) total += v;
        double fc = trace.logits.at(target);
        worst_lrp = std::max(worst_lrp, std::fabs(total - fc) / std::max(1.0, std::fabs(fc)));

        RelevanceMap lat = attribute_lat(trace);
        double lat_total = 0.0;
        for (double v : lat.token_scores) lat_total += v;
        worst_lat = std::max(worst_lat, std::fabs(lat_total - 1.0));
    }

    std::printf("gradient max relative error: %s (threshold 1e-4)\n", format_g17(worst_grad).c_str());
    std::printf("lrp conservation max error:  %s (threshold 1e-6)\n", format_g17(worst_lrp).c_str());
    std::printf("lat conservation max error:  %s (threshold 1e-6)\n", format_g17(worst_lat).c_str());
    if (worst_grad >= 1e-4) {
        std::printf("FAIL: input gradient vs finite differences\n");
        ok = false;
    }
    if (worst_lrp >= 1e-6) {
        std::printf("FAIL: lrp conservation\n");
        ok = false;
    }
    if (worst_lat >= 1e-6) {
        std::printf("FAIL: lat conservation\n");
        ok = false;
    }
    return ok ? 0 : 1;
}

int cmd_toygen(int n, std::uint64_t seed, const std::string& out_path) {
    ToyCorpusSpec spec;
    spec.n_sentences = n;
    spec.seed = seed;
    Dataset d = make_cue_corpus(spec);
    std::string lines;
    for (const auto& ex : d.examples) {
        lines += std::to_string(ex.label) + "\t" + ex.text + "\n";
    }
    atomic_write_file(out_path, lines);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"transformer sentiment attribution toolkit"};
    app.require_subcommand(1);

    // train
    std::string train_path, dev_path, config_path, out_dir;
    std::optional<std::uint64_t> seed_override;
    auto* train = app.add_subcommand("train", "fit a classifier and write a checkpoint");
    train->add_option("--train", train_path, "training TSV (label<TAB>text)")->required();
    train->add_option("--dev", dev_path, "dev TSV")->required();
    train->add_option("--config", config_path, "JSON config file");
    train->add_option("--seed", seed_override, "override the config seed");
    train->add_option("--out", out_dir, "output directory")->required();

    // attribute
    std::string at_ckpt, at_data, at_method = "gs", at_target = "logit", at_out;
    bool at_dims = false;
    auto* attr = app.add_subcommand("attribute", "write per-sentence relevance maps");
    attr->add_option("--ckpt", at_ckpt, "checkpoint file")->required();
    attr->add_option("--data", at_data, "TSV input")->required();
    attr->add_option("--method", at_method, "gs|gi|lrp|lat");
    attr->add_option("--target", at_target, "logit|prob");
    attr->add_flag("--dims", at_dims, "include per-dimension relevance");
    attr->add_option("--out", at_out, "output JSON-lines file")->required();

    // ablate
    std::string ab_ckpt, ab_data, ab_out;
    std::vector<std::string> ab_methods = {"gs", "gi", "lrp", "lat"};
    int ab_kmax = 5, ab_repeats = 10;
    std::uint64_t ab_seed = 1;
    auto* ablate = app.add_subcommand("ablate", "word-deletion accuracy curves");
    ablate->add_option("--ckpt", ab_ckpt, "checkpoint file")->required();
    ablate->add_option("--data", ab_data, "TSV input")->required();
    ablate->add_option("--methods", ab_methods, "attribution methods")->delimiter(',');
    ablate->add_option("--kmax", ab_kmax, "max deleted words");
    ablate->add_option("--random-repeats", ab_repeats, "random-baseline repeats");
    ablate->add_option("--seed", ab_seed, "random-baseline seed");
    ablate->add_option("--out", ab_out, "output CSV")->required();

    // correlate
    std::string co_mode, co_train, co_dev, co_test, co_config, co_method = "gs", co_out;
    std::vector<std::string> co_methods = {"gs", "gi", "lrp", "lat"};
    std::vector<std::string> co_ckpts, co_datas;
    std::uint64_t co_seed_a = 1, co_seed_b = 2;
    int co_min_count = 5;
    auto* correlate = app.add_subcommand("correlate", "word-relevance Pearson correlations");
    correlate->add_option("--mode", co_mode, "seeds|datasets")->required();
    correlate->add_option("--train", co_train, "training TSV (seeds mode)");
    correlate->add_option("--dev", co_dev, "dev TSV (seeds mode; default: even split of --train)");
    correlate->add_option("--test", co_test, "test TSV (seeds mode)");
    correlate->add_option("--config", co_config, "JSON config file (seeds mode)");
    correlate->add_option("--seed-a", co_seed_a, "first seed (seeds mode)");
    correlate->add_option("--seed-b", co_seed_b, "second seed (seeds mode)");
    correlate->add_option("--methods", co_methods, "methods (seeds mode)")->delimiter(',');
    correlate->add_option("--ckpt", co_ckpts, "checkpoints (datasets mode)");
    correlate->add_option("--data", co_datas, "test TSVs (datasets mode)");
    correlate->add_option("--method", co_method, "method (datasets mode)");
    correlate->add_option("--min-count", co_min_count, "word-table min count");
    correlate->add_option("--out", co_out, "output JSON")->required();

    // rank
    std::string rk_maps, rk_out;
    int rk_min_count = 5, rk_k = 5;
    bool rk_keep_punct = false;
    auto* rank = app.add_subcommand("rank", "top/bottom words by mean relevance");
    rank->add_option("--maps", rk_maps, "JSON-lines relevance file")->required();
    rank->add_option("--min-count", rk_min_count, "minimum word occurrences");
    rank->add_option("--k", rk_k, "list length");
    rank->add_flag("--keep-punct", rk_keep_punct, "keep punctuation-only tokens");
    rank->add_option("--out", rk_out, "output JSON")->required();

    // toygen
    std::string tg_out;
    int tg_n = 2000;
    std::uint64_t tg_seed = 7;
    auto* toygen = app.add_subcommand("toygen", "generate the synthetic cue-word corpus");
    toygen->add_option("--n", tg_n, "number of sentences");
    toygen->add_option("--seed", tg_seed, "generator seed");
    toygen->add_option("--out", tg_out, "output TSV")->required();

    // gradcheck
    std::string gc_config;
    std::uint64_t gc_seed = 1;
    int gc_trials = 5;
    bool gc_corrupt = false;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference and conservation checks");
    gradcheck->add_option("--config", gc_config, "JSON config file");
    gradcheck->add_option("--seed", gc_seed, "base seed");
    gradcheck->add_option("--trials", gc_trials, "number of random models");
    gradcheck->add_flag("--corrupt-vjp", gc_corrupt, "negative control: perturb the gradient")
        ->group("");  // hidden

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (app.got_subcommand(train)) {
            return cmd_train(train_path, dev_path, config_path, out_dir, seed_override);
        }
        if (app.got_subcommand(attr)) {
            return cmd_attribute(at_ckpt, at_data, at_method, at_target, at_dims, at_out);
        }
        if (app.got_subcommand(ablate)) {
            return cmd_ablate(ab_ckpt, ab_data, ab_methods, ab_kmax, ab_repeats, ab_seed, ab_out);
        }
        if (app.got_subcommand(correlate)) {
            ManifestBuilder man;
            man.command = "correlate";
            int rc;
            if (co_mode == "seeds") {
                if (co_train.empty() || co_test.empty()) {
                    throw_input("seeds mode requires --train and --test");
                }
                rc = cmd_correlate_seeds(co_train, co_dev, co_test, co_config, co_seed_a, co_seed_b,
                                         co_methods, co_min_count, co_out, man);
            } else if (co_mode == "datasets") {
                rc = cmd_correlate_datasets(co_ckpts, co_datas, co_method, co_min_count, co_out, man);
            } else {
                throw_input("unknown --mode '" + co_mode + "' (expected seeds or datasets)");
            }
            man.write(co_out + ".manifest.json");
            return rc;
        }
        if (app.got_subcommand(rank)) {
            return cmd_rank(rk_maps, rk_min_count, rk_k, rk_keep_punct, rk_out);
        }
        if (app.got_subcommand(toygen)) {
            if (tg_n < 2) throw_input("--n must be >= 2");
            return cmd_toygen(tg_n, tg_seed, tg_out);
        }
        if (app.got_subcommand(gradcheck)) {
            return cmd_gradcheck(gc_config, gc_seed, gc_trials, gc_corrupt);
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.kind() == ErrorKind::Input ? 2 : 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
