#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "attrib/model.hpp"
#include "attrib/toy_corpus.hpp"
#include "attrib/util.hpp"

using namespace attrib;

namespace {

ModelConfig tiny_config(std::uint64_t seed = 1) {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    cfg.d_ff = 16;
    cfg.vocab_size = 20;
    cfg.max_seq_len = 12;
    cfg.n_classes = 3;
    cfg.dropout_prob = 0.0;
    cfg.seed = seed;
    return cfg;
}

bool params_bitwise_equal(const Parameters& a, const Parameters& b) {
    return a.fingerprint() == b.fingerprint();
}

double max_rel_err(const Tensor& got, const Tensor& want) {
    double worst = 0.0;
    double scale = 1.0;
    for (std::size_t i = 0; i < want.size(); ++i) scale = std::max(scale, std::fabs(want.at(i)));
    for (std::size_t i = 0; i < got.size(); ++i) {
        worst = std::max(worst, std::fabs(got.at(i) - want.at(i)) / scale);
    }
    return worst;
}

}  // namespace

TEST_CASE("init is deterministic per seed and differs across seeds") {
    ModelConfig cfg = tiny_config(5);
    Parameters a = init_params(cfg);
    Parameters b = init_params(cfg);
    CHECK(params_bitwise_equal(a, b));
    cfg.seed = 6;
    Parameters c = init_params(cfg);
    CHECK_FALSE(params_bitwise_equal(a, c));
}

TEST_CASE("zero classifier head gives equal logits and uniform probabilities") {
    ModelConfig cfg = tiny_config();
    Parameters p = init_params(cfg);
    ForwardTrace t = forward(cfg, p, {2, 3, 4, 5}, Mode::Eval);
    for (std::size_t c = 1; c < t.logits.size(); ++c) {
        CHECK(t.logits.at(c) == doctest::Approx(t.logits.at(0)));
    }
    for (std::size_t c = 0; c < t.probs.size(); ++c) {
        CHECK(t.probs.at(c) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
    CHECK(predict(cfg, p, {2, 3, 4, 5}) == 0);  // tie-break: lowest class index
}

TEST_CASE("forward trace invariants: attention rows and probabilities sum to 1") {
    ModelConfig cfg = tiny_config(11);
    Parameters p = init_params(cfg);
    ForwardTrace t = forward(cfg, p, {2, 7, 8, 9, 10, 11}, Mode::Eval);
    for (const auto& lt : t.layers) {
        for (const auto& a : lt.attn) {
            for (std::size_t i = 0; i < a.rows(); ++i) {
                double sum = 0.0;
                for (std::size_t j = 0; j < a.cols(); ++j) sum += a.at(i, j);
                CHECK(std::fabs(sum - 1.0) <= 1e-8);
            }
        }
    }
    double psum = 0.0;
    for (std::size_t c = 0; c < t.probs.size(); ++c) psum += t.probs.at(c);
    CHECK(std::fabs(psum - 1.0) <= 1e-10);
}

TEST_CASE("eval forward is bitwise deterministic") {
    ModelConfig cfg = tiny_config(13);
    Parameters p = init_params(cfg);
    ForwardTrace a = forward(cfg, p, {2, 3, 9}, Mode::Eval);
    ForwardTrace b = forward(cfg, p, {2, 3, 9}, Mode::Eval);
    CHECK(std::memcmp(a.logits.data().data(), b.logits.data().data(),
                      a.logits.size() * sizeof(double)) == 0);
}

TEST_CASE("forward rejects bad inputs") {
    ModelConfig cfg = tiny_config();
    Parameters p = init_params(cfg);
    CHECK_THROWS_AS(forward(cfg, p, {}, Mode::Eval), Error);
    CHECK_THROWS_AS(forward(cfg, p, {2, 25}, Mode::Eval), Error);
    std::vector<int> too_long(cfg.max_seq_len + 1, 2);
    CHECK_THROWS_AS(forward(cfg, p, too_long, Mode::Eval), Error);
    try {
        forward(cfg, p, {2, 25}, Mode::Eval);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Input);
    }
}

TEST_CASE("input_gradient: zero head gives zero gradient, head row scaling is linear") {
    ModelConfig cfg = tiny_config(3);
    Parameters p = init_params(cfg);
    ForwardTrace t = forward(cfg, p, {2, 4, 5}, Mode::Eval);
    Tensor g = input_gradient(cfg, p, t, {1, false});
    for (double v : g.data()) CHECK(v == 0.0);

    // give the head nonzero weights, then double column c
    std::mt19937_64 rng(99);
    std::normal_distribution<double> dist(0.0, 0.3);
    for (double& v : p.head_w.data()) v = dist(rng);
    ForwardTrace t1 = forward(cfg, p, {2, 4, 5}, Mode::Eval);
    Tensor g1 = input_gradient(cfg, p, t1, {1, false});
    for (std::size_t i = 0; i < p.head_w.rows(); ++i) p.head_w.at(i, 1) *= 2.0;
    ForwardTrace t2 = forward(cfg, p, {2, 4, 5}, Mode::Eval);
    Tensor g2 = input_gradient(cfg, p, t2, {1, false});
    CHECK(max_rel_err(g2, [&] {
              Tensor doubled = g1;
              for (double& v : doubled.data()) v *= 2.0;
              return doubled;
          }()) < 1e-12);
}

TEST_CASE("input_gradient rejects stale traces") {
    ModelConfig cfg = tiny_config(3);
    Parameters p = init_params(cfg);
    ForwardTrace t = forward(cfg, p, {2, 4, 5}, Mode::Eval);
    p.head_b.at(0) += 1.0;
    CHECK_THROWS_AS(input_gradient(cfg, p, t, {0, false}), Error);
}

TEST_CASE("input_gradient matches central finite differences (logit and probability targets)") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        ModelConfig cfg = tiny_config(seed);
        Parameters p = init_params(cfg);
        // non-degenerate head
        std::mt19937_64 rng(seed * 31 + 7);
        std::normal_distribution<double> dist(0.0, 0.4);
        for (double& v : p.head_w.data()) v = dist(rng);
        std::vector<int> ids = {2, 5, 9, 14};
        ForwardTrace trace = forward(cfg, p, ids, Mode::Eval);
        for (bool use_prob : {false, true}) {
            TargetSelector sel{1, use_prob};
            Tensor grad = input_gradient(cfg, p, trace, sel);
            // finite differences over the embedding tables (token + position)
            const double h = 1e-5;
            Tensor fd({ids.size(), static_cast<std::size_t>(cfg.d_model)});
            for (std::size_t t = 0; t < ids.size(); ++t) {
                for (std::size_t j = 0; j < static_cast<std::size_t>(cfg.d_model); ++j) {
                    Parameters pp = p;
                    pp.pos_emb.at(t, j) += h;
                    ForwardTrace tp = forward(cfg, pp, ids, Mode::Eval);
                    pp.pos_emb.at(t, j) -= 2 * h;
                    ForwardTrace tm = forward(cfg, pp, ids, Mode::Eval);
                    double fp = use_prob ? tp.probs.at(1) : tp.logits.at(1);
                    double fm = use_prob ? tm.probs.at(1) : tm.logits.at(1);
                    fd.at(t, j) = (fp - fm) / (2 * h);
                }
            }
            CHECK(max_rel_err(grad, fd) < 1e-4);
        }
    }
}

TEST_CASE("checkpoint round-trips bitwise") {
    ModelConfig cfg = tiny_config(17);
    Checkpoint ckpt;
    ckpt.config = cfg;
    ckpt.params = init_params(cfg);
    Dataset d;
    d.examples = {{"alpha beta gamma delta", 0}};
    ckpt.vocab = build_vocab(d, 1);
    ckpt.config.vocab_size = ckpt.vocab.size();
    ckpt.params = init_params(ckpt.config);
    ckpt.meta.dev_accuracy = 0.75;
    ckpt.meta.epochs_trained = 2;
    auto path = (std::filesystem::temp_directory_path() / "attrib_model_rt.ckpt").string();
    save_checkpoint(ckpt, path);
    Checkpoint back = load_checkpoint(path);
    CHECK(back.params.fingerprint() == ckpt.params.fingerprint());
    CHECK(back.vocab.content_hash == ckpt.vocab.content_hash);
    CHECK(back.meta.dev_accuracy == 0.75);

    // forward agrees bitwise
    ForwardTrace a = forward(ckpt.config, ckpt.params, {2, 3, 4}, Mode::Eval);
    ForwardTrace b = forward(back.config, back.params, {2, 3, 4}, Mode::Eval);
    CHECK(std::memcmp(a.logits.data().data(), b.logits.data().data(),
                      a.logits.size() * sizeof(double)) == 0);

    SUBCASE("truncated file is a distinct load error") {
        std::string bytes = read_file(path);
        auto tpath = (std::filesystem::temp_directory_path() / "attrib_model_trunc.ckpt").string();
        atomic_write_file(tpath, bytes.substr(0, bytes.size() - 1));
        try {
            load_checkpoint(tpath);
            FAIL("expected truncation error");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("truncated") != std::string::npos);
        }
    }
    SUBCASE("bumped version is a distinct load error") {
        std::string bytes = read_file(path);
        bytes[4] = 9;
        auto vpath = (std::filesystem::temp_directory_path() / "attrib_model_ver.ckpt").string();
        atomic_write_file(vpath, bytes);
        try {
            load_checkpoint(vpath);
            FAIL("expected version error");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("version") != std::string::npos);
        }
    }
    SUBCASE("bad magic is rejected") {
        std::string bytes = read_file(path);
        bytes[0] = 'X';
        auto mpath = (std::filesystem::temp_directory_path() / "attrib_model_magic.ckpt").string();
        atomic_write_file(mpath, bytes);
        CHECK_THROWS_AS(load_checkpoint(mpath), Error);
    }
}

TEST_CASE("fit: deterministic, trains the cue-word rule, epochs=0 returns the init model") {
    Dataset train = make_cue_corpus({240, 21, 3, 6, "train"});
    Dataset dev = make_cue_corpus({60, 22, 3, 6, "dev"});
    Vocabulary vocab = build_vocab(train, 1);
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_model = 16;
    cfg.d_ff = 32;
    cfg.vocab_size = vocab.size();
    cfg.max_seq_len = 16;
    cfg.n_classes = 2;
    cfg.dropout_prob = 0.1;
    cfg.seed = 2;
    Hyper hyper{2e-3, 16, 8};

    Checkpoint a = fit(cfg, vocab, train, dev, hyper);
    Checkpoint b = fit(cfg, vocab, train, dev, hyper);
    CHECK(a.meta.dev_accuracy == b.meta.dev_accuracy);
    CHECK(a.meta.train_loss_per_epoch == b.meta.train_loss_per_epoch);
    CHECK(a.params.fingerprint() == b.params.fingerprint());
    CHECK(a.meta.dev_accuracy > 0.9);

    // trained model classifies a held-out cue sentence as positive
    std::string sentence = "the movie was " + toy_positive_cues()[0] + " today";
    CHECK(predict(a.config, a.params, encode(vocab, sentence, cfg.max_seq_len)) == 1);

    Checkpoint zero = fit(cfg, vocab, train, dev, Hyper{1e-3, 16, 0});
    CHECK(zero.meta.best_epoch == -1);
    CHECK(zero.params.fingerprint() == init_params(cfg).fingerprint());
    CHECK(zero.meta.dev_accuracy == doctest::Approx(0.5).epsilon(0.25));
}

TEST_CASE("fit input validation") {
    Dataset train = make_cue_corpus({10, 1, 3, 5, "t"});
    Vocabulary vocab = build_vocab(train, 1);
    ModelConfig cfg = tiny_config();
    cfg.vocab_size = vocab.size();
    cfg.n_classes = 2;
    Dataset empty;
    CHECK_THROWS_AS(fit(cfg, vocab, empty, train, {}), Error);
    Dataset bad = train;
    bad.examples[0].label = 7;
    CHECK_THROWS_AS(fit(cfg, vocab, bad, train, {}), Error);
}
