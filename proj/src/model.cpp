#include "attrib/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "attrib/util.hpp"

namespace attrib {

namespace {

constexpr char kMagic[4] = {'A', 'T', 'R', 'B'};

Tensor slice_cols(const Tensor& m, std::size_t begin, std::size_t width) {
    Tensor out({m.rows(), width});
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* src = m.row(i) + begin;
        double* dst = out.row(i);
        std::copy(src, src + width, dst);
    }
    return out;
}

void add_into_cols(Tensor& target, const Tensor& part, std::size_t begin) {
    for (std::size_t i = 0; i < part.rows(); ++i) {
        const double* src = part.row(i);
        double* dst = target.row(i) + begin;
        for (std::size_t j = 0; j < part.cols(); ++j) dst[j] += src[j];
    }
}

Tensor colsum(const Tensor& m) {
    Tensor out({m.cols()});
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* row = m.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) out.at(j) += row[j];
    }
    return out;
}

// rows(x) * w + b broadcast over rows
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor out = matmul(x, w);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        double* row = out.row(i);
        for (std::size_t j = 0; j < out.cols(); ++j) row[j] += b.at(j);
    }
    return out;
}

Tensor transpose(const Tensor& m) {
    Tensor out({m.cols(), m.rows()});
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) out.at(j, i) = m.at(i, j);
    }
    return out;
}

Tensor layernorm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    Tensor out = x;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        Tensor row({x.cols()}, std::vector<double>(x.row(i), x.row(i) + x.cols()));
        Tensor normed = layernorm(row, gamma, beta, eps);
        std::copy(normed.data().begin(), normed.data().end(), out.row(i));
    }
    return out;
}

Tensor apply_mask(const Tensor& x, const Tensor& mask) {
    if (mask.empty()) return x;
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) *= mask.at(i);
    return out;
}

Parameters make_zero_like(const Parameters& p) {
    Parameters z = p;
    z.for_each_tensor([](const std::string&, Tensor& t) {
        std::fill(t.data().begin(), t.data().end(), 0.0);
    });
    return z;
}

}  // namespace

void ModelConfig::validate() const {
    if (n_layers < 1) throw_contract("config: n_layers must be >= 1");
    if (n_heads < 1) throw_contract("config: n_heads must be >= 1");
    if (d_model < 2) throw_contract("config: d_model must be >= 2");
    if (d_model % n_heads != 0) throw_contract("config: d_model must be divisible by n_heads");
    if (d_ff < 1) throw_contract("config: d_ff must be >= 1");
    if (vocab_size < 3) throw_contract("config: vocab_size must cover the special tokens");
    if (max_seq_len < 2) throw_contract("config: max_seq_len must be >= 2");
    if (n_classes < 2) throw_contract("config: n_classes must be >= 2");
    if (dropout_prob < 0.0 || dropout_prob >= 1.0) throw_contract("config: dropout_prob must be in [0,1)");
    if (ln_eps <= 0.0) throw_contract("config: ln_eps must be positive");
}

std::uint64_t Parameters::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for_each_tensor([&h](const std::string& name, const Tensor& t) {
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(t.data().data(), t.data().size() * sizeof(double), h);
    });
    return h;
}

Parameters init_params(const ModelConfig& cfg) {
    cfg.validate();
    std::size_t d = static_cast<std::size_t>(cfg.d_model);
    std::size_t dff = static_cast<std::size_t>(cfg.d_ff);
    Parameters p;
    p.tok_emb = Tensor({static_cast<std::size_t>(cfg.vocab_size), d});
    p.pos_emb = Tensor({static_cast<std::size_t>(cfg.max_seq_len), d});
    p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& lp : p.layers) {
        lp.wq = Tensor({d, d}); lp.wk = Tensor({d, d});
        lp.wv = Tensor({d, d}); lp.wo = Tensor({d, d});
        lp.bq = Tensor({d}); lp.bk = Tensor({d}); lp.bv = Tensor({d}); lp.bo = Tensor({d});
        lp.w1 = Tensor({d, dff}); lp.b1 = Tensor({dff});
        lp.w2 = Tensor({dff, d}); lp.b2 = Tensor({d});
        lp.ln1_gamma = Tensor({d}); lp.ln1_beta = Tensor({d});
        lp.ln2_gamma = Tensor({d}); lp.ln2_beta = Tensor({d});
    }
    p.head_w = Tensor({d, static_cast<std::size_t>(cfg.n_classes)});
    p.head_b = Tensor({static_cast<std::size_t>(cfg.n_classes)});

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
    p.for_each_tensor([&](const std::string& name, Tensor& t) {
        bool is_gamma = name.find("gamma") != std::string::npos;
        bool is_beta = name.find("beta") != std::string::npos;
        bool is_bias = name.find(".b") != std::string::npos || name == "head_b";
        bool is_head = name == "head_w" || name == "head_b";
        if (is_gamma) {
            std::fill(t.data().begin(), t.data().end(), 1.0);
        } else if (is_beta || is_bias || is_head) {
            // zeros
        } else {
            for (double& v : t.data()) v = dist(rng);
        }
    });
    return p;
}

ForwardTrace forward(const ModelConfig& cfg, const Parameters& params,
                     const std::vector<int>& token_ids, Mode mode, std::mt19937_64* dropout_rng) {
    cfg.validate();
    std::size_t t_len = token_ids.size();
    if (t_len < 1) throw_input("forward: empty token sequence");
    if (t_len > static_cast<std::size_t>(cfg.max_seq_len)) {
        throw_input("forward: sequence length " + std::to_string(t_len) + " exceeds max_seq_len " +
                    std::to_string(cfg.max_seq_len));
    }
    for (int id : token_ids) {
        if (id < 0 || id >= cfg.vocab_size) {
            throw_input("forward: token id " + std::to_string(id) + " out of range [0," +
                        std::to_string(cfg.vocab_size) + ")");
        }
    }
    std::size_t d = static_cast<std::size_t>(cfg.d_model);
    std::size_t dh = static_cast<std::size_t>(cfg.head_dim());
    bool train = mode == Mode::Train;
    bool use_dropout = train && cfg.dropout_prob > 0.0 && dropout_rng != nullptr;
    double keep = 1.0 - cfg.dropout_prob;

    ForwardTrace trace;
    trace.token_ids = token_ids;
    trace.mode = mode;
    trace.params_fingerprint = params.fingerprint();

    trace.embedded = Tensor({t_len, d});
    for (std::size_t t = 0; t < t_len; ++t) {
        const double* tok = params.tok_emb.row(static_cast<std::size_t>(token_ids[t]));
        const double* pos = params.pos_emb.row(t);
        double* dst = trace.embedded.row(t);
        for (std::size_t j = 0; j < d; ++j) dst[j] = tok[j] + pos[j];
    }

    auto draw_mask = [&](std::size_t rows, std::size_t cols) {
        Tensor mask({rows, cols});
        std::bernoulli_distribution coin(keep);
        for (double& v : mask.data()) v = coin(*dropout_rng) ? 1.0 / keep : 0.0;
        return mask;
    };

    Tensor x = trace.embedded;
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    trace.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l) {
        const LayerParams& lp = params.layers[static_cast<std::size_t>(l)];
        LayerTrace& lt = trace.layers[static_cast<std::size_t>(l)];
        lt.x_in = x;

        Tensor q_full = affine(x, lp.wq, lp.bq);
        Tensor k_full = affine(x, lp.wk, lp.bk);
        Tensor v_full = affine(x, lp.wv, lp.bv);
        lt.heads_concat = Tensor({t_len, d});
        lt.q.reserve(static_cast<std::size_t>(cfg.n_heads));
        for (int h = 0; h < cfg.n_heads; ++h) {
            std::size_t off = static_cast<std::size_t>(h) * dh;
            Tensor qh = slice_cols(q_full, off, dh);
            Tensor kh = slice_cols(k_full, off, dh);
            Tensor vh = slice_cols(v_full, off, dh);
            Tensor scores = matmul(qh, transpose(kh));
            for (double& s : scores.data()) s *= scale;
            Tensor a = softmax_rows(scores);
            Tensor out_h = matmul(a, vh);
            add_into_cols(lt.heads_concat, out_h, off);
            lt.q.push_back(std::move(qh));
            lt.k.push_back(std::move(kh));
            lt.v.push_back(std::move(vh));
            lt.attn.push_back(std::move(a));
        }
        lt.attn_proj = affine(lt.heads_concat, lp.wo, lp.bo);
        if (use_dropout) {
            lt.attn_drop_mask = draw_mask(t_len, d);
            lt.attn_proj = apply_mask(lt.attn_proj, lt.attn_drop_mask);
        }
        lt.res1 = add(lt.x_in, lt.attn_proj);
        lt.ln1_out = layernorm_rows(lt.res1, lp.ln1_gamma, lp.ln1_beta, cfg.ln_eps);

        lt.ffn_pre = affine(lt.ln1_out, lp.w1, lp.b1);
        lt.ffn_act = gelu(lt.ffn_pre);
        lt.ffn_out = affine(lt.ffn_act, lp.w2, lp.b2);
        if (use_dropout) {
            lt.ffn_drop_mask = draw_mask(t_len, d);
            lt.ffn_out = apply_mask(lt.ffn_out, lt.ffn_drop_mask);
        }
        lt.res2 = add(lt.ln1_out, lt.ffn_out);
        lt.ln2_out = layernorm_rows(lt.res2, lp.ln2_gamma, lp.ln2_beta, cfg.ln_eps);
        x = lt.ln2_out;
    }

    trace.pooled = Tensor({d}, std::vector<double>(x.row(0), x.row(0) + d));
    Tensor pooled_mat({1, d}, trace.pooled.data());
    Tensor logits_mat = affine(pooled_mat, params.head_w, params.head_b);
    trace.logits = Tensor({static_cast<std::size_t>(cfg.n_classes)}, logits_mat.data());
    trace.probs = softmax_rows(trace.logits);
    return trace;
}

BackwardResult backward(const ModelConfig& cfg, const Parameters& params, const ForwardTrace& trace,
                        const Tensor& d_logits, bool want_param_grads) {
    std::size_t t_len = static_cast<std::size_t>(trace.seq_len());
    std::size_t d = static_cast<std::size_t>(cfg.d_model);
    std::size_t dh = static_cast<std::size_t>(cfg.head_dim());
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    BackwardResult result;
    if (want_param_grads) result.d_params = make_zero_like(params);
    Parameters* pg = want_param_grads ? &*result.d_params : nullptr;

    // classifier head
    Tensor dx({t_len, d});
    for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d_logits.size(); ++c) acc += params.head_w.at(i, c) * d_logits.at(c);
        dx.at(0, i) = acc;
    }
    if (pg) {
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t c = 0; c < d_logits.size(); ++c) {
                pg->head_w.at(i, c) += trace.pooled.at(i) * d_logits.at(c);
            }
        }
        for (std::size_t c = 0; c < d_logits.size(); ++c) pg->head_b.at(c) += d_logits.at(c);
    }

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const LayerParams& lp = params.layers[static_cast<std::size_t>(l)];
        const LayerTrace& lt = trace.layers[static_cast<std::size_t>(l)];
        LayerParams* lg = pg ? &pg->layers[static_cast<std::size_t>(l)] : nullptr;

        // ln2 backward, per row
        Tensor d_res2({t_len, d});
        for (std::size_t t = 0; t < t_len; ++t) {
            Tensor row({d}, std::vector<double>(lt.res2.row(t), lt.res2.row(t) + d));
            Tensor up({d}, std::vector<double>(dx.row(t), dx.row(t) + d));
            auto r = layernorm_vjp(row, lp.ln2_gamma, lp.ln2_beta, up, cfg.ln_eps);
            std::copy(r.dx.data().begin(), r.dx.data().end(), d_res2.row(t));
            if (lg) {
                for (std::size_t j = 0; j < d; ++j) {
                    lg->ln2_gamma.at(j) += r.dgamma.at(j);
                    lg->ln2_beta.at(j) += r.dbeta.at(j);
                }
            }
        }

        Tensor d_ln1_out = d_res2;                       // residual branch
        Tensor d_ffn_out = apply_mask(d_res2, lt.ffn_drop_mask);

        if (lg) {
            Tensor db2 = colsum(d_ffn_out);
            for (std::size_t j = 0; j < d; ++j) lg->b2.at(j) += db2.at(j);
            Tensor dw2 = matmul_vjp_b(lt.ffn_act, d_ffn_out);
            for (std::size_t i = 0; i < dw2.size(); ++i) lg->w2.at(i) += dw2.at(i);
        }
        Tensor d_ffn_act = matmul_vjp_a(lp.w2, d_ffn_out);
        Tensor d_ffn_pre = gelu_vjp(lt.ffn_pre, d_ffn_act);
        if (lg) {
            Tensor db1 = colsum(d_ffn_pre);
            for (std::size_t j = 0; j < db1.size(); ++j) lg->b1.at(j) += db1.at(j);
            Tensor dw1 = matmul_vjp_b(lt.ln1_out, d_ffn_pre);
            for (std::size_t i = 0; i < dw1.size(); ++i) lg->w1.at(i) += dw1.at(i);
        }
        {
            Tensor d_from_ffn = matmul_vjp_a(lp.w1, d_ffn_pre);
            d_ln1_out = add(d_ln1_out, d_from_ffn);
        }

        // ln1 backward, per row
        Tensor d_res1({t_len, d});
        for (std::size_t t = 0; t < t_len; ++t) {
            Tensor row({d}, std::vector<double>(lt.res1.row(t), lt.res1.row(t) + d));
            Tensor up({d}, std::vector<double>(d_ln1_out.row(t), d_ln1_out.row(t) + d));
            auto r = layernorm_vjp(row, lp.ln1_gamma, lp.ln1_beta, up, cfg.ln_eps);
            std::copy(r.dx.data().begin(), r.dx.data().end(), d_res1.row(t));
            if (lg) {
                for (std::size_t j = 0; j < d; ++j) {
                    lg->ln1_gamma.at(j) += r.dgamma.at(j);
                    lg->ln1_beta.at(j) += r.dbeta.at(j);
                }
            }
        }

        Tensor d_x_in = d_res1;                          // residual branch
        Tensor d_attn_proj = apply_mask(d_res1, lt.attn_drop_mask);

        if (lg) {
            Tensor dbo = colsum(d_attn_proj);
            for (std::size_t j = 0; j < d; ++j) lg->bo.at(j) += dbo.at(j);
            Tensor dwo = matmul_vjp_b(lt.heads_concat, d_attn_proj);
            for (std::size_t i = 0; i < dwo.size(); ++i) lg->wo.at(i) += dwo.at(i);
        }
        Tensor d_heads = matmul_vjp_a(lp.wo, d_attn_proj);

        Tensor d_q_full({t_len, d});
        Tensor d_k_full({t_len, d});
        Tensor d_v_full({t_len, d});
        for (int h = 0; h < cfg.n_heads; ++h) {
            std::size_t off = static_cast<std::size_t>(h) * dh;
            Tensor d_out_h = slice_cols(d_heads, off, dh);
            const Tensor& a = lt.attn[static_cast<std::size_t>(h)];
            const Tensor& qh = lt.q[static_cast<std::size_t>(h)];
            const Tensor& kh = lt.k[static_cast<std::size_t>(h)];
            const Tensor& vh = lt.v[static_cast<std::size_t>(h)];
            Tensor d_a = matmul_vjp_a(vh, d_out_h);      // d_out * V^T
            Tensor d_v = matmul_vjp_b(a, d_out_h);       // A^T * d_out
            Tensor d_scores = softmax_rows_vjp(a, d_a);
            for (double& s : d_scores.data()) s *= scale;
            Tensor d_q = matmul(d_scores, kh);           // dS * K
            Tensor d_k = matmul(transpose(d_scores), qh);
            add_into_cols(d_q_full, d_q, off);
            add_into_cols(d_k_full, d_k, off);
            add_into_cols(d_v_full, d_v, off);
        }
        auto back_through_projection = [&](const Tensor& dfull, const Tensor& w, Tensor* bgrad,
                                           Tensor* wgrad) {
            if (bgrad) {
                Tensor db = colsum(dfull);
                for (std::size_t j = 0; j < d; ++j) bgrad->at(j) += db.at(j);
                Tensor dw = matmul_vjp_b(lt.x_in, dfull);
                for (std::size_t i = 0; i < dw.size(); ++i) wgrad->at(i) += dw.at(i);
            }
            d_x_in = add(d_x_in, matmul_vjp_a(w, dfull));
        };
        back_through_projection(d_q_full, lp.wq, lg ? &lg->bq : nullptr, lg ? &lg->wq : nullptr);
        back_through_projection(d_k_full, lp.wk, lg ? &lg->bk : nullptr, lg ? &lg->wk : nullptr);
        back_through_projection(d_v_full, lp.wv, lg ? &lg->bv : nullptr, lg ? &lg->wv : nullptr);
        dx = d_x_in;
    }

    result.d_embedded = dx;
    if (pg) {
        for (std::size_t t = 0; t < t_len; ++t) {
            std::size_t tok = static_cast<std::size_t>(trace.token_ids[t]);
            for (std::size_t j = 0; j < d; ++j) {
                pg->tok_emb.at(tok, j) += dx.at(t, j);
                pg->pos_emb.at(t, j) += dx.at(t, j);
            }
        }
    }
    return result;
}

Tensor input_gradient(const ModelConfig& cfg, const Parameters& params, const ForwardTrace& trace,
                      const TargetSelector& target) {
    if (trace.mode != Mode::Eval) throw_contract("input_gradient: trace must come from an eval-mode forward");
    if (trace.params_fingerprint != params.fingerprint()) {
        throw_contract("input_gradient: stale trace, parameter fingerprint mismatch");
    }
    std::size_t n_classes = trace.logits.size();
    if (target.class_id < 0 || static_cast<std::size_t>(target.class_id) >= n_classes) {
        throw_contract("input_gradient: class id out of range");
    }
    Tensor d_logits({n_classes});
    std::size_t c = static_cast<std::size_t>(target.class_id);
    if (target.use_probability) {
        double pc = trace.probs.at(c);
        for (std::size_t j = 0; j < n_classes; ++j) {
            d_logits.at(j) = pc * ((j == c ? 1.0 : 0.0) - trace.probs.at(j));
        }
    } else {
        d_logits.at(c) = 1.0;
    }
    return backward(cfg, params, trace, d_logits, false).d_embedded;
}

int predict(const ModelConfig& cfg, const Parameters& params, const std::vector<int>& token_ids) {
    ForwardTrace trace = forward(cfg, params, token_ids, Mode::Eval);
    int best = 0;
    for (std::size_t c = 1; c < trace.logits.size(); ++c) {
        if (trace.logits.at(c) > trace.logits.at(best)) best = static_cast<int>(c);
    }
    return best;
}

double dataset_accuracy(const ModelConfig& cfg, const Parameters& params, const Vocabulary& vocab,
                        const Dataset& data) {
    if (data.empty()) throw_input("dataset_accuracy: empty dataset");
    std::vector<int> correct(data.size(), 0);
    parallel_for(data.size(), [&](std::size_t i) {
        const auto& ex = data.examples[i];
        std::vector<int> ids = encode(vocab, ex.text, cfg.max_seq_len);
        correct[i] = predict(cfg, params, ids) == ex.label ? 1 : 0;
    });
    long sum = std::accumulate(correct.begin(), correct.end(), 0L);
    return static_cast<double>(sum) / static_cast<double>(data.size());
}

Checkpoint fit(const ModelConfig& cfg, const Vocabulary& vocab, const Dataset& train,
               const Dataset& dev, const Hyper& hyper, std::optional<std::uint64_t> run_seed) {
    cfg.validate();
    if (cfg.vocab_size != vocab.size()) {
        throw_contract("fit: config vocab_size " + std::to_string(cfg.vocab_size) +
                       " does not match vocabulary size " + std::to_string(vocab.size()));
    }
    if (train.empty()) throw_input("fit: empty training set");
    if (dev.empty()) throw_input("fit: empty dev set");
    for (const Dataset* ds : {&train, &dev}) {
        for (std::size_t i = 0; i < ds->examples.size(); ++i) {
            int lbl = ds->examples[i].label;
            if (lbl < 0 || lbl >= cfg.n_classes) {
                throw_input("fit: label " + std::to_string(lbl) + " out of range at example " +
                            std::to_string(i) + " of " + ds->name);
            }
        }
    }
    if (hyper.epochs < 0) throw_input("fit: negative epoch count");
    if (hyper.batch_size < 1) throw_input("fit: batch_size must be >= 1");

    std::vector<std::vector<int>> train_ids(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        train_ids[i] = encode(vocab, train.examples[i].text, cfg.max_seq_len);
    }

    Parameters params = init_params(cfg);
    Parameters m = make_zero_like(params);
    Parameters v = make_zero_like(params);
    const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    long step = 0;

    // run_seed decouples training stochasticity (shuffling, dropout) from the
    // weight initialization, so several runs can start from one shared init
    std::uint64_t rseed = run_seed.value_or(cfg.seed);
    std::mt19937_64 shuffle_rng(rseed ^ 0x5851f42d4c957f2dULL);
    std::mt19937_64 dropout_rng(rseed ^ 0x14057b7ef767814fULL);

    TrainMeta meta;
    meta.epochs_trained = hyper.epochs;
    Parameters best_params = params;
    double best_acc = -1.0;
    int best_epoch = -1;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        std::size_t pos = 0;
        while (pos < order.size()) {
            std::size_t batch_n = std::min<std::size_t>(static_cast<std::size_t>(hyper.batch_size),
                                                        order.size() - pos);
            Parameters grads = make_zero_like(params);
            for (std::size_t b = 0; b < batch_n; ++b) {
                std::size_t idx = order[pos + b];
                ForwardTrace trace = forward(cfg, params, train_ids[idx], Mode::Train, &dropout_rng);
                std::size_t label = static_cast<std::size_t>(train.examples[idx].label);
                double p_true = std::max(trace.probs.at(label), 1e-300);
                loss_sum += -std::log(p_true);
                Tensor d_logits = trace.probs;
                d_logits.at(label) -= 1.0;
                BackwardResult br = backward(cfg, params, trace, d_logits, true);
                Parameters& g = *br.d_params;
                auto acc_it = [&](Tensor& dst, const Tensor& src) {
                    for (std::size_t i = 0; i < dst.size(); ++i) dst.at(i) += src.at(i);
                };
                // accumulate into batch grads
                std::vector<const Tensor*> srcs;
                g.for_each_tensor([&](const std::string&, const Tensor& t) { srcs.push_back(&t); });
                std::size_t k = 0;
                grads.for_each_tensor([&](const std::string&, Tensor& t) { acc_it(t, *srcs[k++]); });
            }
            double inv_n = 1.0 / static_cast<double>(batch_n);
            ++step;
            double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            std::vector<Tensor*> gs, ms, vs;
            grads.for_each_tensor([&](const std::string&, Tensor& t) { gs.push_back(&t); });
            m.for_each_tensor([&](const std::string&, Tensor& t) { ms.push_back(&t); });
            v.for_each_tensor([&](const std::string&, Tensor& t) { vs.push_back(&t); });
            std::size_t ti = 0;
            params.for_each_tensor([&](const std::string&, Tensor& t) {
                Tensor& g = *gs[ti];
                Tensor& mm = *ms[ti];
                Tensor& vv = *vs[ti];
                for (std::size_t i = 0; i < t.size(); ++i) {
                    double gi = g.at(i) * inv_n;
                    mm.at(i) = beta1 * mm.at(i) + (1.0 - beta1) * gi;
                    vv.at(i) = beta2 * vv.at(i) + (1.0 - beta2) * gi * gi;
                    double mhat = mm.at(i) / bc1;
                    double vhat = vv.at(i) / bc2;
                    t.at(i) -= hyper.lr * mhat / (std::sqrt(vhat) + adam_eps);
                }
                ++ti;
            });
            pos += batch_n;
        }
        meta.train_loss_per_epoch.push_back(loss_sum / static_cast<double>(train.size()));
        double acc = dataset_accuracy(cfg, params, vocab, dev);
        meta.dev_accuracy_per_epoch.push_back(acc);
        // ties go to the later epoch, so training continues to refine the model
        // after dev accuracy saturates
        if (acc >= best_acc) {
            best_acc = acc;
            best_epoch = epoch;
            best_params = params;
        }
    }

    if (hyper.epochs == 0) {
        best_params = params;
        best_acc = dataset_accuracy(cfg, params, vocab, dev);
        best_epoch = -1;
    }
    meta.best_epoch = best_epoch;
    meta.dev_accuracy = best_acc;

    Checkpoint ckpt;
    ckpt.config = cfg;
    ckpt.params = std::move(best_params);
    ckpt.vocab = vocab;
    ckpt.meta = meta;
    return ckpt;
}

// ---- checkpoint persistence ----
// Layout: "ATRB" | u32 version | u64 header length | JSON header | f64 LE payloads.

namespace {

nlohmann::ordered_json config_to_json(const ModelConfig& cfg) {
    return nlohmann::ordered_json{
        {"n_layers", cfg.n_layers},   {"n_heads", cfg.n_heads},
        {"d_model", cfg.d_model},     {"d_ff", cfg.d_ff},
        {"vocab_size", cfg.vocab_size}, {"max_seq_len", cfg.max_seq_len},
        {"n_classes", cfg.n_classes}, {"dropout_prob", cfg.dropout_prob},
        {"seed", cfg.seed},           {"ln_eps", cfg.ln_eps},
    };
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.d_ff = j.at("d_ff").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.max_seq_len = j.at("max_seq_len").get<int>();
    cfg.n_classes = j.at("n_classes").get<int>();
    cfg.dropout_prob = j.at("dropout_prob").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.ln_eps = j.value("ln_eps", 1e-12);
    return cfg;
}

template <typename T>
void append_raw(std::string& buf, T value) {
    char tmp[sizeof(T)];
    std::memcpy(tmp, &value, sizeof(T));
    buf.append(tmp, sizeof(T));
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    nlohmann::ordered_json header;
    header["config"] = config_to_json(ckpt.config);
    header["metadata"] = {
        {"epochs_trained", ckpt.meta.epochs_trained},
        {"best_epoch", ckpt.meta.best_epoch},
        {"dev_accuracy", ckpt.meta.dev_accuracy},
        {"dev_accuracy_per_epoch", ckpt.meta.dev_accuracy_per_epoch},
        {"train_loss_per_epoch", ckpt.meta.train_loss_per_epoch},
    };
    header["vocab"] = nlohmann::ordered_json::parse(vocab_to_json(ckpt.vocab));
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    std::size_t offset = 0;
    ckpt.params.for_each_tensor([&](const std::string& name, const Tensor& t) {
        tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.size() * sizeof(double);
    });
    header["tensors"] = std::move(tensors);
    std::string header_str = header.dump();

    std::string buf;
    buf.reserve(16 + header_str.size() + offset);
    buf.append(kMagic, 4);
    append_raw<std::uint32_t>(buf, ckpt.version);
    append_raw<std::uint64_t>(buf, header_str.size());
    buf += header_str;
    ckpt.params.for_each_tensor([&](const std::string&, const Tensor& t) {
        buf.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(double));
    });
    atomic_write_file(path, buf);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::string buf = read_file(path);
    if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw_io("not a checkpoint file (bad magic): " + path);
    }
    std::uint32_t version = 0;
    std::memcpy(&version, buf.data() + 4, 4);
    if (version != Checkpoint::kVersion) {
        throw_io("unknown checkpoint version " + std::to_string(version) + " in " + path);
    }
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, buf.data() + 8, 8);
    if (16 + header_len > buf.size()) throw_io("truncated checkpoint file (header): " + path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.substr(16, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw_io("corrupt checkpoint header in " + path + ": " + e.what());
    }

    Checkpoint ckpt;
    ckpt.version = version;
    ckpt.config = config_from_json(header.at("config"));
    ckpt.config.validate();
    const auto& md = header.at("metadata");
    ckpt.meta.epochs_trained = md.at("epochs_trained").get<int>();
    ckpt.meta.best_epoch = md.at("best_epoch").get<int>();
    ckpt.meta.dev_accuracy = md.at("dev_accuracy").get<double>();
    ckpt.meta.dev_accuracy_per_epoch = md.at("dev_accuracy_per_epoch").get<std::vector<double>>();
    ckpt.meta.train_loss_per_epoch = md.at("train_loss_per_epoch").get<std::vector<double>>();
    ckpt.vocab = vocab_from_json(header.at("vocab").dump());
    if (ckpt.vocab.size() != ckpt.config.vocab_size) {
        throw_io("checkpoint vocabulary size does not match embedded config: " + path);
    }

    Parameters expect = init_params(ckpt.config);  // gives the expected shapes
    std::vector<std::pair<std::string, std::vector<std::size_t>>> expected_tensors;
    expect.for_each_tensor([&](const std::string& name, const Tensor& t) {
        expected_tensors.emplace_back(name, t.shape());
    });
    const auto& tensors = header.at("tensors");
    if (tensors.size() != expected_tensors.size()) {
        throw_io("checkpoint tensor table size mismatch in " + path);
    }
    std::size_t payload_base = 16 + header_len;
    std::size_t k = 0;
    ckpt.params = std::move(expect);
    ckpt.params.for_each_tensor([&](const std::string& name, Tensor& t) {
        const auto& entry = tensors.at(k);
        if (entry.at("name").get<std::string>() != name) {
            throw_io("checkpoint tensor order mismatch at '" + name + "' in " + path);
        }
        auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        if (shape != t.shape()) {
            throw_io("checkpoint shape mismatch for '" + name + "' in " + path);
        }
        std::size_t offset = payload_base + entry.at("offset").get<std::size_t>();
        std::size_t bytes = t.size() * sizeof(double);
        if (offset + bytes > buf.size()) throw_io("truncated checkpoint file (payload): " + path);
        std::memcpy(t.data().data(), buf.data() + offset, bytes);
        if (!t.all_finite()) throw_io("checkpoint contains non-finite values in '" + name + "': " + path);
        ++k;
    });
    return ckpt;
}

std::string config_to_json_string(const ModelConfig& cfg) { return config_to_json(cfg).dump(2); }

ModelConfig config_from_json_string(const std::string& text) {
    return config_from_json(nlohmann::json::parse(text));
}

}  // namespace attrib
