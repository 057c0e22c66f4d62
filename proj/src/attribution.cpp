#include "attrib/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include <json.hpp>

#include "attrib/util.hpp"

namespace attrib {

namespace {

constexpr double kDegenerateTotal = 1e-12;

void check_eval_trace(const Parameters& params, const ForwardTrace& trace, const char* who) {
    if (trace.mode != Mode::Eval) {
        throw_contract(std::string(who) + ": trace must come from an eval-mode forward");
    }
    if (trace.params_fingerprint != params.fingerprint()) {
        throw_contract(std::string(who) + ": stale trace, parameter fingerprint mismatch");
    }
}

std::vector<double> l2_rows(const Tensor& m) {
    std::vector<double> out(m.rows(), 0.0);
    for (std::size_t t = 0; t < m.rows(); ++t) {
        double acc = 0.0;
        const double* row = m.row(t);
        for (std::size_t j = 0; j < m.cols(); ++j) acc += row[j] * row[j];
        out[t] = std::sqrt(acc);
    }
    return out;
}

std::vector<double> abs_sum_rows(const Tensor& m) {
    std::vector<double> out(m.rows(), 0.0);
    for (std::size_t t = 0; t < m.rows(); ++t) {
        double acc = 0.0;
        const double* row = m.row(t);
        for (std::size_t j = 0; j < m.cols(); ++j) acc += std::fabs(row[j]);
        out[t] = acc;
    }
    return out;
}

int argmax_class(const Tensor& logits) {
    int best = 0;
    for (std::size_t c = 1; c < logits.size(); ++c) {
        if (logits.at(c) > logits.at(best)) best = static_cast<int>(c);
    }
    return best;
}

void check_finite_stage(const Tensor& t, int layer, const char* stage) {
    if (!t.all_finite()) {
        throw_numeric("lrp: non-finite relevance at layer " + std::to_string(layer) + " (" + stage + ")");
    }
}

}  // namespace

std::string method_name(Method m) {
    switch (m) {
        case Method::GS: return "gs";
        case Method::GI: return "gi";
        case Method::LRP: return "lrp";
        case Method::LAT: return "lat";
    }
    return "?";
}

std::optional<Method> method_from_name(const std::string& name) {
    if (name == "gs") return Method::GS;
    if (name == "gi") return Method::GI;
    if (name == "lrp") return Method::LRP;
    if (name == "lat") return Method::LAT;
    return std::nullopt;
}

void AttributionConfig::validate() const {
    if (lrp_rule == LrpRule::AlphaBeta && std::fabs(lrp_alpha - lrp_beta - 1.0) > 1e-12) {
        throw_contract("attribution config: lrp_alpha - lrp_beta must equal 1");
    }
    if (lrp_epsilon < 0.0) throw_contract("attribution config: lrp_epsilon must be >= 0");
}

void redistribute(const double* c, std::size_t n, double r, const AttributionConfig& cfg, double* out) {
    if (r == 0.0 || n == 0) return;
    double eps = cfg.lrp_epsilon;
    if (cfg.lrp_rule == LrpRule::ZRule) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += c[i];
        double denom = s + (s < 0.0 ? -eps : eps);
        double total = 0.0;
        if (denom != 0.0) {
            for (std::size_t i = 0; i < n; ++i) total += c[i] / denom;
        }
        if (std::fabs(total) <= kDegenerateTotal) {
            double share = r / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) out[i] += share;
            return;
        }
        double norm = r / (denom * total);
        for (std::size_t i = 0; i < n; ++i) out[i] += c[i] * norm;
        return;
    }
    // alpha-beta: split positive and negative parts, conserve exactly.
    double s_pos = 0.0, s_neg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (c[i] > 0.0) s_pos += c[i];
        else s_neg += c[i];
    }
    double denom_pos = s_pos + eps;
    double denom_neg = s_neg - eps;
    double a = (s_pos > 0.0 && denom_pos != 0.0) ? cfg.lrp_alpha / denom_pos : 0.0;
    double b = (s_neg < 0.0 && denom_neg != 0.0) ? cfg.lrp_beta / denom_neg : 0.0;
    double total = a * s_pos - b * s_neg;
    if (std::fabs(total) <= kDegenerateTotal) {
        double share = r / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) out[i] += share;
        return;
    }
    double scale = r / total;
    for (std::size_t i = 0; i < n; ++i) {
        double coeff = c[i] > 0.0 ? a * c[i] : -b * c[i];
        out[i] += coeff * scale;
    }
}

Tensor lrp_linear(const Tensor& x, const Tensor& w, const Tensor& relevance_out,
                  const AttributionConfig& cfg) {
    std::size_t m = x.size();
    std::size_t ncols = w.shape()[1];
    if (w.shape()[0] != m || relevance_out.size() != ncols) {
        throw_contract("lrp_linear: shape mismatch");
    }
    Tensor r_in({m});
    std::vector<double> contribs(m);
    for (std::size_t j = 0; j < ncols; ++j) {
        double r = relevance_out.at(j);
        if (r == 0.0) continue;
        for (std::size_t i = 0; i < m; ++i) contribs[i] = x.at(i) * w.at(i, j);
        redistribute(contribs.data(), m, r, cfg, r_in.data().data());
    }
    return r_in;
}

Tensor lrp_taylor(const Tensor& jac, const Tensor& x, const Tensor& relevance_out,
                  const AttributionConfig& cfg) {
    std::size_t m = jac.shape()[0], n = jac.shape()[1];
    if (x.size() != n || relevance_out.size() != m) throw_contract("lrp_taylor: shape mismatch");
    Tensor r_in({n});
    std::vector<double> contribs(n);
    for (std::size_t j = 0; j < m; ++j) {
        double r = relevance_out.at(j);
        if (r == 0.0) continue;
        const double* jrow = jac.row(j);
        for (std::size_t i = 0; i < n; ++i) contribs[i] = jrow[i] * x.at(i);
        redistribute(contribs.data(), n, r, cfg, r_in.data().data());
    }
    return r_in;
}

Tensor attention_head_jacobian(const ModelConfig& cfg, const LayerParams& lp, const LayerTrace& lt,
                               int head) {
    if (head < 0 || head >= cfg.n_heads) throw_contract("attention_head_jacobian: head out of range");
    std::size_t t_len = lt.x_in.rows();
    std::size_t d = static_cast<std::size_t>(cfg.d_model);
    std::size_t dh = static_cast<std::size_t>(cfg.head_dim());
    std::size_t off = static_cast<std::size_t>(head) * dh;
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const Tensor& a = lt.attn[static_cast<std::size_t>(head)];
    const Tensor& q = lt.q[static_cast<std::size_t>(head)];
    const Tensor& k = lt.k[static_cast<std::size_t>(head)];
    const Tensor& v = lt.v[static_cast<std::size_t>(head)];

    Tensor jac({t_len * dh, t_len * d});
    std::vector<double> kq(d);       // sum_k Q[t,k] * wk[e, off+k], per output row t
    std::vector<double> da(t_len), g(t_len), dq(dh);
    for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t e = 0; e < d; ++e) {
            double acc = 0.0;
            for (std::size_t kk = 0; kk < dh; ++kk) acc += q.at(t, kk) * lp.wk.at(e, off + kk);
            kq[e] = acc;
        }
        for (std::size_t dprime = 0; dprime < dh; ++dprime) {
            double* jrow = jac.row(t * dh + dprime);
            // dA over row t of the attention matrix
            double dot = 0.0;
            for (std::size_t s = 0; s < t_len; ++s) {
                da[s] = v.at(s, dprime);
                dot += da[s] * a.at(t, s);
            }
            for (std::size_t s = 0; s < t_len; ++s) g[s] = scale * a.at(t, s) * (da[s] - dot);
            // Q path: dQ[t,:] = g * K
            for (std::size_t kk = 0; kk < dh; ++kk) {
                double acc = 0.0;
                for (std::size_t s = 0; s < t_len; ++s) acc += g[s] * k.at(s, kk);
                dq[kk] = acc;
            }
            for (std::size_t e = 0; e < d; ++e) {
                double acc = 0.0;
                for (std::size_t kk = 0; kk < dh; ++kk) acc += dq[kk] * lp.wq.at(e, off + kk);
                jrow[t * d + e] += acc;
            }
            // K and V paths, spread over source positions s
            for (std::size_t s = 0; s < t_len; ++s) {
                double gv = g[s];
                double av = a.at(t, s);
                double* dst = jrow + s * d;
                for (std::size_t e = 0; e < d; ++e) {
                    dst[e] += gv * kq[e] + av * lp.wv.at(e, off + dprime);
                }
            }
        }
    }
    return jac;
}

RelevanceMap attribute_gs(const ModelConfig& cfg, const Parameters& params, const ForwardTrace& trace,
                          int target_class, const AttributionConfig& acfg) {
    check_eval_trace(params, trace, "attribute_gs");
    TargetSelector sel{target_class, acfg.target_probability};
    RelevanceMap map;
    map.method = Method::GS;
    map.token_ids = trace.token_ids;
    map.dims = input_gradient(cfg, params, trace, sel);
    map.token_scores = l2_rows(map.dims);
    map.target_class = target_class;
    map.model_fingerprint = trace.params_fingerprint;
    return map;
}

RelevanceMap attribute_gi(const ModelConfig& cfg, const Parameters& params, const ForwardTrace& trace,
                          int target_class, const AttributionConfig& acfg) {
    RelevanceMap map = attribute_gs(cfg, params, trace, target_class, acfg);
    map.method = Method::GI;
    for (std::size_t i = 0; i < map.dims.size(); ++i) map.dims.at(i) *= trace.embedded.at(i);
    map.token_scores = l2_rows(map.dims);
    return map;
}

RelevanceMap attribute_lrp(const ModelConfig& cfg, const Parameters& params, const ForwardTrace& trace,
                           int target_class, const AttributionConfig& acfg) {
    check_eval_trace(params, trace, "attribute_lrp");
    acfg.validate();
    std::size_t t_len = static_cast<std::size_t>(trace.seq_len());
    std::size_t d = static_cast<std::size_t>(cfg.d_model);
    std::size_t dh = static_cast<std::size_t>(cfg.head_dim());
    std::size_t n_classes = trace.logits.size();
    if (target_class < 0 || static_cast<std::size_t>(target_class) >= n_classes) {
        throw_contract("attribute_lrp: class id out of range");
    }
    std::size_t c = static_cast<std::size_t>(target_class);

    // Seed: the class-c output scalar on the class-c entry only.
    Tensor r_logits({n_classes});
    if (acfg.target_probability) {
        // One Taylor step through the softmax row for class c.
        Tensor jac_row({1, n_classes});
        Tensor sj = softmax_jacobian(trace.probs);
        for (std::size_t j = 0; j < n_classes; ++j) jac_row.at(0, j) = sj.at(c, j);
        Tensor seed({1});
        seed.at(0) = trace.probs.at(c);
        r_logits = lrp_taylor(jac_row, trace.logits, seed, acfg);
    } else {
        r_logits.at(c) = trace.logits.at(c);
    }

    Tensor r_pooled = lrp_linear(trace.pooled, params.head_w, r_logits, acfg);
    Tensor relevance({t_len, d});
    std::copy(r_pooled.data().begin(), r_pooled.data().end(), relevance.row(0));

    auto row_of = [&](const Tensor& m, std::size_t t, std::size_t width) {
        return Tensor({width}, std::vector<double>(m.row(t), m.row(t) + width));
    };

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const LayerParams& lp = params.layers[static_cast<std::size_t>(l)];
        const LayerTrace& lt = trace.layers[static_cast<std::size_t>(l)];

        // ln2: Taylor rule per row at res2
        Tensor r_res2({t_len, d});
        for (std::size_t t = 0; t < t_len; ++t) {
            Tensor x_row = row_of(lt.res2, t, d);
            Tensor jac = layernorm_jacobian(x_row, lp.ln2_gamma, cfg.ln_eps);
            Tensor r = lrp_taylor(jac, x_row, row_of(relevance, t, d), acfg);
            std::copy(r.data().begin(), r.data().end(), r_res2.row(t));
        }
        check_finite_stage(r_res2, l, "ln2");

        // residual: res2 = ln1_out + ffn_out, two-branch split per element
        Tensor r_ln1({t_len, d}), r_ffn_out({t_len, d});
        for (std::size_t i = 0; i < r_res2.size(); ++i) {
            double branches[2] = {lt.ln1_out.at(i), lt.ffn_out.at(i)};
            double shares[2] = {0.0, 0.0};
            redistribute(branches, 2, r_res2.at(i), acfg, shares);
            r_ln1.at(i) = shares[0];
            r_ffn_out.at(i) = shares[1];
        }

        // FFN: linear rule through w2, gelu pass-through, linear rule through w1
        for (std::size_t t = 0; t < t_len; ++t) {
            Tensor r_act = lrp_linear(row_of(lt.ffn_act, t, lt.ffn_act.cols()), lp.w2,
                                      row_of(r_ffn_out, t, d), acfg);
            Tensor r_from_ffn = lrp_linear(row_of(lt.ln1_out, t, d), lp.w1, r_act, acfg);
            double* dst = r_ln1.row(t);
            for (std::size_t j = 0; j < d; ++j) dst[j] += r_from_ffn.at(j);
        }
        check_finite_stage(r_ln1, l, "ffn");

        // ln1: Taylor rule per row at res1
        Tensor r_res1({t_len, d});
        for (std::size_t t = 0; t < t_len; ++t) {
            Tensor x_row = row_of(lt.res1, t, d);
            Tensor jac = layernorm_jacobian(x_row, lp.ln1_gamma, cfg.ln_eps);
            Tensor r = lrp_taylor(jac, x_row, row_of(r_ln1, t, d), acfg);
            std::copy(r.data().begin(), r.data().end(), r_res1.row(t));
        }
        check_finite_stage(r_res1, l, "ln1");

        // residual: res1 = x_in + attn_proj
        Tensor r_x_in({t_len, d}), r_attn_proj({t_len, d});
        for (std::size_t i = 0; i < r_res1.size(); ++i) {
            double branches[2] = {lt.x_in.at(i), lt.attn_proj.at(i)};
            double shares[2] = {0.0, 0.0};
            redistribute(branches, 2, r_res1.at(i), acfg, shares);
            r_x_in.at(i) = shares[0];
            r_attn_proj.at(i) = shares[1];
        }

        // output projection: linear rule through wo
        Tensor r_heads({t_len, d});
        for (std::size_t t = 0; t < t_len; ++t) {
            Tensor r = lrp_linear(row_of(lt.heads_concat, t, d), lp.wo, row_of(r_attn_proj, t, d), acfg);
            std::copy(r.data().begin(), r.data().end(), r_heads.row(t));
        }
        check_finite_stage(r_heads, l, "attn projection");

        // per-head attention block: Taylor rule with the analytic Jacobian
        Tensor x_flat({t_len * d}, lt.x_in.data());
        for (int h = 0; h < cfg.n_heads; ++h) {
            std::size_t off = static_cast<std::size_t>(h) * dh;
            Tensor r_head({t_len * dh});
            for (std::size_t t = 0; t < t_len; ++t) {
                for (std::size_t j = 0; j < dh; ++j) r_head.at(t * dh + j) = r_heads.at(t, off + j);
            }
            Tensor jac = attention_head_jacobian(cfg, lp, lt, h);
            Tensor r_from_head = lrp_taylor(jac, x_flat, r_head, acfg);
            for (std::size_t i = 0; i < r_from_head.size(); ++i) r_x_in.at(i) += r_from_head.at(i);
        }
        check_finite_stage(r_x_in, l, "attention");
        relevance = std::move(r_x_in);
    }

    RelevanceMap map;
    map.method = Method::LRP;
    map.token_ids = trace.token_ids;
    map.dims = std::move(relevance);
    map.token_scores = abs_sum_rows(map.dims);
    map.target_class = target_class;
    map.model_fingerprint = trace.params_fingerprint;
    return map;
}

RelevanceMap attribute_lat(const ForwardTrace& trace) {
    if (trace.layers.empty() || trace.layers.front().attn.empty()) {
        throw_input("attribute_lat: trace has no attention matrices");
    }
    std::size_t t_len = static_cast<std::size_t>(trace.seq_len());
    std::size_t n_heads = trace.layers.front().attn.size();
    std::vector<double> r(t_len, 0.0);
    r[0] = 1.0;  // unit mass on [CLS] above the top layer
    for (auto it = trace.layers.rbegin(); it != trace.layers.rend(); ++it) {
        std::vector<double> next(t_len, 0.0);
        for (std::size_t h = 0; h < n_heads; ++h) {
            const Tensor& a = it->attn[h];
            for (std::size_t i = 0; i < t_len; ++i) {
                if (r[i] == 0.0) continue;
                const double* arow = a.row(i);
                for (std::size_t j = 0; j < t_len; ++j) next[j] += r[i] * arow[j];
            }
        }
        double inv_h = 1.0 / static_cast<double>(n_heads);
        for (double& x : next) x *= inv_h;
        r = std::move(next);
    }
    RelevanceMap map;
    map.method = Method::LAT;
    map.token_ids = trace.token_ids;
    map.token_scores = std::move(r);
    map.target_class = argmax_class(trace.logits);
    map.model_fingerprint = trace.params_fingerprint;
    return map;
}

RelevanceMap attribute(const ModelConfig& cfg, const Parameters& params, const ForwardTrace& trace,
                       int target_class, const AttributionConfig& acfg) {
    switch (acfg.method) {
        case Method::GS: return attribute_gs(cfg, params, trace, target_class, acfg);
        case Method::GI: return attribute_gi(cfg, params, trace, target_class, acfg);
        case Method::LRP: return attribute_lrp(cfg, params, trace, target_class, acfg);
        case Method::LAT: return attribute_lat(trace);
    }
    throw_contract("attribute: unknown method");
}

std::vector<RelevanceMap> attribute_dataset(const ModelConfig& cfg, const Parameters& params,
                                            const Vocabulary& vocab, const Dataset& dataset,
                                            const AttributionConfig& acfg,
                                            std::optional<int> override_class) {
    std::vector<RelevanceMap> maps(dataset.size());
    parallel_for(dataset.size(), [&](std::size_t i) {
        try {
            std::vector<int> ids = encode(vocab, dataset.examples[i].text, cfg.max_seq_len);
            ForwardTrace trace = forward(cfg, params, ids, Mode::Eval);
            int target = override_class ? *override_class : argmax_class(trace.logits);
            RelevanceMap map = attribute(cfg, params, trace, target, acfg);
            map.tokens = decode_tokens(vocab, ids);
            maps[i] = std::move(map);
        } catch (const Error& e) {
            throw Error(e.kind(), "sentence " + std::to_string(i) + ": " + e.what());
        }
    });
    return maps;
}

std::string relevance_map_to_json_line(const RelevanceMap& map, bool include_dims) {
    std::ostringstream ss;
    ss << "{\"method\":\"" << method_name(map.method) << "\",\"class\":" << map.target_class
       << ",\"tokens\":[";
    for (std::size_t i = 0; i < map.tokens.size(); ++i) {
        if (i) ss << ",";
        ss << nlohmann::json(map.tokens[i]).dump();
    }
    ss << "],\"scores\":[";
    for (std::size_t i = 0; i < map.token_scores.size(); ++i) {
        if (i) ss << ",";
        ss << format_g17(map.token_scores[i]);
    }
    ss << "]";
    if (include_dims && !map.dims.empty()) {
        ss << ",\"dims\":[";
        for (std::size_t t = 0; t < map.dims.rows(); ++t) {
            if (t) ss << ",";
            ss << "[";
            for (std::size_t j = 0; j < map.dims.cols(); ++j) {
                if (j) ss << ",";
                ss << format_g17(map.dims.at(t, j));
            }
            ss << "]";
        }
        ss << "]";
    }
    ss << "}";
    return ss.str();
}

RelevanceMap relevance_map_from_json_line(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw_input(std::string("malformed relevance map line: ") + e.what());
    }
    RelevanceMap map;
    try {
        auto m = method_from_name(j.at("method").get<std::string>());
        if (!m) {
            throw_input("relevance map line: unknown method '" +
                        j.at("method").get<std::string>() + "'");
        }
        map.method = *m;
        map.target_class = j.at("class").get<int>();
        map.tokens = j.at("tokens").get<std::vector<std::string>>();
        map.token_scores = j.at("scores").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw_input(std::string("malformed relevance map line: ") + e.what());
    }
    if (map.tokens.size() != map.token_scores.size()) {
        throw_input("relevance map line: tokens/scores length mismatch");
    }
    if (j.contains("dims")) {
        auto rows = j.at("dims").get<std::vector<std::vector<double>>>();
        if (!rows.empty()) {
            std::vector<double> flat;
            flat.reserve(rows.size() * rows[0].size());
            for (const auto& r : rows) {
                if (r.size() != rows[0].size()) throw_input("relevance map line: ragged dims");
                flat.insert(flat.end(), r.begin(), r.end());
            }
            map.dims = Tensor({rows.size(), rows[0].size()}, std::move(flat));
        }
    }
    return map;
}

}  // namespace attrib
