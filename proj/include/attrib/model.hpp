#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "attrib/data.hpp"
#include "attrib/tensor.hpp"

namespace attrib {

struct ModelConfig {
    int n_layers = 2;
    int n_heads = 4;
    int d_model = 64;
    int d_ff = 256;
    int vocab_size = 0;     // set from the vocabulary before init
    int max_seq_len = 64;
    int n_classes = 2;
    double dropout_prob = 0.1;
    std::uint64_t seed = 1;
    double ln_eps = 1e-12;

    void validate() const;
    int head_dim() const { return d_model / n_heads; }
};

struct LayerParams {
    Tensor wq, wk, wv, wo;          // [d_model, d_model]
    Tensor bq, bk, bv, bo;          // [d_model]
    Tensor w1;                      // [d_model, d_ff]
    Tensor b1;                      // [d_ff]
    Tensor w2;                      // [d_ff, d_model]
    Tensor b2;                      // [d_model]
    Tensor ln1_gamma, ln1_beta;     // [d_model]
    Tensor ln2_gamma, ln2_beta;     // [d_model]
};

struct Parameters {
    Tensor tok_emb;                 // [vocab_size, d_model]
    Tensor pos_emb;                 // [max_seq_len, d_model]
    std::vector<LayerParams> layers;
    Tensor head_w;                  // [d_model, n_classes]
    Tensor head_b;                  // [n_classes]

    // Visits every tensor in a fixed order (serialization, fingerprint, Adam).
    template <typename Fn>
    void for_each_tensor(Fn&& fn) {
        fn("tok_emb", tok_emb);
        fn("pos_emb", pos_emb);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            std::string p = "layer" + std::to_string(l) + ".";
            auto& lp = layers[l];
            fn(p + "wq", lp.wq); fn(p + "bq", lp.bq);
            fn(p + "wk", lp.wk); fn(p + "bk", lp.bk);
            fn(p + "wv", lp.wv); fn(p + "bv", lp.bv);
            fn(p + "wo", lp.wo); fn(p + "bo", lp.bo);
            fn(p + "ln1_gamma", lp.ln1_gamma); fn(p + "ln1_beta", lp.ln1_beta);
            fn(p + "w1", lp.w1); fn(p + "b1", lp.b1);
            fn(p + "w2", lp.w2); fn(p + "b2", lp.b2);
            fn(p + "ln2_gamma", lp.ln2_gamma); fn(p + "ln2_beta", lp.ln2_beta);
        }
        fn("head_w", head_w);
        fn("head_b", head_b);
    }
    template <typename Fn>
    void for_each_tensor(Fn&& fn) const {
        const_cast<Parameters*>(this)->for_each_tensor(
            [&](const std::string& name, Tensor& t) { fn(name, static_cast<const Tensor&>(t)); });
    }

    std::uint64_t fingerprint() const;
};

enum class Mode { Train, Eval };

struct LayerTrace {
    Tensor x_in;                    // [T, d_model] sublayer input
    std::vector<Tensor> q, k, v;    // per head, [T, head_dim]
    std::vector<Tensor> attn;       // per head, [T, T], softmax rows
    Tensor heads_concat;            // [T, d_model]
    Tensor attn_proj;               // [T, d_model] after output projection (+ dropout in train)
    Tensor attn_drop_mask;          // [T, d_model], empty in eval
    Tensor res1;                    // x_in + attn_proj
    Tensor ln1_out;                 // [T, d_model]
    Tensor ffn_pre;                 // [T, d_ff] pre-activation
    Tensor ffn_act;                 // [T, d_ff] gelu output
    Tensor ffn_out;                 // [T, d_model] (+ dropout in train)
    Tensor ffn_drop_mask;           // empty in eval
    Tensor res2;                    // ln1_out + ffn_out
    Tensor ln2_out;                 // layer output
};

struct ForwardTrace {
    std::vector<int> token_ids;
    Mode mode = Mode::Eval;
    Tensor embedded;                // [T, d_model] token + position embeddings
    std::vector<LayerTrace> layers;
    Tensor pooled;                  // [d_model], final [CLS] row
    Tensor logits;                  // [n_classes]
    Tensor probs;                   // [n_classes]
    std::uint64_t params_fingerprint = 0;

    int seq_len() const { return static_cast<int>(token_ids.size()); }
};

struct TargetSelector {
    int class_id = 0;
    bool use_probability = false;   // default: class logit
};

struct TrainMeta {
    int epochs_trained = 0;
    int best_epoch = 0;             // -1 when epochs == 0
    double dev_accuracy = 0.0;
    std::vector<double> dev_accuracy_per_epoch;
    std::vector<double> train_loss_per_epoch;
};

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;
    std::uint32_t version = kVersion;
    ModelConfig config;
    Parameters params;
    Vocabulary vocab;
    TrainMeta meta;
};

struct Hyper {
    double lr = 3e-4;
    int batch_size = 16;
    int epochs = 10;
};

Parameters init_params(const ModelConfig& cfg);

ForwardTrace forward(const ModelConfig& cfg, const Parameters& params,
                     const std::vector<int>& token_ids, Mode mode,
                     std::mt19937_64* dropout_rng = nullptr);

struct ParamGrads {
    Parameters grads;   // same shapes as Parameters, zero-initialized
};

struct BackwardResult {
    Tensor d_embedded;                 // [T, d_model]
    std::optional<Parameters> d_params;
};

// Reverse pass from an upstream cotangent on the logits. Parameter gradients
// are computed only when want_param_grads is set.
BackwardResult backward(const ModelConfig& cfg, const Parameters& params, const ForwardTrace& trace,
                        const Tensor& d_logits, bool want_param_grads);

// Gradient of the selected scalar (class logit or class probability) w.r.t.
// the summed token+position embedding matrix. Rejects traces whose parameter
// fingerprint no longer matches.
Tensor input_gradient(const ModelConfig& cfg, const Parameters& params, const ForwardTrace& trace,
                      const TargetSelector& target);

int predict(const ModelConfig& cfg, const Parameters& params, const std::vector<int>& token_ids);

// run_seed, when set, drives training stochasticity (shuffling, dropout)
// independently of the cfg.seed weight initialization.
Checkpoint fit(const ModelConfig& cfg, const Vocabulary& vocab, const Dataset& train,
               const Dataset& dev, const Hyper& hyper,
               std::optional<std::uint64_t> run_seed = std::nullopt);

double dataset_accuracy(const ModelConfig& cfg, const Parameters& params, const Vocabulary& vocab,
                        const Dataset& data);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::string config_to_json_string(const ModelConfig& cfg);
ModelConfig config_from_json_string(const std::string& text);

}  // namespace attrib
