#pragma once

#include <optional>
#include <string>
#include <vector>

#include "attrib/data.hpp"
#include "attrib/model.hpp"
#include "attrib/tensor.hpp"

namespace attrib {

enum class Method { GS, GI, LRP, LAT };

std::string method_name(Method m);
std::optional<Method> method_from_name(const std::string& name);

enum class LrpRule {
    AlphaBeta,  // positive/negative split with alpha - beta == 1
    ZRule,      // vanilla signed-denominator rule
};

struct AttributionConfig {
    Method method = Method::GS;
    bool target_probability = false;  // default: class logit
    double lrp_alpha = 1.0;
    double lrp_beta = 0.0;
    double lrp_epsilon = 1e-9;        // sign-preserving stabilizer
    LrpRule lrp_rule = LrpRule::AlphaBeta;

    void validate() const;
};

struct RelevanceMap {
    Method method = Method::GS;
    std::vector<int> token_ids;
    std::vector<std::string> tokens;       // surface forms, "[CLS]" first
    Tensor dims;                           // [T, d_model]; empty for LAT
    std::vector<double> token_scores;      // length T
    int target_class = 0;
    std::uint64_t model_fingerprint = 0;
};

// ---- relevance redistribution primitives ----

// Splits relevance r over contributions c and adds the shares into out.
// Shares are renormalized so they always sum to r exactly; when every
// contribution vanishes the mass is spread uniformly.
void redistribute(const double* contribs, std::size_t n, double r, const AttributionConfig& cfg,
                  double* out);

// One LRP step through y = x * w (+ bias, which receives no relevance):
// contributions z_ij = x_i w_ij. x is [m], w is [m,n], relevance_out is [n].
Tensor lrp_linear(const Tensor& x, const Tensor& w, const Tensor& relevance_out,
                  const AttributionConfig& cfg);

// Taylor-rule step through a differentiable block with Jacobian jac [m,n]
// evaluated at x [n] (zero baseline): contributions jac[j,i] * x[i].
Tensor lrp_taylor(const Tensor& jac, const Tensor& x, const Tensor& relevance_out,
                  const AttributionConfig& cfg);

// Analytic Jacobian of one attention head's output w.r.t. the layer input,
// flattened: [T*head_dim, T*d_model]. Matches numeric_jacobian of the same map.
Tensor attention_head_jacobian(const ModelConfig& cfg, const LayerParams& lp, const LayerTrace& lt,
                               int head);

// ---- the four attribution methods ----

RelevanceMap attribute_gs(const ModelConfig& cfg, const Parameters& params, const ForwardTrace& trace,
                          int target_class, const AttributionConfig& acfg);
RelevanceMap attribute_gi(const ModelConfig& cfg, const Parameters& params, const ForwardTrace& trace,
                          int target_class, const AttributionConfig& acfg);
RelevanceMap attribute_lrp(const ModelConfig& cfg, const Parameters& params, const ForwardTrace& trace,
                           int target_class, const AttributionConfig& acfg);
RelevanceMap attribute_lat(const ForwardTrace& trace);

RelevanceMap attribute(const ModelConfig& cfg, const Parameters& params, const ForwardTrace& trace,
                       int target_class, const AttributionConfig& acfg);

// One map per sentence, in dataset order. Target class is the model's
// prediction unless override_class is set. Per-sentence failures are
// rethrown with the sentence index.
std::vector<RelevanceMap> attribute_dataset(const ModelConfig& cfg, const Parameters& params,
                                            const Vocabulary& vocab, const Dataset& dataset,
                                            const AttributionConfig& acfg,
                                            std::optional<int> override_class = std::nullopt);

// JSON line: {"method":..,"class":..,"tokens":[..],"scores":[..],"dims":[[..]]}
// floats with 17 significant digits.
std::string relevance_map_to_json_line(const RelevanceMap& map, bool include_dims);
RelevanceMap relevance_map_from_json_line(const std::string& line);

}  // namespace attrib
