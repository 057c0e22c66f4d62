// Python bindings for the core operations: training, prediction,
// attribution, and the evaluation protocols.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "attrib/attribution.hpp"
#include "attrib/data.hpp"
#include "attrib/evaluation.hpp"
#include "attrib/model.hpp"
#include "attrib/toy_corpus.hpp"
#include "attrib/util.hpp"

namespace py = pybind11;
using namespace attrib;

namespace {

Dataset dataset_from_pairs(const std::vector<std::pair<int, std::string>>& rows) {
    Dataset d;
    for (const auto& [label, text] : rows) d.examples.push_back({text, label});
    return d;
}

AttributionConfig acfg_from(const std::string& method, const std::string& target) {
    AttributionConfig acfg;
    auto m = method_from_name(method);
    if (!m) throw_input("unknown method '" + method + "'");
    acfg.method = *m;
    if (target == "prob") {
        acfg.target_probability = true;
    } else if (target != "logit") {
        throw_input("unknown target '" + target + "'");
    }
    return acfg;
}

// Thin checkpoint wrapper; holds everything needed for inference.
struct Model {
    Checkpoint ckpt;

    int predict_text(const std::string& text) const {
        return predict(ckpt.config, ckpt.params, encode(ckpt.vocab, text, ckpt.config.max_seq_len));
    }

    py::dict attribute_text(const std::string& text, const std::string& method,
                            const std::string& target, std::optional<int> target_class) const {
        AttributionConfig acfg = acfg_from(method, target);
        auto ids = encode(ckpt.vocab, text, ckpt.config.max_seq_len);
        ForwardTrace trace = forward(ckpt.config, ckpt.params, ids, Mode::Eval);
        int cls = target_class ? *target_class : predict(ckpt.config, ckpt.params, ids);
        RelevanceMap map = attribute(ckpt.config, ckpt.params, trace, cls, acfg);
        map.tokens = decode_tokens(ckpt.vocab, ids);
        py::dict out;
        out["tokens"] = map.tokens;
        out["scores"] = map.token_scores;
        out["target_class"] = map.target_class;
        out["method"] = method_name(map.method);
        if (map.dims.size() > 0) {
            std::vector<std::vector<double>> dims;
            for (std::size_t t = 0; t < map.dims.rows(); ++t) {
                dims.emplace_back(map.dims.data().begin() + t * map.dims.cols(),
                                  map.dims.data().begin() + (t + 1) * map.dims.cols());
            }
            out["dims"] = dims;
        }
        return out;
    }

    py::dict ablation(const std::vector<std::pair<int, std::string>>& rows,
                      const std::string& method, int kmax, int random_repeats,
                      std::uint64_t seed) const {
        Dataset data = dataset_from_pairs(rows);
        AttributionConfig acfg = acfg_from(method, "logit");
        AblationCurve curve =
            deletion_curve(ckpt.config, ckpt.params, ckpt.vocab, data, acfg, kmax);
        AblationCurve rnd = random_deletion_curve(ckpt.config, ckpt.params, ckpt.vocab, data, kmax,
                                                  random_repeats, seed);
        py::dict out;
        out["accuracy"] = curve.accuracy;
        out["random_accuracy"] = rnd.accuracy;
        out["subset_size"] = curve.subset_size;
        return out;
    }

    double accuracy(const std::vector<std::pair<int, std::string>>& rows) const {
        return dataset_accuracy(ckpt.config, ckpt.params, ckpt.vocab, dataset_from_pairs(rows));
    }
};

Model train_model(const std::vector<std::pair<int, std::string>>& train_rows,
                  const std::vector<std::pair<int, std::string>>& dev_rows, int n_layers,
                  int n_heads, int d_model, int d_ff, int max_seq_len, double dropout,
                  std::uint64_t seed, double lr, int batch_size, int epochs, int min_freq) {
    Dataset train = dataset_from_pairs(train_rows);
    Dataset dev = dataset_from_pairs(dev_rows);
    Vocabulary vocab = build_vocab(train, min_freq);
    ModelConfig cfg;
    cfg.n_layers = n_layers;
    cfg.n_heads = n_heads;
    cfg.d_model = d_model;
    cfg.d_ff = d_ff;
    cfg.max_seq_len = max_seq_len;
    cfg.dropout_prob = dropout;
    cfg.seed = seed;
    cfg.vocab_size = vocab.size();
    Model m;
    m.ckpt = fit(cfg, vocab, train, dev, Hyper{lr, batch_size, epochs});
    return m;
}

}  // namespace

PYBIND11_MODULE(_attrib, mod) {
    mod.doc() = "transformer sentiment attribution core";

    py::register_exception<Error>(mod, "AttribError");

    mod.def("tokenize", &tokenize, py::arg("text"));
    mod.def("pearson", &pearson, py::arg("x"), py::arg("y"));
    mod.def(
        "toy_corpus",
        [](int n, std::uint64_t seed) {
            Dataset d = make_cue_corpus({n, seed, 5, 11, "toy"});
            std::vector<std::pair<int, std::string>> rows;
            for (const auto& ex : d.examples) rows.emplace_back(ex.label, ex.text);
            return rows;
        },
        py::arg("n"), py::arg("seed") = 7);

    py::class_<Model>(mod, "Model")
        .def_static("load",
                    [](const std::string& path) {
                        Model m;
                        m.ckpt = load_checkpoint(path);
                        return m;
                    },
                    py::arg("path"))
        .def("save", [](const Model& m, const std::string& path) { save_checkpoint(m.ckpt, path); },
             py::arg("path"))
        .def("predict", &Model::predict_text, py::arg("text"))
        .def("attribute", &Model::attribute_text, py::arg("text"), py::arg("method") = "gs",
             py::arg("target") = "logit", py::arg("target_class") = std::nullopt)
        .def("deletion_curve", &Model::ablation, py::arg("data"), py::arg("method") = "gi",
             py::arg("kmax") = 5, py::arg("random_repeats") = 10, py::arg("seed") = 1)
        .def("accuracy", &Model::accuracy, py::arg("data"))
        .def_property_readonly("dev_accuracy",
                               [](const Model& m) { return m.ckpt.meta.dev_accuracy; })
        .def_property_readonly("fingerprint",
                               [](const Model& m) { return hex64(m.ckpt.params.fingerprint()); });

    mod.def("train", &train_model, py::arg("train"), py::arg("dev"), py::arg("n_layers") = 2,
            py::arg("n_heads") = 4, py::arg("d_model") = 64, py::arg("d_ff") = 256,
            py::arg("max_seq_len") = 64, py::arg("dropout") = 0.1, py::arg("seed") = 1,
            py::arg("lr") = 1e-3, py::arg("batch_size") = 16, py::arg("epochs") = 10,
            py::arg("min_freq") = 1);
}
