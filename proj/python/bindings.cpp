#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <map>
#include <string>
#include <vector>

#include "nlicheck/compliance.hpp"
#include "nlicheck/corpus.hpp"
#include "nlicheck/data.hpp"
#include "nlicheck/encoding.hpp"
#include "nlicheck/ops.hpp"
#include "nlicheck/trainer.hpp"

namespace py = pybind11;
using namespace nli;

namespace {

// checkpoint plus its vocabulary, ready for inference
struct LoadedPredictor {
    Model<float> model;
    Vocabulary vocab;
    std::string model_id;

    static LoadedPredictor load(const std::string& checkpoint,
                                const std::string& vocab_path) {
        LoadedPredictor p;
        p.vocab = Vocabulary::load(vocab_path.empty() ? checkpoint + ".vocab"
                                                      : vocab_path);
        LoadedCheckpoint lc = load_checkpoint(checkpoint, p.vocab.hash());
        p.model = std::move(lc.model);
        p.model_id = lc.model_id;
        return p;
    }

    std::map<std::string, double> predict(const std::string& premise,
                                          const std::string& hypothesis) {
        NliExample ex;
        ex.premise_tokens = tokenize(premise);
        ex.hypothesis_tokens = tokenize(hypothesis);
        EncodedPair pair = encode_example(ex, vocab, model.config.max_len);
        const std::array<float, 3> p = model.predict(pair);
        std::map<std::string, double> out;
        for (std::size_t i = 0; i < 3; ++i)
            out[class_order()[i]] = static_cast<double>(p[i]);
        return out;
    }
};

std::vector<double> softmax_list(const std::vector<double>& logits) {
    Tensor<double> t({1, logits.size()});
    for (std::size_t i = 0; i < logits.size(); ++i) t.at(0, i) = logits[i];
    Tensor<double> s = softmax(t);
    return std::vector<double>(s.data.begin(), s.data.end());
}

}  // namespace

PYBIND11_MODULE(_nlicheck, m) {
    m.doc() = "natural-language-inference privacy policy checker (C++ core)";

    m.def("tokenize", &tokenize, py::arg("text"),
          "lowercase whitespace/punctuation tokenizer");
    m.def("extract_text", &extract_text, py::arg("html"),
          "plain text from an HTML page");
    m.def("softmax", &softmax_list, py::arg("logits"),
          "numerically stable softmax of one logit row");
    m.def(
        "verdict",
        [](const std::array<double, 3>& probs, double threshold) {
            return verdict_name(verdict(probs, threshold));
        },
        py::arg("probs"), py::arg("threshold") = 0.5,
        "compliance verdict for [contradiction, neutral, entailment] probabilities");
    m.def(
        "class_order", [] { return class_order(); },
        "output class names in prediction order");

    py::class_<Sentence>(m, "Sentence")
        .def_readonly("index", &Sentence::index)
        .def_readonly("text", &Sentence::text)
        .def_readonly("offset", &Sentence::offset)
        .def("__repr__", [](const Sentence& s) {
            return "Sentence(" + std::to_string(s.index) + ", '" + s.text + "')";
        });
    m.def("segment_sentences", &segment_sentences, py::arg("text"),
          "abbreviation-aware sentence splitter with source offsets");

    py::class_<Vocabulary>(m, "Vocabulary")
        .def_static("load", &Vocabulary::load, py::arg("path"))
        .def("size", &Vocabulary::size)
        .def("lookup", &Vocabulary::lookup, py::arg("token"))
        .def("contains", &Vocabulary::contains, py::arg("token"))
        .def("hash", &Vocabulary::hash)
        .def("__len__", &Vocabulary::size)
        .def("__contains__", &Vocabulary::contains);

    py::class_<LoadedPredictor>(m, "Predictor")
        .def_static("load", &LoadedPredictor::load, py::arg("checkpoint"),
                    py::arg("vocab") = std::string(),
                    "load a trained checkpoint and its vocabulary")
        .def("predict", &LoadedPredictor::predict, py::arg("premise"),
             py::arg("hypothesis"),
             "class probabilities for one premise/hypothesis pair")
        .def_readonly("model_id", &LoadedPredictor::model_id);
}
