// Python bindings for the core library.
#include <pybind11/functional.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <json.hpp>

#include "unlearn/checkpoint.hpp"
#include "unlearn/config.hpp"
#include "unlearn/corpus.hpp"
#include "unlearn/engine.hpp"
#include "unlearn/error.hpp"
#include "unlearn/metrics.hpp"
#include "unlearn/model.hpp"
#include "unlearn/report.hpp"
#include "unlearn/rundir.hpp"

namespace py = pybind11;
using namespace unlearn;

namespace {

using Tokens = std::vector<TokenId>;

// Reports cross the boundary as the same JSON the run directories hold.
py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

py::list history_of(const std::vector<EpochReport>& history) {
  py::list out;
  for (const auto& r : history) out.append(to_python(to_json(r)));
  return out;
}

struct PyRunResult {
  ModelState model;
  py::list history;
  std::string termination;
  bool converged;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Contrastive unlearning of memorized sequences in a small causal transformer";

  py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<UndefinedMetricError>(m, "UndefinedMetricError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<TrainingFailure>(m, "TrainingFailure", PyExc_RuntimeError);

  py::class_<TokenSequence>(m, "TokenSequence")
      .def(py::init([](std::string id, Tokens prefix, Tokens suffix) {
             return TokenSequence{std::move(id), std::move(prefix), std::move(suffix)};
           }),
           py::arg("id"), py::arg("prefix"), py::arg("suffix"))
      .def_readwrite("id", &TokenSequence::id)
      .def_readwrite("prefix", &TokenSequence::prefix)
      .def_readwrite("suffix", &TokenSequence::suffix)
      .def_property_readonly("tokens", [](const TokenSequence& x) { return full_sequence(x); })
      .def("__len__", &TokenSequence::length)
      .def(py::self == py::self)
      .def("__repr__", [](const TokenSequence& x) {
        return "<TokenSequence " + x.id + " |" + std::to_string(x.prefix.size()) + "+" +
               std::to_string(x.suffix.size()) + "|>";
      });

  py::class_<CorpusParams>(m, "CorpusParams")
      .def(py::init<>())
      .def_readwrite("seed", &CorpusParams::seed)
      .def_readwrite("n_samples", &CorpusParams::n_samples)
      .def_readwrite("n_secrets", &CorpusParams::n_secrets)
      .def_readwrite("vocab_size", &CorpusParams::vocab_size)
      .def_readwrite("prefix_len", &CorpusParams::prefix_len)
      .def_readwrite("suffix_len", &CorpusParams::suffix_len);

  py::class_<Corpus>(m, "Corpus")
      .def_readonly("vocab_size", &Corpus::vocab_size)
      .def_readonly("prefix_len", &Corpus::prefix_len)
      .def_readonly("suffix_len", &Corpus::suffix_len)
      .def_readonly("samples", &Corpus::samples)
      .def_readonly("forget_ids", &Corpus::forget_ids)
      .def("forget_samples", &Corpus::forget_samples)
      .def("retain_samples", &Corpus::retain_samples)
      .def("is_forget", &Corpus::is_forget)
      .def("__len__", [](const Corpus& c) { return c.samples.size(); })
      .def(py::self == py::self);

  m.def("synthesize_corpus", &synthesize_corpus, py::arg("params") = CorpusParams{});
  m.def("synthesize_heldout", &synthesize_heldout, py::arg("params"), py::arg("n_heldout"));
  m.def("save_corpus", &save_corpus, py::arg("corpus"), py::arg("path"));
  m.def("load_corpus", &load_corpus, py::arg("path"), py::arg("allow_empty_forget") = false);
  m.def(
      "render",
      [](int vocab_size, const Tokens& tokens) { return Vocabulary::for_grammar(vocab_size).render(tokens); },
      py::arg("vocab_size"), py::arg("tokens"), "Surface form of a token list under the grammar vocabulary.");

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("n_layers", &ModelConfig::n_layers)
      .def_readwrite("n_heads", &ModelConfig::n_heads)
      .def_readwrite("d_model", &ModelConfig::d_model)
      .def_readwrite("d_ff", &ModelConfig::d_ff)
      .def_readwrite("context_len", &ModelConfig::context_len)
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("seed", &ModelConfig::seed)
      .def("validate", &ModelConfig::validate)
      .def("parameter_count", [](const ModelConfig& c) { return parameter_count(c); })
      .def(py::self == py::self);

  py::class_<ModelState>(m, "ModelState")
      .def_readonly("config", &ModelState::config)
      .def_readonly("step", &ModelState::step)
      .def_property_readonly("n_params", [](const ModelState& s) { return s.params.size(); })
      .def("parameters", [](const ModelState& s) { return s.params; }, "Copy of the flat parameter vector.")
      .def(py::self == py::self);

  m.def("init_model", &init_model, py::arg("config"));
  m.def("save_checkpoint", &save_checkpoint, py::arg("state"), py::arg("path"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  m.def(
      "generate",
      [](const ModelState& s, const Tokens& prefix, std::size_t n_new) { return generate(s, std::span(prefix), n_new); },
      py::arg("state"), py::arg("prefix"), py::arg("n_new"), py::call_guard<py::gil_scoped_release>());
  m.def(
      "nll", [](const ModelState& s, const Tokens& tokens) { return nll(s, std::span(tokens)); }, py::arg("state"),
      py::arg("tokens"), "Summed negative log-likelihood of tokens[1:] given their prefixes.");

  m.def(
      "overlap_n",
      [](const Tokens& a, const Tokens& b, std::size_t n) { return overlap_n(a, b, n); }, py::arg("a"), py::arg("b"),
      py::arg("n"));
  m.def(
      "bleu", [](const Tokens& c, const Tokens& r) { return bleu(c, r); }, py::arg("candidate"),
      py::arg("reference"));
  m.def(
      "entropy", [](const std::vector<double>& p) { return entropy(p); }, py::arg("distribution"));
  m.def("el_n", &el_n, py::arg("state"), py::arg("x"), py::arg("n") = 10, py::call_guard<py::gil_scoped_release>());
  m.def("ma", &ma, py::arg("state"), py::arg("x"));
  m.def(
      "perplexity", [](const ModelState& s, const std::vector<TokenSequence>& xs) { return perplexity(s, xs); },
      py::arg("state"), py::arg("samples"), py::call_guard<py::gil_scoped_release>());
  m.def(
      "generation_entropy",
      [](const ModelState& s, const std::vector<Tokens>& prefixes, std::size_t n_new) {
        return generation_entropy(s, prefixes, n_new);
      },
      py::arg("state"), py::arg("prefixes"), py::arg("n_new"), py::call_guard<py::gil_scoped_release>());

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init<>())
      .def_readwrite("corpus", &ExperimentConfig::corpus)
      .def_readwrite("heldout_samples", &ExperimentConfig::heldout_samples)
      .def_readwrite("seeds", &ExperimentConfig::seeds)
      .def_property(
          "model", [](const ExperimentConfig& c) { return c.pretrain.model; },
          [](ExperimentConfig& c, const ModelConfig& mc) { c.pretrain.model = mc; })
      .def("render", &render_config)
      .def("validate", &ExperimentConfig::validate)
      .def(py::self == py::self);
  m.def("parse_config", &parse_config, py::arg("text"));
  m.def("load_config", &load_config, py::arg("path"));

  m.def(
      "pretrain",
      [](const ExperimentConfig& cfg, const Corpus& corpus, const std::function<void(const py::dict&)>& progress) {
        PretrainProgress hook;
        if (progress) {
          hook = [&](const PretrainEpoch& e) {
            py::gil_scoped_acquire gil;
            py::dict d;
            d["epoch"] = e.epoch;
            d["mean_nll"] = e.mean_nll;
            d["forget_ma"] = e.forget_ma;
            d["forget_el"] = e.forget_el;
            progress(d);
          };
        }
        py::gil_scoped_release release;
        return memorize_pretrain(cfg.pretrain, corpus, hook).model;
      },
      py::arg("config"), py::arg("corpus"), py::arg("progress") = nullptr,
      "Memorization pretraining from a fresh init; raises TrainingFailure at the epoch cap.");

  py::class_<PyRunResult>(m, "RunResult")
      .def_readonly("model", &PyRunResult::model)
      .def_readonly("history", &PyRunResult::history)
      .def_readonly("termination", &PyRunResult::termination)
      .def_readonly("converged", &PyRunResult::converged)
      .def_property_readonly("epochs", [](const PyRunResult& r) { return py::len(r.history) - 1; });

  m.def(
      "run_unlearning",
      [](const ExperimentConfig& cfg, const Corpus& corpus, const Corpus& heldout, const ModelState& pretrained,
         const std::string& mode, std::uint64_t seed, std::optional<double> alpha, std::optional<double> beta,
         std::optional<double> lr, std::optional<int> max_epochs) {
        RunConfig rc = cfg.run;
        rc.mode = parse_mode(mode);
        rc.seed = seed;
        if (alpha) rc.weights.alpha = *alpha;
        if (beta) rc.weights.beta = *beta;
        if (lr) rc.lr = *lr;
        if (max_epochs) rc.max_epochs = *max_epochs;
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run_unlearning(rc, corpus, heldout, pretrained);
        }
        return PyRunResult{std::move(r.model), history_of(r.history), to_string(r.termination), r.converged};
      },
      py::arg("config"), py::arg("corpus"), py::arg("heldout"), py::arg("pretrained"), py::arg("mode") = "icu",
      py::arg("seed") = 1, py::arg("alpha") = std::nullopt, py::arg("beta") = std::nullopt,
      py::arg("lr") = std::nullopt, py::arg("max_epochs") = std::nullopt);

  m.def(
      "read_history", [](const std::filesystem::path& dir) { return history_of(read_run_directory(dir).history); },
      py::arg("run_dir"));
  m.def(
      "reproduces",
      [](const std::filesystem::path& dir) {
        const auto rec = read_run_directory(dir);
        py::gil_scoped_release release;
        return same_metrics(reevaluate(rec), rec.history.back());
      },
      py::arg("run_dir"), "True when a fresh evaluation of final.ckpt matches the recorded last epoch.");
}
