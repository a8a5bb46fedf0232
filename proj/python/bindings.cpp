#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "selfplay/evaluation.hpp"
#include "selfplay/experiment.hpp"
#include "selfplay/training.hpp"

PYBIND11_MAKE_OPAQUE(std::vector<selfplay::AnnotatedDialogue>)

namespace py = pybind11;
using namespace selfplay;
using nlohmann::json;

namespace {

using Dialogues = std::vector<AnnotatedDialogue>;

json parse_or_empty(const std::string& text) { return text.empty() ? json::object() : json::parse(text); }

template <typename T>
T config_from(const std::string& text) {
  T c;
  from_json(parse_or_empty(text), c);
  return c;
}

std::vector<Tokens> tokenize(const std::vector<std::string>& lines) {
  std::vector<Tokens> out;
  for (const auto& l : lines) out.push_back(split_tokens(l));
  return out;
}

std::vector<UserGoal> goals_from(const json& j) {
  std::vector<UserGoal> goals;
  for (const auto& g : j) goals.push_back(g.get<UserGoal>());
  return goals;
}

std::string logs_json(const std::vector<DialogueLog>& logs) { return json(logs).dump(); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings over the self-play dialogue library; structured values cross as JSON text.";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);

  py::class_<KnowledgeBase>(m, "KnowledgeBase")
      .def_static("load", &load_knowledge_base, py::arg("path"))
      .def("domains", [](const KnowledgeBase& kb) { return kb.ontology.domains(); })
      .def("entity_count", [](const KnowledgeBase& kb) { return kb.entities.size(); });

  py::class_<Dialogues>(m, "Corpus")
      .def("__len__", [](const Dialogues& d) { return d.size(); })
      .def("to_json", [](const Dialogues& d) { return json(d).dump(); })
      .def("goals_json", [](const Dialogues& d) { return json(goals_of(d)).dump(); })
      .def("save", [](const Dialogues& d, const std::string& path) { save_corpus(d, path); }, py::arg("path"));

  m.def(
      "generate_corpus",
      [](const KnowledgeBase& kb, std::size_t n, std::uint64_t seed, const std::string& generator) {
        return generate_toy_corpus(kb, n, seed, config_from<GeneratorConfig>(generator));
      },
      py::arg("kb"), py::arg("n"), py::arg("seed"), py::arg("generator") = "");
  m.def(
      "load_corpus", [](const std::string& path, const KnowledgeBase& kb) { return load_corpus(path, kb.ontology).dialogues; },
      py::arg("path"), py::arg("kb"));
  m.def(
      "make_splits",
      [](const Dialogues& corpus, const std::string& spec, std::uint64_t seed) {
        const Splits s = make_splits(corpus, config_from<SplitSpec>(spec), seed);
        return std::map<std::string, Dialogues>{{"source", s.source},
                                                {"adaptation", s.adaptation},
                                                {"dev", s.dev},
                                                {"test", s.test},
                                                {"source_dev", s.source_dev}};
      },
      py::arg("corpus"), py::arg("spec") = "", py::arg("seed") = 1);
  m.def(
      "fresh_goals",
      [](const KnowledgeBase& kb, std::size_t n, std::uint64_t seed) { return json(fresh_goals(kb, n, seed)).dump(); },
      py::arg("kb"), py::arg("n"), py::arg("seed"));

  py::class_<JointModel>(m, "JointModel")
      .def(py::init([](const KnowledgeBase& kb, const Dialogues& corpus, const std::string& config, std::uint64_t seed) {
             return make_model(kb, corpus, config_from<ModelConfig>(config), seed);
           }),
           py::arg("kb"), py::arg("corpus"), py::arg("config") = "", py::arg("seed") = 1)
      .def_static("load", &JointModel::load, py::arg("path"), py::arg("kb"))
      .def("save", &JointModel::save, py::arg("path"))
      .def("parameter_count",
           [](const JointModel& jm) {
             std::size_t n = 0;
             for (ParamId id = 0; id < jm.params().size(); ++id) n += jm.params()[id].value.size();
             return n;
           })
      .def("config_json", [](const JointModel& jm) { return json(jm.config()).dump(); });

  m.def(
      "sl_train",
      [](JointModel& model, const Dialogues& train, const Dialogues& dev, const std::string& config) {
        py::gil_scoped_release release;
        return to_json(sl_train(model, train, dev, config_from<TrainConfig>(config))).dump();
      },
      py::arg("model"), py::arg("train"), py::arg("dev"), py::arg("config") = "");
  m.def(
      "rl_train",
      [](JointModel& model, const std::string& train_goals, const std::string& dev_goals, const std::string& config) {
        const auto train = goals_from(json::parse(train_goals));
        const auto dev = goals_from(json::parse(dev_goals));
        py::gil_scoped_release release;
        return to_json(rl_train(model, train, dev, config_from<TrainConfig>(config))).dump();
      },
      py::arg("model"), py::arg("train_goals"), py::arg("dev_goals"), py::arg("config") = "");
  m.def(
      "run_selfplay",
      [](const JointModel& model, const std::string& goals, std::uint64_t seed, const std::string& reward,
         std::size_t max_turns) {
        RolloutOptions o;
        o.mode = DecodeMode::kGreedy;
        o.max_turns = max_turns;
        if (!reward.empty()) o.reward = config_from<RewardConfig>(reward);
        const auto g = goals_from(json::parse(goals));
        py::gil_scoped_release release;
        return logs_json(run_selfplay(model, g, seed, o));
      },
      py::arg("model"), py::arg("goals"), py::arg("seed") = 0, py::arg("reward") = "", py::arg("max_turns") = 20);
  m.def(
      "corpus_eval",
      [](const JointModel& model, const Dialogues& test, const std::string& belief) {
        return to_json(corpus_eval(model, test, parse_belief_mode(belief))).dump();
      },
      py::arg("model"), py::arg("test"), py::arg("belief") = "predicted");
  m.def(
      "selfplay_metrics",
      [](const std::string& logs, const KnowledgeBase& kb) {
        const auto l = json::parse(logs).get<std::vector<DialogueLog>>();
        return to_json(selfplay_metrics(l, kb)).dump();
      },
      py::arg("logs"), py::arg("kb"));
  m.def(
      "analyze",
      [](const std::string& logs, const KnowledgeBase& kb) {
        const auto l = json::parse(logs).get<std::vector<DialogueLog>>();
        return json{{"errors", to_json(error_analysis(l, kb))},
                    {"exploration", to_json(exploration_stats(l, kb.ontology))}}
            .dump();
      },
      py::arg("logs"), py::arg("kb"));

  m.def(
      "bleu",
      [](const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
        return bleu(tokenize(hyps), tokenize(refs));
      },
      py::arg("hypotheses"), py::arg("references"));
  m.def("combined", &combined, py::arg("inform"), py::arg("success"), py::arg("bleu"));
  m.def("return_schedule", &return_schedule, py::arg("reward"), py::arg("length"), py::arg("gamma"));
  m.def(
      "spearman", [](const std::vector<double>& a, const std::vector<double>& b) { return spearman(a, b); },
      py::arg("a"), py::arg("b"));
  m.def(
      "validate_reward_config", [](const std::string& text) { return json(config_from<RewardConfig>(text)).dump(); },
      py::arg("config"));
  m.def(
      "experiment_config", [](const std::string& text) { return json(config_from<ExperimentConfig>(text)).dump(); },
      py::arg("config") = "");
  m.def("config_hash", [](const std::string& text) { return config_hash(json::parse(text)); }, py::arg("config"));
}
