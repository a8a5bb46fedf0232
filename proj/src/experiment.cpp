#include "selfplay/experiment.hpp"

#include <cstdio>
#include <fstream>

#include "selfplay/rng.hpp"

namespace selfplay {

using nlohmann::json;

namespace {

constexpr std::uint64_t kGoalSalt = 999;

}  // namespace

void to_json(json& j, const SplitSpec& s) {
  j = json{{"mode", std::string(to_string(s.mode))},
           {"target", s.target},
           {"n_adapt", s.n_adapt},
           {"dev_fraction", s.dev_fraction},
           {"test_fraction", s.test_fraction}};
}

void from_json(const json& j, SplitSpec& s) {
  if (j.contains("mode")) s.mode = parse_split_mode(j.at("mode").get<std::string>());
  s.target = j.value("target", s.target);
  s.n_adapt = j.value("n_adapt", s.n_adapt);
  s.dev_fraction = j.value("dev_fraction", s.dev_fraction);
  s.test_fraction = j.value("test_fraction", s.test_fraction);
  if (s.dev_fraction < 0.0 || s.test_fraction < 0.0 || s.dev_fraction + s.test_fraction >= 1.0)
    throw ValidationError("split fractions must be non-negative and sum below 1");
}

void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"seed", c.seed},
           {"dialogues", c.dialogues},
           {"generator", c.generator},
           {"split", c.split},
           {"model", c.model},
           {"train", c.train},
           {"dialogue_reward", c.dialogue_reward},
           {"eval_goals", c.eval_goals}};
}

void from_json(const json& j, ExperimentConfig& c) {
  c.seed = j.value("seed", c.seed);
  c.dialogues = j.value("dialogues", c.dialogues);
  if (j.contains("generator")) from_json(j.at("generator"), c.generator);
  if (j.contains("split")) from_json(j.at("split"), c.split);
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("train")) from_json(j.at("train"), c.train);
  if (j.contains("dialogue_reward")) from_json(j.at("dialogue_reward"), c.dialogue_reward);
  c.eval_goals = j.value("eval_goals", c.eval_goals);
  c.train.seed = c.seed;
  if (c.dialogues == 0) throw ValidationError("dialogues must be positive");
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

ExperimentConfig load_experiment(const std::string& path) {
  try {
    return read_json_file(path).get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

void apply_override(json& j, const std::string& key, const std::string& value) {
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError("bad override key '" + key + "'");
    if (!node->is_object()) throw ValidationError("override '" + key + "' descends into a non-object");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json parsed = json::parse(value, nullptr, false);
  *node = parsed.is_discarded() ? json(value) : parsed;
}

std::string config_hash(const json& j) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<Tokens> corpus_utterances(const std::vector<AnnotatedDialogue>& corpus) {
  std::vector<Tokens> out;
  for (const auto& d : corpus)
    for (const auto& t : d.turns) {
      out.push_back(t.user_utterance);
      out.push_back(t.system_utterance);
    }
  return out;
}

JointModel make_model(const KnowledgeBase& kb, const std::vector<AnnotatedDialogue>& corpus,
                      const ModelConfig& config, std::uint64_t seed) {
  return JointModel(kb, build_word_vocab(kb.ontology, corpus_utterances(corpus)), config, seed);
}

RewardConfig rl_reward(const ExperimentConfig& c, RlTarget target, RewardMode mode) {
  if (mode == RewardMode::kDialogue) return c.dialogue_reward;
  RewardConfig r = c.train.rl.reward;
  r.mode = RewardMode::kTurn;
  if (target == RlTarget::kDs) r.us = {{0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}};
  return r;
}

std::vector<UserGoal> fresh_goals(const KnowledgeBase& kb, std::size_t n, std::uint64_t seed,
                                  const GeneratorConfig& cfg, const std::optional<std::set<std::string>>& domains) {
  std::vector<UserGoal> out;
  const std::size_t limit = 1000 * (n + 1);
  for (std::size_t i = 0; out.size() < n; ++i) {
    if (i >= limit) throw DataError("could not sample enough goals over the requested domains");
    UserGoal g = sample_goal(kb, derive_seed(seed, i, kGoalSalt), cfg);
    if (domains) {
      const auto names = g.domain_names();
      if (std::set<std::string>(names.begin(), names.end()) != *domains) continue;
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace selfplay
