#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "selfplay/agents.hpp"
#include "selfplay/corpus.hpp"
#include "selfplay/training.hpp"

namespace selfplay {

void to_json(nlohmann::json& j, const SplitSpec& s);
void from_json(const nlohmann::json& j, SplitSpec& s);

/// One experiment: corpus generation, split, model and training settings.
/// `train.rl.reward` holds the turn-level reward of the joint target.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t dialogues = 200;
  GeneratorConfig generator;
  SplitSpec split;
  ModelConfig model;
  TrainConfig train;
  RewardConfig dialogue_reward = RewardConfig::dialogue_level();
  /// Freshly sampled goals for self-play evaluation.
  std::size_t eval_goals = 100;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Missing keys keep their defaults; `train.seed` follows `seed`.
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Throws DataError when the file is missing or not valid JSON.
nlohmann::json read_json_file(const std::string& path);
ExperimentConfig load_experiment(const std::string& path);

/// Sets a dotted key ("train.rl.lr") from a string. The value is parsed as
/// JSON when possible and kept as a string otherwise. Throws ValidationError
/// when an intermediate key is not an object.
void apply_override(nlohmann::json& j, const std::string& key, const std::string& value);

/// 64-bit FNV-1a of the compact dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

/// Every user and system utterance of the corpus.
std::vector<Tokens> corpus_utterances(const std::vector<AnnotatedDialogue>& corpus);

/// Model whose word vocabulary covers the ontology and the corpus.
JointModel make_model(const KnowledgeBase& kb, const std::vector<AnnotatedDialogue>& corpus,
                      const ModelConfig& config, std::uint64_t seed);

/// Reward for an RL run: the configured turn reward (with the user side
/// zeroed for the DS target) or the dialogue-level reward.
RewardConfig rl_reward(const ExperimentConfig& c, RlTarget target, RewardMode mode);

/// `n` goals from `sample_goal` under derived seeds, optionally keeping only
/// goals over exactly `domains`.
std::vector<UserGoal> fresh_goals(const KnowledgeBase& kb, std::size_t n, std::uint64_t seed,
                                  const GeneratorConfig& cfg = {},
                                  const std::optional<std::set<std::string>>& domains = std::nullopt);

}  // namespace selfplay
