#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "selfplay/agents.hpp"
#include "selfplay/corpus.hpp"
#include "selfplay/evaluation.hpp"
#include "selfplay/rewards.hpp"

namespace selfplay {

enum class RlTarget { kDs, kJoint };

std::string_view to_string(RlTarget t);
RlTarget parse_rl_target(std::string_view s);

struct SlConfig {
  double lr = 0.001;
  std::size_t batch = 100;
  std::size_t patience = 3;
  std::size_t max_epochs = 30;
  /// Dev goals used for the self-play stopping criterion; 0 means all.
  std::size_t dev_goals = 0;
};

struct RlConfig {
  double lr = 0.0001;
  std::size_t batch = 10;
  std::size_t epochs = 10;
  double gamma = 1.0;
  RlTarget target = RlTarget::kJoint;
  RewardConfig reward = RewardConfig::rl_joint();
};

struct EwcConfig {
  double lambda = 100.0;
  /// Dialogues per gradient sample of the Fisher estimate.
  std::size_t fisher_batch = 1;
};

struct TrainConfig {
  SlConfig sl;
  RlConfig rl;
  EwcConfig ewc;
  std::size_t max_turns = 20;
  std::uint64_t seed = 1;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep their defaults; throws ValidationError on bad values.
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Per act token i (1-based) of an act of length n: gamma^(n - i) * r.
std::vector<double> return_schedule(double reward, std::size_t length, double gamma);

/// Summed teacher-forced cross-entropies of one batch.
struct LossBatch {
  double l_dst = 0.0;
  double l_pol_ds = 0.0;
  double l_nlg_ds = 0.0;
  double l_pol_us = 0.0;
  double l_nlg_us = 0.0;
  std::size_t dialogues = 0;

  double ds() const { return l_dst + l_pol_ds + l_nlg_ds; }
  double us() const { return l_pol_us + l_nlg_us; }
  double total() const { return ds() + us(); }
};

nlohmann::json to_json(const LossBatch& b);

/// Goal state the user saw at every turn: relaxed constraints are switched
/// back on, then each user act switches its slots off.
std::vector<GoalState> corpus_goal_states(const AnnotatedDialogue& d, const Ontology& ontology);

/// DST targets of one turn: the user's informed pairs with belief values,
/// ordered by domain-slot index.
std::vector<SlotValue> dst_targets(const AnnotatedTurn& turn, const Ontology& ontology);

/// Teacher-forcing inputs for every turn. Throws DataError naming the
/// dialogue when an act or belief cannot be encoded.
std::vector<ReplayTurn> prepare_replay(const JointModel& m, const AnnotatedDialogue& d);

/// Losses of a batch, and optionally their gradients (divided by the batch size).
LossBatch sl_losses(const JointModel& m, std::span<const std::vector<ReplayTurn>> batch, Gradients* grads = nullptr);
LossBatch sl_losses(const JointModel& m, std::span<const AnnotatedDialogue> batch, Gradients* grads = nullptr);

/// Diagonal Fisher with its anchor parameters, one array per parameter.
struct FisherDiag {
  std::vector<std::vector<double>> fisher;
  std::vector<std::vector<double>> anchor;
};

/// Mean over source batches of squared SL-loss gradients; anchor = current values.
FisherDiag fisher_estimate(const JointModel& m, std::span<const AnnotatedDialogue> corpus, const EwcConfig& cfg);

/// (lambda / 2) * sum F (theta - anchor)^2. Throws ContractError on shape mismatch.
double ewc_penalty(const ParamStore& params, const FisherDiag& f, double lambda);
/// Adds lambda * F * (theta - anchor) to `grads`.
void ewc_gradient(const ParamStore& params, const FisherDiag& f, double lambda, Gradients& grads);

struct SlEpoch {
  std::size_t epoch = 0;
  LossBatch loss;       // summed over the epoch
  double dev_success = 0.0;
};

struct SlReport {
  std::vector<SlEpoch> epochs;
  std::size_t best_epoch = 0;
  double best_dev_success = 0.0;
  bool stopped_early = false;
};

nlohmann::json to_json(const SlReport& r);

struct SlOptions {
  /// Adds an EWC term to every step when set.
  const FisherDiag* ewc = nullptr;
  double ewc_lambda = 0.0;
  /// Called after every epoch.
  std::function<void(const SlEpoch&)> on_epoch;
};

/// Adam on the joint loss with dev self-play success as the stopping
/// criterion; the parameters of the best epoch are restored. Throws
/// DataError on an empty corpus.
SlReport sl_train(JointModel& m, std::span<const AnnotatedDialogue> train, std::span<const AnnotatedDialogue> dev,
                  const TrainConfig& cfg, const SlOptions& options = {});

struct RolloutOptions {
  DecodeMode mode = DecodeMode::kSample;
  std::size_t max_turns = 20;
  RewardConfig reward = RewardConfig::rl_joint();
};

/// A self-play dialogue plus the exact decoder inputs needed to replay it.
struct Episode {
  DialogueLog log;
  std::vector<ReplayTurn> replay;
};

/// US speaks first; ends on the user's bye or after max_turns.
Episode rollout(const JointModel& m, const UserGoal& goal, std::uint64_t seed, const RolloutOptions& options);

/// Greedy self-play over the goals; logs carry turn rewards.
std::vector<DialogueLog> run_selfplay(const JointModel& m, std::span<const UserGoal> goals, std::uint64_t seed,
                                      const RolloutOptions& options);

/// Success rate of greedy self-play.
double selfplay_success(const JointModel& m, std::span<const UserGoal> goals, std::size_t max_turns);

/// Sum over turns and updated agents of R_i * nll_i for a batch, with
/// gradients divided by the batch size. Throws ContractError when a log
/// lacks logprobs for its acts.
double reinforce_gradients(const JointModel& m, std::span<const Episode> batch, const RlConfig& cfg,
                           Gradients& grads);

/// One Adam step on the REINFORCE loss. RL-DS updates the DS (except its
/// tracker) and the context encoder; RL-Joint also updates the US. A zero
/// gradient leaves the parameters unchanged.
void reinforce_update(JointModel& m, std::span<const Episode> batch, const RlConfig& cfg);

bool rl_selects(const Param& p, RlTarget target);

struct RlEpoch {
  std::size_t epoch = 0;
  double mean_turn_reward = 0.0;  // ds + us reward per rollout turn
  double mean_ds_reward = 0.0;
  double mean_us_reward = 0.0;
  double train_success = 0.0;
  double dev_success = 0.0;
};

struct RlReport {
  std::vector<RlEpoch> epochs;
  /// Interaction logs of every training rollout (for exploration statistics).
  std::vector<DialogueLog> interactions;
};

nlohmann::json to_json(const RlReport& r);
std::string rl_epochs_csv(const RlReport& r);

struct RlOptions {
  bool keep_interactions = false;
  std::function<void(const RlEpoch&)> on_epoch;
};

/// REINFORCE over sampled self-play on the training goals; dev success is
/// measured greedily after every epoch.
RlReport rl_train(JointModel& m, std::span<const UserGoal> train_goals, std::span<const UserGoal> dev_goals,
                  const TrainConfig& cfg, const RlOptions& options = {});

enum class FinetuneMode { kNaive, kEwc };

std::string_view to_string(FinetuneMode m);
FinetuneMode parse_finetune_mode(std::string_view s);

struct FinetuneReport {
  SlReport sl;
  std::optional<RlReport> rl;
};

/// SL on the adaptation data (plus the EWC penalty in ewc mode), then RL on
/// its goals when `with_rl`. Throws ContractError in ewc mode without Fisher.
FinetuneReport finetune(JointModel& m, std::span<const AnnotatedDialogue> adaptation,
                        std::span<const AnnotatedDialogue> dev, FinetuneMode mode, const FisherDiag* fisher,
                        bool with_rl, const TrainConfig& cfg);

std::vector<UserGoal> goals_of(std::span<const AnnotatedDialogue> dialogues);

/// Parameter values, for snapshots and restores.
std::vector<std::vector<double>> snapshot(const ParamStore& params);
void restore(ParamStore& params, const std::vector<std::vector<double>>& values);

}  // namespace selfplay
