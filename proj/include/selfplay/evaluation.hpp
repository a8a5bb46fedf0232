#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "selfplay/agents.hpp"
#include "selfplay/corpus.hpp"
#include "selfplay/dialogue_state.hpp"
#include "selfplay/rewards.hpp"

namespace selfplay {

struct MetricsReport {
  double inform = 0.0;
  double success = 0.0;
  double bleu = 0.0;
  double combined = 0.0;  // percent scale
  std::size_t dialogues = 0;
  std::size_t informed = 0;
  std::size_t successful = 0;
  std::size_t bleu_pairs = 0;
};

/// A rate with its counts.
struct Rate {
  std::size_t numerator = 0;
  std::size_t denominator = 0;
  double value() const { return denominator == 0 ? 0.0 : static_cast<double>(numerator) / denominator; }
};

struct ErrorReport {
  Rate miss_ent;   // DS: dialogues with a due provision never followed by an offer
  Rate wrong_ans;  // DS: user-requested attributes not answered with the true value
  Rate rep_att;    // US: inform/request tokens repeating earlier ones
  Rate miss_ans;   // US: system requests never answered
};

struct ExplorationReport {
  std::size_t unique_states = 0;
  std::size_t turns = 0;
  double ds_avg_actions_per_state = 0.0;
  double us_avg_actions_per_state = 0.0;
};

/// Dialogue-level inform and success for one log, judged on its final goal.
DialogueOutcome compute_outcome(const DialogueLog& log, const KnowledgeBase& kb);

/// Mean inform and success rates.
std::pair<double, double> task_metrics(std::span<const DialogueLog> logs, const KnowledgeBase& kb);

/// Corpus BLEU-4 with uniform weights, brevity penalty and add-one smoothing
/// of higher-order precisions that have no matches. Throws ContractError on
/// a length mismatch.
double bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references);

/// 0.5 * (inform + success) + bleu, all on the percent scale.
double combined(double inform, double success, double bleu);

/// The DS converses with the fixed corpus user turns (gold history).
MetricsReport corpus_eval(const JointModel& model, std::span<const AnnotatedDialogue> test, BeliefMode mode);

/// Per-dialogue records the DS produced during corpus_eval.
std::vector<DialogueLog> corpus_eval_logs(const JointModel& model, std::span<const AnnotatedDialogue> test,
                                          BeliefMode mode, std::vector<Tokens>* hypotheses = nullptr,
                                          std::vector<Tokens>* references = nullptr);

/// Self-play metrics (BLEU is not defined without references and stays 0).
MetricsReport selfplay_metrics(std::span<const DialogueLog> logs, const KnowledgeBase& kb);

/// Goal in force at every turn, applying the logged relaxations in order.
std::vector<UserGoal> goals_per_turn(const DialogueLog& log);

/// Reward contexts for every turn with history filled in.
std::vector<TurnContext> turn_contexts(const DialogueLog& log, const KnowledgeBase& kb);

ErrorReport error_analysis(std::span<const DialogueLog> logs, const KnowledgeBase& kb);

/// States keyed by the summary-belief bits of each turn; actions by the
/// rendered act without the end marker.
ExplorationReport exploration_stats(std::span<const DialogueLog> logs, const Ontology& ontology);

/// Annotated corpus dialogue as a log, with offers and answers resolved
/// against the database.
DialogueLog annotated_to_log(const AnnotatedDialogue& d, const KnowledgeBase& kb);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

nlohmann::json to_json(const MetricsReport& r);
nlohmann::json to_json(const ErrorReport& r);
nlohmann::json to_json(const ExplorationReport& r);

/// Per-dialogue outcome rows: id,turns,informed,success.
std::string outcomes_csv(std::span<const DialogueLog> logs);

}  // namespace selfplay
