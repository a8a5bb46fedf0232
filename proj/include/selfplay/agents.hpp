#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "selfplay/dialogue_state.hpp"
#include "selfplay/nn.hpp"
#include "selfplay/rng.hpp"
#include "selfplay/tensor.hpp"

namespace selfplay {

/// Token inventory with reserved ids 0..2 for <unk>, <bos>, <eos>.
class Vocab {
 public:
  static constexpr std::size_t kUnk = 0;
  static constexpr std::size_t kBos = 1;
  static constexpr std::size_t kEos = 2;

  Vocab();
  explicit Vocab(const std::vector<std::string>& tokens);

  std::size_t add(const std::string& token);
  std::size_t id(const std::string& token) const;
  std::optional<std::size_t> find(const std::string& token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<std::size_t> encode(const Tokens& tokens) const;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> index_;
};

/// Act tokens for every (domain, intent, slot) of the ontology plus the
/// general greet/bye tokens.
Vocab build_act_vocab(const Ontology& ontology);
/// Informable domain-slot pairs, as "domain-slot".
Vocab build_slot_vocab(const Ontology& ontology);
/// Informable values plus dontcare and none.
Vocab build_value_vocab(const Ontology& ontology);
/// Ontology values, their surface forms and placeholders, plus `extra` words.
Vocab build_word_vocab(const Ontology& ontology, const std::vector<Tokens>& extra);

struct ModelConfig {
  std::size_t embed = 64;
  std::size_t hidden = 64;
  std::size_t max_act_len = 12;
  std::size_t max_utt_len = 40;
  std::size_t max_slots = 10;
  double init_scale = 0.1;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Bi-directional sentence encoder; each direction has hidden/2 units.
struct EncoderParams {
  ParamId embedding = 0;
  nn::LstmParams forward;
  nn::LstmParams backward;
};

/// Autoregressive decoder with additive attention fed as input and an output
/// layer over [h; attention context].
struct DecoderParams {
  ParamId embedding = 0;
  nn::LstmParams cell;
  nn::AttentionParams attention;
  nn::Linear output;
};

struct DstParams {
  ParamId slot_embedding = 0;
  nn::LstmParams cell;
  nn::AttentionParams attention;
  nn::Linear slot_head;
  nn::Linear value_head;
};

struct DsParams {
  EncoderParams encoder;
  DstParams dst;
  DecoderParams policy;
  DecoderParams nlg;
};

struct UsParams {
  EncoderParams encoder;
  DecoderParams policy;
  DecoderParams nlg;
};

/// Both agents and the context encoder they share, over one ParamStore.
/// Parameter names carry the prefixes "ds.", "us." and "ctx.".
class JointModel {
 public:
  JointModel(KnowledgeBase kb, Vocab words, ModelConfig config, std::uint64_t seed);

  const KnowledgeBase& kb() const { return kb_; }
  const Ontology& ontology() const { return kb_.ontology; }
  const ModelConfig& config() const { return config_; }
  const Vocab& words() const { return words_; }
  const Vocab& acts() const { return acts_; }
  const Vocab& slots() const { return slots_; }
  const Vocab& values() const { return values_; }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  const DsParams& ds() const { return ds_; }
  const UsParams& us() const { return us_; }
  const nn::LstmParams& context() const { return context_; }

  /// Writes `<path>.json` (config and vocabulary) and `<path>.bin` (weights).
  void save(const std::string& path) const;
  /// Throws ContractError when the vocabulary or shapes disagree with the files.
  static JointModel load(const std::string& path, const KnowledgeBase& kb);

  /// Counts DST decoder invocations; used to check oracle-mode contracts.
  mutable std::size_t dst_calls = 0;

 private:
  KnowledgeBase kb_;
  ModelConfig config_;
  Vocab words_, acts_, slots_, values_;
  ParamStore params_;
  DsParams ds_;
  UsParams us_;
  nn::LstmParams context_;
};

/// Selects parameters by section: "ds", "us", "ctx", or "ds.dst".
bool in_section(const Param& p, std::string_view section);

/// Context-encoder output on one side: hidden and cell values.
struct ContextSide {
  std::vector<double> h;
  std::vector<double> c;
};

struct ContextState {
  ContextSide ds;
  ContextSide us;
  static ContextState zeros(std::size_t hidden);
};

enum class DecodeMode { kGreedy, kSample, kForced };
enum class BeliefMode { kPredicted, kOracle };

std::string_view to_string(BeliefMode mode);
BeliefMode parse_belief_mode(std::string_view s);

struct EncodedUtterance {
  Tensor states;   // [n, hidden], rows concat(forward_j, backward_j)
  Tensor summary;  // concat(forward_last, backward_first)
};

/// Encodes `<bos> tokens <eos>` with one agent's encoder.
EncodedUtterance encode_utterance(Tape& tape, const JointModel& m, const EncoderParams& p, const Tokens& tokens);

/// One step of the shared context LSTM over the sentence embedding, starting
/// from the other side's context.
nn::LstmState encode_context(Tape& tape, const JointModel& m, Tensor sentence_embedding,
                             const nn::LstmState& other_side);

struct DecodeControl {
  DecodeMode mode = DecodeMode::kGreedy;
  /// Target ids (ending with <eos>) in forced mode.
  const std::vector<std::size_t>* forced = nullptr;
  Rng* rng = nullptr;
  std::size_t max_len = 12;
};

struct DecodeResult {
  std::vector<std::size_t> ids;   // emitted ids, ending with <eos>
  std::vector<Tensor> nll;        // -log p per emitted id
  std::vector<double> logprobs;   // log p per emitted id
  std::vector<Tensor> memory;     // per id: concat(hidden, embedding(id))
  nn::LstmState final_state;
  bool truncated = false;
};

struct DstResult {
  std::vector<SlotValue> pairs;
  std::vector<std::size_t> slot_ids;   // ending with <eos>
  std::vector<std::size_t> value_ids;  // one per non-<eos> slot
  std::vector<Tensor> nll;             // slot and value terms
};

/// Slot stream and value stream decoded from one decoder, greedy or forced.
DstResult dst_decode(Tape& tape, const JointModel& m, const EncodedUtterance& enc, const nn::LstmState& init,
                     const std::vector<SlotValue>* forced);

/// Ids of a DST target sequence; throws ContractError for keys or values
/// outside the vocabularies.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> dst_target_ids(const JointModel& m,
                                                                             const std::vector<SlotValue>& pairs);

/// Policy decoder over act tokens: initial state `init`, attention over
/// `source`, constant `features` appended to every input.
DecodeResult policy_decode(Tape& tape, const JointModel& m, const DecoderParams& p, const nn::LstmState& init,
                           const EncodedUtterance& source, Tensor features, const DecodeControl& control);

/// Word decoder attending over the policy memory.
DecodeResult nlg_decode(Tape& tape, const JointModel& m, const DecoderParams& p, const DecodeResult& policy,
                        const DecodeControl& control);

/// Act token ids to a DialogueAct, dropping reserved ids and duplicates.
DialogueAct act_from_ids(const JointModel& m, std::span<const std::size_t> ids);
/// Act ids ending with <eos>; throws ContractError for unknown tokens.
std::vector<std::size_t> act_ids(const JointModel& m, const DialogueAct& act);
Tokens words_from_ids(const JointModel& m, std::span<const std::size_t> ids);

/// DS policy features: DB one-hot followed by the summary belief.
std::vector<double> ds_features(const JointModel& m, const MatchResult& match, const BeliefState& belief);

/// Result of the DS belief tracker on one utterance.
struct DstStepResult {
  BeliefState belief;
  std::vector<SlotValue> predictions;
  std::size_t skipped = 0;
};

DstStepResult dst_step(const JointModel& m, const Tokens& user_utterance, const BeliefState& prior,
                       const ContextSide& prev_context, BeliefMode mode, const BeliefState* oracle = nullptr);

/// Domain the DS queries: the domain of its latest prediction, else `fallback`.
std::string ds_active_domain(const std::vector<SlotValue>& predictions, const std::string& fallback);

struct DsTurnOutput {
  DialogueAct act;
  std::vector<std::size_t> act_ids;
  Tokens utterance;
  Tokens utterance_delex;
  std::vector<double> act_logprobs;
  ContextState context;
  BeliefState belief;
  MatchResult match;
  std::string domain;
  std::vector<SlotValue> dst_output;
  TurnDiagnostics diagnostics;
};

/// Encode -> DST -> query -> context -> policy -> NLG -> lexicalise.
DsTurnOutput ds_turn(const JointModel& m, const ContextState& context, const Tokens& user_utterance,
                     const BeliefState& belief, const std::string& prev_domain, DecodeMode mode, std::uint64_t seed,
                     BeliefMode belief_mode = BeliefMode::kPredicted, const BeliefState* oracle = nullptr);

struct UsTurnOutput {
  DialogueAct act;
  std::vector<std::size_t> act_ids;
  Tokens utterance;
  Tokens utterance_delex;
  std::vector<double> act_logprobs;
  ContextState context;
  GoalState goal_state;
  std::map<SlotKey, std::string> informed;
  TurnDiagnostics diagnostics;
};

/// Encode -> context -> policy -> NLG -> lexicalise from the goal; the goal
/// state is updated from the emitted act.
UsTurnOutput us_turn(const JointModel& m, const ContextState& context, const Tokens& system_utterance,
                     const UserGoal& goal, const GoalState& goal_state, DecodeMode mode, std::uint64_t seed);

/// Advances only the user-side context by listening to a system utterance;
/// used when the user turns come from a corpus.
ContextState listen_user(const JointModel& m, const ContextState& context, const Tokens& system_utterance);

/// Everything needed to replay one turn with teacher forcing.
struct ReplayTurn {
  Tokens user_utterance;    // lexicalised, as heard by the DS
  Tokens system_utterance;  // lexicalised, as heard by the US next turn
  std::vector<std::size_t> user_act_ids;
  std::vector<std::size_t> system_act_ids;
  std::vector<std::size_t> user_word_ids;    // delexicalised target, ending with <eos>
  std::vector<std::size_t> system_word_ids;  // delexicalised target, ending with <eos>
  std::vector<SlotValue> dst_targets;
  BeliefState belief;
  MatchResult match;
  GoalState goal_state;
};

struct ReplayOptions {
  bool dst = true;
  bool ds_policy = true;
  bool ds_nlg = true;
  bool us_policy = true;
  bool us_nlg = true;
};

struct ReplayTerms {
  Tensor l_dst, l_pol_ds, l_nlg_ds, l_pol_us, l_nlg_us;
  /// -log p of every act token, per turn.
  std::vector<std::vector<Tensor>> ds_act_nll;
  std::vector<std::vector<Tensor>> us_act_nll;
  std::size_t dst_tokens = 0, ds_act_tokens = 0, ds_word_tokens = 0, us_act_tokens = 0, us_word_tokens = 0;
};

/// Teacher-forced pass over a whole dialogue on one tape, with the context
/// chain unrolled across turns.
ReplayTerms replay_dialogue(Tape& tape, const JointModel& m, std::span<const ReplayTurn> turns,
                            const ReplayOptions& options = {});

}  // namespace selfplay
