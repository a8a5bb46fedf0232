#include "selfplay/agents.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "selfplay/world.hpp"

namespace selfplay {

using nlohmann::json;

// ---------------------------------------------------------------- vocab

Vocab::Vocab() {
  add("<unk>");
  add("<bos>");
  add("<eos>");
}

Vocab::Vocab(const std::vector<std::string>& tokens) : Vocab() {
  for (const auto& t : tokens) add(t);
}

std::size_t Vocab::add(const std::string& token) {
  auto [it, inserted] = index_.try_emplace(token, tokens_.size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::size_t Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::optional<std::size_t> Vocab::find(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::size_t> Vocab::encode(const Tokens& tokens) const {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

Vocab build_act_vocab(const Ontology& ontology) {
  Vocab v;
  v.add(ActToken{std::string(kGeneralDomain), Intent::kGreet, std::string(kNoSlot)}.str());
  v.add(ActToken{std::string(kGeneralDomain), Intent::kBye, std::string(kNoSlot)}.str());
  for (const auto& domain : ontology.domains()) {
    for (Intent intent : {Intent::kInform, Intent::kRequest, Intent::kOffer, Intent::kBook, Intent::kAnswer}) {
      v.add(ActToken{domain, intent, std::string(kNoSlot)}.str());
      for (const auto& spec : ontology.slots(domain)) v.add(ActToken{domain, intent, spec.name}.str());
    }
  }
  return v;
}

Vocab build_slot_vocab(const Ontology& ontology) {
  Vocab v;
  for (const auto& key : ontology.domain_slot_index()) {
    const SlotSpec* spec = ontology.find_slot(key.first, key.second);
    if (spec && spec->informable()) v.add(slot_key_string(key));
  }
  return v;
}

Vocab build_value_vocab(const Ontology& ontology) {
  Vocab v;
  v.add(std::string(kDontCare));
  v.add(std::string(kNoneValue));
  for (const auto& key : ontology.domain_slot_index()) {
    const SlotSpec* spec = ontology.find_slot(key.first, key.second);
    if (spec && spec->informable())
      for (const auto& value : spec->values) v.add(value);
  }
  return v;
}

Vocab build_word_vocab(const Ontology& ontology, const std::vector<Tokens>& extra) {
  Vocab v;
  v.add(std::string(kDontCareSurface));
  for (const auto& key : ontology.domain_slot_index()) {
    v.add(placeholder(key.first, key.second));
    for (const auto& value : ontology.find_slot(key.first, key.second)->values) v.add(value);
  }
  std::set<std::string> words;
  for (const auto& sentence : extra) words.insert(sentence.begin(), sentence.end());
  for (const auto& w : words) v.add(w);
  return v;
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"embed", c.embed},     {"hidden", c.hidden},       {"max_act_len", c.max_act_len},
           {"max_utt_len", c.max_utt_len}, {"max_slots", c.max_slots}, {"init_scale", c.init_scale}};
}

void from_json(const json& j, ModelConfig& c) {
  c.embed = j.value("embed", c.embed);
  c.hidden = j.value("hidden", c.hidden);
  c.max_act_len = j.value("max_act_len", c.max_act_len);
  c.max_utt_len = j.value("max_utt_len", c.max_utt_len);
  c.max_slots = j.value("max_slots", c.max_slots);
  c.init_scale = j.value("init_scale", c.init_scale);
  if (c.hidden == 0 || c.hidden % 2 != 0) throw ValidationError("model.hidden must be a positive even number");
  if (c.embed == 0) throw ValidationError("model.embed must be positive");
  if (c.max_act_len < 1 || c.max_utt_len < 1) throw ValidationError("decode limits must be positive");
}

// ---------------------------------------------------------------- model

namespace {

EncoderParams make_encoder(ParamStore& ps, const std::string& prefix, std::size_t vocab, const ModelConfig& c) {
  EncoderParams e;
  e.embedding = ps.add(prefix + ".embedding", Shape::matrix(vocab, c.embed));
  e.forward = nn::LstmParams::create(ps, prefix + ".fwd", c.embed, c.hidden / 2);
  e.backward = nn::LstmParams::create(ps, prefix + ".bwd", c.embed, c.hidden / 2);
  return e;
}

DecoderParams make_policy(ParamStore& ps, const std::string& prefix, std::size_t acts, std::size_t features,
                          const ModelConfig& c) {
  DecoderParams d;
  d.embedding = ps.add(prefix + ".embedding", Shape::matrix(acts, c.embed));
  d.cell = nn::LstmParams::create(ps, prefix + ".lstm", c.embed + c.hidden + features, c.hidden);
  d.attention = nn::AttentionParams::create(ps, prefix + ".attn", c.hidden, c.hidden, c.hidden);
  d.output = nn::Linear::create(ps, prefix + ".out", 2 * c.hidden, acts);
  return d;
}

DecoderParams make_nlg(ParamStore& ps, const std::string& prefix, ParamId embedding, std::size_t words,
                       const ModelConfig& c) {
  const std::size_t mem = c.hidden + c.embed;
  DecoderParams d;
  d.embedding = embedding;
  d.cell = nn::LstmParams::create(ps, prefix + ".lstm", c.embed + mem, c.hidden);
  d.attention = nn::AttentionParams::create(ps, prefix + ".attn", c.hidden, mem, c.hidden);
  d.output = nn::Linear::create(ps, prefix + ".out", c.hidden + mem, words);
  return d;
}

}  // namespace

JointModel::JointModel(KnowledgeBase kb, Vocab words, ModelConfig config, std::uint64_t seed)
    : kb_(std::move(kb)),
      config_(config),
      words_(std::move(words)),
      acts_(build_act_vocab(kb_.ontology)),
      slots_(build_slot_vocab(kb_.ontology)),
      values_(build_value_vocab(kb_.ontology)) {
  if (config_.hidden == 0 || config_.hidden % 2 != 0) {
    throw ValidationError("model.hidden must be a positive even number");
  }
  const ModelConfig& c = config_;
  const std::size_t n = kb_.ontology.size();

  context_ = nn::LstmParams::create(params_, "ctx.lstm", c.hidden, c.hidden);

  ds_.encoder = make_encoder(params_, "ds.enc", words_.size(), c);
  ds_.dst.slot_embedding = params_.add("ds.dst.slot_embedding", Shape::matrix(slots_.size(), c.embed));
  ds_.dst.cell = nn::LstmParams::create(params_, "ds.dst.lstm", c.embed + c.hidden, c.hidden);
  ds_.dst.attention = nn::AttentionParams::create(params_, "ds.dst.attn", c.hidden, c.hidden, c.hidden);
  ds_.dst.slot_head = nn::Linear::create(params_, "ds.dst.slot_head", 2 * c.hidden, slots_.size());
  ds_.dst.value_head = nn::Linear::create(params_, "ds.dst.value_head", 2 * c.hidden, values_.size());
  ds_.policy = make_policy(params_, "ds.pol", acts_.size(), 3 + n, c);
  ds_.nlg = make_nlg(params_, "ds.nlg", ds_.encoder.embedding, words_.size(), c);

  us_.encoder = make_encoder(params_, "us.enc", words_.size(), c);
  us_.policy = make_policy(params_, "us.pol", acts_.size(), n, c);
  us_.nlg = make_nlg(params_, "us.nlg", us_.encoder.embedding, words_.size(), c);

  params_.init_uniform(seed, c.init_scale);
}

void JointModel::save(const std::string& path) const {
  json meta{{"format", "selfplay-model"}, {"config", config_}, {"words", words_.tokens()},
            {"acts", acts_.size()},       {"slots", slots_.size()}, {"values", values_.size()}};
  std::ofstream os(path + ".json");
  if (!os) throw ContractError("cannot write '" + path + ".json'");
  os << meta.dump(1) << '\n';
  save_checkpoint(params_, path + ".bin");
}

JointModel JointModel::load(const std::string& path, const KnowledgeBase& kb) {
  std::ifstream in(path + ".json");
  if (!in) throw ContractError("missing model file '" + path + ".json'");
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw ContractError("malformed model file '" + path + ".json': " + e.what());
  }
  auto words = meta.at("words").get<std::vector<std::string>>();
  if (words.size() < 3) throw ContractError("model vocabulary too small");
  Vocab vocab(std::vector<std::string>(words.begin() + 3, words.end()));
  JointModel m(kb, std::move(vocab), meta.at("config").get<ModelConfig>(), 0);
  if (meta.value("acts", m.acts_.size()) != m.acts_.size() || meta.value("slots", m.slots_.size()) != m.slots_.size() ||
      meta.value("values", m.values_.size()) != m.values_.size()) {
    throw ContractError("checkpoint vocabulary sizes do not match the ontology");
  }
  load_checkpoint(m.params_, path + ".bin");
  return m;
}

bool in_section(const Param& p, std::string_view section) {
  return p.name.size() > section.size() && p.name.compare(0, section.size(), section) == 0 &&
         p.name[section.size()] == '.';
}

ContextState ContextState::zeros(std::size_t hidden) {
  ContextState s;
  s.ds = {std::vector<double>(hidden, 0.0), std::vector<double>(hidden, 0.0)};
  s.us = s.ds;
  return s;
}

std::string_view to_string(BeliefMode mode) { return mode == BeliefMode::kOracle ? "oracle" : "predicted"; }

BeliefMode parse_belief_mode(std::string_view s) {
  if (s == "oracle") return BeliefMode::kOracle;
  if (s == "predicted") return BeliefMode::kPredicted;
  throw ParseError("unknown belief mode '" + std::string(s) + "'");
}

// ---------------------------------------------------------------- blocks

namespace {

nn::LstmState as_state(Tape& tape, const ContextSide& side) {
  return {tape.constant(side.h), tape.constant(side.c)};
}

ContextSide as_side(const nn::LstmState& s) {
  auto h = s.h.data();
  auto c = s.c.data();
  return {{h.begin(), h.end()}, {c.begin(), c.end()}};
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::size_t choose(Tensor logits, DecodeMode mode, Rng* rng) {
  if (mode == DecodeMode::kSample) {
    if (!rng) throw ContractError("sample decoding needs a generator");
    const auto probs = softmax_values(logits.data());
    return rng->categorical(probs);
  }
  return argmax(logits.data());
}

DecodeResult run_decoder(Tape& tape, const DecoderParams& p, const nn::LstmState& init,
                         const nn::AttentionMemory& memory, Tensor features, const DecodeControl& control,
                         bool keep_memory) {
  DecodeResult out;
  Tensor table = tape.param(p.embedding);
  nn::LstmState state = init;
  std::size_t prev = Vocab::kBos;
  const bool forced = control.mode == DecodeMode::kForced;
  if (forced && (!control.forced || control.forced->empty())) throw ContractError("forced decode without targets");
  const std::size_t limit = forced ? control.forced->size() : control.max_len;

  for (std::size_t step = 0; step < limit; ++step) {
    Tensor context = nn::attend(tape, p.attention, state.h, memory).context;
    Tensor emb = embed_lookup(table, prev);
    Tensor x = features.valid() ? concat({emb, context, features}) : concat({emb, context});
    state = nn::lstm_step(tape, p.cell, x, state);
    Tensor logits = p.output(tape, concat({state.h, context}));

    std::size_t id = forced ? (*control.forced)[step] : choose(logits, control.mode, control.rng);
    if (!forced && step + 1 == limit && id != Vocab::kEos) {
      id = Vocab::kEos;
      out.truncated = true;
    }
    Tensor nll = softmax_cross_entropy(logits, id);
    out.ids.push_back(id);
    out.nll.push_back(nll);
    out.logprobs.push_back(-nll.item());
    if (keep_memory) out.memory.push_back(concat({state.h, embed_lookup(table, id)}));
    if (id == Vocab::kEos) break;
    prev = id;
  }
  out.final_state = state;
  return out;
}

}  // namespace

EncodedUtterance encode_utterance(Tape& tape, const JointModel& m, const EncoderParams& p, const Tokens& tokens) {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size() + 2);
  ids.push_back(Vocab::kBos);
  for (const auto& t : tokens) ids.push_back(m.words().id(t));
  ids.push_back(Vocab::kEos);

  Tensor table = tape.param(p.embedding);
  std::vector<Tensor> emb;
  emb.reserve(ids.size());
  for (auto id : ids) emb.push_back(embed_lookup(table, id));

  const std::size_t half = m.config().hidden / 2;
  std::vector<Tensor> fwd(ids.size()), bwd(ids.size());
  nn::LstmState s = nn::zero_state(tape, half);
  for (std::size_t j = 0; j < ids.size(); ++j) {
    s = nn::lstm_step(tape, p.forward, emb[j], s);
    fwd[j] = s.h;
  }
  s = nn::zero_state(tape, half);
  for (std::size_t j = ids.size(); j-- > 0;) {
    s = nn::lstm_step(tape, p.backward, emb[j], s);
    bwd[j] = s.h;
  }
  std::vector<Tensor> rows;
  rows.reserve(ids.size());
  for (std::size_t j = 0; j < ids.size(); ++j) rows.push_back(concat({fwd[j], bwd[j]}));
  return {stack(rows), concat({fwd.back(), bwd.front()})};
}

nn::LstmState encode_context(Tape& tape, const JointModel& m, Tensor sentence_embedding,
                             const nn::LstmState& other_side) {
  return nn::lstm_step(tape, m.context(), sentence_embedding, other_side);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> dst_target_ids(const JointModel& m,
                                                                             const std::vector<SlotValue>& pairs) {
  std::vector<std::size_t> slots, values;
  for (const auto& [key, value] : pairs) {
    auto s = m.slots().find(slot_key_string(key));
    auto v = m.values().find(value);
    if (!s || !v) throw ContractError("DST target outside vocabulary: " + slot_key_string(key) + "=" + value);
    slots.push_back(*s);
    values.push_back(*v);
  }
  slots.push_back(Vocab::kEos);
  return {slots, values};
}

DstResult dst_decode(Tape& tape, const JointModel& m, const EncodedUtterance& enc, const nn::LstmState& init,
                     const std::vector<SlotValue>* forced) {
  ++m.dst_calls;
  const DstParams& p = m.ds().dst;
  DstResult out;
  std::vector<std::size_t> forced_slots, forced_values;
  if (forced) std::tie(forced_slots, forced_values) = dst_target_ids(m, *forced);

  nn::AttentionMemory memory = nn::prepare_memory(tape, p.attention, enc.states);
  Tensor table = tape.param(p.slot_embedding);
  nn::LstmState state = init;
  std::size_t prev = Vocab::kBos;
  const std::size_t limit = forced ? forced_slots.size() : m.config().max_slots + 1;

  for (std::size_t step = 0; step < limit; ++step) {
    Tensor context = nn::attend(tape, p.attention, state.h, memory).context;
    state = nn::lstm_step(tape, p.cell, concat({embed_lookup(table, prev), context}), state);
    Tensor features = concat({state.h, context});
    Tensor slot_logits = p.slot_head(tape, features);
    std::size_t slot = forced ? forced_slots[step] : argmax(slot_logits.data());
    if (!forced && step + 1 == limit) slot = Vocab::kEos;
    out.nll.push_back(softmax_cross_entropy(slot_logits, slot));
    out.slot_ids.push_back(slot);
    if (slot == Vocab::kEos) break;

    Tensor value_logits = p.value_head(tape, features);
    const std::size_t value = forced ? forced_values[step] : argmax(value_logits.data());
    out.nll.push_back(softmax_cross_entropy(value_logits, value));
    out.value_ids.push_back(value);
    prev = slot;

    auto key = parse_slot_key(m.slots().token(slot));
    if (slot > Vocab::kEos && value > Vocab::kEos && key) out.pairs.emplace_back(*key, m.values().token(value));
  }
  return out;
}

DecodeResult policy_decode(Tape& tape, const JointModel&, const DecoderParams& p, const nn::LstmState& init,
                           const EncodedUtterance& source, Tensor features, const DecodeControl& control) {
  nn::AttentionMemory memory = nn::prepare_memory(tape, p.attention, source.states);
  return run_decoder(tape, p, init, memory, features, control, true);
}

DecodeResult nlg_decode(Tape& tape, const JointModel&, const DecoderParams& p, const DecodeResult& policy,
                        const DecodeControl& control) {
  nn::AttentionMemory memory = nn::prepare_memory(tape, p.attention, policy.memory, policy.memory);
  return run_decoder(tape, p, policy.final_state, memory, Tensor{}, control, false);
}

DialogueAct act_from_ids(const JointModel& m, std::span<const std::size_t> ids) {
  DialogueAct act;
  for (auto id : ids) {
    if (id <= Vocab::kEos) continue;
    act.add(ActToken::parse(m.acts().token(id)));
  }
  return act;
}

std::vector<std::size_t> act_ids(const JointModel& m, const DialogueAct& act) {
  std::vector<std::size_t> ids;
  for (const auto& t : act.tokens) {
    auto id = m.acts().find(t.str());
    if (!id) throw ContractError("act token outside vocabulary: " + t.str());
    ids.push_back(*id);
  }
  ids.push_back(Vocab::kEos);
  return ids;
}

Tokens words_from_ids(const JointModel& m, std::span<const std::size_t> ids) {
  Tokens out;
  for (auto id : ids) {
    if (id == Vocab::kEos) break;
    if (id == Vocab::kBos) continue;
    out.push_back(m.words().token(id));
  }
  return out;
}

std::vector<double> ds_features(const JointModel& m, const MatchResult& match, const BeliefState& belief) {
  std::vector<double> f(match.bucket.begin(), match.bucket.end());
  for (int b : summarize_belief(belief, m.ontology()).bits) f.push_back(b);
  return f;
}

std::string ds_active_domain(const std::vector<SlotValue>& predictions, const std::string& fallback) {
  return predictions.empty() ? fallback : predictions.back().first.first;
}

namespace {

struct DstInternal {
  BeliefState belief;
  std::vector<SlotValue> predictions;
  std::size_t skipped = 0;
};

DstInternal run_dst(Tape& tape, const JointModel& m, const EncodedUtterance& enc, const BeliefState& prior,
                    const nn::LstmState& init, BeliefMode mode, const BeliefState* oracle) {
  DstInternal out;
  if (mode == BeliefMode::kOracle) {
    if (!oracle) throw ContractError("oracle belief mode without an oracle belief");
    out.belief = *oracle;
    for (const auto& [key, value] : oracle->slots) {
      auto it = prior.slots.find(key);
      if (it == prior.slots.end() || it->second != value) out.predictions.emplace_back(key, value);
    }
    return out;
  }
  DstResult r = dst_decode(tape, m, enc, init, nullptr);
  out.predictions = r.pairs;
  out.skipped = (r.slot_ids.size() - 1) - r.pairs.size();
  BeliefDiagnostics diag;
  out.belief = update_belief(prior, r.pairs, m.ontology(), &diag);
  out.skipped += diag.skipped_unknown;
  return out;
}

}  // namespace

DstStepResult dst_step(const JointModel& m, const Tokens& user_utterance, const BeliefState& prior,
                       const ContextSide& prev_context, BeliefMode mode, const BeliefState* oracle) {
  Tape tape(&m.params(), false);
  EncodedUtterance enc = encode_utterance(tape, m, m.ds().encoder, user_utterance);
  DstInternal r = run_dst(tape, m, enc, prior, as_state(tape, prev_context), mode, oracle);
  return {std::move(r.belief), std::move(r.predictions), r.skipped};
}

DsTurnOutput ds_turn(const JointModel& m, const ContextState& context, const Tokens& user_utterance,
                     const BeliefState& belief, const std::string& prev_domain, DecodeMode mode, std::uint64_t seed,
                     BeliefMode belief_mode, const BeliefState* oracle) {
  Tape tape(&m.params(), false);
  DsTurnOutput out;
  const nn::LstmState prev_us = as_state(tape, context.us);
  EncodedUtterance enc = encode_utterance(tape, m, m.ds().encoder, user_utterance);

  DstInternal dst = run_dst(tape, m, enc, belief, prev_us, belief_mode, oracle);
  out.belief = std::move(dst.belief);
  out.dst_output = std::move(dst.predictions);
  out.diagnostics.dst_skipped = dst.skipped;
  out.domain = ds_active_domain(out.dst_output, prev_domain);
  out.match = query_belief(m.kb(), out.belief, out.domain);

  nn::LstmState ctx_ds = encode_context(tape, m, enc.summary, prev_us);
  Tensor features = tape.constant(ds_features(m, out.match, out.belief));
  Rng rng(seed);
  DecodeResult pol =
      policy_decode(tape, m, m.ds().policy, ctx_ds, enc, features, {mode, nullptr, &rng, m.config().max_act_len});
  DecodeResult nlg = nlg_decode(tape, m, m.ds().nlg, pol, {DecodeMode::kGreedy, nullptr, &rng, m.config().max_utt_len});

  out.act_ids = pol.ids;
  out.act_logprobs = pol.logprobs;
  out.act = act_from_ids(m, pol.ids);
  out.utterance_delex = words_from_ids(m, nlg.ids);
  out.utterance = lexicalize(out.utterance_delex, system_value_source(m.kb(), out.belief), m.ontology(), seed);
  out.diagnostics.system_act_truncated = pol.truncated;
  out.diagnostics.system_utterance_truncated = nlg.truncated;
  out.context = context;
  out.context.ds = as_side(ctx_ds);
  return out;
}

UsTurnOutput us_turn(const JointModel& m, const ContextState& context, const Tokens& system_utterance,
                     const UserGoal& goal, const GoalState& goal_state, DecodeMode mode, std::uint64_t seed) {
  Tape tape(&m.params(), false);
  UsTurnOutput out;
  EncodedUtterance enc = encode_utterance(tape, m, m.us().encoder, system_utterance);
  nn::LstmState ctx_us = encode_context(tape, m, enc.summary, as_state(tape, context.ds));
  std::vector<double> bits(goal_state.bits.begin(), goal_state.bits.end());
  Tensor features = tape.constant(bits);
  Rng rng(seed);
  DecodeResult pol =
      policy_decode(tape, m, m.us().policy, ctx_us, enc, features, {mode, nullptr, &rng, m.config().max_act_len});
  DecodeResult nlg = nlg_decode(tape, m, m.us().nlg, pol, {DecodeMode::kGreedy, nullptr, &rng, m.config().max_utt_len});

  out.act_ids = pol.ids;
  out.act_logprobs = pol.logprobs;
  out.act = act_from_ids(m, pol.ids);
  out.utterance_delex = words_from_ids(m, nlg.ids);
  out.utterance = lexicalize(out.utterance_delex, user_value_source(m.ontology(), goal), m.ontology(), seed);
  out.goal_state = update_goal_state(goal_state, out.act, m.ontology());
  out.informed = user_informed_values(m.ontology(), goal, out.act);
  out.diagnostics.user_act_truncated = pol.truncated;
  out.diagnostics.user_utterance_truncated = nlg.truncated;
  out.context = context;
  out.context.us = as_side(ctx_us);
  return out;
}

ContextState listen_user(const JointModel& m, const ContextState& context, const Tokens& system_utterance) {
  Tape tape(&m.params(), false);
  EncodedUtterance enc = encode_utterance(tape, m, m.us().encoder, system_utterance);
  ContextState out = context;
  out.us = as_side(encode_context(tape, m, enc.summary, as_state(tape, context.ds)));
  return out;
}

ReplayTerms replay_dialogue(Tape& tape, const JointModel& m, std::span<const ReplayTurn> turns,
                            const ReplayOptions& options) {
  ReplayTerms terms;
  std::vector<Tensor> dst, pol_ds, nlg_ds, pol_us, nlg_us;
  const std::size_t hidden = m.config().hidden;
  nn::LstmState ctx_ds = nn::zero_state(tape, hidden);
  const Tokens empty;

  for (std::size_t t = 0; t < turns.size(); ++t) {
    const ReplayTurn& turn = turns[t];
    const Tokens& heard = t == 0 ? empty : turns[t - 1].system_utterance;

    EncodedUtterance enc_sys = encode_utterance(tape, m, m.us().encoder, heard);
    nn::LstmState ctx_us = encode_context(tape, m, enc_sys.summary, ctx_ds);
    if (options.us_policy || options.us_nlg) {
      std::vector<double> bits(turn.goal_state.bits.begin(), turn.goal_state.bits.end());
      DecodeControl c{DecodeMode::kForced, &turn.user_act_ids, nullptr, 0};
      DecodeResult pol = policy_decode(tape, m, m.us().policy, ctx_us, enc_sys, tape.constant(bits), c);
      terms.us_act_nll.push_back(pol.nll);
      terms.us_act_tokens += pol.nll.size();
      if (options.us_policy) pol_us.insert(pol_us.end(), pol.nll.begin(), pol.nll.end());
      if (options.us_nlg) {
        DecodeResult nlg = nlg_decode(tape, m, m.us().nlg, pol, {DecodeMode::kForced, &turn.user_word_ids});
        nlg_us.insert(nlg_us.end(), nlg.nll.begin(), nlg.nll.end());
        terms.us_word_tokens += nlg.nll.size();
      }
    } else {
      terms.us_act_nll.emplace_back();
    }

    EncodedUtterance enc_user = encode_utterance(tape, m, m.ds().encoder, turn.user_utterance);
    if (options.dst) {
      DstResult r = dst_decode(tape, m, enc_user, ctx_us, &turn.dst_targets);
      dst.insert(dst.end(), r.nll.begin(), r.nll.end());
      terms.dst_tokens += r.nll.size();
    }
    ctx_ds = encode_context(tape, m, enc_user.summary, ctx_us);
    if (options.ds_policy || options.ds_nlg) {
      Tensor features = tape.constant(ds_features(m, turn.match, turn.belief));
      DecodeControl c{DecodeMode::kForced, &turn.system_act_ids, nullptr, 0};
      DecodeResult pol = policy_decode(tape, m, m.ds().policy, ctx_ds, enc_user, features, c);
      terms.ds_act_nll.push_back(pol.nll);
      terms.ds_act_tokens += pol.nll.size();
      if (options.ds_policy) pol_ds.insert(pol_ds.end(), pol.nll.begin(), pol.nll.end());
      if (options.ds_nlg) {
        DecodeResult nlg = nlg_decode(tape, m, m.ds().nlg, pol, {DecodeMode::kForced, &turn.system_word_ids});
        nlg_ds.insert(nlg_ds.end(), nlg.nll.begin(), nlg.nll.end());
        terms.ds_word_tokens += nlg.nll.size();
      }
    } else {
      terms.ds_act_nll.emplace_back();
    }
  }

  auto total = [&](std::vector<Tensor>& v) { return v.empty() ? tape.zeros(Shape::scalar()) : sum(v); };
  terms.l_dst = total(dst);
  terms.l_pol_ds = total(pol_ds);
  terms.l_nlg_ds = total(nlg_ds);
  terms.l_pol_us = total(pol_us);
  terms.l_nlg_us = total(nlg_us);
  return terms;
}

}  // namespace selfplay
