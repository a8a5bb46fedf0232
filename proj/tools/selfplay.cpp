#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "selfplay/evaluation.hpp"
#include "selfplay/experiment.hpp"
#include "selfplay/training.hpp"

using namespace selfplay;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode : int {
  kOk = 0,
  kRuntimeFailure = 1,
  kUsageError = 2,
  kUnknownCommand = 3,
  kMissingCheckpoint = 4,
  kStageOrder = 5,
  kInvalidInput = 6,
};

class StageError : public std::runtime_error {
 public:
  StageError(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

const std::vector<std::string> kCommands{"gen-corpus", "train-sl", "train-rl", "finetune",
                                         "selfplay",   "evaluate", "analyze",  "chat"};
const char* const kSplitNames[] = {"source", "adaptation", "dev", "test", "source_dev"};

struct Globals {
  std::string config;
  std::vector<std::string> overrides;
  std::string work = "run";
  std::string ontology = "data/toy_ontology.json";
  std::optional<std::uint64_t> seed;
};

struct Session {
  fs::path work;
  json config_json;
  ExperimentConfig config;
  KnowledgeBase kb;
  std::vector<std::string> argv;
};

void progress(const std::string& msg) { std::cerr << msg << std::endl; }

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_jsonl(const fs::path& path, const std::vector<DialogueLog>& logs) {
  std::string text;
  for (const auto& l : logs) text += json(l).dump() + "\n";
  write_text(path, text);
}

std::vector<DialogueLog> read_logs(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw StageError(kMissingCheckpoint, "missing log file " + path.string());
  std::vector<DialogueLog> logs;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      logs.push_back(json::parse(line).get<DialogueLog>());
    } catch (const json::exception& e) {
      throw DataError(path.string() + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  if (logs.empty()) throw DataError(path.string() + " holds no dialogue logs");
  return logs;
}

void write_manifest(const Session& s, const fs::path& dir, const std::string& command,
                    const std::vector<std::string>& outputs) {
  write_json(dir / "manifest.json", {{"command", command},
                                     {"argv", s.argv},
                                     {"config_hash", config_hash(s.config_json)},
                                     {"seed", s.config.seed},
                                     {"git_describe", SELFPLAY_GIT_DESCRIBE},
                                     {"outputs", outputs}});
}

Session open_session(const Globals& g, const std::vector<std::string>& argv, bool fresh) {
  Session s;
  s.work = g.work;
  s.argv = argv;
  const fs::path stored = s.work / "config.json";
  if (!g.config.empty())
    s.config_json = read_json_file(g.config);
  else if (!fresh && fs::exists(stored))
    s.config_json = read_json_file(stored.string());
  else
    s.config_json = json(ExperimentConfig{});
  for (const auto& o : g.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ValidationError("override '" + o + "' is not key=value");
    apply_override(s.config_json, o.substr(0, eq), o.substr(eq + 1));
  }
  if (g.seed) s.config_json["seed"] = *g.seed;
  try {
    s.config = s.config_json.get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  s.config_json = json(s.config);
  s.kb = load_knowledge_base(g.ontology);
  return s;
}

fs::path split_path(const Session& s, const std::string& name) { return s.work / "splits" / (name + ".jsonl"); }

std::vector<AnnotatedDialogue> load_split(const Session& s, const std::string& name) {
  const fs::path p = split_path(s, name);
  if (!fs::exists(p)) throw StageError(kStageOrder, "split '" + name + "' not found; run gen-corpus first");
  std::ifstream in(p);
  std::vector<AnnotatedDialogue> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line).get<AnnotatedDialogue>());
  return out;
}

std::vector<AnnotatedDialogue> load_full_corpus(const Session& s) {
  const fs::path p = s.work / "corpus.jsonl";
  if (!fs::exists(p)) throw StageError(kStageOrder, "no corpus in " + s.work.string() + "; run gen-corpus first");
  return load_corpus(p.string(), s.kb.ontology).dialogues;
}

/// A stage name ("sl", "rl_joint_turn", ...) or a checkpoint path.
fs::path resolve_model(const Session& s, const std::string& ref) {
  const fs::path stage = s.work / ref / "model";
  if (fs::exists(stage.string() + ".json")) return stage;
  if (fs::exists(ref + ".json")) return ref;
  if (ref.find('/') == std::string::npos && ref.find('.') == std::string::npos)
    throw StageError(kStageOrder, "stage '" + ref + "' has not been run in " + s.work.string());
  throw StageError(kMissingCheckpoint, "missing checkpoint " + ref);
}

JointModel load_model(const Session& s, const std::string& ref) {
  return JointModel::load(resolve_model(s, ref).string(), s.kb);
}

std::string model_tag(const std::string& ref) {
  std::string tag = fs::path(ref).filename() == "model" ? fs::path(ref).parent_path().filename().string() : ref;
  std::replace_if(tag.begin(), tag.end(), [](char c) { return !std::isalnum(static_cast<unsigned char>(c)) && c != '_'; }, '_');
  return tag;
}

std::vector<AnnotatedDialogue> sl_dev(const Session& s) {
  return load_split(s, s.config.split.mode == SplitMode::kFull ? "dev" : "source_dev");
}

void log_sl_epoch(const SlEpoch& e) {
  progress("sl epoch " + std::to_string(e.epoch) + " loss " + std::to_string(e.loss.total()) + " dev success " +
           std::to_string(e.dev_success));
}

void log_rl_epoch(const RlEpoch& e) {
  progress("rl epoch " + std::to_string(e.epoch) + " reward " + std::to_string(e.mean_turn_reward) +
           " dev success " + std::to_string(e.dev_success));
}

// ---------------------------------------------------------------- commands

void cmd_gen_corpus(const Session& s) {
  const auto& c = s.config;
  const auto corpus = generate_toy_corpus(s.kb, c.dialogues, c.seed, c.generator);
  const auto splits = make_splits(corpus, c.split, c.seed);
  fs::create_directories(s.work);
  save_corpus(corpus, (s.work / "corpus.jsonl").string());
  const std::vector<AnnotatedDialogue>* parts[] = {&splits.source, &splits.adaptation, &splits.dev, &splits.test,
                                                   &splits.source_dev};
  std::vector<std::string> outputs{"corpus.jsonl", "config.json"};
  for (std::size_t i = 0; i < 5; ++i) {
    fs::create_directories(s.work / "splits");
    save_corpus(*parts[i], split_path(s, kSplitNames[i]).string());
    outputs.push_back(std::string("splits/") + kSplitNames[i] + ".jsonl");
  }
  write_json(s.work / "config.json", s.config_json);
  write_manifest(s, s.work, "gen-corpus", outputs);
  progress("wrote " + std::to_string(corpus.size()) + " dialogues: source " + std::to_string(splits.source.size()) +
           ", adaptation " + std::to_string(splits.adaptation.size()) + ", dev " + std::to_string(splits.dev.size()) +
           ", test " + std::to_string(splits.test.size()));
}

void cmd_train_sl(const Session& s) {
  const auto corpus = load_full_corpus(s);
  const auto train = load_split(s, "source");
  const auto dev = sl_dev(s);
  JointModel m = make_model(s.kb, corpus, s.config.model, s.config.seed);
  SlOptions o;
  o.on_epoch = log_sl_epoch;
  const auto report = sl_train(m, train, dev, s.config.train, o);
  const fs::path dir = s.work / "sl";
  fs::create_directories(dir);
  m.save((dir / "model").string());
  write_json(dir / "sl_report.json", to_json(report));
  write_manifest(s, dir, "train-sl", {"model.json", "model.bin", "sl_report.json"});
}

void cmd_train_rl(const Session& s, const std::string& target_name, const std::string& reward_name,
                  const std::string& from) {
  const RlTarget target = parse_rl_target(target_name);
  const RewardMode mode = parse_reward_mode(reward_name);
  JointModel m = load_model(s, from);
  TrainConfig cfg = s.config.train;
  cfg.rl.target = target;
  cfg.rl.reward = rl_reward(s.config, target, mode);
  const auto train_goals = goals_of(load_split(s, "source"));
  const auto dev_goals = goals_of(sl_dev(s));
  RlOptions o;
  o.on_epoch = log_rl_epoch;
  const auto report = rl_train(m, train_goals, dev_goals, cfg, o);
  const fs::path dir = s.work / ("rl_" + target_name + "_" + reward_name);
  fs::create_directories(dir);
  m.save((dir / "model").string());
  write_json(dir / "rl_report.json", to_json(report));
  write_text(dir / "rl_epochs.csv", rl_epochs_csv(report));
  write_manifest(s, dir, "train-rl", {"model.json", "model.bin", "rl_report.json", "rl_epochs.csv"});
}

void cmd_finetune(const Session& s, const std::string& mode_name, bool with_rl, const std::string& from) {
  if (s.config.split.mode == SplitMode::kFull)
    throw ValidationError("finetune needs split.mode domain_adaptation or single_to_multi");
  const FinetuneMode mode = parse_finetune_mode(mode_name);
  JointModel m = load_model(s, from);
  const auto adaptation = load_split(s, "adaptation");
  const auto dev = load_split(s, "dev");
  std::optional<FisherDiag> fisher;
  if (mode == FinetuneMode::kEwc) fisher = fisher_estimate(m, load_split(s, "source"), s.config.train.ewc);
  TrainConfig cfg = s.config.train;
  cfg.rl.reward = rl_reward(s.config, cfg.rl.target, RewardMode::kTurn);
  const auto report = finetune(m, adaptation, dev, mode, fisher ? &*fisher : nullptr, with_rl, cfg);
  const fs::path dir = s.work / ("finetune_" + mode_name + (with_rl ? "_rl" : ""));
  fs::create_directories(dir);
  m.save((dir / "model").string());
  json j{{"sl", to_json(report.sl)}};
  std::vector<std::string> outputs{"model.json", "model.bin", "finetune_report.json"};
  if (report.rl) {
    j["rl"] = to_json(*report.rl);
    write_text(dir / "rl_epochs.csv", rl_epochs_csv(*report.rl));
    outputs.push_back("rl_epochs.csv");
  }
  write_json(dir / "finetune_report.json", j);
  write_manifest(s, dir, "finetune", outputs);
}

void cmd_selfplay(const Session& s, const std::string& from, const std::string& split, std::size_t fresh) {
  const JointModel m = load_model(s, from);
  const auto goals = fresh > 0 ? fresh_goals(s.kb, fresh, s.config.seed, s.config.generator)
                               : goals_of(load_split(s, split));
  RolloutOptions o;
  o.mode = DecodeMode::kGreedy;
  o.max_turns = s.config.train.max_turns;
  o.reward = rl_reward(s.config, RlTarget::kJoint, RewardMode::kTurn);
  const auto logs = run_selfplay(m, goals, s.config.seed, o);
  const std::string tag = model_tag(from) + "_" + (fresh > 0 ? "fresh" + std::to_string(fresh) : split);
  const fs::path dir = s.work / "selfplay" / tag;
  write_jsonl(dir / "logs.jsonl", logs);
  write_text(dir / "outcomes.csv", outcomes_csv(logs));
  write_manifest(s, dir, "selfplay", {"logs.jsonl", "outcomes.csv"});
  const auto r = selfplay_metrics(logs, s.kb);
  progress(tag + ": inform " + std::to_string(r.inform) + " success " + std::to_string(r.success));
}

void cmd_evaluate(const Session& s, const std::string& from, const std::string& split, const std::string& belief,
                  const std::string& logs_path) {
  MetricsReport report;
  std::string tag;
  if (!logs_path.empty()) {
    report = selfplay_metrics(read_logs(logs_path), s.kb);
    tag = "logs_" + model_tag(fs::path(logs_path).parent_path().filename().string());
  } else {
    const JointModel m = load_model(s, from);
    report = corpus_eval(m, load_split(s, split), parse_belief_mode(belief));
    tag = model_tag(from) + "_" + split + "_" + belief;
  }
  const fs::path dir = s.work / "evaluate" / tag;
  write_json(dir / "metrics.json", to_json(report));
  write_manifest(s, dir, "evaluate", {"metrics.json"});
  std::cout << to_json(report).dump() << std::endl;
}

void cmd_analyze(const Session& s, const std::string& logs_path, const std::string& corpus_split) {
  const auto logs = read_logs(logs_path);
  json j{{"errors", to_json(error_analysis(logs, s.kb))},
         {"exploration", to_json(exploration_stats(logs, s.kb.ontology))}};
  if (!corpus_split.empty()) {
    std::vector<DialogueLog> corpus_logs;
    for (const auto& d : load_split(s, corpus_split)) corpus_logs.push_back(annotated_to_log(d, s.kb));
    j["corpus_exploration"] = to_json(exploration_stats(corpus_logs, s.kb.ontology));
  }
  const fs::path dir = s.work / "analyze" / model_tag(fs::path(logs_path).parent_path().filename().string());
  write_json(dir / "report.json", j);
  write_manifest(s, dir, "analyze", {"report.json"});
  std::cout << j.dump(2) << std::endl;
}

void cmd_chat(const Session& s, const std::string& from) {
  const JointModel m = load_model(s, from);
  ContextState ctx = ContextState::zeros(m.config().hidden);
  BeliefState belief;
  std::string domain;
  Tokens heard;
  json transcript = json::array();
  std::string line;
  std::cout << "type a user turn; an empty line or 'bye' ends the chat" << std::endl;
  for (std::size_t t = 0; std::cout << "user> " << std::flush && std::getline(std::cin, line); ++t) {
    std::transform(line.begin(), line.end(), line.begin(), [](unsigned char c) { return std::tolower(c); });
    const Tokens user = split_tokens(line);
    if (user.empty()) break;
    ctx = listen_user(m, ctx, heard);
    const auto out = ds_turn(m, ctx, user, belief, domain, DecodeMode::kGreedy, derive_seed(s.config.seed, t, 3));
    ctx = out.context;
    belief = out.belief;
    domain = out.domain;
    heard = out.utterance;
    std::cout << "system> " << join_tokens(out.utterance) << "\n  act: " << out.act.render() << std::endl;
    transcript.push_back({{"user", join_tokens(user)},
                          {"system", join_tokens(out.utterance)},
                          {"system_act", out.act.render()},
                          {"belief", belief_to_json(out.belief)}});
    if (user.back() == "bye" || user.front() == "bye") break;
  }
  const fs::path dir = s.work / "chat" / model_tag(from);
  write_json(dir / "transcript.json", transcript);
  write_manifest(s, dir, "chat", {"transcript.json"});
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a.empty() || a[0] == '-' || a.find('=') != std::string::npos) {
      if (a == "--config" || a == "--set" || a == "--work" || a == "--ontology" || a == "--seed") ++i;
      continue;
    }
    if (std::find(kCommands.begin(), kCommands.end(), a) == kCommands.end()) {
      std::cerr << "unknown command '" << a << "'" << std::endl;
      return kUnknownCommand;
    }
    break;
  }

  CLI::App app{"Joint self-play training of a dialogue system and a user simulator"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "experiment config JSON (defaults to <work>/config.json)");
  app.add_option("--set", g.overrides, "config override key=value, dotted keys")->expected(1)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  app.add_option("--work", g.work, "working directory for artifacts");
  app.add_option("--ontology", g.ontology, "ontology and database JSON");
  app.add_option("--seed", g.seed, "overrides the config seed");

  std::string target = "joint", reward = "turn", mode = "naive", from = "sl", split = "test", belief = "predicted";
  std::string logs, corpus_split, rl_from = "sl";
  std::size_t fresh = 0;
  bool with_rl = false;

  auto* gen = app.add_subcommand("gen-corpus", "generate the toy corpus and its splits");
  auto* sl = app.add_subcommand("train-sl", "supervised pre-training of both agents");
  auto* rl = app.add_subcommand("train-rl", "REINFORCE through self-play");
  rl->add_option("--target", target, "agents to update")->check(CLI::IsMember({"ds", "joint"}));
  rl->add_option("--reward", reward, "reward type")->check(CLI::IsMember({"dialogue", "turn"}));
  rl->add_option("--from", rl_from, "stage name or checkpoint to start from");
  auto* ft = app.add_subcommand("finetune", "adapt a source model to the target data");
  ft->add_option("--mode", mode, "fine-tuning regulariser")->check(CLI::IsMember({"naive", "ewc"}));
  ft->add_flag("--rl", with_rl, "continue with RL on the adaptation goals");
  ft->add_option("--from", from, "stage name or checkpoint to start from");
  auto* sp = app.add_subcommand("selfplay", "write self-play dialogue logs");
  sp->add_option("--model", from, "stage name or checkpoint");
  sp->add_option("--split", split, "goal source")->check(CLI::IsMember({"dev", "test"}));
  sp->add_option("--fresh", fresh, "use this many freshly sampled goals instead of a split");
  auto* ev = app.add_subcommand("evaluate", "metrics on a corpus split or on self-play logs");
  ev->add_option("--model", from, "stage name or checkpoint");
  ev->add_option("--split", split, "corpus split")->check(CLI::IsMember({"dev", "test"}));
  ev->add_option("--belief", belief, "belief source")->check(CLI::IsMember({"predicted", "oracle"}));
  ev->add_option("--logs", logs, "self-play logs JSONL; evaluates these instead of the corpus");
  auto* an = app.add_subcommand("analyze", "error and exploration reports of self-play logs");
  an->add_option("--logs", logs, "self-play logs JSONL")->required();
  an->add_option("--corpus-split", corpus_split, "also report exploration of this corpus split")
      ->check(CLI::IsMember({"source", "adaptation", "dev", "test"}));
  auto* ch = app.add_subcommand("chat", "type user turns and read the system's replies");
  ch->add_option("--model", from, "stage name or checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    const Session s = open_session(g, args, gen->parsed());
    if (gen->parsed()) cmd_gen_corpus(s);
    if (sl->parsed()) cmd_train_sl(s);
    if (rl->parsed()) cmd_train_rl(s, target, reward, rl_from);
    if (ft->parsed()) cmd_finetune(s, mode, with_rl, from);
    if (sp->parsed()) cmd_selfplay(s, from, split, fresh);
    if (ev->parsed()) cmd_evaluate(s, from, split, belief, logs);
    if (an->parsed()) cmd_analyze(s, logs, corpus_split);
    if (ch->parsed()) cmd_chat(s, from);
    return kOk;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return e.code();
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return kInvalidInput;
  } catch (const ValidationError& e) {
    std::cerr << "invalid config: " << e.what() << std::endl;
    return kInvalidInput;
  } catch (const ParseError& e) {
    std::cerr << "invalid value: " << e.what() << std::endl;
    return kInvalidInput;
  } catch (const ContractError& e) {
    std::cerr << "incompatible checkpoint: " << e.what() << std::endl;
    return kMissingCheckpoint;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kRuntimeFailure;
  }
}
