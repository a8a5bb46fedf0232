"""Joint self-play training of a task-oriented dialogue system and a user simulator."""

import json as _json

from . import _core
from ._core import (
    ContractError,
    Corpus,
    DataError,
    JointModel,
    KnowledgeBase,
    ParseError,
    ValidationError,
    bleu,
    combined,
    make_splits as _make_splits,
    return_schedule,
    spearman,
)

__all__ = [
    "ContractError", "Corpus", "DataError", "JointModel", "KnowledgeBase", "ParseError", "ValidationError",
    "analyze", "bleu", "combined", "config_hash", "corpus_eval", "experiment_config", "fresh_goals",
    "generate_corpus", "goals_of", "load_corpus", "make_model", "make_splits", "return_schedule", "rl_train",
    "run_selfplay", "selfplay_metrics", "sl_train", "spearman", "validate_reward_config",
]


def _dump(value):
    if value is None:
        return ""
    return value if isinstance(value, str) else _json.dumps(value)


def load_corpus(path, kb):
    return _core.load_corpus(str(path), kb)


def generate_corpus(kb, n, seed, generator=None):
    return _core.generate_corpus(kb, n, seed, _dump(generator))


def make_splits(corpus, spec=None, seed=1):
    return _make_splits(corpus, _dump(spec), seed)


def goals_of(corpus):
    return _json.loads(corpus.goals_json())


def fresh_goals(kb, n, seed):
    return _json.loads(_core.fresh_goals(kb, n, seed))


def make_model(kb, corpus, config=None, seed=1):
    return JointModel(kb, corpus, _dump(config), seed)


def sl_train(model, train, dev, config=None):
    return _json.loads(_core.sl_train(model, train, dev, _dump(config)))


def rl_train(model, train_goals, dev_goals, config=None):
    return _json.loads(_core.rl_train(model, _dump(train_goals), _dump(dev_goals), _dump(config)))


def run_selfplay(model, goals, seed=0, reward=None, max_turns=20):
    return _json.loads(_core.run_selfplay(model, _dump(goals), seed, _dump(reward), max_turns))


def corpus_eval(model, test, belief="predicted"):
    return _json.loads(_core.corpus_eval(model, test, belief))


def selfplay_metrics(logs, kb):
    return _json.loads(_core.selfplay_metrics(_dump(logs), kb))


def analyze(logs, kb):
    return _json.loads(_core.analyze(_dump(logs), kb))


def validate_reward_config(config):
    return _json.loads(_core.validate_reward_config(_dump(config)))


def experiment_config(config=None):
    return _json.loads(_core.experiment_config(_dump(config)))


def config_hash(config):
    return _core.config_hash(_dump(config))
