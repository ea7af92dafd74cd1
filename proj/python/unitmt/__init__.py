"""Python bindings for the unitmt C++ core.

Functions that take a config accept a dict (or None for the defaults); keys
follow the same sections as the JSON config files read by the CLI.
"""

import json as _json

from . import _core
from ._core import (
    Checkpoint,
    ConfigError,
    Error,
    InputError,
    NumericError,
    Vocab,
    assign_units,
    corpus_bleu,
    evaluate,
    expand_runs,
    kmeans,
    lr_at,
    noise,
    pnmi,
    run_length_encode,
    train_bpe,
)


def _cfg(config):
    if config is None:
        return ""
    if isinstance(config, str):
        return config
    return _json.dumps(config)


def default_config():
    return _json.loads(_core.default_config())


def resolve_config(config=None):
    return _json.loads(_core.resolve_config(_cfg(config)))


def make_benchmark(config=None):
    return _core.make_benchmark(_cfg(config))


def init_model(vocab, config=None):
    return _core.init_model(vocab, _cfg(config))


def pretrain(checkpoint, vocab, mono, config=None):
    return _core.pretrain(checkpoint, vocab, mono, _cfg(config))


def finetune(checkpoint, vocab, parallel, config=None):
    return _core.finetune(checkpoint, vocab, parallel, _cfg(config))


def backtranslate(checkpoint, vocab, mono, parallel=(), config=None):
    return _core.backtranslate(checkpoint, vocab, mono, list(parallel), _cfg(config))


def translate(checkpoint, vocab, sources, source_language, target_language, config=None):
    return _core.translate(checkpoint, vocab, sources, source_language, target_language, _cfg(config))


def run_ablation(config=None, log=None):
    return _core.run_ablation(_cfg(config), log)
