"""Channel-free human activity recognition: Python bindings to the C++ core."""

import json

from ._core import (
    Config,
    ConfigError,
    Data,
    InputError,
    Model,
    NumericError,
    Vocab,
    build_id,
    macro_f1,
    perturb,
    prepare_data,
    set_log_level,
)
from . import _core

__all__ = [
    "Config", "ConfigError", "Data", "InputError", "Model", "NumericError", "Vocab", "bench", "build_id",
    "config", "macro_f1", "perturb", "prepare_data", "set_log_level", "sweep", "train",
]

# Metadata field indices used by Vocab.names / Vocab.intern.
LOCATION, SIDE, SENSOR, AXIS = range(4)


def config(text="", **overrides):
    """Config from key = value text plus keyword overrides (dots spelled as "__")."""
    cfg = Config.parse(text) if text else Config()
    for key, value in overrides.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        cfg.set(key.replace("__", "."), str(value))
    cfg.validate()
    return cfg


def train(cfg, checkpoint_dir=""):
    """LOSO training and evaluation; returns the report as a dict."""
    return json.loads(_core.train(cfg, checkpoint_dir))


def sweep(cfg, kinds, grid=()):
    """Train, then sweep perturbation intensity; returns the report as a dict."""
    return json.loads(_core.sweep(cfg, list(kinds), list(grid)))


def bench(cfg, channels=(1, 3, 6, 12, 24, 40), batches=(1, 32), timed=True):
    """Parameter, MAC and latency benchmark; returns the report as a dict."""
    return json.loads(_core.bench(cfg, list(channels), list(batches), timed))
