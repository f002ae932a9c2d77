"""BERT re-ranking with Simplified TinyBERT distillation."""

import json

from ._core import (
    Error,
    Experiment,
    default_config,
    estimate_macs,
    evaluate,
    gen_synth,
    hard_loss,
    paired_t_test,
    per_query,
    soft_loss,
)

__all__ = [
    "Error",
    "Experiment",
    "config",
    "default_config",
    "estimate_macs",
    "evaluate",
    "gen_synth",
    "hard_loss",
    "paired_t_test",
    "per_query",
    "soft_loss",
]


def _merge(base, overrides):
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def config(overrides=None):
    """Default settings with nested `overrides` applied, as a JSON string."""
    return json.dumps(_merge(json.loads(default_config()), overrides or {}))
