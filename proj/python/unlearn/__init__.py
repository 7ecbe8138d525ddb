"""Contrastive unlearning of memorized sequences in a small causal transformer.

The heavy lifting lives in the compiled ``_core`` extension; this package adds
a few conveniences for reading run directories.
"""

from __future__ import annotations

import json
from pathlib import Path

from ._core import (
    ConfigError,
    Corpus,
    CorpusParams,
    ExperimentConfig,
    FormatError,
    ModelConfig,
    ModelState,
    NumericError,
    ParameterError,
    RunResult,
    TokenSequence,
    TrainingFailure,
    UndefinedMetricError,
    bleu,
    el_n,
    entropy,
    generate,
    generation_entropy,
    init_model,
    load_checkpoint,
    load_config,
    load_corpus,
    ma,
    nll,
    overlap_n,
    parse_config,
    perplexity,
    pretrain,
    read_history,
    render,
    reproduces,
    run_unlearning,
    save_checkpoint,
    save_corpus,
    synthesize_corpus,
    synthesize_heldout,
)

__version__ = "0.1.0"


def termination(run_dir: str | Path) -> dict:
    """The termination record of a run directory."""
    with open(Path(run_dir) / "termination.json", encoding="utf-8") as f:
        return json.load(f)


def summary_rows(history: list[dict]) -> list[dict]:
    """Aggregate metrics per epoch, without the per-sample records."""
    keys = ("epoch", "el10", "ma", "bleu", "embed_f1", "entropy", "ppl", "n_active")
    return [{k: r[k] for k in keys} for r in history]


__all__ = [name for name in dir() if not name.startswith("_")]
