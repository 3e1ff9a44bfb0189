"""Train on the train split, pick the best validation epoch, score the test split."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

from .evaluator import EvalResult, evaluate_split
from .stream import EvalQuery, EventStream, StreamSplit, ingest_events, load_eval_queries, split_stream
from .trainer import FitResult, TrainConfig, Trainer


@dataclass
class HoldoutData:
    stream: EventStream
    split: StreamSplit
    val: list[EvalQuery]
    test: list[EvalQuery]

    def queries(self, which: str) -> list[EvalQuery]:
        return self.val if which == "val" else self.test


def load_holdout_dir(path) -> HoldoutData:
    """Reads ``events.csv``, ``val_negatives.txt`` and ``test_negatives.txt`` from ``path``."""
    d = Path(path)
    stream = ingest_events(d / "events.csv")
    split = split_stream(stream)
    val = load_eval_queries(d / "val_negatives.txt", stream, split.val)
    test = load_eval_queries(d / "test_negatives.txt", stream, split.test)
    return HoldoutData(stream, split, val, test)


@dataclass
class HoldoutRun:
    fit: FitResult
    test: EvalResult
    train_seconds: float
    test_seconds: float

    @property
    def test_mrr(self) -> float:
        return self.test.mrr

    def summary(self) -> dict:
        return {"best_epoch": self.fit.best_epoch, "history": self.fit.history,
                "val_mrr": self.fit.val_result.mrr if self.fit.val_result else None,
                "test_mrr": self.test.mrr, "train_seconds": self.train_seconds,
                "test_seconds": self.test_seconds}


def run_holdout(data, config: TrainConfig, step_log=None) -> HoldoutRun:
    """``data`` is a SynthData or HoldoutData.

    Validation events are replayed into the table before the test pass.
    """
    t0 = time.perf_counter()
    val = data.queries("val")
    trainer = Trainer(data.stream, data.split, config, val, step_log)
    res = trainer.fit()
    t1 = time.perf_counter()
    table = trainer.train_end_table()
    table.apply_stream(data.stream, data.split.val)
    test = evaluate_split(data.queries("test"), table, res.model, config,
                          config.n_segment_eval, config.threads)
    return HoldoutRun(res, test, t1 - t0, time.perf_counter() - t1)
