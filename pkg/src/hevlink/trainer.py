"""Segment-parallel training.

The training stream is cut into ``n_segment`` contiguous segments of
``ceil(|E| / n_segment)`` slots (the last padded with ``-1`` sentinels). Each
segment starts from the table snapshot at its boundary and is consumed in
chunks of ``chunk_size`` slots: every real event in a chunk, plus a sampled
negative, is encoded against the table as it stood at the chunk start, and the
chunk's events are applied once its gradient is computed.

Global steps run in lockstep: at step ``k`` every segment that still has
slots contributes its ``k``-th chunk, the chunks are trained as one batch and
one Adam update is applied.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .adjacency import AdjacencyTable, TableSnapshot, precompute_snapshots, segment_length
from .correlation import featurize, mode_dim
from .discriminator import Discriminator, DiscriminatorConfig, DropoutKey
from .errors import ConfigError
from .evaluator import EvalResult, evaluate_split
from .stream import PAD, Event, EvalQuery, EventStream, StreamSplit

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Hyperparameters; defaults follow the published Wiki configuration."""

    n_neighbor: int = 15
    n_latest: int = 10
    n_segment: int = 50
    chunk_size: int = 200
    epochs: int = 50
    lr: float = 1e-4
    seed: int = 1
    mode: str = "enhanced-12d"
    negatives_per_positive: int = 1
    n_segment_eval: int = 1
    dropout: float = 0.1
    threads: int = 1

    def __post_init__(self):
        for name in ("n_neighbor", "n_latest", "n_segment", "chunk_size",
                     "negatives_per_positive", "n_segment_eval", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        try:
            mode_dim(self.mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(input_dim=mode_dim(self.mode), dropout=self.dropout,
                                   max_positions=max(512, 2 * self.n_latest))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SegmentState:
    index: int
    start: int  # stream index of slot 0
    slots: np.ndarray  # (seg_len, 3) rows of src, dst, t; PAD rows at the tail
    table: AdjacencyTable
    cursor: int = 0
    pads_skipped: int = 0
    events_applied: int = 0

    @property
    def exhausted(self) -> bool:
        return self.cursor >= len(self.slots)

    @property
    def real_count(self) -> int:
        return int((self.slots[:, 0] != PAD).sum())


def segment_stream(events: EventStream, n_segment: int,
                   snapshots: list[TableSnapshot]) -> tuple[list[SegmentState], np.ndarray]:
    """Cut ``events`` into padded segments, each owning a copy of its snapshot.

    Returns the segment states and the padded ``(n_segment, seg_len, 3)`` slot tensor.
    """
    if len(snapshots) != n_segment:
        raise ValueError("one snapshot per segment required")
    n = len(events)
    seg = segment_length(n, n_segment)
    tensor = np.full((n_segment * seg, 3), PAD, dtype=np.int64)
    tensor[:n, 0] = events.src
    tensor[:n, 1] = events.dst
    tensor[:n, 2] = events.t
    tensor = tensor.reshape(n_segment, seg, 3)
    base = snapshots[0].boundary_index
    states = []
    for s in range(n_segment):
        snap = snapshots[s]
        if snap.boundary_index != base + min(s * seg, n):
            raise ValueError(f"snapshot {s} sits at {snap.boundary_index}, expected {base + s * seg}")
        states.append(SegmentState(s, base + s * seg, tensor[s], snap.table.copy()))
    return states, tensor


def sample_negative(positive: Event, node_count: int, rng: np.random.Generator) -> Event:
    """Corrupt the destination with a uniform node different from it."""
    if node_count < 2:
        raise ConfigError("negative sampling needs at least two nodes")
    while True:
        v = int(rng.integers(node_count))
        if v != positive[1]:
            return Event(positive[0], v, positive[2])


def sample_negative_dsts(dst: np.ndarray, node_count: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorised rejection sampling: uniform over nodes, redrawn where equal to ``dst``."""
    if node_count < 2:
        raise ConfigError("negative sampling needs at least two nodes")
    out = rng.integers(node_count, size=len(dst))
    bad = np.flatnonzero(out == dst)
    while len(bad):
        out[bad] = rng.integers(node_count, size=len(bad))
        bad = bad[out[bad] == dst[bad]]
    return out.astype(np.int64)


@dataclass
class ChunkBatch:
    features: np.ndarray
    lengths: np.ndarray
    labels: np.ndarray
    uids: np.ndarray
    history: np.ndarray  # stream indices of history events per item (-1 padded)
    query_index: np.ndarray  # stream index of each item's query event
    rows: np.ndarray  # real event rows of the chunk
    n_slots: int


def prepare_chunk(seg: SegmentState, config: TrainConfig, node_count: int,
                  rng: np.random.Generator) -> ChunkBatch:
    """Encode the next chunk against the segment's table as it stands now."""
    rows = seg.slots[seg.cursor:seg.cursor + config.chunk_size]
    real = rows[:, 0] != PAD
    ev = rows[real]
    qidx = seg.start + seg.cursor + np.flatnonzero(real)
    k = config.negatives_per_positive
    n = len(ev)
    qs = np.tile(ev[:, 0], k + 1)
    qd = np.empty(n * (k + 1), dtype=np.int64)
    qd[:n] = ev[:, 1]
    for j in range(k):
        qd[n * (j + 1):n * (j + 2)] = sample_negative_dsts(ev[:, 1], node_count, rng)
    feats, lens, hist = featurize(seg.table, qs, qd, config.n_latest, config.mode, with_history=True)
    labels = np.zeros(n * (k + 1))
    labels[:n] = 1.0
    slot = np.repeat(np.arange(k + 1), n)
    uids = np.tile(qidx, k + 1) * (k + 1) + slot
    return ChunkBatch(feats, lens, labels, uids, hist, np.tile(qidx, k + 1), ev, len(rows))


def commit_chunk(seg: SegmentState, batch: ChunkBatch) -> None:
    """Apply the chunk's real events to the segment table and advance the cursor."""
    rows = batch.rows
    if len(rows):
        seg.table.apply(rows[:, 0], rows[:, 1], rows[:, 2])
    seg.events_applied += len(rows)
    seg.pads_skipped += batch.n_slots - len(rows)
    seg.cursor += batch.n_slots


def train_chunk(seg: SegmentState, model: Discriminator, config: TrainConfig, node_count: int,
                rng: np.random.Generator, key: DropoutKey):
    """Gradient contribution and loss of one chunk; advances the segment."""
    batch = prepare_chunk(seg, config, node_count, rng)
    if len(batch.labels) == 0:
        commit_chunk(seg, batch)
        return None, 0.0, 0
    loss, grads = model.loss_and_grad(batch.features, batch.lengths, batch.labels, key, batch.uids)
    commit_chunk(seg, batch)
    return grads, loss, len(batch.labels)


@dataclass
class StepRecord:
    step: int
    epoch: int
    segment_count: int
    active_segments: int
    loss: float

    def line(self) -> str:
        return f"{self.step},{self.epoch},{self.segment_count},{self.active_segments},{self.loss:.9f}"


def combine_chunks(batches: list[ChunkBatch]) -> ChunkBatch | None:
    """Concatenate chunk batches (in the given order) into one training batch."""
    batches = [b for b in batches if len(b.labels)]
    if not batches:
        return None
    cat = lambda name: np.concatenate([getattr(b, name) for b in batches])
    return ChunkBatch(cat("features"), cat("lengths"), cat("labels"), cat("uids"), cat("history"),
                      cat("query_index"), cat("rows"), sum(b.n_slots for b in batches))


def train_epoch(segments: list[SegmentState], model: Discriminator, config: TrainConfig,
                epoch: int, node_count: int, start_step: int = 0,
                pool: ThreadPoolExecutor | None = None, on_step=None) -> tuple[float, int]:
    """Run lockstep global steps until every segment is exhausted.

    Returns ``(epoch_loss, steps_taken)``. Each step encodes the active
    segments' chunks (on ``pool`` if given), runs one forward/backward pass over
    their concatenation and applies one update. Only encoding is threaded, so
    runs with and without a pool are bit-identical.
    """
    rngs = [np.random.default_rng([config.seed, epoch, s.index]) for s in segments]
    step = start_step
    total = 0.0
    while True:
        active = [s for s in segments if not s.exhausted]
        if not active:
            break

        def prep(seg):
            return prepare_chunk(seg, config, node_count, rngs[seg.index])

        parts = list(pool.map(prep, active)) if pool is not None else [prep(s) for s in active]
        batch = combine_chunks(parts)
        loss = 0.0
        if batch is not None:
            loss, grads = model.loss_and_grad(batch.features, batch.lengths, batch.labels,
                                              DropoutKey(config.seed, step), batch.uids)
            model.apply_gradients(grads, config.lr)
        for seg, part in zip(active, parts):
            commit_chunk(seg, part)
        total += loss
        if on_step is not None:
            on_step(StepRecord(step, epoch, len(segments), len(active), loss))
        step += 1
    return total, step - start_step


@dataclass
class FitResult:
    model: Discriminator
    best_epoch: int
    history: list[dict] = field(default_factory=list)
    steps: int = 0
    val_result: EvalResult | None = None


class Trainer:
    """Owns snapshots and the model across epochs."""

    def __init__(self, stream: EventStream, split: StreamSplit, config: TrainConfig,
                 val_queries: list[EvalQuery] | None = None, step_log=None):
        self.stream = stream
        self.split = split
        self.config = config
        self.val_queries = val_queries
        self.step_log = step_log
        self.train_events = stream.slice(split.train)
        self.node_count = stream.node_count
        t0 = time.perf_counter()
        self.snapshots = precompute_snapshots(self.train_events, config.n_segment,
                                              capacity=config.n_neighbor, node_count=self.node_count)
        self.precompute_seconds = time.perf_counter() - t0
        self.model = Discriminator.create(config.discriminator_config(), config.seed)
        self.global_step = 0
        self._train_end_table: AdjacencyTable | None = None

    def new_segments(self) -> list[SegmentState]:
        segs, _ = segment_stream(self.train_events, self.config.n_segment, self.snapshots)
        return segs

    def train_end_table(self) -> AdjacencyTable:
        if self._train_end_table is None:
            tab = self.snapshots[-1].table.copy()
            last = self.snapshots[-1].boundary_index
            tab.apply_stream(self.train_events, range(last, len(self.train_events)))
            self._train_end_table = tab
        return self._train_end_table.copy()

    def _on_step(self, rec: StepRecord) -> None:
        if self.step_log is not None:
            self.step_log.write(rec.line() + "\n")
        log.debug("step %s", rec.line())

    def run_epoch(self, epoch: int, pool=None) -> tuple[float, int]:
        segs = self.new_segments()
        loss, steps = train_epoch(segs, self.model, self.config, epoch, self.node_count,
                                  self.global_step, pool, self._on_step)
        self.global_step += steps
        return loss, steps

    def validate(self, model: Discriminator | None = None) -> EvalResult | None:
        if not self.val_queries:
            return None
        return evaluate_split(self.val_queries, self.train_end_table(), model or self.model,
                              self.config, self.config.n_segment_eval, self.config.threads)

    def fit(self) -> FitResult:
        cfg = self.config
        best = self.model.copy()
        best_mrr, best_epoch, best_res = -1.0, 0, None
        history = []
        pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
        try:
            if cfg.epochs == 0:
                res = self.validate()
                history.append({"epoch": 0, "loss": None, "val_mrr": res.mrr if res else None})
                return FitResult(best, 0, history, 0, res)
            for epoch in range(1, cfg.epochs + 1):
                t0 = time.perf_counter()
                loss, steps = self.run_epoch(epoch, pool)
                t_train = time.perf_counter() - t0
                res = self.validate()
                rec = {"epoch": epoch, "loss": loss, "steps": steps, "train_seconds": t_train,
                       "val_mrr": res.mrr if res else None,
                       "seconds": time.perf_counter() - t0}
                history.append(rec)
                log.info("epoch %d loss %.4f steps %d val_mrr %s (%.1fs)", epoch, loss, steps,
                         f"{res.mrr:.4f}" if res else "-", rec["seconds"])
                # without validation queries the last epoch wins
                score = res.mrr if res else epoch
                if score > best_mrr:
                    best_mrr, best_epoch, best_res = score, epoch, res
                    best = self.model.copy()
        finally:
            if pool is not None:
                pool.shutdown()
        best.meta = {"train_config": cfg.to_dict(), "best_epoch": best_epoch,
                     "global_step": self.global_step}
        return FitResult(best, best_epoch, history, self.global_step, best_res)


def fit(stream: EventStream, split: StreamSplit, config: TrainConfig,
        val_queries: list[EvalQuery] | None = None, step_log=None) -> FitResult:
    return Trainer(stream, split, config, val_queries, step_log).fit()


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
