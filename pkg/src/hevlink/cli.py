"""Command-line entry point: synth, precompute, featurize, train, eval.

Every command writes ``manifest.json`` into ``--out-dir`` with the resolved
configuration, input checksums, seed, package version, metrics and per-phase
timings. Exit codes: 2 configuration error (including bad flags), 3 data
error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .adjacency import AdjacencyTable, precompute_snapshots, save_snapshot
from .correlation import FEATURE_NAMES, mode_dim, stream_featurize_kernel, truncation_width
from .discriminator import load_params, save_params
from .errors import ConfigError, DataError, HevError, NumericError
from .evaluator import evaluate_split
from .stream import EventStream, ingest_events, load_eval_queries, save_id_map, split_stream
from .synth import SynthConfig, generate
from .trainer import TrainConfig, Trainer

log = logging.getLogger("hevlink")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

_WIKI = TrainConfig()  # defaults are the tgbl-wiki column of the published configuration table


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Manifest:
    """Collects what a run needs to be reproduced and writes it as JSON."""

    def __init__(self, command: str, argv: list[str], seed: int):
        self.data = {
            "command": command, "argv": argv, "seed": seed, "version": __version__,
            "python": platform.python_version(), "numpy": np.__version__,
            "config": {}, "inputs": {}, "outputs": {}, "metrics": {}, "timings": {},
        }
        self._t0 = time.perf_counter()

    def input(self, name: str, path) -> None:
        self.data["inputs"][name] = {"path": str(path), "sha256": sha256_file(path)}

    def output(self, name: str, path) -> None:
        self.data["outputs"][name] = {"path": str(path), "sha256": sha256_file(path)}

    def phase(self, name: str, seconds: float) -> None:
        self.data["timings"][name] = round(seconds, 6)

    def write(self, out_dir: Path) -> Path:
        self.data["timings"]["total"] = round(time.perf_counter() - self._t0, 6)
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True, default=str))
        return path


class _Timer:
    def __init__(self, manifest: Manifest, name: str):
        self.manifest, self.name = manifest, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.manifest.phase(self.name, time.perf_counter() - self.t0)


class _Parser(argparse.ArgumentParser):
    # argparse already exits 2 on usage errors; keep the message on stderr
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out-dir", type=Path, default=Path("."), help="directory for outputs and manifest.json")
    p.add_argument("--seed", type=int, default=_WIKI.seed, help=f"run seed (default {_WIKI.seed})")


def _add_events(p: argparse.ArgumentParser, negatives: bool = False) -> None:
    p.add_argument("--events", type=Path, required=True, help="events CSV (src,dst,t) or HEV1 binary cache")
    if negatives:
        p.add_argument("--negatives", type=Path, help="negatives file aligned with the evaluated split")


def _add_model(p: argparse.ArgumentParser) -> None:
    w = _WIKI
    p.add_argument("--n-neighbor", type=int, default=w.n_neighbor,
                   help=f"adjacency table capacity (default {w.n_neighbor}, tgbl-wiki setting)")
    p.add_argument("--n-latest", type=int, default=w.n_latest,
                   help=f"events taken per query endpoint (default {w.n_latest}, tgbl-wiki setting)")
    p.add_argument("--mode", choices=["enhanced-12d", "basic-4d"], default=w.mode,
                   help=f"correlation vector (default {w.mode})")


def build_parser() -> argparse.ArgumentParser:
    w = _WIKI
    ap = _Parser(prog="hevlink", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"hevlink {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic stream with planted bursts")
    _add_common(p)
    s = SynthConfig()
    p.add_argument("--node-count", type=int, default=s.node_count)
    p.add_argument("--community-count", type=int, default=s.community_count)
    p.add_argument("--events-total", type=int, default=s.events_total)
    p.add_argument("--p-intra", type=float, default=s.p_intra)
    p.add_argument("--burst-length", type=int, default=s.burst_length)
    p.add_argument("--surprise-knob", type=float, default=s.surprise_knob)
    p.add_argument("--pool-size", type=int, default=s.pool_size)
    p.add_argument("--concurrent-bursts", type=int, default=s.concurrent_bursts)
    p.add_argument("--negatives-k", type=int, default=s.negatives_k)

    p = sub.add_parser("precompute", help="write adjacency snapshots at segment boundaries")
    _add_common(p)
    _add_events(p)
    p.add_argument("--n-neighbor", type=int, default=w.n_neighbor,
                   help=f"adjacency table capacity (default {w.n_neighbor}, tgbl-wiki setting)")
    p.add_argument("--n-segments", type=int, default=w.n_segment,
                   help=f"segments (default {w.n_segment}, tgbl-wiki setting)")
    p.add_argument("--split", choices=["train", "all"], default="train", help="events to segment")

    p = sub.add_parser("featurize", help="dump correlation sequences for a split, streaming")
    _add_common(p)
    _add_events(p)
    _add_model(p)
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="all")
    p.add_argument("--limit", type=int, default=None, help="only the first N queries of the split")

    p = sub.add_parser("train", help="segment-parallel training with best-validation selection")
    _add_common(p)
    _add_events(p, negatives=True)
    _add_model(p)
    p.add_argument("--n-segments", type=int, default=w.n_segment,
                   help=f"training segments (default {w.n_segment}, tgbl-wiki setting)")
    p.add_argument("--chunk-size", type=int, default=w.chunk_size,
                   help=f"events per chunk (default {w.chunk_size})")
    p.add_argument("--epochs", type=int, default=w.epochs, help=f"epochs (default {w.epochs}, tgbl-wiki setting)")
    p.add_argument("--lr", type=float, default=w.lr, help=f"Adam learning rate (default {w.lr}, tgbl-wiki setting)")
    p.add_argument("--threads", type=int, default=w.threads, help="worker cap; 1 runs sequentially")
    p.add_argument("--n-segment-eval", type=int, default=w.n_segment_eval, help="validation segments")
    p.add_argument("--checkpoint", type=Path, default=None,
                   help="checkpoint path (default <out-dir>/model.hevm)")

    p = sub.add_parser("eval", help="streaming filtered MRR of a checkpoint")
    _add_common(p)
    _add_events(p, negatives=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", choices=["val", "test"], default="test")
    p.add_argument("--mode", choices=["enhanced-12d", "basic-4d"], default=None,
                   help="must match the checkpoint if given")
    p.add_argument("--n-neighbor", type=int, default=None, help="defaults to the checkpoint's value")
    p.add_argument("--n-latest", type=int, default=None, help="defaults to the checkpoint's value")
    p.add_argument("--n-segment-eval", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    return ap


def _load(args, manifest: Manifest) -> EventStream:
    with _Timer(manifest, "ingest"):
        stream = ingest_events(args.events)
    manifest.input("events", args.events)
    return stream


def cmd_synth(args, manifest: Manifest) -> int:
    cfg = SynthConfig(node_count=args.node_count, community_count=args.community_count,
                      events_total=args.events_total, p_intra=args.p_intra,
                      burst_length=args.burst_length, surprise_knob=args.surprise_knob,
                      seed=args.seed, pool_size=args.pool_size,
                      concurrent_bursts=args.concurrent_bursts, negatives_k=args.negatives_k)
    manifest.data["config"] = asdict(cfg)
    with _Timer(manifest, "generate"):
        data = generate(cfg)
    with _Timer(manifest, "write"):
        paths = data.write(args.out_dir)
    for name, path in paths.items():
        manifest.output(name, path)
    manifest.data["metrics"] = {"events": len(data.stream), "nodes": data.stream.node_count,
                                "surprise_events": int((data.burst < 0).sum())}
    return 0


def cmd_precompute(args, manifest: Manifest) -> int:
    stream = _load(args, manifest)
    events = stream.slice(split_stream(stream).train) if args.split == "train" else stream
    manifest.data["config"] = {"n_neighbor": args.n_neighbor, "n_segments": args.n_segments,
                               "split": args.split}
    if args.n_segments < 1 or args.n_neighbor < 1:
        raise ConfigError("--n-segments and --n-neighbor must be >= 1")
    with _Timer(manifest, "precompute"):
        snaps = precompute_snapshots(events, args.n_segments, capacity=args.n_neighbor,
                                     node_count=stream.node_count)
    with _Timer(manifest, "write"):
        for s, snap in enumerate(snaps):
            path = args.out_dir / f"segment_{s:04d}.heva"
            save_snapshot(snap, path)
            manifest.output(path.stem, path)
    manifest.data["metrics"] = {"snapshots": len(snaps), "events": len(events)}
    return 0


def _split_range(stream: EventStream, name: str) -> range:
    if name == "all":
        return range(len(stream))
    return getattr(split_stream(stream), name)


def cmd_featurize(args, manifest: Manifest) -> int:
    stream = _load(args, manifest)
    r = _split_range(stream, args.split)
    if args.limit is not None:
        r = range(r.start, min(r.stop, r.start + max(args.limit, 0)))
    manifest.data["config"] = {"n_neighbor": args.n_neighbor, "n_latest": args.n_latest,
                               "mode": args.mode, "split": args.split, "limit": args.limit}
    if args.n_neighbor < 1 or args.n_latest < 1:
        raise ConfigError("--n-neighbor and --n-latest must be >= 1")
    dim = mode_dim(args.mode)
    path = args.out_dir / "features.csv"
    raw = stream.raw_ids
    with _Timer(manifest, "featurize"):
        table = AdjacencyTable(args.n_neighbor, stream.node_count)
        table.apply(stream.src[:r.start], stream.dst[:r.start], stream.t[:r.start])
        qs, qd, qt = stream.src[r.start:r.stop], stream.dst[r.start:r.stop], stream.t[r.start:r.stop]
        lmax = 2 * args.n_latest
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(["query_src", "query_dst", "query_t", "row_index"] + FEATURE_NAMES[args.mode]) + "\n")
            for b0 in range(0, len(qs), 4096):
                sl = slice(b0, b0 + 4096)
                out = np.zeros((len(qs[sl]), 1, lmax, dim))
                lens = np.zeros((len(qs[sl]), 1), dtype=np.int64)
                cursor, stale = stream_featurize_kernel(
                    table.src, table.dst, table.t, table.idx, table.partner, table.length,
                    table.cursor, qs[sl], qd[sl], qt[sl], qd[sl, None].copy(), args.n_latest,
                    truncation_width(args.n_neighbor), dim == 12, out, lens)
                table.cursor = int(cursor)
                for i in range(len(out)):
                    head = f"{raw[qs[b0 + i]]},{raw[qd[b0 + i]]},{qt[b0 + i]}"
                    for j in range(lens[i, 0]):
                        fh.write(f"{head},{j}," + ",".join(f"{x:.9f}" for x in out[i, 0, j]) + "\n")
    manifest.output("features", path)
    manifest.data["metrics"] = {"queries": len(r)}
    return 0


def cmd_train(args, manifest: Manifest) -> int:
    stream = _load(args, manifest)
    split = split_stream(stream)
    cfg = TrainConfig(n_neighbor=args.n_neighbor, n_latest=args.n_latest, n_segment=args.n_segments,
                      chunk_size=args.chunk_size, epochs=args.epochs, lr=args.lr, seed=args.seed,
                      mode=args.mode, n_segment_eval=args.n_segment_eval, threads=args.threads)
    manifest.data["config"] = cfg.to_dict()
    val = None
    if args.negatives is not None:
        with _Timer(manifest, "load_negatives"):
            val = load_eval_queries(args.negatives, stream, split.val)
        manifest.input("negatives", args.negatives)
    save_id_map(stream, args.out_dir / "id_map.csv")
    step_path = args.out_dir / "steps.csv"
    with open(step_path, "w", encoding="utf-8") as step_log:
        step_log.write("step,epoch,segment_count,active_segments,loss\n")
        with _Timer(manifest, "train"):
            trainer = Trainer(stream, split, cfg, val, step_log)
            manifest.phase("precompute", trainer.precompute_seconds)
            result = trainer.fit()
    manifest.output("steps", step_path)
    manifest.data["metrics"] = {"best_epoch": result.best_epoch, "steps": result.steps,
                                "history": result.history,
                                "val_mrr": result.val_result.mrr if result.val_result else None}
    if result.val_result is not None:
        print(f"val MRR {result.val_result.mrr:.4f}")
    if cfg.epochs > 0:
        ckpt = args.checkpoint or args.out_dir / "model.hevm"
        save_params(result.model, ckpt)
        manifest.output("checkpoint", ckpt)
    return 0


def cmd_eval(args, manifest: Manifest) -> int:
    stream = _load(args, manifest)
    split = split_stream(stream)
    model = load_params(args.checkpoint)
    manifest.input("checkpoint", args.checkpoint)
    saved = model.meta.get("train_config", {})
    mode = saved.get("mode", "enhanced-12d")
    if args.mode is not None and args.mode != mode:
        raise ConfigError(f"--mode {args.mode} does not match checkpoint mode {mode}")
    if mode_dim(mode) != model.config.input_dim:
        raise ConfigError(f"checkpoint input width {model.config.input_dim} does not fit mode {mode}")
    cfg = TrainConfig(n_neighbor=args.n_neighbor or saved.get("n_neighbor", _WIKI.n_neighbor),
                      n_latest=args.n_latest or saved.get("n_latest", _WIKI.n_latest),
                      mode=mode, seed=args.seed, n_segment_eval=args.n_segment_eval,
                      threads=args.threads)
    manifest.data["config"] = {**cfg.to_dict(), "split": args.split}
    if args.negatives is None:
        raise ConfigError("eval needs --negatives")
    r = getattr(split, args.split)
    with _Timer(manifest, "load_negatives"):
        queries = load_eval_queries(args.negatives, stream, r)
    manifest.input("negatives", args.negatives)
    with _Timer(manifest, "replay"):
        table = AdjacencyTable(cfg.n_neighbor, stream.node_count)
        table.apply(stream.src[:r.start], stream.dst[:r.start], stream.t[:r.start])
    with _Timer(manifest, "evaluate"):
        res = evaluate_split(queries, table, model, cfg, cfg.n_segment_eval, cfg.threads)
    config_hash = hashlib.sha256(json.dumps(manifest.data["config"], sort_keys=True).encode()).hexdigest()
    dump, summary = args.out_dir / f"{args.split}_queries.csv", args.out_dir / f"{args.split}_summary.json"
    res.write_dump(dump, stream.raw_ids)
    res.write_summary(summary, split=args.split, config_hash=config_hash)
    manifest.output("dump", dump)
    manifest.output("summary", summary)
    manifest.data["metrics"] = res.summary(split=args.split)
    print(f"{res.mrr:.4f}")
    return 0


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, OSError)):
        return EXIT_DATA
    return EXIT_CONFIG


COMMANDS = {"synth": cmd_synth, "precompute": cmd_precompute, "featurize": cmd_featurize,
            "train": cmd_train, "eval": cmd_eval}


def _configure_logging() -> None:
    level = os.environ.get("HEV_LOG", "info").lower()
    if level not in _LOG_LEVELS:
        raise ConfigError(f"HEV_LOG must be one of {sorted(_LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=_LOG_LEVELS[level], format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        _configure_logging()
        args.out_dir.mkdir(parents=True, exist_ok=True)
        manifest = Manifest(args.command, argv, args.seed)
        code = COMMANDS[args.command](args, manifest)
        manifest.write(args.out_dir)
        return code
    except (HevError, ValueError, OSError) as exc:
        print(f"hevlink {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code(exc)

if __name__ == "__main__":
    sys.exit(main())
