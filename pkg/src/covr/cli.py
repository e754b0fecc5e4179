"""Command-line entry point: ``covr {train,eval,retrieve,stats,compare-fusion}``.

Exit codes: 0 success, 2 configuration/usage error, 3 data or format
error, 4 numeric failure. Every run writes one JSON manifest recording
the resolved flags, FNV-1a digests of the inputs and the output paths.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

from . import _kernels
from .autograd import no_grad
from .data import dataset_stats, read_triplets
from .embeddings import EmbeddingStore, embed_text, normalize, tokenize
from .errors import ConfigError, CovrError, DataError
from .evaluation import DEFAULT_KS, compare_fusion, evaluate_dataset
from .fusion import FUSIONS, STRATEGIES, fuse_function, init_params, save_checkpoint
from .retrieval import build_index, search_topk
from .sources import EmbeddingSources, StoreDescriptions
from .training import TrainConfig, load_optimizer, save_optimizer, train

log = logging.getLogger("covr")


class Run:
    """Collects manifest fields while a command executes."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.config = {k: v for k, v in vars(args).items() if k != "func"}
        self.inputs: dict[str, str] = {}
        self.artifacts: dict[str, str] = {}
        self.start = time.perf_counter()

    def read(self, path: str) -> bytes:
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc.strerror}") from None
        self.inputs[str(path)] = f"{_kernels.fnv1a64(data):016x}"
        return data

    def store(self, path: str) -> EmbeddingStore:
        from .embeddings import decode_embedding_store

        try:
            return decode_embedding_store(self.read(path))
        except DataError as exc:
            raise DataError(f"{path}: {exc}") from None

    def triplets(self, path: str):
        self.read(path)
        try:
            return read_triplets(path)
        except DataError as exc:
            raise DataError(f"{path}: {exc}") from None

    def checkpoint(self, path: str):
        from .fusion import decode_params

        try:
            return decode_params(self.read(path))
        except DataError as exc:
            raise DataError(f"{path}: {exc}") from None

    def write_manifest(self, path: str | Path) -> None:
        manifest = {
            "command": self.command,
            "config": self.config,
            "seed": self.config.get("seed"),
            "inputs": self.inputs,
            "artifacts": self.artifacts,
            "backend": _kernels.BACKEND,
            "duration_seconds": round(time.perf_counter() - self.start, 3),
        }
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _ks(text: str) -> list[int]:
    try:
        ks = [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--ks expects comma-separated integers, got {text!r}")
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("--ks values must be positive")
    return ks


def _sources(run: Run, args) -> EmbeddingSources:
    return EmbeddingSources(run.store(args.query_store),
                            StoreDescriptions(run.store(args.desc_store)),
                            run.store(args.target_store))


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    run = Run("train", args)
    triplets = run.triplets(args.triplets)
    sources = _sources(run, args)
    d = args.d or sources.dim
    config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, seed=args.seed,
        d=d, layers=args.layers, heads=args.heads, vocab=args.vocab, max_len=args.max_len,
        tau=args.tau, lam=args.lam, beta=args.beta, shuffle=not args.no_shuffle,
        grad_clip=args.grad_clip, optimizer=args.optimizer, fusion=args.fusion,
        strategy=args.strategy,
    )
    params, optimizer = None, None
    if args.init_checkpoint:
        params = run.checkpoint(args.init_checkpoint)
        if args.init_optimizer:
            run.read(args.init_optimizer)
            optimizer = load_optimizer(args.init_optimizer, params, args.lr)
    else:
        params = init_params(d, args.layers, args.heads, args.vocab, args.seed, args.max_len)
    result = train(triplets, sources, config, params, optimizer, start_epoch=args.start_epoch)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "checkpoint": out / "checkpoint.cvrp",
        "optimizer": out / "optimizer.cvrp",
        "loss_trace": out / "loss_trace.csv",
    }
    save_checkpoint(result.params, paths["checkpoint"])
    save_optimizer(result.optimizer, paths["optimizer"])
    rows = ["epoch,loss,alpha"]
    for i, (loss, alpha) in enumerate(zip(result.losses, result.alphas)):
        rows.append(f"{args.start_epoch + i},{loss!r},{alpha!r}")
    paths["loss_trace"].write_text("\n".join(rows) + "\n", encoding="utf-8")
    run.artifacts = {k: str(v) for k, v in paths.items()}
    run.write_manifest(args.manifest or out / "manifest.json")
    if result.losses:
        print(f"final loss {result.losses[-1]:.6f}, alpha {result.alphas[-1]:.4f}")
    return 0


def cmd_eval(args) -> int:
    run = Run("eval", args)
    params = run.checkpoint(args.checkpoint)
    triplets = run.triplets(args.triplets)
    if not triplets:
        raise DataError(f"{args.triplets}: no triplets")
    sources = _sources(run, args)
    report = evaluate_dataset(triplets, sources, params, args.fusion, args.ks,
                              args.exclude_self, args.seed)
    report.write(args.out)
    run.artifacts = {"report": str(args.out)}
    run.write_manifest(args.manifest or f"{args.out}.manifest.json")
    for k in report.ks:
        print(f"R@{k} = {report.recalls[k]:.4f}")
    return 0


def cmd_retrieve(args) -> int:
    run = Run("retrieve", args)
    params = run.checkpoint(args.checkpoint)
    queries = run.store(args.query_store)
    targets = run.store(args.target_store)
    cfg = params.config
    if args.query_id not in queries:
        raise DataError(f"unknown query id {args.query_id!r}")
    if args.desc_id is not None:
        if args.desc_store is None:
            raise ConfigError("--desc-id needs --desc-store")
        descs = run.store(args.desc_store)
        if args.desc_id not in descs:
            raise DataError(f"unknown description id {args.desc_id!r}")
        desc = descs.get(args.desc_id)
    elif args.description is not None:
        desc = embed_text(args.description, cfg.d, args.seed)
    else:
        raise ConfigError("one of --desc-id or --description is required")
    if queries.dim != cfg.d or targets.dim != cfg.d or desc.shape[0] != cfg.d:
        raise ConfigError(f"store dimensions do not match checkpoint d={cfg.d}")
    q = normalize(queries.get(args.query_id))
    tokens = tokenize(args.modification, cfg.max_len, cfg.vocab)
    with no_grad():
        fused = fuse_function(args.fusion)(q, normalize(desc), tokens, params).data[0]
    result = search_topk(build_index(targets), fused, args.topk)
    lines = ["rank,id,score"]
    lines += [f"{r},{key},{score:.6f}" for r, (key, score) in enumerate(result, start=1)]
    sys.stdout.write("\n".join(lines) + "\n")
    run.write_manifest(args.manifest or "covr_retrieve.manifest.json")
    return 0


def cmd_stats(args) -> int:
    run = Run("stats", args)
    triplets = run.triplets(args.triplets)
    if not triplets:
        raise DataError(f"{args.triplets}: no triplets")
    stats = dataset_stats(triplets)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "description_hist": out / "description_words.csv",
        "modification_hist": out / "modification_words.csv",
    }
    for key, hist in (("description_hist", stats.description_hist),
                      ("modification_hist", stats.modification_hist)):
        rows = ["value,count"] + [f"{v},{c}" for v, c in hist.items()]
        paths[key].write_text("\n".join(rows) + "\n", encoding="utf-8")
    print("\n".join(stats.summary_lines()))
    run.artifacts = {k: str(v) for k, v in paths.items()}
    run.write_manifest(args.manifest or out / "stats.manifest.json")
    return 0


def cmd_compare_fusion(args) -> int:
    run = Run("compare-fusion", args)
    params_a = run.checkpoint(args.checkpoint_a)
    params_b = run.checkpoint(args.checkpoint_b) if args.checkpoint_b else params_a
    if params_a.config.d != params_b.config.d:
        raise ConfigError(f"checkpoints disagree on d: {params_a.config.d} vs {params_b.config.d}")
    triplets = run.triplets(args.triplets)
    if not triplets:
        raise DataError(f"{args.triplets}: no triplets")
    report = compare_fusion(triplets, _sources(run, args), params_a, params_b,
                            args.fusion_a, args.fusion_b)
    report.write(args.out)
    for method in report.similarities:
        print(f"{method}: mean {report.mean(method):.4f}, median {report.median(method):.4f}")
    run.artifacts = {"report": str(args.out)}
    run.write_manifest(args.manifest or f"{args.out}.manifest.json")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_stores(p: argparse.ArgumentParser, desc_required: bool = True) -> None:
    p.add_argument("--query-store", required=True, help="CVRE store of query video embeddings")
    p.add_argument("--desc-store", required=desc_required,
                   help="CVRE store of description embeddings, keyed by query id")
    p.add_argument("--target-store", required=True, help="CVRE store of target video embeddings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="covr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the fusion network")
    p.add_argument("--triplets", required=True)
    _add_stores(p)
    p.add_argument("--out", default="covr_run", help="output directory")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--d", type=int, default=None, help="model width (default: store dim)")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--vocab", type=int, default=65_536)
    p.add_argument("--max-len", type=int, default=77)
    p.add_argument("--tau", type=float, default=0.07)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--grad-clip", type=float, default=None)
    p.add_argument("--no-shuffle", action="store_true")
    p.add_argument("--fusion", choices=FUSIONS, default="unified")
    p.add_argument("--strategy", choices=STRATEGIES, default="weighted-mean")
    p.add_argument("--init-checkpoint", default=None, help="resume from this checkpoint")
    p.add_argument("--init-optimizer", default=None, help="optimizer state saved with it")
    p.add_argument("--start-epoch", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Recall@K over a triplet file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--triplets", required=True)
    _add_stores(p)
    p.add_argument("--out", default="eval_report.txt")
    p.add_argument("--ks", type=_ks, default=list(DEFAULT_KS))
    p.add_argument("--fusion", choices=FUSIONS, default="unified")
    p.add_argument("--exclude-self", action="store_true",
                   help="drop the query video's own id from its ranking")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("retrieve", help="top-K targets for one composed query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query-store", required=True)
    p.add_argument("--target-store", required=True)
    p.add_argument("--desc-store", default=None)
    p.add_argument("--query-id", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--desc-id", default=None)
    group.add_argument("--description", default=None, help="free text, embedded with the toy embedder")
    p.add_argument("--modification", required=True)
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--fusion", choices=FUSIONS, default="unified")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("stats", help="word-count statistics of a triplet file")
    p.add_argument("--triplets", required=True)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("compare-fusion", help="similarity-to-target histograms for two fusions")
    p.add_argument("--checkpoint-a", required=True)
    p.add_argument("--checkpoint-b", default=None, help="defaults to --checkpoint-a")
    p.add_argument("--fusion-a", choices=FUSIONS, default="unified")
    p.add_argument("--fusion-b", choices=FUSIONS, default="pairwise")
    p.add_argument("--triplets", required=True)
    _add_stores(p)
    p.add_argument("--out", default="fusion_comparison.csv")
    p.set_defaults(func=cmd_compare_fusion)

    for p in sub.choices.values():
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--manifest", default=None, help="manifest path (default beside outputs)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "topk", 1) < 1:
        print("covr: error: --topk must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except CovrError as exc:
        print(f"covr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"covr: I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
