"""Command line entry point: ``rexnet <split|embed|train|evaluate|recommend|run>``.

Every stage reads its inputs from files and writes its outputs to files, so
stages can be rerun or swapped independently. Flags override values from
``--config`` (``key = value`` lines, keys spelled like the long flags), which
override built-in defaults.

Exit codes: 0 success, 1 runtime or training failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from typing import Sequence

import numpy as np

from . import __version__
from .corpus import build_corpus, shuffle_corpus, write_corpus
from .dataset import (
    SPLIT_HEADER,
    load_ratings,
    load_split,
    read_header,
    split_by_upl,
    user_average,
    write_split,
)
from .embeddings import (
    EmbeddingConfig,
    build_cooccurrence,
    load_embeddings,
    save_embeddings,
    train_embeddings,
    write_cooccurrence,
)
from .embeddings.table import format_float
from .errors import EmptySplitError, ParseError, RexNetError, TrainingError, ValidationError
from .evaluation import EvalReport, evaluate, order_by_score, save_report
from .neural import NetworkConfig, load_checkpoint, predict_preference, save_checkpoint
from .pipeline import fit_network
from .user_repr import derive_user_vectors, save_user_vectors

log = logging.getLogger("rexnet")


class UsageError(RexNetError):
    """Bad arguments or missing inputs (exit code 2)."""


# -- helpers -----------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _str_list(text: str) -> list[str]:
    return [x for x in text.replace(" ", "").split(",") if x]


def _require(path: str, what: str = "file") -> str:
    if not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _write_trace(path: str, values: Sequence[float]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch\tvalue\n")
        for k, v in enumerate(values, start=1):
            fh.write(f"{k}\t{format_float(np.float64(v))}\n")


def _embedding_config(args, method: str | None = None) -> EmbeddingConfig:
    return EmbeddingConfig(
        dim=args.dim, window=args.window, method=method or args.method, epochs=args.embed_epochs,
        learning_rate=args.embed_lr, negatives=args.negatives, noise_power=args.noise_power,
        x_max=args.x_max, alpha=args.alpha, seed=args.seed, reshuffle=not args.no_reshuffle,
        glove_export=args.glove_export, threads=args.threads,
    )


def _network_config(args) -> NetworkConfig:
    return NetworkConfig(
        tower_layers=tuple(args.tower_layers),
        shared_layer=None if args.no_shared_layer else args.shared_layer,
        dropout_tower=args.dropout_tower, dropout_shared=args.dropout_shared,
        learning_rate=args.lr, momentum=args.momentum, epochs=args.epochs,
        batch_size=args.batch_size, seed=args.seed,
    )


# -- stages --------------------------------------------------------------------

def stage_split(data: str, fmt: str, upl: int, seed: int, out: str) -> int:
    _require(data, "dataset file")
    dataset = load_ratings(data, fmt)
    split = split_by_upl(dataset, upl, seed)
    write_split(split, out, {"format": fmt, "dataset_users": dataset.n_users,
                             "dataset_items": dataset.n_items,
                             "dataset_density": f"{dataset.density():.6f}"})
    log.info("split: %d of %d users retained (upl=%d, seed=%d)",
             split.retained_users, dataset.n_users, upl, seed)
    return split.retained_users


def stage_embed(split_dir: str, config: EmbeddingConfig, out: str,
                dump_corpus: str | None = None, dump_cooccurrence: str | None = None) -> None:
    _require(os.path.join(split_dir, SPLIT_HEADER), "split header")
    split = load_split(split_dir)
    corpus = shuffle_corpus(build_corpus(split.train), config.seed)
    if dump_corpus:
        with open(dump_corpus, "w", encoding="utf-8", newline="\n") as fh:
            write_corpus(corpus, fh)
    if dump_cooccurrence:
        with open(dump_cooccurrence, "w", encoding="utf-8", newline="\n") as fh:
            write_cooccurrence(build_cooccurrence(corpus, config.window), fh)
    start = time.perf_counter()
    table = train_embeddings(corpus, config)
    log.info("embed: %s, %d items x %d dims in %.1fs", config.method, len(table), table.dim,
             time.perf_counter() - start)
    meta = {"stage": "embed", "upl": split.upl, "split_seed": split.seed}
    meta.update(config.to_dict())
    save_embeddings(table, out, meta)
    _write_trace(out + ".trace", table.trace)


def stage_train(split_dir: str, embeddings: str, config: NetworkConfig, out: str,
                users_out: str | None = None, normalize: str = "none", label: str | None = None) -> list[float]:
    _require(os.path.join(split_dir, SPLIT_HEADER), "split header")
    _require(embeddings, "embedding file")
    split = load_split(split_dir)
    items = load_embeddings(embeddings)
    params, trace, users = fit_network(split.train, items, config, normalize)
    meta = {"stage": "train", "upl": split.upl, "split_seed": split.seed,
            "user_vector_norm": normalize, "embedding_dim": items.dim,
            "label": label or _embedding_label(embeddings)}
    save_checkpoint(params, out, params.config.seed, meta)
    _write_trace(out + ".trace", trace)
    if users_out:
        save_user_vectors(users, users_out, meta)
    log.info("train: final epoch loss %.6f", trace[-1])
    return trace


def _embedding_label(path: str) -> str:
    meta_path = path + ".meta"
    if os.path.exists(meta_path):
        return read_header(meta_path).get("method", "rexnet")
    return "rexnet"


def stage_evaluate(split_dir: str, embeddings: str, checkpoint: str, cutoffs: Sequence[int],
                   out: str | None, denominator: str = "standard",
                   seeds: Sequence[int] | None = None, label: str | None = None) -> EvalReport:
    _require(os.path.join(split_dir, SPLIT_HEADER), "split header")
    _require(embeddings, "embedding file")
    _require(checkpoint, "checkpoint")
    split = load_split(split_dir)
    if not len(split.test):
        raise EmptySplitError("test split is empty")
    items = load_embeddings(embeddings)
    params, seed, meta = load_checkpoint(checkpoint)
    normalize = meta.get("user_vector_norm", "none")
    label = label or meta.get("label") or _embedding_label(embeddings)
    results = []
    if seeds:
        for s in seeds:
            retrained, _, users = fit_network(split.train, items, replace(params.config, seed=s), normalize)
            results.append(evaluate(retrained, split, items, users, cutoffs, denominator, s))
    else:
        users = derive_user_vectors(split.train, user_average(split.train), items, normalize)
        results.append(evaluate(params, split, items, users, cutoffs, denominator, seed))
    report = EvalReport(metadata={
        "upl": str(split.upl), "split_seed": str(split.seed),
        "network_seeds": ",".join(str(r.seed) for r in results),
        "ndcg_denominator": denominator,
        "users_evaluated": ",".join(str(r.users_evaluated) for r in results),
        "cold_items": str(results[0].cold_items),
        "network_config": _flat(params.config.to_dict(), skip=("seed",)),
    })
    report.add_runs(label, split.upl, results)
    if out:
        save_report(report, out)
    return report


def _flat(d: dict, skip: Sequence[str] = ()) -> str:
    return ";".join(f"{k}={v}" for k, v in d.items() if k not in skip)


# -- subcommands -----------------------------------------------------------------

def cmd_split(args) -> int:
    out = args.out or "split"
    retained = stage_split(args.data, args.format, args.upl, args.seed, out)
    print(f"retained_users\t{retained}")
    return 0


def cmd_embed(args) -> int:
    out = args.out or os.path.join(args.split, "items.emb")
    stage_embed(args.split, _embedding_config(args), out, args.dump_corpus, args.dump_cooccurrence)
    print(out)
    return 0


def cmd_train(args) -> int:
    embeddings = args.embeddings or os.path.join(args.split, "items.emb")
    out = args.out or os.path.join(args.split, "model.ckpt")
    users_out = args.users_out or os.path.join(os.path.dirname(out) or ".", "users.vec")
    stage_train(args.split, embeddings, _network_config(args), out, users_out, args.user_vector_norm)
    print(out)
    return 0


def cmd_evaluate(args) -> int:
    embeddings = args.embeddings or os.path.join(args.split, "items.emb")
    checkpoint = args.checkpoint or os.path.join(args.split, "model.ckpt")
    out = args.out or os.path.join(args.split, "report.txt")
    report = stage_evaluate(args.split, embeddings, checkpoint, args.cutoffs, out,
                            args.ndcg_denominator, args.seeds, args.label)
    print(report.table())
    return 0


def cmd_recommend(args) -> int:
    embeddings = args.embeddings or os.path.join(args.split, "items.emb")
    checkpoint = args.checkpoint or os.path.join(args.split, "model.ckpt")
    _require(os.path.join(args.split, SPLIT_HEADER), "split header")
    _require(embeddings, "embedding file")
    _require(checkpoint, "checkpoint")
    if args.n < 0:
        raise UsageError("--n must be >= 0")
    split = load_split(args.split)
    user = split.train.user_to_index.get(args.user)
    if user is None or user not in set(split.train.present_users.tolist()):
        raise UsageError(f"unknown user {args.user!r} (not in the train split)")
    if args.n == 0:
        return 0
    items = load_embeddings(embeddings)
    params, _, meta = load_checkpoint(checkpoint)
    users = derive_user_vectors(split.train, user_average(split.train), items,
                                meta.get("user_vector_norm", "none"))
    rated = {split.train.item_ids[i] for i in split.train.profile(user)[0].tolist()}
    index = split.train.item_to_index
    candidates = [t for t in items.tokens if t not in rated]
    if not candidates:
        return 0
    cand_idx = np.asarray([index.get(t, len(index) + k) for k, t in enumerate(candidates)])
    vecs = items.lookup(candidates).astype(np.float64)
    scores = np.atleast_1d(predict_preference(params, np.broadcast_to(users[user], vecs.shape), vecs))
    order = order_by_score(cand_idx, scores)[:args.n]
    for rank, k in enumerate(order.tolist(), start=1):
        print(f"{rank}\t{candidates[k]}\t{scores[k]:.6f}")
    return 0


def cmd_run(args) -> int:
    """Full pipeline per (method, upl, seed); existing artifacts are reused."""
    _require(args.data, "dataset file")
    seeds = args.seeds or [args.seed]
    methods = _str_list(args.method)
    report = EvalReport(metadata={
        "seeds": ",".join(map(str, seeds)), "ndcg_denominator": args.ndcg_denominator,
        "format": args.format,
    })
    for method in methods:
        for upl in args.upl:
            results = []
            for seed in seeds:
                root = os.path.join(args.out, f"{method}-upl{upl}", f"seed-{seed}")
                split_dir = os.path.join(root, "split")
                emb = os.path.join(root, "items.emb")
                ckpt = os.path.join(root, "model.ckpt")
                run_report = os.path.join(root, "report.txt")
                if args.force or not os.path.exists(os.path.join(split_dir, SPLIT_HEADER)):
                    stage_split(args.data, args.format, upl, seed, split_dir)
                if args.force or not os.path.exists(emb):
                    stage_embed(split_dir, replace(_embedding_config(args, method), seed=seed), emb)
                if args.force or not os.path.exists(ckpt):
                    stage_train(split_dir, emb, replace(_network_config(args), seed=seed), ckpt,
                                os.path.join(root, "users.vec"), args.user_vector_norm, method)
                single = stage_evaluate(split_dir, emb, ckpt, args.cutoffs, run_report,
                                        args.ndcg_denominator, None, method)
                results.append(single)
                log.info("run %s upl=%d seed=%d: %s", method, upl, seed,
                         ", ".join(f"NDCG@{r.cutoff}={r.mean:.4f}" for r in single.rows))
            for n in args.cutoffs:
                report.add_means(method, upl, n, [r.get(method, upl, n).mean for r in results])
    save_report(report, os.path.join(args.out, "report.txt"))
    print(report.table())
    return 0


# -- parser ------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="key = value file with flag defaults")
    p.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    p.add_argument("--threads", type=int, default=1,
                   help="embedding worker threads; 1 is fully deterministic (default 1)")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                   help="log verbosity on stderr (default INFO)")


def _split_flags(p, required: bool = True) -> None:
    p.add_argument("--data", required=required, metavar="FILE",
                   help="ratings file (ML-100K u.data or ML-1M ratings.dat)")
    p.add_argument("--format", default="tab", choices=["tab", "double_colon"],
                   help="'tab' for u.data, 'double_colon' for ratings.dat (default tab)")


def _embed_flags(p) -> None:
    g = p.add_argument_group("embedding")
    g.add_argument("--method", default="glove", help="glove or sgns (run accepts a comma list)")
    g.add_argument("--dim", type=int, default=100, help="vector size (default 100)")
    g.add_argument("--window", type=int, default=25, help="context half-width (default 25)")
    g.add_argument("--embed-epochs", type=int, default=15, help="embedding epochs (default 15)")
    g.add_argument("--embed-lr", type=float, default=None,
                   help="initial step size (default 0.05 glove, 0.025 sgns)")
    g.add_argument("--negatives", type=int, default=5, help="SGNS negatives per pair (default 5)")
    g.add_argument("--noise-power", type=float, default=0.75, help="SGNS noise exponent (default 0.75)")
    g.add_argument("--x-max", type=float, default=100.0, help="GloVe weighting cutoff (default 100)")
    g.add_argument("--alpha", type=float, default=0.75, help="GloVe weighting exponent (default 0.75)")
    g.add_argument("--no-reshuffle", action="store_true",
                   help="shuffle sentences once instead of every epoch")
    g.add_argument("--glove-export", default="sum", choices=["sum", "input"],
                   help="export w + w~ (sum) or w only (default sum)")


def _network_flags(p) -> None:
    g = p.add_argument_group("network")
    g.add_argument("--tower-layers", type=_int_list, default=[30, 20, 10, 5],
                   help="comma-separated tower widths (default 30,20,10,5)")
    g.add_argument("--shared-layer", type=int, default=5, help="shared layer width (default 5)")
    g.add_argument("--no-shared-layer", action="store_true",
                   help="feed the concatenated tower outputs straight to the output neuron")
    g.add_argument("--dropout-tower", type=float, default=0.4, help="dropout after each tower (default 0.4)")
    g.add_argument("--dropout-shared", type=float, default=0.2, help="dropout after the shared layer (default 0.2)")
    g.add_argument("--lr", type=float, default=0.01, help="SGD step size (default 0.01)")
    g.add_argument("--momentum", type=float, default=0.9, help="SGD momentum (default 0.9)")
    g.add_argument("--epochs", type=int, default=30, help="network epochs (default 30)")
    g.add_argument("--batch-size", type=int, default=64, help="mini-batch size (default 64)")
    g.add_argument("--user-vector-norm", default="none", choices=["none", "count"],
                   help="divide user vectors by profile length (default none)")


def _eval_flags(p) -> None:
    g = p.add_argument_group("evaluation")
    g.add_argument("--cutoffs", type=_int_list, default=[5, 10], help="NDCG cutoffs (default 5,10)")
    g.add_argument("--ndcg-denominator", default="standard", choices=["standard", "paper"],
                   help="position discount log2(i+1) (standard) or log2(i)+1 (paper)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rexnet", description=__doc__.split("\n")[0],
                                     allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help):
        p = sub.add_parser(name, help=help, description=help, allow_abbrev=False)
        _common(p)
        return p

    p = add("split", "fixed-UPL train/test split of a ratings file")
    _split_flags(p)
    p.add_argument("--upl", type=int, default=10, help="train ratings per user (default 10)")
    p.add_argument("--out", metavar="DIR", help="output directory (default ./split)")
    p.set_defaults(func=cmd_split)

    p = add("embed", "learn item embeddings from a split's train part")
    p.add_argument("--split", required=True, metavar="DIR", help="directory written by 'split'")
    _embed_flags(p)
    p.add_argument("--out", metavar="FILE", help="embedding table (default SPLIT/items.emb)")
    p.add_argument("--dump-corpus", metavar="FILE", help="also write the shuffled sentences")
    p.add_argument("--dump-cooccurrence", metavar="FILE", help="also write co-occurrence triples")
    p.set_defaults(func=cmd_embed)

    p = add("train", "derive user vectors and train the dual-tower network")
    p.add_argument("--split", required=True, metavar="DIR", help="directory written by 'split'")
    p.add_argument("--embeddings", metavar="FILE", help="item table (default SPLIT/items.emb)")
    _network_flags(p)
    p.add_argument("--out", metavar="FILE", help="checkpoint (default SPLIT/model.ckpt)")
    p.add_argument("--users-out", metavar="FILE", help="user vectors (default next to the checkpoint)")
    p.set_defaults(func=cmd_train)

    p = add("evaluate", "NDCG of a trained model on the split's test part")
    p.add_argument("--split", required=True, metavar="DIR", help="directory written by 'split'")
    p.add_argument("--embeddings", metavar="FILE", help="item table (default SPLIT/items.emb)")
    p.add_argument("--checkpoint", metavar="FILE", help="network (default SPLIT/model.ckpt)")
    _eval_flags(p)
    p.add_argument("--seeds", type=_int_list, default=None,
                   help="retrain the network once per seed and report mean ± std")
    p.add_argument("--label", help="method name in the report (default: embedding method)")
    p.add_argument("--out", metavar="FILE", help="report file (default SPLIT/report.txt)")
    p.set_defaults(func=cmd_evaluate)

    p = add("recommend", "top-n unrated items for one user")
    p.add_argument("--split", required=True, metavar="DIR", help="directory written by 'split'")
    p.add_argument("--embeddings", metavar="FILE", help="item table (default SPLIT/items.emb)")
    p.add_argument("--checkpoint", metavar="FILE", help="network (default SPLIT/model.ckpt)")
    p.add_argument("--user", required=True, help="external user id")
    p.add_argument("--n", type=int, default=10, help="list length (default 10)")
    p.set_defaults(func=cmd_recommend)

    p = add("run", "split, embed, train and evaluate for every method/UPL/seed")
    _split_flags(p)
    p.add_argument("--upl", type=_int_list, default=[10], help="comma-separated UPLs (default 10)")
    p.add_argument("--seeds", type=_int_list, default=None, help="comma-separated seeds (default --seed)")
    _embed_flags(p)
    _network_flags(p)
    _eval_flags(p)
    p.add_argument("--out", required=True, metavar="DIR", help="root directory for all artifacts")
    p.add_argument("--force", action="store_true", help="recompute artifacts that already exist")
    p.set_defaults(func=cmd_run)
    return parser


def _truthy(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    """Install ``--config`` values as defaults of the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    _require(known.config, "config file")
    values = read_header(known.config)
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((a for a in argv if a in sub_action.choices), None)
    if command is None:
        return
    all_flags = {opt.lstrip("-").replace("_", "-")
                 for p in sub_action.choices.values() for a in p._actions for opt in a.option_strings}
    target = sub_action.choices[command]
    by_flag = {opt.lstrip("-"): a for a in target._actions for opt in a.option_strings}
    defaults = {}
    for key, value in values.items():
        flag = key.replace("_", "-")
        if flag not in all_flags or flag == "config":
            raise UsageError(f"{known.config}: unknown key {key!r}")
        action = by_flag.get(flag)
        if action is None:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            defaults[action.dest] = _truthy(value)
        else:
            defaults[action.dest] = value
    target.set_defaults(**defaults)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except RexNetError as exc:
        print(f"rexnet: error: {exc}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except (UsageError, ParseError, ValidationError, OSError, ValueError) as exc:
        print(f"rexnet: error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, EmptySplitError, RexNetError) as exc:
        print(f"rexnet: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
