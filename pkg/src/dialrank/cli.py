"""Command-line entry point tying data, training, and evaluation together.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical divergence during training.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import pathlib
import sys

import numpy as np

from .config import ConfigError, RunConfig
from .data import DataError, generate_synthetic_dataset, load_dataset, save_dataset, vocab_corpus
from .encoders import Vocabulary
from .generative import beam_search
from .metrics import ensemble_scores, ranking_from_scores
from .ranking import fuse_rankings
from .tensor import Tensor, no_grad
from .train import Checkpoint, TrainingDiverged, evaluate, index_dataset, merged_scores, score_turn, train

USAGE_ERROR = 1
DATA_ERROR = 2
DIVERGENCE_ERROR = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """One optional flag per RunConfig field; set flags override the file."""
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool" or isinstance(f.default, bool):
            parser.add_argument(flag, default=None, type=lambda s: s.lower() in ("1", "true", "yes"))
        elif isinstance(f.default, int):
            parser.add_argument(flag, default=None, type=int)
        elif isinstance(f.default, float):
            parser.add_argument(flag, default=None, type=float)
        else:
            parser.add_argument(flag, default=None, type=str)


def _load_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {
        f.name: getattr(args, f.name)
        for f in dataclasses.fields(RunConfig)
        if getattr(args, f.name, None) is not None
    }
    return config.with_overrides(overrides)


def build_parser() -> _Parser:
    parser = _Parser(prog="dialrank", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dialog dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("build-vocab", help="build a vocabulary from a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--min-count", type=int, default=4)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="run two-phase training")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab", default=None, help="vocabulary file; built from the data when absent")
    _add_config_flags(p)

    p = sub.add_parser("evaluate", help="score a dataset with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["primary", "two-stage"], default="two-stage")
    p.add_argument("--report", required=True)

    p = sub.add_parser("rank", help="dump per-turn scores and rankings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["primary", "two-stage"], default="two-stage")
    p.add_argument("--out", required=True)

    p = sub.add_parser("beam", help="generate candidate answers by beam search")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--width", type=int, default=None, help="beam width; defaults to the checkpoint config")
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ensemble", help="sum score files and write merged rankings")
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--out", required=True)

    return parser


def _cmd_gen_data(args) -> int:
    config = _load_config(args)
    records = generate_synthetic_dataset(config, config.seed)
    save_dataset(records, args.out)
    turns = sum(len(r.turns) for r in records)
    print(f"wrote {len(records)} dialogs / {turns} turns to {args.out}")
    return 0


def _cmd_build_vocab(args) -> int:
    records = load_dataset(args.data)
    vocab = Vocabulary.build(vocab_corpus(records), args.min_count)
    vocab.save(args.out)
    print(f"vocabulary of {len(vocab)} tokens (min_count={args.min_count}) written to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = _load_config(args)
    records = load_dataset(args.data)
    vocab = Vocabulary.load(args.vocab) if args.vocab else None
    result = train(config, records, vocab=vocab, out_dir=args.out)
    final = result.loss_log[-1] if result.loss_log else {}
    print(
        f"trained {config.model} model for {len(result.loss_log)} epochs; "
        f"final loss {final.get('loss', float('nan')):.6f}; artifacts in {args.out}"
    )
    return 0


def _cmd_evaluate(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    model = checkpoint.build_model()
    dataset = index_dataset(load_dataset(args.data), checkpoint.vocab)
    report = evaluate(model, dataset, mode=args.mode)
    with open(args.report, "w") as f:
        json.dump(report.to_dict(), f, indent=2)
    print(
        f"{args.mode}: ndcg={report.ndcg:.4f} mrr={report.mrr:.4f} r@1={report.r1:.4f} "
        f"r@5={report.r5:.4f} r@10={report.r10:.4f} mean_rank={report.mean_rank:.2f} "
        f"({report.turns} turns)"
    )
    return 0


def _cmd_rank(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    model = checkpoint.build_model()
    dataset = index_dataset(load_dataset(args.data), checkpoint.vocab)
    n = 0
    with open(args.out, "w") as f:
        for dialog in dataset:
            for t in range(len(dialog.turns)):
                stage = score_turn(model, dialog, t, args.mode)
                f.write(
                    json.dumps(
                        {
                            "dialog_id": dialog.dialog_id,
                            "turn": t,
                            "scores": merged_scores(stage).tolist(),
                            "ranking": stage.ranking,
                        }
                    )
                    + "\n"
                )
                n += 1
    print(f"wrote scores and rankings for {n} turns to {args.out}")
    return 0


def _cmd_beam(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    if checkpoint.config.model != "generative":
        raise DataError(f"beam generation needs a generative checkpoint, got {checkpoint.config.model!r}")
    model = checkpoint.build_model()
    width = args.width if args.width is not None else checkpoint.config.beam_width
    dataset = index_dataset(load_dataset(args.data), checkpoint.vocab)
    n = 0
    with open(args.out, "w") as f:
        for dialog in dataset:
            for t in range(len(dialog.turns)):
                turn = dialog.turns[t]
                with no_grad():
                    V = Tensor(dialog.features.T)
                    ctx = model.encode_context(turn.question, dialog.history_items(t), V)
                    results = beam_search(ctx.m_q, ctx.e_p, width, args.max_len, model.decoder)
                f.write(
                    json.dumps(
                        {
                            "dialog_id": dialog.dialog_id,
                            "turn": t,
                            "candidates": [checkpoint.vocab.decode(seq) for seq, _ in results],
                            "log_probs": [lp for _, lp in results],
                        }
                    )
                    + "\n"
                )
                n += 1
    print(f"generated {width}-beam candidates for {n} turns to {args.out}")
    return 0


def _read_scores_file(path) -> dict:
    rows = {}
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                key = (int(obj["dialog_id"]), int(obj["turn"]))
                rows[key] = [float(s) for s in obj["scores"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{line_no}: bad scores row: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no score rows")
    return rows


def _cmd_ensemble(args) -> int:
    tables = [_read_scores_file(p) for p in args.scores]
    keys = set(tables[0])
    for path, table in zip(args.scores[1:], tables[1:]):
        if set(table) != keys:
            raise DataError(f"{path}: turn coverage differs from {args.scores[0]}")
    with open(args.out, "w") as f:
        for key in sorted(keys):
            summed = ensemble_scores([table[key] for table in tables])
            f.write(
                json.dumps(
                    {
                        "dialog_id": key[0],
                        "turn": key[1],
                        "scores": summed.tolist(),
                        "ranking": ranking_from_scores(summed),
                    }
                )
                + "\n"
            )
    print(f"ensembled {len(tables)} score files over {len(keys)} turns into {args.out}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "build-vocab": _cmd_build_vocab,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "rank": _cmd_rank,
    "beam": _cmd_beam,
    "ensemble": _cmd_ensemble,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_ERROR
    try:
        return _COMMANDS[args.command](args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DIVERGENCE_ERROR
    except (DataError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
