"""Command-line entry point.

Subcommands:
  gen-data       write a deterministic synthetic corpus
  train          recognition training (CTC on gloss targets)
  pretrain-tcp   pre-training with pseudo glosses from text
  finetune       translation fine-tuning (gloss or gloss-free CTC term)
  eval           evaluate a checkpoint on a split
  export-graphs  dump constructed graphs for one sample as DOT or JSON
  gradcheck      run the finite-difference gradient suite

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; we want 1
        raise _UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="signgraph", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("gen-data", help="generate the synthetic corpus")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--config", help="JSON overriding synthesis fields")

    for name in ("train", "pretrain-tcp", "finetune"):
        t = sub.add_parser(name)
        t.add_argument("--config", required=True, help="TrainConfig JSON")
        t.add_argument("--out", required=True, help="run directory")
        t.add_argument("--seed", type=int, help="override config seed")
        if name == "finetune":
            t.add_argument("--checkpoint", help="init checkpoint directory")

    e = sub.add_parser("eval")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="dev")

    x = sub.add_parser("export-graphs")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--sample", required=True, help="sample id")
    x.add_argument("--format", choices=("dot", "json"), default="dot")
    x.add_argument("--out", required=True)

    sub.add_parser("gradcheck")
    return p


def _cmd_gen_data(args) -> int:
    from .datasynth import SynthSpec, gen_corpus
    spec = SynthSpec()
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
        import dataclasses
        known = {f.name for f in dataclasses.fields(SynthSpec)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"gen-data config: unknown keys {unknown}")
        for k in ("frames_per_gloss", "glosses_per_sample"):
            if k in raw:
                raw[k] = tuple(raw[k])
        spec = dataclasses.replace(spec, **raw)
    counts = gen_corpus(spec, args.seed, args.out)
    print(f"wrote {counts} to {args.out}")
    return 0


def _load_train_config(args):
    from .train import TrainConfig
    cfg = TrainConfig.from_json(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _cmd_train(args) -> int:
    from . import train as tr
    cfg = _load_train_config(args)
    best = tr.train_cslr(cfg, args.out)
    print(f"best checkpoint: {best}")
    return 0


def _cmd_pretrain_tcp(args) -> int:
    from . import train as tr
    cfg = _load_train_config(args)
    best = tr.pretrain_tcp(cfg, args.out)
    print(f"best checkpoint: {best}")
    return 0


def _cmd_finetune(args) -> int:
    from . import train as tr
    cfg = _load_train_config(args)
    best = tr.finetune_translation(cfg, args.out, init_dir=args.checkpoint)
    print(f"best checkpoint: {best}")
    return 0


def _cmd_eval(args) -> int:
    from . import train as tr
    record, extras = tr.evaluate(args.checkpoint, args.split)
    print(tr.METRICS_HEADER)
    print(record.csv_row())
    if extras["token_accuracy"] is not None:
        print(f"token_accuracy={extras['token_accuracy']:.6f}")
    return 0


def _cmd_export_graphs(args) -> int:
    from . import train as tr
    written = tr.export_graphs(args.checkpoint, args.sample, args.format, args.out)
    for path in written:
        print(path)
    return 0


def _cmd_gradcheck(args) -> int:
    from . import gradsuite
    results = gradsuite.run_suite()
    print(gradsuite.format_table(results))
    return 0 if all(r.passed for _, r in results) else 2


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "pretrain-tcp": _cmd_pretrain_tcp,
    "finetune": _cmd_finetune,
    "eval": _cmd_eval,
    "export-graphs": _cmd_export_graphs,
    "gradcheck": _cmd_gradcheck,
}


def run_cli(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    if args.command in ("train", "pretrain-tcp", "finetune") \
            and not Path(args.config).exists():
        print(f"error: config not found: {args.config}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (KeyboardInterrupt,):
        raise
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))
