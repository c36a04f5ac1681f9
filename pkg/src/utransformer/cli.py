"""Command-line entry points.

Exit codes: 0 success, 1 validation error (bad config, checkpoint or input),
2 runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import act as act_mod
from . import checkpoint as ckpt
from . import config as config_mod
from . import model as M
from . import tasks as T
from . import training as tr
from .errors import (CheckpointError, ConfigError, LengthError, TrainingDiverged, UTError,
                     VocabularyError)

log = logging.getLogger("utransformer")

VALIDATION_ERRORS = (ConfigError, CheckpointError, VocabularyError, LengthError)


def _dump(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def _load_run(args) -> config_mod.RunConfig:
    run = config_mod.load(args.config)
    if getattr(args, "seed", None) is not None:
        run.seed = args.seed
    if getattr(args, "out", None) is not None:
        run.out_dir = args.out
    return run


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.config:
        spec = config_mod.load(args.config).task.split_spec()
    else:
        spec = T.SplitSpec(args.train_len, args.eval_len)
    spec.validate()
    samples = T.take(args.task, spec, args.seed, args.split, args.n)
    out = Path(args.out)
    try:
        T.write_tsv(samples, out)
    except OSError as exc:
        log.error("cannot write %s: %s", out, exc.strerror)
        return 2
    _dump({"path": str(out), "lines": len(samples), "task": args.task, "split": args.split})
    return 0


def run_training(run: config_mod.RunConfig, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run.out_dir = str(out)
    run.save(out / "config.json")
    start = time.perf_counter()
    res = tr.train(run, out_dir=out, log_file=out / "log.jsonl")
    summary = {
        "wall_seconds": round(time.perf_counter() - start, 3),
        "out_dir": str(out),
        "final_checkpoint": res.final_checkpoint,
        "best_checkpoint": res.best_checkpoint,
        "n_parameters": res.params.count(),
        "reports": {k: v.to_dict() for k, v in res.final_reports.items()},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary


def cmd_train(args) -> int:
    run = _load_run(args)
    out = run.out_dir or f"runs/{run.task.name}-seed{run.seed}"
    _dump(run_training(run, out))
    return 0


def cmd_eval(args) -> int:
    params, run, manifest = ckpt.load_checkpoint(args.checkpoint)
    task_cfg = run.task
    if args.task:
        task_cfg = replace(task_cfg, name=args.task)
    n = args.n if args.n is not None else run.train.n_eval
    seed = run.seed if args.seed is None else args.seed
    report = tr.evaluate(params, run.model, task_cfg.name, task_cfg.split_spec(), seed,
                         args.split, n, run.train.eval_batch_size)
    out = {"checkpoint": str(args.checkpoint), "step": manifest["step"], "task": task_cfg.name}
    out.update(report.to_dict())
    if report.ponder_mean is not None:
        out["ponder_summary"] = act_mod.format_ponder(report.ponder_mean, report.ponder_std)
    _dump(out)
    return 0


def inspect_bundle(params, cfg: M.ModelConfig, text: str, max_len=None) -> dict:
    """Attention maps per step and head, plus ponder data, for one input string."""
    src = np.array(T.tokenize(text), dtype=np.int64)
    if src.size == 0:
        raise LengthError("inspect needs a non-empty input")
    max_len = max_len or cfg.max_tgt_len
    gen = M.generate_greedy(src, params, cfg, max_len, T.BOS, T.EOS)
    tgt_in = np.array([[T.BOS] + gen.tokens], dtype=np.int64)
    trace: list = []
    with M.tn.no_grad():
        fwd = M.forward(params, cfg, src[None], tgt_in, trace=trace)
    blocks = {("encoder", "self"): [], ("decoder", "self"): [], ("decoder", "cross"): []}
    counters = {key: 0 for key in blocks}
    for entry in trace:
        side, kind, _t = entry["tag"]
        counters[(side, kind)] += 1
        heads = entry["weights"][0]
        blocks[(side, kind)].append({"step": counters[(side, kind)],
                                     "heads": [h.tolist() for h in heads]})

    def ponder(stack):
        if stack.ponder is None:
            return None
        nu = stack.ponder[0]
        st = act_mod.ponder_stats(nu)
        return {"n_updates": nu.tolist(), "remainders": stack.remainders.data[0].tolist(),
                "mean": st["mean"], "std": st["std"],
                "histogram": {str(k): v for k, v in st["histogram"].items()},
                "summary": act_mod.format_ponder(st["mean"], st["std"])}

    return {
        "input": text,
        "input_tokens": src.tolist(),
        "output": T.detokenize(gen.tokens),
        "terminated": gen.terminated,
        "act_enabled": cfg.act_enabled,
        "encoder": {"self_attention": blocks[("encoder", "self")],
                    "steps": fwd.encoder.steps, "ponder": ponder(fwd.encoder)},
        "decoder": {"self_attention": blocks[("decoder", "self")],
                    "cross_attention": blocks[("decoder", "cross")],
                    "steps": fwd.decoder.steps, "ponder": ponder(fwd.decoder)},
    }


def cmd_inspect(args) -> int:
    params, run, _ = ckpt.load_checkpoint(args.checkpoint)
    _dump(inspect_bundle(params, run.model, args.input, args.max_len))
    return 0


METRICS = ("in_char_acc", "in_seq_acc", "out_char_acc", "out_seq_acc")


def compare(run: config_mod.RunConfig, out_dir) -> dict:
    """Train tied (UT) and untied (fixed-stack baseline) variants on every seed."""
    out = Path(out_dir)
    rows = []
    for seed in run.compare_seeds:
        for variant, tied in (("tied", True), ("untied", False)):
            r = replace(run, seed=seed, model=replace(run.model, tie_weights=tied))
            summary = run_training(r, out / f"{variant}-seed{seed}")
            rep = summary["reports"]
            rows.append({"seed": seed, "variant": variant,
                         "in_char_acc": rep["in"]["char_acc"],
                         "in_seq_acc": rep["in"]["seq_acc"],
                         "out_char_acc": rep["out"]["char_acc"],
                         "out_seq_acc": rep["out"]["seq_acc"],
                         "n_parameters": summary["n_parameters"],
                         "wall_seconds": summary["wall_seconds"]})
    median = {}
    for variant in ("tied", "untied"):
        sel = [r for r in rows if r["variant"] == variant]
        median[variant] = {m: statistics.median(r[m] for r in sel) for m in METRICS}
    table = {"task": run.task.name, "seeds": list(run.compare_seeds), "rows": rows,
             "median": median}
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare.json").write_text(json.dumps(table, indent=2) + "\n", encoding="utf-8")
    return table


def cmd_compare(args) -> int:
    run = _load_run(args)
    out = run.out_dir or f"runs/compare-{run.task.name}"
    _dump(compare(run, out))
    return 0


def cmd_grad_check(args) -> int:
    if args.config:
        run = config_mod.load(args.config)
        names = {"config": {k: getattr(run.model, k) for k in
                            ("transition", "act_enabled", "act_threshold", "act_max_steps")}}
    else:
        names = tr.GRAD_CHECK_CONFIGS
    results = {}
    for name, overrides in names.items():
        cfg = tr.tiny_config(**overrides)
        results[name] = tr.grad_check(cfg, tol=args.tol, seed=args.seed or 0)
    _dump(results)
    return 0 if all(r["passed"] for r in results.values()) else 2


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="utransformer", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write task samples as src<TAB>tgt lines")
    g.add_argument("--task", required=True, choices=T.TASKS)
    g.add_argument("--split", default="train", choices=T.SPLITS)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output TSV path")
    g.add_argument("--config", help="take the length protocol from this run config")
    g.add_argument("--train-len", type=int, default=12)
    g.add_argument("--eval-len", type=int, default=24)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model from a JSON run config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy-decode a split with a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--task", choices=T.TASKS)
    e.add_argument("--split", default="out", choices=T.SPLITS)
    e.add_argument("--n", type=int)
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="dump attention maps and ponder times for one input")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--max-len", type=int)
    i.set_defaults(func=cmd_inspect)

    c = sub.add_parser("compare", help="tied vs untied weights over several seeds")
    c.add_argument("--config", required=True)
    c.add_argument("--out", help="output directory")
    c.set_defaults(func=cmd_compare)

    k = sub.add_parser("grad-check", help="finite-difference check of backprop gradients")
    k.add_argument("--config", help="check this run config's transition/ACT settings")
    k.add_argument("--tol", type=float, default=1e-4)
    k.add_argument("--seed", type=int)
    k.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        problems = getattr(exc, "problems", [str(exc)])
        _dump({"error": type(exc).__name__, "problems": problems})
        return 1
    except TrainingDiverged as exc:
        _dump({"error": "TrainingDiverged", "message": str(exc),
               "last_good_checkpoint": exc.last_good_checkpoint})
        return 2
    except (UTError, FloatingPointError, OSError) as exc:
        _dump({"error": type(exc).__name__, "message": str(exc)})
        return 2


if __name__ == "__main__":
    sys.exit(main())
