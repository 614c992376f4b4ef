"""Command-line entry point.

Exit codes: 0 success, 1 a property or assertion failed, 2 configuration
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from wpr.analysis import motivate_rows, penalty_correlation
from wpr.cost_kernel import read_embeddings
from wpr.errors import (
    ConfigError,
    DisconnectedSupport,
    MissingSeries,
    NonConvergence,
    NumericalBlowup,
)
from wpr.io import load_config, read_metrics, save_snapshot, format_record
from wpr.trainer import Regularizer, TrainConfig, fit_reference, make_env, train

log = logging.getLogger("wpr")

EXIT_OK, EXIT_PROPERTY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

# default beta per regularizer for the comparison harness
DEFAULT_BETAS = {
    "rkl": 0.005,
    "fkl": 0.05,
    "js": 0.05,
    "alpha=0.5": 0.01,
    "tv": 0.01,
    "chisq": 0.001,
    "wpr": 0.05,
    "none": 0.0,
}


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# --- motivate -----------------------------------------------------------------

def cmd_motivate(args) -> int:
    rows = motivate_rows(lam=args.lam, swap=args.swap)
    lines = ["quantity\tpi_1\tpi_2"]
    lines += [f"{name}\t{a:.12g}\t{b:.12g}" for name, a, b in rows]
    vals = {name: (a, b) for name, a, b in rows}
    w1, w2 = vals["wasserstein"]
    js1, js2 = vals["js"]
    ordered = (w1 > w2) if args.swap else (w1 < w2)
    js_equal = abs(js1 - js2) <= 1e-12
    lines.append(f"wasserstein_ordering\t{'PASS' if ordered else 'FAIL'}")
    lines.append(f"js_equal\t{'PASS' if js_equal else 'FAIL'}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK if ordered and js_equal else EXIT_PROPERTY


# --- verify -------------------------------------------------------------------

def cmd_verify(args) -> int:
    from wpr.verify import run_suite

    lams = [float(x) for x in args.lam.split(",")] if args.lam else None
    results = run_suite(seed=args.seed, n=args.n, d_max=args.d, lams=lams, tol=args.tol)
    lines = [r.line() for r in results]
    ok = all(r.passed for r in results)
    lines.append(f"overall {'PASS' if ok else 'FAIL'}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK if ok else EXIT_PROPERTY


# --- train / compare ----------------------------------------------------------

_TRAIN_FIELDS = {
    "lambda": "lam", "k1": "k1", "k2": "k2", "sinkhorn_iters": "sinkhorn_iters", "tol": "tol",
    "metric": "metric", "seed": "seed", "steps": "steps", "batch": "batch_size",
    "temperature": "temperature", "gamma": "gamma", "lambda_gae": "lambda_gae",
    "clip_ratio": "clip_ratio", "value_clip": "value_clip", "lr_policy": "lr_policy",
    "lr_value": "lr_value", "max_response_len": "max_response_len", "dummy_cost": "dummy_cost",
    "sft_steps": "sft_steps",
}


def _overrides(args) -> dict:
    keys = ("lam", "beta", "k1", "k2", "sinkhorn_iters", "tol", "regularizer", "metric", "seed",
            "steps", "batch", "temperature", "out", "embeddings")
    out = {}
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out["lambda" if k == "lam" else k] = v
    if getattr(args, "regularizers", None):
        out["regularizers"] = args.regularizers
    return out


def build_run(cfg: dict, regularizer: str | None = None, beta: float | None = None):
    """Turn a flat config mapping into ``(TrainConfig, env)``."""
    if "divergence" in cfg and "regularizer" not in cfg:
        cfg = {**cfg, "regularizer": cfg["divergence"]}
    reg_name = regularizer if regularizer is not None else cfg.get("regularizer", "wpr")
    try:
        reg = Regularizer.parse(reg_name, 0.0)
        if beta is None:
            beta = cfg.get("beta", DEFAULT_BETAS.get(reg.label, 0.05))
        reg = Regularizer.parse(reg_name, beta)
    except ValueError as exc:
        raise ConfigError(str(exc), field="regularizer") from None
    kwargs = {dst: cfg[src] for src, dst in _TRAIN_FIELDS.items() if src in cfg}
    if "clamp_low" in cfg or "clamp_high" in cfg:
        kwargs["clamp"] = (cfg.get("clamp_low", -50.0), cfg.get("clamp_high", 50.0))
    if kwargs.get("metric", "euclidean") not in ("euclidean", "cosine"):
        raise ConfigError(f"unknown metric {kwargs['metric']!r}", field="metric")
    try:
        tcfg = TrainConfig(regularizer=reg, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    emb = None
    if cfg.get("embeddings"):
        emb = read_embeddings(cfg["embeddings"])
    env = make_env(d=emb.d if emb is not None else 64, seed=tcfg.seed,
                   max_response_len=tcfg.max_response_len, embeddings=emb)
    return tcfg, env


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    tcfg, env = build_run(cfg)
    out = Path(cfg.get("out") or "runs/train")
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.jsonl"
    with metrics_path.open("w", encoding="utf-8") as fh:
        def write(rec):
            fh.write(format_record(rec) + "\n")
            fh.flush()
        result = train(tcfg, env, on_record=write)
    save_snapshot(out / "policy.wpr", result.policy)
    last = result.metrics[-1]
    print(f"wrote {metrics_path} ({len(result.metrics)} records) and {out / 'policy.wpr'}")
    print(f"final mean_reward={last['mean_reward']:.6f} mean_kl_ref={last['mean_kl_ref']:.6f} "
          f"mean_w_ref={last['mean_w_ref']:.6f}")
    return EXIT_OK


ALL_REGULARIZERS = ("rkl", "fkl", "js", "alpha=0.5", "tv", "chisq", "wpr", "none")


def _tail_mean(metrics, key, window=100):
    vals = [m[key] for m in metrics[-window:]]
    return float(np.mean(vals))


def cmd_compare(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    names = [s.strip() for s in str(cfg.get("regularizers", ",".join(ALL_REGULARIZERS))).split(",")
             if s.strip()]
    seeds = max(1, args.seeds)
    rows = ["regularizer\tbeta\tfinal_reward\tfinal_kl_ref\tfinal_w_ref\tclamp_activations\tstability"]
    references = {}
    for name in names:
        finals, kls, ws, clamps, stable = [], [], [], 0, 0
        beta = None
        for s in range(seeds):
            tcfg, env = build_run({**cfg, "seed": cfg.get("seed", 0) + s}, regularizer=name)
            beta = tcfg.regularizer.beta
            if tcfg.seed not in references:
                references[tcfg.seed] = fit_reference(env, tcfg.sft_steps, tcfg.sft_samples,
                                                      tcfg.lr_sft, tcfg.seed)
            try:
                res = train(tcfg, env, reference=references[tcfg.seed])
            except NumericalBlowup as exc:
                log.warning("%s seed %d: %s", name, s, exc)
                continue
            stable += 1
            clamps += res.clamp_activations
            finals.append(_tail_mean(res.metrics, "mean_reward"))
            kls.append(_tail_mean(res.metrics, "mean_kl_ref"))
            ws.append(_tail_mean(res.metrics, "mean_w_ref"))
        mean = (lambda xs: float(np.mean(xs)) if xs else float("nan"))
        rows.append(f"{name}\t{beta:g}\t{mean(finals):.6f}\t{mean(kls):.6f}\t{mean(ws):.6f}\t"
                    f"{clamps}\t{stable / seeds:.3f}")
    _emit("\n".join(rows) + "\n", cfg.get("out"))
    return EXIT_OK


# --- penalty-corr ---------------------------------------------------------------

def cmd_penalty_corr(args) -> int:
    try:
        rows = read_metrics(args.metrics)
    except OSError as exc:
        raise ConfigError(f"cannot read metrics: {exc.strerror}") from None
    for key in ("mean_kl_ref", "mean_penalty"):
        if not rows or any(key not in r for r in rows):
            raise MissingSeries(key)
    kl = [r["mean_kl_ref"] for r in rows]
    w = [r["mean_penalty"] for r in rows]
    r, slope = penalty_correlation(kl, w)
    ok = math.isfinite(r) and math.isfinite(slope) and r > 0.5 and slope < 1.0
    text = (f"records\t{len(rows)}\npearson_r\t{r:.6f}\nslope\t{slope:.6f}\n"
            f"r_above_0.5\t{'PASS' if math.isfinite(r) and r > 0.5 else 'FAIL'}\n"
            f"slope_below_1\t{'PASS' if math.isfinite(slope) and slope < 1 else 'FAIL'}\n")
    _emit(text, args.out)
    return EXIT_OK if ok else EXIT_PROPERTY


# --- bench ----------------------------------------------------------------------

def cmd_bench(args) -> int:
    from wpr.bench import time_truncated_solve

    t = time_truncated_solve(d=args.d, k2=args.k2, lam=args.lam, iterations=args.sinkhorn_iters,
                             repeats=args.repeats, seed=args.seed)
    ok = t.median_ms < args.budget_ms
    _emit(t.line() + f" budget_ms={args.budget_ms:g} {'PASS' if ok else 'FAIL'}\n", args.out)
    return EXIT_OK if ok else EXIT_PROPERTY


# --- parser ---------------------------------------------------------------------

def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="key=value config file")
    p.add_argument("--lambda", dest="lam", type=float, help="entropic regularization strength")
    p.add_argument("--beta", type=float, help="penalty weight")
    p.add_argument("--k1", type=int, help="nearest-neighbour kernel size")
    p.add_argument("--k2", type=int, help="top-k truncation per distribution")
    p.add_argument("--sinkhorn-iters", dest="sinkhorn_iters", type=int)
    p.add_argument("--tol", type=float, help="Sinkhorn stopping tolerance on phi")
    p.add_argument("--divergence", "--regularizer", dest="regularizer",
                   help="wpr, none, rkl, fkl, js, alpha=A, tv or chisq")
    p.add_argument("--metric", choices=("euclidean", "cosine"))
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--out")
    p.add_argument("--embeddings", help="embedding table in the 'd m' text format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wpr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("motivate", help="divergence table for the four-token example")
    p.add_argument("--lambda", dest="lam", type=float, default=100.0)
    p.add_argument("--swap", action="store_true", help="exchange the two alternatives")
    p.add_argument("--out")
    p.set_defaults(func=cmd_motivate)

    p = sub.add_parser("verify", help="randomized property suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=100, help="number of random instances")
    p.add_argument("--d", type=int, default=16, help="largest vocabulary size")
    p.add_argument("--lambda", dest="lam", help="comma-separated lambda values")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", help="run the regularized PPO loop")
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="train once per regularizer and tabulate")
    _train_flags(p)
    p.add_argument("--regularizers", help="comma-separated subset; default all")
    p.add_argument("--seeds", type=int, default=1)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("penalty-corr", help="correlate KL and Wasserstein penalty series")
    p.add_argument("metrics")
    p.add_argument("--out")
    p.set_defaults(func=cmd_penalty_corr)

    p = sub.add_parser("bench", help="time one truncated solve")
    p.add_argument("--d", type=int, default=256)
    p.add_argument("--k2", type=int, default=128)
    p.add_argument("--lambda", dest="lam", type=float, default=100.0)
    p.add_argument("--sinkhorn-iters", dest="sinkhorn_iters", type=int, default=10)
    p.add_argument("--repeats", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget-ms", dest="budget_ms", type=float, default=5.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, MissingSeries) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalBlowup, NonConvergence, DisconnectedSupport) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
