"""``softlabel`` command line: synth | decompose | bound | experiment.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
divergence during training.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from softlabel.bounds import crossover_csv, format_float, loglog_slope, rate_crossover
from softlabel.divergence import kl, kl_smoothed
from softlabel.exceptions import (
    ConfigError,
    DegenerateSupervisionError,
    MissingDistributionError,
    SimplexError,
    TrainingDivergedError,
)
from softlabel.experiment import (
    ExperimentConfig,
    results_csv,
    run_experiment,
    summarize,
    summary_csv,
    timing_csv,
)
from softlabel.mixing import decompose
from softlabel.simplex import affine_combine, restrict_exclude
from softlabel.supervision import LambdaPolicy, SupervisionKind, mix, supervision_matrix
from softlabel.synth import SyntheticConfig, generate, label_noise_rate, read_jsonl, write_jsonl

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

DECOMPOSE_HEADER = ("index", "kl_total", "bias", "variance", "lambda_star", "lambda_used")


class DataError(Exception):
    pass


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: malformed JSON ({exc.msg})") from exc


def _write(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def cmd_synth(args) -> int:
    data = _load_json(args.config)
    data = data.get("synth", data)
    if args.seed is not None:
        data = {**data, "seed": args.seed}
    config = SyntheticConfig.from_dict(data)
    train, test = generate(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, instances in (("train", train), ("test", test)):
        write_jsonl(out / f"{split}.jsonl", instances, {**config.to_meta(), "split": split})
    noise = label_noise_rate(train) if train else None
    summary = {**config.to_meta(), "train_path": str(out / "train.jsonl"), "test_path": str(out / "test.jsonl")}
    if noise is not None:
        summary["label_noise_rate"] = noise.rate
        summary["max_confidence_histogram"] = noise.counts.tolist()
    print(json.dumps(summary))
    return EXIT_OK


def _decompose_row(inst, pa_row, lam):
    try:
        rep = decompose(inst.p_star, inst.hard, pa_row, lam)
    except DegenerateSupervisionError:
        total = kl(inst.p_star, pa_row)
        return total, total, 0.0, math.nan, lam
    return rep.kl_total, rep.bias, rep.variance, rep.lambda_star, rep.lambda_used


def _smoothed_bias(inst, pa_row):
    off = inst.p_star.mass_excluding(inst.hard)
    if off <= 0:
        return 0.0
    try:
        pa_restricted = restrict_exclude(pa_row, inst.hard)
    except SimplexError:
        return off * kl_smoothed(restrict_exclude(inst.p_star, inst.hard), np.full(len(pa_row), 1.0 / len(pa_row)))
    return off * kl_smoothed(restrict_exclude(inst.p_star, inst.hard), pa_restricted)


def decompose_csv(instances, kind, policy) -> str:
    kind = SupervisionKind.parse(kind)
    policy = LambdaPolicy.parse(policy)
    if not instances:
        raise DataError("dataset is empty")
    for i, inst in enumerate(instances):
        if inst.p_star is None:
            raise MissingDistributionError(f"instance {i} has no p_star")
        if kind is SupervisionKind.CUSTOM and inst.p_a is None:
            raise MissingDistributionError(f"instance {i} has no p_a")
    k = instances[0].p_star.num_classes
    hard = np.array([inst.hard for inst in instances])
    p_star = np.stack([inst.p_star.probs for inst in instances])
    p_a = np.stack([inst.p_a.probs for inst in instances]) if kind is SupervisionKind.CUSTOM else None
    pa = supervision_matrix(kind, hard, k, p_star=p_star, p_a=p_a)
    lambdas = mix(hard, pa, policy, p_star=p_star).lambdas

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DECOMPOSE_HEADER)
    cols = {name: [] for name in DECOMPOSE_HEADER[1:]}
    smooth_total, smooth_bias = [], []
    for i, inst in enumerate(instances):
        values = _decompose_row(inst, pa[i], float(lambdas[i]))
        for name, v in zip(DECOMPOSE_HEADER[1:], values):
            cols[name].append(v)
        w.writerow([i, *(format_float(v) for v in values)])
        smooth_total.append(kl_smoothed(inst.p_star, affine_combine(inst.hard, pa[i], float(lambdas[i]))))
        smooth_bias.append(_smoothed_bias(inst, pa[i]))

    def mean(name, fallback):
        v = np.asarray(cols[name], dtype=np.float64)
        if np.isinf(v).any():
            v = np.asarray(fallback)
        v = v[~np.isnan(v)]
        return float(v.mean()) if v.size else math.nan

    w.writerow([
        "mean",
        format_float(mean("kl_total", smooth_total)),
        format_float(mean("bias", smooth_bias)),
        format_float(mean("variance", None)),
        format_float(mean("lambda_star", None)),
        format_float(mean("lambda_used", None)),
    ])
    return buf.getvalue()


def cmd_decompose(args) -> int:
    try:
        _, instances = read_jsonl(args.dataset)
    except OSError as exc:
        raise DataError(f"cannot read dataset {args.dataset}: {exc.strerror}") from exc
    text = decompose_csv(instances, args.kind, args.mixing)
    _emit(text, args.out)
    return EXIT_OK


def cmd_bound(args) -> int:
    if not 0.0 < args.delta < 1.0:
        raise ConfigError(f"--delta must lie in (0, 1), got {args.delta}")
    if args.ns:
        ns = [int(v) for v in args.ns.split(",")]
    else:
        if args.n_min < 1 or args.n_max < args.n_min or args.factor <= 1:
            raise ConfigError("need 1 <= --n-min <= --n-max and --factor > 1")
        ns, n = [], float(args.n_min)
        while n <= args.n_max * (1 + 1e-12):
            ns.append(int(round(n)))
            n *= args.factor
    if any(n < 1 for n in ns):
        raise ConfigError("every n must be >= 1")
    for name in ("m_l", "l_l", "rademacher_c", "d_quality", "r_best"):
        if getattr(args, name) < 0:
            raise ConfigError(f"--{name.replace('_', '-')} must be non-negative")
    rows = rate_crossover(ns, m_l=args.m_l, l_l=args.l_l, delta=args.delta, rademacher_c=args.rademacher_c,
                          d_quality=args.d_quality, r_best=args.r_best)
    _emit(crossover_csv(rows), args.out)
    if args.out and len(rows) > 1:
        fast = loglog_slope(ns, [r.term_fast for r in rows])
        cross = [r.term_cross for r in rows]
        slope = loglog_slope(ns, cross) if all(c > 0 and math.isfinite(c) for c in cross) else math.nan
        print(json.dumps({"rows": len(rows), "slope_term_fast": fast, "slope_term_cross": slope}))
    return EXIT_OK


def cmd_experiment(args) -> int:
    data = _load_json(args.config)
    if args.seed is not None:
        if "synth" not in data or not isinstance(data["synth"], dict):
            raise ConfigError("missing experiment config field: synth")
        data = {**data, "synth": {**data["synth"], "seed": args.seed}}
    config = ExperimentConfig.from_dict(data)
    rows = run_experiment(config, workers=args.threads)
    summary = summarize(rows)
    out = Path(args.out)
    _write(out, results_csv(rows))
    _write(out.with_suffix(".summary.csv"), summary_csv(summary))
    _write(out.with_suffix(".timing.csv"), timing_csv(rows))
    errors = sum(r.status != "ok" for r in rows)
    print(json.dumps({"rows": len(rows), "errors": errors, "results": str(out),
                      "summary": str(out.with_suffix(".summary.csv"))}))
    diverged = [r for r in rows if r.status.startswith(f"error: {TrainingDivergedError.__name__}")]
    if diverged:
        print(f"softlabel: numeric divergence in {len(diverged)} cell(s); see the status column", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _emit(text: str, out) -> None:
    if out:
        _write(out, text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="softlabel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset as JSON Lines")
    p.add_argument("config", help="JSON file with a synthetic config (flat or under 'synth')")
    p.add_argument("--out", required=True, help="output directory for train.jsonl and test.jsonl")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("decompose", help="per-instance bias/variance decomposition CSV")
    p.add_argument("dataset", help="JSON Lines dataset carrying p_star")
    p.add_argument("--kind", default="t2oc", help="t1oc, t2oc, uniform, true-restricted or custom")
    p.add_argument("--lambda", dest="mixing", default="const:0.9", help="'optimal', 'const:<v>' or a number")
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("bound", help="generalization-bound breakdown over sample sizes")
    p.add_argument("--m-l", dest="m_l", type=float, default=1.0, help="loss bound")
    p.add_argument("--l-l", dest="l_l", type=float, default=1.0, help="Lipschitz constant of the loss")
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--rademacher-c", dest="rademacher_c", type=float, default=1.0,
                   help="Rademacher complexity is taken as c / sqrt(n)")
    p.add_argument("--d-quality", dest="d_quality", type=float, default=0.01, help="mean KL gap D")
    p.add_argument("--r-best", dest="r_best", type=float, default=0.0, help="risk of the best model in class")
    p.add_argument("--ns", help="comma-separated sample sizes (overrides the geometric sweep)")
    p.add_argument("--n-min", dest="n_min", type=int, default=100)
    p.add_argument("--n-max", dest="n_max", type=int, default=1_000_000)
    p.add_argument("--factor", type=float, default=2.0)
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("experiment", help="run the method comparison matrix")
    p.add_argument("config", help="experiment JSON config")
    p.add_argument("--out", required=True, help="results CSV; .summary.csv and .timing.csv are written beside it")
    p.add_argument("--seed", type=int, help="override the synthetic pool seed")
    p.add_argument("--threads", type=int, help="worker processes (default: $SOFTLABEL_THREADS or CPU count)")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"softlabel: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"softlabel: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, MissingDistributionError, SimplexError, ValueError, OSError) as exc:
        print(f"softlabel: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
