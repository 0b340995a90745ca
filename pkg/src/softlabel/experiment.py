"""Method-comparison experiments: methods x train sizes x seeds.

Every cell draws a training subset from a fixed synthetic pool, builds soft
labels with one method, trains a classifier and scores it on the shared test
split.  Cells with the same (train size, seed) share the subset and the model
initialisation, so methods are compared on paired runs.
"""

from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from softlabel.bounds import format_float, mean_kl_gap
from softlabel.classifier import TrainConfig, empirical_soft_risk
from softlabel.exceptions import ConfigError, SoftLabelError
from softlabel.supervision import LambdaPolicy, SupervisionKind, mix, supervision_matrix
from softlabel.synth import Split, SyntheticConfig, generate_arrays

SD = "sd"


@dataclass(frozen=True)
class MethodSpec:
    name: str
    kind: SupervisionKind | None
    policy: LambdaPolicy | None

    @property
    def is_self_distillation(self) -> bool:
        return self.kind is None


RESERVED_METHODS = {
    "hard": MethodSpec("hard", SupervisionKind.UNIFORM_OTHER, LambdaPolicy.constant(1.0)),
    "soft": MethodSpec("soft", SupervisionKind.TRUE_RESTRICTED, LambdaPolicy(optimal=True)),
    "ls": MethodSpec("ls", SupervisionKind.UNIFORM_OTHER, LambdaPolicy.constant(0.9)),
    "t1oc": MethodSpec("t1oc", SupervisionKind.T1OC, LambdaPolicy.constant(0.9)),
    "t2oc": MethodSpec("t2oc", SupervisionKind.T2OC, LambdaPolicy.constant(0.9)),
    SD: MethodSpec(SD, None, None),
}


def parse_method(entry) -> MethodSpec:
    if isinstance(entry, str):
        if entry not in RESERVED_METHODS:
            raise ConfigError(f"unknown method {entry!r}; reserved names are {sorted(RESERVED_METHODS)}")
        return RESERVED_METHODS[entry]
    if not isinstance(entry, dict) or "name" not in entry:
        raise ConfigError("each method must be a reserved name or an object with a 'name'")
    name = entry["name"]
    if "supervision" not in entry:
        raise ConfigError(f"method {name!r}: missing field supervision")
    kind = SupervisionKind.parse(entry["supervision"])
    if kind is SupervisionKind.CUSTOM:
        raise ConfigError(f"method {name!r}: custom supervision is not available in experiments")
    policy = LambdaPolicy.parse(entry.get("mixing", 0.9))
    return MethodSpec(str(name), kind, policy)


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SyntheticConfig
    methods: tuple[MethodSpec, ...]
    train: TrainConfig = field(default_factory=TrainConfig)
    n_seeds: int = 5
    train_sizes: tuple[int, ...] = (200, 500, 1000, 2000)

    def __post_init__(self):
        names = [m.name for m in self.methods]
        if not names:
            raise ConfigError("methods must not be empty")
        if len(set(names)) != len(names):
            raise ConfigError(f"method names must be unique, got {names}")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        sizes = list(self.train_sizes)
        if not sizes or any(s < 1 for s in sizes) or sizes != sorted(set(sizes)):
            raise ConfigError(f"train_sizes must be positive and strictly ascending, got {sizes}")
        if sizes[-1] > self.synth.n_train:
            raise ConfigError(
                f"largest train size {sizes[-1]} exceeds the synthetic pool n_train={self.synth.n_train}"
            )

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("experiment config must be a JSON object")
        for name in ("synth", "methods"):
            if name not in data:
                raise ConfigError(f"missing experiment config field: {name}")
        unknown = sorted(set(data) - {"synth", "methods", "train", "n_seeds", "train_sizes"})
        if unknown:
            raise ConfigError(f"unknown experiment config field(s): {', '.join(unknown)}")
        try:
            return cls(
                synth=SyntheticConfig.from_dict(data["synth"]),
                methods=tuple(parse_method(m) for m in data["methods"]),
                train=TrainConfig.from_dict(data.get("train", {})),
                n_seeds=int(data.get("n_seeds", 5)),
                train_sizes=tuple(int(s) for s in data.get("train_sizes", (200, 500, 1000, 2000))),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad experiment config: {exc}") from exc


class ResultRow(NamedTuple):
    method: str
    train_size: int
    seed: int
    status: str
    accuracy: float
    true_risk_ce: float
    true_risk_01: float
    mean_kl_gap: float
    mean_kl_gap_smoothed: float
    wall_time_ms: float


RESULT_HEADER = (
    "method",
    "train_size",
    "seed",
    "status",
    "accuracy",
    "true_risk_ce",
    "true_risk_01",
    "mean_kl_gap",
    "mean_kl_gap_smoothed",
)
SUMMARY_HEADER = ("method", "train_size", "n_runs", "mean_accuracy", "two_std_accuracy", "std_error")
TIMING_HEADER = ("method", "train_size", "seed", "wall_time_ms")


def subset_indices(pool_seed: int, train_size: int, seed: int, pool_size: int) -> np.ndarray:
    rng = np.random.default_rng([pool_seed, train_size, seed])
    return np.sort(rng.choice(pool_size, size=train_size, replace=False))


def model_seed(train_seed: int, seed: int) -> int:
    return int(np.random.SeedSequence([train_seed, seed]).generate_state(1)[0])


def soft_targets(method: MethodSpec, X, y, p_star, train: TrainConfig, rs: int) -> np.ndarray:
    """Training targets for one method on one subset."""
    k = p_star.shape[1]
    if method.is_self_distillation:
        hard = np.zeros_like(p_star)
        hard[np.arange(y.size), y] = 1.0
        teacher = train.estimator(seed=rs, n_classes=k).fit(X, hard)
        return teacher.predict_proba(X)
    pa = supervision_matrix(method.kind, y, k, p_star=p_star)
    return mix(y, pa, method.policy, p_star=p_star).p_lambda


def run_cell(method: MethodSpec, train_size: int, seed: int, pool: Split, test: Split,
             pool_seed: int, train: TrainConfig) -> ResultRow:
    start = time.perf_counter()
    try:
        idx = subset_indices(pool_seed, train_size, seed, pool.X.shape[0])
        X, y, p_star = pool.X[idx], pool.y[idx], pool.p_star[idx]
        rs = model_seed(train.seed, seed)
        targets = soft_targets(method, X, y, p_star, train, rs)
        gap = mean_kl_gap(p_star=p_star, p_lambda=targets)
        model = train.estimator(seed=rs, n_classes=p_star.shape[1]).fit(X, targets)
        pred = model.predict(test.X)
        ce = empirical_soft_risk(model, test.X, test.p_star, "cross_entropy")
        zo = empirical_soft_risk(model, test.X, test.p_star, "zero_one")
        row = ResultRow(method.name, train_size, seed, "ok", float(np.mean(pred == test.y)),
                        ce, zo, gap.exact, gap.smoothed, 0.0)
    except (SoftLabelError, ValueError, ArithmeticError) as exc:
        msg = f"error: {type(exc).__name__}: {exc}".replace("\n", " ")
        row = ResultRow(method.name, train_size, seed, msg, math.nan, math.nan, math.nan,
                        math.nan, math.nan, 0.0)
    return row._replace(wall_time_ms=(time.perf_counter() - start) * 1e3)


def _run_cell_args(args):
    return run_cell(*args)


def worker_count(requested: int | None = None) -> int:
    if requested is None:
        env = os.environ.get("SOFTLABEL_THREADS")
        requested = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(requested))


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> list[ResultRow]:
    """Every (method, train size, seed) cell, sorted by method order, size, seed."""
    pool, test = generate_arrays(config.synth)
    cells = [
        (m, size, seed, pool, test, config.synth.seed, config.train)
        for m in config.methods
        for size in config.train_sizes
        for seed in range(config.n_seeds)
    ]
    n_workers = min(worker_count(workers), len(cells))
    if n_workers <= 1:
        rows = [_run_cell_args(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as ex:
            rows = list(ex.map(_run_cell_args, cells, chunksize=1))
    order = {m.name: i for i, m in enumerate(config.methods)}
    return sorted(rows, key=lambda r: (order[r.method], r.train_size, r.seed))


class SummaryRow(NamedTuple):
    method: str
    train_size: int
    n_runs: int
    mean_accuracy: float
    two_std_accuracy: float
    std_error: float


def summarize(rows) -> list[SummaryRow]:
    """Per (method, size): mean accuracy, twice the sample std (ddof=1), standard error."""
    groups: dict[tuple[str, int], list[float]] = {}
    for r in rows:
        groups.setdefault((r.method, r.train_size), [])
        if r.status == "ok":
            groups[(r.method, r.train_size)].append(r.accuracy)
    out = []
    for (method, size), accs in groups.items():
        a = np.asarray(accs)
        if a.size == 0:
            out.append(SummaryRow(method, size, 0, math.nan, math.nan, math.nan))
            continue
        sd = float(a.std(ddof=1)) if a.size > 1 else 0.0
        out.append(SummaryRow(method, size, int(a.size), float(a.mean()), 2.0 * sd, sd / math.sqrt(a.size)))
    return out


def _csv(header, rows, fmt) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(fmt(r))
    return buf.getvalue()


def results_csv(rows) -> str:
    return _csv(RESULT_HEADER, rows, lambda r: [
        r.method, r.train_size, r.seed, r.status,
        *(format_float(v) for v in (r.accuracy, r.true_risk_ce, r.true_risk_01,
                                    r.mean_kl_gap, r.mean_kl_gap_smoothed)),
    ])


def summary_csv(summary) -> str:
    return _csv(SUMMARY_HEADER, summary, lambda s: [
        s.method, s.train_size, s.n_runs,
        *(format_float(v) for v in (s.mean_accuracy, s.two_std_accuracy, s.std_error)),
    ])


def timing_csv(rows) -> str:
    return _csv(TIMING_HEADER, rows, lambda r: [r.method, r.train_size, r.seed, f"{r.wall_time_ms:.3f}"])
