"""Synthetic classification data with an exactly known label posterior.

Features come from an equal-weight mixture of K unit-covariance Gaussians whose
means sit ``class_separation`` apart.  The true label distribution is the Bayes
posterior with a temperature applied to the component log-densities, and each
hard label is drawn from that posterior.

Randomness uses numpy's PCG64 bit generator.  The config seed feeds a
``SeedSequence`` that is split into one child stream for the training split and
one for the test split, so the output depends on the seed alone.
"""

from __future__ import annotations

import json
from dataclasses import MISSING, asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from softlabel.exceptions import ConfigError, MissingDistributionError, SimplexError
from softlabel.simplex import LabelDistribution, affine_combine, as_distribution, check_class_index

RNG_ALGORITHM = "PCG64"


@dataclass(frozen=True)
class SyntheticConfig:
    num_classes: int
    feature_dim: int
    n_train: int
    n_test: int
    seed: int
    class_separation: float = 3.0
    temperature: float = 1.0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.feature_dim < 1:
            raise ConfigError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.n_train < 0 or self.n_test < 0:
            raise ConfigError("n_train and n_test must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if self.class_separation < 0:
            raise ConfigError(f"class_separation must be >= 0, got {self.class_separation}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticConfig":
        if not isinstance(data, dict):
            raise ConfigError("synthetic config must be a JSON object")
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown synthetic config field(s): {', '.join(unknown)}")
        required = [f.name for f in fields(cls) if f.default is MISSING]
        for name in required:
            if name not in data:
                raise ConfigError(f"missing synthetic config field: {name}")
        try:
            return cls(
                num_classes=int(data["num_classes"]),
                feature_dim=int(data["feature_dim"]),
                n_train=int(data["n_train"]),
                n_test=int(data["n_test"]),
                seed=int(data["seed"]),
                class_separation=float(data.get("class_separation", 3.0)),
                temperature=float(data.get("temperature", 1.0)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad synthetic config value: {exc}") from exc

    def to_meta(self) -> dict:
        meta = {"k": self.num_classes, "d": self.feature_dim, "seed": self.seed, "rng": RNG_ALGORITHM}
        meta.update(asdict(self))
        return meta


@dataclass(frozen=True, eq=False)
class SupervisedInstance:
    """One training or test example and whatever label distributions it carries."""

    features: np.ndarray
    hard: int
    p_star: LabelDistribution | None = None
    p_a: LabelDistribution | None = None
    lam: float | None = None
    p_lambda: LabelDistribution | None = None

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64).reshape(-1)
        x.setflags(write=False)
        object.__setattr__(self, "features", x)
        for name in ("p_star", "p_a", "p_lambda"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, as_distribution(value))
        k = next(
            (d.num_classes for d in (self.p_star, self.p_a, self.p_lambda) if d is not None),
            None,
        )
        hard = self.hard
        if k is not None:
            hard = check_class_index(hard, k)
        elif isinstance(hard, (np.integer,)):
            hard = int(hard)
        object.__setattr__(self, "hard", hard)
        if self.p_lambda is not None and self.p_a is not None and self.lam is not None:
            expected = affine_combine(self.hard, self.p_a, self.lam).probs
            if np.max(np.abs(expected - self.p_lambda.probs)) > 1e-12:
                raise SimplexError("p_lambda disagrees with the affine combination of hard, p_a, lam")

    def to_json(self) -> str:
        row = {"x": self.features.tolist(), "y": self.hard}
        if self.p_star is not None:
            row["p_star"] = self.p_star.probs.tolist()
        if self.p_a is not None:
            row["p_a"] = self.p_a.probs.tolist()
        if self.lam is not None:
            row["lambda"] = self.lam
        if self.p_lambda is not None:
            row["p_lambda"] = self.p_lambda.probs.tolist()
        return json.dumps(row)

    @classmethod
    def from_json_obj(cls, row: dict) -> "SupervisedInstance":
        return cls(
            features=row["x"],
            hard=int(row["y"]),
            p_star=row.get("p_star"),
            p_a=row.get("p_a"),
            lam=row.get("lambda"),
            p_lambda=row.get("p_lambda"),
        )


class Split(NamedTuple):
    X: np.ndarray
    y: np.ndarray
    p_star: np.ndarray


def component_means(config: SyntheticConfig) -> np.ndarray:
    """Mixture means with every adjacent pair ``class_separation`` apart.

    Simplex vertices when ``feature_dim >= num_classes`` (all pairs equidistant),
    otherwise a regular polygon in the first two coordinates, or evenly spaced
    points on a line when ``feature_dim == 1``.
    """
    k, d, sep = config.num_classes, config.feature_dim, config.class_separation
    means = np.zeros((k, d))
    if d >= k:
        means[np.arange(k), np.arange(k)] = sep / np.sqrt(2.0)
    elif d >= 2:
        radius = sep / (2.0 * np.sin(np.pi / k))
        angle = 2.0 * np.pi * np.arange(k) / k
        means[:, 0] = radius * np.cos(angle)
        means[:, 1] = radius * np.sin(angle)
    else:
        means[:, 0] = sep * (np.arange(k) - (k - 1) / 2.0)
    return means


def posterior_matrix(config: SyntheticConfig, X) -> np.ndarray:
    """Row-wise tempered Bayes posterior for a batch of feature vectors."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != config.feature_dim:
        raise ValueError(f"expected {config.feature_dim} features, got {X.shape[1]}")
    means = component_means(config)
    sq = ((X[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    logits = -0.5 * sq / config.temperature
    logits -= logits.max(axis=1, keepdims=True)
    P = np.exp(logits)
    P /= P.sum(axis=1, keepdims=True)
    return P


def posterior(config: SyntheticConfig, features) -> LabelDistribution:
    return LabelDistribution(posterior_matrix(config, features)[0])


def sample_labels(P: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(P.shape[0])
    y = (np.cumsum(P, axis=1) < u[:, None]).sum(axis=1)
    return np.minimum(y, P.shape[1] - 1)


def _draw(config: SyntheticConfig, n: int, rng: np.random.Generator) -> Split:
    means = component_means(config)
    comp = rng.integers(0, config.num_classes, size=n)
    X = means[comp] + rng.standard_normal((n, config.feature_dim))
    P = posterior_matrix(config, X) if n else np.zeros((0, config.num_classes))
    y = sample_labels(P, rng)
    return Split(X, y, P)


def generate_arrays(config: SyntheticConfig) -> tuple[Split, Split]:
    train_seq, test_seq = np.random.SeedSequence(config.seed).spawn(2)
    train = _draw(config, config.n_train, np.random.Generator(np.random.PCG64(train_seq)))
    test = _draw(config, config.n_test, np.random.Generator(np.random.PCG64(test_seq)))
    return train, test


def split_to_instances(split: Split) -> list[SupervisedInstance]:
    return [
        SupervisedInstance(features=x, hard=int(y), p_star=p)
        for x, y, p in zip(split.X, split.y, split.p_star)
    ]


def instances_to_split(instances) -> Split:
    instances = list(instances)
    if not instances:
        raise ValueError("empty dataset")
    X = np.stack([inst.features for inst in instances])
    y = np.array([inst.hard for inst in instances], dtype=np.int64)
    if any(inst.p_star is None for inst in instances):
        P = None
    else:
        P = np.stack([inst.p_star.probs for inst in instances])
    return Split(X, y, P)


def generate(config: SyntheticConfig) -> tuple[list[SupervisedInstance], list[SupervisedInstance]]:
    """Train and test instances, each carrying its exact ``p_star``."""
    train, test = generate_arrays(config)
    return split_to_instances(train), split_to_instances(test)


class NoiseSummary(NamedTuple):
    rate: float
    bin_edges: np.ndarray
    counts: np.ndarray


def label_noise_rate(instances, bins: int = 20) -> NoiseSummary:
    """Mean of ``1 - max_y p_star[y]`` plus a histogram of the max confidence."""
    instances = list(instances)
    if any(inst.p_star is None for inst in instances):
        raise MissingDistributionError("label_noise_rate needs p_star on every instance")
    conf = np.array([inst.p_star.probs.max() for inst in instances])
    counts, edges = np.histogram(conf, bins=bins, range=(0.0, 1.0))
    rate = float(np.mean(1.0 - conf)) if conf.size else 0.0
    return NoiseSummary(rate, edges, counts)


def write_jsonl(path, instances, meta: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"meta": meta}) + "\n")
        for inst in instances:
            fh.write(inst.to_json() + "\n")


def read_jsonl(path) -> tuple[dict, list[SupervisedInstance]]:
    """Inverse of :func:`write_jsonl`.  The meta header line is optional."""
    meta: dict = {}
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                if "meta" in row and lineno == 1:
                    meta = row["meta"]
                    continue
                instances.append(SupervisedInstance.from_json_obj(row))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return meta, instances
