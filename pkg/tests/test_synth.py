import numpy as np
import pytest
from scipy import stats

from softlabel.exceptions import ConfigError
from softlabel.synth import (
    SupervisedInstance,
    SyntheticConfig,
    component_means,
    generate,
    generate_arrays,
    label_noise_rate,
    posterior,
    posterior_matrix,
    read_jsonl,
    write_jsonl,
)


def test_saturates_with_large_separation():
    train, _ = generate(SyntheticConfig(2, 2, 2000, 0, seed=0, class_separation=100.0))
    P = np.stack([x.p_star.probs for x in train])
    near = np.all((P < 1e-6) | (P > 1 - 1e-6), axis=1)
    assert near.mean() > 0.99


def test_no_separation_is_uniform():
    train, _ = generate(SyntheticConfig(3, 4, 100, 0, seed=1, class_separation=0.0))
    np.testing.assert_allclose([x.p_star.probs for x in train], np.full((100, 3), 1 / 3), atol=1e-15)


def test_regeneration_is_bitwise_identical():
    cfg = SyntheticConfig(4, 3, 50, 20, seed=7)
    a, b = generate_arrays(cfg), generate_arrays(cfg)
    for s, t in zip(a, b):
        for u, v in zip(s, t):
            assert u.tobytes() == v.tobytes()


def test_seed_changes_data():
    a, _ = generate_arrays(SyntheticConfig(3, 2, 10, 0, seed=1))
    b, _ = generate_arrays(SyntheticConfig(3, 2, 10, 0, seed=2))
    assert not np.array_equal(a.X, b.X)


@pytest.mark.parametrize("k,d", [(3, 5), (5, 2), (4, 1)])
def test_adjacent_means_are_separation_apart(k, d):
    means = component_means(SyntheticConfig(k, d, 1, 1, 0, class_separation=2.5))
    dists = [np.linalg.norm(means[i] - means[(i + 1) % k]) for i in range(k - (d == 1))]
    np.testing.assert_allclose(dists, 2.5)


def test_posterior_at_mean_and_symmetric_point():
    cfg = SyntheticConfig(3, 3, 1, 1, 0, class_separation=40.0)
    means = component_means(cfg)
    assert posterior(cfg, means[1])[1] > 1 - 1e-12
    np.testing.assert_allclose(posterior(cfg, means.mean(axis=0)).probs, [1 / 3] * 3, atol=1e-15)


def test_posterior_matches_independent_formula():
    cfg = SyntheticConfig(4, 6, 1, 1, 0, class_separation=2.0, temperature=0.7)
    means = component_means(cfg)
    rng = np.random.default_rng(3)
    for x in rng.normal(size=(20, 6)):
        dens = [np.exp(-np.sum((x - m) ** 2) / (2 * 0.7)) for m in means]
        np.testing.assert_allclose(posterior(cfg, x).probs, np.array(dens) / sum(dens), rtol=1e-12)


def test_posterior_rows_are_distributions():
    cfg = SyntheticConfig(6, 4, 1, 1, 0, class_separation=5.0)
    P = posterior_matrix(cfg, np.random.default_rng(0).normal(scale=20, size=(10_000, 4)))
    assert np.all(P >= 0)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_labels_follow_posterior_chi_square():
    # bin by the posterior of class 0 and compare label counts with binned p_star
    train, _ = generate_arrays(SyntheticConfig(3, 2, 100_000, 0, seed=11, class_separation=2.0))
    bins = np.digitize(train.p_star[:, 0], np.linspace(0, 1, 11)[1:-1])
    observed, expected = [], []
    for b in range(10):
        mask = bins == b
        if mask.sum() < 200:
            continue
        observed.append(np.bincount(train.y[mask], minlength=3))
        expected.append(train.p_star[mask].sum(axis=0))
    observed, expected = np.concatenate(observed), np.concatenate(expected)
    keep = expected > 5
    chi2 = np.sum((observed[keep] - expected[keep]) ** 2 / expected[keep])
    assert stats.chi2.sf(chi2, keep.sum() - 1) > 0.001


def test_noise_rate():
    det = [SupervisedInstance([0.0], 0, p_star=[1, 0, 0, 0])] * 3
    assert label_noise_rate(det).rate == 0.0
    uni = [SupervisedInstance([0.0], 0, p_star=[0.25] * 4)] * 3
    assert label_noise_rate(uni).rate == 0.75
    mixed = det + uni
    summary = label_noise_rate(mixed)
    assert summary.rate == pytest.approx(sum(1 - max(x.p_star.probs) for x in mixed) / len(mixed))
    assert summary.counts.sum() == 6 and len(summary.counts) == 20


def test_preset_confidence_is_moderate():
    train, _ = generate_arrays(SyntheticConfig(6, 20, 5000, 0, seed=0, class_separation=3.0))
    assert 0.7 <= train.p_star.max(axis=1).mean() <= 0.85


def test_jsonl_round_trip(tmp_path):
    cfg = SyntheticConfig(3, 2, 5, 0, seed=4)
    train, _ = generate(cfg)
    path = tmp_path / "train.jsonl"
    write_jsonl(path, train, cfg.to_meta())
    meta, back = read_jsonl(path)
    assert meta["k"] == 3 and meta["d"] == 2 and meta["rng"] == "PCG64"
    assert [x.to_json() for x in back] == [x.to_json() for x in train]


def test_instance_rejects_inconsistent_soft_label():
    with pytest.raises(ValueError):
        SupervisedInstance([0.0], 0, p_a=[0, 0.5, 0.5], lam=0.9, p_lambda=[0.8, 0.1, 0.1])


def test_config_validation():
    with pytest.raises(ConfigError, match="feature_dim"):
        SyntheticConfig.from_dict({"num_classes": 3, "n_train": 1, "n_test": 1, "seed": 0})
    with pytest.raises(ConfigError, match="colour"):
        SyntheticConfig.from_dict({"num_classes": 3, "feature_dim": 1, "n_train": 1, "n_test": 1, "seed": 0, "colour": 1})
    with pytest.raises(ConfigError):
        SyntheticConfig(1, 1, 1, 1, 0)
