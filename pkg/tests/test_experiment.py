import math

import numpy as np
import pytest

from softlabel.exceptions import ConfigError
from softlabel.experiment import (
    RESULT_HEADER,
    ExperimentConfig,
    ResultRow,
    results_csv,
    run_experiment,
    subset_indices,
    summarize,
    summary_csv,
    worker_count,
)

SMALL = {
    "synth": {"num_classes": 4, "feature_dim": 5, "n_train": 120, "n_test": 200, "seed": 3},
    "methods": ["hard", "ls", {"name": "ls_explicit", "supervision": "uniform", "mixing": "const:0.9"}, "sd", "soft"],
    "train": {"epochs": 5},
    "n_seeds": 2,
    "train_sizes": [40, 80],
}


@pytest.fixture(scope="module")
def rows():
    return run_experiment(ExperimentConfig.from_dict(SMALL), workers=1)


def test_one_row_per_cell_in_order(rows):
    assert len(rows) == 5 * 2 * 2
    assert [(r.method, r.train_size, r.seed) for r in rows[:4]] == [("hard", 40, 0), ("hard", 40, 1), ("hard", 80, 0), ("hard", 80, 1)]
    assert all(r.status == "ok" and 0 <= r.accuracy <= 1 for r in rows)


def test_ls_alias_matches_explicit_method(rows):
    ls = [r for r in rows if r.method == "ls"]
    explicit = [r for r in rows if r.method == "ls_explicit"]
    assert [r[1:-1] for r in ls] == [r[1:-1] for r in explicit]


def test_soft_targets_have_zero_gap(rows):
    assert all(r.mean_kl_gap <= 1e-12 for r in rows if r.method == "soft")
    assert all(r.mean_kl_gap == math.inf for r in rows if r.method == "hard")


def test_parallel_run_matches_serial(rows):
    parallel = run_experiment(ExperimentConfig.from_dict(SMALL), workers=2)
    assert results_csv(parallel) == results_csv(rows)


def test_summary_uses_sample_std(rows):
    summary = {(s.method, s.train_size): s for s in summarize(rows)}
    accs = [r.accuracy for r in rows if (r.method, r.train_size) == ("hard", 40)]
    s = summary["hard", 40]
    assert s.n_runs == 2 and s.mean_accuracy == pytest.approx(np.mean(accs))
    assert s.two_std_accuracy == pytest.approx(2 * np.std(accs, ddof=1))
    assert s.std_error == pytest.approx(np.std(accs, ddof=1) / math.sqrt(2))
    assert summary_csv(summarize(rows)).startswith("method,train_size,n_runs,mean_accuracy,two_std_accuracy,std_error\n")


def test_results_csv_has_no_timing(rows):
    header = results_csv(rows).splitlines()[0]
    assert header == ",".join(RESULT_HEADER) and "wall_time" not in header


def test_error_rows_are_summarised_as_missing():
    bad = ResultRow("x", 10, 0, "error: boom", *([math.nan] * 5), 1.0)
    (s,) = summarize([bad])
    assert s.n_runs == 0 and math.isnan(s.mean_accuracy)
    assert ",error: boom,nan," in results_csv([bad])


def test_subsets_are_shared_across_methods_and_nested_seeds_differ():
    a = subset_indices(3, 40, 0, 120)
    assert np.array_equal(a, subset_indices(3, 40, 0, 120))
    assert not np.array_equal(a, subset_indices(3, 40, 1, 120))
    assert len(set(a)) == 40


@pytest.mark.parametrize("change,match", [
    ({"methods": ["hard", "hard"]}, "unique"),
    ({"methods": ["bogus"]}, "unknown method"),
    ({"train_sizes": [80, 40]}, "ascending"),
    ({"train_sizes": [40, 500]}, "pool"),
    ({"n_seeds": 0}, "n_seeds"),
    ({"methods": [{"name": "c", "supervision": "custom"}]}, "custom"),
    ({"extra": 1}, "unknown"),
])
def test_config_errors(change, match):
    with pytest.raises(ConfigError, match=match):
        ExperimentConfig.from_dict({**SMALL, **change})


def test_missing_section():
    with pytest.raises(ConfigError, match="methods"):
        ExperimentConfig.from_dict({"synth": SMALL["synth"]})


def test_worker_count_reads_environment(monkeypatch):
    monkeypatch.setenv("SOFTLABEL_THREADS", "3")
    assert worker_count() == 3
    assert worker_count(0) == 1
