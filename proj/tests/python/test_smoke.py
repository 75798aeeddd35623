"""Smoke tests for the python layer: thin checks that the bindings round-trip
data and agree with first-principles values; the heavy verification lives in
the C++ test suites."""

import json
import math

import pytest

import condbisim


@pytest.fixture(scope="module")
def env_json():
    return condbisim.generate_env(
        "random_cmdp", json.dumps({"n_states": 3, "n_actions": 2, "n_contexts": 2}), seed=7
    )


def test_version_string():
    assert condbisim.__version__.startswith("condbisim ")


def test_generate_env_deterministic(env_json):
    again = condbisim.generate_env(
        "random_cmdp", json.dumps({"n_states": 3, "n_actions": 2, "n_contexts": 2}), seed=7
    )
    assert again == env_json
    assert condbisim.env_hash(env_json) == condbisim.env_hash(again)


def test_metric_matrix_properties(env_json):
    d = condbisim.bisim_metric(env_json, c=0.5, tol=1e-9)
    n = len(d)
    assert n == 6  # 3 states x 2 contexts
    for i in range(n):
        assert d[i][i] == 0.0
        for j in range(n):
            assert d[i][j] == pytest.approx(d[j][i], abs=0.0)
            assert d[i][j] >= 0.0


def test_pi_metric_below_max_metric(env_json):
    d_max = condbisim.bisim_metric(env_json, c=0.5)
    d_pi = condbisim.pi_bisim_metric(env_json, c=0.5, temperature=0.1)
    for row_pi, row_max in zip(d_pi, d_max):
        for a, b in zip(row_pi, row_max):
            assert a <= b + 1e-9


def test_wasserstein_point_masses():
    # Mass moved 1.0 across a cost-3 edge.
    cost, gap = condbisim.wasserstein1([1.0, 0.0], [0.0, 1.0], [0.0, 3.0, 3.0, 0.0], 2, 2)
    assert cost == pytest.approx(3.0, abs=1e-12)
    assert gap <= 1e-9


def test_verify_bound_jsonl():
    lines = condbisim.verify_bound("4", trials=5, seed=3).strip().splitlines()
    assert len(lines) == 5
    for line in lines:
        report = json.loads(line)
        assert report["theorem"] == "4"
        assert report["pass"] is True
        assert report["lhs"] <= report["rhs"] + 1e-6


def test_train_embedding_runs(env_json):
    blob = json.loads(condbisim.train_embedding(env_json, seed=1, steps=5))
    assert math.isfinite(blob["final_delta"])
    assert "step,loss_total" in blob["history_csv"]


def test_run_cli_help_and_errors():
    assert condbisim.run_cli(["--help"]) == 0
    assert condbisim.run_cli(["no-such-command"]) == 2
