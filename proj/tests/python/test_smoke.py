import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

import sitehet

FIXTURES = Path(os.environ.get("SITEHET_FIXTURE_DIR", Path(__file__).resolve().parents[1] / "fixtures"))


def test_scalar_helpers():
    assert 3.79 <= sitehet.heterogeneity_ratio(0.0084, 0.024) <= 3.84
    assert 0.39 <= sitehet.negative_share(0.024, 0.0084) <= 0.41
    assert sitehet.negative_share(0.0, 2.0, lo=-0.5, hi=0.5) == pytest.approx(0.5, abs=1e-14)
    with pytest.raises(sitehet.EstimationError):
        sitehet.heterogeneity_ratio(-0.01, 0.2)
    with pytest.raises(sitehet.InputError):
        sitehet.negative_share(0.1, 0.0)


def test_eb_twins():
    out = sitehet.eb_variance(np.array([0.5, 0.5]), np.array([0.25, 0.25]))
    assert abs(out["sigma2"] + 0.25) < 1e-12
    assert out["negative"]
    assert out["ratio"] is None
    assert out["phi"].shape == (2,)
    assert abs(out["phi"].mean() - out["sigma2"]) < 1e-12


def test_eb_weights_are_normalized():
    rng = np.random.default_rng(5)
    theta, v = rng.normal(size=30), rng.uniform(0.01, 0.1, size=30)
    raw = rng.uniform(1, 2, size=30)
    a = sitehet.eb_variance(theta, v, weights=raw)
    b = sitehet.eb_variance(theta, v, weights=1e4 * raw)
    assert a["sigma2"] == pytest.approx(b["sigma2"], rel=1e-12)
    w = raw / raw.sum()
    mean = (w * theta).sum()
    assert a["sigma2"] == pytest.approx((w * ((theta - mean) ** 2 - v)).sum(), rel=1e-12)
    with pytest.raises(sitehet.InputError):
        sitehet.eb_variance(theta, v[:-1])


def test_ridge_one_dimensional():
    x, y, vy = np.array([[0.0], [2.0]]), np.array([0.0, 1.0]), np.zeros(2)
    assert sitehet.ridge(x, y, vy)["beta"][0] == pytest.approx(0.5, abs=1e-12)
    assert sitehet.ridge(x, y, vy, lam=1.0)["beta"][0] == pytest.approx(0.25, abs=1e-12)
    fit = sitehet.ridge(x, y, vy, lam="gcv")
    assert fit["lambda"] == 0.0
    assert len(fit["gcv_lambda"]) == len(fit["gcv_value"])


def test_ridge_estimated_predictor_changes_the_fit():
    rng = np.random.default_rng(9)
    S = 40
    x = rng.normal(size=(S, 1))
    y = 0.8 * x[:, 0] + rng.normal(scale=0.3, size=S)
    vy = np.full(S, 0.05)
    naive = sitehet.ridge(x, y, vy)
    corrected = sitehet.ridge(x, y, vy, v=[np.array([[0.2]])] * S, c=np.zeros((S, 1)))
    assert abs(corrected["beta"][0]) > abs(naive["beta"][0])


def test_run_subcommands():
    eb = sitehet.run("eb", str(FIXTURES / "twins.json"), format="json")
    assert eb["exit_code"] == 0
    assert abs(eb["data"]["targets"][0]["sigma2"] + 0.25) < 1e-12
    assert json.loads(eb["text"])["targets"][0]["sigma2"] == eb["data"]["targets"][0]["sigma2"]

    meta = sitehet.run("metareg", str(FIXTURES / "linear.json"))
    assert abs(meta["data"]["models"][0]["beta"][0] - 0.5) < 1e-12
    assert "selected lambda = 0" in meta["text"]

    degenerate = sitehet.run("metareg", str(FIXTURES / "degenerate.json"))
    assert degenerate["exit_code"] == 3
    assert degenerate["diagnostics"]

    assert sitehet.run("late", str(FIXTURES / "weak.json"))["exit_code"] == 3


def test_run_is_deterministic():
    a = sitehet.run("simulate", str(FIXTURES / "simulate.json"), format="json")
    b = sitehet.run("simulate", str(FIXTURES / "simulate_serial.json"), format="json")
    assert a["text"] == b["text"]
    c = sitehet.run("simulate", str(FIXTURES / "simulate.json"), seed=99, format="json")
    assert c["text"] != a["text"]


def test_run_errors():
    with pytest.raises(sitehet.InputError):
        sitehet.run("eb", str(FIXTURES / "bad_key.json"))
    with pytest.raises(sitehet.InputError):
        sitehet.run("nope", str(FIXTURES / "twins.json"))
    with pytest.raises(sitehet.InputError):
        sitehet.run("eb", str(FIXTURES / "twins.json"), alpha=2.0)
    with pytest.raises(ValueError):
        sitehet.run("metareg", str(FIXTURES / "linear.json"), lam="-1")
    assert math.isfinite(sitehet.run("eb", str(FIXTURES / "twins.json"), alpha=0.1)["data"]["targets"][0]["se"])
