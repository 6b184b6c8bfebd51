import itertools

import numpy as np
import pytest

from nuisreg import diagnostics as dg
from nuisreg.errors import BudgetExceededError, ParameterRangeError
from nuisreg.priors import x_norm_star


def brute_phi2(x, s):
    nrm = max(np.linalg.norm(x[:, j]) for j in range(x.shape[1]))
    vals = [np.linalg.svd(x[:, list(sup)], compute_uv=False)[-1]
            for k in range(1, s + 1) for sup in itertools.combinations(range(x.shape[1]), k)]
    return min(vals) / nrm


def grid_phi1(x, s, points=100_000):
    """Dense grid over the l1 sphere; supports of size one and two only."""
    nrm = max(np.linalg.norm(x[:, j]) for j in range(x.shape[1]))
    best = min(np.linalg.norm(x[:, j]) for j in range(x.shape[1]))
    if s >= 2:
        t = np.linspace(-1, 1, points)
        for j, k in itertools.combinations(range(x.shape[1]), 2):
            for sg in (1.0, -1.0):
                u = np.stack([t, sg * (1 - np.abs(t))])
                best = min(best, np.sqrt(2) * np.linalg.norm(x[:, [j, k]] @ u, axis=0).min())
    return best / nrm


def test_x_norm_star_examples(rng):
    assert x_norm_star(np.eye(4)) == 1.0
    x = np.eye(4)
    x[:, 2] *= 7
    assert x_norm_star(x) == 7.0
    x = rng.normal(size=(9, 5))
    assert x_norm_star(x) == pytest.approx(max(np.sqrt(sum(v * v for v in x[:, j])) for j in range(5)))


def test_phi2_examples(rng):
    q, _ = np.linalg.qr(rng.normal(size=(10, 4)))
    for s in (1, 2, 3, 4):
        assert dg.phi2(3.0 * q, s) == pytest.approx(1.0)
    assert dg.phi2(np.eye(5), 5) == pytest.approx(1.0)
    x = rng.normal(size=(12, 6))
    assert dg.phi2(x, 2) == pytest.approx(brute_phi2(x, 2), rel=1e-10)
    assert dg.phi2(x, 0.5) == 1.0


def test_phi1_examples(rng):
    q, _ = np.linalg.qr(rng.normal(size=(8, 4)))
    for s in (1, 2, 3):
        assert dg.phi1(q, s) == pytest.approx(1.0, abs=1e-9)
    x = rng.normal(size=(6, 3))
    x = np.column_stack([x, x[:, 0]])
    assert dg.phi1(x, 2) == pytest.approx(0.0, abs=1e-7)
    with pytest.raises(ParameterRangeError):
        dg.phi1(rng.normal(size=(20, 8)), 7)


@pytest.mark.parametrize("p,s", [(3, 1), (4, 2), (5, 2)])
def test_phi1_matches_grid_search(p, s):
    x = np.random.default_rng(p * 10 + s).normal(size=(7, p))
    assert dg.phi1(x, s) == pytest.approx(grid_phi1(x, s), abs=1e-3)


def test_compatibility_ordering_and_monotonicity():
    rng = np.random.default_rng(4)
    for _ in range(10):
        x = rng.normal(size=(10, 6))
        p1 = [dg.phi1(x, s) for s in (1, 2, 3)]
        p2 = [dg.phi2(x, s) for s in (1, 2, 3)]
        assert all(a >= b - 1e-12 for a, b in zip(p1, p2))
        assert all(b <= a + 1e-12 for a, b in zip(p1, p1[1:]))
        assert all(b <= a + 1e-12 for a, b in zip(p2, p2[1:]))


def test_budget_and_randomized_mode(rng):
    x = rng.normal(size=(15, 10))
    with pytest.raises(BudgetExceededError):
        dg.phi2(x, 3, budget=100)
    v, method = dg.phi2(x, 3, budget=100, randomized=True, n_random=5000, return_method=True)
    assert method == dg.RANDOMIZED
    exact, m2 = dg.phi2(x, 3, return_method=True)
    assert m2 == dg.EXACT and v >= exact - 1e-12
    # a sample of 5000 from 120 supports hits all of them
    assert v == pytest.approx(exact, rel=1e-12)


def test_joint_min_singular_cases(rng):
    x = rng.normal(size=(10, 5))
    assert dg.joint_min_singular(x, None, 2) == pytest.approx(dg.phi2(x, 2) * x_norm_star(x))
    z = x[:, [1]] * 2.0
    assert dg.joint_min_singular(x, z, 1) == pytest.approx(0.0, abs=1e-7)
    z = rng.normal(size=(10, 2))
    oracle = min(np.linalg.svd(np.column_stack([x[:, list(sup)], z]), compute_uv=False)[-1]
                 for sup in itertools.combinations(range(5), 2))
    assert dg.joint_min_singular(x, z, 2) == pytest.approx(oracle, rel=1e-9)


def test_beta_min_threshold_cases(rng):
    q, _ = np.linalg.qr(rng.normal(size=(12, 6)))
    assert dg.beta_min_threshold(q, 1, K4=0.0) == pytest.approx(np.sqrt(np.log(6)))
    x = rng.normal(size=(5, 3))
    x = np.column_stack([x, x[:, 0]])
    val, flag = dg.beta_min_threshold(x, 1, return_flag=True)
    assert flag and val == np.inf
    x = rng.normal(size=(30, 8))
    expected = np.sqrt(2 * np.log(8)) / (brute_phi2(x, 4) * x_norm_star(x))
    assert dg.beta_min_threshold(x, 2) == pytest.approx(expected, rel=1e-9)


def test_diagnose_report(rng):
    x = rng.normal(size=(20, 6))
    rep = dg.diagnose(x, [1, 2, 3], z=rng.normal(size=(20, 1)), s0=1)
    d = rep.to_dict()
    assert set(d["phi2"]) == {"1", "2", "3"} and d["beta_min_threshold"] > 0
    assert all(m == dg.EXACT for m in rep.methods.values())
    bad = dg.DiagnosticsReport(1.0, phi1={1: 0.2}, phi2={1: 0.5})
    with pytest.raises(AssertionError):
        bad.check()
