import json
import os

import numpy as np
import pytest
import yaml

from nuisreg import harness as hs
from nuisreg.errors import ConfigError


def small_config(**over):
    d = {"name": "tiny", "family": {"family": "linear", "sigma2": 1.0},
         "truth": {"support": [0], "values": [1.5]},
         "grid": {"n": [30, 60], "p": [5]},
         "engine": {"kind": "enumeration", "slab": "laplace", "s_max": 2},
         "bvm": {"enabled": True}, "replicates": 2, "seed": 3}
    d.update(over)
    return hs.ExperimentConfig.from_dict(d)


def _rec(g, rep, n, err, modal=(0,), truth=(0,), ci=None, tv=(1.0,)):
    return {"grid_index": g, "replicate": rep, "n": n, "p": 5, "J": None, "s0": len(truth), "status": "ok",
            "err_l2": err, "modal": list(modal), "truth_support": list(truth), "ci": ci,
            "truth_values": list(tv), "level": 0.95}


# -- configuration ------------------------------------------------------------------

def test_config_round_trip(tmp_path):
    cfg = small_config()
    cfg.dump(tmp_path / "c.yaml")
    back = hs.ExperimentConfig.load(tmp_path / "c.yaml")
    assert back.to_dict() == cfg.to_dict()
    assert cfg.s0 == 1 and len(cfg.grid.points()) == 2


@pytest.mark.parametrize("patch", [
    {"colour": "blue"},
    {"engine": {"kind": "enumeration", "speed": 3}},
    {"grid": {"n": [], "p": [5]}},
    {"truth": {"support": [7], "values": [1.0]}},
    {"family": {"family": "quadratic"}},
    {"engine": {"kind": "enumeration", "s_max": 4}},
    {"engine": {"kind": "enumeration", "s_max": 0}},
    {"replicates": 0},
])
def test_config_rejects_bad_input(patch):
    with pytest.raises(ConfigError):
        small_config(**patch)


def test_config_budget_feasibility():
    with pytest.raises(ConfigError):
        small_config(grid={"n": [30], "p": [400]}, engine={"kind": "enumeration", "s_max": 3, "budget": 1000})


# -- running ---------------------------------------------------------------------------

def test_single_record_run(tmp_path):
    cfg = small_config(grid={"n": [40], "p": [5]}, replicates=1)
    table = hs.run_experiment(cfg, tmp_path)
    assert len(table) == 1
    rec = table.records[0]
    assert rec["status"] == "ok" and set(hs.RECORD_FIELDS) <= set(rec)
    assert all(rec[k] >= 0 for k in ("err_l1", "err_l2", "err_pred"))
    for name in ("results.jsonl", "timings.jsonl", "config.yaml", "summary.csv", "meta.json"):
        assert (tmp_path / name).exists()


def test_run_is_deterministic_and_resumes(tmp_path):
    cfg = small_config()
    a, b = tmp_path / "a", tmp_path / "b"
    hs.run_experiment(cfg, a)
    hs.run_experiment(cfg, b, resume=False)
    ra = (a / "results.jsonl").read_bytes()
    assert ra == (b / "results.jsonl").read_bytes()
    # interrupt: keep one full record and half of the next
    lines = ra.decode().splitlines(keepends=True)
    (b / "results.jsonl").write_text(lines[0] + lines[1][: len(lines[1]) // 2])
    table = hs.run_experiment(cfg, b)
    assert len(table) == cfg.replicates * 2
    assert (b / "results.jsonl").read_bytes() == ra


def test_parallel_workers_match_serial(tmp_path):
    cfg = small_config()
    hs.run_experiment(cfg, tmp_path / "s")
    hs.run_experiment(cfg, tmp_path / "w", workers=2)
    assert (tmp_path / "s" / "results.jsonl").read_bytes() == (tmp_path / "w" / "results.jsonl").read_bytes()


def test_errors_decrease_with_n(tmp_path):
    cfg = small_config(grid={"n": [40, 80, 160, 320], "p": [8]}, replicates=50, bvm={"enabled": False})
    table = hs.run_experiment(cfg, tmp_path)
    assert len(table.ok()) == len(table)
    med = hs.median_errors(table)
    assert sum(med[g] > med[g + 1] for g in range(3)) >= 2


# -- metrics ------------------------------------------------------------------------------

def test_contraction_slope_synthetic():
    recs = [_rec(g, r, n, 3.0 * n ** -0.5) for g, n in enumerate([50, 100, 400, 1600]) for r in range(3)]
    assert hs.contraction_slope(hs.ResultsTable(recs)) == pytest.approx(-0.5, abs=1e-6)
    flat = [_rec(g, 0, n, 0.2) for g, n in enumerate([50, 100])]
    assert hs.contraction_slope(hs.ResultsTable(flat)) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        hs.contraction_slope(hs.ResultsTable(flat[:1]))


def test_selection_metrics_extremes():
    exact = hs.ResultsTable([_rec(0, r, 50, 0.1, modal=(0, 1), truth=(0, 1)) for r in range(4)])
    assert hs.selection_metrics(exact)[0] == {"exact": 1.0, "superset": 0.0, "subset": 0.0, "replicates": 4}
    sup = hs.ResultsTable([_rec(0, r, 50, 0.1, modal=(0, 1, 3), truth=(0, 1)) for r in range(4)])
    assert hs.selection_metrics(sup)[0] == {"exact": 0.0, "superset": 1.0, "subset": 0.0, "replicates": 4}


def test_coverage_metrics_extremes():
    wide = hs.ResultsTable([_rec(0, r, 50, 0.1, ci=[[-np.inf, np.inf]], tv=(1.0,)) for r in range(5)])
    assert hs.coverage_metrics(wide)[0] == [1.0]
    point = hs.ResultsTable([_rec(0, r, 50, 0.1, ci=[[0.9, 0.9]], tv=(1.0,)) for r in range(5)])
    assert hs.coverage_metrics(point)[0] == [0.0]


def test_selection_degrades_without_beta_min(tmp_path):
    strong = small_config(truth={"support": [0, 1], "values": [1.5, -1.5]}, grid={"n": [60], "p": [6]},
                          replicates=30, bvm={"enabled": False})
    weak = small_config(truth={"support": [0, 1], "values": [0.15, -0.15]}, grid={"n": [60], "p": [6]},
                        replicates=30, bvm={"enabled": False})
    s = hs.selection_metrics(hs.run_experiment(strong, tmp_path / "s"))[0]["exact"]
    w = hs.selection_metrics(hs.run_experiment(weak, tmp_path / "w"))[0]["exact"]
    assert w < s


def test_summary_csv(tmp_path):
    cfg = small_config(replicates=1)
    table = hs.run_experiment(cfg, tmp_path)
    text = hs.write_summary(table)
    assert text.splitlines()[0].startswith("grid_index,n,p")
    assert len(text.splitlines()) == 3
    reloaded = hs.ResultsTable.load(tmp_path)
    assert reloaded.records == table.records


# -- Neyman-Pearson curve ------------------------------------------------------------------

def test_np_identical_hypotheses_bound_is_one():
    cfg = small_config(grid={"n": [20, 40], "p": [3]}, np_test={"draws": 2000})
    curve = hs.np_error_curve(cfg)
    for row in curve:
        assert row["bound"] == pytest.approx(1.0) and row["renyi"] == pytest.approx(0.0) and row["ok"]


def test_np_large_separation_no_errors():
    cfg = small_config(grid={"n": [40], "p": [3]},
                       np_test={"draws": 2000, "alternative_truth": {"support": [0], "values": [-5.0]}})
    row = hs.np_error_curve(cfg)[0]
    assert row["error"] == 0.0 and row["ok"]


def test_np_moderate_separation_decreasing():
    cfg = small_config(grid={"n": [10, 20, 40, 80], "p": [3]},
                       np_test={"draws": 10_000, "alternative_truth": {"support": [0], "values": [1.2]}})
    curve = hs.np_error_curve(cfg)
    errs = [r["error"] for r in curve]
    assert all(r["ok"] for r in curve)
    assert all(b <= a for a, b in zip(errs, errs[1:]))
