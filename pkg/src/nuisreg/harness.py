"""Simulation experiments: configuration, replication, metrics and persistence.

A run writes three files under the output directory:

``results.jsonl``
    one record per (grid point, replicate), ordered by grid index then
    replicate index. Contents depend only on the config and base seed, so
    reruns and resumed runs are byte-identical.
``timings.jsonl``
    wall time per record (kept apart so the results stay reproducible).
``summary.csv``
    one row per grid point with medians, selection rates and coverage.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import bvm as bv
from . import divergences as dv
from . import families as fam
from . import posterior as post
from . import priors as pr
from .errors import ConfigError, NuisregError
from .model import SparseVector

AGGREGATION_NOTE = ("errors are aggregated by the median over replicates before the log-log "
                    "slope regression; acceptance bands are artifact choices, not constants "
                    "from theory")

TEST_FUNCTIONS = {
    "sine": lambda z: np.sin(2.0 * np.pi * z),
    "exp": lambda z: np.exp(z),
    "bump": lambda z: np.exp(-((z - 0.5) ** 2) / 0.02),
}


# ---------------------------------------------------------------------------
# configuration


def _take(d, allowed, where):
    d = {} if d is None else dict(d)
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    return d


@dataclass
class GridSpec:
    n: list
    p: list
    J: list = None

    def points(self):
        js = self.J if self.J else [None]
        return [{"n": int(n), "p": int(p), "J": None if j is None else int(j)}
                for p, j, n in itertools.product(self.p, js, self.n)]


@dataclass
class PriorSettings:
    a: float = 2.0
    L: tuple = (1.0, 2.0, 1.0)
    lambda_policy: object = "upper"
    check_range: bool = True
    nuisance: dict = None  # NuisancePriorSpec.to_dict layout; None = family default


@dataclass
class EngineSpec:
    kind: str = "enumeration"      # enumeration | rjmcmc
    slab: str = "laplace"          # laplace | normal
    slab_precision: float = 1.0
    s_max: int = 3
    budget: int = 1_000_000
    n_iter: int = 20_000
    burn_in: float = 0.2
    eta_fixed: bool = True
    init_eta: str = "truth"        # truth | prior
    add_proposal: str = "conditional"
    nuisance_step: float = 0.1
    thin: int = 1


@dataclass
class BvmSpec:
    enabled: bool = False
    h_choice: str = "auto"
    s_max: int = None


@dataclass
class NpSpec:
    alternative_family: dict = None
    alternative_truth: dict = None
    draws: int = 10_000


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a simulation experiment.

    ``family`` is a family dict (``{"family": "linear", "sigma2": 1.0}``);
    ``partial_linear`` may name a built-in ``function`` instead of spline
    coefficients, in which case the ``J`` grid sets the basis size. ``truth``
    gives the active indices and values of ``theta0``.
    """

    family: dict
    truth: dict
    grid: GridSpec
    prior: PriorSettings = field(default_factory=PriorSettings)
    engine: EngineSpec = field(default_factory=EngineSpec)
    bvm: BvmSpec = field(default_factory=BvmSpec)
    np_test: NpSpec = field(default_factory=NpSpec)
    simulate: dict = field(default_factory=dict)
    level: float = 0.95
    replicates: int = 1
    seed: int = 0
    out: str = None
    name: str = "experiment"

    _SIM_KEYS = ("m", "obs_prob", "pair_floor", "z_design", "q_re", "rescale")

    @classmethod
    def from_dict(cls, d):
        d = _take(d, [f.name for f in dataclasses.fields(cls)], "config")
        for key in ("family", "truth", "grid"):
            if key not in d:
                raise ConfigError(f"config: missing required key {key!r}")
        truth = _take(d["truth"], ["support", "values"], "truth")
        grid = GridSpec(**_take(d["grid"], ["n", "p", "J"], "grid"))
        prior = PriorSettings(**_take(d.get("prior"), [f.name for f in dataclasses.fields(PriorSettings)], "prior"))
        engine = EngineSpec(**_take(d.get("engine"), [f.name for f in dataclasses.fields(EngineSpec)], "engine"))
        bvm = BvmSpec(**_take(d.get("bvm"), [f.name for f in dataclasses.fields(BvmSpec)], "bvm"))
        npt = NpSpec(**_take(d.get("np_test"), [f.name for f in dataclasses.fields(NpSpec)], "np_test"))
        sim = _take(d.get("simulate"), cls._SIM_KEYS, "simulate")
        cfg = cls(dict(d["family"]), truth, grid, prior, engine, bvm, npt, sim,
                  float(d.get("level", 0.95)), int(d.get("replicates", 1)), int(d.get("seed", 0)),
                  d.get("out"), str(d.get("name", "experiment")))
        cfg.prior.L = tuple(float(v) for v in cfg.prior.L)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["prior"]["L"] = list(self.prior.L)
        return d

    def dump(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    @property
    def s0(self):
        return len(self.truth.get("support", []))

    def validate(self):
        """Reject malformed configs and infeasible budgets before any work starts."""
        g = self.grid
        if not g.n or not g.p:
            raise ConfigError("grid: n and p must be nonempty")
        if g.J is not None and len(g.J) == 0:
            raise ConfigError("grid: J must be nonempty when given")
        if any(int(n) < 1 for n in g.n) or any(int(p) < 1 for p in g.p):
            raise ConfigError("grid: n and p must be positive")
        sup = list(self.truth.get("support", []))
        vals = list(self.truth.get("values", []))
        if len(sup) != len(vals):
            raise ConfigError("truth: support and values differ in length")
        if len(set(sup)) != len(sup) or any(j < 0 for j in sup):
            raise ConfigError("truth: support indices must be distinct and nonnegative")
        if sup and max(sup) >= min(g.p):
            raise ConfigError("truth: s0 indices must lie below every p in the grid")
        if self.replicates < 1:
            raise ConfigError("replicates must be positive")
        if not 0.0 < self.level < 1.0:
            raise ConfigError("level must lie in (0, 1)")
        fname = self.family.get("family")
        if fname not in fam.FAMILIES:
            raise ConfigError(f"family: unknown family {fname!r}")
        if "function" in self.family:
            if fname != "partial_linear":
                raise ConfigError("family: 'function' applies to partial_linear only")
            if self.family["function"] not in TEST_FUNCTIONS:
                raise ConfigError(f"family: unknown test function; choose from {sorted(TEST_FUNCTIONS)}")
            if not g.J:
                raise ConfigError("grid: a J grid is required when the family names a function")
        elif g.J:
            raise ConfigError("grid: J applies only to partial_linear with a named function")
        e = self.engine
        if e.kind not in ("enumeration", "rjmcmc"):
            raise ConfigError(f"engine: unknown kind {e.kind!r}")
        if e.slab not in ("laplace", "normal"):
            raise ConfigError(f"engine: unknown slab {e.slab!r}")
        if e.init_eta not in ("truth", "prior"):
            raise ConfigError("engine: init_eta must be 'truth' or 'prior'")
        if e.s_max < self.s0:
            raise ConfigError("engine: s_max is below s0")
        if e.kind == "enumeration":
            if e.slab == "laplace" and e.s_max > 3:
                raise ConfigError("engine: Laplace-slab enumeration supports s_max <= 3")
            total = sum(math.comb(max(g.p), k) for k in range(min(e.s_max, max(g.p)) + 1))
            if total > e.budget:
                raise ConfigError(f"engine: {total} supports exceed the budget {e.budget}")
        else:
            if e.n_iter < 1 or e.thin < 1:
                raise ConfigError("engine: n_iter and thin must be positive")
            if not 0.0 <= e.burn_in < 1.0:
                raise ConfigError("engine: burn_in is a fraction in [0, 1)")
        if self.bvm.enabled:
            sm = self.bvm.s_max if self.bvm.s_max is not None else e.s_max
            total = sum(math.comb(max(g.p), k) for k in range(min(sm, max(g.p)) + 1))
            if total > e.budget:
                raise ConfigError(f"bvm: {total} mixture components exceed the budget {e.budget}")
        unknown = set(self.simulate) - set(self._SIM_KEYS)
        if unknown:
            raise ConfigError(f"simulate: unknown keys {sorted(unknown)}")
        return self

    # -- model pieces --------------------------------------------------------

    def eta0(self, J=None):
        d = dict(self.family)
        if "function" in d:
            f = TEST_FUNCTIONS[d.pop("function")]
            d.pop("family")
            return fam.PartialLinear.from_function(f, int(J), float(d.get("sigma2", 1.0)), int(d.get("q", 4)))
        return fam.family_from_dict(d)

    def theta0(self, p):
        return SparseVector(tuple(self.truth.get("support", [])),
                            np.asarray(self.truth.get("values", []), dtype=float), p)

    def nuisance_prior(self, eta0):
        if self.prior.nuisance is None:
            return pr.default_nuisance_prior(eta0)
        return pr.NuisancePriorSpec.from_dict(self.prior.nuisance)


# ---------------------------------------------------------------------------
# results


RECORD_FIELDS = ("grid_index", "replicate", "n", "p", "J", "s0", "status", "message",
                 "lam", "modal", "selected", "mass_s0", "err_l1", "err_l2", "err_pred",
                 "d_n", "tv", "level", "ci", "truth_support", "truth_values")


class ResultsTable:
    """Ordered per-replicate records; every metric is computed from these alone."""

    def __init__(self, records=(), timings=None):
        self.records = sorted(records, key=_key)
        self.timings = dict(timings or {})

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def ok(self):
        return [r for r in self.records if r["status"] == "ok"]

    def column(self, name, ok_only=True):
        rows = self.ok() if ok_only else self.records
        return np.array([np.nan if r.get(name) is None else r[name] for r in rows], dtype=float)

    def grid_points(self):
        seen = {}
        for r in self.records:
            seen.setdefault(r["grid_index"], {"n": r["n"], "p": r["p"], "J": r["J"], "s0": r["s0"]})
        return seen

    def wall_time(self, grid_index, replicate):
        return self.timings.get((grid_index, replicate))

    @classmethod
    def load(cls, out_dir):
        recs = _read_jsonl(os.path.join(out_dir, "results.jsonl"))
        tim = {(t["grid_index"], t["replicate"]): t["wall_time"]
               for t in _read_jsonl(os.path.join(out_dir, "timings.jsonl"))}
        return cls(recs, tim)


def _key(rec):
    return rec["grid_index"], rec["replicate"]


def _read_jsonl(path):
    """Read complete lines; a torn final line from an interrupted run is dropped."""
    if not os.path.exists(path):
        return []
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.endswith("\n"):
                break
            out.append(json.loads(line))
    return out


def _dump(rec):
    return json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n"


def _truncate_to_complete(path, keep):
    """Rewrite ``path`` with the first ``keep`` complete lines (drops torn tails)."""
    if not os.path.exists(path):
        return
    with open(path) as fh:
        lines = [ln for ln in fh if ln.endswith("\n")][:keep]
    with open(path, "w") as fh:
        fh.writelines(lines)


# ---------------------------------------------------------------------------
# one replicate


def _round(x, digits=12):
    return None if x is None else float(f"{float(x):.{digits}g}")


def eta_estimate(chain, burn_in=0.2):
    """Posterior mean of the stored nuisance vectors, mapped back to a state."""
    start = post._burn(len(chain), burn_in)
    stored = chain.etas[start:]
    if not stored or stored[0] is None:
        return chain.template
    try:
        mean = np.mean(np.asarray(stored, dtype=float), axis=0)
    except ValueError:  # edge set changed (graphical): fall back to the last state
        mean = np.asarray(stored[-1], dtype=float)
    return chain.template.from_unconstrained(mean)[0]


def fit_replicate(cfg, data, theta0, eta0, seed):
    """Posterior summary for one dataset: ``(support posterior, theta_hat, eta_hat)``."""
    e = cfg.engine
    spec = pr.SpikeSlabSpec.from_design(data.x, data.n, cfg.prior.a, cfg.prior.L,
                                        cfg.prior.lambda_policy, cfg.prior.check_range)
    if e.kind == "enumeration":
        if e.slab == "laplace":
            sp = post.enumerate_posterior_laplace_slab(data, spec, eta0, e.s_max, budget=e.budget)
        else:
            sp = post.enumerate_posterior_normal_slab(data, spec, eta0, e.s_max, e.slab_precision,
                                                      budget=e.budget)
        return spec, sp, sp.posterior_mean(), eta0
    eta_prior = cfg.nuisance_prior(eta0)
    init_eta = eta0
    if e.init_eta == "prior" and not e.eta_fixed:
        init_eta = pr.nuisance_prior_sample(eta_prior, fam.make_rng(seed, 7), eta0)
    chain = post.rjmcmc_sample(data, spec, eta_prior, SparseVector.zeros(data.p), init_eta, e.n_iter,
                               seed=seed, s_max=e.s_max, slab=e.slab, slab_precision=e.slab_precision,
                               eta_fixed=e.eta_fixed, add_proposal=e.add_proposal,
                               nuisance_step=e.nuisance_step, thin=e.thin)
    sp = post.support_marginals(chain, e.burn_in)
    return spec, sp, post.posterior_mean_theta(chain, e.burn_in), eta_estimate(chain, e.burn_in)


def run_replicate(cfg, grid_index, point, replicate):
    """Simulate, fit and score one replicate; failures become error records."""
    n, p, J = point["n"], point["p"], point["J"]
    rec = {k: None for k in RECORD_FIELDS}
    rec.update(grid_index=grid_index, replicate=replicate, n=n, p=p, J=J, s0=cfg.s0,
               truth_support=sorted(int(j) for j in cfg.truth.get("support", [])),
               level=cfg.level, status="ok", message="")
    t0 = time.perf_counter()
    try:
        theta0 = cfg.theta0(p)
        eta0 = cfg.eta0(J)
        data = fam.simulate(eta0, theta0, n, p, seed=fam.make_rng(cfg.seed, grid_index, replicate, 0),
                            **cfg.simulate)
        fit_seed = int(fam.make_rng(cfg.seed, grid_index, replicate, 1).integers(2 ** 62))
        spec, sp, theta_hat, eta_hat = fit_replicate(cfg, data, theta0, eta0, fit_seed)
        s0 = tuple(theta0.support)
        d = theta_hat - theta0.to_dense()
        modal = sp.modal()
        rec.update(lam=_round(spec.lam), modal=list(modal), selected=modal == s0,
                   mass_s0=_round(sp.prob(s0)), err_l1=_round(np.abs(d).sum()),
                   err_l2=_round(np.linalg.norm(d)), err_pred=_round(np.linalg.norm(data.x @ d)),
                   d_n=_round(dv.pseudo_metrics(eta_hat, eta0, data)[2]),
                   truth_values=[_round(v) for v in theta0.values])
        if cfg.bvm.enabled:
            sm = cfg.bvm.s_max if cfg.bvm.s_max is not None else cfg.engine.s_max
            mix = bv.build_bvm(data, theta0, eta0, spec, cfg.bvm.h_choice, s_max=sm,
                               budget=cfg.engine.budget)
            rec["tv"] = _round(bv.tv_support_mixture(sp, mix))
        if s0:
            one = bv.build_bvm(data, theta0, eta0, spec, cfg.bvm.h_choice, supports=[s0])
            rec["ci"] = [[_round(a), _round(b)] for a, b in bv.credible_intervals(one, s0, cfg.level)]
    except (NuisregError, np.linalg.LinAlgError, FloatingPointError) as exc:
        for k in ("lam", "modal", "selected", "mass_s0", "err_l1", "err_l2", "err_pred", "d_n",
                  "tv", "ci", "truth_values"):
            rec[k] = None
        rec.update(status="error", message=f"{type(exc).__name__}: {exc}")
    return rec, time.perf_counter() - t0


def _task(args):
    return run_replicate(*args)


# ---------------------------------------------------------------------------
# experiment driver


def run_experiment(cfg, out=None, workers=1, resume=True, progress=None):
    """Run every (grid point, replicate), appending records in canonical order.

    Records already present in ``results.jsonl`` are kept when ``resume`` is
    true, so an interrupted run continues where it stopped. Per-replicate
    failures are recorded with ``status="error"`` and do not stop the run.
    """
    cfg.validate()
    out = out or cfg.out
    points = cfg.grid.points()
    keys = [(g, r) for g in range(len(points)) for r in range(cfg.replicates)]
    done, timings = [], {}
    if out is not None:
        os.makedirs(out, exist_ok=True)
        res_path = os.path.join(out, "results.jsonl")
        tim_path = os.path.join(out, "timings.jsonl")
        if resume:
            done = _read_jsonl(res_path)
            # records are written in canonical order, so the valid part is a prefix
            valid = 0
            for rec, k in zip(done, keys):
                if _key(rec) != k:
                    break
                valid += 1
            done = done[:valid]
            timings = {(t["grid_index"], t["replicate"]): t["wall_time"] for t in _read_jsonl(tim_path)}
        _truncate_to_complete(res_path, len(done)) if resume else open(res_path, "w").close()
        if not resume:
            open(tim_path, "w").close()
        with open(os.path.join(out, "config.yaml"), "w") as fh:
            yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
    pending = keys[len(done):]
    records = list(done)
    res_fh = open(os.path.join(out, "results.jsonl"), "a") if out else None
    tim_fh = open(os.path.join(out, "timings.jsonl"), "a") if out else None
    try:
        args = [(cfg, g, points[g], r) for g, r in pending]
        results = _map(args, workers)
        # single appender: buffer out-of-order completions, write in key order
        buffer, nxt = {}, 0
        for (g, r), (rec, wall) in results:
            buffer[(g, r)] = (rec, wall)
            while nxt < len(pending) and pending[nxt] in buffer:
                rec, wall = buffer.pop(pending[nxt])
                records.append(rec)
                timings[pending[nxt]] = wall
                if res_fh:
                    res_fh.write(_dump(rec))
                    res_fh.flush()
                    tim_fh.write(_dump({"grid_index": rec["grid_index"], "replicate": rec["replicate"],
                                        "wall_time": wall}))
                    tim_fh.flush()
                if progress:
                    progress(rec)
                nxt += 1
    finally:
        if res_fh:
            res_fh.close()
            tim_fh.close()
    table = ResultsTable(records, timings)
    if out:
        write_summary(table, os.path.join(out, "summary.csv"))
        with open(os.path.join(out, "meta.json"), "w") as fh:
            json.dump({"name": cfg.name, "aggregation": AGGREGATION_NOTE,
                       "records": len(table), "failed": len(table) - len(table.ok())}, fh, indent=2)
    return table


def _map(args, workers):
    keyed = [((a[1], a[3]), a) for a in args]
    if workers <= 1 or len(args) <= 1:
        for k, a in keyed:
            yield k, run_replicate(*a)
        return
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futs = {ex.submit(_task, a): k for k, a in keyed}
        for f in as_completed(futs):
            yield futs[f], f.result()


# ---------------------------------------------------------------------------
# metrics


def _by_point(table):
    groups = {}
    for r in table.ok():
        groups.setdefault(r["grid_index"], []).append(r)
    return groups


def contraction_slope(table, error_column="err_l2", p=None):
    """Least-squares slope of log median error against log n at fixed ``(p, s0)``."""
    rows = table.ok() if isinstance(table, ResultsTable) else list(table)
    if p is not None:
        rows = [r for r in rows if r["p"] == p]
    if len({(r["p"], r["s0"], r.get("J")) for r in rows}) > 1:
        raise ValueError("records span several (p, s0, J); pass p to pick one")
    by_n = {}
    for r in rows:
        if r.get(error_column) is not None:
            by_n.setdefault(r["n"], []).append(r[error_column])
    if len(by_n) < 2:
        raise ValueError("need at least two sample sizes")
    ns = np.array(sorted(by_n), dtype=float)
    med = np.array([np.median(by_n[n]) for n in sorted(by_n)])
    if np.any(med <= 0):
        raise ValueError("median errors must be positive for a log-log fit")
    return float(np.polyfit(np.log(ns), np.log(med), 1)[0])


def median_errors(table, error_column="err_l2"):
    out = {}
    for g, rows in sorted(_by_point(table).items()):
        out[g] = float(np.median([r[error_column] for r in rows]))
    return out


def selection_metrics(table):
    """Per grid point: exact-recovery, strict-superset and strict-subset rates of the modal support."""
    out = {}
    for g, rows in sorted(_by_point(table).items()):
        ex = sup = sub = 0
        for r in rows:
            m = set(r["modal"])
            s0 = set(r["truth_support"])
            ex += m == s0
            sup += m > s0
            sub += m < s0
        k = len(rows)
        out[g] = {"exact": ex / k, "superset": sup / k, "subset": sub / k, "replicates": k}
    return out


def coverage_metrics(table, level=None):
    """Per grid point and active coordinate: fraction of intervals containing the truth."""
    out = {}
    for g, rows in sorted(_by_point(table).items()):
        rows = [r for r in rows if r.get("ci") is not None and (level is None or r["level"] == level)]
        if not rows:
            continue
        hits = np.array([[lo <= t <= hi for (lo, hi), t in zip(r["ci"], r["truth_values"])]
                         for r in rows], dtype=float)
        out[g] = hits.mean(axis=0).tolist()
    return out


def summary_rows(table):
    sel = selection_metrics(table)
    cov = coverage_metrics(table)
    pts = table.grid_points()
    groups = _by_point(table)
    rows = []
    for g, pt in sorted(pts.items()):
        rs = groups.get(g, [])
        total = sum(1 for r in table if r["grid_index"] == g)
        row = {"grid_index": g, "n": pt["n"], "p": pt["p"], "J": pt["J"], "s0": pt["s0"],
               "replicates": total, "ok": len(rs)}
        for col in ("err_l1", "err_l2", "err_pred", "d_n", "tv", "mass_s0"):
            vals = [r[col] for r in rs if r.get(col) is not None]
            row[f"median_{col}"] = float(np.median(vals)) if vals else None
        s = sel.get(g, {})
        row.update(exact_rate=s.get("exact"), superset_rate=s.get("superset"),
                   subset_rate=s.get("subset"))
        c = cov.get(g)
        row["coverage"] = float(np.mean(c)) if c else None
        rows.append(row)
    return rows


def write_summary(table, path=None):
    rows = summary_rows(table)
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else (f"{v:.6g}" if isinstance(v, float) else v))
                        for k, v in r.items()})
    text = buf.getvalue()
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    return text


# ---------------------------------------------------------------------------
# Neyman-Pearson test error


def _batched_loglik(data, theta, eta, y_batch):
    """Gaussian log-likelihood of each stacked response in ``y_batch`` (R x n_*)."""
    th = theta.to_dense() if isinstance(theta, SparseVector) else np.asarray(theta, float)
    total = np.zeros(y_batch.shape[0])
    for m, (idx, rows) in data.size_classes.items():
        xi, dl = eta.class_moments(data, idx)
        mu = data.x[rows] @ th + xi
        res = y_batch[:, rows] - mu
        prec = np.linalg.inv(dl)
        _, ld = np.linalg.slogdet(dl)
        quad = np.einsum("rki,kij,rkj->r", res, prec, res)
        total += -0.5 * (quad + ld.sum() + rows.size * math.log(2.0 * math.pi))
    return total


def np_error_curve(cfg, draws=None, p=None, seed=None):
    """Empirical type-I error of the likelihood-ratio test against ``exp(-n R_n)``.

    The null is ``(theta0, eta0)`` from ``cfg``; the alternative comes from
    ``cfg.np_test``. ``R_n`` is the average order-1/2 Renyi divergence on the
    simulated design, for which the bound is exact Chernoff at ``t = 1/2``.
    """
    npt = cfg.np_test
    draws = int(draws or npt.draws)
    p = int(p or cfg.grid.p[0])
    seed = cfg.seed if seed is None else seed
    eta0 = cfg.eta0(cfg.grid.J[0] if cfg.grid.J else None)
    theta0 = cfg.theta0(p)
    eta1 = fam.family_from_dict(npt.alternative_family) if npt.alternative_family else eta0
    t1 = npt.alternative_truth or cfg.truth
    theta1 = SparseVector(tuple(t1.get("support", [])), np.asarray(t1.get("values", []), float), p)
    out = []
    for gi, n in enumerate(cfg.grid.n):
        n = int(n)
        rng = fam.make_rng(seed, gi, 0)
        data = fam.simulate(eta0, theta0, n, p, seed=rng, **cfg.simulate)
        rn = dv.avg_renyi(theta1, eta1, theta0, eta0, data)
        bound = math.exp(-n * rn)
        y = np.empty((draws, data.n_star))
        for m, (idx, rows) in data.size_classes.items():
            xi, dl = eta0.class_moments(data, idx)
            mu = data.x[rows] @ theta0.to_dense() + xi
            ch = np.linalg.cholesky(dl)
            z = rng.standard_normal((draws,) + mu.shape)
            y[:, rows] = mu + np.einsum("kij,rkj->rki", ch, z)
        llr = _batched_loglik(data, theta1, eta1, y) - _batched_loglik(data, theta0, eta0, y)
        err = float(np.mean(llr >= 0.0))
        se = math.sqrt(err * (1.0 - err) / draws)
        out.append({"n": n, "error": err, "se": se, "renyi": rn, "bound": bound,
                    "ok": err <= bound + 3.0 * se})
    return out
