"""Uncertainty, complexity and bound evaluation for MPR estimates.

All stochastic routines take an integer ``seed``; independent units of work
(bootstrap repetitions, grid cells, experiment repetitions) draw from
sub-seeds produced by :func:`derive_seed`, so results never depend on the
order or parallelism in which units are evaluated.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats as sps

from .attributes import JointDistribution, SampleSet
from .errors import InputError
from .function_classes import BoundedLinear, DecisionTree, ExplicitSet
from .mpr_core import _compress, _pair, _require_pm1, _rows, mpr, mpr_exact, tree_scan

THREADS_ENV = "MPRAUDIT_THREADS"


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 63-bit sub-seed for the unit identified by ``keys``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def default_jobs() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


def _map(fn, items, n_jobs=None):
    n_jobs = default_jobs() if n_jobs is None else n_jobs
    items = list(items)
    if n_jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))


# -- bootstrap -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    point_estimate: float
    replicate_values: np.ndarray
    mean: float
    std: float
    ci: tuple[float, float]
    resample_size: int
    repetitions: int
    seed: int
    joint: bool = False

    def to_json(self) -> dict:
        return {
            "point_estimate": self.point_estimate,
            "mean": self.mean,
            "std": self.std,
            "ci": list(self.ci),
            "resample_size": self.resample_size,
            "repetitions": self.repetitions,
            "seed": self.seed,
            "joint": self.joint,
            "replicate_values": [float(v) for v in self.replicate_values],
        }


def _batch_mpr(spec, XG, WG, XR, WR) -> np.ndarray:
    """MPR for each row of the weight matrices WG (batch, k) and WR (batch, m)."""
    if isinstance(spec, BoundedLinear):
        return np.linalg.norm(WG @ XG - WR @ XR, axis=1)
    if isinstance(spec, DecisionTree):
        _require_pm1(XG, XR)
        U, D = _compress([XG, XR], [WG, -WR])
        return tree_scan(U, D, spec.depth)[0]
    if isinstance(spec, ExplicitSet):
        gaps = [np.abs(WG @ ind.values(XG) - WR @ ind.values(XR)) for ind in spec.indicators]
        return np.max(gaps, axis=0)
    raise TypeError(f"unknown function class {spec!r}")


def _merge_duplicates(X, C, total):
    U, inv = np.unique(X, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    merged = np.zeros((C.shape[0], U.shape[0]))
    for b in range(C.shape[0]):
        merged[b] = np.bincount(inv, weights=C[b], minlength=U.shape[0])
    return U, merged / total


def bootstrap_mpr(
    G,
    R,
    spec,
    resample_size: int = 1000,
    repetitions: int = 100,
    seed: int = 0,
    alpha: float = 0.05,
    joint: bool = False,
) -> BootstrapResult:
    """Resample the generated set with replacement and recompute MPR.

    Each repetition draws ``resample_size`` generated rows (according to the
    set's weights); the reference is held fixed unless ``joint`` is set, in
    which case it is resampled to its own size as well.
    """
    if resample_size < 1:
        raise InputError("resample_size must be >= 1")
    if repetitions < 2:
        raise InputError("need >= 2 repetitions")
    XG, wG, XR, wR = _pair(G, R)
    k, m = XG.shape[0], XR.shape[0]
    CG = np.empty((repetitions, k))
    CR = np.tile(wR, (repetitions, 1))
    for rep in range(repetitions):
        rng = np.random.default_rng(derive_seed(seed, rep))
        CG[rep] = np.bincount(rng.choice(k, size=resample_size, p=wG), minlength=k)
        if joint:
            CR[rep] = np.bincount(rng.choice(m, size=m, p=wR), minlength=m)
    # sum integer draw counts over duplicate rows before dividing, so that
    # replicates drawing the same multiset of rows get bit-identical weights
    UG, WG = _merge_duplicates(XG, CG, resample_size)
    UR, WR = _merge_duplicates(XR, CR, m) if joint else (XR, CR)
    values = _batch_mpr(spec, UG, WG, UR, WR)
    lo, hi = np.percentile(values, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return BootstrapResult(
        point_estimate=float(mpr(G, R, spec).value),
        replicate_values=values,
        mean=float(values.mean()),
        std=float(values.std(ddof=1)),
        ci=(float(lo), float(hi)),
        resample_size=int(resample_size),
        repetitions=int(repetitions),
        seed=int(seed),
        joint=joint,
    )


# -- Rademacher complexity -------------------------------------------------------


@dataclass(frozen=True)
class RademacherEstimate:
    value: float
    trials: int
    std_error: float


def empirical_rademacher(spec, S, trials: int = 100, seed: int = 0) -> RademacherEstimate:
    """Monte-Carlo estimate of ``E_sigma sup_c sum_i w_i sigma_i c(x_i)``.

    The inner supremum is exact for each class: a norm for the linear class, a
    per-cell best sign for trees, a max over indicators for explicit sets.
    """
    if trials < 1:
        raise InputError("trials must be >= 1")
    X, w = _rows(S)
    rng = np.random.default_rng(seed)
    sigma = rng.choice((-1.0, 1.0), size=(trials, X.shape[0]))
    SW = sigma * w
    if isinstance(spec, BoundedLinear):
        vals = np.linalg.norm(SW @ X, axis=1)
    elif isinstance(spec, DecisionTree):
        _require_pm1(X)
        U, D = _compress([X], [SW])
        vals = tree_scan(U, D, spec.depth)[0]
    elif isinstance(spec, ExplicitSet):
        vals = np.max([SW @ ind.values(X) for ind in spec.indicators], axis=0)
    else:
        raise TypeError(f"unknown function class {spec!r}")
    se = float(vals.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return RademacherEstimate(float(vals.mean()), int(trials), se)


# -- bounds ----------------------------------------------------------------------


def _rad(v) -> float:
    return float(v.value) if isinstance(v, RademacherEstimate) else float(v)


@dataclass(frozen=True)
class BoundInputs:
    B: float = 2.0
    rad_G: float | RademacherEstimate = 0.0
    rad_R: float | RademacherEstimate = 0.0
    k: int = 1
    m: int = 1
    delta: float = 0.05
    N: int = 1
    lambda_sup: float = 0.0
    eps: float = 0.1
    sigma2: float = 0.0


@dataclass(frozen=True)
class BoundResult:
    value: float
    vacuous: bool
    terms: tuple[float, ...] = field(default=())

    def to_json(self) -> dict:
        return {"value": self.value, "vacuous": self.vacuous, "terms": list(self.terms)}


def gap_bound_prop1(inputs: BoundInputs) -> float:
    """High-probability bound on |empirical MPR - true MPR|:
    ``2 rad_G + 2 rad_R + B sqrt(log(2/delta) / (2 (k + m)))``."""
    if not 0 < inputs.delta < 1:
        raise InputError(f"delta must lie in (0, 1), got {inputs.delta}")
    if inputs.k < 1 or inputs.m < 1:
        raise InputError("k and m must be >= 1")
    conc = inputs.B * math.sqrt(math.log(2 / inputs.delta) / (2 * (inputs.k + inputs.m)))
    return 2 * _rad(inputs.rad_G) + 2 * _rad(inputs.rad_R) + conc


def prompt_bound_prop2(inputs: BoundInputs, squared_variant: bool = False) -> BoundResult:
    """Probability that the prompt-averaged empirical MPR misses its expectation by >= eps.

    ``exp(-eps^2 N / 8) + exp(-(2 (k+m) / B^2) (eps/2 - 2 lambda))``; the
    ``squared_variant`` squares ``(eps/2 - 2 lambda)``.
    """
    _check_prob_inputs(inputs)
    margin = inputs.eps / 2 - 2 * inputs.lambda_sup
    if margin <= 0:
        return BoundResult(1.0, True, (math.exp(-inputs.eps**2 * inputs.N / 8), 1.0))
    first = math.exp(-inputs.eps**2 * inputs.N / 8)
    second = math.exp(-(2 * (inputs.k + inputs.m) / inputs.B**2) * (margin**2 if squared_variant else margin))
    total = first + second
    return BoundResult(min(1.0, total), total >= 1.0, (first, second))


def bernstein_bound(inputs: BoundInputs) -> BoundResult:
    """Variance-aware prompt bound:
    ``2 exp(-N eps^2 / (8 sigma^2 + 4 B eps / 3)) + 2 exp(-2 (k+m) (eps/4 - 2 lambda)^2 / B^2)``."""
    _check_prob_inputs(inputs)
    if inputs.sigma2 < 0:
        raise InputError("sigma2 must be >= 0")
    first = 2 * math.exp(-inputs.N * inputs.eps**2 / (8 * inputs.sigma2 + 4 * inputs.B * inputs.eps / 3))
    margin = inputs.eps / 4 - 2 * inputs.lambda_sup
    if margin <= 0:
        return BoundResult(1.0, True, (first, 1.0))
    second = 2 * math.exp(-2 * (inputs.k + inputs.m) * margin**2 / inputs.B**2)
    total = first + second
    return BoundResult(min(1.0, total), total >= 1.0, (first, second))


def _check_prob_inputs(inputs: BoundInputs):
    if inputs.eps <= 0:
        raise InputError("eps must be > 0")
    if inputs.N < 1 or inputs.k < 1 or inputs.m < 1:
        raise InputError("N, k and m must be >= 1")
    if inputs.B <= 0:
        raise InputError("B must be > 0")
    if inputs.lambda_sup < 0:
        raise InputError("lambda_sup must be >= 0")


def empirical_variance_across_prompts(values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise InputError("need at least 2 values to estimate a variance")
    return float(values.var(ddof=1))


# -- hypothesis tests ------------------------------------------------------------


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    reject: bool
    alpha: float
    kind: str
    df: float | None = None

    __test__ = False  # not a pytest class

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "df": self.df,
            "alpha": self.alpha,
            "reject": self.reject,
        }


def threshold_test(replicates: Sequence[float], rho: float, alpha: float = 0.05) -> TestResult:
    """One-sided t-test of H0: mean MPR >= rho against H1: mean MPR < rho."""
    x = np.asarray(replicates, dtype=float)
    if x.size < 2:
        raise InputError("need at least 2 replicates")
    mean, sd, n = x.mean(), x.std(ddof=1), x.size
    if sd == 0:
        p = 0.0 if mean < rho else 1.0
        stat = -math.inf if mean < rho else (math.inf if mean > rho else 0.0)
    else:
        stat = float((mean - rho) / (sd / math.sqrt(n)))
        p = float(sps.t.cdf(stat, df=n - 1))
    return TestResult(stat, p, p < alpha, alpha, "one-sided-threshold", float(n - 1))


def model_compare_test(a: Sequence[float], b: Sequence[float], alpha: float = 0.05) -> TestResult:
    """Two-sided Welch t-test on the means of two replicate samples."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise InputError("need at least 2 replicates per model")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    if va + vb == 0:
        p = 0.0 if diff != 0 else 1.0
        stat = math.copysign(math.inf, diff) if diff != 0 else 0.0
        return TestResult(stat, p, p < alpha, alpha, "two-sided-compare", None)
    stat = float(diff / math.sqrt(va + vb))
    df = float((va + vb) ** 2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1)))
    p = float(min(1.0, 2 * sps.t.sf(abs(stat), df)))
    return TestResult(stat, p, p < alpha, alpha, "two-sided-compare", df)


# -- experiments -----------------------------------------------------------------


def _draw(source, n: int, seed: int) -> SampleSet:
    if isinstance(source, JointDistribution):
        return source.sample(n, seed)
    if isinstance(source, SampleSet):
        rng = np.random.default_rng(seed)
        return source.subset(rng.choice(source.k, size=n, p=source.weights))
    raise InputError("experiment sources must be exact distributions or sample sets")


def gap_experiment(
    p: JointDistribution,
    r: JointDistribution,
    depths: Sequence[int] = (1, 2, 3),
    sample_sizes: Sequence[int] = (100, 300, 1000, 3000),
    reps: int = 30,
    seed: int = 0,
    reference_size: int | None = None,
    n_jobs: int | None = None,
) -> list[dict]:
    """Max (and mean) |empirical MPR - true MPR| over ``reps`` draws per (depth, size).

    Generated sets of each size are drawn from ``p``; the reference is ``r``
    itself, or a draw of ``reference_size`` rows from it.  Each draw is shared
    across depths.
    """
    if reps < 1:
        raise InputError("reps must be >= 1")
    if not depths or not sample_sizes:
        raise InputError("depths and sample_sizes must be nonempty")
    truth = {d: mpr_exact(p, r, DecisionTree(d)).value for d in depths}
    ref_exact = r.as_sample_set()

    def one(unit):
        si, rep = unit
        G = _draw(p, sample_sizes[si], derive_seed(seed, si, rep, 0))
        R = ref_exact if reference_size is None else _draw(r, reference_size, derive_seed(seed, si, rep, 1))
        return [abs(mpr(G, R, DecisionTree(d)).value - truth[d]) for d in depths]

    units = [(si, rep) for si in range(len(sample_sizes)) for rep in range(reps)]
    devs = dict(zip(units, _map(one, units, n_jobs)))
    rows = []
    for di, d in enumerate(depths):
        for si, size in enumerate(sample_sizes):
            vals = np.array([devs[(si, rep)][di] for rep in range(reps)])
            rows.append(
                {
                    "depth": int(d),
                    "sample_size": int(size),
                    "true_mpr": truth[d],
                    "max_deviation": float(vals.max()),
                    "mean_deviation": float(vals.mean()),
                    "reps": int(reps),
                }
            )
    return rows


def heatmap_cell_seeds(seed: int, i: int, j: int) -> tuple[int, int, int]:
    """Sub-seeds (generated draw, reference draw, bootstrap) of grid cell (i, j)."""
    return derive_seed(seed, i, j, 0), derive_seed(seed, i, j, 1), derive_seed(seed, i, j, 2)


def std_heatmap(
    G_source,
    R_source,
    spec,
    k_list: Sequence[int],
    m_list: Sequence[int],
    resample_size: int | None = None,
    repetitions: int = 100,
    seed: int = 0,
    joint: bool = False,
    n_jobs: int | None = None,
) -> list[dict]:
    """Bootstrap std of MPR on a (k, m) grid.

    Cell (i, j) draws ``k_list[i]`` generated and ``m_list[j]`` reference rows
    and bootstraps with ``resample_size`` (default: that cell's k).
    """
    if not len(k_list) or not len(m_list):
        raise InputError("k_list and m_list must be nonempty")

    def one(unit):
        i, j = unit
        sg, sr, sb = heatmap_cell_seeds(seed, i, j)
        G = _draw(G_source, k_list[i], sg)
        R = _draw(R_source, m_list[j], sr)
        boot = bootstrap_mpr(G, R, spec, resample_size or k_list[i], repetitions, sb, joint=joint)
        return {"k": int(k_list[i]), "m": int(m_list[j]), "std": boot.std, "mean": boot.mean,
                "point_estimate": boot.point_estimate}

    units = [(i, j) for i in range(len(k_list)) for j in range(len(m_list))]
    return _map(one, units, n_jobs)
