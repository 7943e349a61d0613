"""Empirical and exact Multi-Group Proportional Representation.

For a function class C, MPR(C, G, R) = sup_c |E_G c - E_R c|.  The linear class
has the closed form ||X^T a|| (the norm of the mean-difference vector); the
depth-l tree class equals the largest 2*TV between the l-feature marginals of
G and R.  Brute-force oracles for both live at the bottom of this module.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .attributes import JointDistribution, ReferenceSpec, SampleSet
from .errors import GuardError, InputError
from .function_classes import (
    BoundedLinear,
    DecisionTree,
    ExplicitSet,
    IndicatorWitness,
    LinearWitness,
    TreeWitness,
    enumerate_subsets,
    spec_to_json,
    witness_to_json,
)

MAX_SUBSETS = 10**6
BRUTE_FORCE_GUARD = 10**7
TIE_TOL = 1e-12
# net cell masses below this are rounding residue (a true nonzero mass is >= 1/(k*m))
MASS_ZERO_TOL = 1e-13

CellDistribution = Mapping[tuple, float]


def _rows(S) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix and weights of a SampleSet, reference, distribution or raw array."""
    if isinstance(S, ReferenceSpec):
        S = S.as_sample_set()
    if isinstance(S, JointDistribution):
        S = S.as_sample_set()
    if isinstance(S, SampleSet):
        return S.vectors.astype(float), S.weights
    X = np.asarray(S, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise InputError("empty sample set")
    return X, np.full(X.shape[0], 1.0 / X.shape[0])


def _pair(G, R):
    if isinstance(G, SampleSet) and isinstance(R, SampleSet) and G.schema != R.schema:
        raise InputError("generated and reference sets use different schemas")
    XG, wG = _rows(G)
    XR, wR = _rows(R)
    if XG.shape[1] != XR.shape[1]:
        raise InputError(f"feature dimension mismatch: {XG.shape[1]} vs {XR.shape[1]}")
    return XG, wG, XR, wR


@dataclass(frozen=True, eq=False)
class MeanDifferenceVector:
    v: np.ndarray
    k: int
    m: int


@dataclass(frozen=True, eq=False)
class BootstrapStats:
    mean: float
    std: float
    ci: tuple[float, float]


@dataclass(frozen=True, eq=False)
class MprEstimate:
    value: float
    spec: object
    witness: object
    k: int | None
    m: int | None
    bootstrap: BootstrapStats | None = None

    def to_json(self, feature_names: Sequence[str] | None = None) -> dict:
        boot = None
        if self.bootstrap is not None:
            boot = {"mean": self.bootstrap.mean, "std": self.bootstrap.std, "ci": list(self.bootstrap.ci)}
        return {
            "value": float(self.value),
            "class": spec_to_json(self.spec),
            "witness": witness_to_json(self.witness, feature_names),
            "k": self.k,
            "m": self.m,
            "bootstrap": boot,
        }


def mean_diff_vector(G, R) -> MeanDifferenceVector:
    """``v_j = E_G[x_j] - E_R[x_j]`` (weighted means when weights are present)."""
    XG, wG, XR, wR = _pair(G, R)
    return MeanDifferenceVector(wG @ XG - wR @ XR, XG.shape[0], XR.shape[0])


def mpr_linear(G, R) -> MprEstimate:
    """MPR over ``{w.x : ||w|| <= 1}``: the norm of the mean-difference vector."""
    md = mean_diff_vector(G, R)
    norm = float(np.linalg.norm(md.v))
    w = md.v / norm if norm > 0 else np.zeros_like(md.v)
    return MprEstimate(norm, BoundedLinear(), LinearWitness(w), md.k, md.m)


def tv_distance(a: CellDistribution, b: CellDistribution) -> float:
    """Total variation over the union of the two supports."""
    arity = {len(c) for c in list(a) + list(b)}
    if len(arity) > 1:
        raise InputError(f"cell arity mismatch: {sorted(arity)}")
    cells = set(a) | set(b)
    return 0.5 * sum(abs(a.get(c, 0.0) - b.get(c, 0.0)) for c in cells)


def marginal_cells(S, subset: Sequence[int]) -> dict[tuple[int, ...], float]:
    """Empirical (weighted) distribution of the projection of ``S`` onto ``subset``."""
    X, w = _rows(S)
    subset = list(subset)
    if not subset:
        raise InputError("marginal needs at least one feature index")
    if min(subset) < 0 or max(subset) >= X.shape[1]:
        raise InputError(f"feature index out of range for dimension {X.shape[1]}")
    out: dict[tuple[int, ...], float] = {}
    for row, wi in zip(X[:, subset], w):
        cell = tuple(1 if v > 0 else -1 for v in row)
        out[cell] = out.get(cell, 0.0) + float(wi)
    return out


def _require_pm1(*mats):
    for X in mats:
        if not np.isin(X, (-1.0, 1.0)).all():
            raise InputError("decision-tree MPR needs -1/+1 feature vectors")


def _check_depth(depth: int, n: int):
    if int(depth) != depth or depth < 1 or depth > n:
        raise InputError(f"tree depth must satisfy 1 <= depth <= {n}, got {depth}")
    if math.comb(n, depth) > MAX_SUBSETS:
        raise GuardError(f"C({n}, {depth}) = {math.comb(n, depth)} subsets exceeds the exact-scan limit {MAX_SUBSETS}")


def _compress(Xs: Sequence[np.ndarray], signed_weights: Sequence[np.ndarray]):
    """Merge identical rows.  Returns unique rows U and a (batch, u) net-weight matrix.

    ``signed_weights[i]`` has shape (batch, len(Xs[i])) or (len(Xs[i]),).
    """
    X = np.vstack(Xs)
    U, inv = np.unique(X, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    W = np.hstack([np.atleast_2d(w) for w in signed_weights])
    D = np.zeros((W.shape[0], U.shape[0]))
    for b in range(W.shape[0]):
        D[b] = np.bincount(inv, weights=W[b], minlength=U.shape[0])
    return U, D


def tree_scan(U: np.ndarray, D: np.ndarray, depth: int):
    """Max over depth-subsets of sum_cells |sum of net weight in cell|, per batch row.

    Returns ``(values, subset_index)`` where ``subset_index[b]`` is the
    position (in lexicographic enumeration) of the first subset attaining the
    maximum within ``TIE_TOL``.
    """
    n = U.shape[1]
    _check_depth(depth, n)
    neg = (U < 0).astype(np.int64)
    ncell = 1 << depth
    place = 1 << np.arange(depth - 1, -1, -1)
    batch = D.shape[0]
    best = np.full(batch, -np.inf)
    best_idx = np.zeros(batch, dtype=np.int64)
    chunk = max(1, int(4_000_000 // max(1, U.shape[0] * ncell)))
    subsets = enumerate_subsets(n, depth)
    offset = 0
    while True:
        block = np.array(list(itertools.islice(subsets, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        codes = neg[:, block] @ place  # (u, S)
        onehot = np.zeros((U.shape[0], block.shape[0], ncell))
        np.put_along_axis(onehot, codes[:, :, None], 1.0, axis=2)
        mass = np.einsum("bu,usc->bsc", D, onehot)
        mass[np.abs(mass) < MASS_ZERO_TOL] = 0.0
        vals = np.abs(mass).sum(axis=2)  # (batch, S)
        cmax = vals.max(axis=1)
        cidx = np.argmax(vals >= cmax[:, None] - TIE_TOL, axis=1)
        better = cmax > best + TIE_TOL
        best = np.where(better, cmax, best)
        best_idx = np.where(better, cidx + offset, best_idx)
        offset += block.shape[0]
    return best, best_idx


def _nth_subset(n: int, depth: int, index: int) -> tuple[int, ...]:
    return next(itertools.islice(enumerate_subsets(n, depth), int(index), None))


def _tree_estimate(XG, wG, XR, wR, depth) -> tuple[float, TreeWitness]:
    _require_pm1(XG, XR)
    U, D = _compress([XG, XR], [wG, -wR])
    values, idx = tree_scan(U, D, depth)
    subset = _nth_subset(U.shape[1], depth, idx[0])
    cells = list(itertools.product((1, -1), repeat=depth))
    mass = dict.fromkeys(cells, 0.0)
    for row, d in zip(U[:, list(subset)], D[0]):
        mass[tuple(1 if v > 0 else -1 for v in row)] += d
    signs = {c: (1 if mass[c] >= 0 else -1) for c in cells}
    return float(values[0]), TreeWitness(subset, signs)


def mpr_tree(G, R, depth: int) -> MprEstimate:
    """MPR over depth-``depth`` binary trees on +/-1 features (max marginal 2*TV)."""
    XG, wG, XR, wR = _pair(G, R)
    value, witness = _tree_estimate(XG, wG, XR, wR, depth)
    return MprEstimate(value, DecisionTree(depth), witness, XG.shape[0], XR.shape[0])


def mpr_explicit(G, R, spec: ExplicitSet) -> MprEstimate:
    XG, wG, XR, wR = _pair(G, R)
    diffs = np.array([abs(wG @ ind.values(XG) - wR @ ind.values(XR)) for ind in spec.indicators])
    i = int(np.argmax(diffs >= diffs.max() - TIE_TOL))
    return MprEstimate(float(diffs[i]), spec, IndicatorWitness(i, spec.indicators[i]), XG.shape[0], XR.shape[0])


def mpr(G, R, spec) -> MprEstimate:
    """Dispatch to the closed form for ``spec``."""
    if isinstance(spec, DecisionTree):
        return mpr_tree(G, R, spec.depth)
    if isinstance(spec, BoundedLinear):
        return mpr_linear(G, R)
    if isinstance(spec, ExplicitSet):
        return mpr_explicit(G, R, spec)
    raise TypeError(f"unknown function class {spec!r}")


def mpr_exact(p, r, spec) -> MprEstimate:
    """Population MPR between two exact joint distributions."""
    for d in (p, r):
        if not isinstance(d, JointDistribution):
            raise InputError("mpr_exact needs exact joint distributions")
    if p.schema != r.schema:
        raise InputError("distributions use different schemas")
    est = mpr(p.as_sample_set(), r.as_sample_set(), spec)
    return MprEstimate(est.value, est.spec, est.witness, None, None)


def brute_force_linear(G, R, trials: int, seed) -> float:
    """Best ``|mean difference of w.x|`` over seeded uniform random unit directions."""
    if trials < 1:
        raise InputError("trials must be >= 1")
    XG, wG, XR, wR = _pair(G, R)
    rng = np.random.default_rng(seed)
    best = 0.0
    for start in range(0, trials, 20_000):
        n = min(20_000, trials - start)
        W = rng.standard_normal((n, XG.shape[1]))
        W /= np.linalg.norm(W, axis=1, keepdims=True)
        gaps = np.abs((XG @ W.T).T @ wG - (XR @ W.T).T @ wR)
        best = max(best, float(gaps.max()))
    return best


def brute_force_tree(G, R, depth: int) -> tuple[float, TreeWitness]:
    """Exhaustive search over subsets and all 2**(2**depth) leaf labelings."""
    XG, wG, XR, wR = _pair(G, R)
    n = XG.shape[1]
    if depth < 1 or depth > n:
        raise InputError(f"tree depth must satisfy 1 <= depth <= {n}, got {depth}")
    nlab = 2 ** (2**depth)
    if math.comb(n, depth) * nlab > BRUTE_FORCE_GUARD:
        raise GuardError(f"brute force needs C({n},{depth})*2^(2^{depth}) > {BRUTE_FORCE_GUARD} evaluations")
    cells = list(itertools.product((1, -1), repeat=depth))
    labelings = np.array(list(itertools.product((1, -1), repeat=len(cells))), dtype=float)
    best, best_w = -1.0, None
    for subset in itertools.combinations(range(n), depth):
        index = {c: i for i, c in enumerate(cells)}
        cg = np.array([index[tuple(int(np.sign(v)) for v in row)] for row in XG[:, list(subset)]])
        cr = np.array([index[tuple(int(np.sign(v)) for v in row)] for row in XR[:, list(subset)]])
        gaps = np.abs(labelings[:, cg] @ wG - labelings[:, cr] @ wR)
        j = int(np.argmax(gaps))
        if gaps[j] > best:
            best = float(gaps[j])
            best_w = TreeWitness(subset, {c: int(labelings[j, i]) for i, c in enumerate(cells)})
    return best, best_w
