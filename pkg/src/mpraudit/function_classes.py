"""Function classes over which MPR takes its supremum, and their witnesses.

Three classes are supported:

* ``BoundedLinear`` -- ``{x -> w.x : ||w||_2 <= 1}`` (no bias term; add an
  always-+1 feature to the schema to emulate one).
* ``DecisionTree(depth)`` -- binary trees of the given depth over +/-1
  features.  A tree is stored extensionally: the feature subset it splits on
  plus a +/-1 label for each of the ``2**depth`` cells of that subset.
* ``ExplicitSet(indicators)`` -- a finite list of group indicators.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .attributes import AttributeSchema
from .errors import InputError


@dataclass(frozen=True)
class BoundedLinear:
    kind = "linear"


@dataclass(frozen=True)
class DecisionTree:
    depth: int
    kind = "tree"

    def __post_init__(self):
        if int(self.depth) != self.depth or self.depth < 1:
            raise InputError(f"tree depth must be an integer >= 1, got {self.depth!r}")


@dataclass(frozen=True)
class Indicator:
    """Outputs ``outputs[1]`` when every feature in ``features`` is +1, else ``outputs[0]``."""

    features: tuple[int, ...]
    outputs: tuple[float, float] = (-1.0, 1.0)
    name: str = ""

    def __call__(self, x) -> float:
        x = np.asarray(x)
        return self.outputs[1] if bool(np.all(x[list(self.features)] > 0)) else self.outputs[0]

    def values(self, X: np.ndarray) -> np.ndarray:
        hit = np.all(X[:, list(self.features)] > 0, axis=1)
        return np.where(hit, self.outputs[1], self.outputs[0]).astype(float)

    @classmethod
    def from_condition(cls, schema: AttributeSchema, condition: Mapping[str, str], outputs=(-1.0, 1.0)):
        if not condition:
            raise InputError("indicator condition must name at least one attribute")
        feats = tuple(sorted(schema.feature_index(a, c) for a, c in condition.items()))
        name = "&".join(f"{a}={c}" for a, c in condition.items())
        a, b = (float(o) for o in outputs)
        return cls(feats, (a, b), name)


@dataclass(frozen=True)
class ExplicitSet:
    indicators: tuple[Indicator, ...]
    kind = "explicit"

    def __post_init__(self):
        object.__setattr__(self, "indicators", tuple(self.indicators))
        if not self.indicators:
            raise InputError("explicit function set must be nonempty")


FunctionClassSpec = BoundedLinear | DecisionTree | ExplicitSet


@dataclass(frozen=True, eq=False)
class LinearWitness:
    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim != 1:
            raise InputError("linear witness must be a vector")
        if np.linalg.norm(w) > 1 + 1e-9:
            raise InputError(f"linear witness norm {np.linalg.norm(w):.6g} exceeds 1")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)


@dataclass(frozen=True)
class TreeWitness:
    """Depth-``len(subset)`` tree: ``leaf_signs[cell]`` for each +/-1 cell of the subset."""

    subset: tuple[int, ...]
    leaf_signs: Mapping[tuple[int, ...], int] = field(hash=False)

    def __post_init__(self):
        subset = tuple(int(i) for i in self.subset)
        if not subset or any(b <= a for a, b in zip(subset, subset[1:])):
            raise InputError(f"tree subset must be nonempty and strictly increasing, got {subset}")
        signs = {tuple(int(v) for v in c): int(s) for c, s in self.leaf_signs.items()}
        expected = set(itertools.product((1, -1), repeat=len(subset)))
        if set(signs) != expected:
            raise InputError(f"leaf_signs must assign all {len(expected)} cells")
        if any(s not in (-1, 1) for s in signs.values()):
            raise InputError("leaf signs must be -1 or +1")
        object.__setattr__(self, "subset", subset)
        object.__setattr__(self, "leaf_signs", signs)


@dataclass(frozen=True)
class IndicatorWitness:
    index: int
    indicator: Indicator


Witness = LinearWitness | TreeWitness | IndicatorWitness


def evaluate(witness: Witness, x) -> float:
    """Value of a witness function at a single feature vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InputError("evaluate expects a single feature vector")
    if isinstance(witness, LinearWitness):
        if x.shape[0] != witness.w.shape[0]:
            raise InputError(f"dimension mismatch: witness {witness.w.shape[0]}, input {x.shape[0]}")
        return float(witness.w @ x)
    if isinstance(witness, TreeWitness):
        if witness.subset[-1] >= x.shape[0]:
            raise InputError(f"dimension mismatch: tree uses feature {witness.subset[-1]}, input has {x.shape[0]}")
        cell = tuple(1 if x[i] > 0 else -1 for i in witness.subset)
        return float(witness.leaf_signs[cell])
    if isinstance(witness, IndicatorWitness):
        if max(witness.indicator.features) >= x.shape[0]:
            raise InputError("dimension mismatch for indicator witness")
        return float(witness.indicator(x))
    raise TypeError(f"not a witness: {witness!r}")


def evaluate_rows(witness: Witness, X) -> np.ndarray:
    """Vectorized ``evaluate`` over the rows of ``X``."""
    X = np.asarray(X, dtype=float)
    if isinstance(witness, LinearWitness):
        return X @ witness.w
    if isinstance(witness, TreeWitness):
        bits = X[:, list(witness.subset)] > 0
        lookup = np.array([witness.leaf_signs[c] for c in itertools.product((1, -1), repeat=len(witness.subset))])
        # product((1,-1)) orders +1 before -1, so a -1 coordinate is bit 1
        code = (~bits).astype(int) @ (1 << np.arange(len(witness.subset) - 1, -1, -1))
        return lookup[code].astype(float)
    if isinstance(witness, IndicatorWitness):
        return witness.indicator.values(X)
    raise TypeError(f"not a witness: {witness!r}")


def range_constant(spec: FunctionClassSpec, schema: AttributeSchema | int) -> float:
    """``sup |c(x) - c(x')|`` over the class on +/-1 inputs of the schema's dimension."""
    d = schema if isinstance(schema, int) else schema.feature_dim
    if isinstance(spec, DecisionTree):
        if spec.depth > d:
            raise InputError(f"tree depth {spec.depth} exceeds feature dimension {d}")
        return 2.0
    if isinstance(spec, BoundedLinear):
        return 2.0 * math.sqrt(d)
    if isinstance(spec, ExplicitSet):
        return max(abs(i.outputs[1] - i.outputs[0]) for i in spec.indicators)
    raise TypeError(f"unknown function class {spec!r}")


def enumerate_subsets(n: int, depth: int) -> Iterator[tuple[int, ...]]:
    """All ``depth``-element subsets of ``range(n)`` in lexicographic order."""
    if depth < 1 or depth > n:
        raise InputError(f"subset size must satisfy 1 <= size <= {n}, got {depth}")
    return itertools.combinations(range(n), depth)


def cell_bits(cell: Sequence[int]) -> str:
    return "".join("1" if v > 0 else "0" for v in cell)


def witness_to_json(witness: Witness, feature_names: Sequence[str] | None = None):
    if isinstance(witness, LinearWitness):
        return [float(v) for v in witness.w]
    if isinstance(witness, TreeWitness):
        names = [feature_names[i] if feature_names else str(i) for i in witness.subset]
        signs = {cell_bits(c): s for c, s in sorted(witness.leaf_signs.items(), reverse=True)}
        return {"features": names, "indices": list(witness.subset), "leaf_signs": signs}
    if isinstance(witness, IndicatorWitness):
        return {"index": witness.index, "name": witness.indicator.name}
    raise TypeError(f"not a witness: {witness!r}")


def witness_from_json(doc, spec: FunctionClassSpec) -> Witness:
    if isinstance(spec, BoundedLinear):
        return LinearWitness(np.asarray(doc, dtype=float))
    if isinstance(spec, DecisionTree):
        signs = {tuple(1 if b == "1" else -1 for b in bits): s for bits, s in doc["leaf_signs"].items()}
        return TreeWitness(tuple(doc["indices"]), signs)
    return IndicatorWitness(doc["index"], spec.indicators[doc["index"]])


def spec_to_json(spec: FunctionClassSpec) -> dict:
    if isinstance(spec, DecisionTree):
        return {"kind": "tree", "depth": spec.depth}
    if isinstance(spec, BoundedLinear):
        return {"kind": "linear"}
    return {
        "kind": "explicit",
        "indicators": [{"name": i.name, "features": list(i.features), "outputs": list(i.outputs)} for i in spec.indicators],
    }


def spec_from_json(doc: Mapping, schema: AttributeSchema | None = None, where: str = "function_class"):
    """Build a class from ``{"kind": "tree", "depth": 2}`` / ``{"kind": "linear"}`` /
    ``{"kind": "explicit", "indicators": [{"when": {attr: cat}, "outputs": [a, b]}]}``."""
    if not isinstance(doc, Mapping) or "kind" not in doc:
        raise InputError(f"{where}: expected an object with a 'kind' field")
    kind = doc["kind"]
    if kind == "linear":
        return BoundedLinear()
    if kind == "tree":
        depth = doc.get("depth")
        if not isinstance(depth, int) or isinstance(depth, bool):
            raise InputError(f"{where}.depth: expected an integer")
        return DecisionTree(depth)
    if kind == "explicit":
        items = doc.get("indicators")
        if not isinstance(items, list) or not items:
            raise InputError(f"{where}.indicators: expected a nonempty list")
        out = []
        for i, item in enumerate(items):
            outputs = tuple(item.get("outputs", (-1.0, 1.0)))
            if len(outputs) != 2:
                raise InputError(f"{where}.indicators[{i}].outputs: expected two values")
            if "when" in item:
                if schema is None:
                    raise InputError(f"{where}.indicators[{i}]: a schema is needed to resolve 'when'")
                out.append(Indicator.from_condition(schema, item["when"], outputs))
            else:
                out.append(Indicator(tuple(item["features"]), tuple(float(o) for o in outputs), item.get("name", "")))
        return ExplicitSet(tuple(out))
    raise InputError(f"{where}.kind: unknown function class {kind!r}")
