"""Attribute schemas, +/-1 group-membership encoding and population loading.

Every categorical attribute contributes one binary feature per category.  A
record is encoded as +1 on the feature of its category and -1 on the other
features of that attribute, so a schema with attribute sizes ``(2, 2, 7)``
yields 11-dimensional feature vectors.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError

FEATURE_SEP = "="
CELL_SEP = "|"


@dataclass(frozen=True)
class Attribute:
    name: str
    categories: tuple[str, ...]


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered categorical attributes defining the feature encoding."""

    attributes: tuple[Attribute, ...]

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if not names:
            raise InputError("schema has no attributes")
        dup = sorted({n for n in names if names.count(n) > 1})
        if dup:
            raise InputError(f"duplicate attribute name(s): {', '.join(dup)}")
        for a in self.attributes:
            if len(a.categories) < 2:
                raise InputError(f"attribute {a.name!r} needs at least 2 categories")
            for c in a.categories:
                if "," in c or CELL_SEP in c:
                    raise InputError(f"category {c!r} of {a.name!r} contains a reserved character (',' or '|')")
            cdup = sorted({c for c in a.categories if a.categories.count(c) > 1})
            if cdup:
                raise InputError(f"attribute {a.name!r} has duplicate categories: {', '.join(cdup)}")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, Sequence[str]]]) -> "AttributeSchema":
        return cls(tuple(Attribute(str(n), tuple(str(c) for c in cats)) for n, cats in pairs))

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    @property
    def feature_dim(self) -> int:
        return sum(len(a.categories) for a in self.attributes)

    @property
    def feature_names(self) -> list[str]:
        return [f"{a.name}{FEATURE_SEP}{c}" for a in self.attributes for c in a.categories]

    def blocks(self) -> list[slice]:
        """Feature-index slice of each attribute, in schema order."""
        out, start = [], 0
        for a in self.attributes:
            out.append(slice(start, start + len(a.categories)))
            start += len(a.categories)
        return out

    def attribute(self, name: str) -> Attribute:
        for a in self.attributes:
            if a.name == name:
                return a
        raise InputError(f"unknown attribute {name!r}")

    def feature_index(self, attribute: str, category: str) -> int:
        for a, block in zip(self.attributes, self.blocks()):
            if a.name == attribute:
                if category not in a.categories:
                    raise InputError(f"unknown category {category!r} for attribute {attribute!r}")
                return block.start + a.categories.index(category)
        raise InputError(f"unknown attribute {attribute!r}")

    def cells(self) -> list[tuple[str, ...]]:
        """All joint cells (full category tuples) in lexicographic schema order."""
        return list(itertools.product(*(a.categories for a in self.attributes)))

    def cell_key(self, cell: Sequence[str]) -> str:
        return CELL_SEP.join(cell)

    def parse_cell(self, key: str | Sequence[str]) -> tuple[str, ...]:
        cell = tuple(key.split(CELL_SEP)) if isinstance(key, str) else tuple(key)
        if len(cell) != len(self.attributes):
            raise InputError(f"cell {key!r} has {len(cell)} values, schema has {len(self.attributes)} attributes")
        for a, v in zip(self.attributes, cell):
            if v not in a.categories:
                raise InputError(f"cell {key!r}: unknown category {v!r} for attribute {a.name!r}")
        return cell

    def encode_cells(self, cells: Sequence[Sequence[str]]) -> np.ndarray:
        return np.array([encode_record(self, dict(zip(self.names, c))) for c in cells], dtype=np.int8).reshape(
            len(cells), self.feature_dim
        )

    def digest_payload(self) -> dict:
        return {"attributes": [{"name": a.name, "categories": list(a.categories)} for a in self.attributes]}


def load_schema(source: str) -> AttributeSchema:
    """Parse a JSON schema document ``{"attributes": [{"name", "categories"}]}``."""
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as exc:
        raise InputError(f"schema is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("attributes"), list):
        raise InputError('schema must be an object with an "attributes" list')
    pairs = []
    for i, entry in enumerate(doc["attributes"]):
        if not isinstance(entry, dict) or "name" not in entry or not isinstance(entry.get("categories"), list):
            raise InputError(f"attributes[{i}] must have a name and a categories list")
        pairs.append((entry["name"], entry["categories"]))
    return AttributeSchema.from_pairs(pairs)


def encode_record(schema: AttributeSchema, record: Mapping[str, str]) -> np.ndarray:
    extra = set(record) - set(schema.names)
    if extra:
        raise InputError(f"unknown attribute(s) in record: {', '.join(sorted(extra))}")
    x = -np.ones(schema.feature_dim, dtype=np.int8)
    for a, block in zip(schema.attributes, schema.blocks()):
        if a.name not in record:
            raise InputError(f"record is missing attribute {a.name!r}")
        value = record[a.name]
        if value not in a.categories:
            raise InputError(f"unknown category {value!r} for attribute {a.name!r}")
        x[block.start + a.categories.index(value)] = 1
    return x


def decode_vector(schema: AttributeSchema, x) -> dict[str, str]:
    x = np.asarray(x)
    return {a.name: a.categories[int(np.argmax(x[block]))] for a, block in zip(schema.attributes, schema.blocks())}


def _check_encoded(schema: AttributeSchema, vectors: np.ndarray) -> None:
    if vectors.ndim != 2 or vectors.shape[1] != schema.feature_dim:
        raise InputError(f"vectors must have shape (k, {schema.feature_dim}), got {vectors.shape}")
    if not np.isin(vectors, (-1, 1)).all():
        raise InputError("encoded vectors must contain only -1/+1 entries")
    for a, block in zip(schema.attributes, schema.blocks()):
        bad = np.flatnonzero((vectors[:, block] == 1).sum(axis=1) != 1)
        if bad.size:
            raise InputError(f"row {int(bad[0])}: attribute {a.name!r} needs exactly one active category")


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Weighted rows of encoded feature vectors (a generated or reference population)."""

    schema: AttributeSchema
    vectors: np.ndarray
    weights: np.ndarray = field(default=None)
    label: str = ""

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.int8)
        if v.ndim == 2 and v.shape[0] == 0:
            raise InputError("empty sample set")
        _check_encoded(self.schema, v)
        if self.weights is None:
            w = np.full(v.shape[0], 1.0 / v.shape[0])
        else:
            w = np.array(self.weights, dtype=float)
            if w.shape != (v.shape[0],):
                raise InputError("weights must have one entry per row")
            if (w < 0).any() or not np.isfinite(w).all():
                raise InputError("weights must be finite and nonnegative")
            if abs(w.sum() - 1.0) > 1e-12:
                raise InputError(f"weights sum to {w.sum()!r}, expected 1")
        v.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def from_records(cls, schema: AttributeSchema, records: Iterable[Mapping[str, str]], label: str = "") -> "SampleSet":
        rows = [encode_record(schema, r) for r in records]
        if not rows:
            raise InputError("empty sample set")
        return cls(schema, np.vstack(rows), label=label)

    def records(self) -> list[dict[str, str]]:
        return [decode_vector(self.schema, x) for x in self.vectors]

    def subset(self, index) -> "SampleSet":
        """Uniform-weight sample set built from the given row indices (repeats allowed)."""
        return SampleSet(self.schema, self.vectors[np.asarray(index)], label=self.label)


def load_samples(schema: AttributeSchema, source: str, label: str = "") -> SampleSet:
    """Read a CSV population.

    The header either names every schema attribute (one categorical record per
    row), or names every schema feature (``attr=category``) with 0/1 or -1/+1
    entries; 0/1 files are mapped to -1/+1.
    """
    rows = list(csv.reader(io.StringIO(source.lstrip("﻿"))))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise InputError("empty sample set")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise InputError("empty sample set")
    if sorted(header) == sorted(schema.names) and len(set(header)) == len(header):
        return _load_categorical(schema, header, body, label)
    if sorted(header) == sorted(schema.feature_names) and len(set(header)) == len(header):
        return _load_encoded(schema, header, body, label)
    missing = sorted(set(schema.names) - set(header))
    raise InputError(
        "header must name every schema attribute"
        + (f" (missing: {', '.join(missing)})" if missing else f" (got: {', '.join(header)})")
    )


def _load_categorical(schema, header, body, label):
    vectors = np.empty((len(body), schema.feature_dim), dtype=np.int8)
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise InputError(f"row {i}: expected {len(header)} fields, got {len(row)}")
        try:
            vectors[i] = encode_record(schema, dict(zip(header, (c.strip() for c in row))))
        except InputError as exc:
            raise InputError(f"row {i}: {exc}") from None
    return SampleSet(schema, vectors, label=label)


def _load_encoded(schema, header, body, label):
    order = [header.index(f) for f in schema.feature_names]
    try:
        raw = np.array([[float(row[j]) for j in order] for row in body])
    except (ValueError, IndexError):
        raise InputError("encoded sample file must contain numeric entries in every column") from None
    if np.isin(raw, (0.0, 1.0)).all():
        raw = 2.0 * raw - 1.0
    elif not np.isin(raw, (-1.0, 1.0)).all():
        raise InputError("encoded entries must be all 0/1 or all -1/+1")
    return SampleSet(schema, raw.astype(np.int8), label=label)


@dataclass(frozen=True, eq=False)
class JointDistribution:
    """Exact probability mass over full joint cells of a schema."""

    schema: AttributeSchema
    probs: Mapping[tuple[str, ...], float]

    def __post_init__(self):
        clean = {}
        for key, p in self.probs.items():
            cell = self.schema.parse_cell(key)
            p = float(p)
            if not np.isfinite(p) or p < 0:
                raise InputError(f"negative or non-finite probability {p!r} for cell {CELL_SEP.join(cell)!r}")
            clean[cell] = clean.get(cell, 0.0) + p
        total = sum(clean.values())
        if abs(total - 1.0) > 1e-9:
            raise InputError(f"probabilities sum to {total:.12g}, expected 1")
        object.__setattr__(self, "probs", dict(clean))

    def vector(self) -> np.ndarray:
        """Probabilities aligned with ``schema.cells()``."""
        return np.array([self.probs.get(c, 0.0) for c in self.schema.cells()])

    def as_sample_set(self, label: str = "") -> SampleSet:
        """One row per supported cell, weighted by its probability."""
        cells = [c for c, p in self.probs.items() if p > 0]
        w = np.array([self.probs[c] for c in cells])
        return SampleSet(self.schema, self.schema.encode_cells(cells), w / w.sum(), label=label)

    def sample(self, m: int, seed) -> SampleSet:
        """Draw ``m`` i.i.d. encoded records; deterministic for a fixed seed."""
        if m < 1:
            raise InputError("sample size must be >= 1")
        rng = np.random.default_rng(seed)
        cells = self.schema.cells()
        p = self.vector()
        idx = rng.choice(len(cells), size=m, p=p / p.sum())
        return SampleSet(self.schema, self.schema.encode_cells(cells)[idx])


@dataclass(frozen=True, eq=False)
class ReferenceSpec:
    """A reference population: either observed samples or an exact target distribution."""

    sample_set: SampleSet | None = None
    exact_distribution: JointDistribution | None = None

    def __post_init__(self):
        if (self.sample_set is None) == (self.exact_distribution is None):
            raise InputError("reference needs exactly one of sample_set or exact_distribution")

    @property
    def schema(self) -> AttributeSchema:
        return (self.sample_set or self.exact_distribution).schema

    @property
    def is_exact(self) -> bool:
        return self.exact_distribution is not None

    def as_sample_set(self) -> SampleSet:
        if self.sample_set is not None:
            return self.sample_set
        return self.exact_distribution.as_sample_set(label="reference")


def reference_from_proportions(schema: AttributeSchema, proportions: Mapping) -> ReferenceSpec:
    return ReferenceSpec(exact_distribution=JointDistribution(schema, proportions))


def load_proportions(schema: AttributeSchema, source: str) -> JointDistribution:
    """Parse ``{"cat1|cat2|...": probability}`` JSON into a joint distribution."""
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as exc:
        raise InputError(f"proportions file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or not doc:
        raise InputError("proportions must be a non-empty JSON object")
    return JointDistribution(schema, doc)
