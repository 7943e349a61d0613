"""Buffered MPR fine-tuning of a categorical generator.

The generator is a softmax distribution over the joint attribute cells of a
schema.  Each iteration draws a mini-batch, pushes it into a FIFO sample
buffer, finds the MPR maximizer of the buffered samples against the
reference, pushes that witness into a FIFO function buffer and takes a
clipped gradient step on

    L(theta) = sum_{c in buffer} |E_theta[c] - E_R[c]| + reg_lambda * TV(p_theta, p_0)

where the generated-side mean is an exact expectation under the current
distribution so the objective is differentiable in the logits.
"""
from __future__ import annotations

import json
import math
from collections import deque
from pathlib import Path
from typing import Mapping
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

from .attributes import AttributeSchema, JointDistribution, ReferenceSpec, SampleSet, load_samples, load_schema
from .errors import InputError
from .function_classes import DecisionTree, evaluate_rows, spec_from_json, witness_to_json
from .mpr_core import MprEstimate, _rows, mpr
from .stats import derive_seed

KINK_TOL = 1e-12
LOGIT_FLOOR = math.log(1e-12)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


_CELL_CACHE: dict = {}


def _cell_vectors(schema: AttributeSchema) -> np.ndarray:
    if schema not in _CELL_CACHE:
        v = schema.encode_cells(schema.cells()).astype(float)
        v.setflags(write=False)
        _CELL_CACHE[schema] = v
    return _CELL_CACHE[schema]


class GeneratorModel:
    """Softmax distribution over ``schema.cells()`` with a frozen copy of its initial logits."""

    def __init__(self, schema: AttributeSchema, logits, base_logits=None):
        logits = np.array(logits, dtype=float)
        n = len(schema.cells())
        if logits.shape != (n,):
            raise InputError(f"generator needs {n} logits, got shape {logits.shape}")
        if not np.isfinite(logits).all():
            raise InputError("generator logits must be finite")
        base = logits.copy() if base_logits is None else np.array(base_logits, dtype=float)
        logits.setflags(write=False)
        base.setflags(write=False)
        self.schema = schema
        self.logits = logits
        self.base_logits = base
        self.cell_vectors = _cell_vectors(schema)

    @classmethod
    def from_distribution(cls, dist: JointDistribution) -> "GeneratorModel":
        p = dist.vector()
        return cls(dist.schema, np.log(np.maximum(p, 1e-300)).clip(LOGIT_FLOOR))

    @property
    def probs(self) -> np.ndarray:
        return _softmax(self.logits)

    @property
    def base_probs(self) -> np.ndarray:
        return _softmax(self.base_logits)

    def with_logits(self, logits) -> "GeneratorModel":
        return GeneratorModel(self.schema, logits, self.base_logits)

    def distribution(self) -> JointDistribution:
        p = self.probs
        return JointDistribution(self.schema, dict(zip(self.schema.cells(), p / p.sum())))

    def to_json(self) -> dict:
        return {self.schema.cell_key(c): float(p) for c, p in zip(self.schema.cells(), self.probs)}


class FifoBuffer:
    """Fixed-capacity store that evicts its oldest entries first.

    Entries carry increasing sequence numbers so eviction order can be audited.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InputError("buffer capacity must be >= 1")
        self.capacity = int(capacity)
        self._items: deque = deque()
        self._next = 0
        self.evicted: list[int] = []

    def __len__(self):
        return len(self._items)

    def append(self, item) -> None:
        self._items.append((self._next, item))
        self._next += 1
        while len(self._items) > self.capacity:
            self.evicted.append(self._items.popleft()[0])

    def extend(self, items) -> None:
        for item in items:
            self.append(item)

    @property
    def entries(self) -> list:
        return [item for _, item in self._items]

    @property
    def sequence(self) -> list[int]:
        return [s for s, _ in self._items]


SampleBuffer = FifoBuffer
FunctionBuffer = FifoBuffer


@dataclass
class TuneConfig:
    reference: ReferenceSpec
    spec: object = field(default_factory=lambda: DecisionTree(1))
    iterations: int = 2000
    batch_size: int = 8
    learning_rate: float = 0.05
    reg_lambda: float = 0.5
    sample_buffer: int = 32
    function_buffer: int = 32
    grad_clip_norm: float = 1.0
    eval_every: int = 100
    eval_samples: int = 10_000
    seed: int = 0
    dedupe_witnesses: bool = False
    max_halvings: int = 20
    kink_tol: float = 1e-6
    descent_tol: float = 0.0

    def __post_init__(self):
        for name in ("iterations", "batch_size", "sample_buffer", "function_buffer", "eval_every", "eval_samples"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise InputError(f"{name}: expected a positive integer, got {v!r}")
        for name in ("learning_rate", "grad_clip_norm"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name}: must be > 0")
        if self.reg_lambda < 0:
            raise InputError("reg_lambda: must be >= 0")
        if self.eval_every > self.iterations:
            raise InputError("eval_every: must not exceed iterations")
        if self.max_halvings < 0:
            raise InputError("max_halvings: must be >= 0")
        if self.kink_tol < 0 or self.descent_tol < 0:
            raise InputError("kink_tol and descent_tol: must be >= 0")


@dataclass(frozen=True)
class TuneRecord:
    iteration: int
    mpr_value: float
    mpr_exact: float
    loss_mpr: float
    loss_drift: float
    objective: float
    step: float
    witness: object

    def row(self) -> dict:
        return {
            "iteration": self.iteration,
            "mpr": self.mpr_value,
            "mpr_exact": self.mpr_exact,
            "loss_mpr": self.loss_mpr,
            "loss_drift": self.loss_drift,
            "objective": self.objective,
            "step": self.step,
        }


@dataclass(eq=False)
class TuneTrajectory:
    records: list[TuneRecord]
    final: GeneratorModel
    final_mpr: float
    final_mpr_exact: float
    final_drift: float
    sample_evictions: list[int] = field(default_factory=list)
    function_evictions: list[int] = field(default_factory=list)


def sample_batch(gen: GeneratorModel, B: int, seed) -> SampleSet:
    """``B`` i.i.d. encoded draws from the generator."""
    if B < 1:
        raise InputError("batch size must be >= 1")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(gen.cell_vectors), size=B, p=gen.probs)
    return SampleSet(gen.schema, gen.cell_vectors[idx].astype(np.int8))


def reference_means(witnesses, reference) -> np.ndarray:
    X, w = _rows(reference)
    return np.array([w @ evaluate_rows(c, X) for c in witnesses])


def loss_mpr(samples, functions, reference) -> float:
    """``sum_c |mean over samples of c - mean over reference of c|`` for buffered ``c``."""
    witnesses = functions.entries if isinstance(functions, FifoBuffer) else list(functions)
    if not witnesses:
        raise InputError("function buffer is empty")
    X, w = _rows(samples)
    gen_means = np.array([w @ evaluate_rows(c, X) for c in witnesses])
    return float(np.abs(gen_means - reference_means(witnesses, reference)).sum())


def loss_drift(gen: GeneratorModel) -> float:
    """TV distance between the current and initial cell distributions."""
    return float(0.5 * np.abs(gen.probs - gen.base_probs).sum())


def _witness_table(gen: GeneratorModel, witnesses) -> np.ndarray:
    """(n_witnesses, n_cells) values of each witness on each joint cell."""
    return np.array([evaluate_rows(c, gen.cell_vectors) for c in witnesses])


def _objective_terms(p, p0, table, rmeans, reg_lambda):
    gaps = table @ p - rmeans
    lm = float(np.abs(gaps).sum())
    ld = float(0.5 * np.abs(p - p0).sum())
    return lm + reg_lambda * ld, lm, ld


def _gradient(p, p0, table, rmeans, reg_lambda, kink_tol=KINK_TOL):
    dp = _sign(table @ p - rmeans, kink_tol) @ table + reg_lambda * 0.5 * _sign(p - p0, kink_tol)
    return p * (dp - p @ dp)


def _descent_direction(p, p0, table, rmeans, reg_lambda, kink_tol):
    """Negative min-norm element of the objective's subdifferential in the logits.

    Terms within ``kink_tol`` of their kink contribute any multiple in
    [-weight, weight] of their gradient; the multiples are chosen to minimize
    the norm of the total, which lets the iterate slide along a kink instead of
    zig-zagging across it.
    """
    J = p[:, None] * (np.eye(p.size) - p[None, :])  # d p / d logits (symmetric)
    gaps = table @ p - rmeans
    diffs = p - p0
    g_active = np.abs(gaps) <= kink_tol
    c_active = np.abs(diffs) <= kink_tol
    dp = np.sign(gaps[~g_active]) @ table[~g_active] + reg_lambda * 0.5 * np.where(c_active, 0.0, np.sign(diffs))
    h = J @ dp
    cols = [J @ row for row in table[g_active]] + [J[:, i] for i in np.flatnonzero(c_active)]
    if not cols:
        return -h
    bounds = np.r_[np.ones(int(g_active.sum())), np.full(int(c_active.sum()), reg_lambda * 0.5)]
    V = np.array(cols).T
    if reg_lambda == 0:
        V, bounds = V[:, bounds > 0], bounds[bounds > 0]
        if bounds.size == 0:
            return -h
    s = lsq_linear(V, -h, bounds=(-bounds, bounds), method="bvls").x
    return -(h + V @ s)


def objective(gen: GeneratorModel, witnesses, reference, reg_lambda: float) -> tuple[float, float, float]:
    """Expectation-form objective; returns ``(total, loss_mpr, loss_drift)``."""
    witnesses = list(witnesses)
    if not witnesses:
        raise InputError("function buffer is empty")
    table = _witness_table(gen, witnesses)
    return _objective_terms(gen.probs, gen.base_probs, table, reference_means(witnesses, reference), reg_lambda)


def _sign(x: np.ndarray, tol: float = KINK_TOL) -> np.ndarray:
    return np.where(np.abs(x) <= tol, 0.0, np.sign(x))


def grad_loss(gen: GeneratorModel, witnesses, reference, reg_lambda: float) -> np.ndarray:
    """Gradient of :func:`objective` in the logits (subgradient 0 at kinks)."""
    witnesses = list(witnesses)
    if not witnesses:
        raise InputError("function buffer is empty")
    table = _witness_table(gen, witnesses)
    return _gradient(gen.probs, gen.base_probs, table, reference_means(witnesses, reference), reg_lambda)


def evaluate_checkpoint(gen: GeneratorModel, reference, spec, n_samples: int, seed) -> MprEstimate:
    """MPR of ``n_samples`` fresh draws against the reference."""
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    ref = reference.as_sample_set() if isinstance(reference, ReferenceSpec) else reference
    return mpr(sample_batch(gen, n_samples, seed), ref, spec)


def _exact_mpr(gen: GeneratorModel, ref: SampleSet, spec) -> float:
    p = gen.probs
    keep = p > 0
    cur = SampleSet(gen.schema, gen.cell_vectors[keep].astype(np.int8), p[keep] / p[keep].sum())
    return mpr(cur, ref, spec).value


def finetune(gen: GeneratorModel, config: TuneConfig) -> TuneTrajectory:
    ref = config.reference.as_sample_set()
    if ref.schema != gen.schema:
        raise InputError("generator and reference use different schemas")
    samples = FifoBuffer(config.sample_buffer)
    functions = FifoBuffer(config.function_buffer)
    names = gen.schema.feature_names
    p0 = gen.base_probs
    records: list[TuneRecord] = []
    for t in range(config.iterations):
        batch = sample_batch(gen, config.batch_size, derive_seed(config.seed, 0, t))
        samples.extend(batch.vectors)
        buffered = SampleSet(gen.schema, np.array(samples.entries))
        c_t = mpr(buffered, ref, config.spec).witness
        key = repr(witness_to_json(c_t))
        if not (config.dedupe_witnesses and key in {e[0] for e in functions.entries}):
            # cache each witness's values on the cells and its reference mean
            functions.append((key, c_t, evaluate_rows(c_t, gen.cell_vectors), reference_means([c_t], ref)[0]))
        table = np.array([e[2] for e in functions.entries])
        rmeans = np.array([e[3] for e in functions.entries])

        p = gen.probs
        old = _objective_terms(p, p0, table, rmeans, config.reg_lambda)[0]
        g = -_descent_direction(p, p0, table, rmeans, config.reg_lambda, config.kink_tol)
        norm = float(np.linalg.norm(g))
        if norm > config.grad_clip_norm:
            g = g * (config.grad_clip_norm / norm)
        step = config.learning_rate
        accepted = 0.0
        if norm > 0:
            for _ in range(config.max_halvings + 1):
                logits = gen.logits - step * g
                new = _objective_terms(_softmax(logits), p0, table, rmeans, config.reg_lambda)[0]
                if new <= old + config.descent_tol:
                    gen, accepted = gen.with_logits(logits), step
                    break
                step /= 2

        if t % config.eval_every == 0:
            total, lm, ld = _objective_terms(gen.probs, p0, table, rmeans, config.reg_lambda)
            est = evaluate_checkpoint(gen, ref, config.spec, config.eval_samples, derive_seed(config.seed, 1, t))
            records.append(
                TuneRecord(t, est.value, _exact_mpr(gen, ref, config.spec), lm, ld, total, accepted,
                           witness_to_json(c_t, names))
            )

    final = evaluate_checkpoint(gen, ref, config.spec, config.eval_samples, derive_seed(config.seed, 2, 0))
    return TuneTrajectory(
        records,
        gen,
        final.value,
        _exact_mpr(gen, ref, config.spec),
        loss_drift(gen),
        samples.evicted,
        functions.evicted,
    )


_CONFIG_FIELDS = {
    "iterations": int,
    "batch_size": int,
    "learning_rate": float,
    "reg_lambda": float,
    "sample_buffer": int,
    "function_buffer": int,
    "grad_clip_norm": float,
    "eval_every": int,
    "eval_samples": int,
    "seed": int,
    "dedupe_witnesses": bool,
    "max_halvings": int,
    "kink_tol": float,
    "descent_tol": float,
}


def config_from_json(doc: Mapping, base_dir: Path | str = ".") -> tuple[GeneratorModel, TuneConfig]:
    """Build the initial generator and a :class:`TuneConfig` from a JSON document.

    Required keys: ``schema`` (inline schema object) or ``schema_file``;
    ``initial`` (cell-key -> probability); ``reference`` (cell-key ->
    probability) or ``reference_samples`` (CSV path).  Optional keys are the
    :class:`TuneConfig` fields plus ``function_class``.
    """
    base_dir = Path(base_dir)
    if not isinstance(doc, Mapping):
        raise InputError("config: expected a JSON object")
    known = set(_CONFIG_FIELDS) | {"schema", "schema_file", "initial", "reference", "reference_samples", "function_class"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise InputError(f"config.{unknown[0]}: unknown field")
    if "schema" in doc:
        try:
            schema = load_schema(json.dumps(doc["schema"]))
        except InputError as exc:
            raise InputError(f"config.schema: {exc}") from None
    elif "schema_file" in doc:
        try:
            schema = load_schema((base_dir / doc["schema_file"]).read_text())
        except (OSError, InputError) as exc:
            raise InputError(f"config.schema_file: {exc}") from None
    else:
        raise InputError("config.schema: missing (give 'schema' or 'schema_file')")
    if "initial" not in doc:
        raise InputError("config.initial: missing")
    try:
        initial = JointDistribution(schema, _as_mapping(doc["initial"], "initial"))
    except InputError as exc:
        raise InputError(f"config.initial: {exc}") from None
    if "reference" in doc:
        try:
            reference = ReferenceSpec(exact_distribution=JointDistribution(schema, _as_mapping(doc["reference"], "reference")))
        except InputError as exc:
            raise InputError(f"config.reference: {exc}") from None
    elif "reference_samples" in doc:
        try:
            text = (base_dir / doc["reference_samples"]).read_text()
            reference = ReferenceSpec(sample_set=load_samples(schema, text, label="reference"))
        except (OSError, InputError) as exc:
            raise InputError(f"config.reference_samples: {exc}") from None
    else:
        raise InputError("config.reference: missing (give 'reference' or 'reference_samples')")
    kwargs = {}
    for name, typ in _CONFIG_FIELDS.items():
        if name not in doc:
            continue
        v = doc[name]
        ok = isinstance(v, bool) if typ is bool else (
            isinstance(v, (int, float)) and not isinstance(v, bool) and (typ is float or float(v).is_integer())
        )
        if not ok:
            raise InputError(f"config.{name}: expected {typ.__name__}, got {v!r}")
        kwargs[name] = typ(v)
    spec = spec_from_json(doc.get("function_class", {"kind": "tree", "depth": 1}), schema, "config.function_class")
    try:
        config = TuneConfig(reference=reference, spec=spec, **kwargs)
    except InputError as exc:
        raise InputError(f"config.{exc}") from None
    return GeneratorModel.from_distribution(initial), config


def _as_mapping(v, name):
    if not isinstance(v, Mapping) or not v:
        raise InputError(f"expected a non-empty object of cell probabilities for {name}")
    return v
