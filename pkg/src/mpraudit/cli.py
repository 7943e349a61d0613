"""Command-line front end: ``mpraudit <command> ...``.

Every command prints a JSON run report on standard output (and to ``--out``
when given).  Exit status is 0 on success, 2 for usage or input errors and 3
when a computation is refused by an exactness guard.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from pathlib import Path

from . import __version__
from .attributes import (
    JointDistribution,
    ReferenceSpec,
    load_proportions,
    load_samples,
    load_schema,
)
from .errors import GuardError, InputError
from .function_classes import BoundedLinear, DecisionTree, range_constant, spec_from_json, spec_to_json
from .mpr_core import BootstrapStats, MprEstimate, mpr
from .optimizer import config_from_json, finetune
from .stats import (
    BoundInputs,
    bernstein_bound,
    bootstrap_mpr,
    derive_seed,
    empirical_rademacher,
    empirical_variance_across_prompts,
    gap_bound_prop1,
    gap_experiment,
    heatmap_cell_seeds,
    model_compare_test,
    prompt_bound_prop2,
    std_heatmap,
    threshold_test,
)


class Inputs:
    """Reads input files once and records their content digests."""

    def __init__(self):
        self.digests: dict[str, dict] = {}

    def read(self, role: str, path) -> str:
        p = Path(path)
        try:
            data = p.read_bytes()
        except OSError as exc:
            raise InputError(f"cannot read {role} file {str(p)!r}: {exc.strerror}") from None
        self.digests[role] = {"path": str(p), "sha256": hashlib.sha256(data).hexdigest()}
        try:
            return data.decode("utf-8")
        except UnicodeDecodeError:
            raise InputError(f"{role} file {str(p)!r} is not UTF-8") from None


def _schema_digest(schema) -> str:
    return hashlib.sha256(json.dumps(schema.digest_payload(), sort_keys=True).encode()).hexdigest()


def _report(args, inputs: Inputs, results: dict, started: float, schema=None, seed=None, sub_seeds=None) -> dict:
    return {
        "command": list(args._argv),
        "tool_version": __version__,
        "schema_digest": _schema_digest(schema) if schema is not None else None,
        "inputs": inputs.digests,
        "seed": seed,
        "sub_seeds": sub_seeds or {},
        "results": results,
        "wall_clock_seconds": round(time.perf_counter() - started, 6),
    }


def _emit(report: dict, out) -> None:
    text = json.dumps(report, indent=2, sort_keys=True, allow_nan=True)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", newline="\n")
    sys.stdout.write(text + "\n")


def _write_csv(path: Path, rows: list[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path


# -- shared input handling -----------------------------------------------------------


def _add_population_args(p, required=True):
    p.add_argument("--schema", required=required, help="schema JSON file")
    p.add_argument("--generated", required=required, help="generated-sample CSV")
    ref = p.add_mutually_exclusive_group(required=required)
    ref.add_argument("--reference", help="reference-sample CSV")
    ref.add_argument("--reference-proportions", help="exact reference JSON (cat1|cat2|... -> probability)")
    p.add_argument("--label", default=None, help="prompt / run label (default: generated file stem)")


def _add_class_args(p):
    p.add_argument("--class", dest="fclass", choices=("tree", "linear", "explicit"), default="tree")
    p.add_argument("--depth", type=int, default=1, help="decision-tree depth")
    p.add_argument("--indicators", help='explicit-set JSON: [{"when": {attr: cat}, "outputs": [a, b]}, ...]')


def _load_populations(args, inputs: Inputs):
    schema = load_schema(inputs.read("schema", args.schema))
    G = load_samples(schema, inputs.read("generated", args.generated), label=args.label or Path(args.generated).stem)
    if args.reference:
        R = ReferenceSpec(sample_set=load_samples(schema, inputs.read("reference", args.reference), "reference"))
    else:
        R = ReferenceSpec(exact_distribution=load_proportions(schema, inputs.read("reference", args.reference_proportions)))
    return schema, G, R


def _function_class(args, schema, inputs: Inputs):
    if args.fclass == "tree":
        if args.depth < 1 or args.depth > schema.feature_dim:
            raise InputError(f"--depth must satisfy 1 <= depth <= {schema.feature_dim}, got {args.depth}")
        return DecisionTree(args.depth)
    if args.fclass == "linear":
        return BoundedLinear()
    if not args.indicators:
        raise InputError("--class explicit needs --indicators")
    try:
        items = json.loads(inputs.read("indicators", args.indicators))
    except json.JSONDecodeError as exc:
        raise InputError(f"--indicators is not valid JSON: {exc}") from None
    return spec_from_json({"kind": "explicit", "indicators": items}, schema, "--indicators")


def _estimate_json(est: MprEstimate, schema) -> dict:
    doc = est.to_json(schema.feature_names)
    if isinstance(est.spec, DecisionTree):
        doc["splits"] = doc["witness"]["features"]
    return doc


# -- commands ------------------------------------------------------------------------


def cmd_measure(args) -> dict:
    started, inputs = time.perf_counter(), Inputs()
    schema, G, R = _load_populations(args, inputs)
    spec = _function_class(args, schema, inputs)
    est = mpr(G, R.as_sample_set(), spec)
    results = {"label": G.label, "estimate": _estimate_json(est, schema)}
    return _report(args, inputs, results, started, schema)


def cmd_bootstrap(args) -> dict:
    started, inputs = time.perf_counter(), Inputs()
    if args.reps < 2:
        raise InputError("need >= 2 repetitions (--reps)")
    if args.resamples < 1:
        raise InputError("--resamples must be >= 1")
    schema, G, R = _load_populations(args, inputs)
    spec = _function_class(args, schema, inputs)
    ref = R.as_sample_set()
    boot = bootstrap_mpr(G, ref, spec, args.resamples, args.reps, args.seed, args.alpha, joint=args.joint)
    est = mpr(G, ref, spec)
    est = MprEstimate(est.value, est.spec, est.witness, est.k, est.m, BootstrapStats(boot.mean, boot.std, boot.ci))
    results = {"label": G.label, "estimate": _estimate_json(est, schema), "bootstrap": boot.to_json()}
    sub = {"repetition_seeds": "derive_seed(seed, repetition)"}
    return _report(args, inputs, results, started, schema, args.seed, sub)


def _read_numbers(text: str, role: str) -> list[float]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, dict):
        res = doc.get("results", doc)
        if isinstance(res.get("bootstrap"), dict) and "replicate_values" in res["bootstrap"]:
            doc = res["bootstrap"]["replicate_values"]
        elif "values" in res:
            doc = res["values"]
    if isinstance(doc, list):
        try:
            return [float(v) for v in doc]
        except (TypeError, ValueError):
            raise InputError(f"{role}: list entries must be numbers") from None
    if doc is not None and not isinstance(doc, (int, float)):
        raise InputError(f"{role}: no numeric values found")
    out = []
    for tok in text.replace(",", " ").split():
        try:
            out.append(float(tok))
        except ValueError:
            raise InputError(f"{role}: {tok!r} is not a number") from None
    return out


def cmd_bound(args) -> dict:
    started, inputs = time.perf_counter(), Inputs()
    kw = {"B": args.B, "rad_G": args.rad_g, "rad_R": args.rad_r, "k": args.k, "m": args.m, "delta": args.delta,
          "N": args.N, "lambda_sup": args.lambda_sup, "eps": args.eps, "sigma2": args.sigma2}
    extra: dict = {}
    schema = None
    if args.generated:
        if not args.schema or not (args.reference or args.reference_proportions):
            raise InputError("data plug-ins need --schema, --generated and a reference")
        schema, G, R = _load_populations(args, inputs)
        spec = _function_class(args, schema, inputs)
        ref = R.as_sample_set()
        rg = empirical_rademacher(spec, G, args.rad_trials, derive_seed(args.seed, 0))
        rr = empirical_rademacher(spec, ref, args.rad_trials, derive_seed(args.seed, 1))
        kw.update(rad_G=rg.value, rad_R=rr.value, k=G.k, m=ref.k, B=range_constant(spec, schema))
        extra["rademacher"] = {
            "generated": {"value": rg.value, "std_error": rg.std_error, "trials": rg.trials},
            "reference": {"value": rr.value, "std_error": rr.std_error, "trials": rr.trials},
            "plug_in": True,
            "class": spec_to_json(spec),
        }
        extra["empirical_mpr"] = mpr(G, ref, spec).value
    if args.variance_file:
        values = _read_numbers(inputs.read("variance", args.variance_file), "--variance-file")
        kw["sigma2"] = empirical_variance_across_prompts(values)
        if args.N is None:
            kw["N"] = len(values)
        extra["sigma2_hat"] = kw["sigma2"]
        extra["prompt_mean"] = math.fsum(values) / len(values)
    if kw["N"] is None:
        kw["N"] = 1
    bi = BoundInputs(**kw)
    if args.which == "prop1":
        res = {"value": gap_bound_prop1(bi), "vacuous": False}
    elif args.which == "prop2":
        res = prompt_bound_prop2(bi, squared_variant=args.squared).to_json()
    else:
        res = bernstein_bound(bi).to_json()
    results = {"which": args.which, "inputs": {k: v for k, v in kw.items()}, "bound": res, **extra}
    return _report(args, inputs, results, started, schema, args.seed if args.generated else None)


def cmd_test(args) -> dict:
    started, inputs = time.perf_counter(), Inputs()
    if args.compare:
        a = _read_numbers(inputs.read("replicates_a", args.compare[0]), "replicates A")
        b = _read_numbers(inputs.read("replicates_b", args.compare[1]), "replicates B")
        res = model_compare_test(a, b, args.alpha)
        results = {"test": res.to_json(), "mean_a": math.fsum(a) / len(a), "mean_b": math.fsum(b) / len(b)}
    else:
        if args.replicates is None or args.threshold is None:
            raise InputError("give --replicates FILE --threshold RHO, or --compare FILE_A FILE_B")
        x = _read_numbers(inputs.read("replicates", args.replicates), "replicates")
        res = threshold_test(x, args.threshold, args.alpha)
        results = {"test": res.to_json(), "threshold": args.threshold, "mean": math.fsum(x) / len(x)}
    return _report(args, inputs, results, started)


def cmd_tune(args) -> dict:
    started, inputs = time.perf_counter(), Inputs()
    text = inputs.read("config", args.config)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"config is not valid JSON: {exc}") from None
    gen, config = config_from_json(doc, Path(args.config).parent)
    traj = finetune(gen, config)
    out_dir = Path(args.out_dir)
    rows = [r.row() for r in traj.records]
    files = {"trajectory": str(_write_csv(out_dir / "trajectory.csv", rows))}
    gen_path = out_dir / "generator.json"
    gen_path.write_text(json.dumps(traj.final.to_json(), indent=2, sort_keys=True) + "\n", newline="\n")
    files["generator"] = str(gen_path)
    if not args.no_figures:
        from .plotting import plot_trajectory

        files["figure"] = str(plot_trajectory(rows, out_dir / "trajectory.png"))
    results = {
        "final_mpr": traj.final_mpr,
        "final_mpr_exact": traj.final_mpr_exact,
        "final_drift": traj.final_drift,
        "initial_mpr_exact": rows[0]["mpr_exact"] if rows else None,
        "final_generator": traj.final.to_json(),
        "records": len(rows),
        "files": files,
        "class": spec_to_json(config.spec),
    }
    sub = {"batch": "derive_seed(seed, 0, iteration)", "eval": "derive_seed(seed, 1, iteration)",
           "final_eval": "derive_seed(seed, 2, 0)"}
    return _report(args, inputs, results, started, gen.schema, config.seed, sub)


def _experiment_sources(doc, schema, base_dir: Path, inputs: Inputs):
    out = []
    for role in ("generated", "reference"):
        if role not in doc:
            raise InputError(f"config.{role}: missing")
        v = doc[role]
        try:
            if isinstance(v, str):
                out.append(load_samples(schema, inputs.read(role, base_dir / v), role))
            else:
                out.append(JointDistribution(schema, v))
        except InputError as exc:
            raise InputError(f"config.{role}: {exc}") from None
    return out


def _int_list(doc, key, default=None):
    v = doc.get(key, default)
    if not isinstance(v, list) or not v or not all(isinstance(i, int) and not isinstance(i, bool) and i >= 1 for i in v):
        raise InputError(f"config.{key}: expected a nonempty list of positive integers")
    return v


def _int(doc, key, default):
    v = doc.get(key, default)
    if v is None:
        return None
    if not isinstance(v, int) or isinstance(v, bool):
        raise InputError(f"config.{key}: expected an integer")
    return v


def cmd_experiment(args) -> dict:
    started, inputs = time.perf_counter(), Inputs()
    base = Path(args.config).parent
    try:
        doc = json.loads(inputs.read("config", args.config))
    except json.JSONDecodeError as exc:
        raise InputError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError("config: expected a JSON object")
    if "schema" not in doc and "schema_file" not in doc:
        raise InputError("config.schema: missing (give 'schema' or 'schema_file')")
    key = "schema" if "schema" in doc else "schema_file"
    try:
        if key == "schema":
            schema = load_schema(json.dumps(doc["schema"]))
        else:
            schema = load_schema(inputs.read("schema", base / str(doc["schema_file"])))
    except InputError as exc:
        raise InputError(f"config.{key}: {exc}") from None
    G_src, R_src = _experiment_sources(doc, schema, base, inputs)
    seed = _int(doc, "seed", 0)
    out_dir = Path(args.out_dir)
    files = {}
    if args.kind == "gap":
        if not isinstance(G_src, JointDistribution) or not isinstance(R_src, JointDistribution):
            raise InputError("gap experiment needs exact distributions for 'generated' and 'reference'")
        depths = _int_list(doc, "depths", [1, 2, 3])
        sizes = _int_list(doc, "sample_sizes", [100, 300, 1000, 3000])
        reps = _int(doc, "reps", 30)
        if reps < 1:
            raise InputError("config.reps: must be >= 1")
        rows = gap_experiment(G_src, R_src, depths, sizes, reps, seed, _int(doc, "reference_size", None))
        files["table"] = str(_write_csv(out_dir / "gap.csv", rows))
        if not args.no_figures:
            from .plotting import plot_gap

            files["figure"] = str(plot_gap(rows, out_dir / "gap.png"))
        results = {"kind": "gap", "reps": reps, "depths": depths, "sample_sizes": sizes, "rows": rows, "files": files}
        sub = {"draws": "derive_seed(seed, size_index, rep, 0|1)"}
    else:
        spec = spec_from_json(doc.get("function_class", {"kind": "linear"}), schema, "config.function_class")
        k_list = _int_list(doc, "k_list")
        m_list = _int_list(doc, "m_list")
        reps = _int(doc, "repetitions", 100)
        if reps < 2:
            raise InputError("config.repetitions: need >= 2 repetitions")
        joint = doc.get("joint", False)
        if not isinstance(joint, bool):
            raise InputError("config.joint: expected a boolean")
        rows = std_heatmap(G_src, R_src, spec, k_list, m_list, _int(doc, "resample_size", None), reps, seed, joint)
        files["table"] = str(_write_csv(out_dir / "heatmap.csv", rows))
        if not args.no_figures:
            from .plotting import plot_std_heatmap

            files["figure"] = str(plot_std_heatmap(rows, out_dir / "heatmap.png"))
        results = {"kind": "heatmap", "class": spec_to_json(spec), "repetitions": reps, "rows": rows, "files": files}
        sub = {"cells": {f"{i},{j}": list(heatmap_cell_seeds(seed, i, j))
                         for i in range(len(k_list)) for j in range(len(m_list))}}
    return _report(args, inputs, results, started, schema, seed, sub)


def cmd_report(args) -> dict:
    started, inputs = time.perf_counter(), Inputs()
    runs = Path(args.runs)
    if not runs.is_dir():
        raise InputError(f"--runs {str(runs)!r} is not a directory")
    rows = []
    for path in sorted(runs.glob("*.json")):
        try:
            doc = json.loads(inputs.read(path.name, path))
            res = doc["results"]
            value = float(res["estimate"]["value"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise InputError(f"unreadable run file {path.name!r}: expected a measure/bootstrap report") from None
        row = {"label": res.get("label") or path.stem, "value": value, "file": path.name}
        if isinstance(res.get("bootstrap"), dict):
            row["bootstrap_mean"] = res["bootstrap"]["mean"]
            row["bootstrap_std"] = res["bootstrap"]["std"]
        rows.append(row)
    if not rows:
        raise InputError(f"no run reports (*.json) in {str(runs)!r}")
    values = [r["value"] for r in rows]
    mean = math.fsum(values) / len(values)
    sigma2 = empirical_variance_across_prompts(values) if len(values) >= 2 else None
    results = {
        "aggregation": "mean of per-prompt MPR values",
        "per_prompt": rows,
        "mean_mpr": mean,
        "sigma2_hat": sigma2,
        "sigma2_note": None if sigma2 is not None else "unavailable: fewer than 2 runs",
        "n_prompts": len(rows),
    }
    if args.out_dir:
        out_dir = Path(args.out_dir)
        flat = [{k: r.get(k, "") for k in ("label", "value", "bootstrap_mean", "bootstrap_std", "file")} for r in rows]
        files = {"table": str(_write_csv(out_dir / "prompts.csv", flat))}
        if not args.no_figures:
            from .plotting import plot_prompt_report

            files["figure"] = str(plot_prompt_report(rows, mean, out_dir / "prompts.png"))
        results["files"] = files
    return _report(args, inputs, results, started)


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpraudit", description="Measure and reduce multi-group representation gaps.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("measure", help="MPR of generated vs reference samples")
    _add_population_args(p)
    _add_class_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("bootstrap", help="bootstrap mean/std of MPR over generated resamples")
    _add_population_args(p)
    _add_class_args(p)
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.05, help="percentile-interval level")
    p.add_argument("--joint", action="store_true", help="also resample the reference set")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("bound", help="evaluate generalization bounds")
    p.add_argument("--which", choices=("prop1", "prop2", "bernstein"), required=True)
    p.add_argument("--B", type=float, default=2.0, help="range constant of the class")
    p.add_argument("--rad-g", type=float, default=0.0)
    p.add_argument("--rad-r", type=float, default=0.0)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--N", type=int, default=None, help="number of prompts")
    p.add_argument("--lambda-sup", type=float, default=0.0)
    p.add_argument("--sigma2", type=float, default=0.0)
    p.add_argument("--variance-file", help="per-prompt MPR values used to estimate sigma^2 (and N)")
    p.add_argument("--squared", action="store_true", help="square the second exponent of the prompt bound")
    _add_population_args(p, required=False)
    _add_class_args(p)
    p.add_argument("--rad-trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("test", help="t-tests on bootstrap replicates")
    p.add_argument("--replicates", help="replicate values (JSON list, bootstrap report, or numbers)")
    p.add_argument("--threshold", type=float, help="one-sided test of mean MPR < threshold")
    p.add_argument("--compare", nargs=2, metavar=("FILE_A", "FILE_B"), help="two-sided Welch comparison")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("tune", help="buffered MPR fine-tuning of a categorical generator")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default="tune-out")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("experiment", help="empirical-vs-true gap or bootstrap-std heatmap experiments")
    p.add_argument("--kind", choices=("gap", "heatmap"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default="experiment-out")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="aggregate run reports across prompts")
    p.add_argument("--runs", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args._argv = ["mpraudit", *argv]
    try:
        report = args.func(args)
    except InputError as exc:
        print(f"mpraudit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except GuardError as exc:
        print(f"mpraudit {args.command}: guard: {exc}", file=sys.stderr)
        return 3
    _emit(report, getattr(args, "out", None))
    return 0


if __name__ == "__main__":
    sys.exit(main())
