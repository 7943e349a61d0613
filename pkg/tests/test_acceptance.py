"""Acceptance criteria, one test each.

Every test prints (and records for the end-of-session summary) a single
``ACCEPTANCE [PASS|FAIL] <criterion>: <measured numbers>`` line before asserting.
"""
import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, perturbed_pair
from mpraudit import (
    AttributeSchema,
    BoundInputs,
    DecisionTree,
    JointDistribution,
    ReferenceSpec,
    TreeWitness,
    brute_force_linear,
    brute_force_tree,
    empirical_rademacher,
    gap_bound_prop1,
    gap_experiment,
    model_compare_test,
    mpr_exact,
    mpr_linear,
    mpr_tree,
    std_heatmap,
)
from mpraudit.cli import main
from mpraudit.optimizer import GeneratorModel, TuneConfig, finetune, grad_loss, objective
from mpraudit.stats import _batch_mpr


def record(name, ok, detail):
    line = f"ACCEPTANCE [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def test_tree_equals_brute_force():
    rng = np.random.default_rng(20240101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 6))
        depth = int(rng.integers(1, min(3, n) + 1))
        G = rng.choice((-1, 1), size=(int(rng.integers(1, 201)), n))
        R = rng.choice((-1, 1), size=(int(rng.integers(1, 201)), n))
        worst = max(worst, abs(mpr_tree(G, R, depth).value - brute_force_tree(G, R, depth)[0]))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 60
    record("tree MPR = exhaustive oracle (100 instances)", ok, f"max |diff| = {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_linear_closed_form_and_monte_carlo():
    t0 = time.perf_counter()
    hand = abs(mpr_linear([[1, 0], [1, 0]], [[0, 1], [0, 1]]).value - math.sqrt(2))
    rng = np.random.default_rng(7)
    ratios = []
    for i in range(20):
        d = 1 + i % 4
        G = rng.choice((-1, 1), size=(int(rng.integers(10, 120)), d))
        R = rng.choice((-1, 1), size=(int(rng.integers(10, 120)), d))
        exact = mpr_linear(G, R).value
        mc = brute_force_linear(G, R, 100_000, int(rng.integers(2**31)))
        ratios.append(1.0 if exact == 0 else mc / exact)
    elapsed = time.perf_counter() - t0
    lo, hi = min(ratios), max(ratios)
    ok = hand <= 1e-12 and lo >= 0.99 and hi <= 1 + 1e-12 and elapsed < 30
    record("linear closed form and Monte-Carlo sup", ok,
           f"sqrt(2) case err {hand:.1e}; MC/exact in [{lo:.5f}, {hi:.5f}] over 20 instances, {elapsed:.1f}s")
    assert ok


def test_monotonicity():
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    depth_viol = add_viol = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 6))
        G = rng.choice((-1, 1), size=(int(rng.integers(5, 150)), n))
        R = rng.choice((-1, 1), size=(int(rng.integers(5, 150)), n))
        vals = [mpr_tree(G, R, d).value for d in range(1, n + 1)]
        depth_viol = max(depth_viol, max(a - b for a, b in zip(vals, vals[1:])))
        # add a two-category attribute: one-hot block (x, -x)
        col = rng.choice((-1, 1), size=(G.shape[0] + R.shape[0], 1))
        G2 = np.hstack([G, col[: G.shape[0]], -col[: G.shape[0]]])
        R2 = np.hstack([R, col[G.shape[0]:], -col[G.shape[0]:]])
        for d in range(1, min(n, 3) + 1):
            add_viol = max(add_viol, mpr_tree(G, R, d).value - mpr_tree(G2, R2, d).value)
    elapsed = time.perf_counter() - t0
    ok = depth_viol <= 1e-12 and add_viol <= 1e-12 and elapsed < 30
    record("tree MPR monotone in depth and attribute addition (50 instances)", ok,
           f"worst decrease in depth {depth_viol:.1e}, under addition {add_viol:.1e}, {elapsed:.1f}s")
    assert ok


def test_gap_bound_validity():
    p, r = perturbed_pair(n_attrs=4, scale=0.5, seed=3)
    spec = DecisionTree(2)
    truth = mpr_exact(p, r, spec).value
    t0 = time.perf_counter()
    rates = {}
    for k, m in ((50, 50), (200, 200)):
        exceed = 0
        for trial in range(500):
            G = p.sample(k, (1, k, trial, 0))
            R = r.sample(m, (1, k, trial, 1))
            gap = abs(mpr_tree(G, R, 2).value - truth)
            rad_g = empirical_rademacher(spec, G, 50, (1, k, trial, 2)).value
            rad_r = empirical_rademacher(spec, R, 50, (1, k, trial, 3)).value
            bound = gap_bound_prop1(BoundInputs(B=2.0, rad_G=rad_g, rad_R=rad_r, k=k, m=m, delta=0.1))
            exceed += gap > bound
        rates[(k, m)] = exceed / 500
    elapsed = time.perf_counter() - t0
    ok = all(v <= 0.12 for v in rates.values()) and elapsed < 300
    record("gap bound validity (delta = 0.1, 500 trials each)", ok,
           f"true MPR {truth:.4f}; exceedance {rates[(50, 50)]:.3f} at (50,50), {rates[(200, 200)]:.3f} at (200,200), "
           f"{elapsed:.1f}s")
    assert ok


def test_gap_experiment_shape():
    p, r = perturbed_pair(n_attrs=4, scale=0.1, seed=7)
    sizes, depths, seeds = (100, 300, 1000, 3000), (1, 2, 3), range(20)
    t0 = time.perf_counter()
    mx = np.zeros((len(depths), len(sizes)))
    mean = np.zeros_like(mx)
    for s in seeds:
        for row in gap_experiment(p, r, depths, sizes, reps=30, seed=s):
            i, j = depths.index(row["depth"]), sizes.index(row["sample_size"])
            mx[i, j] += row["max_deviation"] / len(seeds)
            mean[i, j] += row["mean_deviation"] / len(seeds)
    elapsed = time.perf_counter() - t0
    decreasing = bool((np.diff(mx, axis=1) < 0).all())
    deeper = bool((mean[2] >= mean[0]).all())
    ok = decreasing and deeper and elapsed < 180
    record("gap experiment shape (20 seeds)", ok,
           f"max deviation depth1 {mx[0, 0]:.4f}->{mx[0, -1]:.4f}, depth3 {mx[2, 0]:.4f}->{mx[2, -1]:.4f}, "
           f"strictly decreasing: {decreasing}; mean deviation depth3/depth1 per size "
           f"{np.round(mean[2] / mean[0], 3).tolist()}, {elapsed:.1f}s")
    assert ok


def test_std_heatmap_shape():
    p, r = perturbed_pair(n_attrs=4, scale=0.3, seed=5)
    t0 = time.perf_counter()
    small = large = 0.0
    for s in range(20):
        rows = std_heatmap(p, r, DecisionTree(1), [20, 200], [20, 200], repetitions=50, seed=s)
        cell = {(x["k"], x["m"]): x["std"] for x in rows}
        small += cell[(20, 20)] / 20
        large += cell[(200, 200)] / 20
    elapsed = time.perf_counter() - t0
    ok = large < small and elapsed < 120
    record("bootstrap-std heatmap shape (20 seeds)", ok,
           f"mean std {small:.4f} at (20,20) vs {large:.4f} at (200,200), {elapsed:.1f}s")
    assert ok


def _skewed_scenario(seed=0):
    schema = AttributeSchema.from_pairs([("a", ["x", "y"]), ("b", ["u", "v"])])
    init = JointDistribution(schema, {"x|u": 0.85, "x|v": 0.05, "y|u": 0.05, "y|v": 0.05})
    ref = JointDistribution(schema, {"x|u": 0.25, "x|v": 0.25, "y|u": 0.25, "y|v": 0.25})
    cfg = TuneConfig(reference=ReferenceSpec(exact_distribution=ref), spec=DecisionTree(1), iterations=2000,
                     batch_size=8, sample_buffer=32, function_buffer=32, reg_lambda=0.5, seed=seed)
    return GeneratorModel.from_distribution(init), cfg


def test_optimizer_skewed_to_uniform():
    t0 = time.perf_counter()
    a = finetune(*_skewed_scenario())
    b = finetune(*_skewed_scenario())
    elapsed = time.perf_counter() - t0
    same = [x.row() for x in a.records] == [x.row() for x in b.records] and np.array_equal(a.final.logits, b.final.logits)
    ok = a.final_mpr < 0.05 and a.final_drift <= 0.45 and same and elapsed / 2 < 60
    record("optimizer skewed->uniform (2000 iterations)", ok,
           f"evaluated MPR {a.final_mpr:.4f} (exact {a.final_mpr_exact:.1e}), drift {a.final_drift:.4f}, "
           f"final p = {np.round(a.final.probs, 4).tolist()}, deterministic: {same}, {elapsed / 2:.1f}s per run")
    assert ok


def test_gradient_finite_differences():
    schema = AttributeSchema.from_pairs([("a", ["x", "y"]), ("b", ["u", "v"]), ("c", ["p", "q", "r"])])
    n_cells, d = len(schema.cells()), schema.feature_dim
    rng = np.random.default_rng(42)
    t0 = time.perf_counter()
    worst, points = 0.0, 0
    while points < 50:
        witnesses = []
        for _ in range(int(rng.integers(1, 6))):
            depth = int(rng.integers(1, 3))
            subset = tuple(sorted(rng.choice(d, size=depth, replace=False)))
            cells = [tuple(c) for c in np.array(np.meshgrid(*[[1, -1]] * depth, indexing="ij")).reshape(depth, -1).T]
            witnesses.append(TreeWitness(subset, {c: int(rng.choice((-1, 1))) for c in cells}))
        ref = JointDistribution(schema, dict(zip(schema.cells(), rng.dirichlet(np.ones(n_cells)))))
        gen = GeneratorModel(schema, rng.normal(size=n_cells), base_logits=rng.normal(size=n_cells))
        # skip points within 1e-3 of a kink of any absolute value
        X = gen.cell_vectors
        table = np.array([[_leaf(w, x) for x in X] for w in witnesses])
        rvec = ref.vector()
        if (np.abs(table @ (gen.probs - rvec)) < 1e-3).any() or (np.abs(gen.probs - gen.base_probs) < 1e-3).any():
            continue
        lam = float(rng.uniform(0, 2))
        g = grad_loss(gen, witnesses, ref, lam)
        h = 1e-6
        fd = np.array([
            (objective(gen.with_logits(gen.logits + h * e), witnesses, ref, lam)[0]
             - objective(gen.with_logits(gen.logits - h * e), witnesses, ref, lam)[0]) / (2 * h)
            for e in np.eye(n_cells)
        ])
        worst = max(worst, float(np.abs(g - fd).max() / np.abs(fd).max()))
        points += 1
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 10
    record("gradient vs central differences (50 non-kink points)", ok,
           f"max relative error {worst:.2e} (inf-norm, relative to |fd|_inf), {elapsed:.1f}s")
    assert ok


def _leaf(w, x):
    return w.leaf_signs[tuple(1 if x[i] > 0 else -1 for i in w.subset)]


def test_welch_calibration():
    # replicates are MPR values of independent fresh draws from one distribution
    p, r = perturbed_pair(n_attrs=4, scale=0.3, seed=9)
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    X = p.schema.encode_cells(p.schema.cells()).astype(float)
    pairs, n_a, n_b, draw = 1000, 30, 30, 100
    W = rng.multinomial(draw, p.vector(), size=pairs * (n_a + n_b)) / draw
    ref = r.as_sample_set()
    WR = np.tile(ref.weights, (W.shape[0], 1))
    values = _batch_mpr(DecisionTree(1), X, W, ref.vectors.astype(float), WR).reshape(pairs, n_a + n_b)
    rejections = sum(model_compare_test(v[:n_a], v[n_a:], 0.05).reject for v in values)
    rate = rejections / pairs
    elapsed = time.perf_counter() - t0
    ok = abs(rate - 0.05) <= 0.02 and elapsed < 60
    record("Welch test calibration at alpha = 0.05 (1000 pairs)", ok,
           f"false-rejection rate {rate:.3f}, {elapsed:.1f}s")
    assert ok


def _payload(text):
    doc = json.loads(text)
    doc.pop("wall_clock_seconds")
    return json.dumps(doc, sort_keys=True)


def test_cli_determinism(tmp_path, capsys):
    rng = np.random.default_rng(0)
    schema = {"attributes": [{"name": "g", "categories": ["f", "m"]}, {"name": "s", "categories": ["a", "b", "c"]}]}
    (tmp_path / "schema.json").write_text(json.dumps(schema))
    for name, pf in (("gen.csv", 0.7), ("ref.csv", 0.5)):
        rows = ["g,s"] + [f"{'f' if rng.random() < pf else 'm'},{rng.choice(['a', 'b', 'c'])}" for _ in range(80)]
        (tmp_path / name).write_text("\n".join(rows) + "\n")
    (tmp_path / "vals.txt").write_text("0.2 0.35 0.3 0.41\n")
    (tmp_path / "vals2.txt").write_text("0.25 0.3 0.33 0.38\n")
    cells = ["f|a", "f|b", "f|c", "m|a", "m|b", "m|c"]
    (tmp_path / "tune.json").write_text(json.dumps({
        "schema": schema, "initial": dict(zip(cells, [0.5, 0.1, 0.1, 0.1, 0.1, 0.1])),
        "reference": dict.fromkeys(cells, 1 / 6), "iterations": 300, "eval_every": 50, "seed": 3}))
    (tmp_path / "gap.json").write_text(json.dumps({
        "schema": schema, "generated": dict(zip(cells, [0.3, 0.1, 0.1, 0.2, 0.2, 0.1])),
        "reference": dict.fromkeys(cells, 1 / 6), "sample_sizes": [30, 300], "reps": 5, "seed": 4}))
    (tmp_path / "heat.json").write_text(json.dumps({
        "schema_file": "schema.json", "generated": "gen.csv", "reference": "ref.csv",
        "function_class": {"kind": "tree", "depth": 2}, "k_list": [10, 40], "m_list": [10, 40],
        "repetitions": 10, "seed": 5}))
    pop = ["--schema", "schema.json", "--generated", "gen.csv", "--reference", "ref.csv"]
    (tmp_path / "runs").mkdir()
    commands = {
        "measure": ["measure", *pop, "--depth", "2", "--out", "out/m.json"],
        "bootstrap": ["bootstrap", *pop, "--resamples", "100", "--reps", "20", "--seed", "7", "--out", "out/b.json"],
        "bound": ["bound", "--which", "prop1", *pop, "--depth", "2", "--rad-trials", "30", "--seed", "1"],
        "bound-bernstein": ["bound", "--which", "bernstein", "--variance-file", "vals.txt", "--eps", "0.5",
                            "--k", "80", "--m", "80"],
        "test": ["test", "--compare", "vals.txt", "vals2.txt"],
        "tune": ["tune", "--config", "tune.json", "--out-dir", "tune_out"],
        "experiment-gap": ["experiment", "--kind", "gap", "--config", "gap.json", "--out-dir", "gap_out"],
        "experiment-heatmap": ["experiment", "--kind", "heatmap", "--config", "heat.json", "--out-dir", "heat_out"],
        "report": ["report", "--runs", "runs", "--out-dir", "report_out"],
    }
    files = ["tune_out/trajectory.csv", "tune_out/generator.json", "tune_out/trajectory.png", "gap_out/gap.csv",
             "gap_out/gap.png", "heat_out/heatmap.csv", "heat_out/heatmap.png", "report_out/prompts.csv",
             "report_out/prompts.png"]
    mp = pytest.MonkeyPatch()
    mp.chdir(tmp_path)
    try:
        # the report command reads a fixed directory of run reports
        for argv in (commands["measure"], commands["bootstrap"]):
            assert main(argv[:-1] + ["runs/" + argv[-1].split("/")[-1]]) == 0
        capsys.readouterr()
        outputs = []
        for _ in range(2):
            run_out, run_files = {}, {}
            for name, argv in commands.items():
                code = main(argv)
                run_out[name] = (code, _payload(capsys.readouterr().out) if code == 0 else None)
            for f in files:
                run_files[f] = (tmp_path / f).read_bytes()
            for f in ("out/m.json", "out/b.json"):
                # --out copies carry the wall-clock field too
                run_files[f] = _payload((tmp_path / f).read_text())
            outputs.append((run_out, run_files))
    finally:
        mp.undo()
    failed_cmds = [n for n in commands if outputs[0][0][n][0] != 0]
    diff_cmds = [n for n in commands if outputs[0][0][n] != outputs[1][0][n]]
    diff_files = [f for f in outputs[0][1] if outputs[0][1][f] != outputs[1][1][f]]
    ok = not failed_cmds and not diff_cmds and not diff_files
    record("CLI determinism (every command run twice)", ok,
           f"{len(commands)} commands, {len(outputs[0][1])} output files; failed: {failed_cmds or 'none'}; "
           f"differing reports: {diff_cmds or 'none'}; differing files: {diff_files or 'none'}")
    assert ok
