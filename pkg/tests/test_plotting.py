from mpraudit.plotting import plot_gap, plot_prompt_report, plot_std_heatmap, plot_trajectory


def test_figures_are_written(tmp_path):
    gap = [{"depth": d, "sample_size": n, "max_deviation": 1 / n} for d in (1, 2) for n in (10, 100)]
    heat = [{"k": k, "m": m, "std": 1 / (k + m)} for k in (10, 20) for m in (10, 20)]
    traj = [{"iteration": t, "mpr": 1 / (t + 1), "mpr_exact": 1 / (t + 2), "loss_drift": 0.1} for t in range(5)]
    prompts = [{"label": "a", "value": 0.2}, {"label": "b", "value": 0.4}]
    paths = [
        plot_gap(gap, tmp_path / "gap.png"),
        plot_std_heatmap(heat, tmp_path / "heat.png"),
        plot_trajectory(traj, tmp_path / "sub" / "traj.png"),
        plot_prompt_report(prompts, 0.3, tmp_path / "p.png"),
    ]
    for p in paths:
        assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_repeated_render_is_byte_identical(tmp_path):
    rows = [{"depth": 1, "sample_size": n, "max_deviation": 1 / n} for n in (10, 100)]
    a = plot_gap(rows, tmp_path / "a.png").read_bytes()
    b = plot_gap(rows, tmp_path / "b.png").read_bytes()
    assert a == b
