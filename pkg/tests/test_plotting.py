import matplotlib

from eventgraph.plotting import plot_diff, plot_run
from eventgraph.replay import ForkSpec, fork, structural_diff

PNG = b"\x89PNG\r\n\x1a\n"


def test_backend_is_headless():
    assert matplotlib.get_backend().lower() == "agg"


def test_run_figure_is_a_stable_png(quickstart, tmp_path):
    a = plot_run(quickstart.log, tmp_path / "a.png")
    b = plot_run(quickstart.log, tmp_path / "b.png")
    assert a.read_bytes()[:8] == PNG
    assert a.read_bytes() == b.read_bytes()


def test_run_figure_marks_a_halt(pack, tmp_path):
    rt = pack.run_demo("capped", budget={"max_events": 25})
    assert plot_run(rt.log, tmp_path / "halt.png").stat().st_size > 0


def test_diff_figure_for_empty_and_nonempty_diffs(quickstart, pack, tmp_path):
    empty = structural_diff(quickstart.log, quickstart.log)
    assert plot_diff(empty, tmp_path / "empty.png").read_bytes()[:8] == PNG
    result = fork(quickstart.log, ForkSpec(quickstart.log.run, 300, {"risk_identifier.min_questions": 99}), pack)
    changed = structural_diff(quickstart.log, result.log)
    assert plot_diff(changed, tmp_path / "diff.png").read_bytes()[:8] == PNG
