import csv

import numpy as np
import pytest

from crossgibbs.bench import fit_slopes, loglog_slope, make_design, pair_work, run_bench, time_ratio, write_rows
from crossgibbs.datagen import gen_balanced_cells


def test_loglog_slope_exact():
    x = np.array([10, 20, 40, 80])
    assert loglog_slope(x, 3 * x ** 1.5) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        loglog_slope([5, 5], [1, 2])


def test_pair_work():
    assert pair_work(gen_balanced_cells((3, 4, 5))) == 3 * 9 + 4 * 8 + 5 * 7


def test_make_design():
    assert make_design("cells", 10).I == (10, 3)
    assert make_design("mcar", 20).I == (20, 20)
    with pytest.raises(ValueError):
        make_design("nope", 3)


def test_run_bench_rows_and_outputs(tmp_path):
    rows = run_bench("cells", [200, 400], sweeps=3, repeats=1)
    assert {r.scheme for r in rows} == {"GS", "cGS"} and len(rows) == 4
    assert all(r.seconds_per_sweep > 0 for r in rows)
    slopes = fit_slopes(rows)
    assert set(slopes["GS"]) == {"slope_p", "slope_N", "slope_pair_work"}
    assert time_ratio(rows).shape == (2,)
    path = write_rows(rows, tmp_path / "b.csv")
    with open(path) as fh:
        got = list(csv.DictReader(fh))
    assert len(got) == 4 and float(got[0]["seconds_per_sweep"]) > 0
