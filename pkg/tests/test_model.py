import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crossgibbs.datagen import gen_balanced_cells, gen_balanced_levels_K2, gen_mcar
from crossgibbs.model import (
    DesignClass,
    Observation,
    Precisions,
    classify_design,
    from_arrays,
    ingest_observations,
    read_csv,
    write_csv,
)


def test_full_grid_zero_response():
    rows = [Observation((i, j), 0.0) for i in (1, 2) for j in (1, 2)]
    tbl = ingest_observations(rows, (2, 2))
    assert tbl.N == 4
    for nk in tbl.level_counts:
        assert list(nk) == [2, 2]
    assert tbl.grand_mean == 0.0


def test_hand_aggregation():
    rows = [Observation((1, 1), 1.0), Observation((1, 1), 3.0), Observation((2, 2), 2.0)]
    tbl = ingest_observations(rows, (2, 2))
    i = [tuple(c) for c in tbl.cell_levels].index((0, 0))
    assert tbl.cell_counts[i] == 2
    assert tbl.cell_means[i] == 2.0
    assert list(tbl.level_counts[0]) == [2, 1]
    # within-cell sum of squares: (1-2)^2 + (3-2)^2
    assert tbl.cell_ss[i] == pytest.approx(2.0)


def test_rejects_out_of_range_naming_row_and_factor():
    rows = [Observation((1, 1), 0.0), Observation((1, 3), 0.0)]
    with pytest.raises(ValueError, match=r"row 2.*factor 2"):
        ingest_observations(rows, (2, 2))


def test_rejects_empty_and_bad_weight():
    with pytest.raises(ValueError):
        ingest_observations([], (2, 2))
    with pytest.raises(ValueError):
        ingest_observations([Observation((1, 1), 0.0, weight=0)], (2, 2))


def test_precisions_validation():
    with pytest.raises(ValueError):
        Precisions([1.0, 0.0])
    with pytest.raises(ValueError):
        Precisions([1.0, np.inf])
    t = Precisions([1.0, 2.0])
    assert t.K == 1 and t[1] == 2.0
    assert t == Precisions([1.0, 2.0]) and hash(t) == hash(Precisions([1.0, 2.0]))


def test_classify_examples():
    assert classify_design(gen_balanced_cells((3, 3))) is DesignClass.BALANCED_CELLS
    # two disjoint permutations on I=5: cyclic shifts 0 and 1
    rows = np.arange(5)
    levels = np.column_stack([np.tile(rows, 2), np.concatenate([rows, (rows + 1) % 5])])
    tbl = from_arrays(levels, np.zeros(10), (5, 5), zero_based=True)
    assert classify_design(tbl) is DesignClass.BALANCED_LEVELS
    assert classify_design(gen_mcar(50, 50, 0.1, seed=0)) is DesignClass.UNBALANCED


def test_replicated_full_grid_is_balanced_cells_only_when_counts_equal():
    levels = np.indices((2, 2)).reshape(2, -1).T
    tbl = from_arrays(levels, np.zeros(4), (2, 2), weights=[1, 2, 2, 1], zero_based=True)
    assert tbl.design is DesignClass.BALANCED_LEVELS
    tbl = from_arrays(levels, np.zeros(4), (2, 2), weights=[1, 2, 1, 1], zero_based=True)
    assert tbl.design is DesignClass.UNBALANCED


@st.composite
def raw_rows(draw):
    K = draw(st.integers(1, 3))
    I = draw(st.lists(st.integers(1, 4), min_size=K, max_size=K))
    n = draw(st.integers(1, 25))
    levels = [[draw(st.integers(0, i - 1)) for i in I] for _ in range(n)]
    y = draw(st.lists(st.floats(-10, 10), min_size=n, max_size=n))
    return np.array(levels), np.array(y), tuple(I)


@settings(max_examples=60, deadline=None)
@given(raw_rows())
def test_margin_invariants(data):
    levels, y, I = data
    tbl = from_arrays(levels, y, I, zero_based=True)
    N = tbl.N
    assert N == len(y)
    assert np.all(tbl.cell_counts >= 1)
    for k in range(tbl.K):
        assert tbl.level_counts[k].sum() == N
        assert tbl.level_counts[k] @ tbl.level_means[k] / N == pytest.approx(tbl.grand_mean, abs=1e-9)
        for l in range(tbl.K):
            if l == k:
                continue
            m = tbl.pair_table(k, l, dense=True)
            assert np.array_equal(m.sum(axis=1), tbl.level_counts[k])
            assert np.array_equal(m.sum(axis=0), tbl.level_counts[l])
    assert tbl.grand_mean == pytest.approx(y.mean(), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(raw_rows())
def test_aggregation_idempotence(data):
    levels, y, I = data
    raw = from_arrays(levels, y, I, zero_based=True)
    again = from_arrays(raw.cell_levels, raw.cell_means, I, weights=raw.cell_counts,
                        ss=raw.cell_ss, zero_based=True)
    assert raw.same_statistics(again, rtol=1e-9)
    assert np.allclose(np.sort(raw.cell_ss), np.sort(again.cell_ss), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=3), st.integers(1, 3))
def test_generated_cells_always_classified(I, n):
    assert gen_balanced_cells(I, n).design is DesignClass.BALANCED_CELLS


def test_csv_roundtrip(tmp_path, mcar_small):
    path = write_csv(mcar_small, tmp_path / "d.csv")
    back = read_csv(path, I=mcar_small.I)
    assert back.same_statistics(mcar_small)


def test_csv_weights_and_relabel(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text("f1,f2,y,w\nu7,x,1.5,2\nu3,x,0.5,1\nu7,z,2.0,3\n")
    tbl = read_csv(p, relabel=True)
    assert tbl.I == (2, 2) and tbl.N == 6
    assert tbl.labels[0] == ["u3", "u7"]
    with pytest.raises(ValueError, match="relabel"):
        read_csv(p)


def test_csv_errors(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    with pytest.raises(ValueError):
        read_csv(p)
    p.write_text("f1,f2\n1,2\n")
    with pytest.raises(ValueError, match="'y'"):
        read_csv(p)


def test_restrict_and_summary(perm_union):
    sub = perm_union.restrict([2])
    assert sub.K == 1 and sub.I == (6,) and sub.N == perm_union.N
    s = perm_union.summary()
    assert s["design"] == "BalancedLevels" and s["N"] == 12 and s["p"] == 13
    with pytest.raises(ValueError):
        perm_union.restrict([3])


def test_balanced_levels_generator_counts():
    for m in (1, 2, 4, 6):
        tbl = gen_balanced_levels_K2(6, m, seed=m)
        for k in range(2):
            assert np.all(tbl.level_counts[k] == tbl.N // 6)
