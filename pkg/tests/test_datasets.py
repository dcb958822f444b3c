import numpy as np
import pytest

from crossgibbs.datasets import INSTEVAL_ENV, find_insteval, load_insteval


def write_mini(path):
    path.write_text(
        '"","s","d","studage","lectage","service","dept","y"\n'
        '"1","1","1002","2","2","0","2",5\n'
        '"2","1","1050","2","1","1","6",2\n'
        '"3","7","1002","4","1","0","2",3\n'
    )
    return path


def test_load_from_env(tmp_path, monkeypatch):
    p = write_mini(tmp_path / "ie.csv")
    monkeypatch.setenv(INSTEVAL_ENV, str(p))
    tbl = load_insteval()
    assert tbl.K == 6 and tbl.N == 3 and tbl.I == (2, 2, 2, 2, 2, 2)
    assert tbl.labels[1] == ["1002", "1050"]
    sub = load_insteval(factors=[1, 2])
    assert sub.I == (2, 2) and sub.grand_mean == pytest.approx(10 / 3)
    assert np.all(load_insteval(p, factors=[2], with_response=False).cell_means == 0)


def test_missing_and_bad_factors(tmp_path, monkeypatch):
    monkeypatch.setenv(INSTEVAL_ENV, str(tmp_path / "none.csv"))
    monkeypatch.setattr("crossgibbs.datasets._CANDIDATES", ())
    with pytest.raises(FileNotFoundError, match=INSTEVAL_ENV):
        find_insteval()
    p = write_mini(tmp_path / "ie.csv")
    with pytest.raises(ValueError):
        load_insteval(p, factors=[0])
    with pytest.raises(ValueError):
        load_insteval(p, factors=[1, 1])
