import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmc.data import (
    AreaSplit,
    InputBuilder,
    SparseRatings,
    SplitSpec,
    col_input,
    load_ratings,
    load_split,
    make_split,
    round_half_up,
    row_input,
    save_split,
    scale,
    synthetic_low_rank,
    unscale,
)
from nmc.errors import (
    CorruptionError,
    DuplicateEntryError,
    EmptyMatrixError,
    FormatError,
    ParseError,
    RangeError,
    SplitError,
)


@pytest.fixture
def synth():
    return synthetic_low_rank(100, 120, rank=3, density=0.4, seed=0)


# -- loading -----------------------------------------------------------------


def test_load_movielens(tmp_path):
    p = tmp_path / "ratings.dat"
    p.write_text("1::10::5::978300760\n2::10::3::978300761\n")
    d = load_ratings(p)
    assert (d.n_rows, d.n_cols) == (2, 1)
    assert sorted(zip(d.rows.tolist(), d.cols.tolist(), d.values.tolist())) == [(0, 0, 5.0), (1, 0, 3.0)]
    assert d.row_ids == ("1", "2") and d.col_ids == ("10",)


def test_load_reindexes_by_numeric_id(tmp_path):
    p = tmp_path / "r.dat"
    p.write_text("10::7::4::0\n9::3::2::0\n10::3::1::0\n")
    d = load_ratings(p)
    assert d.row_ids == ("9", "10")
    assert d.col_ids == ("3", "7")
    dense = d.to_dense()
    assert dense[1, 1] == 4 and dense[0, 0] == 2 and dense[1, 0] == 1


def test_load_csv_with_and_without_header(tmp_path):
    a = tmp_path / "a.csv"
    a.write_text("user,item,rating,timestamp\nu1,i1,4,0\nu2,i1,2.5,0\n")
    b = tmp_path / "b.csv"
    b.write_text("u1,i1,4\nu2,i1,2.5\n")
    da, db = load_ratings(a, "csv"), load_ratings(b, "csv")
    assert da == db
    assert da.nnz == 2


def test_empty_file(tmp_path):
    p = tmp_path / "empty.dat"
    p.write_text("")
    with pytest.raises(EmptyMatrixError):
        load_ratings(p)


def test_rating_out_of_range(tmp_path):
    p = tmp_path / "bad.dat"
    p.write_text("1::10::7::0\n")
    with pytest.raises(RangeError):
        load_ratings(p)


def test_malformed_line_reports_line_number(tmp_path):
    p = tmp_path / "bad.dat"
    p.write_text("1::10::5::0\n2::10\n")
    with pytest.raises(ParseError, match="line 2"):
        load_ratings(p)


def test_duplicate_entry(tmp_path):
    p = tmp_path / "dup.dat"
    p.write_text("1::10::5::0\n2::10::3::0\n1::10::4::0\n")
    with pytest.raises(DuplicateEntryError, match="lines 1 and 3"):
        load_ratings(p)


def test_sparse_ratings_invariants():
    with pytest.raises(DuplicateEntryError):
        SparseRatings(2, 2, [0, 0], [1, 1], [1, 2])
    with pytest.raises(RangeError):
        SparseRatings(2, 2, [0], [2], [3])
    with pytest.raises(RangeError):
        SparseRatings(2, 2, [0], [0], [6])
    with pytest.raises(RangeError):
        SparseRatings(2, 2, [0], [0], [3], alpha=5, beta=5)


# -- scaling -----------------------------------------------------------------


@pytest.mark.parametrize("v,expected", [(5, 1.0), (3, 0.0), (4, 0.5), (1, -1.0)])
def test_scale(v, expected):
    assert scale(v, 1, 5) == expected


@pytest.mark.parametrize("v,expected", [(1.0, 5.0), (0.0, 3.0), (-0.5, 2.0)])
def test_unscale(v, expected):
    assert unscale(v, 1, 5) == expected


def test_scale_range_error():
    with pytest.raises(RangeError):
        scale(5.5, 1, 5)


@given(st.floats(1.0, 5.0))
def test_scale_roundtrip(v):
    assert abs(unscale(scale(v, 1, 5), 1, 5) - v) <= 1e-12


@given(st.floats(-10, 10), st.floats(0.01, 10), st.floats(0, 1))
def test_scale_roundtrip_any_bounds(alpha, width, frac):
    beta = alpha + width
    v = alpha + frac * width
    s = scale(v, alpha, beta)
    assert -1.0 <= s <= 1.0
    assert abs(unscale(s, alpha, beta) - v) <= 1e-12 * max(1.0, abs(v))


# -- split -------------------------------------------------------------------


def test_round_half_up():
    assert round_half_up(80.0) == 80
    assert round_half_up(2.5) == 3
    assert round_half_up(9.0) == 9
    assert round_half_up(0.45) == 0


def test_split_sizes(synth):
    split = make_split(synth, SplitSpec())
    assert split.n_I == 80 and split.m_I == 96


def test_split_area_rule_and_partition(synth):
    split = make_split(synth, SplitSpec(seed=3))
    rp = split.row_pos[synth.rows]
    cp = split.col_pos[synth.cols]
    expected = (rp >= split.n_I).astype(int) + 2 * (cp >= split.m_I).astype(int)
    assert np.array_equal(split.area, expected)
    counts = split.counts()
    assert sum(c[0] for c in counts.values()) == synth.nnz
    for total, observed, _ in counts.values():
        assert observed == round_half_up(0.9 * total)


def test_observe_fraction_rounding():
    # a single area holding 10 entries
    d = SparseRatings(1, 10, np.zeros(10, int), np.arange(10), np.full(10, 3.0))
    split = make_split(d, SplitSpec(row_frac=0.9, col_frac=0.99))
    assert split.counts()["I"] == (10, 9, 1)


def test_split_is_deterministic(synth):
    a = make_split(synth, SplitSpec(seed=7))
    b = make_split(synth, SplitSpec(seed=7))
    assert a == b


def test_split_seeds_differ(synth):
    a = make_split(synth, SplitSpec(seed=1))
    b = make_split(synth, SplitSpec(seed=2))
    assert not np.array_equal(a.row_perm, b.row_perm)


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(row_frac=1.0)
    with pytest.raises(ValueError):
        SplitSpec(observe_frac=0.0)


def test_unusable_split():
    # one entry, and area (I) is a single cell that it does not occupy for seed 0
    d = SparseRatings(10, 10, [9], [9], [3.0])
    with pytest.raises(SplitError):
        make_split(d, SplitSpec(row_frac=0.1, col_frac=0.1, seed=0))


def test_split_file_roundtrip(synth, tmp_path):
    split = make_split(synth, SplitSpec(seed=5))
    path = tmp_path / "split.txt"
    save_split(split, path)
    text = path.read_text().splitlines()
    assert text[0] == "NMC-SPLIT v1"
    assert text[1:4] == ["80", "96", "5"]
    back = load_split(path)
    assert back == split
    back.check_compatible(synth)


def test_split_file_errors(synth, tmp_path):
    split = make_split(synth, SplitSpec(seed=5))
    path = tmp_path / "split.txt"
    save_split(split, path)
    lines = path.read_text().splitlines()
    bad = tmp_path / "bad.txt"
    bad.write_text("NMC-SPLIT v2\n" + "\n".join(lines[1:]))
    with pytest.raises(FormatError):
        load_split(bad)
    bad.write_text("\n".join(lines[:-5]) + "\n")
    with pytest.raises(CorruptionError):
        load_split(bad)


def test_split_incompatible_data(synth):
    split = make_split(synth, SplitSpec())
    other = synthetic_low_rank(100, 120, rank=3, density=0.4, seed=1)
    with pytest.raises(SplitError):
        split.check_compatible(other)


# -- inputs ------------------------------------------------------------------


def _toy_split(n_rows, n_cols, n_I, m_I, rows, cols):
    rows, cols = np.asarray(rows), np.asarray(cols)
    row_perm, col_perm = np.arange(n_rows), np.arange(n_cols)
    area = (rows >= n_I).astype(int) + 2 * (cols >= m_I).astype(int)
    return AreaSplit(row_perm, col_perm, n_I, m_I, 0, rows, cols, area, np.ones(len(rows), bool))


def test_row_input_single_rating():
    d = SparseRatings(1, 6, [0], [2], [5.0])
    split = _toy_split(1, 6, 1, 4, d.rows, d.cols)
    assert row_input(d, split, 0).tolist() == [0, 0, 1.0, 0]


def test_row_input_empty_and_excluded():
    d = SparseRatings(2, 4, [0], [1], [4.0])
    split = _toy_split(2, 4, 1, 4, d.rows, d.cols)
    assert row_input(d, split, 1).tolist() == [0, 0, 0, 0]
    assert row_input(d, split, 0, exclude=np.array([True])).tolist() == [0, 0, 0, 0]
    assert row_input(d, split, 0, exclude=[0]).tolist() == [0, 0, 0, 0]


def test_col_input_cases():
    d = SparseRatings(5, 6, [0, 1, 2, 3, 4], [0, 5, 5, 0, 1], [1.0, 5.0, 2.0, 4.0, 3.0])
    split = _toy_split(5, 6, 3, 4, d.rows, d.cols)
    assert col_input(d, split, 0).tolist() == [-1.0, 0, 0]
    # unseen column rated by two seen rows
    assert col_input(d, split, 5).tolist() == [0, 1.0, -0.5]
    # column rated only by an unseen row
    assert col_input(d, split, 1).tolist() == [0, 0, 0]


def test_inputs_follow_permutation(synth):
    split = make_split(synth, SplitSpec(seed=4))
    k = 17
    i, j, v = synth.rows[k], synth.cols[k], synth.values[k]
    x = row_input(synth, split, i)
    if split.col_pos[j] < split.m_I:
        assert x[split.col_pos[j]] == scale(v)
    y = col_input(synth, split, j)
    if split.row_pos[i] < split.n_I:
        assert y[split.row_pos[i]] == scale(v)


def test_builder_matches_single_inputs(synth):
    split = make_split(synth, SplitSpec(seed=2))
    builder = InputBuilder(synth, split, split.heldout)
    rows = np.array([0, 5, 99])
    cols = np.array([3, 119])
    X = builder.rows(rows)
    Y = builder.cols(cols)
    for k, i in enumerate(rows):
        assert np.array_equal(X[k], row_input(synth, split, i, split.heldout))
    for k, j in enumerate(cols):
        assert np.array_equal(Y[k], col_input(synth, split, j, split.heldout))


def test_excluded_values_never_leak(synth):
    split = make_split(synth, SplitSpec(seed=2))
    held = split.heldout
    values = synth.values.copy()
    values[held] = np.where(values[held] > 3, 1.0, 5.0)
    perturbed = synth.with_values(values)
    a = InputBuilder(synth, split, held)
    b = InputBuilder(perturbed, split, held)
    idx = np.arange(synth.n_rows)
    jdx = np.arange(synth.n_cols)
    assert np.array_equal(a.rows(idx), b.rows(idx))
    assert np.array_equal(a.cols(jdx), b.cols(jdx))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_split_invariants_property(seed):
    d = synthetic_low_rank(30, 25, rank=2, density=0.3, seed=seed % 17)
    split = make_split(d, SplitSpec(seed=seed))
    assert np.array_equal(np.sort(split.row_perm), np.arange(30))
    assert np.array_equal(np.sort(split.col_perm), np.arange(25))
    for total, observed, _ in split.counts().values():
        assert abs(observed - 0.9 * total) <= 1
