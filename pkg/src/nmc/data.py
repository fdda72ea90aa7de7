"""Sparse rating matrices, value scaling and the four-area extendability split.

Areas are numbered 0..3 internally and labelled I..IV for output:

    area I   : seen row,   seen column    (training area)
    area II  : unseen row, seen column
    area III : seen row,   unseen column
    area IV  : unseen row, unseen column

A row is "seen" when its permuted position is below ``n_I``; a column when its
permuted position is below ``m_I``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import (
    DuplicateEntryError,
    EmptyMatrixError,
    FormatError,
    CorruptionError,
    ParseError,
    RangeError,
    SplitError,
)

AREAS = ("I", "II", "III", "IV")
SPLIT_MAGIC = "NMC-SPLIT v1"


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Ratings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SparseRatings:
    """Coordinate-list view of a partially observed matrix.

    ``row_ids``/``col_ids`` keep the raw identifiers from the source file, so
    that ``row_ids[i]`` is the external id of internal row ``i``.
    """

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    alpha: float = 1.0
    beta: float = 5.0
    row_ids: tuple = field(default=(), compare=False)
    col_ids: tuple = field(default=(), compare=False)

    def __post_init__(self):
        rows = _frozen(self.rows, np.int64).ravel()
        cols = _frozen(self.cols, np.int64).ravel()
        values = _frozen(self.values, np.float64).ravel()
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", values)
        if not (len(rows) == len(cols) == len(values)):
            raise ValueError("rows, cols and values must have equal length")
        if not self.alpha < self.beta:
            raise RangeError(f"rating bounds need alpha < beta, got [{self.alpha}, {self.beta}]")
        if len(rows):
            if rows.min() < 0 or rows.max() >= self.n_rows:
                raise RangeError("row index out of range")
            if cols.min() < 0 or cols.max() >= self.n_cols:
                raise RangeError("column index out of range")
            if not np.all(np.isfinite(values)):
                raise RangeError("non-finite rating")
            if values.min() < self.alpha or values.max() > self.beta:
                raise RangeError(
                    f"rating outside [{self.alpha}, {self.beta}]: "
                    f"{values.min() if values.min() < self.alpha else values.max()}"
                )
            key = rows * self.n_cols + cols
            if len(np.unique(key)) != len(key):
                raise DuplicateEntryError("duplicate (row, col) entry")

    @property
    def nnz(self) -> int:
        return len(self.values)

    @property
    def mu(self) -> float:
        return (self.alpha + self.beta) / 2.0

    def __eq__(self, other):
        if not isinstance(other, SparseRatings):
            return NotImplemented
        return (
            (self.n_rows, self.n_cols, self.alpha, self.beta)
            == (other.n_rows, other.n_cols, other.alpha, other.beta)
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    def with_values(self, values) -> "SparseRatings":
        """Same sparsity pattern, new values."""
        return SparseRatings(
            self.n_rows, self.n_cols, self.rows, self.cols, values,
            self.alpha, self.beta, self.row_ids, self.col_ids,
        )

    def to_dense(self, fill=np.nan) -> np.ndarray:
        out = np.full((self.n_rows, self.n_cols), fill, dtype=np.float64)
        out[self.rows, self.cols] = self.values
        return out


def _sorted_ids(raw):
    uniq = set(raw)
    try:
        return sorted(uniq, key=int)
    except ValueError:
        return sorted(uniq)


def load_ratings(path, format="movielens-dat", alpha=1.0, beta=5.0) -> SparseRatings:
    """Read a rating file into a :class:`SparseRatings`.

    ``movielens-dat`` expects ``user::item::rating[::timestamp]`` lines.
    ``csv`` expects ``user,item,rating[,timestamp]`` rows; a first row whose
    rating field is not numeric is treated as a header. Raw ids are re-indexed
    to contiguous 0-based indices in ascending id order.
    """
    path = Path(path)
    if format not in ("movielens-dat", "csv"):
        raise ValueError(f"unknown ratings format {format!r}")

    users, items, ratings, lines = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        if format == "csv":
            records = ((n, row) for n, row in enumerate(csv.reader(fh), 1))
        else:
            records = ((n, line.rstrip("\r\n").split("::")) for n, line in enumerate(fh, 1))
        for lineno, fields in records:
            if not fields or all(not f.strip() for f in fields):
                continue
            if len(fields) < 3 or len(fields) > 4:
                raise ParseError(f"expected 3 or 4 fields, got {len(fields)}", lineno)
            try:
                value = float(fields[2])
            except ValueError:
                if format == "csv" and not ratings and not lines:
                    lines.append(lineno)  # header
                    continue
                raise ParseError(f"rating {fields[2]!r} is not a number", lineno) from None
            user, item = fields[0].strip(), fields[1].strip()
            if not user or not item:
                raise ParseError("empty user or item id", lineno)
            if not (alpha <= value <= beta):
                raise RangeError(f"line {lineno}: rating {value:g} outside [{alpha:g}, {beta:g}]")
            users.append(user)
            items.append(item)
            ratings.append(value)
            lines.append(lineno)

    if not ratings:
        raise EmptyMatrixError(f"{path} contains no ratings")

    row_ids = _sorted_ids(users)
    col_ids = _sorted_ids(items)
    row_index = {u: i for i, u in enumerate(row_ids)}
    col_index = {c: j for j, c in enumerate(col_ids)}
    rows = np.fromiter((row_index[u] for u in users), dtype=np.int64, count=len(users))
    cols = np.fromiter((col_index[c] for c in items), dtype=np.int64, count=len(items))

    key = rows * len(col_ids) + cols
    _, first, counts = np.unique(key, return_index=True, return_counts=True)
    if np.any(counts > 1):
        dup_key = key[first[counts > 1][0]]
        where = np.flatnonzero(key == dup_key)
        header_offset = 1 if len(lines) > len(ratings) else 0
        raise DuplicateEntryError(
            f"duplicate entry (user {users[where[0]]}, item {items[where[0]]}) "
            f"on lines {lines[where[0] + header_offset]} and {lines[where[1] + header_offset]}"
        )

    return SparseRatings(
        len(row_ids), len(col_ids), rows, cols, np.asarray(ratings),
        alpha, beta, tuple(row_ids), tuple(col_ids),
    )


def save_ratings_csv(data: SparseRatings, path) -> None:
    """Write ``user,item,rating`` rows using internal indices as ids."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("user,item,rating\n")
        for i, j, v in zip(data.rows.tolist(), data.cols.tolist(), data.values.tolist()):
            fh.write(f"{i},{j},{v!r}\n")


def save_id_map(data: SparseRatings, path) -> None:
    """Persist the raw-id to index mapping as ``kind,index,raw_id`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "index", "raw_id"])
        for i, rid in enumerate(data.row_ids):
            w.writerow(["row", i, rid])
        for j, cid in enumerate(data.col_ids):
            w.writerow(["col", j, cid])


def synthetic_low_rank(
    n_rows=100, n_cols=120, rank=3, density=0.4, noise=0.0, seed=0, alpha=1.0, beta=5.0
) -> SparseRatings:
    """Sample entries of a random rank-``rank`` matrix affinely mapped onto [alpha, beta].

    The full matrix ``U @ V.T`` (Gaussian factors) is mapped so its minimum and
    maximum land on the bounds, then ``round(density * n_rows * n_cols)`` cells
    are sampled without replacement. Gaussian noise with standard deviation
    ``noise`` (rating scale) is added and clipped back into the bounds.
    """
    rng = np.random.default_rng(seed)
    full = rng.standard_normal((n_rows, rank)) @ rng.standard_normal((n_cols, rank)).T
    lo, hi = full.min(), full.max()
    full = alpha + (full - lo) * (beta - alpha) / (hi - lo)
    count = round_half_up(density * n_rows * n_cols)
    flat = np.sort(rng.choice(n_rows * n_cols, size=count, replace=False))
    rows, cols = np.divmod(flat, n_cols)
    values = full[rows, cols]
    if noise > 0:
        values = np.clip(values + noise * rng.standard_normal(count), alpha, beta)
    return SparseRatings(n_rows, n_cols, rows, cols, values, alpha, beta)


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------


def scale(value, alpha=1.0, beta=5.0):
    """Map ratings from [alpha, beta] onto [-1, 1]; works on scalars and arrays."""
    v = np.asarray(value, dtype=np.float64)
    if np.any(v < alpha) or np.any(v > beta) or not np.all(np.isfinite(v)):
        raise RangeError(f"value outside [{alpha}, {beta}]")
    mu = (alpha + beta) / 2.0
    out = np.clip((v - mu) / (mu - alpha), -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


def unscale(value, alpha=1.0, beta=5.0):
    mu = (alpha + beta) / 2.0
    out = np.asarray(value, dtype=np.float64) * (mu - alpha) + mu
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Split
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    row_frac: float = 0.8
    col_frac: float = 0.8
    observe_frac: float = 0.9
    seed: int = 0

    def __post_init__(self):
        for name in ("row_frac", "col_frac", "observe_frac"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie strictly in (0, 1), got {v}")


@dataclass(frozen=True)
class AreaSplit:
    """Row/column permutations plus the area and role of every entry.

    ``row_perm[p]`` is the original row placed at permuted position ``p``.
    ``area`` and ``observed`` are aligned with the entry order of the
    :class:`SparseRatings` the split was built from; ``rows``/``cols`` repeat
    the entry coordinates so a split file can be checked against its data.
    """

    row_perm: np.ndarray
    col_perm: np.ndarray
    n_I: int
    m_I: int
    seed: int
    rows: np.ndarray
    cols: np.ndarray
    area: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        for name, dt in (("row_perm", np.int64), ("col_perm", np.int64), ("rows", np.int64),
                         ("cols", np.int64), ("area", np.int8), ("observed", bool)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dt))
        for name in ("row_perm", "col_perm"):
            perm = getattr(self, name)
            if not np.array_equal(np.sort(perm), np.arange(len(perm))):
                raise SplitError(f"{name} is not a permutation")
        if not (0 < self.n_I <= self.n_rows and 0 < self.m_I <= self.n_cols):
            raise SplitError("area (I) boundary outside the matrix")
        object.__setattr__(self, "row_pos", _frozen(np.argsort(self.row_perm), np.int64))
        object.__setattr__(self, "col_pos", _frozen(np.argsort(self.col_perm), np.int64))

    def __eq__(self, other):
        if not isinstance(other, AreaSplit):
            return NotImplemented
        return (self.n_I, self.m_I, self.seed) == (other.n_I, other.m_I, other.seed) and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("row_perm", "col_perm", "rows", "cols", "area", "observed")
        )

    __hash__ = None

    @property
    def n_rows(self) -> int:
        return len(self.row_perm)

    @property
    def n_cols(self) -> int:
        return len(self.col_perm)

    @property
    def heldout(self) -> np.ndarray:
        return ~self.observed

    @property
    def train_mask(self) -> np.ndarray:
        """Observed entries of area (I)."""
        return self.observed & (self.area == 0)

    def area_of(self, row: int, col: int) -> int:
        return int(self.row_pos[row] >= self.n_I) + 2 * int(self.col_pos[col] >= self.m_I)

    def counts(self) -> dict:
        """Per-area ``(total, observed, heldout)`` entry counts keyed by label."""
        out = {}
        for a, label in enumerate(AREAS):
            in_area = self.area == a
            obs = int(np.count_nonzero(in_area & self.observed))
            tot = int(np.count_nonzero(in_area))
            out[label] = (tot, obs, tot - obs)
        return out

    def check_compatible(self, data: SparseRatings) -> None:
        if (data.n_rows, data.n_cols) != (self.n_rows, self.n_cols):
            raise SplitError(
                f"split is for a {self.n_rows}x{self.n_cols} matrix, "
                f"data is {data.n_rows}x{data.n_cols}"
            )
        if not (np.array_equal(data.rows, self.rows) and np.array_equal(data.cols, self.cols)):
            raise SplitError("split entry records do not match the data entries")

    def digest(self) -> str:
        import hashlib

        h = hashlib.blake2b(digest_size=8)
        for a in (self.row_perm, self.col_perm, self.area, self.observed.astype(np.int8)):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(f"{self.n_I},{self.m_I}".encode())
        return h.hexdigest()


def _area_codes(rows, cols, row_pos, col_pos, n_I, m_I):
    unseen_row = row_pos[rows] >= n_I
    unseen_col = col_pos[cols] >= m_I
    return (unseen_row.astype(np.int8) + 2 * unseen_col.astype(np.int8)).astype(np.int8)


def make_split(data: SparseRatings, spec: SplitSpec = SplitSpec()) -> AreaSplit:
    """Shuffle rows and columns and assign every entry an area and a role."""
    if data.nnz == 0:
        raise EmptyMatrixError("cannot split an empty matrix")
    n_I = round_half_up(spec.row_frac * data.n_rows)
    m_I = round_half_up(spec.col_frac * data.n_cols)
    if n_I < 1 or m_I < 1:
        raise SplitError("area (I) would contain no rows or no columns")

    rng = np.random.default_rng(spec.seed)
    row_perm = rng.permutation(data.n_rows)
    col_perm = rng.permutation(data.n_cols)
    area = _area_codes(data.rows, data.cols, np.argsort(row_perm), np.argsort(col_perm), n_I, m_I)

    observed = np.zeros(data.nnz, dtype=bool)
    for a in range(4):
        idx = np.flatnonzero(area == a)
        if len(idx) == 0:
            continue
        idx = idx[rng.permutation(len(idx))]
        observed[idx[: round_half_up(spec.observe_frac * len(idx))]] = True

    if not np.any(observed & (area == 0)):
        raise SplitError("area (I) has no observed entries")
    return AreaSplit(row_perm, col_perm, n_I, m_I, spec.seed, data.rows, data.cols, area, observed)


def save_split(split: AreaSplit, path) -> None:
    """Write the plain-text split format.

    Layout, one item per line: the magic line, ``n_I``, ``m_I``, ``seed``,
    ``n_rows``, ``n_cols``, ``n_entries``, then ``n_rows`` lines of
    ``row_perm``, ``n_cols`` lines of ``col_perm`` and finally one
    ``row col area role`` record per entry (area 1..4, role 1 = observed,
    0 = heldout).
    """
    parts = [SPLIT_MAGIC]
    parts += [str(v) for v in (split.n_I, split.m_I, split.seed, split.n_rows, split.n_cols,
                               len(split.area))]
    parts += [str(v) for v in split.row_perm.tolist()]
    parts += [str(v) for v in split.col_perm.tolist()]
    parts += [
        f"{i} {j} {a + 1} {int(o)}"
        for i, j, a, o in zip(split.rows.tolist(), split.cols.tolist(),
                              split.area.tolist(), split.observed.tolist())
    ]
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def load_split(path) -> AreaSplit:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != SPLIT_MAGIC:
        raise FormatError(f"{path} is not an {SPLIT_MAGIC} file")
    try:
        n_I, m_I, seed, n_rows, n_cols, n_entries = (int(v) for v in lines[1:7])
        pos = 7
        row_perm = [int(v) for v in lines[pos:pos + n_rows]]
        pos += n_rows
        col_perm = [int(v) for v in lines[pos:pos + n_cols]]
        pos += n_cols
        records = np.array([[int(t) for t in ln.split()] for ln in lines[pos:pos + n_entries]],
                           dtype=np.int64).reshape(-1, 4)
    except ValueError as exc:
        raise CorruptionError(f"{path}: {exc}") from None
    if len(row_perm) != n_rows or len(col_perm) != n_cols or len(records) != n_entries:
        raise CorruptionError(f"{path} is truncated")
    if n_entries and (records[:, 2].min() < 1 or records[:, 2].max() > 4):
        raise CorruptionError(f"{path}: area code outside 1..4")
    split = AreaSplit(
        np.array(row_perm), np.array(col_perm), n_I, m_I, seed,
        records[:, 0], records[:, 1], records[:, 2] - 1, records[:, 3] == 1,
    )
    expected = _area_codes(split.rows, split.cols, split.row_pos, split.col_pos,
                          split.n_I, split.m_I)
    if not np.array_equal(expected, split.area):
        raise CorruptionError(f"{path}: area codes disagree with the permutations")
    return split


# ---------------------------------------------------------------------------
# Model inputs
# ---------------------------------------------------------------------------


def _exclude_mask(data: SparseRatings, exclude) -> np.ndarray:
    if exclude is None:
        return np.zeros(data.nnz, dtype=bool)
    exclude = np.asarray(exclude)
    if exclude.dtype == bool:
        if exclude.shape != (data.nnz,):
            raise ValueError("boolean exclude mask must have one flag per entry")
        return exclude
    mask = np.zeros(data.nnz, dtype=bool)
    mask[exclude.astype(np.int64)] = True
    return mask


class InputBuilder:
    """Row and column input vectors for a fixed data/split/exclusion triple.

    Row inputs live in permuted column order truncated to the first ``m_I``
    columns, column inputs in permuted row order truncated to ``n_I`` rows.
    Missing or excluded cells are 0.0, the scaled midpoint. ``exclude`` is a
    boolean mask over entries or an array of entry indices.
    """

    def __init__(self, data: SparseRatings, split: AreaSplit, exclude=None):
        self.data, self.split = data, split
        self.exclude = _exclude_mask(data, exclude)
        keep = ~self.exclude
        scaled = scale(data.values, data.alpha, data.beta)
        rpos = split.row_pos[data.rows]
        cpos = split.col_pos[data.cols]

        m = keep & (cpos < split.m_I)
        self._rows = sp.csr_matrix(
            (scaled[m], (data.rows[m], cpos[m])), shape=(data.n_rows, split.m_I)
        )
        m = keep & (rpos < split.n_I)
        self._cols = sp.csr_matrix(
            (scaled[m], (data.cols[m], rpos[m])), shape=(data.n_cols, split.n_I)
        )

    def rows(self, idx) -> np.ndarray:
        """Dense ``(len(idx), m_I)`` batch of row inputs."""
        return self._rows[np.asarray(idx, dtype=np.int64)].toarray()

    def cols(self, idx) -> np.ndarray:
        """Dense ``(len(idx), n_I)`` batch of column inputs."""
        return self._cols[np.asarray(idx, dtype=np.int64)].toarray()


def row_input(data: SparseRatings, split: AreaSplit, row: int, exclude=None) -> np.ndarray:
    excl = _exclude_mask(data, exclude)
    out = np.zeros(split.m_I)
    sel = (data.rows == row) & ~excl
    pos = split.col_pos[data.cols[sel]]
    vals = scale(data.values[sel], data.alpha, data.beta)
    keep = pos < split.m_I
    out[pos[keep]] = vals[keep]
    return out


def col_input(data: SparseRatings, split: AreaSplit, col: int, exclude=None) -> np.ndarray:
    excl = _exclude_mask(data, exclude)
    out = np.zeros(split.n_I)
    sel = (data.cols == col) & ~excl
    pos = split.row_pos[data.rows[sel]]
    vals = scale(data.values[sel], data.alpha, data.beta)
    keep = pos < split.n_I
    out[pos[keep]] = vals[keep]
    return out
