"""Depth-first exploration of trees and forests.

The exploration visits particles in lexicographic order at unit speed. Each
record contributes one segment of length equal to its lifetime; within a
segment the height h rises at slope one from the particle's birth time, and
at segment boundaries h drops (never rises) to the next particle's birth
time. Pairwise tree distances need the infimum of h between two exploration
times, which reduces to a range-minimum query over per-segment birth heights:
distance-matrix experiments issue millions of such queries, hence the sparse
table with O(1) lookups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfRangeError
from .genealogy import Label, Tree


class RMQIndex:
    """Sparse-table range minimum over a fixed float array.

    Queries return (min value, index of the leftmost attaining position).
    """

    def __init__(self, values: np.ndarray):
        v = np.asarray(values, dtype=float)
        n = v.size
        self._n = n
        levels = max(1, n.bit_length())
        self._val = [v]
        self._arg = [np.arange(n, dtype=np.int64)]
        for lev in range(1, levels):
            half = 1 << (lev - 1)
            prev_v = self._val[-1]
            prev_a = self._arg[-1]
            if n - (1 << lev) + 1 <= 0:
                break
            left_v = prev_v[: n - (1 << lev) + 1]
            right_v = prev_v[half: half + left_v.size]
            left_a = prev_a[: left_v.size]
            right_a = prev_a[half: half + left_v.size]
            take_left = left_v <= right_v  # ties resolve to the left
            self._val.append(np.where(take_left, left_v, right_v))
            self._arg.append(np.where(take_left, left_a, right_a))

    def query(self, i: int, j: int) -> tuple[float, int]:
        """Min over the inclusive index range [i, j]."""
        if i > j or i < 0 or j >= self._n:
            raise OutOfRangeError(f"bad range [{i}, {j}]")
        span = j - i + 1
        lev = min(span.bit_length() - 1, len(self._val) - 1)
        half = 1 << lev
        v1, a1 = self._val[lev][i], self._arg[lev][i]
        v2, a2 = self._val[lev][j - half + 1], self._arg[lev][j - half + 1]
        if v1 < v2 or (v1 == v2 and a1 <= a2):
            return float(v1), int(a1)
        return float(v2), int(a2)

    def query_batch(self, i: np.ndarray, j: np.ndarray):
        """Vectorized form of query over equal-length index arrays."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        span = j - i + 1
        lev = np.minimum(np.int64(np.log2(np.maximum(span, 1))),
                         len(self._val) - 1)
        half = np.int64(1) << lev
        out_v = np.empty(i.size)
        out_a = np.empty(i.size, dtype=np.int64)
        for lv in np.unique(lev):
            m = lev == lv
            ii = i[m]
            jj = j[m] - (1 << int(lv)) + 1
            v1 = self._val[int(lv)][ii]
            v2 = self._val[int(lv)][jj]
            a1 = self._arg[int(lv)][ii]
            a2 = self._arg[int(lv)][jj]
            left = (v1 < v2) | ((v1 == v2) & (a1 <= a2))
            out_v[m] = np.where(left, v1, v2)
            out_a[m] = np.where(left, a1, a2)
        return out_v, out_a


@dataclass
class ExplorationPath:
    """Depth-first exploration of a tree or an i.i.d. forest."""

    trees: list[Tree]
    seg_start: np.ndarray    # sigma_v per segment
    seg_len: np.ndarray      # lifetimes
    birth_height: np.ndarray  # b_v per segment
    tree_index: np.ndarray   # which tree each segment belongs to
    record_index: np.ndarray  # record position within its tree
    total_length: float
    forest: bool

    _rmq: RMQIndex | None = field(default=None, repr=False)

    @property
    def n_segments(self) -> int:
        return self.seg_start.size

    @property
    def rmq(self) -> RMQIndex:
        if self._rmq is None:
            self._rmq = RMQIndex(self.birth_height)
        return self._rmq

    def record(self, seg: int):
        return self.trees[self.tree_index[seg]].records[self.record_index[seg]]

    def segment_of(self, t: float) -> int:
        if t < 0 or t >= self.total_length:
            raise OutOfRangeError(
                f"exploration time {t} outside [0, {self.total_length})"
            )
        return int(np.searchsorted(self.seg_start, t, side="right") - 1)

    def segment_of_batch(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if t.size and (t.min() < 0 or t.max() >= self.total_length):
            raise OutOfRangeError("exploration times outside [0, L)")
        return np.searchsorted(self.seg_start, t, side="right") - 1

    def height_at(self, t: float) -> float:
        s = self.segment_of(t)
        return float(self.birth_height[s] + (t - self.seg_start[s]))

    def height_at_batch(self, t: np.ndarray) -> np.ndarray:
        s = self.segment_of_batch(t)
        return self.birth_height[s] + (np.asarray(t) - self.seg_start[s])


def explore(tree_or_trees) -> ExplorationPath:
    """Build the exploration path of one tree or of a list of i.i.d. trees."""
    trees = ([tree_or_trees] if isinstance(tree_or_trees, Tree)
             else list(tree_or_trees))
    seg_len = []
    birth = []
    tidx = []
    ridx = []
    for i, tree in enumerate(trees):
        for j, r in enumerate(tree.records):
            seg_len.append(r.lifetime)
            birth.append(r.birth)
            tidx.append(i)
            ridx.append(j)
    seg_len = np.asarray(seg_len)
    birth = np.asarray(birth)
    start = np.concatenate([[0.0], np.cumsum(seg_len)[:-1]])
    total = float(seg_len.sum())
    return ExplorationPath(
        trees=trees, seg_start=start, seg_len=seg_len, birth_height=birth,
        tree_index=np.asarray(tidx, dtype=np.int64),
        record_index=np.asarray(ridx, dtype=np.int64),
        total_length=total, forest=len(trees) > 1,
    )


def height_and_state(path: ExplorationPath, t: float):
    """Current particle, height and state at exploration time t."""
    s = path.segment_of(t)
    r = path.record(s)
    h = r.birth + (t - path.seg_start[s])
    return r.label, float(h), r.state_at(h)


def range_min_height(path: ExplorationPath, s: float, t: float):
    """Infimum of h over [s, t]: (value, attaining time, segment, at_left).

    Within a segment h rises, so the infimum over [s, t] is either h(s)
    itself (at_left=True: the particle at s is an ancestor of the one at t)
    or the smallest birth height among the segments entered after s. Ties
    pick the earliest time.
    """
    if t < s:
        s, t = t, s
    i = path.segment_of(s)
    j = path.segment_of(t)
    hs = path.height_at(s)
    if i == j:
        return hs, s, i, True
    mval, marg = path.rmq.query(i + 1, j)
    if hs <= mval:
        return hs, s, i, True
    return float(mval), float(path.seg_start[marg]), int(marg), False


def tree_distance(path: ExplorationPath, s: float, t: float):
    """Genealogical distance h_s + h_t - 2 inf h, plus MRCA information.

    Returns (distance, argmin_time, mrca) where mrca is (tree_idx, rec_idx)
    of the most recent common ancestor of the particles at s and t, or None
    when s and t fall in different trees of a forest. When the infimum sits
    at a segment start, the walk is entering a fresh child of the common
    ancestor, so the MRCA is that segment's parent; when it sits inside a
    segment (necessarily at min(s, t)), that particle is itself the MRCA.
    """
    hs = path.height_at(s)
    ht = path.height_at(t)
    mval, mtime, mseg, at_left = range_min_height(path, s, t)
    d = hs + ht - 2.0 * mval
    if at_left:
        mrca = (int(path.tree_index[mseg]), int(path.record_index[mseg]))
    else:
        rec = path.record(mseg)
        if rec.parent < 0:
            mrca = None
        else:
            mrca = (int(path.tree_index[mseg]), int(rec.parent))
    return float(d), float(mtime), mrca


def tree_distance_batch(path: ExplorationPath, s: np.ndarray, t: np.ndarray):
    """Vectorized distances for equal-length arrays of exploration times."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    lo = np.minimum(s, t)
    hi = np.maximum(s, t)
    i = path.segment_of_batch(lo)
    j = path.segment_of_batch(hi)
    h_lo = path.birth_height[i] + (lo - path.seg_start[i])
    h_hi = path.birth_height[j] + (hi - path.seg_start[j])
    mval = h_lo.copy()
    diff = i != j
    if diff.any():
        qv, _ = path.rmq.query_batch(i[diff] + 1, j[diff])
        mval[diff] = np.minimum(h_lo[diff], qv)
    return h_lo + h_hi - 2.0 * mval


def mrca_record(path: ExplorationPath, s: float, t: float):
    """Record of the most recent common ancestor of v_s and v_t."""
    _, _, mrca = tree_distance(path, s, t)
    if mrca is None:
        return None
    ti, ri = mrca
    return path.trees[ti].records[ri]


def export_height_csv(path: ExplorationPath, fh) -> None:
    """Write (t, h_t) at segment endpoints for plotting."""
    fh.write("t,height\n")
    for k in range(path.n_segments):
        t0 = path.seg_start[k]
        fh.write(f"{t0},{path.birth_height[k]}\n")
        fh.write(f"{t0 + path.seg_len[k]},{path.birth_height[k] + path.seg_len[k]}\n")


def label_lex_meet(a: Label, b: Label) -> Label:
    """Longest common prefix: the ancestral meet of two Ulam-Harris labels."""
    out = []
    for x, y in zip(a, b):
        if x != y:
            break
        out.append(x)
    return tuple(out)
