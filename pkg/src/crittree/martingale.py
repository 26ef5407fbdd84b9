"""Exploration martingales along a depth-first path.

M_t adds the harmonic weight of the particle currently being explored to the
weights (at birth) of all discovered-but-unexplored particles, minus one root
weight per completed tree. Every change of M is attached to an event of the
exploration: a motion jump of the current particle, or a segment boundary
where the dying particle's weight is exchanged for its litter's. Between
events M is constant, so the stored breakpoints are exact.

The companion process m_t isolates the motion part: it subtracts the
integrated motion generator along the explored trajectory and the per-pap
particle increments phi(death) - phi(birth); its quadratic variation is the
carre-du-champ integral alone.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .errors import CensoredQueryError, OutOfRangeError
from .exploration import ExplorationPath
from .genealogy import Label, Tree
from .model import ModelSpec, motion_generator_phi, qv_integrand_vector


@dataclass
class MartingalePath:
    """Breakpoint representation of (M_t, m_t, QV_t) along exploration time.

    times[k] is the k-th event; values hold the state just after it. M and m
    are cadlag step functions; qv and the motion-generator integral are
    continuous and piecewise linear with slope determined by the state after
    the event. For single trees the variants mhat (no root corrections) and
    mhat_d = mhat - phi(current) are provided; mhat_d is constant on each
    segment and is indexed per segment.
    """

    times: np.ndarray
    m_values: np.ndarray          # M_t after each event
    small_m_values: np.ndarray    # m_t after each event
    qv_values: np.ndarray         # integral of f(zeta) up to each event
    state_after: np.ndarray       # state of the current particle after event
    root_value: float             # phi at the root state
    valid_to: float               # queries allowed on [0, valid_to)
    single_tree: bool
    mhat_d_by_segment: np.ndarray | None
    path: ExplorationPath = field(repr=False)
    _f: np.ndarray = field(repr=False)

    def _locate(self, t: float) -> int:
        if t < 0 or t > self.valid_to:
            raise OutOfRangeError(f"time {t} outside [0, {self.valid_to}]")
        return bisect_right(self.times, t) - 1

    def martingale_at(self, t: float) -> float:
        return float(self.m_values[self._locate(t)])

    def small_martingale_at(self, t: float) -> float:
        return float(self.small_m_values[self._locate(t)])

    def qv_at(self, t: float) -> float:
        k = self._locate(t)
        slope = self._f[self.state_after[k]]
        return float(self.qv_values[k] + slope * (t - self.times[k]))

    def mhat_at(self, t: float) -> float:
        if not self.single_tree:
            raise CensoredQueryError("single-tree variant on a forest path")
        return self.martingale_at(t)

    def mhat_d_at(self, t: float) -> float:
        if not self.single_tree:
            raise CensoredQueryError("single-tree variant on a forest path")
        seg = self.path.segment_of(t)
        return float(self.mhat_d_by_segment[seg])

    def mhat_d_at_segment(self, seg: int) -> float:
        return float(self.mhat_d_by_segment[seg])

    def max_jump(self) -> float:
        return float(np.abs(np.diff(self.m_values)).max()) if self.times.size > 1 else 0.0

    def export_csv(self, fh) -> None:
        fh.write("t,M,qv\n")
        for t, mv, qv in zip(self.times, self.m_values, self.qv_values):
            fh.write(f"{t},{mv},{qv}\n")


def compute_martingales(path: ExplorationPath, model: ModelSpec) -> MartingalePath:
    """Evaluate M, m and the quadratic-variation integral along the path.

    Horizon-censored records are rejected: a particle cut at a time horizon
    has no death event, so M is undefined past its segment. Budget-censored
    paths are fine; values are valid up to the budget point.
    """
    phi = model.phi
    lphi = motion_generator_phi(model)
    fvec = qv_integrand_vector(model)
    trees = path.trees
    for tree in trees:
        if tree.horizon_censored:
            raise CensoredQueryError(
                "martingales need death events; simulate with a length "
                "budget instead of a horizon"
            )
    root_state = trees[0].root_state
    root_phi = float(phi[root_state])

    times = [0.0]
    m_vals = [root_phi]
    sm_vals = [0.0]
    qv_vals = [0.0]
    st_after = [root_state]
    mhat_d_seg = [] if not path.forest else None

    m = root_phi
    sm = 0.0
    qv = 0.0
    lphi_int = 0.0
    explored_inc = 0.0  # running sum of phi(death) - phi(birth) over explored
    pending = 0.0       # phi-mass of discovered, unexplored particles
    budget_cut = False

    n_seg = path.n_segments
    for seg in range(n_seg):
        rec = path.record(seg)
        if mhat_d_seg is not None:
            mhat_d_seg.append(pending)
        sigma = path.seg_start[seg]
        state = rec.birth_state
        # motion jumps within the segment
        t_prev = sigma
        for jt, js in rec.skeleton:
            et = sigma + (jt - rec.birth)
            qv += fvec[state] * (et - t_prev)
            lphi_int += lphi[state] * (et - t_prev)
            dm = phi[js] - phi[state]
            m += dm
            state = js
            t_prev = et
            sm = (phi[state] - phi[rec.birth_state]) - lphi_int + explored_inc
            times.append(et)
            m_vals.append(m)
            sm_vals.append(sm)
            qv_vals.append(qv)
            st_after.append(state)
        tau = sigma + rec.lifetime
        qv += fvec[state] * (tau - t_prev)
        lphi_int += lphi[state] * (tau - t_prev)
        if rec.budget_censored:
            budget_cut = True
            break
        # death event: exchange phi(death state) for the litter's weights
        litter_phi = float(sum(phi[c] for c in rec.children_states))
        death_phi = 0.0 if rec.killed else float(phi[rec.death_state])
        m += litter_phi - phi[rec.death_state]
        explored_inc += death_phi - phi[rec.birth_state]
        pending += litter_phi
        # the next segment (if any) pops either the first child or a pending
        # particle, removing its weight from the pool; a fresh root (forest)
        # was never in the pool
        if seg + 1 < n_seg:
            nxt = path.record(seg + 1)
            if nxt.parent >= 0:
                pending -= phi[nxt.birth_state]
            state_next = nxt.birth_state
        else:
            state_next = rec.death_state
        sm = (0.0) - lphi_int + explored_inc  # phi(zeta)-phi(birth) restarts at 0
        times.append(tau)
        m_vals.append(m)
        sm_vals.append(sm)
        qv_vals.append(qv)
        st_after.append(state_next)

    valid_to = path.total_length if not budget_cut else float(
        path.seg_start[seg] + path.seg_len[seg])
    return MartingalePath(
        times=np.asarray(times), m_values=np.asarray(m_vals),
        small_m_values=np.asarray(sm_vals), qv_values=np.asarray(qv_vals),
        state_after=np.asarray(st_after, dtype=np.int64),
        root_value=root_phi, valid_to=valid_to,
        single_tree=not path.forest,
        mhat_d_by_segment=(np.asarray(mhat_d_seg)
                           if mhat_d_seg is not None else None),
        path=path, _f=fvec,
    )


def pending_mass(tree: Tree, model: ModelSpec, label: Label) -> float:
    """Phi-mass discovered but not yet explored when the depth-first walk
    first reaches `label`: the younger siblings of the label's ancestry,
    the label itself included.

    Independent of the exploration machinery (a pure ancestor walk), which
    makes it the cross-check oracle for the per-segment values stored on
    MartingalePath.
    """
    phi = model.phi
    idx = tree.index_of(label)
    total = 0.0
    while idx >= 0:
        rec = tree.records[idx]
        p = rec.parent
        if p >= 0:
            sibs = tree.records[p].children_states[rec.sibling_rank + 1:]
            total += float(sum(phi[c] for c in sibs))
        idx = p
    return total
