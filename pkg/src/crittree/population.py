"""Vectorized count-level simulation.

The vector of per-state particle counts of a branching Markov process is
itself a Markov jump chain (branch events at rate gamma_x per particle at x,
motion x->y at rate q(x,y) per particle, soft kills at rate kill_x); its law
is exactly the count marginal of the genealogical simulation. Survival,
moment and occupation statistics only need counts, so this module simulates
whole replicate batches with numpy at a fraction of the per-tree cost. A
cross-check against the tree simulator lives in the test suite.

Replicates are simulated in large memory-bounded chunks, each on its own
Philox sub-stream, so results depend only on (seed, reps), not on scheduling.
Rare long-lived replicates dominate the event count, so chunks are made as
large as memory allows to keep the vector lanes full while they run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelSpec
from .rng import stream

BATCH = 1 << 19


@dataclass
class PopulationSample:
    """Per-replicate outputs of a count-level run."""

    f_at_grid: np.ndarray        # (reps, len(t_grid)) values of <f, X_t>
    n_at_grid: np.ndarray        # (reps, len(t_grid)) total particle counts
    occupation: np.ndarray       # (reps,) integral of <f, X_s> ds over [0, stop)
    length: np.ndarray           # (reps,) integral of N_s ds (total tree length)
    length_censored: np.ndarray  # (reps,) True when the length cap stopped the run
    t_grid: np.ndarray
    first_event_time: np.ndarray  # (reps,) time of the first event (inf if none)


class _Compiled:
    """Per-model event channels: [branch_x ...], [kill_x ...], [move_xy ...]."""

    def __init__(self, model: ModelSpec):
        k = model.size
        self.k = k
        moves = []
        for x in range(k):
            for y in range(k):
                r = model.motion.rates[x, y]
                if x != y and r > 0:
                    moves.append((x, y, r))
        self.n_chan = 2 * k + len(moves)
        # weight of channel c for count vector C is C[state] * rate
        self.chan_state = np.empty(self.n_chan, dtype=np.int64)
        self.chan_rate = np.empty(self.n_chan)
        self.chan_kind = np.empty(self.n_chan, dtype=np.int64)  # 0 branch 1 kill 2 move
        self.chan_target = np.zeros(self.n_chan, dtype=np.int64)
        for x in range(k):
            self.chan_state[x] = x
            self.chan_rate[x] = model.offspring.gamma[x]
            self.chan_kind[x] = 0
            self.chan_state[k + x] = x
            self.chan_rate[k + x] = model.motion.kill[x]
            self.chan_kind[k + x] = 1
        for i, (x, y, r) in enumerate(moves):
            c = 2 * k + i
            self.chan_state[c] = x
            self.chan_rate[c] = r
            self.chan_kind[c] = 2
            self.chan_target[c] = y
        # litter lookup: per state, cumulative probabilities and delta rows
        deltas = [np.zeros(k, dtype=np.int64)]  # row 0 = placeholder
        self.litter_cum = []
        self.litter_row = []
        for x in range(k):
            cums, rows = [], []
            acc = 0.0
            for p, children in model.offspring.tables[x]:
                acc += p
                d = np.zeros(k, dtype=np.int64)
                d[x] -= 1
                for c in children:
                    d[c] += 1
                rows.append(len(deltas))
                deltas.append(d)
                cums.append(acc)
            self.litter_cum.append(np.array(cums))
            self.litter_row.append(np.array(rows, dtype=np.int64))
        self.delta = np.vstack(deltas)


def _finish_scalar(comp: _Compiled, rng, rep: int, counts, t, occ, length,
                   len_cens, first_event, had_event, gptr, f_at, n_at,
                   t_grid, f, t_end, length_cap):
    """Run one replicate to completion with a tight scalar loop.

    Used once the vectorized pool has drained to a handful of long-lived
    replicates, where per-iteration numpy overhead dominates.
    """
    from .rng import BlockRng

    blk = BlockRng(rng)
    k = comp.k
    c = counts[rep].copy()
    tt = float(t[rep])
    oc = float(occ[rep])
    ln = float(length[rep])
    gp = int(gptr[rep])
    g = len(t_grid)
    while True:
        tot = 0.0
        for ch in range(comp.n_chan):
            tot += c[comp.chan_state[ch]] * comp.chan_rate[ch]
        dt = blk.exponential() / tot if tot > 0 else np.inf
        t_next = min(tt + dt, t_end)
        n_tot = int(c.sum())
        fdot = float(c @ f)
        capped = False
        if length_cap is not None and n_tot > 0:
            room = length_cap - ln
            if n_tot * (t_next - tt) > room:
                t_next = tt + room / n_tot
                capped = True
        while gp < g and t_next >= t_grid[gp]:
            f_at[rep, gp] = fdot
            n_at[rep, gp] = n_tot
            gp += 1
        oc += fdot * (t_next - tt)
        ln += n_tot * (t_next - tt)
        tt = t_next
        if capped:
            if n_tot > 0:
                len_cens[rep] = True
            break
        if t_next >= t_end or tot <= 0:
            break
        u = blk.uniform() * tot
        acc = 0.0
        pick = comp.n_chan - 1
        for ch in range(comp.n_chan):
            acc += c[comp.chan_state[ch]] * comp.chan_rate[ch]
            if u < acc:
                pick = ch
                break
        if not had_event[rep]:
            first_event[rep] = tt
            had_event[rep] = True
        kind = comp.chan_kind[pick]
        st = comp.chan_state[pick]
        if kind == 2:
            c[st] -= 1
            c[comp.chan_target[pick]] += 1
        elif kind == 1:
            c[st] -= 1
        else:
            cum = comp.litter_cum[st]
            li = int(np.searchsorted(cum, blk.uniform()))
            if li >= len(cum):
                li = len(cum) - 1
            c += comp.delta[comp.litter_row[st][li]]
        if c.sum() == 0:
            break
    counts[rep] = c
    t[rep] = tt
    occ[rep] = oc
    length[rep] = ln
    gptr[rep] = gp


_SCALAR_SWITCH = 48


def _simulate_batch_single(comp: _Compiled, model: ModelSpec, reps: int, rng,
                           t_grid: np.ndarray, f: np.ndarray,
                           horizon: float | None, length_cap: float | None):
    """Lean path for one-state models: kill events are folded into the litter
    table as empty litters, so each event costs one exponential, one uniform
    and one vectorized table lookup."""
    gamma = float(model.offspring.gamma[0])
    kill = float(model.motion.kill[0])
    lam = gamma + kill
    f0 = float(f[0])
    probs = [kill / lam] if kill > 0 and lam > 0 else []
    sizes = [0] if probs else []
    for p, children in model.offspring.tables[0]:
        probs.append(p * (gamma / lam if lam > 0 else 0.0))
        sizes.append(len(children))
    cum = np.cumsum(probs)
    if cum.size:
        cum = cum / cum[-1]
    dsz = np.asarray(sizes, dtype=np.int64) - 1
    t_end = horizon if horizon is not None else np.inf

    n = np.ones(reps, dtype=np.int64)
    t = np.zeros(reps)
    occ = np.zeros(reps)
    length = np.zeros(reps)
    len_cens = np.zeros(reps, dtype=bool)
    first_event = np.full(reps, np.inf)
    had_event = np.zeros(reps, dtype=bool)
    g = len(t_grid)
    f_at = np.zeros((reps, g))
    n_at = np.zeros((reps, g), dtype=np.int64)
    gptr = np.zeros(reps, dtype=np.int64)

    active = np.arange(reps)
    while active.size:
        cn = n[active]
        if lam > 0:
            dt = rng.standard_exponential(active.size) / (lam * cn)
        else:
            dt = np.full(active.size, np.inf)
        t_now = t[active]
        t_next = np.minimum(t_now + dt, t_end)
        capped = np.zeros(active.size, dtype=bool)
        if length_cap is not None:
            room = length_cap - length[active]
            over = cn * (t_next - t_now) > room
            t_next = np.where(over, t_now + room / cn, t_next)
            capped = over
        if g:
            while True:
                cross = gptr[active] < g
                if not cross.any():
                    break
                gt = t_grid[np.minimum(gptr[active], g - 1)]
                hit = cross & (t_next >= gt)
                if not hit.any():
                    break
                rows = active[hit]
                f_at[rows, gptr[rows]] = f0 * cn[hit]
                n_at[rows, gptr[rows]] = cn[hit]
                gptr[rows] += 1
        span = t_next - t_now
        occ[active] += f0 * cn * span
        length[active] += cn * span
        t[active] = t_next
        len_cens[active[capped]] = True
        finished = capped | (t_next >= t_end) | (lam <= 0)
        ev = ~finished
        if ev.any():
            rows = active[ev]
            li = np.searchsorted(cum, rng.random(rows.size))
            li = np.minimum(li, dsz.size - 1)
            n[rows] += dsz[li]
            newev = ~had_event[rows]
            first_event[rows[newev]] = t[rows[newev]]
            had_event[rows] = True
        drop = finished | (n[active] == 0)
        active = active[~drop]
        if 0 < active.size < _SCALAR_SWITCH:
            counts = n[:, None]
            for rep in active:
                _finish_scalar(comp, rng, int(rep), counts, t, occ, length,
                               len_cens, first_event, had_event, gptr,
                               f_at, n_at, t_grid, f, t_end, length_cap)
            n = counts[:, 0]
            break
    counts = n[:, None].copy()
    return counts, f_at, n_at, occ, length, len_cens, first_event


def _simulate_batch(comp: _Compiled, x0: int, reps: int, rng,
                    t_grid: np.ndarray, f: np.ndarray,
                    horizon: float | None, length_cap: float | None):
    k = comp.k
    counts = np.zeros((reps, k), dtype=np.int64)
    counts[:, x0] = 1
    t = np.zeros(reps)
    occ = np.zeros(reps)
    length = np.zeros(reps)
    len_cens = np.zeros(reps, dtype=bool)
    first_event = np.full(reps, np.inf)
    had_event = np.zeros(reps, dtype=bool)
    g = len(t_grid)
    f_at = np.zeros((reps, g))
    n_at = np.zeros((reps, g), dtype=np.int64)
    gptr = np.zeros(reps, dtype=np.int64)
    t_end = horizon if horizon is not None else np.inf

    active = np.arange(reps)
    while active.size:
        if active.size < _SCALAR_SWITCH:
            for rep in active:
                _finish_scalar(comp, rng, int(rep), counts, t, occ, length,
                               len_cens, first_event, had_event, gptr,
                               f_at, n_at, t_grid, f, t_end, length_cap)
            break
        c = counts[active]
        w = c[:, comp.chan_state] * comp.chan_rate[None, :]
        tot = w.sum(axis=1)
        dt = np.empty(active.size)
        pos = tot > 0
        dt[pos] = rng.standard_exponential(int(pos.sum())) / tot[pos]
        dt[~pos] = np.inf
        t_now = t[active]
        t_next = np.minimum(t_now + dt, t_end)
        n_tot = c.sum(axis=1)
        fdot = c @ f
        # length cap: stop a replicate at the exact time its running length hits the cap
        if length_cap is not None:
            room = length_cap - length[active]
            span = t_next - t_now
            over = n_tot * span > room
            lim = np.where(n_tot > 0, room / np.maximum(n_tot, 1), np.inf)
            t_next = np.where(over, t_now + lim, t_next)
        span = t_next - t_now
        # record grid crossings using pre-event counts (piecewise constant)
        if g:
            for _ in range(g):
                cross = gptr[active] < g
                if not cross.any():
                    break
                gt = t_grid[np.minimum(gptr[active], g - 1)]
                hit = cross & (t_next >= gt)
                if not hit.any():
                    break
                rows = active[hit]
                f_at[rows, gptr[rows]] = fdot[hit]
                n_at[rows, gptr[rows]] = n_tot[hit]
                gptr[rows] += 1
        occ[active] += fdot * span
        length[active] += n_tot * span
        t[active] = t_next
        finished = np.zeros(active.size, dtype=bool)
        if length_cap is not None:
            capped = length[active] >= length_cap - 1e-12
            len_cens[active[capped & (n_tot > 0)]] = True
            finished |= capped
        finished |= t_next >= t_end
        finished |= ~pos
        ev = ~finished
        if ev.any():
            rows = active[ev]
            wi = w[ev]
            u = rng.random(rows.size) * tot[ev]
            cum = np.cumsum(wi, axis=1)
            ch = (cum < u[:, None]).sum(axis=1)
            ch = np.minimum(ch, comp.n_chan - 1)
            newev = ~had_event[rows]
            first_event[rows[newev]] = t[rows[newev]]
            had_event[rows] = True
            kind = comp.chan_kind[ch]
            st = comp.chan_state[ch]
            # moves
            mv = kind == 2
            if mv.any():
                r = rows[mv]
                counts[r, st[mv]] -= 1
                counts[r, comp.chan_target[ch[mv]]] += 1
            # kills
            kl = kind == 1
            if kl.any():
                counts[rows[kl], st[kl]] -= 1
            # branches
            br = kind == 0
            if br.any():
                r = rows[br]
                bs = st[br]
                u2 = rng.random(r.size)
                rowsel = np.empty(r.size, dtype=np.int64)
                for xx in np.unique(bs):
                    m = bs == xx
                    li = np.searchsorted(comp.litter_cum[xx], u2[m])
                    li = np.minimum(li, len(comp.litter_cum[xx]) - 1)
                    rowsel[m] = comp.litter_row[xx][li]
                counts[r] += comp.delta[rowsel]
        ext = counts[active].sum(axis=1) == 0
        drop = finished | ext
        active = active[~drop]
    return counts, f_at, n_at, occ, length, len_cens, first_event


def simulate_population(model: ModelSpec, x: int, reps: int, seed: int,
                        t_grid=(), f=None, horizon: float | None = None,
                        length_cap: float | None = None) -> PopulationSample:
    """Simulate `reps` independent populations started from one particle at x.

    t_grid times must be sorted; f defaults to the all-ones vector. The run of
    each replicate stops at max(t_grid) (or `horizon` if given), at extinction,
    or when its running length integral hits length_cap.
    """
    t_grid = np.asarray(sorted(t_grid), dtype=float)
    f = np.ones(model.size) if f is None else np.asarray(f, dtype=float)
    if horizon is None and t_grid.size:
        horizon = float(t_grid[-1]) + 1e-12
    comp = _Compiled(model)
    outs = []
    done = 0
    b = 0
    while done < reps:
        nb = min(BATCH, reps - done)
        rng = stream(seed, b)
        if model.size == 1:
            outs.append(_simulate_batch_single(comp, model, nb, rng,
                                               t_grid, f, horizon, length_cap))
        else:
            outs.append(_simulate_batch(comp, x, nb, rng,
                                        t_grid, f, horizon, length_cap))
        done += nb
        b += 1
    cat = [np.concatenate([o[i] for o in outs]) for i in range(1, 7)]
    return PopulationSample(f_at_grid=cat[0], n_at_grid=cat[1],
                            occupation=cat[2], length=cat[3],
                            length_censored=cat[4], t_grid=t_grid,
                            first_event_time=cat[5])
