"""Forward simulation of the branching process with full genealogy.

Trees are generated in depth-first (lexicographic) order rather than in birth
time order: the branching property makes each particle's lifetime and litter
independent of everything outside its ancestry, so expanding the first child's
subtree before its siblings samples the same law while letting a total-length
budget cut the simulation exactly where the depth-first exploration would
stop. Record order therefore always matches exploration order.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .errors import CensoredQueryError, ModelError, RejectionBudgetError
from .model import ModelSpec
from .rng import BlockRng, stream

Label = tuple[int, ...]


@dataclass(slots=True)
class ParticleRecord:
    label: Label
    parent: int                 # index into Tree.records; -1 for the root
    sibling_rank: int           # position within the parent's litter
    birth: float
    death: float
    birth_state: int
    death_state: int            # state just before death (or censoring)
    skeleton: tuple             # ((time, state), ...) motion jumps only
    children_states: tuple      # litter states, in rank order
    killed: bool = False
    horizon_censored: bool = False
    budget_censored: bool = False

    @property
    def lifetime(self) -> float:
        return self.death - self.birth

    @property
    def n_children(self) -> int:
        return len(self.children_states)

    def state_at(self, t: float) -> int:
        """Piecewise-constant state during [birth, death]."""
        s = self.birth_state
        for jt, js in self.skeleton:
            if jt <= t:
                s = js
            else:
                break
        return s


@dataclass
class Tree:
    """Complete genealogy in depth-first order."""

    records: list[ParticleRecord]
    root_state: int
    horizon: float | None
    length_budget: float | None
    horizon_censored: bool
    budget_censored: bool
    dropped_subtrees: int       # pending particles discarded at budget stop

    _label_index: dict | None = field(default=None, repr=False)

    @property
    def total_length(self) -> float:
        return math.fsum(r.lifetime for r in self.records)

    @property
    def extinction_time(self) -> float | None:
        if self.horizon_censored or self.budget_censored:
            return None
        return max(r.death for r in self.records)

    @property
    def max_death(self) -> float:
        return max(r.death for r in self.records)

    def survives_to(self, t: float) -> bool:
        """Whether some particle is alive at time t (ancestral lines cross t)."""
        return self.max_death > t or any(
            r.horizon_censored and r.death >= t for r in self.records
        )

    def index_of(self, label: Label) -> int:
        if self._label_index is None:
            self._label_index = {r.label: i for i, r in enumerate(self.records)}
        try:
            return self._label_index[tuple(label)]
        except KeyError:
            from .errors import UnknownLabelError
            raise UnknownLabelError(f"label {label!r} not in tree") from None

    def to_jsonl(self) -> str:
        """One JSON object per record, in depth-first order."""
        lines = []
        for r in self.records:
            lines.append(json.dumps({
                "label": list(r.label),
                "birth": r.birth,
                "death": r.death,
                "birth_state": r.birth_state,
                "death_state": r.death_state,
                "skeleton": [[t, s] for t, s in r.skeleton],
                "children": list(r.children_states),
                "killed": r.killed,
                "horizon_censored": r.horizon_censored,
                "budget_censored": r.budget_censored,
            }, separators=(",", ":")))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SimConfig:
    """Simulation controls. horizon and length_budget may be combined."""

    seed: int
    horizon: float | None = None
    length_budget: float | None = None
    max_records: int = 50_000_000

    def __post_init__(self):
        if self.horizon is not None and self.horizon <= 0:
            raise ModelError("horizon must be positive")
        if self.length_budget is not None and self.length_budget <= 0:
            raise ModelError("length budget must be positive")


def _sample_litter(table, cum, u):
    i = bisect_right(cum, u)
    if i >= len(table):
        i = len(table) - 1
    return table[i][1]


def _compile_tables(model: ModelSpec):
    """Per-state cumulative litter probabilities and motion alias rows."""
    cums = []
    for table in model.offspring.tables:
        acc, out = 0.0, []
        for p, _ in table:
            acc += p
            out.append(acc)
        cums.append(out)
    k = model.size
    move_targets = []
    move_cums = []
    rates = model.motion.rates
    for x in range(k):
        targets = np.nonzero(rates[x] > 0)[0]
        move_targets.append(targets)
        r = rates[x, targets]
        move_cums.append(np.cumsum(r) / r.sum() if targets.size else None)
    return cums, move_targets, move_cums


def simulate_tree(model: ModelSpec, x: int, cfg: SimConfig,
                  _rng: BlockRng | None = None) -> Tree:
    """Exact event-driven simulation of one tree rooted at state x.

    Horizon censoring caps lifetimes at cfg.horizon (particles alive there
    get no litter and a censoring flag); a length budget stops the depth-first
    generation once the cumulative lifetime reaches the remaining budget.
    """
    if x < 0 or x >= model.size:
        raise ModelError(f"invalid root state {x}")
    rng = _rng if _rng is not None else BlockRng(stream(cfg.seed))
    gamma = model.offspring.gamma
    kill = model.motion.kill
    qrow = model.motion.rates.sum(axis=1)
    tables = model.offspring.tables
    cums, move_targets, move_cums = _compile_tables(model)
    horizon = cfg.horizon
    budget = cfg.length_budget
    records: list[ParticleRecord] = []
    used = 0.0
    budget_hit = False
    horizon_hit = False
    dropped = 0
    # stack entries: (parent_idx, label, rank, birth_time, birth_state)
    stack = [(-1, (), 0, 0.0, int(x))]
    while stack:
        parent, label, rank, birth, state = stack.pop()
        if budget_hit:
            dropped += 1
            continue
        birth_state = state
        t = birth
        skeleton: list[tuple[float, int]] = []
        death = None
        death_state = state
        children: tuple[int, ...] = ()
        killed = False
        h_cens = False
        b_cens = False
        while True:
            total = gamma[state] + kill[state] + qrow[state]
            if total <= 0.0:
                if horizon is None and budget is None:
                    raise ModelError(
                        "state with no events requires a horizon or budget"
                    )
                t_next = math.inf
            else:
                t_next = t + rng.exponential() / total
            if horizon is not None and t_next >= horizon:
                if budget is not None and used + (horizon - birth) >= budget:
                    death = birth + (budget - used)
                    b_cens = True
                else:
                    death = horizon
                    h_cens = True
                death_state = state
                break
            if budget is not None and used + (t_next - birth) >= budget:
                death = birth + (budget - used)
                death_state = state
                b_cens = True
                break
            t = t_next
            u = rng.uniform() * total
            if u < gamma[state]:
                death = t
                death_state = state
                children = _sample_litter(tables[state], cums[state],
                                          rng.uniform())
                break
            elif u < gamma[state] + kill[state]:
                death = t
                death_state = state
                killed = True
                break
            else:
                targets = move_targets[state]
                mc = move_cums[state]
                j = int(np.searchsorted(mc, rng.uniform()))
                if j >= targets.size:
                    j = targets.size - 1
                state = int(targets[j])
                skeleton.append((t, state))
        used += death - birth
        idx = len(records)
        records.append(ParticleRecord(
            label=label, parent=parent, sibling_rank=rank, birth=birth,
            death=death, birth_state=int(birth_state),
            death_state=int(death_state), skeleton=tuple(skeleton),
            children_states=children, killed=killed,
            horizon_censored=h_cens, budget_censored=b_cens,
        ))
        if b_cens:
            budget_hit = True
        if h_cens:
            horizon_hit = True
        if len(records) > cfg.max_records:
            raise ModelError("record cap exceeded; set a length budget")
        for i in range(len(children) - 1, -1, -1):
            stack.append((idx, label + (i + 1,), i, death, int(children[i])))
    return Tree(records=records, root_state=int(x), horizon=horizon,
                length_budget=budget, horizon_censored=horizon_hit,
                budget_censored=budget_hit, dropped_subtrees=dropped)


def simulate_forest(model: ModelSpec, x: int, total_length: float,
                    seed: int, horizon: float | None = None) -> list[Tree]:
    """I.i.d. trees rooted at x until their cumulative length reaches
    total_length; tree i uses sub-stream (seed, i). The last tree is
    budget-cut exactly at the remaining length."""
    trees: list[Tree] = []
    used = 0.0
    i = 0
    while used < total_length:
        cfg = SimConfig(seed=seed, horizon=horizon,
                        length_budget=total_length - used)
        tree = simulate_tree(model, x, cfg, _rng=BlockRng(stream(seed, i)))
        trees.append(tree)
        used += tree.total_length
        i += 1
    return trees


def population_at(tree: Tree, t: float) -> list[tuple[Label, int]]:
    """Labels and states of the particles alive at time t.

    Raises CensoredQueryError when the answer could be affected by
    censoring (budget-cut trees, or times beyond the horizon).
    """
    if t < 0:
        raise ModelError("time must be non-negative")
    if tree.budget_censored:
        raise CensoredQueryError("tree was cut by a length budget")
    if tree.horizon is not None and t > tree.horizon:
        raise CensoredQueryError(f"time {t} beyond simulation horizon")
    out = []
    for r in tree.records:
        alive = r.birth <= t < r.death or (r.horizon_censored and t == r.death)
        if alive:
            out.append((r.label, r.state_at(t)))
    return out


@dataclass
class ConditionedTree:
    tree: Tree
    attempts: int
    indeterminate_rejects: int  # budget-cut attempts whose survival was unknown


def condition_on_survival(model: ModelSpec, x: int, n: float, cfg: SimConfig,
                          max_attempts: int = 100_000) -> ConditionedTree:
    """Rejection-sample a tree conditioned to have particles alive at time n.

    Accepted trees are simulated to extinction (or to cfg.length_budget, with
    the censoring flag left set) so their geometry can be measured. Attempt k
    uses sub-stream (cfg.seed, k).
    """
    if n <= 0:
        raise ModelError("conditioning time must be positive")
    indeterminate = 0
    for k in range(max_attempts):
        tree = simulate_tree(model, x, cfg, _rng=BlockRng(stream(cfg.seed, k)))
        if tree.survives_to(n):
            return ConditionedTree(tree=tree, attempts=k + 1,
                                   indeterminate_rejects=indeterminate)
        if tree.budget_censored:
            indeterminate += 1
    raise RejectionBudgetError(
        f"no tree surviving to {n} in {max_attempts} attempts"
    )
