"""Branching-Markov-process models on finite state spaces.

A model couples a continuous-time jump motion (with optional soft killing to
a cemetery where the harmonic weight vanishes), a state-dependent branching
rate, and finite offspring tables. Everything the limit theorems need —
offspring moment functionals, the carre du champ of the harmonic weight, the
quadratic-variation integrand f and its average sigma2 — is evaluated exactly
from the tables, which is what turns the theorems into testable oracles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError, NonCriticalError, ReducibleError

CRITICALITY_TOL = 1e-8
NORMALIZATION_TOL = 1e-10


@dataclass(frozen=True)
class StateSpace:
    """Finite set of states, either abstract or a discretized unit circle."""

    kind: str  # "finite" | "torus"
    size: int

    def __post_init__(self):
        if self.kind not in ("finite", "torus"):
            raise ModelError(f"unknown state-space kind {self.kind!r}")
        if self.size < 1:
            raise ModelError("state space must have at least one state")


@dataclass(frozen=True)
class MotionSpec:
    """Jump rates q(x, y) for x != y, plus per-state soft-killing rates."""

    rates: np.ndarray  # (K, K), diagonal ignored
    kill: np.ndarray   # (K,)

    def __post_init__(self):
        q = np.asarray(self.rates, dtype=float)
        k = np.asarray(self.kill, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ModelError("motion rates must be a square matrix")
        if k.shape != (q.shape[0],):
            raise ModelError("kill vector length must match the state count")
        off = q.copy()
        np.fill_diagonal(off, 0.0)
        if not np.all(np.isfinite(off)) or np.any(off < 0):
            raise ModelError("motion rates must be finite and non-negative")
        if not np.all(np.isfinite(k)) or np.any(k < 0):
            raise ModelError("kill rates must be finite and non-negative")
        off.setflags(write=False)
        k = k.copy()
        k.setflags(write=False)
        object.__setattr__(self, "rates", off)
        object.__setattr__(self, "kill", k)


# One offspring table entry: (probability, tuple of child states).
Litter = tuple[float, tuple[int, ...]]


@dataclass(frozen=True)
class OffspringSpec:
    """Per-state branching rate and finite litter tables.

    Single-child litters are rejected: a one-child branching event is
    indistinguishable from a motion jump and is excluded by convention.
    """

    gamma: np.ndarray            # (K,)
    tables: tuple[tuple[Litter, ...], ...]  # tables[x] = ((p, children), ...)

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if not np.all(np.isfinite(g)) or np.any(g < 0):
            raise ModelError("branching rates must be finite and non-negative")
        g = g.copy()
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)
        k = g.shape[0]
        if len(self.tables) != k:
            raise ModelError("offspring tables must cover every state")
        canon = []
        for x, table in enumerate(self.tables):
            if not table and g[x] > 0:
                raise ModelError(f"state {x} branches but has an empty table")
            total = 0.0
            rows = []
            for p, children in table:
                if p < 0:
                    raise ModelError(f"state {x}: negative litter probability")
                children = tuple(int(c) for c in children)
                if len(children) == 1:
                    raise ModelError(
                        f"state {x}: single-child litters are not allowed"
                    )
                if any(c < 0 or c >= k for c in children):
                    raise ModelError(f"state {x}: litter references invalid state")
                total += p
                rows.append((float(p), children))
            if table and abs(total - 1.0) > 1e-12:
                raise ModelError(
                    f"state {x}: litter probabilities sum to {total}, not 1"
                )
            canon.append(tuple(rows))
        object.__setattr__(self, "tables", tuple(canon))


@dataclass(frozen=True)
class EigenPair:
    """Harmonic weight phi, stationary weights phi_tilde, eigenvalue lam.

    phi_tilde is a probability vector; phi is scaled so that
    <phi_tilde, phi> = 1. lam must vanish for a critical model.
    """

    phi: np.ndarray
    phi_tilde: np.ndarray
    lam: float

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float).copy()
        til = np.asarray(self.phi_tilde, dtype=float).copy()
        if np.any(phi <= 0):
            raise ModelError("phi must be strictly positive")
        if np.any(til < 0):
            raise ModelError("phi_tilde weights must be non-negative")
        if abs(til.sum() - 1.0) > NORMALIZATION_TOL:
            raise ModelError("phi_tilde must sum to one")
        if abs(float(til @ phi) - 1.0) > NORMALIZATION_TOL:
            raise ModelError("<phi_tilde, phi> must equal one")
        phi.setflags(write=False)
        til.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "phi_tilde", til)


@dataclass(frozen=True)
class ModelSpec:
    """Immutable bundle of state space, motion, branching and eigenpair.

    Instances built through build_model satisfy generator-level criticality;
    they are safe to share across concurrent simulation workers.
    """

    name: str
    space: StateSpace
    motion: MotionSpec
    offspring: OffspringSpec
    eigenpair: EigenPair

    @property
    def size(self) -> int:
        return self.space.size

    @property
    def phi(self) -> np.ndarray:
        return self.eigenpair.phi

    @property
    def phi_tilde(self) -> np.ndarray:
        return self.eigenpair.phi_tilde

    def child_intensity(self) -> np.ndarray:
        """Matrix C with C[x, y] = expected number of children at y."""
        k = self.size
        c = np.zeros((k, k))
        for x, table in enumerate(self.offspring.tables):
            for p, children in table:
                for y in children:
                    c[x, y] += p
        return c


def _check_state(model: ModelSpec, x: int) -> int:
    x = int(x)
    if x < 0 or x >= model.size:
        raise ModelError(f"invalid state index {x}")
    return x


def _as_values(model: ModelSpec, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (model.size,):
        raise ModelError("per-state function has wrong length")
    return f


def offspring_mean(model: ModelSpec, f, x: int) -> float:
    """Expected value of sum_i f(x_i) over the litter born at a death in x."""
    x = _check_state(model, x)
    f = _as_values(model, f)
    return sum(p * sum(f[c] for c in children)
               for p, children in model.offspring.tables[x])


def variance_functional(model: ModelSpec, g, x: int) -> float:
    """Exact variance of sum_i g(x_i) over the offspring table at x."""
    x = _check_state(model, x)
    g = _as_values(model, g)
    m1 = 0.0
    m2 = 0.0
    for p, children in model.offspring.tables[x]:
        s = sum(g[c] for c in children)
        m1 += p * s
        m2 += p * s * s
    return m2 - m1 * m1


def pair_moment_functional(model: ModelSpec, g, x: int) -> float:
    """Expected sum over ordered pairs of distinct offspring of g(x_i)g(x_j).

    Equals E[Z[g]^2] - E[Z[g^2]]; this is the functional whose gamma-weighted
    phi_tilde average drives the survival and Yaglom constants (it coincides
    with variance_functional whenever the per-state offspring mean is one).
    """
    x = _check_state(model, x)
    g = _as_values(model, g)
    out = 0.0
    for p, children in model.offspring.tables[x]:
        s = sum(g[c] for c in children)
        q = sum(g[c] * g[c] for c in children)
        out += p * (s * s - q)
    return out


def carre_du_champ(model: ModelSpec, x: int) -> float:
    """Quadratic-variation density of phi along the motion at x.

    Soft killing contributes as a jump to a cemetery where phi vanishes.
    """
    x = _check_state(model, x)
    phi = model.phi
    q = model.motion.rates[x]
    out = float(np.dot(q, (phi - phi[x]) ** 2))
    out += float(model.motion.kill[x]) * phi[x] ** 2
    return out


def qv_integrand(model: ModelSpec, x: int) -> float:
    """Integrand f of the exploration martingale's quadratic variation."""
    x = _check_state(model, x)
    phi = model.phi
    gamma = float(model.offspring.gamma[x])
    second = 0.0
    for p, children in model.offspring.tables[x]:
        d = sum(phi[c] for c in children) - phi[x]
        second += p * d * d
    if gamma == 0.0:
        second = 0.0
    return carre_du_champ(model, x) + gamma * second


def qv_integrand_vector(model: ModelSpec) -> np.ndarray:
    return np.array([qv_integrand(model, x) for x in range(model.size)])


def motion_generator_phi(model: ModelSpec) -> np.ndarray:
    """(L phi)(x) for the jump motion, including the kill term."""
    phi = model.phi
    q = model.motion.rates
    out = q @ phi - q.sum(axis=1) * phi - model.motion.kill * phi
    return out


def sigma2(model: ModelSpec) -> float:
    """Diffusivity of the rescaled exploration martingale: <phi_tilde, f>/<phi_tilde, 1>."""
    til = model.phi_tilde
    f = qv_integrand_vector(model)
    return float(til @ f) / float(til.sum())


def branch_variance_constant(model: ModelSpec) -> float:
    """<gamma * variance_functional(phi), phi_tilde>."""
    til = model.phi_tilde
    g = model.offspring.gamma
    v = np.array([variance_functional(model, model.phi, x) for x in range(model.size)])
    return float(til @ (g * v))


def branch_pair_constant(model: ModelSpec) -> float:
    """<gamma * pair_moment_functional(phi), phi_tilde>.

    Under criticality this equals sigma2(model) exactly; it is the aggregate
    constant entering the survival, Yaglom and moment limits.
    """
    til = model.phi_tilde
    g = model.offspring.gamma
    v = np.array([pair_moment_functional(model, model.phi, x) for x in range(model.size)])
    return float(til @ (g * v))


def pending_mass_slope(model: ModelSpec) -> float:
    """Growth rate, per unit tree height, of the discovered-but-unexplored
    phi-mass along a typical ancestry: half the aggregate constant."""
    return 0.5 * branch_pair_constant(model)


def survival_constant(model: ModelSpec, x: int) -> float:
    """Limit of t * P(population alive at t) started from one particle at x."""
    x = _check_state(model, x)
    return 2.0 * float(model.phi[x]) / branch_pair_constant(model)


def generator_matrix(space: StateSpace, motion: MotionSpec,
                     offspring: OffspringSpec) -> np.ndarray:
    """First-moment generator A: motion plus gamma * (mean-offspring - id)."""
    k = space.size
    q = motion.rates
    g = offspring.gamma
    c = np.zeros((k, k))
    for x, table in enumerate(offspring.tables):
        for p, children in table:
            for y in children:
                c[x, y] += p
    a = q.copy()
    np.fill_diagonal(a, 0.0)
    a += g[:, None] * c
    diag = -q.sum(axis=1) - motion.kill - g
    a[np.arange(k), np.arange(k)] += diag
    return a


def _power_eigenpair(a: np.ndarray, max_iter: int = 200_000,
                     tol: float = 1e-13) -> tuple[np.ndarray, np.ndarray, float]:
    """Perron triple of A via power iteration on I + delta*A."""
    k = a.shape[0]
    if k == 1:
        return np.ones(1), np.ones(1), float(a[0, 0])
    neg = max(0.0, float(-a.diagonal().min()))
    delta = 0.5 / neg if neg > 0 else 0.5 / max(1.0, float(np.abs(a).max()))
    p = np.eye(k) + delta * a
    v = np.ones(k) / k
    w = np.ones(k) / k
    for _ in range(max_iter):
        v2 = p @ v
        w2 = p.T @ w
        v2 /= v2.sum()
        w2 /= w2.sum()
        drift = max(np.abs(v2 - v).max(), np.abs(w2 - w).max())
        v, w = v2, w2
        if drift < tol:
            break
    rho = float(w @ (p @ v)) / float(w @ v)
    lam = (rho - 1.0) / delta
    return v, w, lam


def build_model(name: str, space: StateSpace, motion: MotionSpec,
                offspring: OffspringSpec) -> ModelSpec:
    """Assemble a ModelSpec, computing and validating the critical eigenpair.

    Raises NonCriticalError when the Perron eigenvalue is outside tolerance
    and ReducibleError when the eigenvector is not strictly positive.
    """
    if space.size != motion.rates.shape[0] or space.size != offspring.gamma.shape[0]:
        raise ModelError("state-space size does not match motion/offspring tables")
    a = generator_matrix(space, motion, offspring)
    v, w, lam = _power_eigenpair(a)
    if v.min() <= 1e-12 * v.max() or w.min() <= 1e-12 * w.max():
        raise ReducibleError("Perron eigenvector is not strictly positive")
    if abs(lam) >= CRITICALITY_TOL:
        raise NonCriticalError(lam)
    til = w / w.sum()
    phi = v / float(til @ v)
    pair = EigenPair(phi=phi, phi_tilde=til, lam=lam)
    model = ModelSpec(name=name, space=space, motion=motion,
                      offspring=offspring, eigenpair=pair)
    resid = np.abs(a @ phi)
    if resid.max() >= CRITICALITY_TOL:
        raise NonCriticalError(float(lam if lam != 0 else resid.max()))
    return model


# ---------------------------------------------------------------------------
# Built-in models
# ---------------------------------------------------------------------------

def binary_model(gamma: float = 1.0) -> ModelSpec:
    """Single state; at rate gamma a particle is replaced by 0 or 2 children."""
    space = StateSpace("finite", 1)
    motion = MotionSpec(rates=np.zeros((1, 1)), kill=np.zeros(1))
    off = OffspringSpec(gamma=np.array([float(gamma)]),
                        tables=(((0.5, ()), (0.5, (0, 0))),))
    return build_model(f"binary(gamma={gamma:g})", space, motion, off)


def two_type_model() -> ModelSpec:
    """Two states with motion and fully non-local litters.

    Parameters are exact rationals chosen so that phi = (3/2, 3/4),
    phi_tilde = (1/3, 2/3) solve the criticality equations in closed form;
    the offspring means differ from one, which separates the pair-moment
    and variance functionals and makes this the stress-test model.
    """
    space = StateSpace("finite", 2)
    motion = MotionSpec(rates=np.array([[0.0, 0.5], [0.5, 0.0]]),
                        kill=np.zeros(2))
    tables = (
        ((1.0 / 6.0, ()), (5.0 / 6.0, (1, 1, 1))),
        ((7.0 / 8.0, ()), (1.0 / 8.0, (0, 0))),
    )
    off = OffspringSpec(gamma=np.array([1.0, 1.0]), tables=tables)
    return build_model("two_type", space, motion, off)


def killed_model() -> ModelSpec:
    """Single state with soft killing balanced by occasional triple litters."""
    space = StateSpace("finite", 1)
    motion = MotionSpec(rates=np.zeros((1, 1)), kill=np.array([0.5]))
    off = OffspringSpec(gamma=np.array([1.0]),
                        tables=(((0.5, ()), (0.5, (0, 0, 0))),))
    return build_model("killed", space, motion, off)


def torus_model(grid: int = 16, hop_rate: float = 0.5,
                gamma: float = 1.0) -> ModelSpec:
    """Nearest-neighbour walk on a discretized circle with non-local splitting.

    A branching particle at site x is replaced (with probability 1/2) by one
    child at each neighbouring site, so the offspring displace mass without
    changing the flat harmonic weight.
    """
    if grid < 3:
        raise ModelError("torus grid needs at least 3 sites")
    space = StateSpace("torus", grid)
    q = np.zeros((grid, grid))
    for x in range(grid):
        q[x, (x + 1) % grid] = hop_rate
        q[x, (x - 1) % grid] = hop_rate
    motion = MotionSpec(rates=q, kill=np.zeros(grid))
    tables = tuple(
        ((0.5, ()), (0.5, ((x - 1) % grid, (x + 1) % grid)))
        for x in range(grid)
    )
    off = OffspringSpec(gamma=np.full(grid, float(gamma)), tables=tables)
    return build_model(f"torus(grid={grid})", space, motion, off)


_BUILTIN = {
    "binary": lambda **kw: binary_model(gamma=kw.get("gamma", 1.0)),
    "two_type": lambda **kw: two_type_model(),
    "killed": lambda **kw: killed_model(),
    "torus": lambda **kw: torus_model(grid=int(kw.get("grid", 16)),
                                      gamma=kw.get("gamma", 1.0)),
}


def builtin_model(name: str, **kwargs) -> ModelSpec:
    if name not in _BUILTIN:
        raise ModelError(
            f"unknown built-in model {name!r}; available: {sorted(_BUILTIN)}"
        )
    return _BUILTIN[name](**kwargs)


# ---------------------------------------------------------------------------
# JSON model files
# ---------------------------------------------------------------------------

def model_to_json(model: ModelSpec) -> dict:
    return {
        "name": model.name,
        "states": {"kind": model.space.kind, "size": model.space.size},
        "motion": {
            "rates": model.motion.rates.tolist(),
            "kill": model.motion.kill.tolist(),
        },
        "gamma": model.offspring.gamma.tolist(),
        "offspring": [
            [{"p": p, "children": list(children)} for p, children in table]
            for table in model.offspring.tables
        ],
    }


def model_from_json(doc: dict) -> ModelSpec:
    try:
        name = doc.get("name", "unnamed")
        st = doc["states"]
        space = StateSpace(st["kind"], int(st["size"]))
        motion = MotionSpec(
            rates=np.asarray(doc["motion"]["rates"], dtype=float),
            kill=np.asarray(doc["motion"].get("kill", np.zeros(space.size)),
                            dtype=float),
        )
        tables = tuple(
            tuple((float(e["p"]), tuple(int(c) for c in e["children"]))
                  for e in table)
            for table in doc["offspring"]
        )
        off = OffspringSpec(gamma=np.asarray(doc["gamma"], dtype=float),
                            tables=tables)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"malformed model document: {exc}") from exc
    return build_model(name, space, motion, off)


def load_model_file(path: str) -> ModelSpec:
    with open(path) as fh:
        return model_from_json(json.load(fh))
