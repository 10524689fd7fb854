"""Bell inequality machinery for two parties.

Covers exact LHV bounds by deterministic enumeration, inequality values
on experimental counts with Poissonian error propagation, gap-ratio
maximization over the coefficient box, outcome-0 canonical forms and
detection-efficiency thresholds, plus a KL fit onto the no-signaling
polytope for raw (possibly signaling) frequency tables.

Conventions: settings x, y and outcomes a, b are 0-based; marginal
probabilities are always the average over the other party's settings,
p_A(a|x) = m^-1 sum_y sum_b p(ab|xy).  An inequality value is

    Q = sum s[x,y,a,b] p(ab|xy) + sum sA[x,a] p_A(a|x) + sum sB[y,b] p_B(b|y).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import (
    InvalidInput,
    NotViolatedAtAnyEfficiency,
    TooLargeScenario,
    UnsupportedOutcomes,
)
from .mathcore import MeasurementSet, QuantumState, as_rng, kron

ENUMERATION_GUARD = 10**8
OPTIMIZER_STRATEGY_GUARD = 2 * 10**5  # dense strategy matrix rows the optimizer tolerates


@dataclass(frozen=True)
class BellScenario:
    """Two parties, m settings and d outcomes per party."""

    settings: int
    outcomes: int

    def __post_init__(self):
        m, d = int(self.settings), int(self.outcomes)
        if m < 1 or d < 2:
            raise InvalidInput("need settings >= 1 and outcomes >= 2")
        object.__setattr__(self, "settings", m)
        object.__setattr__(self, "outcomes", d)

    @property
    def strategy_count(self) -> int:
        return self.outcomes ** (2 * self.settings)


def _coerce_table(arr, m: int, d: int, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.shape != (m, m, d, d):
        raise InvalidInput(f"{name} must have shape (m, m, d, d) = {(m, m, d, d)}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class BellInequality:
    """Coefficients of a linear Bell functional plus an optional known bound.

    joint[x, y, a, b] weights p(ab|xy); marg_a[x, a] and marg_b[y, b]
    weight the averaged marginals.  The gap optimizer confines its
    search to coefficients in [-1, 1]; constructed inequalities (e.g.
    the tilted family) may legitimately live outside that box, so the
    constructor only checks shapes.
    """

    joint: np.ndarray
    marg_a: np.ndarray
    marg_b: np.ndarray
    scenario: BellScenario
    bound: float | None = None

    def __post_init__(self):
        sc = self.scenario
        m, d = sc.settings, sc.outcomes
        joint = _coerce_table(self.joint, m, d, "joint")
        ma = np.asarray(self.marg_a, dtype=float)
        mb = np.asarray(self.marg_b, dtype=float)
        if ma.shape != (m, d) or mb.shape != (m, d):
            raise InvalidInput("marginal coefficient arrays must have shape (m, d)")
        if not (np.all(np.isfinite(ma)) and np.all(np.isfinite(mb))):
            raise InvalidInput("marginal coefficients contain non-finite entries")
        object.__setattr__(self, "joint", joint)
        object.__setattr__(self, "marg_a", ma)
        object.__setattr__(self, "marg_b", mb)
        if self.bound is not None:
            object.__setattr__(self, "bound", float(self.bound))

    @classmethod
    def zero(cls, scenario: BellScenario) -> "BellInequality":
        m, d = scenario.settings, scenario.outcomes
        return cls(np.zeros((m, m, d, d)), np.zeros((m, d)), np.zeros((m, d)), scenario)


@dataclass(frozen=True)
class BehaviorTable:
    """Joint conditional probabilities p[x, y, a, b], normalized per setting."""

    table: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.table, dtype=float)
        if arr.ndim != 4 or arr.shape[0] != arr.shape[1] or arr.shape[2] != arr.shape[3]:
            raise InvalidInput("behavior must have shape (m, m, d, d)")
        if np.any(arr < -1e-12) or np.any(arr > 1 + 1e-12):
            raise InvalidInput("behavior entries must lie in [0, 1]")
        sums = arr.sum(axis=(2, 3))
        if np.max(np.abs(sums - 1.0)) > 1e-9:
            raise InvalidInput("behavior not normalized per setting within 1e-9")
        object.__setattr__(self, "table", np.clip(arr, 0.0, 1.0))

    @property
    def settings(self) -> int:
        return self.table.shape[0]

    @property
    def outcomes(self) -> int:
        return self.table.shape[2]

    def marginal_a(self) -> np.ndarray:
        """p_A(a|x), averaged over y."""
        return self.table.sum(axis=3).mean(axis=1)

    def marginal_b(self) -> np.ndarray:
        """p_B(b|y), averaged over x."""
        return self.table.sum(axis=2).mean(axis=0)

    def signaling_residual(self) -> float:
        """Largest violation of the no-signaling equalities."""
        pa = self.table.sum(axis=3)  # x, y, a
        pb = self.table.sum(axis=2)  # x, y, b
        ra = np.max(np.abs(pa - pa.mean(axis=1, keepdims=True)))
        rb = np.max(np.abs(pb - pb.mean(axis=0, keepdims=True)))
        return float(max(ra, rb))


@dataclass(frozen=True)
class CountsTable:
    """Coincidence counts c[x, y, a, b] with a positive total per setting."""

    counts: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.counts, dtype=float)
        if arr.ndim != 4 or arr.shape[0] != arr.shape[1] or arr.shape[2] != arr.shape[3]:
            raise InvalidInput("counts must have shape (m, m, d, d)")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise InvalidInput("counts must be finite and nonnegative")
        if np.any(arr.sum(axis=(2, 3)) <= 0):
            raise InvalidInput("every setting pair needs a positive total count")
        object.__setattr__(self, "counts", arr)

    @property
    def settings(self) -> int:
        return self.counts.shape[0]

    @property
    def outcomes(self) -> int:
        return self.counts.shape[2]

    @property
    def scenario(self) -> BellScenario:
        return BellScenario(self.settings, self.outcomes)

    def behavior(self) -> BehaviorTable:
        totals = self.counts.sum(axis=(2, 3), keepdims=True)
        return BehaviorTable(self.counts / totals)

    @classmethod
    def from_behavior(cls, behavior: BehaviorTable, per_setting: float) -> "CountsTable":
        """Exact-statistics counts: probabilities scaled by a common total."""
        if per_setting <= 0:
            raise InvalidInput("per_setting total must be positive")
        return cls(behavior.table * float(per_setting))

    @classmethod
    def sample(cls, behavior: BehaviorTable, mean_per_setting: float, rng) -> "CountsTable":
        """Poisson counts with mean mean_per_setting * p(ab|xy)."""
        rng = as_rng(rng)
        lam = np.clip(behavior.table, 0.0, None) * float(mean_per_setting)
        counts = rng.poisson(lam).astype(float)
        # a fully dark setting breaks normalization downstream; give it one event
        for x, y in np.ndindex(counts.shape[0], counts.shape[1]):
            if counts[x, y].sum() == 0:
                counts[x, y, 0, 0] = 1.0
        return cls(counts)


def _stack_coefficients(ineq: BellInequality) -> np.ndarray:
    return np.concatenate([ineq.joint.ravel(), ineq.marg_a.ravel(), ineq.marg_b.ravel()])


def _unstack_coefficients(s: np.ndarray, scenario: BellScenario) -> BellInequality:
    m, d = scenario.settings, scenario.outcomes
    nj = m * m * d * d
    nm = m * d
    joint = s[:nj].reshape(m, m, d, d)
    marg_a = s[nj:nj + nm].reshape(m, d)
    marg_b = s[nj + nm:].reshape(m, d)
    return BellInequality(joint, marg_a, marg_b, scenario)


def lhv_bound(ineq: BellInequality) -> float:
    """Exact maximum of the functional over local deterministic strategies.

    For a fixed assignment x -> a(x) the best responses b(y) decouple
    per setting, so only the d^m Alice assignments are enumerated.
    """
    sc = ineq.scenario
    m, d = sc.settings, sc.outcomes
    if sc.strategy_count > ENUMERATION_GUARD:
        raise TooLargeScenario(f"{sc.strategy_count} deterministic strategies exceed guard")
    best = -math.inf
    for a_assign in np.ndindex(*(d,) * m):
        # contribution of p(ab|xy) terms once Alice answers a(x): shape (m, d) over (y, b)
        nb = ineq.joint[np.arange(m), :, a_assign, :].sum(axis=0) + ineq.marg_b
        value = float(ineq.marg_a[np.arange(m), a_assign].sum() + nb.max(axis=1).sum())
        if value > best:
            best = value
    return best


def _lhv_value_and_strategy(svec: np.ndarray, scenario: BellScenario) -> tuple[float, np.ndarray]:
    """Max over deterministic strategies and the feature vector of an argmax."""
    ineq = _unstack_coefficients(svec, scenario)
    m, d = scenario.settings, scenario.outcomes
    best, best_pair = -math.inf, None
    for a_assign in np.ndindex(*(d,) * m):
        nb = ineq.joint[np.arange(m), :, a_assign, :].sum(axis=0) + ineq.marg_b
        b_assign = nb.argmax(axis=1)
        value = float(ineq.marg_a[np.arange(m), a_assign].sum() + nb[np.arange(m), b_assign].sum())
        if value > best:
            best, best_pair = value, (np.asarray(a_assign), b_assign)
    a_assign, b_assign = best_pair
    joint = np.zeros((m, m, d, d))
    ma = np.zeros((m, d))
    mb = np.zeros((m, d))
    for x in range(m):
        ma[x, a_assign[x]] = 1.0
        mb[x, b_assign[x]] = 1.0
        for y in range(m):
            joint[x, y, a_assign[x], b_assign[y]] = 1.0
    feat = np.concatenate([joint.ravel(), ma.ravel(), mb.ravel()])
    return best, feat


def _cell_weights(ineq: BellInequality) -> np.ndarray:
    """w[x,y,a,b] = s[x,y,a,b] + (sA[x,a] + sB[y,b]) / m."""
    m = ineq.scenario.settings
    return (
        ineq.joint
        + ineq.marg_a[:, None, :, None] / m
        + ineq.marg_b[None, :, None, :] / m
    )


def quantum_value(ineq: BellInequality, counts: CountsTable) -> tuple[float, float]:
    """Inequality value on measured counts and its Poissonian error bar.

    Q reads each setting's probabilities off the counts; the error
    assumes independent Poisson statistics per coincidence cell and
    propagates through the normalization, so cells only compete with
    their own setting's total.
    """
    if counts.scenario != ineq.scenario:
        raise InvalidInput("counts and inequality describe different scenarios")
    c = counts.counts
    totals = c.sum(axis=(2, 3), keepdims=True)
    p = c / totals
    w = _cell_weights(ineq)
    q = float((w * p).sum())
    setting_avg = (w * p).sum(axis=(2, 3), keepdims=True)
    partials = (w - setting_avg) / totals
    dq = float(np.sqrt((partials**2 * c).sum()))
    return q, dq


def behavior_value(ineq: BellInequality, behavior: BehaviorTable) -> float:
    """Inequality value on exact probabilities (no error bar)."""
    return float((_cell_weights(ineq) * behavior.table).sum())


def behavior_from_state(
    state: QuantumState,
    settings_a: Sequence[MeasurementSet],
    settings_b: Sequence[MeasurementSet],
) -> BehaviorTable:
    """Born probabilities p(ab|xy) = Tr[rho (E_a^x o F_b^y)]."""
    if len(settings_a) != len(settings_b) or not settings_a:
        raise InvalidInput("need equally many settings per party")
    m = len(settings_a)
    d = len(settings_a[0])
    da = settings_a[0].dim
    db = settings_b[0].dim
    if da * db != state.dim:
        raise InvalidInput("state dimension does not factor into the settings' dims")
    rho = state.matrix
    table = np.empty((m, m, d, d))
    for x, ax in enumerate(settings_a):
        for y, by in enumerate(settings_b):
            if len(ax) != d or len(by) != d:
                raise InvalidInput("all settings need the same outcome count")
            for a in range(d):
                for b in range(d):
                    eff = kron(ax.effects[a], by.effects[b])
                    table[x, y, a, b] = float(np.trace(rho @ eff).real)
    return BehaviorTable(np.clip(table, 0.0, 1.0))


class GapResult(NamedTuple):
    inequality: BellInequality
    ratio: float
    quantum: float
    error: float
    classical: float


def _gap_pieces(counts: CountsTable):
    """Precompute the linear/quadratic data behind Q(s), dQ(s) on fixed counts."""
    sc = counts.scenario
    m, d = sc.settings, sc.outcomes
    c = counts.counts
    totals = c.sum(axis=(2, 3), keepdims=True)
    p = c / totals
    nj, nm = m * m * d * d, m * d

    # Q(s) = q_vec . s
    q_vec = np.concatenate([
        p.ravel(),
        (p.sum(axis=3).mean(axis=1)).ravel(),  # averaged Alice marginals
        (p.sum(axis=2).mean(axis=0)).ravel(),
    ])

    # dQ(s) = |G s|; one row per coincidence cell, scaled by sqrt(count)
    n = nj + 2 * nm
    cell_jac = np.zeros((m, m, d, d, n))
    for x, y, a, b in np.ndindex(m, m, d, d):
        row = np.zeros(n)
        row[np.ravel_multi_index((x, y, a, b), (m, m, d, d))] = 1.0
        row[nj + x * d + a] = 1.0 / m
        row[nj + nm + y * d + b] = 1.0 / m
        cell_jac[x, y, a, b] = row
    setting_mean = (cell_jac * p[..., None]).sum(axis=(2, 3), keepdims=True)
    g = (cell_jac - setting_mean) / totals[..., None]
    g = g * np.sqrt(c)[..., None]
    return q_vec, g.reshape(-1, n)


def _strategy_matrix(scenario: BellScenario) -> np.ndarray:
    """Feature vectors of every deterministic strategy, one per row."""
    m, d = scenario.settings, scenario.outcomes
    if scenario.strategy_count > OPTIMIZER_STRATEGY_GUARD:
        raise TooLargeScenario(
            f"{scenario.strategy_count} strategies exceed the optimizer guard"
        )
    rows = []
    for a_assign in np.ndindex(*(d,) * m):
        for b_assign in np.ndindex(*(d,) * m):
            joint = np.zeros((m, m, d, d))
            ma = np.zeros((m, d))
            mb = np.zeros((m, d))
            for x in range(m):
                ma[x, a_assign[x]] = 1.0
                mb[x, b_assign[x]] = 1.0
                for y in range(m):
                    joint[x, y, a_assign[x], b_assign[y]] = 1.0
            rows.append(np.concatenate([joint.ravel(), ma.ravel(), mb.ravel()]))
    return np.asarray(rows)


def maximize_gap(counts: CountsTable, trials: int = 20, rng=None) -> GapResult:
    """Search the coefficient box [-1, 1] for the largest certification ratio.

    The objective is R(s) = (Q - dQ + dm) / (C + dm) with dm = d * m and
    C the LHV value of s.  C is a max over finitely many linear
    functions, so it enters through an epigraph variable t >= v_k . s
    (one constraint per deterministic strategy); the ratio is smooth in
    (s, t) and SLSQP handles it directly.  Feasibility also demands
    C >= 0: the ratio's certification reading rescales inequalities to
    a positive LHV value, and without the sign constraint the literal
    objective diverges toward C = -dm with degenerate output.  Restarts
    follow the averaging schedule: the next start is the midpoint of
    the previous start and its solution, best feasible candidate wins.
    On exact local data Q(s) <= C(s) for every s, so the result never
    exceeds 1; genuinely nonlocal data admits R > 1.
    """
    trials = int(trials)
    if trials < 1:
        raise InvalidInput("need at least one restart")
    sc = counts.scenario
    dm = float(sc.outcomes * sc.settings)
    q_vec, g = _gap_pieces(counts)
    n = q_vec.size
    strategies = _strategy_matrix(sc)
    # rows of A z >= 0 encode t - v_k . s >= 0 for z = (s, t)
    a_mat = np.hstack([-strategies, np.ones((strategies.shape[0], 1))])
    rng = as_rng(rng)

    def neg_objective(z):
        s, t = z[:n], z[n]
        q = float(q_vec @ s)
        gs = g @ s
        dq = float(np.linalg.norm(gs))
        grad_dq = (g.T @ gs) / dq if dq > 1e-30 else np.zeros(n)
        den = t + dm
        num = q - dq + dm
        grad = np.concatenate([(q_vec - grad_dq) / den, [-num / den**2]])
        return -num / den, -grad

    constraints = [{"type": "ineq", "fun": lambda z: a_mat @ z, "jac": lambda z: a_mat}]
    bounds = [(-1.0, 1.0)] * n + [(0.0, float(n))]

    best = (-math.inf, None)
    start = rng.uniform(-1.0, 1.0, size=n)
    for _ in range(trials):
        t0 = max(float(np.max(strategies @ start)), 0.0)
        res = minimize(
            neg_objective,
            np.concatenate([start, [t0]]),
            jac=True,
            method="SLSQP",
            bounds=bounds,
            constraints=constraints,
            options={"maxiter": 400, "ftol": 1e-12},
        )
        sol = np.clip(res.x[:n], -1.0, 1.0)
        q = float(q_vec @ sol)
        dq = float(np.linalg.norm(g @ sol))
        c, _ = _lhv_value_and_strategy(sol, sc)
        if c >= -1e-9:  # feasible candidates only
            value = (q - dq + dm) / (c + dm)
            if value > best[0]:
                best = (value, sol)
        start = 0.5 * (start + sol)
    if best[1] is None:
        # fall back to the zero inequality: R = dm / dm = 1
        best = (1.0, np.zeros(n))
    ratio, sol = best
    ineq = _unstack_coefficients(sol, sc)
    c_final = lhv_bound(ineq)
    ineq = BellInequality(ineq.joint, ineq.marg_a, ineq.marg_b, sc, bound=c_final)
    q, dq = quantum_value(ineq, counts)
    return GapResult(ineq, float(ratio), q, dq, c_final)


class TiltedFamily(NamedTuple):
    inequality: BellInequality
    lhv: float
    quantum: float
    state: QuantumState
    settings_a: list[MeasurementSet]
    settings_b: list[MeasurementSet]


def _qubit_basis(direction: np.ndarray) -> MeasurementSet:
    """Two-outcome PVM of (I +/- n.sigma)/2; outcome 0 is the + eigenvector."""
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]])
    sz = np.diag([1.0, -1.0]).astype(complex)
    obs = direction[0] * sx + direction[1] * sy + direction[2] * sz
    eye = np.eye(2)
    return MeasurementSet([(eye + obs) / 2, (eye - obs) / 2])


def tilted_inequality(alpha: float) -> TiltedFamily:
    """The one-parameter tilted family with its optimal realization.

    alpha [p_A(0|0) - p_A(1|0)] + sum (-1)^(xy) [p(a=b|xy) - p(a!=b|xy)]
    has LHV bound alpha + 2 and quantum maximum sqrt(8 + 2 alpha^2),
    reached by a partially entangled pure state; alpha = 0 is CHSH,
    alpha = 2 is classical.
    """
    alpha = float(alpha)
    if not 0.0 <= alpha <= 2.0:
        raise InvalidInput("alpha must lie in [0, 2]")
    sc = BellScenario(2, 2)
    joint = np.zeros((2, 2, 2, 2))
    for x, y, a, b in np.ndindex(2, 2, 2, 2):
        joint[x, y, a, b] = (-1.0) ** (x * y) * (1.0 if a == b else -1.0)
    marg_a = np.zeros((2, 2))
    marg_a[0, 0] = alpha
    marg_a[0, 1] = -alpha
    ineq = BellInequality(joint, marg_a, np.zeros((2, 2)), sc, bound=alpha + 2.0)

    ratio = math.sqrt((1 - (alpha / 2) ** 2) / (1 + (alpha / 2) ** 2))
    theta = 0.5 * math.asin(ratio)
    mu = math.atan(ratio)
    psi = np.zeros(4, dtype=complex)
    psi[0], psi[3] = math.cos(theta), math.sin(theta)
    state = QuantumState(np.outer(psi, psi.conj()), (2, 2))
    settings_a = [_qubit_basis(np.array([0.0, 0.0, 1.0])), _qubit_basis(np.array([1.0, 0.0, 0.0]))]
    settings_b = [
        _qubit_basis(np.array([math.sin(mu), 0.0, math.cos(mu)])),
        _qubit_basis(np.array([-math.sin(mu), 0.0, math.cos(mu)])),
    ]
    return TiltedFamily(ineq, alpha + 2.0, math.sqrt(8 + 2 * alpha**2), state, settings_a, settings_b)


def canonical_form(ineq: BellInequality, scale: float = 1.0) -> BellInequality:
    """Rewrite a two-outcome inequality in terms of outcome-0 probabilities.

    Uses p(01|xy) = p_A(0|x) - p(00|xy) and friends to eliminate every
    outcome-1 probability; the leftover constant is absorbed into the
    bound, so original and canonical values agree (up to the overall
    scale) on every no-signaling behavior.  The bound transforms to
    scale * (C - const); it is computed exactly if the input carries
    none.
    """
    if ineq.scenario.outcomes != 2:
        raise UnsupportedOutcomes("canonical form needs two outcomes per party")
    m = ineq.scenario.settings
    s = ineq.joint
    j00 = s[:, :, 0, 0] - s[:, :, 0, 1] - s[:, :, 1, 0] + s[:, :, 1, 1]
    a0 = ineq.marg_a[:, 0] - ineq.marg_a[:, 1] + (s[:, :, 0, 1] - s[:, :, 1, 1]).sum(axis=1)
    b0 = ineq.marg_b[:, 0] - ineq.marg_b[:, 1] + (s[:, :, 1, 0] - s[:, :, 1, 1]).sum(axis=0)
    const = float(s[:, :, 1, 1].sum() + ineq.marg_a[:, 1].sum() + ineq.marg_b[:, 1].sum())
    bound = ineq.bound if ineq.bound is not None else lhv_bound(ineq)

    joint = np.zeros((m, m, 2, 2))
    joint[:, :, 0, 0] = scale * j00
    marg_a = np.zeros((m, 2))
    marg_a[:, 0] = scale * a0
    marg_b = np.zeros((m, 2))
    marg_b[:, 0] = scale * b0
    return BellInequality(joint, marg_a, marg_b, ineq.scenario, bound=scale * (bound - const))


def efficiency_threshold(
    ineq: BellInequality,
    behavior: BehaviorTable,
    mode: str = "symmetric",
) -> float:
    """Minimum detector efficiency at which the data still violates.

    The inequality must be in canonical (outcome-0) form; lost events
    count as outcome 1 there, so finite efficiency simply rescales
    p(00|xy) by etaA etaB and the marginals by their party's eta.
    Solves etaA etaB J + etaA MA + etaB MB = C for eta in (0, 1], with
    etaA = etaB (symmetric) or etaB = 1 (asymmetricB1).
    """
    if ineq.scenario.outcomes != 2:
        raise UnsupportedOutcomes("efficiency analysis needs two outcomes")
    nontrivial = (
        np.any(ineq.joint[:, :, 0, 1:]) or np.any(ineq.joint[:, :, 1:, :])
        or np.any(ineq.marg_a[:, 1:]) or np.any(ineq.marg_b[:, 1:])
    )
    if nontrivial:
        raise InvalidInput("inequality is not in canonical outcome-0 form")
    if behavior.settings != ineq.scenario.settings or behavior.outcomes != 2:
        raise InvalidInput("behavior does not match the inequality's scenario")

    j = float((ineq.joint[:, :, 0, 0] * behavior.table[:, :, 0, 0]).sum())
    ma = float((ineq.marg_a[:, 0] * behavior.marginal_a()[:, 0]).sum())
    mb = float((ineq.marg_b[:, 0] * behavior.marginal_b()[:, 0]).sum())
    c = ineq.bound if ineq.bound is not None else lhv_bound(ineq)

    eps = 1e-9
    if mode == "symmetric":
        roots = [r.real for r in np.roots([j, ma + mb, -c]) if abs(r.imag) < 1e-12]
    elif mode == "asymmetricB1":
        denom = j + ma
        roots = [] if abs(denom) < 1e-15 else [(c - mb) / denom]
    else:
        raise InvalidInput(f"unknown mode {mode!r}")
    feasible = [r for r in roots if eps < r <= 1.0 + 1e-12]
    if not feasible:
        raise NotViolatedAtAnyEfficiency(f"no efficiency in (0, 1] solves the {mode} threshold")
    return float(min(min(feasible), 1.0))


def kl_divergence(freq: BehaviorTable, model: BehaviorTable, weights=None) -> float:
    """Weighted KL divergence (bits) between two behavior tables.

    Model cells are floored at 1e-12; zero frequency cells contribute 0.
    """
    f = freq.table
    p = np.clip(model.table, 1e-12, None)
    m = freq.settings
    if weights is None:
        weights = np.full((m, m), 1.0 / (m * m))
    weights = np.asarray(weights, dtype=float)
    mask = f > 0
    terms = np.zeros_like(f)
    terms[mask] = f[mask] * np.log2(f[mask] / p[mask])
    return float((weights[:, :, None, None] * terms).sum())


class _NoSignalingProjector:
    """Dykstra projection onto {per-setting normalization, NS equalities, p >= floor}."""

    def __init__(self, m: int, d: int, floor: float = 1e-12):
        self.shape = (m, m, d, d)
        self.floor = floor
        n = m * m * d * d
        rows = []
        rhs = []

        def cell(x, y, a, b):
            return np.ravel_multi_index((x, y, a, b), self.shape)

        for x in range(m):
            for y in range(m):
                row = np.zeros(n)
                for a in range(d):
                    for b in range(d):
                        row[cell(x, y, a, b)] = 1.0
                rows.append(row)
                rhs.append(1.0)
        for x in range(m):
            for a in range(d):
                for y in range(m - 1):
                    row = np.zeros(n)
                    for b in range(d):
                        row[cell(x, y, a, b)] = 1.0
                        row[cell(x, y + 1, a, b)] = -1.0
                    rows.append(row)
                    rhs.append(0.0)
        for y in range(m):
            for b in range(d):
                for x in range(m - 1):
                    row = np.zeros(n)
                    for a in range(d):
                        row[cell(x, y, a, b)] = 1.0
                        row[cell(x + 1, y, a, b)] = -1.0
                    rows.append(row)
                    rhs.append(0.0)
        self.a = np.asarray(rows)
        self.rhs = np.asarray(rhs)
        self.solve = np.linalg.pinv(self.a @ self.a.T)

    def affine(self, x: np.ndarray) -> np.ndarray:
        return x - self.a.T @ (self.solve @ (self.a @ x - self.rhs))

    def __call__(self, table: np.ndarray, iters: int = 600) -> np.ndarray:
        x = table.ravel().astype(float)
        p_inc = np.zeros_like(x)
        q_inc = np.zeros_like(x)
        for _ in range(iters):
            y = self.affine(x + p_inc)
            p_inc = x + p_inc - y
            z = np.clip(y + q_inc, self.floor, None)
            q_inc = y + q_inc - z
            if np.max(np.abs(z - x)) < 1e-14:
                x = z
                break
            x = z
        return x.reshape(self.shape)


def no_signaling_fit(
    freq: BehaviorTable,
    weights=None,
    max_iters: int = 10_000,
    tol: float = 1e-12,
) -> BehaviorTable:
    """Closest no-signaling behavior to raw frequencies, in weighted KL.

    Projected gradient descent with step halving and at most max_iters
    accepted steps; the returned table satisfies the no-signaling
    equalities to the projector's accuracy and never fits worse than
    the projection of the input itself.
    """
    m, d = freq.settings, freq.outcomes
    if weights is None:
        weights = np.full((m, m), 1.0 / (m * m))
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (m, m) or np.any(weights < 0):
        raise InvalidInput("weights must be a nonnegative (m, m) array")
    project = _NoSignalingProjector(m, d)
    f = freq.table
    x = project(f)

    def kl_of(arr: np.ndarray) -> float:
        p = np.clip(arr, 1e-12, None)
        mask = f > 0
        t = np.zeros_like(f)
        t[mask] = f[mask] * np.log2(f[mask] / p[mask])
        return float((weights[:, :, None, None] * t).sum())

    current = kl_of(x)
    step = 1.0
    for _ in range(int(max_iters)):
        grad = -weights[:, :, None, None] * f / np.clip(x, 1e-12, None) / math.log(2)
        moved = False
        while step > 1e-14:
            cand = project(x - step * grad)
            val = kl_of(cand)
            if val < current - 1e-15:
                x, current = cand, val
                moved = True
                step *= 1.5
                break
            step *= 0.5
        if not moved or step <= 1e-14:
            break
    table = np.clip(x, 0.0, None)
    table /= table.sum(axis=(2, 3), keepdims=True)
    return BehaviorTable(table)


def format_inequality(ineq: BellInequality, digits: int = 4) -> str:
    """Human-readable signed-coefficient form, joints then marginals."""
    parts = []

    def push(coeff, label):
        if abs(coeff) < 10 ** (-digits) / 2:
            return
        sign = "-" if coeff < 0 else "+"
        parts.append(f"{sign} {abs(coeff):.{digits}f} {label}")

    m, d = ineq.scenario.settings, ineq.scenario.outcomes
    for x, y in np.ndindex(m, m):
        for a, b in np.ndindex(d, d):
            push(ineq.joint[x, y, a, b], f"p({a}{b}|{x}{y})")
    for x in range(m):
        for a in range(d):
            push(ineq.marg_a[x, a], f"pA({a}|{x})")
    for y in range(m):
        for b in range(d):
            push(ineq.marg_b[y, b], f"pB({b}|{y})")
    if not parts:
        parts = ["+ 0"]
    text = " ".join(parts).lstrip("+ ")
    if ineq.bound is not None:
        text += f" <= {ineq.bound:.{digits}f}"
    return text


def chsh_inequality() -> BellInequality:
    """CHSH in the outcome-0 probability form with LHV bound 0."""
    sc = BellScenario(2, 2)
    joint = np.zeros((2, 2, 2, 2))
    joint[0, 0, 0, 0] = 1.0
    joint[0, 1, 0, 0] = 1.0
    joint[1, 0, 0, 0] = 1.0
    joint[1, 1, 0, 0] = -1.0
    marg_a = np.zeros((2, 2))
    marg_a[0, 0] = -1.0
    marg_b = np.zeros((2, 2))
    marg_b[0, 0] = -1.0
    return BellInequality(joint, marg_a, marg_b, sc, bound=0.0)


def _keyed_table_to_array(entries: dict, m: int, d: int, what: str) -> np.ndarray:
    """Decode the {"x,y": [[...d x d...]]} file layout into an (m,m,d,d) array."""
    out = np.zeros((m, m, d, d))
    seen = set()
    for key, block in entries.items():
        try:
            x, y = (int(t) for t in str(key).split(","))
        except ValueError:
            raise InvalidInput(f"{what} key {key!r} is not of the form 'x,y'") from None
        if not (0 <= x < m and 0 <= y < m):
            raise InvalidInput(f"{what} key {key!r} outside {m} settings")
        arr = np.asarray(block, dtype=float)
        if arr.shape != (d, d):
            raise InvalidInput(f"{what} block {key!r} has shape {arr.shape}, expected ({d}, {d})")
        out[x, y] = arr
        seen.add((x, y))
    if len(seen) != m * m:
        raise InvalidInput(f"{what} must cover all {m*m} setting pairs")
    return out


def _array_to_keyed_table(arr: np.ndarray) -> dict:
    m = arr.shape[0]
    return {
        f"{x},{y}": [[float(v) for v in row] for row in arr[x, y]]
        for x in range(m)
        for y in range(m)
    }


def counts_from_dict(obj: dict) -> CountsTable:
    """Parse {"m", "d", "counts": {"x,y": [[...]], ...}}."""
    try:
        m, d = int(obj["m"]), int(obj["d"])
        entries = obj["counts"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInput(f"malformed counts file: {exc}") from exc
    return CountsTable(_keyed_table_to_array(entries, m, d, "counts"))


def counts_to_dict(counts: CountsTable) -> dict:
    return {
        "m": counts.settings,
        "d": counts.outcomes,
        "counts": _array_to_keyed_table(counts.counts),
    }


def behavior_from_dict(obj: dict) -> BehaviorTable:
    """Parse {"m", "d", "behavior": {"x,y": [[...]], ...}}."""
    try:
        m, d = int(obj["m"]), int(obj["d"])
        entries = obj["behavior"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInput(f"malformed behavior file: {exc}") from exc
    return BehaviorTable(_keyed_table_to_array(entries, m, d, "behavior"))


def behavior_to_dict(behavior: BehaviorTable) -> dict:
    return {
        "m": behavior.table.shape[0],
        "d": behavior.table.shape[2],
        "behavior": _array_to_keyed_table(behavior.table),
    }


def inequality_from_dict(obj: dict) -> BellInequality:
    """Parse {"m", "d", "joint", "marg_a", "marg_b", "bound"} coefficient arrays."""
    try:
        m, d = int(obj["m"]), int(obj["d"])
        joint = np.asarray(obj["joint"], dtype=float)
        marg_a = np.asarray(obj["marg_a"], dtype=float)
        marg_b = np.asarray(obj["marg_b"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInput(f"malformed inequality file: {exc}") from exc
    bound = obj.get("bound")
    return BellInequality(
        joint, marg_a, marg_b, BellScenario(m, d), None if bound is None else float(bound)
    )


def inequality_to_dict(ineq: BellInequality) -> dict:
    return {
        "m": ineq.scenario.settings,
        "d": ineq.scenario.outcomes,
        "joint": ineq.joint.tolist(),
        "marg_a": ineq.marg_a.tolist(),
        "marg_b": ineq.marg_b.tolist(),
        "bound": None if ineq.bound is None else float(ineq.bound),
    }
