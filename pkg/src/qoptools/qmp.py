"""Marginal-problem solver: imposing prescribed reductions and spectra.

A reduced state enters the global matrix through the trace-one embedding
sigma_J (x) I/d^{|Jc|}, and the basic substitution

    Q(rho) = rho - embed(Tr_{Jc} rho) + embed(sigma_J)

swaps the marginal on J for the prescribed one while keeping the trace
at one.  Q is affine and its output is Hermitian but not necessarily
positive, so compatibility questions become fixed-point questions: the
solver alternates one Q per prescribed subset with a spectral projection
(exact spectrum, or rank truncation) and watches how far the iterate
sits from both prescriptions at once.
"""
from __future__ import annotations

import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateIterate,
    InvalidInput,
    InvalidSubsystem,
    NotConverged,
)
from .mathcore import (
    QuantumState,
    as_rng,
    check_hermitian,
    eigh,
    hermitize,
    hs_distance,
    matrix_from_dict,
    matrix_to_dict,
    partial_trace,
    random_mixed_state,
    random_pure_state,
)

PSD_WITNESS_TOL = -1e-10


def _as_matrix(x) -> np.ndarray:
    return x.matrix if isinstance(x, QuantumState) else np.asarray(x, dtype=complex)


def _check_subset(subset, n_parties: int) -> tuple[int, ...]:
    sub = tuple(sorted(set(int(i) for i in subset)))
    if len(sub) != len(tuple(subset)):
        raise InvalidSubsystem(f"subset {subset} repeats a party")
    if not sub:
        raise InvalidSubsystem("subset is empty")
    if sub[0] < 0 or sub[-1] >= n_parties:
        raise InvalidSubsystem(f"subset {sub} out of range for {n_parties} parties")
    if len(sub) == n_parties:
        raise InvalidSubsystem("subset covers every party; nothing is left to embed into")
    return sub


def embed_with_mixed(op, subset, n_parties: int, local_dim: int) -> np.ndarray:
    """Tensor `op` on `subset` with the maximally mixed state elsewhere.

    The complement carries I/d^{|Jc|}, so a trace-one input stays trace
    one.  Factors are permuted back into natural party order, which is
    what lets non-contiguous subsets like {0, 2} work.
    """
    d = int(local_dim)
    sub = _check_subset(subset, n_parties)
    mat = _as_matrix(op)
    dk = d ** len(sub)
    if mat.shape != (dk, dk):
        raise InvalidInput(f"operator shape {mat.shape} does not match subset {sub} at d={d}")
    comp = [i for i in range(n_parties) if i not in sub]
    if comp:
        dc = d ** len(comp)
        full = np.kron(mat, np.eye(dc, dtype=complex) / dc)
    else:
        full = mat.astype(complex)
    order = list(sub) + comp
    if order == list(range(n_parties)):
        return full
    axes = [order.index(j) for j in range(n_parties)]
    tensor = full.reshape([d] * (2 * n_parties))
    tensor = tensor.transpose(axes + [a + n_parties for a in axes])
    return tensor.reshape(d**n_parties, d**n_parties)


def impose_marginal(rho, subset, sigma, local_dim: int) -> np.ndarray:
    """Replace the reduction of `rho` on `subset` by `sigma`.

    Output is Hermitian and trace one but can fail positivity: the
    diagonal two-qubit example with rho = diag(a,0,0,1-a) and a one-body
    target diag(g,1-g) picks up the eigenvalue (g-a)/2.  The reduction
    on any subset disjoint from `subset` is untouched.
    """
    d = int(local_dim)
    mat = _as_matrix(rho)
    dim = mat.shape[0]
    n_parties = int(round(math.log(dim, d))) if d > 1 else 0
    if d < 2 or d**n_parties != dim:
        raise InvalidInput(f"matrix of dim {dim} is not a {d}-level tensor power")
    sub = _check_subset(subset, n_parties)
    sig = _as_matrix(sigma)
    if sig.shape != (d ** len(sub),) * 2:
        raise InvalidInput(f"target shape {sig.shape} does not match subset {sub} at d={d}")
    reduced = partial_trace(mat, sub, dims=[d] * n_parties)
    out = mat.copy()
    out -= embed_with_mixed(reduced, sub, n_parties, d)
    out += embed_with_mixed(sig, sub, n_parties, d)
    return out


@dataclass(frozen=True)
class MarginalSpec:
    """A set of prescribed reductions of an N-party, d-level system."""

    n_parties: int
    local_dim: int
    targets: tuple = ()

    def __init__(self, n_parties: int, local_dim: int, targets):
        n = int(n_parties)
        d = int(local_dim)
        if n < 2:
            raise InvalidInput("need at least two parties")
        if d < 2:
            raise InvalidInput("local dimension must be at least 2")
        clean = []
        for subset, sigma in targets:
            sub = _check_subset(subset, n)
            if not isinstance(sigma, QuantumState):
                sigma = QuantumState(np.asarray(sigma, dtype=complex), (d,) * len(sub))
            if sigma.dim != d ** len(sub):
                raise InvalidInput(
                    f"target for subset {sub} has dim {sigma.dim}, expected {d**len(sub)}"
                )
            clean.append((sub, sigma))
        object.__setattr__(self, "n_parties", n)
        object.__setattr__(self, "local_dim", d)
        object.__setattr__(self, "targets", tuple(clean))

    @property
    def dim(self) -> int:
        return self.local_dim**self.n_parties

    def __len__(self) -> int:
        return len(self.targets)


def spec_from_generator(generator: QuantumState, subsets) -> MarginalSpec:
    """Spec whose targets are the reductions of an explicit global state.

    Existence of a compatible state is then guaranteed by construction,
    which is the standard way to set up solvable test problems.
    """
    dims = generator.dims
    d = dims[0]
    if any(x != d for x in dims):
        raise InvalidInput("generator must have uniform local dimensions")
    n = len(dims)
    targets = [(tuple(sub), partial_trace(generator, sub)) for sub in subsets]
    return MarginalSpec(n, d, targets)


def ame_spec(n_parties: int, local_dim: int) -> MarginalSpec:
    """All floor(N/2)-body reductions prescribed maximally mixed.

    A rank-one solution of this spec is an absolutely maximally
    entangled state; for some (N, d), e.g. N=4 d=2, none exists.
    """
    k = n_parties // 2
    d = int(local_dim)
    dk = d**k
    mixed = QuantumState(np.eye(dk, dtype=complex) / dk, (d,) * k)
    targets = [(sub, mixed) for sub in itertools.combinations(range(n_parties), k)]
    return MarginalSpec(n_parties, d, targets)


def impose_all(rho, spec: MarginalSpec) -> np.ndarray:
    """Apply one marginal substitution per target, in spec order.

    The substitutions commute, so the order is cosmetic; after the full
    sweep every prescribed reduction is recovered exactly whenever the
    targets are compatible with some global state.
    """
    mat = _as_matrix(rho)
    if mat.shape != (spec.dim, spec.dim):
        raise InvalidInput(f"matrix shape {mat.shape} does not match spec dim {spec.dim}")
    out = mat
    for subset, sigma in spec.targets:
        out = impose_marginal(out, subset, sigma, spec.local_dim)
    return out


@dataclass(frozen=True)
class SpectralConstraint:
    """Prescribed spectrum, or a rank cap, for the global state."""

    mode: str
    spectrum: np.ndarray | None = None
    rank: int | None = None

    def __post_init__(self):
        if self.mode not in ("spectra", "rank"):
            raise InvalidInput(f"unknown constraint mode {self.mode!r}")
        if self.mode == "spectra":
            lam = np.asarray(self.spectrum, dtype=float).ravel()
            if lam.size == 0:
                raise InvalidInput("empty spectrum")
            if np.any(np.diff(lam) > 1e-12):
                raise InvalidInput("spectrum must be sorted in descending order")
            if lam[-1] < -1e-12:
                raise InvalidInput("spectrum has a negative entry")
            s = float(lam.sum())
            if abs(s - 1.0) > 1e-9:
                raise InvalidInput(f"spectrum sums to {s}, expected 1")
            lam = np.clip(lam, 0.0, None)
            object.__setattr__(self, "spectrum", lam / lam.sum())
        else:
            if self.rank is None or int(self.rank) < 1:
                raise InvalidInput("rank must be a positive integer")
            object.__setattr__(self, "rank", int(self.rank))

    @classmethod
    def with_spectrum(cls, values) -> "SpectralConstraint":
        return cls(mode="spectra", spectrum=np.asarray(values, dtype=float))

    @classmethod
    def with_rank(cls, r: int) -> "SpectralConstraint":
        return cls(mode="rank", rank=r)


def _substitute_spectrum(vals, vecs, constraint: SpectralConstraint):
    """Rebuild the matrix on its own eigenbasis with the constrained spectrum.

    Returns the new matrix together with the spectrum actually written,
    which in rank mode is the renormalized truncation of `vals`.
    """
    dim = vals.size
    if constraint.mode == "spectra":
        lam = constraint.spectrum
        if lam.size != dim:
            raise InvalidInput(f"spectrum length {lam.size} does not match dim {dim}")
    else:
        positive = int(np.count_nonzero(vals > 0.0))
        if positive == 0:
            raise DegenerateIterate("no positive eigenvalue left to keep")
        keep = min(constraint.rank, positive)
        lam = np.zeros(dim)
        lam[:keep] = vals[:keep] / vals[:keep].sum()
    out = (vecs * lam) @ vecs.conj().T
    return hermitize(out), lam


def impose_spectrum(rho_prime, constraint: SpectralConstraint) -> np.ndarray:
    """Force the constraint onto a Hermitian matrix, eigenbasis kept.

    Eigenvalues and prescription are both taken descending and paired
    by index; under degeneracy the eigenvector order is whatever the
    decomposition returns.
    """
    vals, vecs = eigh(check_hermitian(rho_prime))
    out, _ = _substitute_spectrum(vals, vecs, constraint)
    return out


@dataclass
class ConvergenceReport:
    """Distance trajectories of one solver run.

    marginal_dist is the rms Hilbert-Schmidt distance over the targets,
    spectral_dist the euclidean gap between the iterate's spectrum and
    the prescription, and total_dist their quadrature sum.
    """

    iterations: int = 0
    steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    marginal_dist: np.ndarray = field(default_factory=lambda: np.zeros(0))
    spectral_dist: np.ndarray = field(default_factory=lambda: np.zeros(0))
    total_dist: np.ndarray = field(default_factory=lambda: np.zeros(0))
    runtime: float = 0.0
    converged: bool = False

    def trajectory_rows(self):
        return [
            (int(n), float(dm), float(dl), float(dt))
            for n, dm, dl, dt in zip(
                self.steps, self.marginal_dist, self.spectral_dist, self.total_dist
            )
        ]


class _Trajectory:
    """Per-iteration recorder that halves its rate past a point cap."""

    def __init__(self, cap: int = 10000):
        self.cap = cap
        self.stride = 1
        self.rows = []
        self.last = None

    def record(self, n, dm, dl, dt):
        self.last = (n, dm, dl, dt)
        if n % self.stride == 0:
            self.rows.append(self.last)
            if len(self.rows) >= self.cap:
                self.rows = self.rows[::2]
                self.stride *= 2

    def report(self, runtime: float, converged: bool) -> ConvergenceReport:
        rows = list(self.rows)
        if self.last is not None and (not rows or rows[-1][0] != self.last[0]):
            rows.append(self.last)
        arr = np.asarray(rows, dtype=float) if rows else np.zeros((0, 4))
        return ConvergenceReport(
            iterations=int(self.last[0]) if self.last else 0,
            steps=arr[:, 0].astype(int),
            marginal_dist=arr[:, 1].copy(),
            spectral_dist=arr[:, 2].copy(),
            total_dist=arr[:, 3].copy(),
            runtime=runtime,
            converged=converged,
        )


def _marginal_distance(mat: np.ndarray, spec: MarginalSpec) -> float:
    dims = [spec.local_dim] * spec.n_parties
    acc = 0.0
    for subset, sigma in spec.targets:
        got = partial_trace(mat, subset, dims=dims)
        acc += hs_distance(sigma.matrix, got) ** 2
    return math.sqrt(acc / len(spec.targets))


def _seed_state(spec: MarginalSpec, rng, identity_seed: bool) -> np.ndarray:
    if identity_seed:
        return np.eye(spec.dim, dtype=complex) / spec.dim
    return random_mixed_state((spec.local_dim,) * spec.n_parties, rng).matrix


def _iterate(spec, constraint, accuracy, max_iterations, seed_mat, sweep):
    """Common outer loop: sweep marginals, project the spectrum, measure.

    `sweep` maps the current iterate to the post-imposition matrix; the
    plain solver passes impose_all and the accelerated one a damped
    stepper.  Raises NotConverged with the partial result attached when
    the cap is hit.
    """
    if accuracy <= 0:
        raise InvalidInput("accuracy must be positive")
    t0 = time.perf_counter()
    traj = _Trajectory()
    x = seed_mat
    converged = False
    n = 0
    for n in range(1, int(max_iterations) + 1):
        xp = hermitize(sweep(x))
        if not np.all(np.isfinite(xp)):
            raise DegenerateIterate(
                f"iterate diverged to non-finite values at step {n}; "
                "momentum too strong for this problem, reduce mu or beta_scale"
            )
        vals, vecs = eigh(xp)
        x, lam = _substitute_spectrum(vals, vecs, constraint)
        dl = float(np.linalg.norm(vals - lam))
        dm = _marginal_distance(x, spec)
        dt = math.hypot(dm, dl)
        traj.record(n, dm, dl, dt)
        if dt <= accuracy:
            converged = True
            break
    report = traj.report(time.perf_counter() - t0, converged)
    state = QuantumState(x, (spec.local_dim,) * spec.n_parties)
    if not converged:
        raise NotConverged(
            f"distance {report.total_dist[-1]:.3e} after {n} iterations",
            result=(state, report),
        )
    return state, report


def solve(
    spec: MarginalSpec,
    constraint: SpectralConstraint,
    accuracy: float = 1e-6,
    max_iterations: int = 50000,
    rng=None,
    identity_seed: bool = False,
):
    """Alternate marginal imposition with spectral projection to a fixed point.

    Starts from a Hilbert-Schmidt-random full-rank state (or I/d^N with
    identity_seed) and stops once the combined marginal-plus-spectral
    distance drops below `accuracy`.  Convergence certifies that a state
    with the prescribed data exists to that precision; spinning at a
    plateau above it is the typical signature of an infeasible
    prescription, though the method is heuristic and cannot prove
    nonexistence.
    """
    x0 = _seed_state(spec, as_rng(rng), identity_seed)
    return _iterate(spec, constraint, accuracy, max_iterations, x0, lambda m: impose_all(m, spec))


@dataclass(frozen=True)
class HalpernSchedule:
    """Step policy for the accelerated iteration.

    alpha scales the residual direction, mu damps the applied step, and
    alpha_n = (n/1e5 + 1)^(-exponent) decays both the step and the
    momentum weight beta_n = beta_scale * alpha_n^2.  exponent=0 pins
    alpha_n at 1 and, together with beta_scale=0 and mu=1, makes the
    accelerated iteration coincide with the plain one step for step.
    """

    alpha: float = 1.0
    mu: float = 1.0
    exponent: float = 1.0
    beta_scale: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise InvalidInput("alpha must be positive")
        if not 0 < self.mu <= 1:
            raise InvalidInput("mu must lie in (0, 1]")
        if self.exponent < 0:
            raise InvalidInput("exponent must be nonnegative")
        if not 0 <= self.beta_scale <= 1:
            raise InvalidInput("beta_scale must lie in [0, 1]")

    def coefficients(self, n: int) -> tuple[float, float]:
        a = (n / 1e5 + 1.0) ** (-self.exponent)
        return a, self.beta_scale * a * a


def solve_accelerated(
    spec: MarginalSpec,
    constraint: SpectralConstraint,
    schedule: HalpernSchedule = HalpernSchedule(),
    accuracy: float = 1e-6,
    max_iterations: int = 50000,
    rng=None,
    identity_seed: bool = False,
):
    """Momentum-damped variant of solve.

    Each marginal substitution is applied as a relaxed step
        z <- (Q(x) - x)/alpha + beta_n z
        x <- x + mu alpha_n alpha z
    with the accumulator z persisting across sweeps, then the spectral
    projection runs unchanged.  Small mu with large alpha trades step
    size for momentum, which on hard prescriptions (broad plateaus)
    tends to dive below tolerance sooner than the plain iteration.
    Full momentum with mu near 1 overshoots and usually diverges; that
    surfaces as DegenerateIterate rather than silent nonsense.
    """
    x0 = _seed_state(spec, as_rng(rng), identity_seed)
    zbox = {"z": np.zeros_like(x0), "n": 0}

    def sweep(x):
        a_n, b_n = schedule.coefficients(zbox["n"])
        z = zbox["z"]
        # non-finite values can legitimately appear mid-divergence; the
        # outer loop detects them and raises, so keep numpy quiet here
        with np.errstate(over="ignore", invalid="ignore"):
            for subset, sigma in spec.targets:
                z = (impose_marginal(x, subset, sigma, spec.local_dim) - x) / schedule.alpha \
                    + b_n * z
                x = x + schedule.mu * a_n * schedule.alpha * z
        zbox["z"] = z
        zbox["n"] += 1
        return x

    return _iterate(spec, constraint, accuracy, max_iterations, x0, sweep)


def _npm_trial(n_parties, k, local_dim, m, generator, rng) -> bool:
    d = local_dim
    subsets = list(itertools.combinations(range(n_parties), k))
    if generator == "pure":
        gen = random_pure_state((d,) * n_parties, rng)
    else:
        gen = random_mixed_state((d,) * n_parties, rng)
    picked = rng.choice(len(subsets), size=m, replace=False) if m else []
    spec = spec_from_generator(gen, [subsets[int(i)] for i in picked])
    dim = d**n_parties
    if len(spec) == 0:
        return True
    out = impose_all(np.eye(dim, dtype=complex) / dim, spec)
    return float(np.linalg.eigvalsh(hermitize(out))[0]) >= PSD_WITNESS_TOL


def npm_sweep(
    n_parties: int,
    k: int,
    local_dim: int,
    m_values,
    trials: int,
    generator: str = "full-rank",
    rng=None,
    workers: int = 1,
):
    """Count PSD outcomes of imposing m random k-body reductions on I/d^N.

    For each m, every trial draws a fresh generator state, selects m of
    the C(N,k) subsets at random, and checks whether the one-shot
    composition is already positive.  Full-rank mixed generators succeed
    often and increasingly so at larger d; Haar-random pure generators
    almost never do.  Each trial runs on its own spawned rng stream so
    the counts do not depend on the worker count.
    """
    if not 1 <= k < n_parties:
        raise InvalidInput("need 1 <= k < n_parties")
    if generator not in ("pure", "full-rank"):
        raise InvalidInput(f"unknown generator mode {generator!r}")
    if trials < 1:
        raise InvalidInput("trials must be positive")
    m_list = [int(m) for m in m_values]
    n_subsets = math.comb(n_parties, k)
    if any(m < 0 or m > n_subsets for m in m_list):
        raise InvalidInput(f"m must lie in 0..{n_subsets}")
    streams = as_rng(rng).spawn(len(m_list) * trials)

    def count_for(idx_m: int) -> int:
        chunk = streams[idx_m * trials : (idx_m + 1) * trials]
        flags = [
            _npm_trial(n_parties, k, local_dim, m_list[idx_m], generator, r) for r in chunk
        ]
        return int(sum(flags))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            counts = list(pool.map(count_for, range(len(m_list))))
    else:
        counts = [count_for(i) for i in range(len(m_list))]
    return list(zip(m_list, counts))


def problem_from_dict(obj: dict, base_dir=None) -> tuple[MarginalSpec, SpectralConstraint]:
    """Parse {"N", "d", "targets", "constraint"} into solver inputs.

    A target state may be an inline matrix dict, a path to a JSON file
    holding one, or the token "maximally-mixed".
    """
    import json
    import os

    try:
        n = int(obj["N"])
        d = int(obj["d"])
        raw_targets = obj["targets"]
        raw_constraint = obj["constraint"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInput(f"malformed problem description: {exc}") from exc
    targets = []
    for entry in raw_targets:
        subset = tuple(int(i) for i in entry["subset"])
        state = entry["state"]
        dk = d ** len(subset)
        if isinstance(state, str):
            if state == "maximally-mixed":
                mat = np.eye(dk, dtype=complex) / dk
            else:
                path = state if base_dir is None else os.path.join(base_dir, state)
                with open(path) as fh:
                    mat = matrix_from_dict(json.load(fh))
        else:
            mat = matrix_from_dict(state)
        targets.append((subset, mat))
    spec = MarginalSpec(n, d, targets)
    if "rank" in raw_constraint:
        constraint = SpectralConstraint.with_rank(int(raw_constraint["rank"]))
    elif "spectra" in raw_constraint:
        constraint = SpectralConstraint.with_spectrum(raw_constraint["spectra"])
    else:
        raise InvalidInput("constraint must carry 'rank' or 'spectra'")
    return spec, constraint


def problem_to_dict(spec: MarginalSpec, constraint: SpectralConstraint) -> dict:
    targets = [
        {"subset": list(sub), "state": matrix_to_dict(sigma.matrix)}
        for sub, sigma in spec.targets
    ]
    if constraint.mode == "rank":
        cons = {"rank": constraint.rank}
    else:
        cons = {"spectra": [float(x) for x in constraint.spectrum]}
    return {"N": spec.n_parties, "d": spec.local_dim, "targets": targets, "constraint": cons}
