"""Quantum state estimation by iterated imposition of measured data.

The core object is the single-effect update
    T(rho) = rho + (p - Tr[rho E]) E / Tr(E^2),
which pushes the expectation of E to the target p while moving rho as
little as possible in Hilbert-Schmidt distance.  A full estimation pass
imposes every measurement in turn, and the loop stops once an entire
pass no longer moves the iterate.  Noisy data usually leaves the limit
slightly unphysical, so the result is projected back onto the density
matrices at the end.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateEffect, InvalidInput, InvalidMeasurementKind
from .mathcore import (
    MeasurementKind,
    MeasurementSet,
    QuantumState,
    as_rng,
    check_hermitian,
    eigh,
    fidelity,
    hermitize,
    hs_distance,
    mub_bases,
    pauli_product_bases,
    qubit_mub_bases,
)


@dataclass(frozen=True)
class ImpositionTarget:
    """One effect with the value its expectation should take.

    `expectation` widens the allowed target range to [-1, 1] for
    observable (Pauli-string style) targets; plain effects use [0, 1].
    """

    effect: np.ndarray
    probability: float
    expectation: bool = False

    def __post_init__(self):
        object.__setattr__(self, "effect", check_hermitian(self.effect))
        p = float(self.probability)
        lo = -1.0 if self.expectation else 0.0
        if not lo - 1e-12 <= p <= 1.0 + 1e-12:
            raise InvalidInput(f"target value {p} outside [{lo}, 1]")
        object.__setattr__(self, "probability", p)


@dataclass(frozen=True)
class NoiseModel:
    """White-noise admixture plus finite counting statistics.

    samples_per_basis None means exact Born probabilities.
    """

    white_noise: float = 0.0
    samples_per_basis: int | None = None

    def __post_init__(self):
        lam = float(self.white_noise)
        if not 0.0 <= lam <= 1.0:
            raise InvalidInput("white noise weight must lie in [0, 1]")
        object.__setattr__(self, "white_noise", lam)
        n = self.samples_per_basis
        if n is not None and not math.isinf(n):
            n = int(n)
            if n < 1:
                raise InvalidInput("samples per basis must be positive")
            object.__setattr__(self, "samples_per_basis", n)
        else:
            object.__setattr__(self, "samples_per_basis", None)


@dataclass(frozen=True)
class EstimationProblem:
    measurements: tuple[MeasurementSet, ...]
    frequencies: tuple[np.ndarray, ...]
    accuracy: float = 1e-10
    max_iterations: int = 10_000

    def __post_init__(self):
        meas = tuple(self.measurements)
        freqs = tuple(np.asarray(f, dtype=float) for f in self.frequencies)
        if len(meas) != len(freqs):
            raise InvalidInput("one frequency vector per measurement set required")
        if not meas:
            raise InvalidInput("at least one measurement set required")
        for a, f in zip(meas, freqs):
            if f.shape != (len(a),):
                raise InvalidInput("frequency vector length does not match effect count")
            if a.kind is MeasurementKind.OBSERVABLE_BASIS:
                if np.any(np.abs(f) > 1 + 1e-12):
                    raise InvalidInput("expectation targets must lie in [-1, 1]")
            else:
                if np.any(f < -1e-12):
                    raise InvalidInput("frequencies must be nonnegative")
                if a.kind is MeasurementKind.PVM and abs(f.sum() - 1.0) > 1e-9:
                    raise InvalidInput("PVM frequencies must sum to 1 within 1e-9")
        if not 0.0 <= float(self.accuracy) <= 1.0:
            raise InvalidInput("accuracy must lie in [0, 1]")
        if int(self.max_iterations) < 1:
            raise InvalidInput("max_iterations must be positive")
        object.__setattr__(self, "measurements", meas)
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "accuracy", float(self.accuracy))
        object.__setattr__(self, "max_iterations", int(self.max_iterations))


@dataclass(frozen=True)
class EstimationResult:
    state: QuantumState
    iterations: int
    residual: float
    converged: bool


def impose_one(rho: np.ndarray, target: ImpositionTarget) -> np.ndarray:
    """Shift rho minimally so that Tr[rho E] equals the target value."""
    rho = np.asarray(rho, dtype=complex)
    e = target.effect
    if rho.shape != e.shape:
        raise InvalidInput("state and effect dimensions differ")
    tr_e2 = float(np.trace(e @ e).real)
    if tr_e2 <= 1e-30:
        raise DegenerateEffect("effect has zero Hilbert-Schmidt norm")
    gap = target.probability - float(np.trace(rho @ e).real)
    return rho + (gap / tr_e2) * e


def impose_pvm(rho: np.ndarray, pvm: MeasurementSet, probs: Sequence[float]) -> np.ndarray:
    """Impose a full outcome distribution of one projective measurement.

    Orthogonality makes the single-effect updates independent, so the
    composition collapses to one additive correction per projector.
    """
    if not isinstance(pvm, MeasurementSet) or pvm.kind is not MeasurementKind.PVM:
        raise InvalidMeasurementKind("impose_pvm needs a PVM measurement set")
    rho = np.asarray(rho, dtype=complex)
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (len(pvm),):
        raise InvalidInput("probability vector length does not match PVM")
    out = rho.copy()
    for p, proj in zip(probs, pvm.effects):
        tr_p2 = float(np.trace(proj @ proj).real)
        out += (p - float(np.trace(rho @ proj).real)) / tr_p2 * proj
    return out


def _impose_set(rho: np.ndarray, meas: MeasurementSet, freq: np.ndarray) -> np.ndarray:
    if meas.kind is MeasurementKind.PVM:
        return impose_pvm(rho, meas, freq)
    expectation = meas.kind is MeasurementKind.OBSERVABLE_BASIS
    out = rho
    for e, f in zip(meas.effects, freq):
        out = impose_one(out, ImpositionTarget(e, float(f), expectation=expectation))
    return out


def estimate(problem: EstimationProblem) -> EstimationResult:
    """Iterate imposition passes from the maximally mixed seed.

    Runs until one full pass moves the iterate by at most the requested
    accuracy (Hilbert-Schmidt distance) or the iteration cap is hit, in
    which case the result carries converged=False.  The raw limit is
    projected onto the density matrices before returning.
    """
    d = problem.measurements[0].dim
    for a in problem.measurements:
        if a.dim != d:
            raise InvalidInput("measurement sets act on different dimensions")
    rho = np.eye(d, dtype=complex) / d
    iterations = 0
    residual = math.inf
    converged = False
    while iterations < problem.max_iterations:
        prev = rho
        for meas, freq in zip(problem.measurements, problem.frequencies):
            rho = _impose_set(rho, meas, freq)
        iterations += 1
        residual = hs_distance(rho, prev)
        if residual <= problem.accuracy:
            converged = True
            break
    return EstimationResult(
        state=nearest_density_matrix(rho),
        iterations=iterations,
        residual=float(residual),
        converged=converged,
    )


def nearest_density_matrix(rho: np.ndarray) -> QuantumState:
    """Project a Hermitian matrix onto the closest density matrix.

    Diagonalize, then shift the spectrum down by the x0 solving
    sum_i max(lambda_i - x0, 0) = 1 and clip at zero; this is the
    Hilbert-Schmidt projection onto the spectrahedron.  x0 is located
    by bisection (the left-hand side is monotone in x0) and sharpened
    to machine precision on the final active set.
    """
    rho = check_hermitian(np.asarray(rho, dtype=complex))
    lam, u = eigh(rho)

    def excess(x: float) -> float:
        return float(np.sum(np.clip(lam - x, 0.0, None)) - 1.0)

    lo, hi = float(lam[-1]) - 1.0, float(lam[0])
    # excess(lo) >= 0 by construction, excess(hi) = -1
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    active = lam > hi
    if not np.any(active):
        active = lam > lo
    x0 = (float(lam[active].sum()) - 1.0) / int(active.sum())
    spec = np.clip(lam - x0, 0.0, None)
    out = hermitize((u * spec) @ u.conj().T)
    return QuantumState(out)


def born_probabilities(state, meas: MeasurementSet) -> np.ndarray:
    """Expectation of every effect in the set (real parts)."""
    mat = state.matrix if isinstance(state, QuantumState) else np.asarray(state, dtype=complex)
    return np.einsum("kij,ji->k", meas.effects, mat).real


def simulate_frequencies(
    rho_gen: QuantumState,
    measurements: Sequence[MeasurementSet],
    noise: NoiseModel,
    rng,
    multinomial: bool = False,
) -> list[np.ndarray]:
    """Per-measurement outcome frequencies of the noisy state.

    The generator is mixed with white noise, then each basis is either
    read out exactly (samples_per_basis None) or sampled with
    independent Poisson counts per outcome, normalized by the realized
    total.  Observable-expectation sets only support the exact mode;
    their entries are expectation values, not outcome probabilities.
    """
    rng = as_rng(rng)
    d = rho_gen.dim
    lam = noise.white_noise
    noisy = (1.0 - lam) * rho_gen.matrix + lam * np.eye(d) / d
    out = []
    for meas in measurements:
        values = born_probabilities(noisy, meas)
        if meas.kind is MeasurementKind.OBSERVABLE_BASIS:
            if noise.samples_per_basis is not None:
                raise InvalidMeasurementKind(
                    "finite-sample simulation is undefined for expectation targets"
                )
            out.append(values)
            continue
        probs = np.clip(values, 0.0, None)
        if noise.samples_per_basis is None:
            out.append(probs)
            continue
        n = noise.samples_per_basis
        if multinomial:
            counts = rng.multinomial(n, probs / probs.sum()).astype(float)
        else:
            counts = rng.poisson(n * probs).astype(float)
        total = counts.sum()
        if total == 0:  # astronomically unlikely at sensible n, but keep it finite
            out.append(np.full(len(meas), 1.0 / len(meas)))
        else:
            out.append(counts / total)
    return out


def bootstrap_fidelity(
    rho_gen: QuantumState,
    measurements: Sequence[MeasurementSet],
    noise: NoiseModel,
    trials: int,
    rng,
    accuracy: float = 1e-10,
    max_iterations: int = 10_000,
) -> tuple[float, float]:
    """Mean estimation fidelity and its standard error over repeated runs.

    The generator state stays fixed; only the sampled counts vary from
    trial to trial (per-trial seeds derived as base + index).
    """
    trials = int(trials)
    if trials < 2:
        raise InvalidInput("need at least two trials")
    if isinstance(rng, np.random.Generator):
        base = int(rng.integers(2**62))
    else:
        base = int(rng)
    values = np.empty(trials)
    for t in range(trials):
        freqs = simulate_frequencies(rho_gen, measurements, noise, as_rng(base + t))
        result = estimate(
            EstimationProblem(tuple(measurements), tuple(freqs), accuracy, max_iterations)
        )
        values[t] = fidelity(result.state, rho_gen)
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(trials))


def measurement_protocol(n_qubits: int, protocol: str) -> list[MeasurementSet]:
    """Bundled tomography protocols: 'mub' or 'pauli' on n qubits."""
    n = int(n_qubits)
    if protocol == "mub":
        if n == 1:
            return mub_bases(2)
        return qubit_mub_bases(n)
    if protocol == "pauli":
        return pauli_product_bases(n)
    raise InvalidInput(f"unknown protocol {protocol!r}")


def run_benchmark(
    n_qubits: int,
    protocol: str,
    trials: int,
    rng,
    white_noise: float = 0.1,
    samples_factor: int = 100,
) -> dict:
    """Estimation benchmark with a fresh random full-rank generator per trial.

    Mirrors the noisy-tomography setting used in the acceptance tests:
    white noise 0.1 and 100 * 2^n Poisson samples per basis.
    """
    from .mathcore import random_mixed_state

    rng = as_rng(rng)
    base = int(rng.integers(2**62))
    n = int(n_qubits)
    d = 2**n
    measurements = measurement_protocol(n, protocol)
    noise = NoiseModel(white_noise, samples_factor * d)
    fid = np.empty(int(trials))
    iters = np.empty(int(trials))
    for t in range(int(trials)):
        trial_rng = as_rng(base + t)
        rho_gen = random_mixed_state([2] * n, trial_rng)
        freqs = simulate_frequencies(rho_gen, measurements, noise, trial_rng)
        result = estimate(EstimationProblem(tuple(measurements), tuple(freqs)))
        fid[t] = fidelity(result.state, rho_gen)
        iters[t] = result.iterations
    return {
        "protocol": protocol,
        "n_qubits": n,
        "trials": int(trials),
        "mean_fidelity": float(fid.mean()),
        "std_error": float(fid.std(ddof=1) / math.sqrt(len(fid))),
        "mean_iterations": float(iters.mean()),
    }


def completeness_rank(measurements: Sequence[MeasurementSet]) -> int:
    """Rank of the real span of all effects; d^2 means informationally complete.

    Diagnostic only, estimation does not require or check it.
    """
    rows = []
    for meas in measurements:
        for e in meas.effects:
            rows.append(np.concatenate([e.real.ravel(), e.imag.ravel()]))
    return int(np.linalg.matrix_rank(np.asarray(rows), tol=1e-10))


def _matrix_ref(entry, base_dir=None) -> np.ndarray:
    """Inline matrix dict, or a path to a JSON file holding one."""
    import json
    import os

    from .mathcore import matrix_from_dict

    if isinstance(entry, str):
        path = entry if base_dir is None else os.path.join(base_dir, entry)
        with open(path) as fh:
            return matrix_from_dict(json.load(fh))
    return matrix_from_dict(entry)


def estimation_problem_from_dict(obj: dict, base_dir=None):
    """Parse {"measurements", "frequencies", "epsilon", "max_iters"}.

    measurements is either {"protocol": "mub"|"pauli", "qubits": n} or a
    list of {"kind": ..., "effects": [matrix refs]}.  An optional
    "reference" matrix ref names the state that fidelity should be
    reported against.  Returns (problem, reference or None).
    """
    try:
        raw_meas = obj["measurements"]
        raw_freq = obj["frequencies"]
    except (KeyError, TypeError) as exc:
        raise InvalidInput(f"malformed problem file: {exc}") from exc
    if isinstance(raw_meas, dict):
        measurements = measurement_protocol(int(raw_meas["qubits"]), raw_meas["protocol"])
    else:
        measurements = []
        for entry in raw_meas:
            kind = MeasurementKind.coerce(entry.get("kind", "pvm"))
            effects = [_matrix_ref(e, base_dir) for e in entry["effects"]]
            measurements.append(MeasurementSet(effects, kind))
    problem = EstimationProblem(
        measurements,
        [np.asarray(f, dtype=float) for f in raw_freq],
        accuracy=float(obj.get("epsilon", 1e-10)),
        max_iterations=int(obj.get("max_iters", 10_000)),
    )
    reference = obj.get("reference")
    if reference is not None:
        mat = _matrix_ref(reference, base_dir)
        reference = QuantumState(mat)
    return problem, reference
