"""Marginal-problem walkthrough: imposition, solving, acceleration.

Shows the one-shot marginal substitution (including how it can leave
positivity), reconstruction of a pure 3-qubit state from its two-body
reductions, the maximally-mixed-marginal prescriptions at four parties
(solvable for qutrits, impossible for qubits), and the momentum variant
on a problem where plain iteration crawls.
"""
import itertools

import numpy as np

from qoptools import (
    HalpernSchedule,
    SpectralConstraint,
    ame_spec,
    fidelity,
    impose_marginal,
    random_pure_state,
    solve,
    solve_accelerated,
    spec_from_generator,
)
from qoptools.errors import NotConverged


if __name__ == "__main__":
    # one substitution can break positivity: classic diagonal example
    rho = np.diag([0.9, 0.0, 0.0, 0.1]).astype(complex)
    target = np.diag([0.1, 0.9]).astype(complex)
    out = impose_marginal(rho, (0,), target, 2)
    print("one-body substitution on diag(0.9, 0, 0, 0.1):")
    print(f"  smallest eigenvalue of the output: {np.linalg.eigvalsh(out)[0]:+.4f}")

    # pure 3-qubit state from its three two-body marginals
    gen = random_pure_state((2, 2, 2), 2024)
    spec = spec_from_generator(gen, itertools.combinations(range(3), 2))
    state, rep = solve(spec, SpectralConstraint.with_rank(1), rng=1)
    print("pure 3-qubit generator, all 2-body marginals, rank 1:")
    print(f"  converged in {rep.iterations} steps, fidelity {fidelity(state, gen):.8f}")

    # all 2-body marginals maximally mixed: exists for qutrits only
    _, rep43 = solve(ame_spec(4, 3), SpectralConstraint.with_rank(1), rng=11)
    print(f"4 qutrits, maximally mixed pairs: converged in {rep43.iterations} steps")
    try:
        solve(ame_spec(4, 2), SpectralConstraint.with_rank(1), max_iterations=100, rng=5)
    except NotConverged as exc:
        _, rep42 = exc.result
        print(f"4 qubits, same prescription: stuck at distance {rep42.total_dist.min():.3f} "
              "(no such state exists)")

    # momentum helps where the plain iteration crawls
    gen = random_pure_state((3,) * 4, np.random.default_rng(9))
    spec = spec_from_generator(gen, itertools.combinations(range(4), 2))
    cons = SpectralConstraint.with_rank(1)
    _, plain = solve(spec, cons, rng=909)
    _, fast = solve_accelerated(spec, cons, schedule=HalpernSchedule(mu=0.1), rng=909)
    print("pure 4-party qutrit target, rank 1:")
    print(f"  plain {plain.iterations} steps vs momentum {fast.iterations} steps")
