"""Independent reference implementations used to cross-check the package.

Everything here is written the slow, obvious way (explicit loops, basis
state index arithmetic, recursion) so that agreement with the library
is evidence rather than tautology.
"""
import itertools
import math

import numpy as np


def partial_trace_loops(mat, keep, dims):
    """Partial trace by summing explicit basis-state indices."""
    dims = list(dims)
    n = len(dims)
    keep = sorted(keep)
    drop = [i for i in range(n) if i not in keep]
    dk = int(np.prod([dims[i] for i in keep])) if keep else 1
    out = np.zeros((dk, dk), dtype=complex)

    def digits(flat, axes):
        out = []
        for ax in axes:
            out.append(flat % dims[ax])
            flat //= dims[ax]
        return out

    # enumerate row/column digit tuples for kept axes and summed axes
    kept_states = list(itertools.product(*[range(dims[i]) for i in keep])) or [()]
    drop_states = list(itertools.product(*[range(dims[i]) for i in drop])) or [()]

    def flat_index(kept_digits, drop_digits):
        full = [0] * n
        for ax, v in zip(keep, kept_digits):
            full[ax] = v
        for ax, v in zip(drop, drop_digits):
            full[ax] = v
        idx = 0
        for ax in range(n):
            idx = idx * dims[ax] + full[ax]
        return idx

    for r, row in enumerate(kept_states):
        for c, col in enumerate(kept_states):
            acc = 0.0 + 0.0j
            for s in drop_states:
                acc += mat[flat_index(row, s), flat_index(col, s)]
            out[r, c] = acc
    return out


def embed_loops(op, subset, n, d):
    """sigma_J (x) I/d^{|Jc|} in natural party order, by index arithmetic."""
    subset = sorted(subset)
    comp = [i for i in range(n) if i not in subset]
    dim = d**n
    out = np.zeros((dim, dim), dtype=complex)
    scale = 1.0 / d ** len(comp)

    def split(flat):
        digs = [0] * n
        for ax in range(n - 1, -1, -1):
            digs[ax] = flat % d
            flat //= d
        return digs

    def sub_index(digs):
        idx = 0
        for ax in subset:
            idx = idx * d + digs[ax]
        return idx

    for r in range(dim):
        dr = split(r)
        for c in range(dim):
            dc = split(c)
            if any(dr[ax] != dc[ax] for ax in comp):
                continue
            out[r, c] = op[sub_index(dr), sub_index(dc)] * scale
    return out


def impose_effects_sequential(rho, targets):
    """Compose single-effect updates one at a time, no shortcuts."""
    out = np.array(rho, dtype=complex)
    for effect, p in targets:
        effect = np.asarray(effect, dtype=complex)
        gap = p - np.trace(out @ effect)
        out = out + gap * effect / np.trace(effect @ effect)
    return out


def compose_two_closed_form(rho, e1, p1, e2, p2):
    """Two-effect composition via the explicit cross-term formula."""
    rho = np.asarray(rho, dtype=complex)
    t1 = float(np.trace(e1 @ e1).real)
    t2 = float(np.trace(e2 @ e2).real)
    g1 = p1 - np.trace(rho @ e1)
    g2 = p2 - np.trace(rho @ e2)
    cross = float(np.trace(e1 @ e2).real)
    return rho + g1 * e1 / t1 + g2 * e2 / t2 - g1 * cross * e2 / (t1 * t2)


def nearest_density_sort(mat):
    """Eigenvalue simplex projection by the sort-and-threshold rule."""
    w, v = np.linalg.eigh(np.asarray(mat, dtype=complex))
    lam = w[::-1]
    cum = np.cumsum(lam)
    ks = np.arange(1, lam.size + 1)
    cond = lam - (cum - 1.0) / ks > 0
    k = int(np.max(np.nonzero(cond)[0])) + 1
    theta = (cum[k - 1] - 1.0) / k
    clipped = np.clip(w - theta, 0.0, None)
    return (v * clipped) @ v.conj().T


def lhv_recursive(joint, marg_a, marg_b):
    """Max over deterministic strategies, by recursion over settings.

    Builds each assignment one setting at a time instead of vectorized
    enumeration; marginal coefficients use the averaged convention.
    """
    m, d = marg_a.shape

    def value(a_assign, b_assign):
        total = 0.0
        for x in range(m):
            for y in range(m):
                total += joint[x, y, a_assign[x], b_assign[y]]
        for x in range(m):
            total += marg_a[x, a_assign[x]]
        for y in range(m):
            total += marg_b[y, b_assign[y]]
        return total

    best = -np.inf

    def rec_b(a_assign, b_assign):
        nonlocal best
        if len(b_assign) == m:
            best = max(best, value(a_assign, b_assign))
            return
        for b in range(d):
            rec_b(a_assign, b_assign + [b])

    def rec_a(a_assign):
        if len(a_assign) == m:
            rec_b(a_assign, [])
            return
        for a in range(d):
            rec_a(a_assign + [a])

    rec_a([])
    return best


def bell_value_sum(joint, marg_a, marg_b, table):
    """Inequality value by direct summation over all indices."""
    m, d = marg_a.shape
    total = 0.0
    for x in range(m):
        for y in range(m):
            for a in range(d):
                for b in range(d):
                    total += joint[x, y, a, b] * table[x, y, a, b]
    for x in range(m):
        for a in range(d):
            pa = sum(table[x, y, a, b] for y in range(m) for b in range(d)) / m
            total += marg_a[x, a] * pa
    for y in range(m):
        for b in range(d):
            pb = sum(table[x, y, a, b] for x in range(m) for a in range(d)) / m
            total += marg_b[y, b] * pb
    return total


def poisson_error_fd(value_fn, counts, h=1e-4):
    """Propagated count error by central finite differences.

    value_fn maps a counts array to the inequality value; the returned
    figure is sqrt(sum (dQ/dc)^2 c) over every cell.
    """
    counts = np.asarray(counts, dtype=float)
    acc = 0.0
    it = np.nditer(counts, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        up = counts.copy()
        dn = counts.copy()
        up[idx] += h
        dn[idx] -= h
        grad = (value_fn(up) - value_fn(dn)) / (2 * h)
        acc += grad * grad * counts[idx]
        it.iternext()
    return math.sqrt(acc)


def closed_formula(name, sigmas_2, sigmas_1, sigmas_k, n, d, embed):
    """Evaluate one of the identity-seed composition formulas.

    sigmas_2: dict subset -> 2-body target; sigmas_1: dict party -> 1-body;
    sigmas_k: dict subset -> k-body for the N4k3 case.  `embed` is the
    embedding function under test (validated separately against
    embed_loops).
    """
    dim = d**n
    eye = np.eye(dim, dtype=complex) / dim
    if name == "N2k1":
        return embed(sigmas_1[0], (0,), n, d) + embed(sigmas_1[1], (1,), n, d) - eye
    if name in ("N3k1", "N4k1"):
        total = sum(embed(sigmas_1[i], (i,), n, d) for i in range(n))
        return total - (n - 1) * eye
    if name == "N3k2":
        s2 = sum(embed(v, k, n, d) for k, v in sigmas_2.items())
        s1 = sum(embed(sigmas_1[i], (i,), n, d) for i in range(n))
        return eye + s2 - s1
    if name == "N4k2":
        s2 = sum(embed(v, k, n, d) for k, v in sigmas_2.items())
        s1 = sum(embed(sigmas_1[i], (i,), n, d) for i in range(n))
        return 3 * eye + s2 - 2 * s1
    if name == "N5k2":
        s2 = sum(embed(v, k, n, d) for k, v in sigmas_2.items())
        s1 = sum(embed(sigmas_1[i], (i,), n, d) for i in range(n))
        return 6 * eye + s2 - 3 * s1
    if name == "N4k3":
        s3 = sum(embed(v, k, n, d) for k, v in sigmas_k.items())
        s2 = sum(embed(v, k, n, d) for k, v in sigmas_2.items())
        s1 = sum(embed(sigmas_1[i], (i,), n, d) for i in range(n))
        return s3 - s2 + s1 - eye
    if name == "all2":
        s2 = sum(embed(v, k, n, d) for k, v in sigmas_2.items())
        s1 = sum(embed(sigmas_1[i], (i,), n, d) for i in range(n))
        return s2 - (n - 2) * s1 + (n - 1) * (n - 2) / 2 * eye
    raise ValueError(name)


def plain_marginal_iteration(seed, targets, n, d, rank, steps):
    """Naive reimplementation of the alternating iteration for comparison.

    targets: list of (subset, matrix).  Returns the list of iterates
    after each spectral truncation.
    """
    x = np.array(seed, dtype=complex)
    dims = [d] * n
    iterates = []
    for _ in range(steps):
        for subset, sigma in targets:
            red = partial_trace_loops(x, subset, dims)
            x = x - embed_loops(red, subset, n, d) + embed_loops(sigma, subset, n, d)
        x = 0.5 * (x + x.conj().T)
        w, v = np.linalg.eigh(x)
        w = w[::-1]
        v = v[:, ::-1]
        lam = np.zeros_like(w)
        pos = w[w > 0]
        keep = min(rank, pos.size)
        lam[:keep] = w[:keep] / w[:keep].sum()
        x = (v * lam) @ v.conj().T
        iterates.append(x.copy())
    return iterates
