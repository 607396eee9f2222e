"""Independent brute-force oracles used by the test suite.

These deliberately avoid the library's solver code paths: values asserted in
tests are recomputed here by enumeration, grid search, or finite differences.
"""

import itertools
import math

import numpy as np


def transport_value_by_vertex_enumeration(supply_int, demand_int, cost):
    """Exact transport LP optimum by exhaustive vertex enumeration.

    Masses must be integers (scale rational instances up front). Every vertex
    of the transportation polytope is produced by some saturation order:
    repeatedly pick a cell, allocate ``min(remaining supply, remaining
    demand)``, and cross out the exhausted line. Exhausting all such orders,
    with memoization on the remaining-mass state, therefore scans the whole
    vertex set; the minimum over it is the LP optimum. Returns ``inf`` when
    every completion needs an infinite-cost cell.
    """
    supply = tuple(int(s) for s in supply_int)
    demand = tuple(int(d) for d in demand_int)
    if sum(supply) != sum(demand):
        raise ValueError("supply and demand totals must match")
    cost = np.asarray(cost, dtype=float)
    memo = {}

    def best(a, b):
        state = (a, b)
        if state in memo:
            return memo[state]
        rows = [i for i, x in enumerate(a) if x > 0]
        cols = [j for j, x in enumerate(b) if x > 0]
        if not rows:
            memo[state] = 0.0
            return 0.0
        value = math.inf
        for i in rows:
            for j in cols:
                c = cost[i, j]
                if not math.isfinite(c):
                    continue
                t = min(a[i], b[j])
                na = a[:i] + (a[i] - t,) + a[i + 1 :]
                nb = b[:j] + (b[j] - t,) + b[j + 1 :]
                sub = best(na, nb)
                if t * c + sub < value:
                    value = t * c + sub
        memo[state] = value
        return value

    return best(supply, demand)


def constrained_oracle_by_enumeration(masses, cost, epsilon, gain_flat):
    """Exact optimum of the one-budget linear maximization by vertex search.

    An optimal solution routes each source to a single target except for at
    most one fractional source row, so scanning every pure routing profile
    plus every single-row two-target refinement covers all candidate optima.
    Returns the best objective (and ``-inf`` if nothing is feasible).
    """
    masses = np.asarray(masses, dtype=float)
    cost = np.asarray(cost, dtype=float)
    gain_flat = np.asarray(gain_flat, dtype=float)
    m = masses.size
    finite_targets = [list(np.nonzero(np.isfinite(cost[a]))[0]) for a in range(m)]
    for a in range(m):
        if masses[a] > 0 and not finite_targets[a]:
            return -math.inf

    best = -math.inf
    active = [a for a in range(m) if masses[a] > 0]
    choices = [finite_targets[a] for a in active]
    for profile in itertools.product(*choices):
        d = sum(masses[a] * cost[a, b] for a, b in zip(active, profile))
        obj = sum(masses[a] * gain_flat[b] for a, b in zip(active, profile))
        if d <= epsilon + 1e-12:
            best = max(best, obj)
        # One-row refinements: replace row a's target by a mix with b2 chosen
        # so the budget binds exactly.
        for k, a in enumerate(active):
            b1 = profile[k]
            for b2 in finite_targets[a]:
                if b2 == b1:
                    continue
                dc = masses[a] * (cost[a, b2] - cost[a, b1])
                if abs(dc) < 1e-15:
                    continue
                theta = (epsilon - d) / dc
                if theta < 0.0 or theta > 1.0:
                    continue
                obj2 = obj + theta * masses[a] * (gain_flat[b2] - gain_flat[b1])
                best = max(best, obj2)
    return best


def entropy_of_joint(mass):
    """Conditional label entropy of a joint mass matrix, independent path."""
    mass = np.asarray(mass, dtype=float)
    h = 0.0
    for x in range(mass.shape[0]):
        row = mass[x]
        px = row.sum()
        for v in row:
            if v > 0.0:
                h -= v * math.log(v / px)
    return h


def finite_difference_directional(fun, point, direction, step=1e-6):
    """Central finite difference of ``fun`` along ``direction`` at ``point``."""
    up = fun(point + step * direction)
    down = fun(point - step * direction)
    return (up - down) / (2.0 * step)


def total_variation(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
