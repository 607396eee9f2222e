"""Exact discrete optimal transport and the budget-constrained linear oracle.

The solver is a dense transportation simplex: instances here are small
(at most a few hundred points per side) and the dual variables are needed
natively, both as Kantorovich potentials and as optimality certificates.
Infinite cost entries are kept as an explicit sentinel and never enter the
pivot candidates, so label-preserving problems decompose per label
automatically.

Everything is a pure function over immutable inputs; per-call workspaces make
concurrent use safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from robust_entropy.core import (
    GroundCost,
    InfeasibleError,
    JointDistribution,
    NumericalDegeneracyError,
    ValidationError,
)

__all__ = [
    "Coupling",
    "DualPotentials",
    "OracleResult",
    "EmptyFeasibleError",
    "BisectionStallError",
    "wasserstein_distance",
    "constrained_linear_oracle",
    "verify_duality",
]


class EmptyFeasibleError(InfeasibleError):
    """A source point has no finite-cost target at all."""


class BisectionStallError(NumericalDegeneracyError):
    """The multiplier bracket collapsed without certifying optimality."""


@dataclass(frozen=True)
class Coupling:
    """Transport plan between flattened point sets.

    ``plan[a, b]`` is the mass moved from source point ``a`` to target point
    ``b``. Row sums reproduce the source distribution; plans produced by
    :func:`wasserstein_distance` also reproduce the target in their column
    sums.
    """

    source_size: int
    target_size: int
    plan: np.ndarray

    def __post_init__(self) -> None:
        plan = np.asarray(self.plan, dtype=float)
        if plan.shape != (self.source_size, self.target_size):
            raise ValidationError(
                f"plan must have shape {(self.source_size, self.target_size)}, got {plan.shape}"
            )
        if not np.all(np.isfinite(plan)) or np.any(plan < 0.0):
            raise ValidationError("plan entries must be finite and >= 0")
        plan = plan.copy()
        plan.setflags(write=False)
        object.__setattr__(self, "plan", plan)

    def row_sums(self) -> np.ndarray:
        return self.plan.sum(axis=1)

    def col_sums(self) -> np.ndarray:
        return self.plan.sum(axis=0)


@dataclass(frozen=True)
class DualPotentials:
    """Kantorovich potentials of a transport optimum.

    Convention: ``phi[a] + psi[b] <= d(a, b)`` on every finite-cost pair, with
    equality on the support of the optimal plan, and the dual objective
    ``phi . source + psi . target`` equals the primal value. ``phi`` is
    gauge-fixed to 0 at the first supported source point. ``degenerate`` is
    set when the potentials are not unique (the optimal support is
    disconnected, or an off-support pair is tight).
    """

    phi: np.ndarray
    psi: np.ndarray
    degenerate: bool = False

    def __post_init__(self) -> None:
        phi = np.asarray(self.phi, dtype=float)
        psi = np.asarray(self.psi, dtype=float)
        if phi.ndim != 1 or psi.ndim != 1:
            raise ValidationError("potentials must be vectors")
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(psi))):
            raise ValidationError("potentials must be finite")
        phi = phi.copy()
        psi = psi.copy()
        phi.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "psi", psi)


@dataclass(frozen=True)
class OracleResult:
    """Output of the distortion-budgeted linear maximization.

    ``multiplier`` is the shadow price of the distortion budget: zero when the
    constraint is slack, otherwise the budget binds up to round-off
    (complementary slackness).
    """

    coupling: Coupling
    multiplier: float
    objective: float
    achieved_distortion: float


# ---------------------------------------------------------------------------
# Transportation simplex
# ---------------------------------------------------------------------------

_FLOW_EPS = 1e-15


def _initial_spanning_tree(supply, demand, cost_eff, finite_mask):
    """Minimum-cost start: one pass over finite cells sorted by cost, then
    artificial completion so the basis is always a spanning tree."""
    m, n = cost_eff.shape
    arem = supply.astype(float).copy()
    brem = demand.astype(float).copy()
    row_active = np.ones(m, dtype=bool)
    col_active = np.ones(n, dtype=bool)
    flows: dict[tuple[int, int], float] = {}
    artificial: set[tuple[int, int]] = set()

    def cross(i: int, j: int) -> None:
        both_zero = arem[i] <= _FLOW_EPS and brem[j] <= _FLOW_EPS
        if both_zero:
            if int(row_active.sum()) > 1:
                row_active[i] = False
            else:
                col_active[j] = False
        elif arem[i] <= _FLOW_EPS:
            row_active[i] = False
        else:
            col_active[j] = False

    order = sorted(
        (cost_eff[i, j], i, j) for i, j in zip(*np.nonzero(finite_mask))
    )
    for _, i, j in order:
        if not (row_active[i] and col_active[j]):
            continue
        t = min(arem[i], brem[j])
        flows[(i, j)] = t
        arem[i] -= t
        brem[j] -= t
        cross(i, j)
        if not (row_active.any() and col_active.any()):
            break

    while row_active.any() and col_active.any():
        i = int(np.argmax(row_active))
        j = int(np.argmax(col_active))
        t = min(arem[i], brem[j])
        flows[(i, j)] = t
        artificial.add((i, j))
        arem[i] -= t
        brem[j] -= t
        cross(i, j)

    return flows, artificial


def _tree_duals(basis, m, n, cost_eff):
    """Dual variables from the spanning-tree basis (root: row 0 at zero)."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(m + n)]
    for (i, j) in basis:
        adj[i].append((m + j, i * n + j))
        adj[m + j].append((i, i * n + j))
    u = np.zeros(m)
    v = np.zeros(n)
    seen = [False] * (m + n)
    for root in range(m + n):
        if seen[root]:
            continue
        seen[root] = True
        stack = [root]
        while stack:
            node = stack.pop()
            for other, cell in adj[node]:
                if seen[other]:
                    continue
                seen[other] = True
                i, j = divmod(cell, n)
                if other >= m:
                    v[j] = cost_eff[i, j] - u[i]
                else:
                    u[i] = cost_eff[i, j] - v[j]
                stack.append(other)
    return u, v


def _tree_path(basis, m, n, start_row, end_col):
    """Node path from a row to a column inside the basis tree."""
    adj: dict[int, list[int]] = {}
    for (i, j) in basis:
        adj.setdefault(i, []).append(m + j)
        adj.setdefault(m + j, []).append(i)
    parent = {start_row: -1}
    stack = [start_row]
    target = m + end_col
    while stack:
        node = stack.pop()
        if node == target:
            break
        for other in adj.get(node, ()):
            if other not in parent:
                parent[other] = node
                stack.append(other)
    if target not in parent:
        raise NumericalDegeneracyError("basis lost its spanning-tree structure")
    path = [target]
    while path[-1] != start_row:
        path.append(parent[path[-1]])
    path.reverse()
    return path


def _leaf_strip_flows(basis, m, n, supply, demand):
    """Exact basic flows for the given tree and (unperturbed) masses."""
    degree = np.zeros(m + n, dtype=int)
    adj: dict[int, list[tuple[int, tuple[int, int]]]] = {k: [] for k in range(m + n)}
    for (i, j) in basis:
        degree[i] += 1
        degree[m + j] += 1
        adj[i].append((m + j, (i, j)))
        adj[m + j].append((i, (i, j)))
    rem = np.concatenate([supply.astype(float), demand.astype(float)])
    alive = {k for k in range(m + n)}
    used: set[tuple[int, int]] = set()
    flows: dict[tuple[int, int], float] = {}
    leaves = [k for k in alive if degree[k] <= 1]
    while leaves:
        node = leaves.pop()
        if node not in alive:
            continue
        alive.discard(node)
        edge = None
        for other, cell in adj[node]:
            if cell not in used and other in alive:
                edge = (other, cell)
                break
        if edge is None:
            continue
        other, cell = edge
        used.add(cell)
        flow = rem[node]
        flows[cell] = flow
        rem[other] -= flow
        rem[node] = 0.0
        degree[other] -= 1
        if degree[other] <= 1:
            leaves.append(other)
    for cell in basis:
        flows.setdefault(cell, 0.0)
    return flows


def _solve_transport(supply, demand, cost):
    """Transportation simplex on a dense cost matrix with +inf sentinels.

    Returns ``(plan, basis, artificial)`` where ``plan`` is the exact optimal
    plan dict over basis cells. Raises InfeasibleError when mass is forced
    across an infinite-cost cell.
    """
    supply = np.asarray(supply, dtype=float)
    demand = np.asarray(demand, dtype=float)
    m, n = supply.size, demand.size
    cost = np.asarray(cost, dtype=float)
    finite_mask = np.isfinite(cost)
    max_finite = float(cost[finite_mask].max()) if finite_mask.any() else 0.0
    big = 1e7 * (1.0 + max_finite)
    cost_eff = np.where(finite_mask, cost, big)

    for a in range(m):
        if supply[a] > _FLOW_EPS and not finite_mask[a].any():
            raise EmptyFeasibleError(f"source point {a} has no finite-cost target")

    flows, artificial = _initial_spanning_tree(supply, demand, cost_eff, finite_mask)
    basis = set(flows)
    red_tol = 1e-11 * (1.0 + max_finite)
    max_pivots = 4000 + 60 * m * n
    degenerate_streak = 0
    bland = False

    basis_mask = np.zeros((m, n), dtype=bool)
    for (i, j) in basis:
        basis_mask[i, j] = True

    for _ in range(max_pivots):
        u, v = _tree_duals(basis, m, n, cost_eff)
        reduced = cost_eff - u[:, None] - v[None, :]
        candidates = finite_mask & ~basis_mask
        red_vals = np.where(candidates, reduced, np.inf)
        if bland:
            neg = np.argwhere(red_vals < -red_tol)
            if neg.size == 0:
                break
            ei, ej = int(neg[0][0]), int(neg[0][1])
        else:
            flat = int(np.argmin(red_vals))
            ei, ej = divmod(flat, n)
            if red_vals[ei, ej] >= -red_tol:
                break
        path = _tree_path(basis, m, n, ei, ej)
        cycle_cells = []
        for t in range(len(path) - 1):
            a, b = path[t], path[t + 1]
            cell = (a, b - m) if a < m else (b, a - m)
            cycle_cells.append((cell, -1.0 if t % 2 == 0 else 1.0))
        minus = [cell for cell, s in cycle_cells if s < 0]
        theta = min(flows[cell] for cell in minus)
        leaving = next(cell for cell in minus if flows[cell] <= theta)
        flows[(ei, ej)] = theta
        for cell, s in cycle_cells:
            flows[cell] += s * theta
        basis.add((ei, ej))
        basis_mask[ei, ej] = True
        basis.discard(leaving)
        basis_mask[leaving] = False
        flows.pop(leaving, None)
        artificial.discard(leaving)
        if theta <= _FLOW_EPS:
            degenerate_streak += 1
            if degenerate_streak > 2 * (m + n):
                bland = True
        else:
            degenerate_streak = 0
    else:
        raise NumericalDegeneracyError("transportation simplex exceeded its pivot budget")

    exact = _leaf_strip_flows(basis, m, n, supply, demand)
    plan = np.zeros((m, n))
    for (i, j), f in exact.items():
        if f < -1e-9:
            raise NumericalDegeneracyError("negative basic flow after recomputation")
        plan[i, j] = max(f, 0.0)
    bad = [cell for cell in artificial if plan[cell] > 1e-9]
    if bad:
        raise InfeasibleError("no finite-cost coupling exists for the given marginals")
    for cell in artificial:
        plan[cell] = 0.0
    return plan, basis, artificial


def _duals_from_plan(plan, cost, supply):
    """Canonical potentials from the optimal plan alone.

    Potentials are forced (up to a constant) on each connected component of
    the support; cross-component constants are then set by shortest paths on
    the slack graph, which keeps the result deterministic and free of
    artificial-cost contamination. Returns ``(phi, psi, degenerate)``.
    """
    m, n = plan.shape
    finite_mask = np.isfinite(cost)
    support = plan > _FLOW_EPS
    comp = np.full(m + n, -1, dtype=int)
    u = np.zeros(m)
    v = np.zeros(n)
    adj: dict[int, list[tuple[int, int, int]]] = {}
    for i, j in zip(*np.nonzero(support)):
        adj.setdefault(int(i), []).append((m + int(j), int(i), int(j)))
        adj.setdefault(m + int(j), []).append((int(i), int(i), int(j)))
    ncomp = 0
    for root in range(m + n):
        if comp[root] >= 0 or root not in adj:
            continue
        comp[root] = ncomp
        stack = [root]
        while stack:
            node = stack.pop()
            for other, i, j in adj.get(node, ()):
                if comp[other] >= 0:
                    continue
                comp[other] = ncomp
                if other >= m:
                    v[j] = cost[i, j] - u[i]
                else:
                    u[i] = cost[i, j] - v[j]
                stack.append(other)
        ncomp += 1

    if ncomp > 1:
        # Per-component shifts delta: a finite cell from row-component ci to
        # col-component cj caps delta[ci] - delta[cj] by its slack. Resolve by
        # Bellman-Ford relaxation from the all-zero vector (the super-source
        # shortest-path potentials); a negative cycle cannot occur at an
        # optimal plan.
        edges: dict[tuple[int, int], float] = {}
        for i, j in zip(*np.nonzero(finite_mask)):
            ci, cj = comp[int(i)], comp[m + int(j)]
            if ci < 0 or cj < 0 or ci == cj:
                continue
            slack = float(cost[i, j] - u[int(i)] - v[int(j)])
            key = (cj, ci)
            if key not in edges or slack < edges[key]:
                edges[key] = slack
        delta = np.zeros(ncomp)
        relax = sorted(edges.items())
        for sweep in range(ncomp + 1):
            changed = False
            for (src, dst), w in relax:
                cand = delta[src] + w
                if cand < delta[dst] - 1e-15:
                    delta[dst] = cand
                    changed = True
            if not changed:
                break
        else:
            raise NumericalDegeneracyError("dual alignment detected a negative cycle")
        shifts = delta[np.maximum(comp, 0)]
        u = u + np.where(comp[:m] >= 0, shifts[:m], 0.0)
        v = v - np.where(comp[m:] >= 0, shifts[m:], 0.0)

    # Points with no support at all (zero-mass lines): tightest feasible value.
    for i in range(m):
        if comp[i] < 0:
            finite_j = np.nonzero(finite_mask[i] & (comp[m:] >= 0))[0]
            u[i] = float(np.min(cost[i, finite_j] - v[finite_j])) if finite_j.size else 0.0
    for j in range(n):
        if comp[m + j] < 0:
            finite_i = np.nonzero(finite_mask[:, j])[0]
            v[j] = float(np.min(cost[finite_i, j] - u[finite_i])) if finite_i.size else 0.0

    slackmat = np.where(finite_mask, cost - u[:, None] - v[None, :], np.inf)
    worst = float(np.min(slackmat))
    if worst < -1e-9:
        raise NumericalDegeneracyError(f"dual reconstruction infeasible by {-worst:.3e}")

    off_support = finite_mask & ~support
    tight_off = bool(np.any(np.abs(np.where(off_support, slackmat, np.inf)) <= 1e-9))
    degenerate = (ncomp > 1) or tight_off

    # Gauge: zero the potential at the first supported source point.
    supported = np.nonzero(supply > _FLOW_EPS)[0]
    anchor = int(supported[0]) if supported.size else 0
    shift = u[anchor]
    return u - shift, v + shift, degenerate


def wasserstein_distance(
    mu: JointDistribution, nu: JointDistribution, cost: GroundCost
) -> tuple[float, Coupling, DualPotentials]:
    """Exact 1-Wasserstein distance between two joints under a ground cost.

    Returns the optimal value, an optimal coupling (rows follow ``mu``,
    columns follow ``nu``), and Kantorovich potentials satisfying the
    :class:`DualPotentials` conventions. Raises :class:`InfeasibleError` for a
    label-preserving cost with mismatched label marginals.
    """
    if (mu.nx, mu.ny) != (nu.nx, nu.ny) or (cost.nx, cost.ny) != (mu.nx, mu.ny):
        raise ValidationError("mu, nu and cost must share alphabets")
    supply = mu.flat().copy()
    demand = nu.flat().copy()

    if cost.label_preserving:
        mu_y = mu.mass.sum(axis=0)
        nu_y = nu.mass.sum(axis=0)
        gap = np.abs(mu_y - nu_y)
        if np.any(gap > 1e-10):
            raise InfeasibleError(
                "label-preserving cost with mismatched label marginals "
                f"(max gap {float(gap.max()):.3e})"
            )
        # Per-label rescale inside validation tolerance so blocks balance exactly.
        scale = np.where(nu_y > 0.0, mu_y / np.where(nu_y > 0.0, nu_y, 1.0), 1.0)
        demand = (nu.mass * scale[None, :]).reshape(-1)
    total_gap = supply.sum() - demand.sum()
    if abs(total_gap) > 1e-10:
        raise InfeasibleError("total masses differ beyond tolerance")
    if demand.sum() > 0.0:
        demand *= supply.sum() / demand.sum()

    plan, _, _ = _solve_transport(supply, demand, cost.matrix)
    value = float(np.sum(plan[plan > 0.0] * cost.matrix[plan > 0.0]))
    phi, psi, degenerate = _duals_from_plan(plan, cost.matrix, supply)
    size = mu.nx * mu.ny
    return value, Coupling(size, size, plan), DualPotentials(phi, psi, degenerate)


def verify_duality(coupling: Coupling, duals: DualPotentials, cost: GroundCost) -> float:
    """Certificate residual: |primal - dual| plus the worst dual infeasibility."""
    matrix = cost.matrix
    if coupling.plan.shape != matrix.shape:
        raise ValidationError("coupling and cost shapes differ")
    plan = coupling.plan
    pos = plan > 0.0
    if np.any(~np.isfinite(matrix[pos])):
        return math.inf
    primal = float(np.sum(plan[pos] * matrix[pos]))
    dual = float(duals.phi @ coupling.row_sums() + duals.psi @ coupling.col_sums())
    finite = np.isfinite(matrix)
    violation = duals.phi[:, None] + duals.psi[None, :] - matrix
    worst = float(np.max(np.where(finite, violation, -np.inf)))
    return abs(primal - dual) + max(0.0, worst)


# ---------------------------------------------------------------------------
# Budget-constrained linear maximization (the Frank-Wolfe oracle)
# ---------------------------------------------------------------------------


def _greedy_selection(gain_flat, cost_safe, finite_mask, lam, tie_tol):
    """Per-source argmax of ``gain - lam * cost``; ties resolved toward the
    lower-cost target, then the lower index. ``cost_safe`` carries zeros in
    place of the infinite entries masked out by ``finite_mask``."""
    score = np.where(finite_mask, gain_flat[None, :] - lam * cost_safe, -np.inf)
    best = score.max(axis=1)
    tied = score >= (best[:, None] - tie_tol)
    pick_key = np.where(tied, cost_safe, np.inf)
    return np.argmin(pick_key, axis=1)


def constrained_linear_oracle(
    mu: JointDistribution,
    cost: GroundCost,
    epsilon: float,
    gain: np.ndarray,
) -> OracleResult:
    """Maximize ``sum gamma(a, b) gain(b)`` over couplings with rows ``mu``
    and expected cost at most ``epsilon``.

    The maximization decomposes per source point once the budget is priced:
    for a price ``lam`` every source routes to the best ``gain - lam * cost``
    target. Bisection finds the smallest price whose cheapest-tie selection
    fits the budget; at that price two per-source selections are mixed so the
    budget binds exactly, which leaves at most one source row fractional
    beyond ties.
    """
    if not (isinstance(epsilon, (int, float)) and epsilon >= 0.0 and math.isfinite(epsilon)):
        raise ValidationError("epsilon must be a finite real >= 0")
    if (cost.nx, cost.ny) != (mu.nx, mu.ny):
        raise ValidationError("mu and cost must share alphabets")
    gain_flat = np.asarray(gain, dtype=float).reshape(-1)
    msize = mu.nx * mu.ny
    if gain_flat.size != msize:
        raise ValidationError("gain must cover the target point grid")
    if not np.all(np.isfinite(gain_flat)):
        raise ValidationError("gain entries must be finite")

    matrix = cost.matrix
    finite_mask = np.isfinite(matrix)
    cost_safe = np.where(finite_mask, matrix, 0.0)
    masses = mu.flat()
    for a in range(msize):
        if masses[a] > 0.0 and not finite_mask[a].any():
            raise EmptyFeasibleError(f"source point {a} has no finite-cost target")

    max_cost = cost.max_finite()
    tie_tol = 1e-12 * (1.0 + abs(float(np.abs(gain_flat).max())))

    def distortion_of(sel):
        return float(np.sum(masses * cost_safe[np.arange(msize), sel]))

    sel0 = _greedy_selection(gain_flat, cost_safe, finite_mask, 0.0, tie_tol)
    if distortion_of(sel0) <= epsilon + 1e-15:
        return _assemble(mu, cost_safe, gain_flat, sel0, sel0, 0.0, 0.0, epsilon)

    lam_hi = 1.0
    for _ in range(80):
        sel_hi = _greedy_selection(gain_flat, cost_safe, finite_mask, lam_hi, tie_tol)
        if distortion_of(sel_hi) <= epsilon:
            break
        lam_hi *= 2.0
    else:
        raise BisectionStallError("no multiplier satisfies the distortion budget")
    lam_lo = 0.0
    while lam_hi - lam_lo > 1e-12 * max(1.0, lam_hi):
        mid = 0.5 * (lam_lo + lam_hi)
        sel = _greedy_selection(gain_flat, cost_safe, finite_mask, mid, tie_tol)
        if distortion_of(sel) <= epsilon:
            lam_hi = mid
        else:
            lam_lo = mid

    bracket = lam_hi - lam_lo
    mix_tol = max(2.0 * bracket * (1.0 + max_cost), tie_tol)
    score = np.where(finite_mask, gain_flat[None, :] - lam_hi * cost_safe, -np.inf)
    best = score.max(axis=1)
    tied = score >= (best[:, None] - mix_tol)
    cheap_key = np.where(tied, cost_safe, np.inf)
    cheap = np.argmin(cheap_key, axis=1)
    dear_key = np.where(tied, cost_safe, -np.inf)
    dear = np.argmax(dear_key, axis=1)
    return _assemble(mu, cost_safe, gain_flat, cheap, dear, lam_hi, bracket, epsilon)


def _assemble(mu, matrix, gain_flat, cheap, dear, lam, bracket, epsilon):
    msize = mu.nx * mu.ny
    masses = mu.flat()
    idx = np.arange(msize)
    plan = np.zeros((msize, msize))
    used = float(np.sum(masses * matrix[idx, cheap]))
    np.add.at(plan, (idx, cheap), masses)
    if lam > 0.0:
        # Walk rows toward their dearer tied target until the budget binds.
        for a in range(msize):
            if masses[a] <= 0.0 or dear[a] == cheap[a]:
                continue
            step = masses[a] * (matrix[a, dear[a]] - matrix[a, cheap[a]])
            if step <= 0.0:
                continue
            room = epsilon - used
            if room <= 0.0:
                break
            theta = min(1.0, room / step)
            move = theta * masses[a]
            plan[a, cheap[a]] -= move
            plan[a, dear[a]] += move
            used += theta * step
            if theta < 1.0:
                break
    achieved = float(np.sum(plan * matrix))
    objective = float(np.sum(plan * gain_flat[None, :]))
    if achieved > epsilon + 1e-9:
        raise BisectionStallError("budget violated after mixing")
    coupling = Coupling(msize, msize, np.maximum(plan, 0.0))
    return OracleResult(coupling, float(lam), objective, achieved)
