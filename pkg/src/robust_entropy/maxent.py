"""Maximum conditional entropy over convex perturbation sets.

The solver is Frank-Wolfe with exact linear oracles. Away steps over the
collected atom set are used alongside the classic step so that optima on
low-dimensional faces are reached at solver tolerance rather than at the
classic O(1/t) crawl; the reported certificate is always the plain
Frank-Wolfe gap, which upper-bounds the suboptimality of a concave
maximization regardless of the step variant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from robust_entropy.core import (
    Channel,
    GroundCost,
    JointDistribution,
    NotConvergedError,
    ValidationError,
    conditional_entropy,
    marginal_y,
)
from robust_entropy.transport import (
    constrained_linear_oracle,
    wasserstein_distance,
    _solve_transport,
)

__all__ = [
    "CONSTRAINT_KINDS",
    "ConstraintSpec",
    "SolverOptions",
    "SolveReport",
    "PenalizedResult",
    "entropy_gradient",
    "max_conditional_entropy",
    "penalized_solve",
    "saturation_budget",
]

CONSTRAINT_KINDS = (
    "wasserstein_ball",
    "expected_distortion_channel",
    "max_distortion_channel",
)


@dataclass(frozen=True)
class ConstraintSpec:
    """A convex set of joint distributions reachable from a clean reference.

    ``wasserstein_ball`` is the transport ball of radius ``epsilon`` around
    ``reference``; the two channel kinds restrict the adversary to feature
    perturbations (label-preserving cost) under an expected or an almost-sure
    distortion budget.
    """

    kind: str
    epsilon: float
    cost: GroundCost
    reference: JointDistribution

    def __post_init__(self) -> None:
        if self.kind not in CONSTRAINT_KINDS:
            raise ValidationError(f"kind must be one of {CONSTRAINT_KINDS}, got {self.kind!r}")
        eps = self.epsilon
        if not (isinstance(eps, (int, float)) and math.isfinite(eps) and eps >= 0.0):
            raise ValidationError("epsilon must be a finite real >= 0")
        if (self.cost.nx, self.cost.ny) != (self.reference.nx, self.reference.ny):
            raise ValidationError("cost and reference must share alphabets")
        if self.kind != "wasserstein_ball" and not self.cost.label_preserving:
            raise ValidationError("channel constraint kinds require a label-preserving cost")
        object.__setattr__(self, "epsilon", float(eps))


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 5000
    fw_gap_tolerance: float = 1e-7
    gradient_clamp: float = 1e-12
    line_search: str = "golden"
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if not (self.fw_gap_tolerance > 0.0):
            raise ValidationError("fw_gap_tolerance must be > 0")
        if not (0.0 < self.gradient_clamp <= 1e-3):
            raise ValidationError("gradient_clamp must lie in (0, 1e-3]")
        if self.line_search not in ("golden", "harmonic"):
            raise ValidationError("line_search must be 'golden' or 'harmonic'")


@dataclass(frozen=True)
class SolveReport:
    """Certified output of a maximum conditional entropy solve.

    ``h_star`` is the entropy actually achieved by ``nu_star`` (a lower bound
    on the optimum) and ``fw_gap`` certifies that the optimum exceeds it by at
    most that much.
    """

    h_star: float
    nu_star: JointDistribution
    channel: Channel | None
    fw_gap: float
    iterations: int
    multiplier: float
    converged: bool

    def __post_init__(self) -> None:
        if self.fw_gap < -1e-10:
            raise ValidationError("fw_gap must be >= -1e-10")
        if abs(self.h_star - conditional_entropy(self.nu_star)) > 1e-12:
            raise ValidationError("h_star must equal the entropy of nu_star")


@dataclass(frozen=True)
class PenalizedResult:
    """Minimizer data for the transport-penalized entropy objective."""

    nu: JointDistribution
    transport_value: float
    entropy: float
    degenerate_duals: bool
    fw_gap: float
    iterations: int


# ---------------------------------------------------------------------------
# Entropy machinery on raw arrays
# ---------------------------------------------------------------------------


def _array_conditional_entropy(arr: np.ndarray) -> float:
    a = np.maximum(arr, 0.0)
    ax = a.sum(axis=1)
    mask = a > 0.0
    vals = a[mask]
    denom = np.broadcast_to(ax[:, None], a.shape)[mask]
    return float(-np.sum(vals * np.log(vals / denom)))


def entropy_gradient(nu: JointDistribution | np.ndarray, delta: float = 1e-12) -> np.ndarray:
    """Clamped ascent direction of ``H(Y|X)``: ``-ln`` of the posterior.

    Entry ``(x, y)`` is ``-ln(max(nu(x,y), delta * nu(x)) / max(nu(x), delta))``,
    which equals the exact first variation on interior points and stays
    bounded by ``ln(1/delta)`` on the simplex boundary.
    """
    if not (0.0 < delta <= 1e-3):
        raise ValidationError("delta must lie in (0, 1e-3]")
    arr = nu.mass if isinstance(nu, JointDistribution) else np.asarray(nu, dtype=float)
    ax = np.maximum(arr.sum(axis=1), 0.0)
    num = np.maximum(arr, delta * ax[:, None])
    den = np.maximum(ax, delta)[:, None]
    num = np.maximum(num, delta * den)  # zero-mass rows saturate at the clamp bound
    return -np.log(num / den)


def _golden_section_argmax(f, lo: float, hi: float, iters: int = 48) -> tuple[float, float]:
    """Exact-style line search for a concave 1-D function on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    mid = 0.5 * (a + b)
    best_g, best_v = lo, f(lo)
    for g in (mid, hi):
        v = f(g)
        if v > best_v:
            best_g, best_v = g, v
    return best_g, best_v


class _FrankWolfeState:
    """Iterate maintained as an explicit convex combination of atoms."""

    def __init__(self, start: np.ndarray):
        self.atoms: list[np.ndarray] = [start.copy()]
        self.weights: list[float] = [1.0]
        self._index: dict[bytes, int] = {start.tobytes(): 0}

    def point(self) -> np.ndarray:
        out = np.zeros_like(self.atoms[0])
        for w, a in zip(self.weights, self.atoms):
            out += w * a
        return out

    def fw_step(self, vertex: np.ndarray, gamma: float) -> None:
        self.weights = [w * (1.0 - gamma) for w in self.weights]
        key = vertex.tobytes()
        idx = self._index.get(key)
        if idx is None:
            self.atoms.append(vertex.copy())
            self.weights.append(gamma)
            self._index[key] = len(self.atoms) - 1
        else:
            self.weights[idx] += gamma
        self._prune()

    def away_step(self, idx: int, gamma: float) -> None:
        self.weights = [w * (1.0 + gamma) for w in self.weights]
        self.weights[idx] -= gamma
        self._prune()

    def _prune(self) -> None:
        keep = [k for k, w in enumerate(self.weights) if w > 1e-15]
        if len(keep) != len(self.weights):
            self.atoms = [self.atoms[k] for k in keep]
            self.weights = [self.weights[k] for k in keep]
            self._index = {a.tobytes(): k for k, a in enumerate(self.atoms)}
        total = sum(self.weights)
        if abs(total - 1.0) > 1e-13:
            self.weights = [w / total for w in self.weights]


def _frank_wolfe_maximize(objective, gradient, lmo, start, opts: SolverOptions):
    """Shared ascent loop. ``lmo(gradient_matrix)`` returns ``(vertex, multiplier)``.

    Returns ``(point, fw_gap, iterations, multiplier, converged)``.
    """
    state = _FrankWolfeState(start)
    x = state.point()
    multiplier = 0.0
    fw_gap = math.inf
    stalls = 0
    iterations = 0
    for t in range(opts.max_iterations):
        iterations = t + 1
        g = gradient(x)
        s, multiplier = lmo(g)
        fw_gap = float(np.sum(g * (s - x)))
        if fw_gap <= opts.fw_gap_tolerance:
            return x, max(fw_gap, 0.0), iterations, multiplier, True
        use_away = False
        away_idx = 0
        if opts.line_search == "golden" and len(state.atoms) > 1:
            scores = [float(np.sum(g * a)) for a in state.atoms]
            away_idx = int(np.argmin(scores))
            away_gap = float(np.sum(g * x)) - scores[away_idx]
            use_away = away_gap > fw_gap
        if use_away:
            d = x - state.atoms[away_idx]
            w = state.weights[away_idx]
            gamma_max = min(w / (1.0 - w), 8.0) if w < 1.0 else 1.0
        else:
            d = s - x
            gamma_max = 1.0
        if opts.line_search == "harmonic":
            gamma = min(2.0 / (t + 2.0), gamma_max)
        else:
            gamma, _ = _golden_section_argmax(
                lambda c: objective(x + c * d), 0.0, gamma_max
            )
        if gamma <= 1e-15:
            stalls += 1
            if stalls >= 3:
                break
            continue
        stalls = 0
        if use_away:
            state.away_step(away_idx, gamma)
        else:
            state.fw_step(s, gamma)
        x = state.point()
    return x, max(fw_gap, 0.0), iterations, multiplier, False


# ---------------------------------------------------------------------------
# Feasible-set plumbing
# ---------------------------------------------------------------------------


def saturation_budget(mu: JointDistribution, cost: GroundCost) -> float:
    """Smallest expected feature distortion that lets the adversary collapse
    every observation onto one point, making Z independent of Y."""
    if cost.base is None:
        raise ValidationError("saturation budget needs a feature (base) cost")
    mu_x = mu.mass.sum(axis=1)
    return float(np.min(mu_x @ cost.base))


def _max_kind_allowed(spec: ConstraintSpec) -> np.ndarray:
    """Boolean (nx, nx) matrix: may x be perturbed to z under the budget."""
    return spec.cost.base <= spec.epsilon + 1e-15


def _max_kind_lmo(spec: ConstraintSpec):
    mu = spec.reference
    allowed = _max_kind_allowed(spec)
    nx, ny = mu.nx, mu.ny
    base = spec.cost.base

    def lmo(g: np.ndarray):
        vertex = np.zeros((nx, ny))
        for x in range(nx):
            zs = np.nonzero(allowed[x])[0]
            row = mu.mass[x]
            if not row.any():
                continue
            for y in np.nonzero(row > 0.0)[0]:
                scores = g[zs, y]
                best = scores.max()
                tied = zs[scores >= best - 1e-12 * (1.0 + abs(best))]
                z = tied[np.argmin(base[x, tied])]
                vertex[z, y] += row[y]
        return vertex, 0.0

    return lmo


def _ball_lmo(spec: ConstraintSpec):
    mu = spec.reference
    nx, ny = mu.nx, mu.ny

    def lmo(g: np.ndarray):
        res = constrained_linear_oracle(mu, spec.cost, spec.epsilon, g)
        vertex = res.coupling.col_sums().reshape(nx, ny)
        return vertex, res.multiplier

    return lmo


def _interior_start(spec: ConstraintSpec) -> np.ndarray:
    """Feasible warm start with a 1e-6 smear so the gradient starts finite."""
    mu = spec.reference
    nx, ny = mu.nx, mu.ny
    if spec.kind == "max_distortion_channel":
        allowed = _max_kind_allowed(spec)
        smear = np.zeros((nx, ny))
        for x in range(nx):
            zs = np.nonzero(allowed[x])[0]
            smear[zs] += mu.mass[x][None, :] / zs.size
        theta = 1e-6
    else:
        if spec.cost.label_preserving:
            smear = np.tile(marginal_y(mu) / nx, (nx, 1))
            reach = float(spec.cost.base.max())
        else:
            smear = np.full((nx, ny), 1.0 / (nx * ny))
            reach = spec.cost.max_finite()
        theta = min(1e-6, 0.5 * spec.epsilon / (1.0 + reach))
    return (1.0 - theta) * mu.mass + theta * smear


def _identity_feasible_only(spec: ConstraintSpec) -> bool:
    """True when the budget pins the feasible set to the reference itself."""
    if spec.epsilon > 0.0:
        return False
    matrix = spec.cost.matrix
    off = matrix[~np.eye(matrix.shape[0], dtype=bool)]
    return bool(np.all(off[np.isfinite(off)] > 0.0)) if off.size else True


def _saturated_solution(spec: ConstraintSpec) -> SolveReport | None:
    """Exact solution once the budget allows making Z independent of Y.

    The returned maximizer mixes a touch of every feasible collapse point so
    its observation support is as wide as the budget allows, keeping the
    extracted rule pinned at the label prior.
    """
    mu = spec.reference
    if not spec.cost.label_preserving:
        return None
    base = spec.cost.base
    nx, ny = mu.nx, mu.ny
    mu_x = mu.mass.sum(axis=1)
    mu_y = marginal_y(mu)
    if spec.kind == "max_distortion_channel":
        support = mu_x > 0.0
        worst = np.max(np.where(support[:, None], base, 0.0), axis=0)
        feasible = np.nonzero(worst <= spec.epsilon + 1e-15)[0]
        if feasible.size == 0:
            return None
        star = int(feasible[np.argmin(mu_x @ base[:, feasible])])
        others = feasible[feasible != star]
        theta = 1e-6 if others.size else 0.0
        weights = np.zeros(nx)
        weights[star] = 1.0 - theta
        if others.size:
            weights[others] = theta / others.size
    else:
        per_point = mu_x @ base
        eps_sat = float(per_point.min())
        if spec.epsilon < eps_sat:
            return None
        star = int(np.argmin(per_point))
        avg_cost = float(per_point.mean())
        room = max(spec.epsilon - eps_sat, 0.0)
        theta = min(1e-6, room / (avg_cost - eps_sat)) if avg_cost > eps_sat else 1e-6
        weights = np.full(nx, theta / nx)
        weights[star] += 1.0 - theta
    mass = np.outer(weights, mu_y)
    nu_star = JointDistribution(nx, ny, mass / mass.sum())
    channel = Channel(nx, ny, nx, np.broadcast_to(weights, (nx, ny, nx)).copy())
    return SolveReport(
        h_star=conditional_entropy(nu_star),
        nu_star=nu_star,
        channel=channel,
        fw_gap=0.0,
        iterations=0,
        multiplier=0.0,
        converged=True,
    )


def _extract_channel(spec: ConstraintSpec, nu_star: JointDistribution) -> Channel | None:
    """Recover an admissible channel transporting the reference onto nu_star."""
    mu = spec.reference
    nx, ny = mu.nx, mu.ny
    if spec.kind == "wasserstein_ball" and not spec.cost.label_preserving:
        return None
    if spec.kind == "max_distortion_channel":
        allowed = _max_kind_allowed(spec)
        same_label = np.equal.outer(
            np.tile(np.arange(ny), nx), np.tile(np.arange(ny), nx)
        )
        allowed_points = np.repeat(np.repeat(allowed, ny, axis=0), ny, axis=1) & same_label
        feas_cost = np.where(allowed_points, 0.0, np.inf)
        plan, _, _ = _solve_transport(mu.flat(), nu_star.flat(), feas_cost)
    else:
        _, coupling, _ = wasserstein_distance(mu, nu_star, spec.cost)
        plan = coupling.plan
    cond = np.zeros((nx, ny, nx))
    flat_mu = mu.flat()
    for x in range(nx):
        for y in range(ny):
            a = x * ny + y
            if flat_mu[a] > 1e-12:
                # label-preserving plans only move the feature coordinate
                cond[x, y] = plan[a].reshape(nx, ny)[:, y] / flat_mu[a]
                total = cond[x, y].sum()
                cond[x, y] = cond[x, y] / total if total > 0 else np.full(nx, 1.0 / nx)
            else:
                cond[x, y] = np.full(nx, 1.0 / nx)
    return Channel(nx, ny, nx, cond)


def max_conditional_entropy(
    spec: ConstraintSpec,
    opts: SolverOptions = SolverOptions(),
    *,
    initial: JointDistribution | None = None,
) -> SolveReport:
    """Maximize ``H(Y|X)`` over the constraint set by certified Frank-Wolfe.

    The report's ``h_star`` is achieved by ``nu_star``; concavity makes
    ``fw_gap`` an upper bound on the remaining suboptimality. ``initial``
    optionally warm-starts the ascent from a feasible point (useful when
    sweeping nested budgets).
    """
    mu = spec.reference
    if _identity_feasible_only(spec):
        return SolveReport(
            h_star=conditional_entropy(mu),
            nu_star=mu,
            channel=None if (spec.kind == "wasserstein_ball" and not spec.cost.label_preserving) else Channel.identity(mu.nx, mu.ny),
            fw_gap=0.0,
            iterations=0,
            multiplier=0.0,
            converged=True,
        )
    saturated = _saturated_solution(spec)
    if saturated is not None:
        return saturated

    lmo = _max_kind_lmo(spec) if spec.kind == "max_distortion_channel" else _ball_lmo(spec)
    start = initial.mass.copy() if initial is not None else _interior_start(spec)
    grad = lambda arr: entropy_gradient(arr, opts.gradient_clamp)
    x, fw_gap, iterations, multiplier, converged = _frank_wolfe_maximize(
        _array_conditional_entropy, grad, lmo, start, opts
    )
    cleaned = np.maximum(x, 0.0)
    nu_star = JointDistribution(mu.nx, mu.ny, cleaned / cleaned.sum())
    return SolveReport(
        h_star=conditional_entropy(nu_star),
        nu_star=nu_star,
        channel=_extract_channel(spec, nu_star),
        fw_gap=fw_gap,
        iterations=iterations,
        multiplier=multiplier,
        converged=converged,
    )


def penalized_solve(
    mu: JointDistribution,
    cost: GroundCost,
    lam: float,
    opts: SolverOptions = SolverOptions(),
) -> PenalizedResult:
    """Minimize ``W_d(nu, mu) - lam * H_nu(Y|X)`` over all joints.

    The transport term's gradient at ``nu`` is its Kantorovich potential
    toward ``mu``, so every iteration re-solves the transport problem; this is
    O(iterations x simplex) and intended for desk-scale alphabets. Raises
    :class:`NotConvergedError` when the gap tolerance is not reached.
    """
    if not (isinstance(lam, (int, float)) and lam > 0.0 and math.isfinite(lam)):
        raise ValidationError("lam must be a finite real > 0")
    if not np.all(np.isfinite(cost.matrix)):
        raise ValidationError("penalized_solve requires an all-finite cost")
    if (cost.nx, cost.ny) != (mu.nx, mu.ny):
        raise ValidationError("mu and cost must share alphabets")
    nx, ny = mu.nx, mu.ny
    n = nx * ny

    def as_joint(arr: np.ndarray) -> JointDistribution:
        a = np.maximum(arr, 0.0)
        return JointDistribution(nx, ny, a / a.sum())

    def objective(arr: np.ndarray) -> float:
        value, _, _ = wasserstein_distance(as_joint(arr), mu, cost)
        return -(value - lam * _array_conditional_entropy(arr))

    def gradient(arr: np.ndarray) -> np.ndarray:
        _, _, duals = wasserstein_distance(as_joint(arr), mu, cost)
        return -(duals.phi.reshape(nx, ny) - lam * entropy_gradient(arr, opts.gradient_clamp))

    def lmo(g: np.ndarray):
        flat = np.argmax(g.reshape(-1))
        vertex = np.zeros(n)
        vertex[flat] = 1.0
        return vertex.reshape(nx, ny), 0.0

    start = 0.5 * mu.mass + 0.5 * np.full((nx, ny), 1.0 / n)
    x, fw_gap, iterations, _, converged = _frank_wolfe_maximize(
        objective, gradient, lmo, start, opts
    )
    nu = as_joint(x)
    value, _, duals = wasserstein_distance(nu, mu, cost)
    if not converged:
        raise NotConvergedError(
            f"penalized solve stopped at gap {fw_gap:.3e} after {iterations} iterations"
        )
    return PenalizedResult(
        nu=nu,
        transport_value=value,
        entropy=_array_conditional_entropy(nu.mass),
        degenerate_duals=bool(duals.degenerate),
        fw_gap=fw_gap,
        iterations=iterations,
    )
