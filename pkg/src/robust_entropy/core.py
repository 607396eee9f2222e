"""Finite-alphabet probability objects and information measures.

All entropies and losses are measured in nats. The types here are immutable
after construction and every operation is a pure function, so everything in
this module is safe to share across threads or processes.

Conventions:

- A joint distribution over ``X x Y`` is stored as an ``(nx, ny)`` matrix.
- Points of the product alphabet are flattened row-major: ``p = x * ny + y``.
- ``0 * ln 0 == 0`` everywhere; assigning probability zero to an outcome that
  actually occurs yields an infinite loss rather than an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "SUM_TOL",
    "ZERO_MARGINAL_TOL",
    "RobustEntropyError",
    "ValidationError",
    "InfeasibleError",
    "NotConvergedError",
    "NumericalDegeneracyError",
    "EnumerationTooLargeError",
    "ZeroMassPolicy",
    "JointDistribution",
    "DecisionRule",
    "Channel",
    "GroundCost",
    "marginal_x",
    "marginal_y",
    "posterior",
    "conditional_entropy",
    "entropy",
    "cross_entropy_loss",
    "push_forward",
    "expected_distortion",
    "mutual_information_yz",
]

# Absolute tolerance on probability sums at construction. Inputs outside this
# tolerance are rejected, never silently renormalized.
SUM_TOL = 1e-12

# Marginal mass below which a conditioning point is treated as uncovered.
ZERO_MARGINAL_TOL = 1e-12


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class RobustEntropyError(Exception):
    """Base class for all library errors."""


class ValidationError(RobustEntropyError, ValueError):
    """Inputs violate a documented contract (domain, shape, schema)."""


class InfeasibleError(RobustEntropyError):
    """The requested feasible set is empty."""


class NotConvergedError(RobustEntropyError):
    """An iterative solver exhausted its budget without certifying optimality."""


class NumericalDegeneracyError(RobustEntropyError):
    """A pivoting method failed to make progress after its fallbacks."""


class EnumerationTooLargeError(RobustEntropyError):
    """An exhaustive enumeration would exceed its guard bound."""


# ---------------------------------------------------------------------------
# Validation helpers
# ---------------------------------------------------------------------------


def _as_readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


def _require_matrix(a, shape: tuple[int, ...], name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.shape != shape:
        raise ValidationError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite")
    return arr


def _require_positive_int(n, name: str) -> int:
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
        raise ValidationError(f"{name} must be an integer, got {type(n).__name__}")
    if n < 1:
        raise ValidationError(f"{name} must be >= 1, got {n}")
    return int(n)


class ZeroMassPolicy(Enum):
    """How :func:`posterior` fills rows at zero-mass conditioning points.

    ``UNIFORM`` fills uncovered rows with the uniform distribution.
    ``FLAGGED`` fills the same placeholder rows but signals that the caller
    intends to treat them as undefined; the coverage mask identifies them
    either way.
    """

    UNIFORM = "uniform"
    FLAGGED = "flagged"


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JointDistribution:
    """Probability mass matrix over a finite product alphabet ``X x Y``.

    Attributes:
        nx: alphabet size of the observation variable, >= 1.
        ny: alphabet size of the label variable, >= 1.
        mass: ``(nx, ny)`` matrix of nonnegative reals summing to 1 within
            ``SUM_TOL``.
    """

    nx: int
    ny: int
    mass: np.ndarray

    def __post_init__(self) -> None:
        nx = _require_positive_int(self.nx, "nx")
        ny = _require_positive_int(self.ny, "ny")
        mass = _require_matrix(self.mass, (nx, ny), "mass")
        if np.any(mass < 0.0):
            raise ValidationError("mass entries must be >= 0")
        total = float(mass.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise ValidationError(f"mass must sum to 1 within {SUM_TOL}, got {total!r}")
        object.__setattr__(self, "nx", nx)
        object.__setattr__(self, "ny", ny)
        object.__setattr__(self, "mass", _as_readonly(mass))

    @staticmethod
    def from_mass(mass) -> "JointDistribution":
        arr = np.asarray(mass, dtype=float)
        if arr.ndim != 2:
            raise ValidationError("mass must be a 2-D matrix")
        return JointDistribution(arr.shape[0], arr.shape[1], arr)

    @staticmethod
    def uniform(nx: int, ny: int) -> "JointDistribution":
        return JointDistribution(nx, ny, np.full((nx, ny), 1.0 / (nx * ny)))

    def flat(self) -> np.ndarray:
        """Row-major flattening of the mass matrix (point ``p = x*ny + y``)."""
        return self.mass.reshape(-1)


@dataclass(frozen=True)
class DecisionRule:
    """Conditional mass ``q(y | x)``: a soft classifier over the label alphabet.

    Every row of ``cond`` is a distribution over Y (sums to 1 within
    ``SUM_TOL``, entries in [0, 1]).
    """

    nx: int
    ny: int
    cond: np.ndarray

    def __post_init__(self) -> None:
        nx = _require_positive_int(self.nx, "nx")
        ny = _require_positive_int(self.ny, "ny")
        cond = _require_matrix(self.cond, (nx, ny), "cond")
        if np.any(cond < 0.0) or np.any(cond > 1.0 + SUM_TOL):
            raise ValidationError("cond entries must lie in [0, 1]")
        rows = cond.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > SUM_TOL):
            bad = int(np.argmax(np.abs(rows - 1.0)))
            raise ValidationError(
                f"row {bad} of cond sums to {rows[bad]!r}, must be 1 within {SUM_TOL}"
            )
        object.__setattr__(self, "nx", nx)
        object.__setattr__(self, "ny", ny)
        object.__setattr__(self, "cond", _as_readonly(cond))

    @staticmethod
    def uniform(nx: int, ny: int) -> "DecisionRule":
        return DecisionRule(nx, ny, np.full((nx, ny), 1.0 / ny))


@dataclass(frozen=True)
class Channel:
    """Conditional mass ``P(z | x, y)``: a mixed (randomized) perturbation.

    ``cond`` has shape ``(nx, ny, nz)`` and every ``(x, y)`` slice is a
    distribution over Z.
    """

    nx: int
    ny: int
    nz: int
    cond: np.ndarray

    def __post_init__(self) -> None:
        nx = _require_positive_int(self.nx, "nx")
        ny = _require_positive_int(self.ny, "ny")
        nz = _require_positive_int(self.nz, "nz")
        cond = np.asarray(self.cond, dtype=float)
        if cond.shape != (nx, ny, nz):
            raise ValidationError(f"cond must have shape {(nx, ny, nz)}, got {cond.shape}")
        if not np.all(np.isfinite(cond)):
            raise ValidationError("cond must be finite")
        if np.any(cond < 0.0) or np.any(cond > 1.0 + SUM_TOL):
            raise ValidationError("cond entries must lie in [0, 1]")
        slices = cond.sum(axis=2)
        if np.any(np.abs(slices - 1.0) > SUM_TOL):
            x, y = np.unravel_index(int(np.argmax(np.abs(slices - 1.0))), slices.shape)
            raise ValidationError(
                f"slice ({x},{y}) of cond sums to {slices[x, y]!r}, must be 1 within {SUM_TOL}"
            )
        object.__setattr__(self, "nx", nx)
        object.__setattr__(self, "ny", ny)
        object.__setattr__(self, "nz", nz)
        object.__setattr__(self, "cond", _as_readonly(cond))

    @staticmethod
    def identity(nx: int, ny: int) -> "Channel":
        cond = np.zeros((nx, ny, nx))
        for x in range(nx):
            cond[x, :, x] = 1.0
        return Channel(nx, ny, nx, cond)


_COST_KINDS = ("explicit", "absolute-difference", "squared-difference", "hamming")


@dataclass(frozen=True)
class GroundCost:
    """Cost on pairs of ``(x, y)`` points, possibly with infinite entries.

    ``matrix`` is indexed by flattened points (``p = x*ny + y``) on both axes.
    A label-preserving cost is infinite whenever the labels differ and equals
    the base feature cost ``base[x, x']`` when they agree, which restricts any
    finite-cost transport to feature perturbations. ``base`` is the feature
    cost ``d(x, x')`` when one is defined (always for the built-in kinds).

    Built-in kinds interpret alphabet symbols as integer coordinates
    ``0..nx-1``; the non-label-preserving variants charge the same functional
    applied to both coordinates (e.g. ``|x-x'| + |y-y'|``).
    """

    kind: str
    label_preserving: bool
    nx: int
    ny: int
    matrix: np.ndarray
    base: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in _COST_KINDS:
            raise ValidationError(f"kind must be one of {_COST_KINDS}, got {self.kind!r}")
        nx = _require_positive_int(self.nx, "nx")
        ny = _require_positive_int(self.ny, "ny")
        n = nx * ny
        matrix = np.asarray(self.matrix, dtype=float)
        if matrix.shape != (n, n):
            raise ValidationError(f"matrix must have shape {(n, n)}, got {matrix.shape}")
        if np.any(np.isnan(matrix)):
            raise ValidationError("matrix entries must not be NaN")
        finite = np.isfinite(matrix)
        if np.any(matrix[finite] < 0.0):
            raise ValidationError("finite cost entries must be >= 0")
        if np.any(np.diag(matrix) != 0.0):
            raise ValidationError("diagonal cost entries must be 0")
        base = self.base
        if base is not None:
            base = np.asarray(base, dtype=float)
            if base.shape != (nx, nx):
                raise ValidationError(f"base must have shape {(nx, nx)}, got {base.shape}")
            if not np.all(np.isfinite(base)) or np.any(base < 0.0):
                raise ValidationError("base entries must be finite and >= 0")
            if np.any(np.diag(base) != 0.0):
                raise ValidationError("diagonal base entries must be 0")
        if self.label_preserving:
            if base is None:
                raise ValidationError("label-preserving costs require a base feature cost")
            expected = GroundCost._lift_label_preserving(base, ny)
            if not np.array_equal(matrix, expected):
                raise ValidationError(
                    "label-preserving matrix must be +inf across labels and the base cost within"
                )
        object.__setattr__(self, "nx", nx)
        object.__setattr__(self, "ny", ny)
        object.__setattr__(self, "matrix", _as_readonly(matrix))
        object.__setattr__(self, "base", None if base is None else _as_readonly(base))

    # -- constructors --------------------------------------------------

    @staticmethod
    def _build(kind: str, nx: int, ny: int, label_preserving: bool) -> "GroundCost":
        coords = np.arange(nx, dtype=float)
        if kind == "absolute-difference":
            base = np.abs(np.subtract.outer(coords, coords))
        elif kind == "squared-difference":
            base = np.square(np.subtract.outer(coords, coords))
        elif kind == "hamming":
            base = 1.0 - np.eye(nx)
        else:  # pragma: no cover - guarded by callers
            raise ValidationError(f"cannot build kind {kind!r}")
        if label_preserving:
            matrix = GroundCost._lift_label_preserving(base, ny)
        else:
            ycoords = np.arange(ny, dtype=float)
            if kind == "absolute-difference":
                ybase = np.abs(np.subtract.outer(ycoords, ycoords))
            elif kind == "squared-difference":
                ybase = np.square(np.subtract.outer(ycoords, ycoords))
            else:
                ybase = 1.0 - np.eye(ny)
            # (nx, ny, nx, ny) tensor of pairwise point costs, flattened row-major.
            matrix = (base[:, None, :, None] + ybase[None, :, None, :]).reshape(nx * ny, nx * ny)
            if kind == "hamming":
                # Hamming on points: 1 unless both coordinates agree.
                matrix = (matrix > 0.0).astype(float)
        return GroundCost(kind, label_preserving, nx, ny, matrix, base)

    @staticmethod
    def _lift_label_preserving(base: np.ndarray, ny: int) -> np.ndarray:
        nx = base.shape[0]
        same_label = np.equal.outer(np.tile(np.arange(ny), nx), np.tile(np.arange(ny), nx))
        lifted = np.repeat(np.repeat(base, ny, axis=0), ny, axis=1)
        return np.where(same_label, lifted, np.inf)

    @staticmethod
    def absolute_difference(nx: int, ny: int, label_preserving: bool = True) -> "GroundCost":
        return GroundCost._build("absolute-difference", nx, ny, label_preserving)

    @staticmethod
    def squared_difference(nx: int, ny: int, label_preserving: bool = True) -> "GroundCost":
        return GroundCost._build("squared-difference", nx, ny, label_preserving)

    @staticmethod
    def hamming(nx: int, ny: int, label_preserving: bool = True) -> "GroundCost":
        return GroundCost._build("hamming", nx, ny, label_preserving)

    @staticmethod
    def from_base(base, ny: int) -> "GroundCost":
        """Label-preserving explicit cost from a feature cost matrix."""
        base = np.asarray(base, dtype=float)
        if base.ndim != 2 or base.shape[0] != base.shape[1]:
            raise ValidationError("base must be a square matrix")
        nx = base.shape[0]
        matrix = GroundCost._lift_label_preserving(base, ny)
        return GroundCost("explicit", True, nx, ny, matrix, base)

    @staticmethod
    def from_full(matrix, nx: int, ny: int) -> "GroundCost":
        """Explicit cost over flattened point pairs, labels free to move."""
        return GroundCost("explicit", False, nx, ny, np.asarray(matrix, dtype=float), None)

    # -- helpers ---------------------------------------------------------

    def max_finite(self) -> float:
        finite = self.matrix[np.isfinite(self.matrix)]
        return float(finite.max()) if finite.size else 0.0


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def marginal_x(p: JointDistribution) -> np.ndarray:
    """Marginal mass of the observation variable: entry ``x`` is ``sum_y p(x, y)``."""
    return p.mass.sum(axis=1)


def marginal_y(p: JointDistribution) -> np.ndarray:
    """Marginal mass of the label variable."""
    return p.mass.sum(axis=0)


def posterior(
    p: JointDistribution,
    zero_mass_policy: ZeroMassPolicy = ZeroMassPolicy.UNIFORM,
) -> tuple[DecisionRule, np.ndarray]:
    """Posterior label distribution per observation point, with coverage.

    Returns a rule whose row ``x`` is ``p(x, .) / p(x)`` wherever the marginal
    exceeds ``ZERO_MARGINAL_TOL`` and a boolean mask marking those covered
    points. Uncovered rows are filled uniformly (see :class:`ZeroMassPolicy`).
    """
    if not isinstance(zero_mass_policy, ZeroMassPolicy):
        raise ValidationError("zero_mass_policy must be a ZeroMassPolicy")
    px = marginal_x(p)
    covered = px > ZERO_MARGINAL_TOL
    cond = np.full((p.nx, p.ny), 1.0 / p.ny)
    if np.any(covered):
        rows = p.mass[covered] / px[covered, None]
        # Guard against accumulated rounding so rows re-validate exactly.
        rows = rows / rows.sum(axis=1, keepdims=True)
        cond[covered] = rows
    return DecisionRule(p.nx, p.ny, cond), covered


def entropy(weights: np.ndarray) -> float:
    """Shannon entropy of a nonnegative vector in nats, with 0 ln 0 = 0."""
    w = np.asarray(weights, dtype=float)
    pos = w[w > 0.0]
    return float(-np.sum(pos * np.log(pos)))


def conditional_entropy(p: JointDistribution) -> float:
    """``H(Y | X)`` in nats: ``-sum p(x,y) ln(p(x,y) / p(x))`` over positive mass."""
    px = marginal_x(p)
    mask = p.mass > 0.0
    vals = p.mass[mask]
    denom = np.broadcast_to(px[:, None], p.mass.shape)[mask]
    return float(-np.sum(vals * np.log(vals / denom)))


def cross_entropy_loss(p: JointDistribution, q: DecisionRule) -> float:
    """Expected cross-entropy loss ``E_p[-ln q(Y|X)]`` in nats, possibly +inf.

    Equals ``conditional_entropy(p)`` plus a KL term; infinite exactly when
    some ``p(x, y) > 0`` meets ``q(y|x) == 0``.
    """
    if (p.nx, p.ny) != (q.nx, q.ny):
        raise ValidationError("p and q must share alphabets")
    mask = p.mass > 0.0
    qv = q.cond[mask]
    if np.any(qv == 0.0):
        return math.inf
    return float(-np.sum(p.mass[mask] * np.log(qv)))


def push_forward(mu: JointDistribution, k: Channel) -> JointDistribution:
    """Joint distribution of ``(Z, Y)`` after passing ``mu`` through channel ``k``."""
    if (mu.nx, mu.ny) != (k.nx, k.ny):
        raise ValidationError("mu and k must share alphabets")
    out = np.einsum("xy,xyz->zy", mu.mass, k.cond)
    out = np.maximum(out, 0.0)
    out = out / out.sum()
    return JointDistribution(k.nz, mu.ny, out)


def expected_distortion(mu: JointDistribution, k: Channel, cost: GroundCost) -> float:
    """Average feature distortion ``E[d(X, Z)]`` of a channel against ``mu``."""
    if cost.base is None:
        raise ValidationError("expected_distortion needs a feature (base) cost")
    if (mu.nx, mu.ny) != (k.nx, k.ny) or cost.nx != mu.nx:
        raise ValidationError("mu, k and cost must share alphabets")
    if k.nz != cost.base.shape[1]:
        raise ValidationError("channel output alphabet must match the cost")
    return float(np.einsum("xy,xyz,xz->", mu.mass, k.cond, cost.base))


def mutual_information_yz(mu: JointDistribution) -> float:
    """``I(Y; Z) = H(Y) - H(Y|Z)`` in nats for a joint over ``Z x Y``."""
    return entropy(marginal_y(mu)) - conditional_entropy(mu)
