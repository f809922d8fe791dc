"""Splitting steppers, split-solution evolution and numerical probes.

A split problem is a pair of semigroups ``T(t) = exp(tA)`` and ``S(t) = exp(tB)``
approximating ``U(t) = exp(t(A + B))``. One step of length ``h`` is

* sequential: ``S(h) T(h)``
* Strang: ``T(h/2) S(h) T(h/2)``
* weighted: ``theta * S(h) T(h) + (1 - theta) * T(h) S(h)``

and the split solution at time ``t`` is ``[F(t/n)]^n x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .linalg import EXPLICIT_NORM_MAX_DIM, expm, operator_norm, power_norm

__all__ = [
    "Generator",
    "Semigroup",
    "Scheme",
    "SEQUENTIAL",
    "STRANG",
    "EvolveSpec",
    "StabilityEstimate",
    "ExactSolution",
    "as_vector",
    "evaluate_semigroup",
    "split_step",
    "split_evolve",
    "step_matrix",
    "consistency_defect",
    "stability_scan",
    "fit_envelope",
    "order_estimate",
    "fit_order",
]


def as_vector(x, dim=None):
    """Validate ``x`` as a finite 1-d float vector, optionally of length ``dim``."""
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"dimension mismatch: vector has length {v.shape[0]}, operator acts on {dim}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


class Generator:
    """Finite-dimensional linear operator standing in for a semigroup generator.

    Either a dense ``matrix`` or a structured ``diagonal``; exactly one is given.
    """

    def __init__(self, matrix=None, *, diagonal=None, name=""):
        if (matrix is None) == (diagonal is None):
            raise ValueError("give exactly one of matrix or diagonal")
        if matrix is not None:
            matrix = np.array(matrix, dtype=float)
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] == 0:
                raise ValueError(f"generator matrix must be square and non-empty, got {matrix.shape}")
            if not np.all(np.isfinite(matrix)):
                raise ValueError("generator matrix has non-finite entries")
            matrix.setflags(write=False)
        else:
            diagonal = np.array(diagonal, dtype=float)
            if diagonal.ndim != 1 or diagonal.size == 0:
                raise ValueError("diagonal must be a non-empty 1-d array")
            if not np.all(np.isfinite(diagonal)):
                raise ValueError("diagonal has non-finite entries")
            diagonal.setflags(write=False)
        self._matrix = matrix
        self.diagonal = diagonal
        self.name = name

    @classmethod
    def zero(cls, dim, name="0"):
        return cls(diagonal=np.zeros(dim), name=name)

    @property
    def dim(self):
        return self._matrix.shape[0] if self._matrix is not None else self.diagonal.shape[0]

    @property
    def is_diagonal(self):
        return self.diagonal is not None

    @property
    def matrix(self):
        """Dense matrix of the operator (built on demand for the diagonal form)."""
        if self._matrix is not None:
            return self._matrix
        return np.diag(self.diagonal)

    def apply(self, x):
        x = as_vector(x, self.dim)
        if self.diagonal is not None:
            return self.diagonal * x
        return self._matrix @ x

    def __add__(self, other):
        if not isinstance(other, Generator):
            return NotImplemented
        if other.dim != self.dim:
            raise ValueError(f"cannot add generators of dimension {self.dim} and {other.dim}")
        if self.is_diagonal and other.is_diagonal:
            return Generator(diagonal=self.diagonal + other.diagonal, name=f"{self.name}+{other.name}")
        return Generator(self.matrix + other.matrix, name=f"{self.name}+{other.name}")

    def __repr__(self):
        kind = "diagonal" if self.is_diagonal else "dense"
        return f"Generator({self.name!r}, dim={self.dim}, {kind})"


class Semigroup:
    """Evaluator of ``exp(tG) x``.

    ``mode="dense"`` uses the scaling-and-squaring matrix exponential and
    caches one matrix per distinct ``t``. ``mode="closed-form"`` calls
    ``rule(t, x)`` (and ``adjoint_rule`` for norm estimates on large
    dimensions); a diagonal generator gets its exact rule automatically.
    """

    def __init__(self, generator, mode=None, rule=None, adjoint_rule=None, growth_bound=None):
        self.generator = generator
        if mode is None:
            mode = "closed-form" if (rule is not None or generator.is_diagonal) else "dense"
        if mode not in ("dense", "closed-form"):
            raise ValueError(f"unknown semigroup mode {mode!r}")
        if mode == "closed-form" and rule is None:
            if not generator.is_diagonal:
                raise ValueError("closed-form mode needs a rule for non-diagonal generators")
            d = generator.diagonal
            rule = lambda t, x: np.exp(t * d) * x  # noqa: E731
            adjoint_rule = rule
        if growth_bound is not None:
            big_m, _ = growth_bound
            if big_m < 1:
                raise ValueError("growth bound constant M must be >= 1")
        self.mode = mode
        self.rule = rule
        self.adjoint_rule = adjoint_rule
        self.growth_bound = growth_bound
        self._cache = {}

    @property
    def dim(self):
        return self.generator.dim

    def matrix(self, t):
        """Dense ``exp(tG)``."""
        if t < 0:
            raise ValueError(f"semigroup time must be non-negative, got {t}")
        key = float(t)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        if t == 0:
            mat = np.eye(self.dim)
        elif self.mode == "dense":
            mat = expm(t * self.generator.matrix)
        else:
            mat = np.column_stack([self.rule(t, e) for e in np.eye(self.dim)])
        mat.setflags(write=False)
        self._cache[key] = mat
        return mat

    def __call__(self, t, x):
        return evaluate_semigroup(self, t, x)

    def adjoint(self):
        """Evaluator for the adjoint semigroup ``exp(t G^T)``."""
        if self.mode == "dense":
            return Semigroup(Generator(self.generator.matrix.T, name=f"{self.generator.name}^T"))
        if self.adjoint_rule is None:
            raise NotImplementedError("closed-form semigroup has no adjoint rule")
        return Semigroup(self.generator, mode="closed-form", rule=self.adjoint_rule, adjoint_rule=self.rule)


def evaluate_semigroup(sg, t, x):
    """Return ``exp(tG) x``; ``t = 0`` returns a copy of ``x`` exactly."""
    if t < 0:
        raise ValueError(f"semigroup time must be non-negative, got {t}")
    x = as_vector(x, sg.dim)
    if t == 0:
        return x.copy()
    if sg.mode == "closed-form":
        return np.asarray(sg.rule(t, x), dtype=float)
    return sg.matrix(t) @ x


@dataclass(frozen=True)
class Scheme:
    """Splitting scheme: ``"sequential"``, ``"strang"`` or ``"weighted"`` with ``theta``."""

    kind: str
    theta: float | None = None

    def __post_init__(self):
        if self.kind not in ("sequential", "strang", "weighted"):
            raise ValueError(f"unknown splitting scheme {self.kind!r}")
        if self.kind == "weighted":
            if self.theta is None or not (0.0 < self.theta < 1.0):
                raise ValueError(f"weighted splitting needs 0 < theta < 1, got {self.theta}")
        elif self.theta is not None:
            raise ValueError(f"{self.kind} splitting takes no theta")

    @classmethod
    def weighted(cls, theta):
        return cls("weighted", float(theta))

    @classmethod
    def parse(cls, label):
        """Parse ``"sequential"``, ``"strang"`` or ``"weighted(0.5)"``."""
        label = label.strip().lower()
        if label.startswith("weighted"):
            inner = label[len("weighted"):].strip()
            if not (inner.startswith("(") and inner.endswith(")")):
                raise ValueError(f"weighted scheme needs a theta, e.g. 'weighted(0.5)', got {label!r}")
            return cls.weighted(float(inner[1:-1]))
        return cls(label)

    @property
    def label(self):
        if self.kind == "weighted":
            return f"weighted({self.theta:g})"
        return self.kind

    @property
    def expected_order(self):
        """Classical order for matrix problems: 2 for Strang and theta = 1/2, else 1."""
        if self.kind == "strang" or (self.kind == "weighted" and self.theta == 0.5):
            return 2
        return 1

    def __str__(self):
        return self.label


SEQUENTIAL = Scheme("sequential")
STRANG = Scheme("strang")


@dataclass(frozen=True)
class EvolveSpec:
    """Fixed time level ``t_final`` reached in ``n`` splitting steps of size ``h``."""

    t_final: float
    n: int

    def __post_init__(self):
        if not (self.t_final >= 0 and math.isfinite(self.t_final)):
            raise ValueError(f"t_final must be finite and >= 0, got {self.t_final}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"number of steps must be a positive integer, got {self.n}")

    @property
    def h(self):
        return self.t_final / self.n


@dataclass(frozen=True)
class StabilityEstimate:
    """Fitted envelope ``M_hat * exp(omega_hat * tau)`` over scanned step counts.

    ``observations`` holds ``(k, n, tau, norm)`` rows with ``tau = k * t_final / n``.
    """

    M_hat: float
    omega_hat: float
    max_norm_observed: float
    grid: tuple
    t_final: float
    observations: tuple = field(repr=False, default=())

    @property
    def is_finite(self):
        return math.isfinite(self.M_hat) and math.isfinite(self.omega_hat)

    def envelope(self, tau):
        return self.M_hat * np.exp(self.omega_hat * np.asarray(tau))

    def dominates(self, rtol=1e-12):
        """True when every observation lies under the envelope."""
        return all(norm <= self.envelope(tau) * (1 + rtol) + rtol for _, _, tau, norm in self.observations)


def _check_pair(tsg, ssg):
    if tsg.dim != ssg.dim:
        raise ValueError(f"dimension mismatch between sub-semigroups: {tsg.dim} vs {ssg.dim}")


def split_step(scheme, tsg, ssg, h, x):
    """One splitting step of size ``h`` applied to ``x``; ``T`` acts first."""
    _check_pair(tsg, ssg)
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    x = as_vector(x, tsg.dim)
    if scheme.kind == "sequential":
        return evaluate_semigroup(ssg, h, evaluate_semigroup(tsg, h, x))
    if scheme.kind == "strang":
        y = evaluate_semigroup(tsg, h / 2, x)
        return evaluate_semigroup(tsg, h / 2, evaluate_semigroup(ssg, h, y))
    st = evaluate_semigroup(ssg, h, evaluate_semigroup(tsg, h, x))
    ts = evaluate_semigroup(tsg, h, evaluate_semigroup(ssg, h, x))
    return scheme.theta * st + (1.0 - scheme.theta) * ts


def split_evolve(scheme, tsg, ssg, spec, x):
    """Split solution ``[F(t/n)]^n x``."""
    x = as_vector(x, tsg.dim)
    if spec.t_final == 0:
        return x.copy()
    h = spec.h
    for _ in range(spec.n):
        x = split_step(scheme, tsg, ssg, h, x)
    return x


def step_matrix(scheme, tsg, ssg, h, variant="forward"):
    """Dense matrix of one step.

    ``variant`` selects the product whose powers are scanned for stability:
    ``"forward"`` is the scheme's own step, ``"reversed"`` swaps the roles of
    ``T`` and ``S``, and ``"strang-sym"`` is ``S(h/2) T(h) S(h/2)``. For the
    weighted scheme ``"reversed"`` gives ``theta T S + (1 - theta) S T``.
    """
    _check_pair(tsg, ssg)
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    t, s = tsg.matrix, ssg.matrix
    if variant == "strang-sym":
        return s(h / 2) @ t(h) @ s(h / 2)
    if variant not in ("forward", "reversed"):
        raise ValueError(f"unknown stability variant {variant!r}")
    if variant == "reversed":
        t, s = s, t
    if scheme.kind == "sequential":
        return s(h) @ t(h)
    if scheme.kind == "strang":
        return t(h / 2) @ s(h) @ t(h / 2)
    return scheme.theta * (s(h) @ t(h)) + (1.0 - scheme.theta) * (t(h) @ s(h))


def consistency_defect(scheme, tsg, ssg, usg, h, t_grid, x):
    """Largest local defect ``||(F(h) u(t) - u(t+h)) / h||`` over ``t_grid``."""
    t_grid = list(t_grid)
    if not t_grid:
        raise ValueError("t_grid is empty")
    worst = 0.0
    for t in t_grid:
        u = evaluate_semigroup(usg, t, x)
        defect = (split_step(scheme, tsg, ssg, h, u) - evaluate_semigroup(usg, t + h, x)) / h
        worst = max(worst, float(np.linalg.norm(defect)))
    return worst


def fit_envelope(taus, norms):
    """Canonical ``(M_hat, omega_hat)`` with ``M_hat * exp(omega_hat * tau) >= norm``.

    Minimising the growth rate with ``M`` free is unbounded below, so ``M`` is
    capped at ``max(1, max(norms))``: the smallest admissible ``omega`` is taken
    first at that cap, then ``M`` is shrunk to the smallest value that still
    dominates. For contractions this gives ``M_hat = 1``.
    """
    taus = np.asarray(taus, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if not np.all(np.isfinite(norms)):
        raise FloatingPointError("non-finite norm observation")
    if np.any(taus <= 0):
        raise ValueError("envelope fit needs positive times")
    cap = max(1.0, float(norms.max()))
    with np.errstate(divide="ignore"):
        omega = float(np.max((np.log(norms) - math.log(cap)) / taus))
    if not math.isfinite(omega):
        omega = 0.0  # all observed norms are zero
    big_m = max(1.0, float(np.max(norms * np.exp(-omega * taus))))
    return big_m, omega


def _product_norms(step_of_h, dim, n_values, t_final):
    """Yield ``(k, n, tau, ||F(t/n)^k||)`` for ``1 <= k <= n``."""
    for n in n_values:
        h = t_final / n
        if dim <= EXPLICIT_NORM_MAX_DIM:
            f = step_of_h(h)
            power = np.eye(dim)
            for k in range(1, n + 1):
                power = f @ power
                yield k, n, k * h, operator_norm(power)
        else:
            f = step_of_h(h)
            for k in range(1, n + 1):
                mv = lambda v, k=k: _repeat(f, v, k)  # noqa: E731
                rmv = lambda v, k=k: _repeat(f.T, v, k)  # noqa: E731
                yield k, n, k * h, power_norm(mv, rmv, dim)


def _repeat(mat, v, k):
    for _ in range(k):
        v = mat @ v
    return v


def stability_scan(scheme, tsg, ssg, t_final, n_max, variant="forward"):
    """Scan ``||[F(t/n)]^k||`` for ``1 <= k <= n <= n_max`` and fit an envelope.

    Weighted schemes scan both orderings and keep the larger norm per cell.
    """
    if int(n_max) != n_max or n_max < 1:
        raise ValueError(f"n_max must be a positive integer, got {n_max}")
    if not t_final > 0:
        raise ValueError(f"t_final must be positive, got {t_final}")
    _check_pair(tsg, ssg)
    n_values = range(1, int(n_max) + 1)
    variants = [variant]
    if scheme.kind == "weighted" and variant in ("forward", "reversed"):
        variants = ["forward", "reversed"]
    cells = {}
    for v in variants:
        rows = _product_norms(lambda h, v=v: step_matrix(scheme, tsg, ssg, h, v), tsg.dim, n_values, t_final)
        for k, n, tau, norm in rows:
            if not math.isfinite(norm):
                raise FloatingPointError(f"non-finite operator norm at k={k}, n={n}")
            cells[(k, n)] = (tau, max(norm, cells.get((k, n), (tau, 0.0))[1]))
    keys = sorted(cells)
    obs = tuple((k, n, cells[k, n][0], cells[k, n][1]) for k, n in keys)
    taus = [o[2] for o in obs]
    norms = [o[3] for o in obs]
    big_m, omega = fit_envelope(taus, norms)
    return StabilityEstimate(
        M_hat=big_m,
        omega_hat=omega,
        max_norm_observed=float(max(norms)),
        grid=tuple(keys),
        t_final=float(t_final),
        observations=obs,
    )


class ExactSolution(ValueError):
    """Raised when an error sequence is at rounding level and carries no order."""


def _validated_errors(errors, reference_norm):
    errors = sorted((int(n), float(e)) for n, e in errors)
    if len(errors) < 3:
        raise ValueError(f"order fit needs at least 3 points, got {len(errors)}")
    ns = np.array([n for n, _ in errors], dtype=float)
    es = np.array([e for _, e in errors])
    if np.any(np.diff(ns) <= 0):
        raise ValueError("n values must be strictly increasing")
    if not np.all(np.isfinite(es)) or np.any(es < 0):
        raise ValueError("errors must be finite and non-negative")
    floor = 1e2 * np.finfo(float).eps * reference_norm
    if np.any(es <= floor):
        raise ExactSolution(f"errors at or below {floor:.3g}: solution is exact to rounding")
    return ns, es


def fit_order(errors, reference_norm=1.0):
    """Least-squares order ``p`` of ``e_n ~ C n^-p`` and the RMS log residual."""
    ns, es = _validated_errors(errors, reference_norm)
    x = np.log(1.0 / ns)
    y = np.log(es)
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return float(slope), residual


def order_estimate(errors: Sequence[tuple[int, float]], reference_norm: float = 1.0) -> float:
    """Empirical convergence order from ``(n, e_n)`` pairs.

    Raises:
        ExactSolution: if any error is below ``100 * eps * reference_norm``.
    """
    return fit_order(errors, reference_norm)[0]

