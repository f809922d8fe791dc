"""Projection pairs, approximate generators and two-index convergence.

A level ``m`` of an approximation consists of a projection pair
``P_m: X -> X_m``, ``J_m: X_m -> X`` with ``P_m J_m = I_m`` and generators
``A_m``, ``B_m`` on ``X_m``. The full space ``X`` is a fine reference grid;
approximate split solutions are ``J_m [F_m(t/n)]^n P_m x``.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import EvolveSpec, Generator, Semigroup, as_vector, split_evolve, split_step
from .linalg import operator_norm

__all__ = [
    "ProjectionPair",
    "ProjectionReport",
    "Level",
    "ApproximateFamily",
    "ErrorTable",
    "vector_norm",
    "restriction_pair",
    "periodic_grid_pair",
    "dirichlet_grid_pair",
    "conjugated_level",
    "verify_projection_pair",
    "jp_defect_ladder",
    "generator_consistency_defect",
    "trotter_kato_defect",
    "split_evolve_approx",
    "chernoff_consistency_defect",
    "chernoff_uniformity_spread",
    "two_index_error_table",
]


def vector_norm(v, ord=2):
    v = np.asarray(v)
    if ord == 2:
        return float(np.linalg.norm(v))
    if ord == np.inf:
        return float(np.max(np.abs(v))) if v.size else 0.0
    raise ValueError(f"unsupported norm {ord!r}")


class ProjectionPair:
    """Discretisation ``P`` (full -> approx) and interpolation ``J`` (approx -> full).

    ``bounds = (M_P, M_J)`` are the declared uniform norm bounds, measured in
    the induced ``norm`` (2 or ``np.inf``).
    """

    def __init__(self, P, J, bounds, norm=2, name=""):
        P = np.array(P, dtype=float)
        J = np.array(J, dtype=float)
        if P.ndim != 2 or J.ndim != 2 or P.shape != J.T.shape:
            raise ValueError(f"P and J shapes do not pair up: {P.shape} vs {J.shape}")
        if norm not in (2, np.inf):
            raise ValueError(f"unsupported norm {norm!r}")
        P.setflags(write=False)
        J.setflags(write=False)
        self.P = P
        self.J = J
        self.bounds = tuple(float(b) for b in bounds)
        self.norm = norm
        self.name = name

    @property
    def full_dim(self):
        return self.P.shape[1]

    @property
    def m(self):
        return self.P.shape[0]

    def project(self, x):
        return self.P @ as_vector(x, self.full_dim)

    def lift(self, y):
        return self.J @ as_vector(y, self.m)

    def measured_norms(self):
        return operator_norm(self.P, self.norm), operator_norm(self.J, self.norm)

    def __repr__(self):
        return f"ProjectionPair({self.name!r}, full_dim={self.full_dim}, m={self.m})"


def restriction_pair(full_dim, m):
    """Keep the first ``m`` coordinates; lift by zero padding."""
    if not 1 <= m <= full_dim:
        raise ValueError(f"need 1 <= m <= full_dim, got m={m}, full_dim={full_dim}")
    J = np.eye(full_dim, m)
    return ProjectionPair(J.T, J, bounds=(1.0, 1.0), norm=2, name=f"restriction[{m}]")


def _linear_weights(ratio):
    # weights of the left/right coarse node for each of the `ratio` fine points in a cell
    s = np.arange(ratio) / ratio
    return 1.0 - s, s


def _dirichlet_kernel(x, m):
    """Periodic cardinal function for trigonometric interpolation on ``m`` equispaced nodes."""
    x = np.asarray(x, dtype=float)
    total = np.ones_like(x)
    for k in range(1, (m - 1) // 2 + 1):
        total += 2.0 * np.cos(2 * np.pi * k * x)
    if m % 2 == 0:
        total += np.cos(np.pi * m * x)
    return total / m


def periodic_grid_pair(n_ref, m, interp="linear"):
    """Sampling / interpolation between periodic grids ``j/n_ref`` and ``j/m`` on [0, 1).

    ``n_ref`` must be a multiple of ``m`` so that coarse nodes are reference
    nodes. Norms are measured in the max norm: sampling and piecewise-linear
    interpolation both have norm 1; trigonometric interpolation is bounded
    by the Lebesgue constant of the reference grid, ``1 + (2/pi) log n_ref``.
    """
    if m < 1 or n_ref % m:
        raise ValueError(f"reference size {n_ref} must be a multiple of m={m}")
    ratio = n_ref // m
    P = np.zeros((m, n_ref))
    P[np.arange(m), np.arange(m) * ratio] = 1.0
    J = np.zeros((n_ref, m))
    if interp == "linear":
        left, right = _linear_weights(ratio)
        for j in range(m):
            rows = j * ratio + np.arange(ratio)
            J[rows, j] += left
            J[rows, (j + 1) % m] += right
        bounds = (1.0, 1.0)
    elif interp == "trig":
        offsets = np.arange(n_ref)
        kernel = _dirichlet_kernel(offsets / n_ref, m)
        kernel[::ratio] = 0.0
        kernel[0] = 1.0
        for j in range(m):
            J[:, j] = np.roll(kernel, j * ratio)
        bounds = (1.0, 1.0 + 2.0 / np.pi * math.log(n_ref))
    else:
        raise ValueError(f"unknown interpolation {interp!r}")
    return ProjectionPair(P, J, bounds=bounds, norm=np.inf, name=f"periodic-{interp}[{m}/{n_ref}]")


def dirichlet_grid_pair(n_ref, m):
    """Sampling / linear interpolation between interior Dirichlet grids on (0, 1).

    Grids have ``n_ref`` and ``m`` interior points; ``(n_ref + 1)`` must be a
    multiple of ``(m + 1)``. Boundary values are zero.
    """
    if m < 1 or (n_ref + 1) % (m + 1):
        raise ValueError(f"(n_ref + 1) = {n_ref + 1} must be a multiple of (m + 1) = {m + 1}")
    ratio = (n_ref + 1) // (m + 1)
    P = np.zeros((m, n_ref))
    P[np.arange(m), (np.arange(m) + 1) * ratio - 1] = 1.0
    J = np.zeros((n_ref, m))
    left, right = _linear_weights(ratio)
    # coarse node j (0-based interior) sits at reference index (j+1)*ratio - 1
    for cell in range(m + 1):
        rows = cell * ratio - 1 + np.arange(ratio)
        for r, row in enumerate(rows):
            if row < 0 or row >= n_ref:
                continue
            if cell >= 1:
                J[row, cell - 1] += left[r]
            if cell < m and right[r] != 0.0:
                J[row, cell] += right[r]
    return ProjectionPair(P, J, bounds=(1.0, 1.0), norm=np.inf, name=f"dirichlet-linear[{m}/{n_ref}]")


class Level:
    """One approximation level: projection pair plus approximate generators."""

    def __init__(self, pair, A, B):
        for g, label in ((A, "A_m"), (B, "B_m")):
            if g.dim != pair.m:
                raise ValueError(f"{label} acts on dimension {g.dim}, pair level is m={pair.m}")
        self.pair = pair
        self.A = A
        self.B = B
        self.T = Semigroup(A)
        self.S = Semigroup(B)

    @property
    def m(self):
        return self.pair.m


def conjugated_level(pair, A_ref, B_ref):
    """Galerkin-style level ``A_m = P A J``, ``B_m = P B J``."""
    a = pair.P @ np.asarray(A_ref.matrix) @ pair.J
    b = pair.P @ np.asarray(B_ref.matrix) @ pair.J
    return Level(pair, Generator(a, name=f"P{A_ref.name}J"), Generator(b, name=f"P{B_ref.name}J"))


@dataclass
class ApproximateFamily:
    """Ladder of levels with strictly increasing ``m``.

    ``T_exact``/``S_exact`` and ``sum_action`` describe the full-space problem
    when known.
    """

    levels: tuple
    name: str = ""
    T_exact: Semigroup | None = None
    S_exact: Semigroup | None = None
    A_action: object = None
    B_action: object = None
    sum_action: object = None

    def __post_init__(self):
        self.levels = tuple(self.levels)
        ms = [lv.m for lv in self.levels]
        if not ms or any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError(f"levels must have strictly increasing m, got {ms}")
        dims = {lv.pair.full_dim for lv in self.levels}
        if len(dims) != 1:
            raise ValueError(f"levels disagree on the full-space dimension: {sorted(dims)}")

    @property
    def m_values(self):
        return [lv.m for lv in self.levels]

    @property
    def full_dim(self):
        return self.levels[0].pair.full_dim

    @property
    def norm(self):
        return self.levels[0].pair.norm

    def level(self, m):
        for lv in self.levels:
            if lv.m == m:
                return lv
        raise KeyError(f"level m={m} not present in family {self.name!r} (have {self.m_values})")


@dataclass(frozen=True)
class ProjectionReport:
    pj_defect: float
    measured_norms: tuple
    bounds: tuple
    jp_defects: tuple
    tol: float = 1e-14

    @property
    def pj_identity(self):
        return self.pj_defect <= self.tol

    @property
    def bounded(self):
        return all(v <= b * (1 + 1e-12) for v, b in zip(self.measured_norms, self.bounds))

    @property
    def passed(self):
        return self.pj_identity and self.bounded


def verify_projection_pair(pair, samples, tol=1e-14):
    """Check ``P J = I``, the declared norm bounds, and report ``||J P x - x||`` per sample."""
    samples = list(samples)
    if not samples:
        raise ValueError("no samples given")
    pj = pair.P @ pair.J
    pj_defect = float(np.max(np.abs(pj - np.eye(pair.m))))
    jp = tuple(vector_norm(pair.lift(pair.project(x)) - x, pair.norm) for x in samples)
    return ProjectionReport(pj_defect, pair.measured_norms(), pair.bounds, jp, tol)


def jp_defect_ladder(pairs, x):
    """``||J_m P_m x - x||`` along a ladder of pairs."""
    return [vector_norm(p.lift(p.project(x)) - x, p.norm) for p in pairs]


def _as_action(target):
    if isinstance(target, Generator):
        return target.apply
    return target


def generator_consistency_defect(family, m, target, which, samples):
    """``max ||J_m G_m P_m x - G x||`` over samples, with ``G`` = A or B."""
    lv = family.level(m)
    if which not in ("A", "B"):
        raise ValueError(f"which must be 'A' or 'B', got {which!r}")
    gen = lv.A if which == "A" else lv.B
    action = _as_action(target)
    return max(
        vector_norm(lv.pair.lift(gen.apply(lv.pair.project(x))) - action(x), family.norm)
        for x in samples
    )


def trotter_kato_defect(family, m, exact, which, h_grid, samples):
    """``max ||J_m T_m(h) P_m x - T(h) x||`` over ``h_grid`` and samples."""
    lv = family.level(m)
    h_grid = list(h_grid)
    if not h_grid:
        raise ValueError("h_grid is empty")
    if which not in ("T", "S"):
        raise ValueError(f"which must be 'T' or 'S', got {which!r}")
    if exact.dim != lv.pair.full_dim:
        raise ValueError(f"exact semigroup acts on {exact.dim}, full space has {lv.pair.full_dim}")
    approx = lv.T if which == "T" else lv.S
    worst = 0.0
    for h in h_grid:
        for x in samples:
            diff = lv.pair.lift(approx(h, lv.pair.project(x))) - exact(h, x)
            worst = max(worst, vector_norm(diff, family.norm))
    return worst


def split_evolve_approx(scheme, family, m, spec, x):
    """Approximate split solution ``J_m [F_m(t/n)]^n P_m x``."""
    lv = family.level(m)
    y = split_evolve(scheme, lv.T, lv.S, spec, lv.pair.project(x))
    return lv.pair.lift(y)


def chernoff_consistency_defect(scheme, family, m, sum_action, h, samples):
    """``max ||(J_m F_m(h) P_m x - J_m P_m x) / h - (A + B) x||`` over samples."""
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    lv = family.level(m)
    action = _as_action(sum_action)
    worst = 0.0
    for x in samples:
        px = lv.pair.project(x)
        quotient = lv.pair.lift(split_step(scheme, lv.T, lv.S, h, px) - px) / h
        worst = max(worst, vector_norm(quotient - action(x), family.norm))
    return worst


def chernoff_uniformity_spread(scheme, family, m, t_final, n_values, samples):
    """Relative spread over ``n`` of the level-``m`` Chernoff quotient error.

    The error at ``h = t/n`` is measured against the full-space quotient
    ``(F(h) x - x) / h`` built from ``family.T_exact``/``S_exact``. Returns
    ``(max - min) / max`` over ``n_values`` together with the per-``n`` errors.
    """
    if family.T_exact is None or family.S_exact is None:
        raise ValueError("family has no full-space semigroups")
    lv = family.level(m)
    errors = []
    for n in n_values:
        h = t_final / n
        worst = 0.0
        for x in samples:
            px = lv.pair.project(x)
            approx_q = lv.pair.lift(split_step(scheme, lv.T, lv.S, h, px) - px) / h
            full_q = (split_step(scheme, family.T_exact, family.S_exact, h, x) - x) / h
            worst = max(worst, vector_norm(approx_q - full_q, family.norm))
        errors.append(worst)
    errors = np.array(errors)
    spread = float((errors.max() - errors.min()) / errors.max()) if errors.max() > 0 else 0.0
    return spread, errors


@dataclass
class ErrorTable:
    """Errors ``E(n, m)`` of approximate split solutions; rows are ``n``, columns ``m``."""

    n_values: list
    m_values: list
    errors: np.ndarray
    reference_tag: str = ""
    scheme: str = field(default="")

    def __post_init__(self):
        self.n_values = [int(n) for n in self.n_values]
        self.m_values = [int(m) for m in self.m_values]
        self.errors = np.asarray(self.errors, dtype=float)
        for label, vals in (("n", self.n_values), ("m", self.m_values)):
            if not vals or any(b <= a for a, b in zip(vals, vals[1:])):
                raise ValueError(f"{label}_values must be non-empty and strictly increasing")
        if self.errors.shape != (len(self.n_values), len(self.m_values)):
            raise ValueError(f"error matrix shape {self.errors.shape} does not match the grid")
        if not np.all(np.isfinite(self.errors)) or np.any(self.errors < 0):
            raise ValueError("errors must be finite and non-negative")

    def __getitem__(self, nm):
        n, m = nm
        return float(self.errors[self.n_values.index(n), self.m_values.index(m)])

    def diagonal(self):
        """``[(k, E(k, k))]`` for every ``k`` present as both an ``n`` and an ``m``."""
        common = sorted(set(self.n_values) & set(self.m_values))
        return [(k, self[k, k]) for k in common]

    def to_csv(self, path=None):
        """Serialise with header ``n\\m,<m1>,...`` and ``%.17g`` numbers; returns the text."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["n\\m"] + [str(m) for m in self.m_values])
        for n, row in zip(self.n_values, self.errors):
            writer.writerow([str(n)] + ["%.17g" % v for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, text, reference_tag=""):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][0] != "n\\m":
            raise ValueError("not an error table: missing 'n\\m' header")
        m_values = [int(v) for v in rows[0][1:]]
        n_values = [int(r[0]) for r in rows[1:]]
        errors = [[float(v) for v in r[1:]] for r in rows[1:]]
        return cls(n_values, m_values, np.array(errors), reference_tag)


def two_index_error_table(scheme, family, reference, n_values, m_values, x, t_final, jobs=1):
    """``E(n, m) = ||u_{n,m}(t) - u(t)||`` for every grid cell.

    ``reference`` is the full-space vector ``u(t)``. Cells are independent and
    run on ``jobs`` threads; assembly order is fixed.
    """
    reference = as_vector(reference, family.full_dim)
    cells = [(n, m) for n in n_values for m in m_values]

    def cell(nm):
        n, m = nm
        u = split_evolve_approx(scheme, family, m, EvolveSpec(t_final, n), x)
        return vector_norm(u - reference, family.norm)

    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(cell, cells))
    else:
        values = [cell(c) for c in cells]
    errors = np.array(values).reshape(len(n_values), len(m_values))
    return ErrorTable(list(n_values), list(m_values), errors, family.name, str(scheme))
