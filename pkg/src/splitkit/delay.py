"""Splitting for delay equations on the product phase space.

The delay equation ``u'(t) = C u(t) + Phi u_t`` with history segment
``u_t(s) = u(t + s)``, ``s in [-1, 0]``, is evolved as a pair ``(head, history)``
with the history sampled on ``s_j = -j * delta``, ``delta = 1/q``. The split
flows are

* ``T(t)``: head <- ``V(t) head``; history shifted left by ``t`` with the
  vacated window filled by ``V(t + s) head``;
* ``S(t)``: head <- ``head + t * Phi(history)``, history untouched.

``Phi`` is a distributed delay ``int k(s) f(s) ds`` evaluated by the composite
trapezoid rule on the history grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import brentq

from .core import Generator, Semigroup, as_vector
from .linalg import expm

__all__ = [
    "DelayProblem",
    "DelayState",
    "DelayProjection",
    "GridAlignmentError",
    "trapezoid_weights",
    "sample_history",
    "init_state",
    "apply_phi",
    "apply_delay_T",
    "apply_delay_S",
    "delay_split_step",
    "delay_split_evolve",
    "delay_split_trajectory",
    "assemble_monolithic_generator",
    "monolithic_solution",
    "richardson_oracle",
    "delay_projection_apply",
    "phase_norm",
    "delay_step_matrices",
    "phase_norm_bound",
    "state_vector",
    "characteristic_root",
    "write_trajectory_csv",
    "write_history_csv",
]


class GridAlignmentError(ValueError):
    """A step is not a whole number of history cells; ``suggested_q`` would fit."""

    def __init__(self, message, suggested_q=None):
        super().__init__(message)
        self.suggested_q = suggested_q


def trapezoid_weights(q):
    w = np.full(q + 1, 1.0 / q)
    w[0] = w[-1] = 0.5 / q
    return w


class DelayProblem:
    """Delay problem ``u' = C u + int_{-1}^0 k(s) u(t + s) ds`` on ``R^d``.

    Args:
        C: generator of the head flow ``V(t) = exp(tC)`` (d x d).
        kernel: callable ``s -> k(s)``, returning a scalar (meaning ``k(s) I``)
            or a d x d matrix; accepts numpy arrays of ``s`` for scalar kernels.
        q: number of history cells on [-1, 0].
        phi_norm_bound: declared ``c ||Phi||``; defaults to ``max_j ||k(s_j)||``.
    """

    def __init__(self, C, kernel, q, phi_norm_bound=None, name=""):
        if not isinstance(C, Generator):
            C = Generator(np.atleast_2d(np.asarray(C, dtype=float)))
        if int(q) != q or q < 1:
            raise ValueError(f"q must be a positive integer, got {q}")
        self.C = C
        self.kernel = kernel
        self.q = int(q)
        self.name = name
        self.sigma = -np.arange(self.q + 1) / self.q
        self.weights = trapezoid_weights(self.q)
        samples = [np.asarray(kernel(s), dtype=float) for s in self.sigma]
        if all(k.ndim == 0 for k in samples):
            self.kernel_samples = np.array([float(k) for k in samples])
            norms = np.abs(self.kernel_samples)
        else:
            d = self.d
            mats = [k * np.eye(d) if k.ndim == 0 else k for k in samples]
            if any(k.shape != (d, d) for k in mats):
                raise ValueError(f"kernel values must be scalars or {d} x {d} matrices")
            self.kernel_samples = np.array(mats)
            norms = np.linalg.norm(self.kernel_samples, 2, axis=(1, 2))
        self.kernel_norms = norms
        declared = float(norms.max()) if phi_norm_bound is None else float(phi_norm_bound)
        self.phi_norm_bound = declared
        self._head_flow = Semigroup(C)

    @property
    def d(self):
        return self.C.dim

    @property
    def delta(self):
        return 1.0 / self.q

    def with_q(self, q):
        return DelayProblem(self.C, self.kernel, q, self.phi_norm_bound, self.name)

    def V(self, t):
        """Head semigroup matrix ``exp(tC)`` (cached per ``t``)."""
        return self._head_flow.matrix(t)

    def phi_norm(self):
        """Induced norm of the quadrature ``Phi`` from the L1-surrogate history norm to ``R^d``."""
        return float(np.max(self.weights * self.kernel_norms) / self.delta)

    def phi_weighted_norm_sum(self):
        """``sum_j w_j ||k(s_j)||``."""
        return float(np.sum(self.weights * self.kernel_norms))

    def contraction_defect(self, t_grid):
        """``max_t ||exp(tC)||_2 - 1`` over ``t_grid`` (<= 0 certifies contraction)."""
        return max(np.linalg.norm(self.V(t), 2) for t in t_grid) - 1.0

    def steps(self, t, what="step"):
        """Number of history cells in ``t``; raises if ``t`` is off the grid."""
        r = t * self.q
        ri = int(round(r))
        if ri < 0 or abs(r - ri) > 1e-9 * max(1.0, abs(r)):
            raise GridAlignmentError(
                f"{what} {t!r} is not a multiple of delta = 1/{self.q}",
                suggested_q=_suggest_q(t, self.q),
            )
        return ri

    def __repr__(self):
        return f"DelayProblem({self.name!r}, d={self.d}, q={self.q})"


def _suggest_q(h, q_now, halves=False):
    frac = Fraction(h).limit_denominator(10**6)
    if halves:
        frac /= 2
    base = frac.denominator
    mult = max(1, math.ceil(q_now / base))
    return base * mult


class DelayState:
    """Phase-space element ``(head, history)``.

    ``history`` has shape ``(d, q + 1)``; column ``j`` is the value at
    ``s = -j / q``. Storage is a ring buffer: a shift by ``r`` cells moves the
    start index instead of the data. States are never mutated after creation.
    """

    __slots__ = ("head", "_buf", "_start")

    def __init__(self, head, history, _start=0):
        self.head = head
        self._buf = history
        self._start = _start
        head.setflags(write=False)
        history.setflags(write=False)

    @property
    def d(self):
        return self.head.shape[0]

    @property
    def q(self):
        return self._buf.shape[1] - 1

    @property
    def history(self):
        if self._start == 0:
            return self._buf
        return np.roll(self._buf, -self._start, axis=1)

    def column(self, j):
        return self._buf[:, (self._start + j) % (self.q + 1)]

    @property
    def compatible(self):
        return bool(np.allclose(self.column(0), self.head, rtol=0, atol=1e-12 * max(1.0, np.abs(self.head).max())))

    def combine(self, coeff, other, other_coeff):
        """``coeff * self + other_coeff * other``."""
        head = coeff * self.head + other_coeff * other.head
        return DelayState(head, coeff * self.history + other_coeff * other.history)

    def __repr__(self):
        return f"DelayState(d={self.d}, q={self.q})"


def sample_history(fn, q, d=None):
    """Sample ``fn(s)`` on ``s_j = -j/q`` into a ``(d, q + 1)`` array."""
    cols = [np.atleast_1d(np.asarray(fn(-j / q), dtype=float)) for j in range(q + 1)]
    hist = np.column_stack(cols)
    if d is not None and hist.shape[0] != d:
        raise ValueError(f"history function returns length {hist.shape[0]}, expected {d}")
    return hist


def init_state(x, f, allow_incompatible=False, q=None):
    """Build an initial state from head ``x`` and sampled history ``f``.

    ``f`` is a ``(d, q + 1)`` array (a 1-d array when ``d = 1``) with column 0
    at ``s = 0``. Unless ``allow_incompatible`` is set, ``f(0) = x`` must hold
    to 1e-12.
    """
    x = np.atleast_1d(as_vector(np.atleast_1d(x)))
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        f = f[None, :] if x.shape[0] == 1 else f[:, None]
    if f.ndim != 2 or f.shape[0] != x.shape[0]:
        raise ValueError(f"history shape {f.shape} does not match head dimension {x.shape[0]}")
    if q is not None and f.shape[1] != q + 1:
        raise ValueError(f"history has {f.shape[1]} columns, expected q + 1 = {q + 1}")
    if f.shape[1] < 2:
        raise ValueError("history needs at least two columns")
    if not np.all(np.isfinite(f)):
        raise ValueError("history has non-finite entries")
    if not allow_incompatible and np.max(np.abs(f[:, 0] - x)) > 1e-12 * max(1.0, np.abs(x).max()):
        raise ValueError("incompatible initial data: f(0) != x (pass allow_incompatible=True for L1 data)")
    return DelayState(x.copy(), f.copy())


def _check_state(problem, state):
    if state.d != problem.d or state.q != problem.q:
        raise ValueError(
            f"state (d={state.d}, q={state.q}) does not match problem (d={problem.d}, q={problem.q})"
        )


def apply_phi(problem, history):
    """Trapezoid quadrature ``sum_j w_j k(s_j) f(s_j)`` of the delay functional."""
    history = np.asarray(history, dtype=float)
    if history.ndim == 1:
        history = history[None, :]
    if history.shape != (problem.d, problem.q + 1):
        raise ValueError(f"history shape {history.shape} != ({problem.d}, {problem.q + 1})")
    k = problem.kernel_samples
    if k.ndim == 1:
        return history @ (problem.weights * k)
    return np.einsum("j,jab,bj->a", problem.weights, k, history)


def apply_delay_T(problem, t, state):
    """Exact flow of the (C, d/ds) part for a grid-aligned time ``t``."""
    _check_state(problem, state)
    r = problem.steps(t, "time")
    if r == 0:
        return state
    q = problem.q
    E = problem.V(problem.delta)
    buf = state._buf.copy()
    start = (state._start - r) % (q + 1)
    # fill columns j = 0..min(r, q+1)-1 with V((r - j) delta) head, oldest (largest j) first
    j_hi = min(r, q + 1) - 1
    v = problem.V((r - j_hi) * problem.delta) @ state.head
    for j in range(j_hi, -1, -1):
        buf[:, (start + j) % (q + 1)] = v
        if j:
            v = E @ v
    return DelayState(v.copy(), buf, start)


def apply_delay_S(problem, t, state):
    """Exact flow of the delay part: ``head + t * Phi(history)``; history is shared."""
    _check_state(problem, state)
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    if t == 0:
        return state
    return DelayState(state.head + t * apply_phi(problem, state.history), state._buf, state._start)


def delay_split_step(scheme, problem, h, state):
    """One composite splitting step of size ``h``."""
    T = lambda s, u: apply_delay_T(problem, s, u)  # noqa: E731
    S = lambda s, u: apply_delay_S(problem, s, u)  # noqa: E731
    if scheme.kind == "sequential":
        return S(h, T(h, state))
    if scheme.kind == "strang":
        return T(h / 2, S(h, T(h / 2, state)))
    st = S(h, T(h, state))
    ts = T(h, S(h, state))
    return st.combine(scheme.theta, ts, 1.0 - scheme.theta)


def _check_alignment(scheme, problem, h):
    halves = scheme.kind == "strang"
    r = h * problem.q / (2 if halves else 1)
    if abs(r - round(r)) > 1e-9 * max(1.0, r) or round(r) < 1:
        need = "h/2" if halves else "h"
        raise GridAlignmentError(
            f"{scheme} step {need} = {h / (2 if halves else 1)!r} is not a multiple of delta = 1/{problem.q}; "
            f"smallest compatible q >= {problem.q} is {_suggest_q(h, problem.q, halves)}",
            suggested_q=_suggest_q(h, problem.q, halves),
        )


def delay_split_trajectory(scheme, problem, spec, state):
    """``[(step, time, state)]`` for steps ``0..n`` of the split solution."""
    _check_state(problem, state)
    h = spec.h
    if spec.t_final == 0:
        return [(0, 0.0, state)]
    _check_alignment(scheme, problem, h)
    out = [(0, 0.0, state)]
    for k in range(1, spec.n + 1):
        state = delay_split_step(scheme, problem, h, state)
        out.append((k, k * h, state))
    return out


def delay_split_evolve(scheme, problem, spec, state):
    """Split solution ``[F(t/n)]^n (x, f)`` of the delay problem."""
    _check_state(problem, state)
    if spec.t_final == 0:
        return state
    h = spec.h
    _check_alignment(scheme, problem, h)
    for _ in range(spec.n):
        state = delay_split_step(scheme, problem, h, state)
    return state


def assemble_monolithic_generator(problem, q=None):
    """Upwind discretisation of the full delay generator, the reference oracle.

    Unknowns are ``(head, f_1, ..., f_q)``; ``f_0`` is identified with the head.
    The head row is ``C head + Phi``; history rows are
    ``(f_{j-1} - f_j) / delta``.
    """
    if q is not None and q != problem.q:
        problem = problem.with_q(q)
    q = problem.q
    if q < 2:
        raise ValueError(f"monolithic oracle needs q >= 2, got {q}")
    d = problem.d
    n = d * (q + 1)
    G = np.zeros((n, n))
    k = problem.kernel_samples
    eye = np.eye(d)
    for j in range(q + 1):
        kj = k[j] * eye if k.ndim == 1 else k[j]
        G[:d, j * d:(j + 1) * d] += problem.weights[j] * kj
    G[:d, :d] += problem.C.matrix
    inv = 1.0 / problem.delta
    for j in range(1, q + 1):
        rows = slice(j * d, (j + 1) * d)
        G[rows, (j - 1) * d:j * d] = inv * eye
        G[rows, j * d:(j + 1) * d] = -inv * eye
    return Generator(G, name=f"monolithic[q={q}]")


def monolithic_solution(problem, t, history_fn, q=None):
    """Head of the monolithic oracle at time ``t`` for history ``history_fn`` (with ``x = f(0)``)."""
    q = problem.q if q is None else q
    gen = assemble_monolithic_generator(problem, q)
    hist = sample_history(history_fn, q, problem.d)
    v0 = hist.T.reshape(-1)
    v = expm(t * gen.matrix) @ v0
    return v[: problem.d]


def richardson_oracle(problem, t, history_fn, q_values):
    """Richardson-extrapolated oracle head over doubling ``q_values``.

    The oracle error is assumed to expand in integer powers of ``delta``.
    Returns ``(value, error_estimate, raw)`` where ``error_estimate`` is the
    size of the last extrapolation correction.
    """
    q_values = list(q_values)
    if len(q_values) < 2 or any(b != 2 * a for a, b in zip(q_values, q_values[1:])):
        raise ValueError(f"q_values must double at each step, got {q_values}")
    raw = [monolithic_solution(problem, t, history_fn, q) for q in q_values]
    table = [[r] for r in raw]
    for i in range(1, len(raw)):
        for k in range(1, i + 1):
            prev = table[i][k - 1]
            table[i].append(prev + (prev - table[i - 1][k - 1]) / (2**k - 1))
    best = table[-1][-1]
    err = float(np.linalg.norm(best - table[-1][-2]))
    return best, err, raw


def characteristic_root(mu, kernel_weights_fn, bracket=(-50.0, 50.0)):
    """Real root ``lam`` of ``lam = mu + kernel_weights_fn(lam)``.

    ``kernel_weights_fn(lam)`` is the delay functional applied to ``s -> exp(lam s)``;
    ``exp(lam t) v`` then solves the delay equation for an eigenvector ``v`` of
    ``C`` with eigenvalue ``mu``.
    """
    return brentq(lambda lam: lam - mu - kernel_weights_fn(lam), *bracket, xtol=1e-15, rtol=4 * np.finfo(float).eps)


@dataclass(frozen=True)
class DelayProjection:
    """Column-wise lift of a projection pair to phase-space states."""

    pair: object

    def project(self, state):
        return delay_projection_apply(self, "project", state)

    def lift(self, state):
        return delay_projection_apply(self, "lift", state)


def delay_projection_apply(dproj, direction, state):
    """Apply ``P`` (``"project"``) or ``J`` (``"lift"``) to the head and every history column."""
    if direction == "project":
        op, dim_in = dproj.pair.P, dproj.pair.full_dim
    elif direction == "lift":
        op, dim_in = dproj.pair.J, dproj.pair.m
    else:
        raise ValueError(f"direction must be 'project' or 'lift', got {direction!r}")
    if state.d != dim_in:
        raise ValueError(f"state dimension {state.d} does not match operator input {dim_in}")
    return DelayState(op @ state.head, op @ state.history)


def phase_norm(state, ord=2):
    """``max(||head||, delta * sum_j ||f_j||)``, the L1-surrogate product norm."""
    hist = state.history
    if ord == 2:
        col = np.linalg.norm(hist, axis=0)
        head = np.linalg.norm(state.head)
    elif ord == np.inf:
        col = np.max(np.abs(hist), axis=0)
        head = np.max(np.abs(state.head))
    else:
        raise ValueError(f"unsupported norm {ord!r}")
    return float(max(head, col.sum() / state.q))


def state_vector(state):
    """Flatten to ``[head, f_0, ..., f_q]``."""
    return np.concatenate([state.head, state.history.T.reshape(-1)])


def delay_step_matrices(problem, h):
    """Dense ``T(h)`` and ``S(h)`` acting on ``[head, f_0, ..., f_q]``."""
    r = problem.steps(h)
    d, q = problem.d, problem.q
    n = d * (q + 2)
    blk = lambda i: slice(i * d, (i + 1) * d)  # noqa: E731  block 0 = head, block j+1 = f_j
    T = np.zeros((n, n))
    T[blk(0), blk(0)] = problem.V(h)
    for j in range(q + 1):
        if j < r:
            T[blk(j + 1), blk(0)] = problem.V((r - j) * problem.delta)
        else:
            T[blk(j + 1), blk(j - r + 1)] = np.eye(d)
    S = np.eye(n)
    k = problem.kernel_samples
    for j in range(q + 1):
        kj = k[j] * np.eye(d) if k.ndim == 1 else k[j]
        S[blk(0), blk(j + 1)] += h * problem.weights[j] * kj
    return T, S


def phase_norm_bound(matrix, d, q):
    """Upper bound on the operator norm induced by :func:`phase_norm`.

    With block norms ``N[i, j]`` (block 0 the head, block ``j + 1`` history
    column ``j``), the bound is
    ``max(N00 + max_j N0j / delta, delta * sum_i Ni0 + max_j sum_i Nij)``
    with ``i, j`` ranging over history blocks. It is attained for
    non-negative scalar (``d = 1``) matrices.
    """
    nb = q + 2
    blocks = np.asarray(matrix).reshape(nb, d, nb, d).transpose(0, 2, 1, 3)
    if d == 1:
        N = np.abs(blocks[:, :, 0, 0])
    else:
        N = np.linalg.norm(blocks, 2, axis=(2, 3))
    delta = 1.0 / q
    head = N[0, 0] + N[0, 1:].max() / delta
    hist = delta * N[1:, 0].sum() + N[1:, 1:].sum(axis=0).max()
    return float(max(head, hist))


def write_trajectory_csv(path, trajectory):
    """Write ``step,time,head_0..head_{d-1}`` rows with ``%.17g`` numbers."""
    d = trajectory[0][2].d
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "time"] + [f"head_{i}" for i in range(d)])
        for step, time, state in trajectory:
            w.writerow([str(step), "%.17g" % time] + ["%.17g" % v for v in state.head])


def write_history_csv(path, state):
    """Write one checkpoint's history as ``sigma,comp_0..comp_{d-1}`` rows."""
    hist = state.history
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sigma"] + [f"comp_{i}" for i in range(state.d)])
        for j in range(state.q + 1):
            w.writerow(["%.17g" % (-j / state.q)] + ["%.17g" % v for v in hist[:, j]])
