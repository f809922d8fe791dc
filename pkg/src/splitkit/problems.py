"""Bundled test problems with known references.

Every builder re-verifies the properties it certifies (commuting, nilpotent,
contraction) and, for analytic references, the residual of ``u' = G u``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Generator, Semigroup
from .delay import DelayProblem, characteristic_root
from .spatial import ApproximateFamily, Level, conjugated_level, periodic_grid_pair, restriction_pair

__all__ = [
    "ProblemSpec",
    "CertificationError",
    "build_matrix_problem",
    "build_advection_diffusion",
    "advection_diffusion_level",
    "build_conjugated_family",
    "build_delay_diffusion",
    "build_scalar_delay",
    "dirichlet_laplacian",
    "delay_exponential_solution",
    "PROBLEMS",
    "get_problem",
]


class CertificationError(AssertionError):
    """A certified problem property failed re-verification."""


@dataclass
class ProblemSpec:
    """A split problem ``u' = (A + B) u`` with its reference solution.

    ``reference(t, x)`` returns ``u(t)`` for initial value ``x`` (or ``None``
    when no reference is available); ``reference_kind`` is ``"analytic"``,
    ``"expm"`` or ``"none"``.
    """

    name: str
    params: dict
    A: Generator
    B: Generator
    x0: np.ndarray
    reference_kind: str = "expm"
    certified_properties: tuple = ()
    family: ApproximateFamily | None = None
    T: Semigroup | None = None
    S: Semigroup | None = None
    analytic: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.T is None:
            self.T = Semigroup(self.A)
        if self.S is None:
            self.S = Semigroup(self.B)
        self._U = None

    @property
    def U(self):
        if self._U is None:
            self._U = Semigroup(self.A + self.B)
        return self._U

    def reference(self, t, x=None):
        x = self.x0 if x is None else x
        if self.reference_kind == "analytic" and x is self.x0:
            return self.analytic(t)
        if self.reference_kind == "none":
            return None
        return self.U(t, x)


def _commutator_norm(a, b):
    a, b = a.matrix, b.matrix
    return float(np.linalg.norm(a @ b - b @ a, 2))


def _certify_contraction(gen, t_grid=(0.01, 0.1, 0.5, 1.0, 2.0), tol=1e-10):
    sg = Semigroup(gen)
    worst = max(np.linalg.norm(sg.matrix(t), 2) for t in t_grid)
    if worst > 1 + tol:
        raise CertificationError(f"{gen.name}: semigroup norm {worst} exceeds 1 + {tol}")


def _certify(spec):
    props = spec.certified_properties
    if "commuting" in props and _commutator_norm(spec.A, spec.B) > 1e-12:
        raise CertificationError(f"{spec.name}: A and B do not commute")
    if "nilpotent" in props:
        for g in (spec.A, spec.B):
            if np.abs(np.linalg.matrix_power(g.matrix, g.dim)).max() != 0.0:
                raise CertificationError(f"{spec.name}: {g.name} is not nilpotent")
    if "contraction" in props:
        _certify_contraction(spec.A)
        _certify_contraction(spec.B)
    return spec


def _unit(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _stable_random(rng, dim, margin):
    a = rng.standard_normal((dim, dim)) / np.sqrt(dim)
    top = np.linalg.eigvalsh(0.5 * (a + a.T)).max()
    return a - (top + margin) * np.eye(dim)


def build_matrix_problem(kind, dim=2, seed=0):
    """Small matrix split problems.

    kinds: ``commuting`` (diagonal pair), ``nilpotent-pair`` (shift up / shift
    down), ``random-stable`` (two random matrices shifted to be 2-norm
    contractions), ``b-zero`` / ``a-zero`` (one part vanishes).
    """
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    rng = np.random.default_rng(seed)
    params = {"kind": kind, "dim": dim, "seed": seed}
    if kind == "commuting":
        a = rng.uniform(-1.0, 0.0, dim)
        b = rng.uniform(-1.0, 0.0, dim)
        spec = ProblemSpec("commuting", params, Generator(diagonal=a, name="A"), Generator(diagonal=b, name="B"),
                           _unit(rng, dim), certified_properties=("commuting", "contraction"))
    elif kind == "nilpotent-pair":
        up = np.eye(dim, k=1)
        x0 = np.zeros(dim)
        x0[0] = 1.0
        spec = ProblemSpec("nilpotent-pair", params, Generator(up, name="A"), Generator(up.T.copy(), name="B"),
                           x0, certified_properties=("nilpotent",))
    elif kind == "random-stable":
        a = _stable_random(rng, dim, 0.1)
        b = _stable_random(rng, dim, 0.1)
        spec = ProblemSpec("random-stable", params, Generator(a, name="A"), Generator(b, name="B"),
                           _unit(rng, dim), certified_properties=("contraction",))
    elif kind in ("b-zero", "a-zero"):
        g = Generator(_stable_random(rng, dim, 0.1), name="A" if kind == "b-zero" else "B")
        z = Generator.zero(dim, name="B" if kind == "b-zero" else "A")
        a, b = (g, z) if kind == "b-zero" else (z, g)
        spec = ProblemSpec(kind, params, a, b, _unit(rng, dim), certified_properties=("commuting", "contraction"))
    else:
        raise ValueError(f"unknown matrix problem kind {kind!r}")
    return _certify(spec)


def _periodic_stencils(m, nu, a):
    dx = 1.0 / m
    eye = np.eye(m)
    up = np.roll(eye, 1, axis=1)  # (up @ u)_j = u_{j+1}
    down = up.T
    lap = (up - 2 * eye + down) / dx**2
    d1 = (up - down) / (2 * dx)
    return nu * lap, -a * d1


def advection_diffusion_level(m, nu, a, n_ref=1024, interp="linear"):
    """Level ``m``: ``A_m = nu * D2``, ``B_m = -a * D1`` (centered), periodic on [0, 1)."""
    if m < 8:
        raise ValueError(f"advection-diffusion needs m >= 8, got {m}")
    pair = periodic_grid_pair(n_ref, m, interp)
    am, bm = _periodic_stencils(m, nu, a)
    return Level(pair, Generator(am, name="A_m"), Generator(bm, name="B_m"))


def _spectral_semigroup(n, symbol):
    """Closed-form semigroup ``x -> ifft(exp(t * symbol) * fft(x))`` on an n-point periodic grid."""
    gen = Generator(diagonal=np.zeros(n), name="spectral")

    def rule(t, x, sym=symbol):
        return np.real(np.fft.ifft(np.exp(t * sym) * np.fft.fft(x)))

    def adjoint(t, x, sym=np.conj(symbol)):
        return np.real(np.fft.ifft(np.exp(t * sym) * np.fft.fft(x)))

    return Semigroup(gen, mode="closed-form", rule=rule, adjoint_rule=adjoint)


def _spectral_derivative(v, order):
    n = v.shape[0]
    k = 2j * np.pi * np.fft.fftfreq(n, d=1.0 / n)
    if order % 2 == 1 and n % 2 == 0:
        k[n // 2] = 0.0
    return np.real(np.fft.ifft(k**order * np.fft.fft(v)))


def build_advection_diffusion(m_values=(16, 32, 64, 128), nu=0.01, a=1.0, n_ref=1024, interp="linear"):
    """Periodic advection-diffusion ``u_t = nu u_xx - a u_x`` with ``u0 = sin(2 pi x)``.

    The full space is an ``n_ref``-point periodic grid. Its exact sub-semigroups
    act spectrally; the reference is ``exp(-4 pi^2 nu t) sin(2 pi (x - a t))``.
    ``A``/``B`` on the returned ProblemSpec are the reference-grid stencils.
    """
    m_values = tuple(int(m) for m in m_values)
    xs = np.arange(n_ref) / n_ref
    levels = tuple(advection_diffusion_level(m, nu, a, n_ref, interp) for m in m_values)

    k = np.fft.fftfreq(n_ref, d=1.0 / n_ref)
    heat = -nu * (2 * np.pi * k) ** 2
    transport = -2j * np.pi * k * a
    T_exact = _spectral_semigroup(n_ref, heat)
    S_exact = _spectral_semigroup(n_ref, transport)

    def analytic(t):
        return np.exp(-4 * np.pi**2 * nu * t) * np.sin(2 * np.pi * (xs - a * t))

    A_action = lambda x: nu * _spectral_derivative(x, 2)  # noqa: E731
    B_action = lambda x: -a * _spectral_derivative(x, 1)  # noqa: E731
    family = ApproximateFamily(
        levels,
        name=f"advection-diffusion(nu={nu:g}, a={a:g})",
        T_exact=T_exact,
        S_exact=S_exact,
        A_action=A_action,
        B_action=B_action,
        sum_action=lambda x: A_action(x) + B_action(x),
    )
    a_ref, b_ref = _periodic_stencils(n_ref, nu, a)
    spec = ProblemSpec(
        "advection-diffusion",
        {"m_values": list(m_values), "nu": nu, "a": a, "n_ref": n_ref, "interp": interp},
        Generator(a_ref, name="A"),
        Generator(b_ref, name="B"),
        analytic(0.0),
        reference_kind="analytic",
        certified_properties=("commuting", "contraction"),
        family=family,
        T=T_exact,
        S=S_exact,
        analytic=analytic,
    )
    for lv in levels:
        if _commutator_norm(lv.A, lv.B) > 1e-12 * np.linalg.norm(lv.A.matrix, 2) * np.linalg.norm(lv.B.matrix, 2):
            raise CertificationError(f"level m={lv.m}: stencils do not commute")
        _certify_contraction(lv.A)
        _certify_contraction(lv.B)
    _check_residual(analytic, family.sum_action)
    return spec


def _check_residual(u, action, t_samples=(0.0, 0.1, 0.37, 1.0), tol=1e-10):
    """Self-check ``du/dt = G u`` using a complex-step time derivative."""
    eps = 1e-30
    for t in t_samples:
        ut = np.imag(u(t + 1j * eps)) / eps
        gu = action(u(t))
        scale = max(1.0, np.abs(gu).max())
        if np.abs(ut - gu).max() > tol * scale:
            raise CertificationError(f"analytic reference fails the residual check at t={t}")


def build_conjugated_family(A, B, m_values, name="conjugated"):
    """Galerkin family ``A_m = P A J`` with restriction pairs on ``R^dim``."""
    levels = tuple(conjugated_level(restriction_pair(A.dim, m), A, B) for m in m_values)
    return ApproximateFamily(
        levels, name=name, T_exact=Semigroup(A), S_exact=Semigroup(B),
        A_action=A.apply, B_action=B.apply, sum_action=lambda x: A.apply(x) + B.apply(x),
    )


def dirichlet_laplacian(d, nu=1.0):
    """``nu`` times the second difference on ``d`` interior points of (0, 1), zero boundary."""
    dx = 1.0 / (d + 1)
    return nu * (np.eye(d, k=1) - 2 * np.eye(d) + np.eye(d, k=-1)) / dx**2


def build_delay_diffusion(d=32, q=64, nu=0.01, kappa=0.3, name=None):
    """Delay diffusion ``u' = nu * Lap u + int k(s) u(t + s) ds`` on ``d`` interior points.

    ``kappa`` is a constant or a callable kernel ``s -> kappa(s)``; the kernel
    acts as ``kappa(s) * I``.
    """
    kernel = kappa if callable(kappa) else (lambda s, c=float(kappa): c)
    C = Generator(dirichlet_laplacian(d, nu), name="C")
    problem = DelayProblem(C, kernel, q, name=name or f"delay-diffusion(d={d})")
    if problem.contraction_defect((0.01, 0.1, 0.5, 1.0)) > 1e-10:
        raise CertificationError("head flow is not a contraction")
    if problem.phi_weighted_norm_sum() > problem.phi_norm_bound * (1 + 1e-12):
        raise CertificationError("quadrature kernel exceeds the declared Phi bound")
    return problem


def build_scalar_delay(c=-1.0, kappa=0.3, q=64):
    """Scalar delay ODE ``u' = c u + kappa * int_{-1}^0 u(t + s) ds``."""
    if c > 0:
        raise ValueError("head flow must be a contraction (c <= 0)")
    return DelayProblem(Generator([[c]], name="C"), lambda s, k=float(kappa): k, q, name="scalar-delay")


def delay_exponential_solution(problem, modes=(1,), quadrature=True):
    """Exact exponential solution for a constant kernel ``kappa * I``.

    For each eigenpair ``(mu, v)`` of ``C`` (``modes`` index eigenvalues from the
    largest down, 1-based) the root ``lam = mu + Phi(exp(lam s))`` gives the
    solution ``exp(lam t) v``. With ``quadrature=True`` the delay functional is
    the problem's trapezoid rule, so the result solves the equation exactly as
    discretised in ``s``; otherwise the exact integral is used.

    Returns ``(history_fn, solution)`` where ``solution(t)`` is the head at ``t``.
    """
    k = problem.kernel_samples
    if k.ndim != 1 or np.ptp(k) != 0.0:
        raise ValueError("exponential solutions need a constant scalar kernel")
    kappa = float(k[0])
    mus, vecs = np.linalg.eigh(0.5 * (problem.C.matrix + problem.C.matrix.T))
    if np.abs(problem.C.matrix - problem.C.matrix.T).max() > 0:
        raise ValueError("exponential solutions need a symmetric C")
    order = np.argsort(mus)[::-1]
    sig, w = problem.sigma, problem.weights

    def functional(lam):
        if quadrature:
            return kappa * float(np.sum(w * np.exp(lam * sig)))
        return kappa * (1 - np.exp(-lam)) / lam if lam != 0 else kappa

    lams, vs = [], []
    for mode in modes:
        idx = order[mode - 1]
        mu = float(mus[idx])
        lams.append(characteristic_root(mu, functional, bracket=(mu - 10 * abs(kappa) - 1, abs(kappa) + 1)))
        vs.append(vecs[:, idx])
    lams = np.array(lams)
    vs = np.array(vs).T

    def history_fn(s):
        return vs @ np.exp(lams * s)

    def solution(t):
        return vs @ np.exp(lams * t)

    return history_fn, solution


PROBLEMS = {
    "commuting": ("diagonal commuting pair; every scheme is exact", lambda **kw: build_matrix_problem("commuting", **kw)),
    "nilpotent-pair": ("2x2 shift-up / shift-down pair, [A, B] != 0", lambda **kw: build_matrix_problem("nilpotent-pair", **kw)),
    "random-stable": ("seeded random contraction pair", lambda **kw: build_matrix_problem("random-stable", **kw)),
    "b-zero": ("random contraction A with B = 0", lambda **kw: build_matrix_problem("b-zero", **kw)),
    "a-zero": ("A = 0 with random contraction B", lambda **kw: build_matrix_problem("a-zero", **kw)),
    "advection-diffusion": ("periodic u_t = nu u_xx - a u_x with grid-level family", build_advection_diffusion),
    "scalar-delay": ("u' = c u + kappa int u(t+s) ds on [-1, 0]", build_scalar_delay),
    "delay-diffusion": ("Dirichlet heat equation with distributed delay", build_delay_diffusion),
}


def get_problem(name, **params):
    try:
        _, builder = PROBLEMS[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; known: {', '.join(sorted(PROBLEMS))}") from None
    return builder(**params)
