import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from splitkit.core import SEQUENTIAL, STRANG, EvolveSpec, Generator, Scheme
from splitkit.delay import (
    DelayProblem,
    DelayProjection,
    GridAlignmentError,
    apply_delay_S,
    apply_delay_T,
    apply_phi,
    assemble_monolithic_generator,
    characteristic_root,
    delay_projection_apply,
    delay_split_evolve,
    delay_split_step,
    delay_split_trajectory,
    delay_step_matrices,
    init_state,
    monolithic_solution,
    phase_norm,
    phase_norm_bound,
    richardson_oracle,
    sample_history,
    state_vector,
    trapezoid_weights,
    write_history_csv,
    write_trajectory_csv,
)
from splitkit.problems import build_delay_diffusion, build_scalar_delay, delay_exponential_solution
from splitkit.spatial import dirichlet_grid_pair


def scalar(c=-1.0, kappa=0.3, q=8):
    return DelayProblem(Generator([[c]]), lambda s: kappa, q)


def const_state(q, x=1.0, f=1.0, **kw):
    return init_state([x], np.full(q + 1, f), **kw)


# ---- quadrature --------------------------------------------------------------

def test_trapezoid_weights():
    w = trapezoid_weights(4)
    assert np.allclose(w, [0.125, 0.25, 0.25, 0.25, 0.125])
    assert math.fsum(trapezoid_weights(37)) == pytest.approx(1.0, abs=1e-15)


def test_phi_exact_for_constants_and_linear():
    p = scalar(kappa=0.3, q=8)
    assert apply_phi(p, np.ones(9))[0] == pytest.approx(0.3, abs=1e-15)
    unit = DelayProblem(Generator([[0.0]]), lambda s: 1.0, 8)
    assert apply_phi(unit, unit.sigma)[0] == pytest.approx(-0.5, abs=1e-15)


def test_phi_quadratic_second_order():
    errs = []
    for q in (8, 16, 32):
        p = DelayProblem(Generator([[0.0]]), lambda s: 1.0, q)
        errs.append(abs(apply_phi(p, p.sigma**2)[0] - 1 / 3))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=1e-9)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=1e-9)


def test_matrix_kernel():
    k = np.array([[1.0, 2.0], [0.0, -1.0]])
    p = DelayProblem(Generator(np.zeros((2, 2))), lambda s: k, 4)
    hist = np.vstack([np.ones(5), 2 * np.ones(5)])
    assert np.allclose(apply_phi(p, hist), k @ [1.0, 2.0])
    assert p.phi_norm_bound == pytest.approx(np.linalg.norm(k, 2))


# ---- T and S flows -------------------------------------------------------------

def test_T_zero_time_unchanged():
    s = const_state(4)
    assert apply_delay_T(scalar(q=4), 0.0, s) is s


def test_T_pure_shift_when_C_zero():
    p = DelayProblem(Generator([[0.0]]), lambda s: 0.0, 4)
    s = init_state([5.0], [1.0, 2.0, 3.0, 4.0, 6.0], allow_incompatible=True)
    out = apply_delay_T(p, 0.25, s)
    assert out.head[0] == 5.0
    assert np.array_equal(out.history[0], [5.0, 1.0, 2.0, 3.0, 4.0])


def test_T_hand_evaluated_block_formula():
    q = 4
    d = 1 / q
    out = apply_delay_T(scalar(c=-1.0, q=q), 2 * d, const_state(q))
    assert out.head[0] == pytest.approx(math.exp(-2 * d), rel=1e-15)
    want = [math.exp(-2 * d), math.exp(-d), 1.0, 1.0, 1.0]
    assert np.allclose(out.history[0], want, rtol=1e-15)


def test_T_longer_than_window():
    q = 4
    out = apply_delay_T(scalar(c=-1.0, q=q), 1.5, const_state(q))
    # whole window refilled from the head flow: f(s) = exp(-(1.5 + s))
    assert np.allclose(out.history[0], np.exp(-(1.5 - np.arange(q + 1) / q)), rtol=1e-14)


def test_S_examples():
    p = scalar(kappa=0.3, q=4)
    s = const_state(4)
    assert apply_delay_S(p, 0.0, s) is s
    out = apply_delay_S(p, 0.1, s)
    assert out.head[0] == pytest.approx(1.03, rel=1e-15)
    assert np.array_equal(out.history, s.history)
    zero = DelayProblem(Generator([[-1.0]]), lambda s: 0.0, 4)
    assert np.array_equal(apply_delay_S(zero, 7.0, s).head, s.head)


def _random_state(rng, d, q, compatible):
    hist = rng.standard_normal((d, q + 1))
    head = hist[:, 0].copy() if compatible else rng.standard_normal(d)
    return init_state(head, hist, allow_incompatible=not compatible)


@given(st.integers(0, 2**32 - 1), st.floats(0, 2), st.floats(0, 2))
def test_S_affine_and_additive(seed, t, s):
    rng = np.random.default_rng(seed)
    p = build_delay_diffusion(d=3, q=8)
    x = _random_state(rng, 3, 8, compatible=False)
    phi = apply_phi(p, x.history)
    st_ = apply_delay_S(p, t, x)
    assert np.allclose(st_.head, x.head + t * phi, rtol=1e-12, atol=1e-12)
    assert np.array_equal(st_.history, x.history)
    two = apply_delay_S(p, t, apply_delay_S(p, s, x))
    one = apply_delay_S(p, t + s, x)
    assert np.allclose(two.head, one.head, rtol=1e-12, atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(0, 12), st.integers(0, 12), st.booleans())
def test_T_grid_semigroup_law(seed, r, s, compatible):
    rng = np.random.default_rng(seed)
    q = 8
    p = build_delay_diffusion(d=3, q=q)
    x = _random_state(rng, 3, q, compatible)
    two = apply_delay_T(p, r / q, apply_delay_T(p, s / q, x))
    one = apply_delay_T(p, (r + s) / q, x)
    assert np.allclose(two.head, one.head, rtol=1e-12, atol=1e-12)
    assert np.allclose(two.history, one.history, rtol=1e-12, atol=1e-12)


def test_compatibility_after_T_and_strang():
    p = build_delay_diffusion(d=4, q=16)
    rng = np.random.default_rng(0)
    x = _random_state(rng, 4, 16, compatible=True)
    assert apply_delay_T(p, 3 / 16, x).compatible
    y = x
    for _ in range(5):
        y = delay_split_step(STRANG, p, 2 / 16, y)
        assert y.compatible
    # S leaves the history alone, so column 0 keeps the pre-S head
    z = apply_delay_S(p, 0.25, x)
    assert np.array_equal(z.column(0), x.head)


def test_ring_buffer_reads_in_order():
    p = scalar(c=0.0, kappa=0.0, q=4)
    s = init_state([0.0], [0.0, -1.0, -2.0, -3.0, -4.0])
    for k in range(1, 7):
        s = apply_delay_T(p, 0.25, s)
        hist = s.history[0]
        assert [s.column(j)[0] for j in range(5)] == list(hist)
    with pytest.raises(ValueError):
        s.head[0] = 1.0


def test_init_state_contract():
    with pytest.raises(ValueError):
        init_state([1.0], [2.0, 1.0, 1.0])
    assert not init_state([1.0], [2.0, 1.0, 1.0], allow_incompatible=True).compatible
    with pytest.raises(ValueError):
        init_state([1.0, 2.0], np.ones((3, 5)))
    with pytest.raises(ValueError):
        init_state([1.0], [1.0, np.nan, 0.0])
    lam = -0.4
    s = init_state([1.0], sample_history(lambda t: math.exp(lam * t), 8, 1))
    assert s.history[0, -1] == pytest.approx(math.exp(-lam))


def test_state_problem_mismatch():
    with pytest.raises(ValueError):
        apply_delay_T(scalar(q=8), 0.125, const_state(4))


# ---- split evolution ------------------------------------------------------------------

@pytest.mark.parametrize("scheme", [SEQUENTIAL, STRANG, Scheme.weighted(0.5)], ids=str)
def test_zero_phi_is_head_flow(scheme):
    q = 16
    c = np.array([[-1.0, 0.5], [0.0, -2.0]])
    p = DelayProblem(Generator(c), lambda s: 0.0, q)
    hist = sample_history(lambda s: np.array([1.0 + s, 2.0 - s]), q, 2)
    x = init_state(hist[:, 0], hist)
    out = delay_split_evolve(scheme, p, EvolveSpec(1.25, 10), x)
    once = apply_delay_T(p, 1.25, x)
    assert np.allclose(out.head, scipy.linalg.expm(1.25 * c) @ x.head, rtol=1e-13)
    assert np.allclose(out.history, once.history, rtol=1e-13, atol=1e-15)


def test_alignment_errors_suggest_q():
    p = scalar(q=10)
    with pytest.raises(GridAlignmentError) as err:
        delay_split_evolve(SEQUENTIAL, p, EvolveSpec(1.0, 4), const_state(10))
    assert err.value.suggested_q == 12
    with pytest.raises(GridAlignmentError) as err:
        delay_split_evolve(STRANG, p, EvolveSpec(1.0, 10), const_state(10))
    assert err.value.suggested_q == 20
    delay_split_evolve(SEQUENTIAL, p, EvolveSpec(1.0, 10), const_state(10))


def test_trajectory_and_csv(tmp_path):
    p = scalar(q=8)
    traj = delay_split_trajectory(SEQUENTIAL, p, EvolveSpec(1.0, 4), const_state(8))
    assert [k for k, _, _ in traj] == [0, 1, 2, 3, 4]
    write_trajectory_csv(tmp_path / "t.csv", traj)
    lines = (tmp_path / "t.csv").read_bytes().split(b"\n")
    assert lines[0] == b"step,time,head_0"
    assert lines[1] == b"0,0,1"
    write_history_csv(tmp_path / "h.csv", traj[-1][2])
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert rows[0] == "sigma,comp_0" and len(rows) == 10 and rows[2].startswith("-0.125,")


# ---- step matrices and the phase-norm bound ---------------------------------------------

def test_step_matrices_match_flows():
    p = build_delay_diffusion(d=3, q=8)
    x = _random_state(np.random.default_rng(4), 3, 8, compatible=False)
    for h in (1 / 8, 3 / 8, 1.25):
        T, S = delay_step_matrices(p, h)
        assert np.allclose(T @ state_vector(x), state_vector(apply_delay_T(p, h, x)), atol=1e-14)
        assert np.allclose(S @ state_vector(x), state_vector(apply_delay_S(p, h, x)), atol=1e-14)


def _brute_phase_norm(matrix, q):
    """Induced norm for d = 1 by enumerating extreme points of the unit ball."""
    n = q + 2
    best = 0.0
    for i in range(n):
        v = np.zeros(n)
        v[i] = 1.0 if i == 0 else float(q)
        out = matrix @ v
        best = max(best, abs(out[0]), np.abs(out[1:]).sum() / q)
        if i == 0:
            continue
        for sign in (1.0, -1.0):
            w = v.copy()
            w[0] = sign
            out = matrix @ w
            best = max(best, abs(out[0]), np.abs(out[1:]).sum() / q)
    return best


def test_phase_norm_bound_oracle():
    q = 6
    rng = np.random.default_rng(9)
    nonneg = np.abs(rng.standard_normal((q + 2, q + 2)))
    assert phase_norm_bound(nonneg, 1, q) == pytest.approx(_brute_phase_norm(nonneg, q), rel=1e-14)
    signed = rng.standard_normal((q + 2, q + 2))
    assert phase_norm_bound(signed, 1, q) >= _brute_phase_norm(signed, q) * (1 - 1e-14)


def test_phase_norm():
    s = init_state([3.0, 4.0], np.vstack([np.full(5, 3.0), np.full(5, 4.0)]))
    assert phase_norm(s) == pytest.approx(6.25)
    assert phase_norm(s, np.inf) == pytest.approx(5.0)


def test_contractive_stability_products():
    q = 16
    c_phi = 0.5
    p = DelayProblem(Generator([[0.0]]), lambda s: c_phi, q)
    t = 1.0
    for n in (2, 4, 8, 16):
        h = t / n
        T, S = delay_step_matrices(p, h)
        power = np.eye(q + 2)
        for k in range(1, n + 1):
            power = S @ T @ power
            assert phase_norm_bound(power, 1, q) <= math.exp(k * h * (1 + c_phi)) * (1 + 1e-12)


# ---- monolithic oracle ---------------------------------------------------------------

def test_monolithic_structure_pure_transport():
    p = DelayProblem(Generator([[0.0]]), lambda s: 0.0, 8)
    G = assemble_monolithic_generator(p).matrix
    assert G.shape == (9, 9)
    assert np.all(G[0] == 0.0)
    assert np.allclose(G.sum(axis=1)[1:], 0.0)
    # a constant history is a steady state of transport
    assert np.allclose(scipy.linalg.expm(0.7 * G) @ np.ones(9), 1.0)


def test_monolithic_decoupled_head():
    p = DelayProblem(Generator([[-1.0]]), lambda s: 0.0, 16)
    head = monolithic_solution(p, 1.3, lambda s: np.array([math.exp(s)]))
    assert head[0] == pytest.approx(math.exp(-1.3), rel=1e-13)


def test_richardson_oracle_against_exact_exponential():
    p = build_scalar_delay(q=64)
    hist, _ = delay_exponential_solution(p, quadrature=False)
    lam = math.log(hist(1.0)[0])
    assert lam == pytest.approx(-1.0 + 0.3 * (1 - math.exp(-lam)) / lam, abs=1e-13)
    best, est, raw = richardson_oracle(p, 1.0, hist, [64, 128, 256, 512])
    exact = math.exp(lam)
    raw_err = [abs(r[0] - exact) for r in raw]
    assert raw_err[0] / raw_err[1] == pytest.approx(2.0, rel=0.05)  # first-order upwind bias
    assert abs(best[0] - exact) <= 10 * est
    assert abs(best[0] - exact) < 1e-8
    with pytest.raises(ValueError):
        richardson_oracle(p, 1.0, hist, [64, 100])


def test_characteristic_root():
    lam = characteristic_root(-1.0, lambda l: 0.3 * (1 - math.exp(-l)) / l)
    assert lam == pytest.approx(-1.0 + 0.3 * (1 - math.exp(-lam)) / lam, abs=1e-14)


def test_quadrature_exponential_solution_solves_discrete_equation():
    p = build_delay_diffusion(d=8, q=16)
    hist, sol = delay_exponential_solution(p, modes=(1, 3), quadrature=True)
    # u' = C u + Phi u_t, checked at t = 0.4 with u_t sampled on the grid
    t = 0.4
    eps = 1e-6
    deriv = (sol(t + eps) - sol(t - eps)) / (2 * eps)
    seg = sample_history(lambda s: sol(t + s), 16, 8)
    rhs = p.C.matrix @ sol(t) + apply_phi(p, seg)
    assert np.allclose(deriv, rhs, atol=1e-8)


# ---- projections --------------------------------------------------------------------

def test_delay_projection_axioms():
    pair = dirichlet_grid_pair(15, 7)
    dp = DelayProjection(pair)
    rng = np.random.default_rng(1)
    small = init_state(rng.standard_normal(7), rng.standard_normal((7, 9)), allow_incompatible=True)
    back = dp.project(dp.lift(small))
    assert np.array_equal(back.head, small.head) and np.array_equal(back.history, small.history)
    xs = np.arange(1, 16) / 16
    big_hist = np.column_stack([np.sin(np.pi * xs) * math.exp(-j / 8) for j in range(9)])
    big = init_state(big_hist[:, 0], big_hist)
    jp = dp.lift(dp.project(big))
    col_defects = [np.abs(pair.J @ pair.P @ big_hist[:, j] - big_hist[:, j]).max() for j in range(9)]
    assert np.abs(jp.history - big.history).max() == pytest.approx(max(col_defects))
    with pytest.raises(ValueError):
        delay_projection_apply(dp, "sideways", big)
    with pytest.raises(ValueError):
        dp.lift(big)


def test_projected_flow_converges_with_m():
    n_ref = 63
    p_ref = build_delay_diffusion(d=n_ref, q=8)
    xs = np.arange(1, n_ref + 1) / (n_ref + 1)
    hist = np.column_stack([np.sin(np.pi * xs)] * 9)
    u0 = init_state(hist[:, 0], hist)
    ref = delay_split_evolve(SEQUENTIAL, p_ref, EvolveSpec(0.5, 4), u0)
    defects = []
    for m in (7, 15, 31):
        dp = DelayProjection(dirichlet_grid_pair(n_ref, m))
        lifted = dp.lift(dp.project(ref))
        defects.append(phase_norm(lifted.combine(1.0, ref, -1.0), np.inf))
    assert defects[0] > defects[1] > defects[2]
