import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from oracles import shooting_b, shooting_curves
from fucik_link.errors import PreconditionError
from fucik_link.fucik_spectrum import (FucikPoint, classify_point, curve_point,
                                       fucik_1d_oracle, jumping_functional, m_level,
                                       membership_residual, n_level, oracle_branch_b,
                                       parts_and_I, sphere_grid, tau_map, theta_map,
                                       trace_curve, write_trace_csv)


def smooth_random(op, seed):
    r = np.random.default_rng(seed)
    u = op.solve(r.standard_normal(op.size))
    return u / op.d_norm(u)


# ---------------------------------------------------------------------------
# the jumping functional


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), a=st.floats(0.5, 20), b=st.floats(0.5, 20))
def test_parts_split_exactly(small2d, seed, a, b):
    op = small2d.op
    u = np.random.default_rng(seed).standard_normal(op.size)
    p = parts_and_I(op, u, a, b)
    assert np.array_equal(p.u_plus - p.u_minus, u)
    assert float(p.u_plus @ p.u_minus) == 0.0
    nrm = op.l2_norm(u) ** 2
    assert abs(nrm - op.l2_norm(p.u_plus) ** 2 - op.l2_norm(p.u_minus) ** 2) <= 1e-13 * nrm
    # reflection symmetry and degree-2 homogeneity
    assert jumping_functional(op, -u, b, a) == pytest.approx(p.value, rel=1e-13, abs=1e-12)
    assert jumping_functional(op, 2 * u, a, b) == pytest.approx(4 * p.value, rel=1e-13,
                                                                abs=1e-12)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_gradient_matches_finite_differences(small2d, seed):
    op = small2d.op
    r = np.random.default_rng(seed)
    u = smooth_random(op, seed)
    h = smooth_random(op, seed + 1)
    a, b = 3.0, 6.5
    g = parts_and_I(op, u, a, b).gradient
    t = 1e-6
    fd = (jumping_functional(op, u + t * h, a, b) - jumping_functional(op, u - t * h, a, b)) / (
        2 * t)
    assert op.weight * float(g @ h) == pytest.approx(fd, rel=1e-5, abs=1e-8)
    del r


def test_eigenvector_has_zero_I(spec2d):
    op = spec2d.op
    lam = spec2d.eigenvalue(2)
    phi = spec2d.vectors[:, 1]
    assert abs(jumping_functional(op, phi, lam, lam)) <= 1e-8 * lam


def test_point_validation(spec2d):
    with pytest.raises(PreconditionError):
        FucikPoint(-1.0, 2.0)
    with pytest.raises(PreconditionError):
        FucikPoint(9.0, 4.0, 2).check(spec2d)
    FucikPoint(5.0, 4.1, 2).check(spec2d)


# ---------------------------------------------------------------------------
# reduction maps


def test_theta_matches_brute_force_1d(spec1d):
    op = spec1d.op
    lam2 = spec1d.eigenvalue(2)
    w = spec1d.vectors[:, 2] + 0.3 * spec1d.vectors[:, 4]
    w /= op.d_norm(w)
    pt = FucikPoint(lam2 - 0.3, lam2 - 0.1, 2)
    sol = theta_map(spec1d, w, pt)
    phi1 = spec1d.vectors[:, 0]

    def neg(c):
        return -jumping_functional(op, c * phi1 + w, pt.a, pt.b)

    grid = np.linspace(-3, 3, 601)
    c0 = grid[int(np.argmin([neg(c) for c in grid]))]
    ref = minimize_scalar(neg, bracket=(c0 - 0.01, c0 + 0.01), tol=1e-12).x
    got = op.weight * float(phi1 @ sol.output)
    assert got == pytest.approx(ref, abs=1e-6)


def test_tau_matches_sign_pattern_linear_solve(spec1d):
    op = spec1d.op
    lam2 = spec1d.eigenvalue(2)
    v = spec1d.vectors[:, 1].copy()
    pt = FucikPoint(lam2 - 0.2, lam2 + 0.3, 2)
    sol = tau_map(spec1d, v, pt)
    u = v + sol.output
    # with the sign pattern frozen, tau solves P_M (K - S)(v + w) = 0 on M
    s = np.where(u > 0, pt.b, pt.a)
    K = op.stiffness.toarray()
    lam, vec = np.linalg.eigh(K)
    M = vec[:, 2:]
    A = M.T @ (K - np.diag(s)) @ M
    rhs = -M.T @ ((K - np.diag(s)) @ v)
    w_ref = M @ np.linalg.solve(A, rhs)
    assert np.sign(v + w_ref).tolist() == np.sign(u).tolist()
    assert op.d_norm(sol.output - w_ref) <= 1e-8 * max(op.d_norm(w_ref), 1e-12)


def test_maps_vanish_on_diagonal_eigenvalue(spec2d):
    lam = spec2d.eigenvalue(2)
    pt = FucikPoint(lam, lam, 2)
    op = spec2d.op
    w = spec2d.split_level(1).project_m(smooth_random(op, 4))
    assert op.d_norm(theta_map(spec2d, w, pt).output) <= 1e-6
    v = spec2d.split_level(2).combine([0.3, -0.8, 0.5])
    assert op.d_norm(tau_map(spec2d, v, pt).output) <= 1e-6


def test_theta_rejects_input_outside_m(spec2d):
    with pytest.raises(PreconditionError):
        theta_map(spec2d, spec2d.vectors[:, 0], FucikPoint(5.0, 4.1, 2))


@pytest.mark.parametrize("t", [0.5, 2.0, 10.0])
def test_positive_homogeneity(spec2d, t):
    op = spec2d.op
    pt = FucikPoint(4.3, 6.1, 2)
    w = spec2d.split_level(1).project_m(smooth_random(op, 1))
    th = theta_map(spec2d, w, pt).output
    assert op.d_norm(theta_map(spec2d, t * w, pt).output - t * th) <= 1e-6 * t * op.d_norm(th)
    v = spec2d.split_level(2).combine([0.2, 1.0, -0.4])
    ta = tau_map(spec2d, v, pt).output
    assert op.d_norm(tau_map(spec2d, t * v, pt).output - t * ta) <= 1e-6 * t * op.d_norm(ta)


def test_tau_curvature_positive(spec2d):
    v = spec2d.split_level(2).combine([1.0, 0.0, 0.2])
    sol = tau_map(spec2d, v, FucikPoint(3.0, 7.0, 2))
    assert sol.min_curvature > 0


# ---------------------------------------------------------------------------
# level functions and curves


def test_level_functions_zero_at_eigenvalue(spec2d):
    lam = spec2d.eigenvalue(2)
    pt = FucikPoint(lam, lam, 2)
    assert abs(n_level(spec2d, pt).value) <= 1e-4
    assert abs(m_level(spec2d, pt).value) <= 1e-4


def test_level_function_signs_follow_1d_oracle(spec1d):
    lam2 = spec1d.eigenvalue(2)
    b_curve = shooting_b(lam2, 2)
    assert n_level(spec1d, FucikPoint(lam2, b_curve - 0.2, 2)).value > 0
    assert n_level(spec1d, FucikPoint(lam2, b_curve + 0.2, 2)).value < 0
    assert m_level(spec1d, FucikPoint(lam2, b_curve - 0.2, 2)).value > 0
    assert m_level(spec1d, FucikPoint(lam2, b_curve + 0.2, 2)).value < 0


def test_n_level_not_above_samples(spec2d):
    pt = FucikPoint(5.0, 4.5, 2)
    res = n_level(spec2d, pt)
    op = spec2d.op
    split = spec2d.split_level(1)
    for seed in range(5):
        w = split.project_m(smooth_random(op, 100 + seed))
        w /= op.d_norm(w)
        th = theta_map(spec2d, w, pt).output
        assert res.value <= jumping_functional(op, th + w, pt.a, pt.b) + 1e-10


def test_sphere_grid_unit_rows():
    for q in (1, 2, 3, 5):
        g = sphere_grid(q)
        assert np.allclose(np.linalg.norm(g, axis=1), 1.0)


def test_curves_through_diagonal_point(spec1d):
    lam2 = spec1d.eigenvalue(2)
    for kind in ("nu", "mu"):
        s = curve_point(spec1d, kind, 2, lam2)
        assert abs(s.b - lam2) <= s.bracket_width + 1e-6


def test_trace_against_shooting_l3(spec1d):
    a_grid = [10.0, 12.0, 14.0]
    nu = trace_curve(spec1d, "nu", 3, a_grid)
    mu = trace_curve(spec1d, "mu", 3, a_grid)
    for s_nu, s_mu in zip(nu.samples, mu.samples):
        lo, hi = shooting_curves(s_nu.a, 3)
        if s_nu.in_range:
            assert s_nu.b == pytest.approx(lo, rel=1e-2)
        if s_mu.in_range:
            assert s_mu.b == pytest.approx(hi, rel=1e-2)
        assert s_nu.b <= s_mu.b + nu.tol_b


def test_trace_outside_window_strict(spec1d):
    with pytest.raises(PreconditionError):
        trace_curve(spec1d, "nu", 2, [1.05], strict=True)
    with pytest.raises(PreconditionError):
        curve_point(spec1d, "nu", 2, 12.0)


def test_trace_csv_header(tmp_path, spec1d):
    trace = trace_curve(spec1d, "nu", 2, [5.0])
    path = tmp_path / "nu_l2.csv"
    write_trace_csv(path, trace)
    lines = path.read_text().splitlines()
    assert lines[0] == "a,b,kind,level,bracket_width" and len(lines) == 2


def test_membership_residual(spec1d):
    lam2 = spec1d.eigenvalue(2)
    on = membership_residual(spec1d, lam2, lam2, level=2).residual
    assert on <= 1e-8
    s = curve_point(spec1d, "nu", 2, 5.0)
    r_on = membership_residual(spec1d, 5.0, s.b, level=2).residual
    r_off = membership_residual(spec1d, 5.0, s.b - 0.3, level=2).residual
    assert r_off >= 10 * r_on


def test_classify_point(spec2d):
    assert classify_point(spec2d, FucikPoint(5.0, 4.1, 2)) == "below"
    assert classify_point(spec2d, FucikPoint(5.0, 6.2, 2)) == "above"


# ---------------------------------------------------------------------------
# the closed-form 1D oracle


def test_oracle_linear_case_and_symmetry():
    for level in (2, 3, 4):
        for start in ("pos", "neg"):
            assert oracle_branch_b(level, level**2, start) == pytest.approx(level**2, rel=1e-12)
    # one hump: b = 1 whatever a is; a lone negative hump leaves b free
    assert oracle_branch_b(1, 7.0, "pos") == pytest.approx(1.0)
    assert math.isnan(oracle_branch_b(1, 7.0, "neg"))
    b = oracle_branch_b(3, 12.0, "pos")
    # (a, b) on the positive-start branch <=> (b, a) on the negative-start branch
    assert oracle_branch_b(3, b, "neg") == pytest.approx(12.0, rel=1e-10)


def test_oracle_matches_ode_shooting():
    # l = 2, a = 5: 1/sqrt(b) = 1 - 1/sqrt(5)
    ref = (1 - 1 / math.sqrt(5)) ** -2
    assert oracle_branch_b(2, 5.0) == pytest.approx(ref, rel=1e-12)
    assert shooting_b(5.0, 2) == pytest.approx(ref, rel=1e-9)


def test_oracle_trace_status():
    tr = fucik_1d_oracle(2, [1.2, 5.0, 8.8])
    assert [s.status for s in tr.samples] == ["above", "ok", "ok"]
    tr3 = fucik_1d_oracle(3, [12.0])
    assert {s.kind for s in tr3.samples} == {"pos", "neg"}
