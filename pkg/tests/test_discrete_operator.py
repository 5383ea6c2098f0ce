import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import closed_form_1d
from fucik_link.discrete_operator import (Domain, Mesh, build_operator, compute_spectrum,
                                          parse_length, read_grid_function, split_and_project,
                                          write_grid_function)
from fucik_link.errors import ClusterSplitError, PreconditionError


@pytest.mark.parametrize("text,value", [("pi", math.pi), ("2pi", 2 * math.pi),
                                        ("pi/2", math.pi / 2), ("3.5", 3.5), ("2*pi", 2 * math.pi)])
def test_parse_length(text, value):
    assert parse_length(text) == pytest.approx(value, rel=1e-15)


def test_domain_parse_shorthands():
    assert Domain.parse("interval:pi").lengths == (math.pi,)
    assert Domain.parse("square:pi").lengths == (math.pi, math.pi)
    assert Domain.parse("rectangle:pi,2").lengths == (math.pi, 2.0)
    assert Domain.parse("hypercube:pi").dim == 4
    with pytest.raises(PreconditionError):
        Domain.parse("blob:1")
    with pytest.raises(PreconditionError):
        Domain((1.0, -1.0))


def test_mesh_spacing_and_minimum():
    mesh = Mesh(Domain((math.pi,)), (511,))
    assert mesh.spacing[0] == pytest.approx(math.pi / 512)
    with pytest.raises(PreconditionError):
        Mesh(Domain((1.0,)), (2,))


@pytest.mark.parametrize("spec,n,size,nnz_row", [("interval:pi", 511, 511, 3),
                                                 ("square:pi", 63, 3969, 5),
                                                 ("hypercube:pi", 15, 50625, 9)])
def test_stencil_shapes(spec, n, size, nnz_row):
    op = build_operator(Domain.parse(spec), n)
    K = op.stiffness
    assert K.shape == (size, size)
    assert np.max(np.diff(K.indptr)) == nnz_row
    assert abs(K - K.T).max() == 0.0


def test_budget_guard():
    with pytest.raises(PreconditionError):
        build_operator(Domain.parse("hypercube:pi"), 20)


def test_solve_inverts_stiffness(rng):
    for spec, n in [("interval:pi", 31), ("rectangle:pi,2", (7, 9))]:
        op = build_operator(Domain.parse(spec), n)
        f = rng.standard_normal(op.size)
        assert np.allclose(op.apply(op.solve(f)), f, atol=1e-10 * np.abs(f).max())
        s = op.sqrt_inv(f)
        assert np.allclose(op.sqrt_inv(op.apply(s)), f, atol=1e-9 * np.abs(f).max())
        assert np.allclose(op.sqrt_inv(s), op.solve(f), atol=1e-10)


def test_eigenvalues_match_closed_form(spec1d):
    ref = closed_form_1d(511, count=4)
    assert np.allclose(spec1d.values[:4], ref, rtol=1e-9, atol=0)
    # the discrete values sit below k^2 by O(h^2 k^4)
    h = math.pi / 512
    k = np.arange(1, 5)
    gap = k**2 - spec1d.values[:4]
    assert np.all(gap > 0) and np.all(gap < h**2 * k**4 / 12 * 1.01)


def test_square_double_eigenvalue_against_dense():
    op = build_operator(Domain.parse("square:pi"), 9)
    spec = compute_spectrum(op, 4)
    dense = np.linalg.eigvalsh(op.stiffness.toarray())[:4]
    assert np.allclose(spec.values, dense, rtol=1e-9)
    assert spec.clusters[:2] == ((0, 1), (1, 3))
    assert spec.modes_through(2) == 3


def test_first_eigenvector_sign(spec2d):
    phi = spec2d.vectors[:, 0]
    assert np.all(phi > 0) or np.all(phi < 0)


def test_orthonormal_and_d_products(spec2d):
    op = spec2d.op
    V = spec2d.vectors
    G = op.weight * V.T @ V
    assert np.allclose(G, np.eye(spec2d.count), atol=1e-9)
    D = op.weight * V.T @ (op.stiffness @ V)
    assert np.allclose(D, np.diag(spec2d.values), atol=1e-8 * spec2d.values.max())


def test_d_inner_sine():
    op = build_operator(Domain.parse("interval:pi"), 511)
    u = op.mesh.sample(lambda x: np.sin(x[:, 0]))
    assert op.d_inner(u, u) == pytest.approx(math.pi / 2, rel=1e-5)


def test_projection_examples(spec2d):
    phi1 = spec2d.vectors[:, 0]
    assert np.allclose(split_and_project(spec2d, 1, phi1, "N"), phi1, atol=1e-12)
    nxt = spec2d.vectors[:, 3]
    assert np.abs(split_and_project(spec2d, 3, nxt, "N")).max() < 1e-9
    with pytest.raises(ClusterSplitError):
        split_and_project(spec2d, 2, phi1, "N")


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_splitting_properties(spec2d, seed):
    op = spec2d.op
    r = np.random.default_rng(seed)
    u = op.solve(r.standard_normal(op.size))
    split = spec2d.split_level(2)
    un, um = split.project_n(u), split.project_m(u)
    assert np.allclose(un + um, u)
    assert abs(op.d_inner(un, um)) <= 1e-8 * op.d_norm(u) ** 2
    assert np.allclose(split.project_n(un), un, atol=1e-10 * np.abs(u).max())
    lam1, lam2, lam3 = (spectrum_level(spec2d, k) for k in (1, 2, 3))
    # Poincare type bounds on N and M
    assert op.d_norm(u) ** 2 >= lam1 * op.l2_norm(u) ** 2 * (1 - 1e-8)
    assert op.d_norm(un) ** 2 <= lam2 * op.l2_norm(un) ** 2 * (1 + 1e-8)
    assert op.d_norm(um) ** 2 >= lam3 * op.l2_norm(um) ** 2 * (1 - 1e-6)


def spectrum_level(spec, k):
    return spec.eigenvalue(k)


def test_refinement_from_below():
    prev = None
    for n in (15, 31, 63):
        op = build_operator(Domain.parse("square:pi"), n)
        lam = compute_spectrum(op, 4).values
        assert np.all(lam < np.array([2, 5, 5, 8]))
        if prev is not None:
            assert np.all(lam > prev)
        prev = lam


def test_grid_function_round_trip(tmp_path, spec2d):
    u = spec2d.vectors[:, 1]
    path, side = write_grid_function(tmp_path / "u.bin", u, spec2d.op.mesh, note="x")
    back, info = read_grid_function(path)
    assert np.array_equal(back, u)
    assert info["grid_shape"] == [63, 63] and info["note"] == "x"


def test_spectrum_determinism():
    op = build_operator(Domain.parse("square:pi"), 31)
    a = compute_spectrum(op, 5, seed=3)
    b = compute_spectrum(op, 5, seed=3)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.vectors, b.vectors)
    assert a.digest() == b.digest()
