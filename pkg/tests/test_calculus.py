import numpy as np
import pytest

from obdeg import (
    BoundaryField,
    ScalarField,
    apply_S,
    apply_T,
    build_disk,
    gradient,
    hessian,
    solve_S,
    solve_T,
    tangential_laplacian,
)
from obdeg.calculus import field_to_csv, operators, random_smooth_field
from obdeg.errors import InputError


def xy(dom):
    return dom.nodes[:, 0], dom.nodes[:, 1]


# -- gradient ---------------------------------------------------------------


def test_gradient_affine_exact(disk16):
    x, y = xy(disk16)
    g = gradient(ScalarField(disk16, 2.0 * x - 3.0 * y + 0.5))
    assert np.max(np.abs(g - np.array([2.0, -3.0]))) < 1e-10


def test_gradient_constant(disk16):
    g = gradient(ScalarField(disk16, np.full(disk16.n_nodes, 4.2)))
    assert np.max(np.abs(g)) < 1e-10


def test_gradient_quadratic_on_disk(disk16, disk32):
    for dom in (disk16, disk32):
        x, y = xy(dom)
        g = gradient(ScalarField(dom, x * x + y * y))
        exact = np.column_stack([2 * x, 2 * y])
        assert np.max(np.abs(g - exact)) < 1e-10


# -- hessian ----------------------------------------------------------------


def test_hessian_quadratic_exact(disk16):
    x, y = xy(disk16)
    h = hessian(ScalarField(disk16, x * x))
    assert np.max(np.abs(h - np.array([[2.0, 0.0], [0.0, 0.0]]))) < 1e-10
    h = hessian(ScalarField(disk16, x * y))
    assert np.max(np.abs(h - np.array([[0.0, 1.0], [1.0, 0.0]]))) < 1e-10


def test_hessian_smooth_second_order(disk16, disk32):
    # sin(x)sin(y) against the analytic Hessian; max-norm error bound was
    # frozen from the oracle comparison and must improve ~4x per doubling.
    errs = []
    for dom in (disk16, disk32):
        x, y = xy(dom)
        h = hessian(ScalarField(dom, np.sin(x) * np.sin(y)))
        exact = np.empty_like(h)
        exact[:, 0, 0] = -np.sin(x) * np.sin(y)
        exact[:, 1, 1] = exact[:, 0, 0]
        exact[:, 0, 1] = np.cos(x) * np.cos(y)
        exact[:, 1, 0] = exact[:, 0, 1]
        errs.append(np.max(np.abs(h - exact)))
    assert errs[0] < 5.0e-3
    assert errs[1] < 1.1e-3
    assert errs[1] < errs[0] / 3.0


def test_hessian_symmetric(disk16, rng):
    u = random_smooth_field(disk16, rng)
    h = hessian(u)
    assert np.max(np.abs(h[:, 0, 1] - h[:, 1, 0])) == 0.0


# -- tangential laplacian and T ---------------------------------------------


def test_tangential_laplacian_constant(disk16):
    f = BoundaryField(disk16, np.ones(disk16.n_boundary))
    assert np.max(np.abs(tangential_laplacian(f).values)) < 1e-10


def test_tangential_laplacian_circle_eigenfunctions(disk32):
    th = disk32.thetas
    out = tangential_laplacian(BoundaryField(disk32, np.cos(th)))
    assert np.max(np.abs(out.values + np.cos(th))) < 5e-3
    out2 = tangential_laplacian(BoundaryField(disk32, np.cos(2 * th)))
    assert np.max(np.abs(out2.values + 4 * np.cos(2 * th))) < 0.02


def test_apply_T_examples(disk32):
    th = disk32.thetas
    nb = disk32.n_boundary
    assert np.max(np.abs(apply_T(BoundaryField(disk32, np.ones(nb))).values + 1)) < 1e-10
    out = apply_T(BoundaryField(disk32, np.cos(th)))
    assert np.max(np.abs(out.values + 2 * np.cos(th))) < 5e-3
    out2 = apply_T(BoundaryField(disk32, np.cos(2 * th)))
    assert np.max(np.abs(out2.values + 5 * np.cos(2 * th))) < 0.02


def test_T_symmetric_negative_definite(disk16):
    ops = operators(disk16)
    t_dense = ops.chain_lap.toarray() - np.eye(disk16.n_boundary)
    assert np.max(np.abs(t_dense - t_dense.T)) < 1e-10
    evals = np.linalg.eigvalsh(0.5 * (t_dense + t_dense.T))
    assert np.all(evals <= -1.0 + 1e-10)


def test_T_selfadjoint_negative_on_star_chain(star16):
    # nonuniform chains: self-adjoint with respect to the cell weights,
    # all eigenvalues at or below -1
    ops = operators(star16)
    t_dense = ops.chain_lap.toarray() - np.eye(star16.n_boundary)
    w = star16.boundary_weights
    wt = w[:, None] * t_dense
    assert np.max(np.abs(wt - wt.T)) < 1e-9 * np.max(np.abs(wt))
    sym = np.sqrt(w)[:, None] * t_dense / np.sqrt(w)[None, :]
    evals = np.linalg.eigvalsh(0.5 * (sym + sym.T))
    assert np.all(evals <= -1.0 + 1e-10)


# -- S ----------------------------------------------------------------------


def test_apply_S_examples(disk16):
    x, y = xy(disk16)
    i, b = apply_S(ScalarField(disk16, np.ones(disk16.n_nodes)))
    assert np.max(np.abs(i.values)) < 1e-10
    assert np.max(np.abs(b.values - 1.0)) < 1e-10

    i, b = apply_S(ScalarField(disk16, x * x + y * y))
    assert np.max(np.abs(i.values - 4.0)) < 1e-9
    assert np.max(np.abs(b.values - 3.0)) < 1e-10

    i, b = apply_S(ScalarField(disk16, x))
    assert np.max(np.abs(i.values)) < 1e-9
    assert np.max(np.abs(b.values - 2.0 * np.cos(disk16.thetas))) < 1e-10


def test_solve_T_inverts_apply_T(disk32):
    th = disk32.thetas
    out = solve_T(BoundaryField(disk32, -2 * np.cos(th)))
    assert np.max(np.abs(out.values - np.cos(th))) < 5e-3


def test_solve_S_constant(disk16):
    rhs_i = ScalarField(disk16, np.zeros(disk16.n_nodes))
    rhs_b = BoundaryField(disk16, np.ones(disk16.n_boundary))
    u = solve_S(rhs_i, rhs_b)
    assert np.max(np.abs(u.values - 1.0)) < 1e-8


def test_S_T_roundtrip_random(disk16, rng):
    u = random_smooth_field(disk16, rng)
    ri, rb = apply_S(u)
    u2 = solve_S(ri, rb)
    scale = max(1.0, np.max(np.abs(u.values)))
    assert np.max(np.abs(u2.values - u.values)) / scale < 1e-8

    f = BoundaryField(disk16, rng.standard_normal(disk16.n_boundary))
    back = apply_T(solve_T(f))
    assert np.max(np.abs(back.values - f.values)) / max(1.0, np.max(np.abs(f.values))) < 1e-8


# -- linearity properties ----------------------------------------------------


def test_apply_S_and_T_linear(disk16, rng):
    u1 = random_smooth_field(disk16, rng)
    u2 = random_smooth_field(disk16, rng)
    a, b = 1.7, -0.3
    lhs_i, lhs_b = apply_S(ScalarField(disk16, a * u1.values + b * u2.values))
    i1, b1 = apply_S(u1)
    i2, b2 = apply_S(u2)
    assert np.max(np.abs(lhs_i.values - (a * i1.values + b * i2.values))) < 1e-12 * 1e3
    assert np.max(np.abs(lhs_b.values - (a * b1.values + b * b2.values))) < 1e-12 * 1e3

    f1 = BoundaryField(disk16, rng.standard_normal(disk16.n_boundary))
    f2 = BoundaryField(disk16, rng.standard_normal(disk16.n_boundary))
    lhs = apply_T(BoundaryField(disk16, a * f1.values + b * f2.values))
    rhs = a * apply_T(f1).values + b * apply_T(f2).values
    assert np.max(np.abs(lhs.values - rhs)) < 1e-9


# -- fields and serialization -------------------------------------------------


def test_field_validation(disk16):
    with pytest.raises(InputError):
        ScalarField(disk16, np.ones(3))
    bad = np.ones(disk16.n_nodes)
    bad[0] = np.nan
    with pytest.raises(InputError):
        ScalarField(disk16, bad)


def test_field_csv_roundtrip(disk16, rng):
    u = random_smooth_field(disk16, rng)
    text = field_to_csv(u)
    lines = text.strip().splitlines()
    assert lines[0] == "node_index,x,y,value"
    vals = np.array([float(line.split(",")[3]) for line in lines[1:]])
    assert np.array_equal(vals, u.values)
