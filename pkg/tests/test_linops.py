import numpy as np
import pytest

from obdeg import BoundaryField, ScalarField, build_disk
from obdeg.calculus import operators, random_smooth_field
from obdeg.errors import AssemblyError, RangeError, ThresholdNotFoundError
from obdeg.linops import (
    assemble_LN,
    equilibrated_min_svd,
    find_N0,
    frozen_split,
    kernel_estimate_ratio,
    rellich_ratio,
    resolvent_symbol_bound,
    semifiniteness_mu,
    surjectivity_family_ratio,
)
from obdeg.problem import linearize, make_laplace_robin, make_semilinear_robin


def identity_coeffs(dom):
    a = np.broadcast_to(np.eye(2), (dom.n_nodes, 2, 2)).copy()
    return a, dom.gamma.copy()


def test_assemble_constant_field(disk16):
    a, b = identity_coeffs(disk16)
    ln = assemble_LN(disk16, a, b, 8.0)
    r1, r2, r3 = ln.apply_to_field(ScalarField(disk16, np.ones(disk16.n_nodes)))
    # interior block is roundoff-limited: fourth-order composite entries
    # reach ~1e6, so exact cancellation leaves ~1e-9 noise
    assert np.max(np.abs(r1)) < 1e-4
    assert np.max(np.abs(r2)) < 1e-8
    assert np.max(np.abs(r3 + 8.0)) < 1e-10


def test_assemble_quadratic_field(disk16):
    x, y = disk16.nodes[:, 0], disk16.nodes[:, 1]
    a, b = identity_coeffs(disk16)
    N = 8.0
    ln = assemble_LN(disk16, a, b, N)
    r1, r2, r3 = ln.apply_to_field(ScalarField(disk16, x * x + y * y))
    assert np.max(np.abs(r1 + 4.0 * N)) < 1e-4
    assert np.max(np.abs(r2)) < 1e-7
    assert np.max(np.abs(r3 + 2.0 + 3.0 * N)) < 1e-9


def test_linearity_in_N(disk16):
    x, y = disk16.nodes[:, 0], disk16.nodes[:, 1]
    a, b = identity_coeffs(disk16)
    w = ScalarField(disk16, np.sin(x) * np.cos(y))
    N = 2.0
    lnN = assemble_LN(disk16, a, b, N)
    ln0 = assemble_LN(disk16, a, b, 0.0)
    ops = operators(disk16)
    hess = ops.hessian_values(w.values)
    a_d2 = np.einsum("nst,nst->n", a, hess)
    grad_b = ops.gradient_values(w.values)[-disk16.n_boundary:]
    b_dw = np.sum(b * grad_b, axis=1)
    rN = lnN.apply_to_field(w)
    r0 = ln0.apply_to_field(w)
    ni = disk16.n_interior
    assert np.max(np.abs(rN[0] + N * a_d2[:ni] - r0[0])) < 1e-10
    assert np.max(np.abs(rN[1] - r0[1])) < 1e-10
    assert np.max(np.abs(rN[2] + N * (b_dw + w.boundary_values) - r0[2])) < 1e-10


def test_assembly_preconditions(disk16):
    a, b = identity_coeffs(disk16)
    with pytest.raises(AssemblyError):
        assemble_LN(disk16, -a, b, 1.0)
    tau = np.column_stack([-np.sin(disk16.thetas), np.cos(disk16.thetas)])
    with pytest.raises(AssemblyError):
        assemble_LN(disk16, a, tau, 1.0)


def test_find_N0_disk(disk16):
    a, b = identity_coeffs(disk16)
    n0, profile = find_N0(disk16, a, b, 256.0)
    assert np.isfinite(n0) and n0 <= 256.0
    smins = dict(profile)
    assert smins[2.0 * n0] >= smins[n0]
    tail = [r for N, r in profile if N >= n0]
    assert all(b >= a for a, b in zip(tail, tail[1:]))


def test_assemble_and_threshold_on_star(star16):
    a = np.broadcast_to(np.eye(2), (star16.n_nodes, 2, 2)).copy()
    b = star16.gamma.copy()
    ln = assemble_LN(star16, a, b, 4.0)
    r1, r2, r3 = ln.apply_to_field(ScalarField(star16, np.ones(star16.n_nodes)))
    assert np.max(np.abs(r1)) < 1e-4
    assert np.max(np.abs(r2)) < 1e-8
    assert np.max(np.abs(r3 + 4.0)) < 1e-9
    n0, profile = find_N0(star16, a, b, 256.0)
    assert np.isfinite(n0) and n0 <= 256.0


def test_find_N0_threshold_not_found():
    dom = build_disk(32, 64, 1.0)
    th = np.arctan2(dom.nodes[:, 1], dom.nodes[:, 0])
    rr = np.hypot(dom.nodes[:, 0], dom.nodes[:, 1])
    osc = 1.0 + 0.995 * np.sin(6 * th) * np.cos(9 * np.pi * rr)
    a = np.zeros((dom.n_nodes, 2, 2))
    a[:, 0, 0] = osc
    a[:, 1, 1] = 2.005 - osc
    with pytest.raises(ThresholdNotFoundError) as excinfo:
        find_N0(dom, a, dom.gamma.copy(), 1.0)
    assert len(excinfo.value.profile) == 1


def test_resolvent_symbol_bound_values():
    assert resolvent_symbol_bound(1.0, 512) == 1.0
    assert resolvent_symbol_bound(4.0, 0) == 0.25
    for N in (1.0, 2.0, 4.0, 16.0, 256.0):
        assert resolvent_symbol_bound(N, 512) <= 1.0 + 1e-12
    with pytest.raises(RangeError):
        resolvent_symbol_bound(0.5, 10)


def test_rellich_constant_data(disk16):
    a, b = identity_coeffs(disk16)
    ratio = rellich_ratio(disk16, a, b, BoundaryField(disk16, np.ones(disk16.n_boundary)))
    assert abs(ratio - 1.0) < 5e-3


def test_rellich_cosine_data(disk24):
    a, b = identity_coeffs(disk24)
    ratio = rellich_ratio(disk24, a, b, BoundaryField(disk24, np.cos(disk24.thetas)))
    assert abs(ratio - (1.0 + np.sqrt(2.0)) / 2.0) < 0.02 * (1.0 + np.sqrt(2.0)) / 2.0


def test_rellich_refinement_stability(rng):
    doms = [build_disk(12, 24, 1.0), build_disk(24, 48, 1.0)]
    for k in range(3):
        coeffs = rng.standard_normal(4)
        ratios = []
        for dom in doms:
            th = dom.thetas
            g = (
                coeffs[0]
                + coeffs[1] * np.cos(th)
                + coeffs[2] * np.sin(2 * th)
                + coeffs[3] * np.cos(3 * th)
            )
            a, b = identity_coeffs(dom)
            ratios.append(rellich_ratio(dom, a, b, BoundaryField(dom, g)))
        assert abs(ratios[1] - ratios[0]) < 0.05 * ratios[0]


def test_rellich_rejects_zero_data(disk16):
    a, b = identity_coeffs(disk16)
    with pytest.raises(RangeError):
        rellich_ratio(disk16, a, b, BoundaryField(disk16, np.zeros(disk16.n_boundary)))


def test_kernel_estimate_bounded_under_refinement(rng):
    ratios = []
    for n_r, n_t in ((12, 24), (24, 48)):
        dom = build_disk(n_r, n_t, 1.0)
        a, b = identity_coeffs(dom)
        x, y = dom.nodes[:, 0], dom.nodes[:, 1]
        phi = ScalarField(dom, np.sin(2 * x) * np.cos(y) + 0.3 * x * y)
        ratios.append(kernel_estimate_ratio(dom, a, b, 32.0, phi))
    assert ratios[1] <= 2.0 * ratios[0]


def test_surjectivity_family_nonsingular(disk16):
    a, b = identity_coeffs(disk16)
    n0, _ = find_N0(disk16, a, b, 256.0)
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        assert surjectivity_family_ratio(disk16, 2.0 * n0, t) > 1e-10
    with pytest.raises(RangeError):
        surjectivity_family_ratio(disk16, 2.0 * n0, 1.5)


def test_semifiniteness_robin(disk16):
    pair = linearize(
        make_laplace_robin(disk16), ScalarField(disk16, np.ones(disk16.n_nodes))
    )
    mu, diag = semifiniteness_mu(pair)
    assert mu < 0.0
    assert np.isfinite(diag["shifted_condition"])


def test_semifiniteness_shift_identity(disk16):
    u = ScalarField(disk16, np.ones(disk16.n_nodes))
    mu0, _ = semifiniteness_mu(linearize(make_laplace_robin(disk16), u))
    mu7, _ = semifiniteness_mu(linearize(make_laplace_robin(disk16, c=7.0), u))
    assert abs((mu7 - mu0) - 7.0) < 1e-10


def test_frozen_split_reconstruction(disk16, rng):
    prob = make_semilinear_robin(disk16, lam=3.0)
    for _ in range(2):
        u = random_smooth_field(disk16, rng, amplitude=0.8)
        fs = frozen_split(prob, u, N=8.0)
        l_parts = fs.l_apply(u)
        r_parts = fs.r_apply(u)
        targets = fs.composite_target()
        scale = max(1.0, *(np.max(np.abs(t)) for t in targets))
        for l, r, t in zip(l_parts, r_parts, targets):
            assert np.max(np.abs(l + r - t)) / scale < 1e-8
