import numpy as np
import pytest

from obdeg import (
    DomainFoliation,
    RadiusFunction,
    build_disk,
    build_star,
    foliation_domain,
)
from obdeg.calculus import boundary_integrate, integrate
from obdeg.errors import ConfigurationError, RangeError


def test_disk_area_and_perimeter(disk32):
    area = integrate(disk32, np.ones(disk32.n_nodes))
    assert abs(area - np.pi) < 0.01 * np.pi
    perim = boundary_integrate(disk32, np.ones(disk32.n_boundary))
    assert abs(perim - 2 * np.pi) < 0.01 * 2 * np.pi


def test_disk_normals_exact(disk16):
    expected = np.column_stack([np.cos(disk16.thetas), np.sin(disk16.thetas)])
    assert np.max(np.abs(disk16.gamma - expected)) < 1e-14


def test_normals_unit_and_weights_positive(star16):
    assert np.max(np.abs(np.linalg.norm(star16.gamma, axis=1) - 1.0)) < 1e-12
    assert np.all(star16.interior_weights > 0)
    assert np.all(star16.boundary_weights > 0)


def test_boundary_chain_closed(disk16):
    b = disk16.boundary_nodes
    gaps = np.linalg.norm(np.roll(b, -1, axis=0) - b, axis=1)
    assert np.all(gaps > 0)
    assert len(b) == disk16.n_theta


def test_star_area_perimeter_match_dense_reference(star16):
    theta = np.linspace(0, 2 * np.pi, 20000, endpoint=False)
    r = star16.radius(theta)
    rd = star16.radius.derivative(theta)
    area_ref = 0.5 * np.mean(r**2) * 2 * np.pi
    perim_ref = np.mean(np.sqrt(r**2 + rd**2)) * 2 * np.pi
    assert abs(integrate(star16, np.ones(star16.n_nodes)) - area_ref) < 0.01 * area_ref
    assert (
        abs(boundary_integrate(star16, np.ones(star16.n_boundary)) - perim_ref)
        < 0.01 * perim_ref
    )


def test_quadrature_second_order_convergence():
    rf = RadiusFunction(1.0, a_cos=(0.2,))
    theta = np.linspace(0, 2 * np.pi, 50000, endpoint=False)
    area_ref = 0.5 * np.mean(rf(theta) ** 2) * 2 * np.pi
    perim_ref = np.mean(np.sqrt(rf(theta) ** 2 + rf.derivative(theta) ** 2)) * 2 * np.pi
    errs_a, errs_p = [], []
    for n_r, n_t in [(8, 16), (16, 32), (32, 64)]:
        d = build_star(rf, n_r, n_t)
        errs_a.append(abs(integrate(d, np.ones(d.n_nodes)) - area_ref))
        errs_p.append(abs(boundary_integrate(d, np.ones(d.n_boundary)) - perim_ref))
    for errs in (errs_a, errs_p):
        for coarse, fine in zip(errs, errs[1:]):
            assert fine <= max(coarse / 3.5, 5e-13)


def test_resolution_validation():
    with pytest.raises(ConfigurationError):
        build_disk(3, 32, 1.0)
    with pytest.raises(ConfigurationError):
        build_disk(16, 6, 1.0)
    with pytest.raises(ConfigurationError):
        build_disk(16, 9, 1.0)  # odd angular count
    with pytest.raises(ConfigurationError):
        build_disk(16, 32, -1.0)


def test_foliation_endpoints_and_midpoint():
    fol = DomainFoliation(RadiusFunction(1.0), RadiusFunction(2.0), 8, 16)
    d0 = foliation_domain(fol, 0.0)
    d1 = foliation_domain(fol, 1.0)
    dh = foliation_domain(fol, 0.5)
    assert np.allclose(np.linalg.norm(d0.boundary_nodes, axis=1), 1.0)
    assert np.allclose(np.linalg.norm(d1.boundary_nodes, axis=1), 2.0)
    assert np.allclose(np.linalg.norm(dh.boundary_nodes, axis=1), 1.5)
    assert d0.same_topology(d1)


def test_foliation_range_and_monotonicity():
    fol = DomainFoliation(
        RadiusFunction(1.0, a_cos=(0.1,)), RadiusFunction(1.5, a_cos=(0.3,)), 8, 16
    )
    with pytest.raises(RangeError):
        foliation_domain(fol, 1.5)
    with pytest.raises(RangeError):
        foliation_domain(fol, -0.1)
    r_prev = np.linalg.norm(foliation_domain(fol, 0.2).boundary_nodes, axis=1)
    for t in (0.5, 0.8):
        r_now = np.linalg.norm(foliation_domain(fol, t).boundary_nodes, axis=1)
        assert np.all(r_now >= r_prev - 1e-12)
        r_prev = r_now


def test_foliation_rejects_decreasing_pair():
    with pytest.raises(ConfigurationError):
        DomainFoliation(RadiusFunction(2.0), RadiusFunction(1.0), 8, 16)
