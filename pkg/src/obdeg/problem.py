"""Nonlinear oblique boundary value problems and their linearizations.

A problem is the pair of evaluators

    interior:  f(x, z, p, r)   with z = u, p = Du, r = D2u,
    boundary:  g(x, z, p),

supplied together with analytic derivative evaluators df/dr (symmetric
matrix), df/dp, df/dz, dg/dp, dg/dz.  All evaluators are vectorized over
nodes: x is (k, 2), z is (k,), p is (k, 2), r is (k, 2, 2).

Freezing the derivatives at a field u produces a LinearPair -- the
variable-coefficient linear operator whose spectrum drives the degree
computation.  Ellipticity is measured as the smallest eigenvalue of
df/dr over interior nodes, obliqueness as the smallest value of
(dg/dp) . gamma along the boundary.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .calculus import BoundaryField, ScalarField, gradient, hessian, operators
from .domain import DiscreteDomain
from .errors import InputError

_FD_STEP = 1e-5
_CONSISTENCY_TOL = 1e-6


@dataclass(frozen=True)
class ObliqueProblem:
    """Evaluators for (f, g) and their derivatives on one domain."""

    domain: DiscreteDomain
    f: Callable
    g: Callable
    df_dr: Callable
    df_dp: Callable
    df_dz: Callable
    dg_dp: Callable
    dg_dz: Callable
    name: str = ""
    fd_fallback: bool = False  # derivatives approximated, flagged for reports
    reference_states: tuple = None

    def __post_init__(self):
        _check_derivative_consistency(self)


@dataclass(frozen=True)
class LinearPair:
    """Frozen-coefficient linear pair (a:D2 + d.D + c, b.D + ell)."""

    domain: DiscreteDomain
    a: np.ndarray      # (n, 2, 2) principal coefficients
    d: np.ndarray      # (n, 2) drift
    c: np.ndarray      # (n,) zero order
    b: np.ndarray      # (nb, 2) boundary vector field
    ell: np.ndarray    # (nb,) boundary zero order

    def __post_init__(self):
        n, nb = self.domain.n_nodes, self.domain.n_boundary
        for nm, arr, shape in (
            ("a", self.a, (n, 2, 2)),
            ("d", self.d, (n, 2)),
            ("c", self.c, (n,)),
            ("b", self.b, (nb, 2)),
            ("ell", self.ell, (nb,)),
        ):
            arr = np.asarray(arr, dtype=float)
            if arr.shape != shape:
                raise InputError(f"LinearPair field {nm} has shape {arr.shape}, wants {shape}")
            if not np.all(np.isfinite(arr)):
                raise InputError(f"LinearPair field {nm} contains non-finite entries")
            object.__setattr__(self, nm, arr)
        if np.max(np.abs(self.a[:, 0, 1] - self.a[:, 1, 0])) > 1e-12 * (
            1.0 + np.max(np.abs(self.a))
        ):
            raise InputError("LinearPair principal coefficients must be symmetric")


def _states_for_check(prob):
    """Admissible probe states for the construction-time derivative check."""
    if prob.reference_states is not None:
        return prob.reference_states
    dom = prob.domain
    rng = np.random.default_rng(1234)
    states = []
    for _ in range(2):
        coeff = 0.3 * rng.standard_normal(6)
        x, y = dom.nodes[:, 0], dom.nodes[:, 1]
        vals = 1.0 + coeff[0] * x + coeff[1] * y + coeff[2] * x * y + coeff[3] * (
            x * x - y * y
        ) + coeff[4] * np.sin(x) + coeff[5] * y * y
        u = ScalarField(dom, vals)
        states.append((dom.nodes, u.values, gradient(u), hessian(u)))
    return tuple(states)


def _rel_err(approx, exact):
    scale = max(1.0, np.max(np.abs(exact)), np.max(np.abs(approx)))
    return np.max(np.abs(approx - exact)) / scale


def _check_derivative_consistency(prob):
    """Central finite differences of f, g must match the supplied derivatives."""
    dom = prob.domain
    nb = dom.n_boundary
    h = _FD_STEP
    for x, z, p, r in _states_for_check(prob):
        # df/dz
        fd = (prob.f(x, z + h, p, r) - prob.f(x, z - h, p, r)) / (2 * h)
        if _rel_err(fd, prob.df_dz(x, z, p, r)) > _CONSISTENCY_TOL:
            raise InputError(f"problem {prob.name!r}: df/dz inconsistent with f")
        # df/dp
        dp = prob.df_dp(x, z, p, r)
        for k in range(2):
            pp = p.copy()
            pp[:, k] += h
            pm = p.copy()
            pm[:, k] -= h
            fd = (prob.f(x, z, pp, r) - prob.f(x, z, pm, r)) / (2 * h)
            if _rel_err(fd, dp[:, k]) > _CONSISTENCY_TOL:
                raise InputError(f"problem {prob.name!r}: df/dp[{k}] inconsistent with f")
        # df/dr as the gradient against symmetric perturbations
        dr = prob.df_dr(x, z, p, r)
        if np.max(np.abs(dr[:, 0, 1] - dr[:, 1, 0])) > 1e-12 * (1 + np.max(np.abs(dr))):
            raise InputError(f"problem {prob.name!r}: df/dr is not symmetric")
        for s, t in ((0, 0), (0, 1), (1, 1)):
            rp = r.copy()
            rp[:, s, t] += h
            rp[:, t, s] = rp[:, s, t]
            rm = r.copy()
            rm[:, s, t] -= h
            rm[:, t, s] = rm[:, s, t]
            fd = (prob.f(x, z, p, rp) - prob.f(x, z, p, rm)) / (2 * h)
            # symmetric perturbation moves both off-diagonal slots
            want = dr[:, s, t] * (2.0 if s != t else 1.0)
            if _rel_err(fd, want) > _CONSISTENCY_TOL:
                raise InputError(f"problem {prob.name!r}: df/dr[{s}{t}] inconsistent with f")
        # boundary operator
        xb, zb, pb = x[-nb:], z[-nb:], p[-nb:]
        fd = (prob.g(xb, zb + h, pb) - prob.g(xb, zb - h, pb)) / (2 * h)
        if _rel_err(fd, prob.dg_dz(xb, zb, pb)) > _CONSISTENCY_TOL:
            raise InputError(f"problem {prob.name!r}: dg/dz inconsistent with g")
        dgp = prob.dg_dp(xb, zb, pb)
        for k in range(2):
            pp = pb.copy()
            pp[:, k] += h
            pm = pb.copy()
            pm[:, k] -= h
            fd = (prob.g(xb, zb, pp) - prob.g(xb, zb, pm)) / (2 * h)
            if _rel_err(fd, dgp[:, k]) > _CONSISTENCY_TOL:
                raise InputError(f"problem {prob.name!r}: dg/dp[{k}] inconsistent with g")


def with_fd_derivatives(domain, f, g, name="", reference_states=None):
    """Build a problem whose derivatives are central differences of f, g.

    The result is flagged (``fd_fallback``); degree computations are
    sensitive to the principal coefficients, so analytic derivatives are
    preferred whenever available.
    """
    h = _FD_STEP

    def df_dz(x, z, p, r):
        return (f(x, z + h, p, r) - f(x, z - h, p, r)) / (2 * h)

    def df_dp(x, z, p, r):
        cols = []
        for k in range(2):
            pp = p.copy()
            pp[:, k] += h
            pm = p.copy()
            pm[:, k] -= h
            cols.append((f(x, z, pp, r) - f(x, z, pm, r)) / (2 * h))
        return np.column_stack(cols)

    def df_dr(x, z, p, r):
        out = np.empty((len(z), 2, 2))
        for s, t in ((0, 0), (0, 1), (1, 1)):
            rp = r.copy()
            rp[:, s, t] += h
            rp[:, t, s] = rp[:, s, t]
            rm = r.copy()
            rm[:, s, t] -= h
            rm[:, t, s] = rm[:, s, t]
            d = (f(x, z, p, rp) - f(x, z, p, rm)) / (2 * h)
            if s != t:
                d = 0.5 * d
            out[:, s, t] = d
            out[:, t, s] = d
        return out

    def dg_dz(x, z, p):
        return (g(x, z + h, p) - g(x, z - h, p)) / (2 * h)

    def dg_dp(x, z, p):
        cols = []
        for k in range(2):
            pp = p.copy()
            pp[:, k] += h
            pm = p.copy()
            pm[:, k] -= h
            cols.append((g(x, z, pp) - g(x, z, pm)) / (2 * h))
        return np.column_stack(cols)

    return ObliqueProblem(
        domain=domain,
        f=f,
        g=g,
        df_dr=df_dr,
        df_dp=df_dp,
        df_dz=df_dz,
        dg_dp=dg_dp,
        dg_dz=dg_dz,
        name=name,
        fd_fallback=True,
        reference_states=reference_states,
    )


# ---------------------------------------------------------------------------
# Evaluation


def problem_state(prob, u: ScalarField):
    """(x, z, p, r) arrays of the field over all nodes."""
    if u.domain is not prob.domain and not np.array_equal(u.domain.nodes, prob.domain.nodes):
        raise InputError("field and problem live on different domains")
    return prob.domain.nodes, u.values, gradient(u), hessian(u)


def residual(prob: ObliqueProblem, u: ScalarField):
    """(f over the mesh, g along the boundary) at the field u.

    The interior equation rows of solvers use the returned f values at
    interior nodes only; values at boundary nodes are needed by the
    composite operators that post-apply S.
    """
    x, z, p, r = problem_state(prob, u)
    dom = prob.domain
    fvals = np.asarray(prob.f(x, z, p, r), dtype=float)
    nb = dom.n_boundary
    gvals = np.asarray(prob.g(x[-nb:], z[-nb:], p[-nb:]), dtype=float)
    return ScalarField(dom, fvals), BoundaryField(dom, gvals)


def linearize(prob: ObliqueProblem, u: ScalarField) -> LinearPair:
    """Freeze the derivative evaluators at u."""
    x, z, p, r = problem_state(prob, u)
    dom = prob.domain
    nb = dom.n_boundary
    xb, zb, pb = x[-nb:], z[-nb:], p[-nb:]
    return LinearPair(
        domain=dom,
        a=np.asarray(prob.df_dr(x, z, p, r), dtype=float),
        d=np.asarray(prob.df_dp(x, z, p, r), dtype=float),
        c=np.asarray(prob.df_dz(x, z, p, r), dtype=float),
        b=np.asarray(prob.dg_dp(xb, zb, pb), dtype=float),
        ell=np.asarray(prob.dg_dz(xb, zb, pb), dtype=float),
    )


def ellipticity_margin(prob: ObliqueProblem, u: ScalarField) -> float:
    """Smallest eigenvalue of df/dr over interior nodes."""
    x, z, p, r = problem_state(prob, u)
    a = np.asarray(prob.df_dr(x, z, p, r), dtype=float)[: prob.domain.n_interior]
    return float(np.min(_sym2x2_min_eig(a)))


def obliqueness_margin(prob: ObliqueProblem, u: ScalarField) -> float:
    """Smallest value of (dg/dp) . gamma along the boundary."""
    dom = prob.domain
    x, z, p, _ = problem_state(prob, u)
    nb = dom.n_boundary
    b = np.asarray(prob.dg_dp(x[-nb:], z[-nb:], p[-nb:]), dtype=float)
    return float(np.min(np.sum(b * dom.gamma, axis=1)))


def _sym2x2_min_eig(a):
    mean = 0.5 * (a[:, 0, 0] + a[:, 1, 1])
    disc = np.sqrt((0.5 * (a[:, 0, 0] - a[:, 1, 1])) ** 2 + a[:, 0, 1] ** 2)
    return mean - disc


def pair_margins(pair: LinearPair):
    lam = float(np.min(_sym2x2_min_eig(pair.a[: pair.domain.n_interior])))
    chi = float(np.min(np.sum(pair.b * pair.domain.gamma, axis=1)))
    return lam, chi


# ---------------------------------------------------------------------------
# LinearPair assembly


def assemble_pair(pair: LinearPair):
    """Square matrix over nodal values: interior operator rows at interior
    nodes, boundary operator rows at boundary nodes."""
    dom = pair.domain
    ops = operators(dom)
    ni = dom.n_interior

    def dia(v):
        return sp.diags(v)

    interior_op = (
        dia(pair.a[:, 0, 0]) @ ops.hxx
        + dia(2.0 * pair.a[:, 0, 1]) @ ops.hxy
        + dia(pair.a[:, 1, 1]) @ ops.hyy
        + dia(pair.d[:, 0]) @ ops.dx
        + dia(pair.d[:, 1]) @ ops.dy
        + dia(pair.c)
    ).tocsr()

    grad_b = sp.vstack(
        [dia(pair.b[:, 0]) @ ops.dx[ni:, :] + dia(pair.b[:, 1]) @ ops.dy[ni:, :]]
    ).tocsr()
    eye_b = sp.hstack([sp.csr_matrix((dom.n_boundary, ni)), dia(pair.ell)])
    boundary_op = (grad_b + eye_b).tocsr()

    return sp.vstack([interior_op[:ni, :], boundary_op]).tocsr()


def apply_pair(pair: LinearPair, w: ScalarField):
    """(interior operator applied over the mesh, boundary operator on the chain)."""
    dom = pair.domain
    ops = operators(dom)
    h = ops.hessian_values(w.values)
    grad = ops.gradient_values(w.values)
    interior = (
        np.einsum("nst,nst->n", pair.a, h) + np.sum(pair.d * grad, axis=1) + pair.c * w.values
    )
    nb = dom.n_boundary
    bnd = np.sum(pair.b * grad[-nb:], axis=1) + pair.ell * w.boundary_values
    return ScalarField(dom, interior), BoundaryField(dom, bnd)


# ---------------------------------------------------------------------------
# Built-in problem registry


def _const(v):
    return lambda *args: v


def make_laplace_robin(domain, c=0.0, f_rhs=None, g_rhs=None, name="laplace-robin"):
    """tr(D2u) + c u - f_rhs in the interior, gamma . Du + u - g_rhs on the boundary."""
    c = float(c)
    f_rhs_fn = f_rhs if f_rhs is not None else _const(0.0)
    g_rhs_fn = g_rhs if g_rhs is not None else _const(0.0)
    gamma_of = _gamma_lookup(domain)

    def f(x, z, p, r):
        return r[:, 0, 0] + r[:, 1, 1] + c * z - f_rhs_fn(x)

    def g(x, z, p):
        gm = gamma_of(x)
        return np.sum(gm * p, axis=1) + z - g_rhs_fn(x)

    return ObliqueProblem(
        domain=domain,
        f=f,
        g=g,
        df_dr=lambda x, z, p, r: np.broadcast_to(np.eye(2), (len(z), 2, 2)).copy(),
        df_dp=lambda x, z, p, r: np.zeros((len(z), 2)),
        df_dz=lambda x, z, p, r: np.full(len(z), c),
        dg_dp=lambda x, z, p: gamma_of(x).copy(),
        dg_dz=lambda x, z, p: np.ones(len(z)),
        name=name,
    )


def make_semilinear_robin(domain, lam=3.0, forcing=0.0, name="semilinear-robin"):
    """tr(D2u) + lam (u - u^3) + forcing in the interior, Robin on the boundary.

    For lam strictly between the first two Robin eigenvalues of the disk
    and forcing = 0 this has three zeros: the trivial one (linearization
    index 1) and a symmetric pair of stable states; tilting with a small
    constant forcing merges two of them at a fold.
    """
    lam = float(lam)
    forcing = float(forcing)
    gamma_of = _gamma_lookup(domain)

    def f(x, z, p, r):
        return r[:, 0, 0] + r[:, 1, 1] + lam * (z - z**3) + forcing

    def g(x, z, p):
        return np.sum(gamma_of(x) * p, axis=1) + z

    return ObliqueProblem(
        domain=domain,
        f=f,
        g=g,
        df_dr=lambda x, z, p, r: np.broadcast_to(np.eye(2), (len(z), 2, 2)).copy(),
        df_dp=lambda x, z, p, r: np.zeros((len(z), 2)),
        df_dz=lambda x, z, p, r: lam * (1.0 - 3.0 * z**2),
        dg_dp=lambda x, z, p: gamma_of(x).copy(),
        dg_dz=lambda x, z, p: np.ones(len(z)),
        name=name,
    )


def make_manufactured(domain, which="quadratic", name=None):
    """(problem, exact solution field) pairs for solver verification.

    quadratic:      linear Robin problem solved exactly by x^2 + y^2.
    semilinear-exp: tr(D2u) + e^u - source, with the source generated on
                    the mesh so the interpolated target is an exact
                    discrete zero.
    """
    x0, y0 = domain.nodes[:, 0], domain.nodes[:, 1]
    gamma_of = _gamma_lookup(domain)
    if which == "quadratic":
        pb = 2.0 * domain.boundary_nodes
        zb = np.sum(domain.boundary_nodes**2, axis=1)
        g_data = np.sum(domain.gamma * pb, axis=1) + zb
        prob = make_laplace_robin(
            domain,
            c=0.0,
            f_rhs=_node_data(4.0 * np.ones(domain.n_nodes)),
            g_rhs=_node_data(g_data),
            name=name or "manufactured:quadratic",
        )
        return prob, ScalarField(domain, x0**2 + y0**2)
    if which == "semilinear-exp":
        u_star = ScalarField(domain, 0.5 * np.sin(x0) * np.cos(y0))
        ops = operators(domain)
        source = ops.lap @ u_star.values + np.exp(u_star.values)
        f_rhs = _node_data(source)
        g_star = gradient(u_star)
        nb = domain.n_boundary
        g_rhs = _node_data(
            np.sum(domain.gamma * g_star[-nb:], axis=1) + u_star.boundary_values
        )

        def f(x, z, p, r):
            return r[:, 0, 0] + r[:, 1, 1] + np.exp(z) - f_rhs(x)

        def g(x, z, p):
            return np.sum(gamma_of(x) * p, axis=1) + z - g_rhs(x)

        prob = ObliqueProblem(
            domain=domain,
            f=f,
            g=g,
            df_dr=lambda x, z, p, r: np.broadcast_to(np.eye(2), (len(z), 2, 2)).copy(),
            df_dp=lambda x, z, p, r: np.zeros((len(z), 2)),
            df_dz=lambda x, z, p, r: np.exp(z),
            dg_dp=lambda x, z, p: gamma_of(x).copy(),
            dg_dz=lambda x, z, p: np.ones(len(z)),
            name=name or "manufactured:semilinear-exp",
        )
        return prob, u_star
    raise InputError(f"unknown manufactured problem id {which!r}")


def _node_data(values):
    """Mesh-ordered data served to evaluators (they receive nodes in mesh order)."""
    values = np.asarray(values, dtype=float)

    def data(x):
        if len(x) != len(values):
            raise InputError("node data evaluated off its mesh ordering")
        return values

    return data


def _gamma_lookup(domain):
    """Outward normals for boundary evaluators (called in chain order)."""

    def lookup(x):
        if len(x) != domain.n_boundary:
            raise InputError("boundary evaluator called off the boundary chain")
        return domain.gamma

    return lookup


REGISTRY = {
    "laplace-robin": make_laplace_robin,
    "semilinear-robin": make_semilinear_robin,
}


def problem_by_name(name, domain, **params):
    """Look up a built-in problem by registry name."""
    if name.startswith("manufactured:"):
        prob, _ = make_manufactured(domain, which=name.split(":", 1)[1])
        return prob
    if name == "reflector":
        from . import reflector as _reflector

        return _reflector.registry_problem(domain, **params)
    if name == "yamabe-sigma1":
        from . import yamabe as _yamabe

        return _yamabe.registry_problem(domain, **params)
    if name not in REGISTRY:
        raise InputError(f"unknown problem name {name!r}")
    return REGISTRY[name](domain, **params)
