"""Conformal scalar-curvature toy problem with a curvature boundary condition.

For dimension parameter n >= 3 the conformally flat interior equation is

    -Lap_n u = kappa(n) u^((n+2)/(n-2)),      kappa(n) = (n - 2) / 2,

where Lap_n u = tr D2u + (n - 2) (x . Du) / |x|^2 acts on the 2D radial
section (the dimension enters only through exponents and the radial
drift).  kappa comes from normalizing the trace of the conformal
curvature tensor to one: the scalar curvature of u^(4/(n-2)) times the
flat metric is -u^(-(n+2)/(n-2)) (4(n-1)/(n-2)) Lap u, and dividing by
2(n-1) gives the normalization above.  The boundary operator prescribes
the conformal boundary curvature,

    u^(-n/(n-2)) [du/dnu + (n-2)/2 h u] = c,

with h = +1 for the unit ball with respect to the outward normal.  At
c = 0 the exact solution is the explicit profile
(2n)^((n-2)/4) (1 + |x|^2)^(-(n-2)/2), which seeds the continuation in c.
"""

from dataclasses import dataclass

import numpy as np

from .calculus import ScalarField, gradient, hessian, residual_floor
from .continuation import ContinuationSchedule, NewtonOptions, continue_homotopy
from .degree import degree_at_zero
from .domain import build_disk
from .errors import ConfigurationError, PositivityError, UnsupportedRegimeError
from .problem import ObliqueProblem


@dataclass(frozen=True)
class YamabeConfig:
    """Dimension parameter, boundary-curvature target and mesh resolution."""

    n: int
    c: float
    h_g: float = 1.0
    shape: str = "ball"
    n_r: int = 64
    n_theta: int = 16

    def __post_init__(self):
        if self.n < 3:
            raise ConfigurationError(
                f"dimension parameter n = {self.n} must be at least 3"
            )
        if self.shape != "ball":
            raise ConfigurationError(
                f"domain selector {self.shape!r} is not supported: the mesh carries "
                "a single closed boundary chain, which rules out annulus sections"
            )

    @property
    def q_critical(self):
        return (self.n + 2.0) / (self.n - 2.0)

    @property
    def q_boundary(self):
        return self.n / (self.n - 2.0)

    @property
    def kappa(self):
        return 0.5 * (self.n - 2.0)


def _check_positive(z, x):
    bad = z <= 0.0
    if np.any(bad):
        idx = np.flatnonzero(bad)
        raise PositivityError(
            f"conformal factor nonpositive at {len(idx)} node(s)",
            nodes=idx,
            coords=np.atleast_2d(x)[idx],
        )


def yamabe_residual(u: ScalarField, cfg: YamabeConfig):
    """(interior, boundary) residuals in curvature orientation.

    Interior: -Lap_n u - kappa u^((n+2)/(n-2)) over the mesh; boundary:
    the conformal boundary-curvature expression minus c.  The solver
    pipeline uses the elliptic orientation (overall interior sign flipped);
    zero sets agree.
    """
    dom = u.domain
    _check_positive(u.values, dom.nodes)
    prob = registry_problem(dom, n=cfg.n, c=cfg.c, h_g=cfg.h_g)
    x, z, p, r = dom.nodes, u.values, gradient(u), hessian(u)
    interior = -prob.f(x, z, p, r)
    nb = dom.n_boundary
    boundary = prob.g(x[-nb:], z[-nb:], p[-nb:])
    from .calculus import BoundaryField

    return ScalarField(dom, interior), BoundaryField(dom, boundary)


def registry_problem(domain, n=3, c=0.0, h_g=1.0, **_):
    """Elliptic-oriented oblique problem for the conformal equations."""
    cfg_q = (n + 2.0) / (n - 2.0)
    bq = n / (n - 2.0)
    kappa = 0.5 * (n - 2.0)
    hcoef = 0.5 * (n - 2.0) * h_g
    x_all = domain.nodes
    r2_all = np.sum(x_all * x_all, axis=1)

    def f(x, z, p, r):
        _check_positive(z, x)
        x = np.atleast_2d(x)
        r2 = np.sum(x * x, axis=1)
        drift = (n - 2.0) * np.sum(x * p, axis=1) / r2
        return r[:, 0, 0] + r[:, 1, 1] + drift + kappa * z**cfg_q

    def df_dr(x, z, p, r):
        return np.broadcast_to(np.eye(2), (len(z), 2, 2)).copy()

    def df_dp(x, z, p, r):
        x = np.atleast_2d(x)
        r2 = np.sum(x * x, axis=1)
        return (n - 2.0) * x / r2[:, None]

    def df_dz(x, z, p, r):
        return kappa * cfg_q * z ** (cfg_q - 1.0)

    gamma = domain.gamma

    def g(x, z, p):
        _check_positive(z, x)
        gn = np.sum(gamma * p, axis=1)
        return z ** (-bq) * (gn + hcoef * z) - c

    def dg_dp(x, z, p):
        return z[:, None] ** (-bq) * gamma

    def dg_dz(x, z, p):
        gn = np.sum(gamma * p, axis=1)
        return -bq * z ** (-bq - 1.0) * (gn + hcoef * z) + z ** (-bq) * hcoef

    # probe states near the explicit c = 0 profile (positive, admissible)
    amp = (2.0 * n) ** ((n - 2.0) / 4.0)
    base = amp * (1.0 + r2_all) ** (-(n - 2.0) / 2.0)
    probe = ScalarField(domain, base)
    ref = (domain.nodes, probe.values, gradient(probe), hessian(probe))
    return ObliqueProblem(
        domain=domain,
        f=f,
        g=g,
        df_dr=df_dr,
        df_dp=df_dp,
        df_dz=df_dz,
        dg_dp=dg_dp,
        dg_dz=dg_dz,
        name="yamabe-sigma1",
        reference_states=(ref,),
    )


def explicit_zero_curvature_profile(n):
    """Closed-form solution of the c = 0 problem on the unit ball."""
    amp = (2.0 * n) ** ((n - 2.0) / 4.0)

    def profile(x):
        x = np.atleast_2d(x)
        return amp * (1.0 + np.sum(x * x, axis=1)) ** (-(n - 2.0) / 2.0)

    return profile


def solve_yamabe(cfg: YamabeConfig, opts: NewtonOptions = None):
    """Continuation in the boundary-curvature target from c = 0.

    Returns (solution field, report dict).  The report carries the
    normalization constant, the boundary convention, and the degree of
    the linearization at the solution.  Negative targets are rejected:
    no curvature estimates control that regime.
    """
    if cfg.c < 0.0:
        raise UnsupportedRegimeError(
            f"boundary-curvature target c = {cfg.c:g} is negative: "
            "second-derivative control is unavailable in this regime"
        )
    dom = build_disk(cfg.n_r, cfg.n_theta, 1.0)
    if opts is None:
        opts = NewtonOptions(tol=max(1e-9, 100.0 * residual_floor(dom)), max_iter=30)

    def family(t):
        return registry_problem(dom, n=cfg.n, c=t * cfg.c, h_g=cfg.h_g)

    u_init = ScalarField(dom, explicit_zero_curvature_profile(cfg.n)(dom.nodes))
    if cfg.c == 0.0:
        from .continuation import newton_solve

        u, diag = newton_solve(family(0.0), u_init, opts)
        iterations = [diag["iterations"]]
    else:
        path = continue_homotopy(
            family, u_init, ContinuationSchedule(dt_init=0.25), opts
        )
        u = path.final.u
        iterations = [e.iterations for e in path.entries]

    prob = family(1.0)
    deg = degree_at_zero(prob, u)
    angular = u.values.reshape(cfg.n_r, cfg.n_theta)
    angular_var = float(np.max(np.std(angular, axis=1) / np.mean(np.abs(angular))))
    report = {
        "n": cfg.n,
        "c": cfg.c,
        "h_g_convention": "unit ball outward normal has h = +1",
        "kappa": cfg.kappa,
        "degree": deg.degree,
        "dim_E_minus": deg.dim_E_minus,
        "iterations": iterations,
        "angular_variance": angular_var,
        "mesh": (cfg.n_r, cfg.n_theta),
    }
    return u, report
