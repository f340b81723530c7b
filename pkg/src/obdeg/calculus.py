"""Fields and discrete differential operators on polar-structured meshes.

Angular derivatives use the trigonometric (spectral) differentiation
matrix, so they are exact for the trigonometric polynomials that arise
when Cartesian polynomials are restricted to mesh rings.  Radial
derivatives use finite differences along straight rays through the
center: central 3-point stencils in the bulk, wider through-center
stencils on the two innermost rings (where chain-rule factors carry 1/r),
and one-sided stencils of matching order on the boundary ring.  First
derivatives are exact for affine functions and Hessians for quadratics,
up to roundoff.

The auxiliary isomorphisms are

    S: u -> (Lap u,  (gamma . Du + u)|boundary)
    T: f -> Lap_T f - f,

with Lap_T the second difference with respect to arclength along the
boundary chain.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .domain import DiscreteDomain
from .errors import InputError, SolverError


# ---------------------------------------------------------------------------
# Fields


def _check_values(values, expected, kind):
    values = np.asarray(values, dtype=float)
    if values.shape != (expected,):
        raise InputError(f"{kind} expects {expected} values, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise InputError(f"{kind} contains non-finite values")
    values = values.copy()
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class ScalarField:
    """Nodal values over interior + boundary nodes of a domain."""

    domain: DiscreteDomain
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "values", _check_values(self.values, self.domain.n_nodes, "ScalarField")
        )

    @property
    def boundary_values(self):
        return self.values[self.domain.n_interior:]

    @property
    def interior_values(self):
        return self.values[: self.domain.n_interior]

    def __add__(self, other):
        _same_domain(self, other)
        return ScalarField(self.domain, self.values + other.values)

    def __sub__(self, other):
        _same_domain(self, other)
        return ScalarField(self.domain, self.values - other.values)

    def __rmul__(self, scalar):
        return ScalarField(self.domain, float(scalar) * self.values)


@dataclass(frozen=True)
class BoundaryField:
    """Nodal values along the boundary chain of a domain."""

    domain: DiscreteDomain
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "values", _check_values(self.values, self.domain.n_boundary, "BoundaryField")
        )

    def __add__(self, other):
        _same_domain(self, other)
        return BoundaryField(self.domain, self.values + other.values)

    def __sub__(self, other):
        _same_domain(self, other)
        return BoundaryField(self.domain, self.values - other.values)

    def __rmul__(self, scalar):
        return BoundaryField(self.domain, float(scalar) * self.values)


def _same_domain(a, b):
    if a.domain is not b.domain and not (
        a.domain.same_topology(b.domain)
        and np.array_equal(a.domain.nodes, b.domain.nodes)
    ):
        raise InputError("fields live on different domains")


# ---------------------------------------------------------------------------
# Finite-difference machinery


def fornberg_weights(x0, xs, order):
    """Finite-difference weights for the given derivative order at x0.

    Classic recursion; exact for polynomials of degree len(xs) - 1.
    """
    xs = np.asarray(xs, dtype=float)
    n = len(xs)
    c = np.zeros((n, order + 1))
    c[0, 0] = 1.0
    c1 = 1.0
    c4 = xs[0] - x0
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = xs[i] - x0
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


def trig_diff_matrix(n):
    """Spectral differentiation matrix for 2*pi-periodic data on n points (n even)."""
    h = 2.0 * np.pi / n
    k = np.arange(1, n)
    col = 0.5 * (-1.0) ** k / np.tan(0.5 * k * h)
    D = np.zeros((n, n))
    for i in range(n):
        D[i, (i + np.arange(1, n)) % n] = -col
        D[i, (i - np.arange(1, n)) % n] = col
    # rows must annihilate constants exactly; the 1/r chain-rule factors
    # near the center amplify any residual row sum
    D[np.arange(n), np.arange(n)] -= D.sum(axis=1)
    return D


def trig_diff2_matrix(n):
    """Spectral second-derivative matrix on n periodic points (n even).

    Not the square of the first-derivative matrix: this one carries the
    sawtooth (Nyquist) mode to -(n/2)^2 times itself, which keeps spurious
    angular modes out of the low spectrum of assembled operators.
    """
    h = 2.0 * np.pi / n
    k = np.arange(1, n)
    col = -0.5 * (-1.0) ** k / np.sin(0.5 * k * h) ** 2
    D = np.full((n, n), 0.0)
    np.fill_diagonal(D, -np.pi**2 / (3.0 * h**2) - 1.0 / 6.0)
    for i in range(n):
        D[i, (i + k) % n] = col
        D[i, (i - k) % n] = col
    D[np.arange(n), np.arange(n)] -= D.sum(axis=1)
    return D


def _ray_stencil(dom, ring, j, width):
    """Nodes and radial coordinates along the ray through angle slot j.

    Returns (global indices, t-coordinates, t0).  Negative radii live on
    the antipodal angle slot.  ``width`` is the number of stencil points,
    chosen nearest to the target ring along the through-center line.
    """
    m, ntheta = dom.n_r, dom.n_theta
    ja = (j + ntheta // 2) % ntheta
    r_here = dom.radius(dom.thetas[j])
    r_anti = dom.radius(dom.thetas[ja])
    # Candidate (t, global index) pairs covering enough of the line.
    cands = []
    for k in range(1, m + 1):
        cands.append((dom.s_levels[k - 1] * r_here, dom.node_index(k, j)))
        cands.append((-dom.s_levels[k - 1] * r_anti, dom.node_index(k, ja)))
    t0 = dom.s_levels[ring - 1] * r_here
    cands.sort(key=lambda c: abs(c[0] - t0))
    chosen = sorted(cands[:width], key=lambda c: c[0])
    ts = np.array([c[0] for c in chosen])
    idx = np.array([c[1] for c in chosen], dtype=int)
    return idx, ts, t0


def _radial_matrices(dom):
    """Sparse first/second radial (physical) derivative matrices D_t, D_tt.

    Bulk rings use central 3-point stencils; rings 1-2 use 5-point
    through-center stencils (the polar chain rule divides by r there);
    the boundary ring uses one-sided stencils of matching order.
    """
    m, ntheta = dom.n_r, dom.n_theta
    n = dom.n_nodes
    rows1, cols1, vals1 = [], [], []
    rows2, cols2, vals2 = [], [], []
    for j in range(ntheta):
        for ring in range(1, m + 1):
            node = dom.node_index(ring, j)
            if ring <= 2:
                idx, ts, t0 = _ray_stencil(dom, ring, j, 5)
            elif ring == m:
                idx, ts, t0 = _ray_stencil_one_sided(dom, j, 4)
            else:
                idx, ts, t0 = _ray_stencil(dom, ring, j, 3)
            w1 = fornberg_weights(t0, ts, 1)
            w2 = fornberg_weights(t0, ts, 2)
            if ring == m:
                # First derivative keeps the 3 nearest points (matching order).
                rows1.extend([node] * 3)
                cols1.extend(idx[-3:])
                vals1.extend(fornberg_weights(t0, ts[-3:], 1))
            else:
                rows1.extend([node] * len(idx))
                cols1.extend(idx)
                vals1.extend(w1)
            rows2.extend([node] * len(idx))
            cols2.extend(idx)
            vals2.extend(w2)
    dt = sp.csr_matrix((vals1, (rows1, cols1)), shape=(n, n))
    dtt = sp.csr_matrix((vals2, (rows2, cols2)), shape=(n, n))
    return dt, dtt


def _ray_stencil_one_sided(dom, j, width):
    m = dom.n_r
    r_here = dom.radius(dom.thetas[j])
    rings = list(range(m - width + 1, m + 1))
    ts = np.array([dom.s_levels[k - 1] * r_here for k in rings])
    idx = np.array([dom.node_index(k, j) for k in rings], dtype=int)
    return idx, ts, ts[-1]


def _dtt_ext_matrix(dom, dtt):
    """Second radial derivative reading the ghost slot at boundary rows.

    A mirror ghost node is placed outside the boundary at the last radial
    spacing; its value is eliminated through the centered identity that
    defines the ghost unknown (the radial derivative at the boundary).
    """
    m, ntheta = dom.n_r, dom.n_theta
    n, nb, ni = dom.n_nodes, dom.n_boundary, dom.n_interior
    keep = sp.diags(np.concatenate([np.ones(ni), np.zeros(nb)]))
    rows, cols, vals = [], [], []
    rim = dom.radius(dom.thetas)
    for j in range(ntheta):
        t = dom.s_levels[-3:] * rim[j]
        t_gh = 2.0 * t[-1] - t[-2]
        w = fornberg_weights(t[-1], np.array([t[0], t[1], t[2], t_gh]), 2)
        node = dom.node_index(m, j)
        rows.extend([node] * 4)
        cols.extend(
            [dom.node_index(m - 2, j), dom.node_index(m - 1, j), dom.node_index(m, j), n + j]
        )
        # ghost value = w(m-1) + q * (t_gh - t(m-1)); q is the ghost unknown
        vals.extend([w[0], w[1] + w[3], w[2], w[3] * (t_gh - t[1])])
    bnd = sp.csr_matrix((vals, (rows, cols)), shape=(n, n + nb))
    return (sp.hstack([keep @ dtt, sp.csr_matrix((n, nb))], format="csr") + bnd).tocsr()


def _chain_laplacian(dom):
    """Periodic second difference with respect to arclength along the chain."""
    b = dom.boundary_nodes
    nb = dom.n_boundary
    chords = np.linalg.norm(np.roll(b, -1, axis=0) - b, axis=1)  # segment j -> j+1
    h_plus = chords
    h_minus = np.roll(chords, 1)
    w = 0.5 * (h_plus + h_minus)
    main = -(1.0 / h_plus + 1.0 / h_minus) / w
    upper = (1.0 / h_plus) / w
    lower = (1.0 / h_minus) / w
    rows = np.concatenate([np.arange(nb)] * 3)
    cols = np.concatenate([np.arange(nb), (np.arange(nb) + 1) % nb, (np.arange(nb) - 1) % nb])
    vals = np.concatenate([main, upper, lower])
    return sp.csr_matrix((vals, (rows, cols)), shape=(nb, nb))


class DomainOperators:
    """All discrete operators for one domain; built lazily and cached.

    Attributes ending in ``_ext`` act on extended vectors [values; ghost]
    where the ghost slots hold the radial derivative of the unknown at
    each boundary node (the extra degree of freedom carried by fourth
    order boundary value problems).  Prolonging a plain field with its
    one-sided radial derivative makes the extended first-derivative
    operators agree with the standard ones exactly; the ghost-aware
    second derivative differs from the one-sided one by a consistent
    O(h^2) amount (both exact for quadratics).
    """

    def __init__(self, dom: DiscreteDomain):
        self.domain = dom
        n, nb, ni = dom.n_nodes, dom.n_boundary, dom.n_interior
        m, ntheta = dom.n_r, dom.n_theta

        dt, dtt = _radial_matrices(dom)
        self.dt = dt

        W = trig_diff_matrix(ntheta)
        self.dtheta = sp.block_diag([sp.csr_matrix(W)] * m, format="csr")
        W2 = trig_diff2_matrix(ntheta)
        self.dtheta2 = sp.block_diag([sp.csr_matrix(W2)] * m, format="csr")

        thetas = np.tile(dom.thetas, m)
        rim = dom.radius(dom.thetas)
        rim_d = dom.radius.derivative(dom.thetas)
        cx = np.tile((rim_d * np.sin(dom.thetas) + rim * np.cos(dom.thetas)) / rim, m)
        cy = np.tile((rim * np.sin(dom.thetas) - rim_d * np.cos(dom.thetas)) / rim, m)
        s_all = np.repeat(dom.s_levels, ntheta)
        r_all = s_all * np.tile(rim, m)
        tx = -np.sin(thetas) / r_all
        ty = np.cos(thetas) / r_all

        def dia(v):
            return sp.diags(v)

        self.dx = (dia(cx) @ dt + dia(tx) @ self.dtheta).tocsr()
        self.dy = (dia(cy) @ dt + dia(ty) @ self.dtheta).tocsr()

        # Angular derivative at fixed radius: grid angles follow the level
        # sets of s, not of r, so subtract the radial drift s R' u_t.
        srd = s_all * np.tile(rim_d, m)

        # Extended first derivatives: boundary rows read the ghost slot,
        # which stores the radial derivative of the unknown there.
        keep = sp.diags(np.concatenate([np.ones(ni), np.zeros(nb)]))
        ghost_pick = sp.vstack(
            [sp.csr_matrix((ni, nb)), sp.identity(nb, format="csr")]
        ).tocsr()
        dt_ext = sp.hstack([keep @ dt, ghost_pick], format="csr")
        dtt_ext = _dtt_ext_matrix(dom, dtt)
        dtheta_ext = sp.hstack([self.dtheta, sp.csr_matrix((n, nb))], format="csr")
        self.dx_ext = (dia(cx) @ dt_ext + dia(tx) @ dtheta_ext).tocsr()
        self.dy_ext = (dia(cy) @ dt_ext + dia(ty) @ dtheta_ext).tocsr()

        def polar_hessian(d_t, d_tt, d_th, d_th2):
            """Hessian via polar second-derivative identities.

            Mixed and angular-angular derivatives keep the spectral angular
            operator outermost, so radial truncation errors are only ever
            differentiated along rings (where they vary smoothly) and the
            1/r chain-rule factors never amplify them.
            """
            b_op = (d_th - dia(srd) @ d_t).tocsr()              # du/dtheta at fixed r
            mixed = (self.dtheta @ d_t - dia(srd) @ d_tt).tocsr()    # u_{r theta}
            ang2 = (
                d_th2 - self.dtheta @ dia(srd) @ d_t - dia(srd) @ mixed
            ).tocsr()                                           # u_{theta theta}
            sin, cos = np.sin(thetas), np.cos(thetas)
            sc = sin * cos
            r, r2 = r_all, r_all**2
            hxx = (
                dia(cos**2) @ d_tt
                - dia(2 * sc / r) @ mixed
                + dia(sin**2 / r2) @ ang2
                + dia(sin**2 / r) @ d_t
                + dia(2 * sc / r2) @ b_op
            )
            hyy = (
                dia(sin**2) @ d_tt
                + dia(2 * sc / r) @ mixed
                + dia(cos**2 / r2) @ ang2
                + dia(cos**2 / r) @ d_t
                - dia(2 * sc / r2) @ b_op
            )
            cos2 = cos**2 - sin**2
            hxy = (
                dia(sc) @ d_tt
                + dia(cos2 / r) @ mixed
                - dia(sc / r2) @ ang2
                - dia(sc / r) @ d_t
                - dia(cos2 / r2) @ b_op
            )
            return hxx.tocsr(), hxy.tocsr(), hyy.tocsr()

        dtheta2_ext = sp.hstack([self.dtheta2, sp.csr_matrix((n, nb))], format="csr")
        self.hxx, self.hxy, self.hyy = polar_hessian(dt, dtt, self.dtheta, self.dtheta2)
        self.lap = (self.hxx + self.hyy).tocsr()
        self.hxx_ext, self.hxy_ext, self.hyy_ext = polar_hessian(
            dt_ext, dtt_ext, dtheta_ext, dtheta2_ext
        )
        self.lap_ext = (self.hxx_ext + self.hyy_ext).tocsr()

        self.chain_lap = _chain_laplacian(dom)

        # gamma . D rows at boundary nodes (standard one-sided radial part).
        gx = np.zeros(n)
        gy = np.zeros(n)
        gx[ni:] = dom.gamma[:, 0]
        gy[ni:] = dom.gamma[:, 1]
        self.gamma_dot_grad = (dia(gx) @ self.dx + dia(gy) @ self.dy).tocsr()[ni:, :]

        self._s_matrix = None
        self._s_lu = None
        self._t_lu = None

    def prolong(self, values):
        """Extend nodal values with their one-sided radial boundary derivative."""
        ni = self.domain.n_interior
        q = (self.dt @ values)[ni:]
        return np.concatenate([values, q])

    def gradient_values(self, values):
        return np.column_stack([self.dx @ values, self.dy @ values])

    def hessian_values(self, values):
        hxx = self.hxx @ values
        hxy = self.hxy @ values
        hyy = self.hyy @ values
        out = np.empty((len(values), 2, 2))
        out[:, 0, 0] = hxx
        out[:, 0, 1] = hxy
        out[:, 1, 0] = hxy
        out[:, 1, 1] = hyy
        return out

    @property
    def s_matrix(self):
        if self._s_matrix is None:
            dom = self.domain
            ni = dom.n_interior
            top = self.lap[:ni, :]
            eye_b = sp.hstack(
                [sp.csr_matrix((dom.n_boundary, ni)), sp.identity(dom.n_boundary)]
            )
            bottom = self.gamma_dot_grad + eye_b
            self._s_matrix = sp.vstack([top, bottom]).tocsc()
        return self._s_matrix

    def solve_s_system(self, rhs):
        if self._s_lu is None:
            try:
                self._s_lu = spla.splu(self.s_matrix)
            except RuntimeError as exc:
                raise SolverError(f"discrete S system is singular: {exc}") from exc
        out = self._s_lu.solve(rhs)
        if not np.all(np.isfinite(out)):
            raise SolverError("discrete S system produced non-finite solution")
        return out

    def solve_t_system(self, rhs):
        if self._t_lu is None:
            nb = self.domain.n_boundary
            t_mat = (self.chain_lap - sp.identity(nb)).tocsc()
            try:
                self._t_lu = spla.splu(t_mat)
            except RuntimeError as exc:
                raise SolverError(f"discrete T system is singular: {exc}") from exc
        out = self._t_lu.solve(rhs)
        if not np.all(np.isfinite(out)):
            raise SolverError("discrete T system produced non-finite solution")
        return out


def operators(dom: DiscreteDomain) -> DomainOperators:
    """The cached operator bundle for a domain."""
    ops = dom._cache.get("ops")
    if ops is None:
        ops = DomainOperators(dom)
        dom._cache["ops"] = ops
    return ops


# ---------------------------------------------------------------------------
# Public operations


def gradient(u: ScalarField) -> np.ndarray:
    """Gradient of a scalar field, one (ux, uy) pair per node."""
    return operators(u.domain).gradient_values(u.values)


def hessian(u: ScalarField) -> np.ndarray:
    """Symmetric Hessian of a scalar field, one 2x2 matrix per node."""
    return operators(u.domain).hessian_values(u.values)


def laplacian(u: ScalarField) -> ScalarField:
    return ScalarField(u.domain, operators(u.domain).lap @ u.values)


def tangential_laplacian(f: BoundaryField) -> BoundaryField:
    """Second difference with respect to arclength along the boundary chain."""
    return BoundaryField(f.domain, operators(f.domain).chain_lap @ f.values)


def apply_S(u: ScalarField):
    """(Lap u over the mesh, gamma . Du + u along the boundary)."""
    ops = operators(u.domain)
    interior = ScalarField(u.domain, ops.lap @ u.values)
    bnd = ops.gamma_dot_grad @ u.values + u.boundary_values
    return interior, BoundaryField(u.domain, bnd)


def apply_T(f: BoundaryField) -> BoundaryField:
    """Tangential Laplacian minus identity along the boundary chain."""
    ops = operators(f.domain)
    return BoundaryField(f.domain, ops.chain_lap @ f.values - f.values)


def solve_S(rhs_interior: ScalarField, rhs_boundary: BoundaryField) -> ScalarField:
    """Invert S: Lap u = rhs in the interior, gamma . Du + u = rhs on the boundary."""
    dom = rhs_interior.domain
    _same_domain(rhs_interior, ScalarField(dom, np.zeros(dom.n_nodes)))
    rhs = np.concatenate([rhs_interior.interior_values, rhs_boundary.values])
    return ScalarField(dom, operators(dom).solve_s_system(rhs))


def solve_T(rhs: BoundaryField) -> BoundaryField:
    """Invert T = Lap_T - 1 along the boundary chain."""
    return BoundaryField(rhs.domain, operators(rhs.domain).solve_t_system(rhs.values))


# ---------------------------------------------------------------------------
# Quadrature and norms


def integrate(dom: DiscreteDomain, values) -> float:
    """Quadrature of nodal values over the domain."""
    return float(np.dot(dom.interior_weights, np.asarray(values)))


def boundary_integrate(dom: DiscreteDomain, values) -> float:
    return float(np.dot(dom.boundary_weights, np.asarray(values)))


def boundary_l2(dom: DiscreteDomain, values) -> float:
    return float(np.sqrt(np.dot(dom.boundary_weights, np.asarray(values) ** 2)))


def sup_norm(values) -> float:
    return float(np.max(np.abs(values)))


def residual_floor(dom: DiscreteDomain) -> float:
    """Roundoff floor of residual evaluations on this mesh.

    Second-derivative rows near the center carry 1/r^2 chain-rule factors,
    so evaluating an operator on an O(1) field leaves cancellation noise
    of about machine epsilon times the largest absolute row sum.  Newton
    tolerances below this floor cannot be met.
    """
    ops = operators(dom)
    row_scale = max(
        float(np.max(np.abs(ops.hxx).sum(axis=1))),
        float(np.max(np.abs(ops.hyy).sum(axis=1))),
    )
    return float(np.finfo(float).eps) * row_scale


def random_smooth_field(dom: DiscreteDomain, rng, amplitude=1.0, transcendental=True):
    """Random polynomial (plus optional sin/cos term) sampled on the mesh."""
    x, y = dom.nodes[:, 0], dom.nodes[:, 1]
    c = rng.standard_normal(10)
    vals = (
        c[0]
        + c[1] * x
        + c[2] * y
        + c[3] * x * x
        + c[4] * x * y
        + c[5] * y * y
        + c[6] * x**3
        + c[7] * y**3
        + c[8] * x * y * y
    )
    if transcendental:
        vals = vals + c[9] * np.sin(x) * np.cos(y)
    scale = max(1.0, np.max(np.abs(vals)))
    return ScalarField(dom, amplitude * vals / scale)


# ---------------------------------------------------------------------------
# Serialization


def field_to_csv(field) -> str:
    """CSV with node_index, x, y, value columns (round-trip float formatting)."""
    dom = field.domain
    if isinstance(field, BoundaryField):
        nodes = dom.boundary_nodes
        offset = dom.n_interior
    else:
        nodes = dom.nodes
        offset = 0
    lines = ["node_index,x,y,value"]
    for i, ((x, y), v) in enumerate(zip(nodes, field.values)):
        lines.append(f"{i + offset},{float(x)!r},{float(y)!r},{float(v)!r}")
    return "\n".join(lines) + "\n"
