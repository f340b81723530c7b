"""Fourth-order regularized operator, invertibility threshold, estimates.

For frozen coefficients a (symmetric positive definite, interior) and b
(oblique boundary vector field), the regularized operator acts on the
extended vector [w at all nodes; ghost radial derivative at boundary]:

    row block 1 (interior nodes):  a:D2(Lap-type composite) - N a:D2 w
    row block 2 (boundary nodes):  gamma . D(a:D2 w)
    row block 3 (boundary nodes):  b . Lap_T(Dw) - N b . Dw - N w

Each boundary node carries two rows and two unknown slots (value +
ghost), keeping the matrix square so invertibility can be certified by
the smallest singular value relative to the matrix norm.

The module also hosts the numerical verifications: the boundary-trace
ratio for oblique second-order problems, semi-finiteness of linear
pairs, the circle resolvent symbol bound, the interior kernel estimate,
and the boundary surjectivity family.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .calculus import (
    BoundaryField,
    ScalarField,
    apply_S,
    apply_T,
    boundary_l2,
    gradient,
    operators,
)
from .degree import pencil_eigenvalues
from .domain import DiscreteDomain
from .errors import (
    AssemblyError,
    NumericalError,
    RangeError,
    SolverError,
    ThresholdNotFoundError,
)
from .problem import LinearPair, ObliqueProblem, linearize, residual

SVD_TOL = 1e-10  # equilibrated smallest singular value certifying invertibility


def equilibrated_min_svd(mat):
    """Smallest singular value after scaling every row to unit 2-norm.

    The raw 2-norm of fourth-order assemblies is dominated by a handful
    of near-center rows and grows like a high power of 1/h, which makes
    smin relative to the norm shrink under refinement even for operators
    whose inverse stays bounded.  Row equilibration removes exactly that
    artifact: the scaled matrix is singular iff the original is, and its
    smallest singular value is scale-free and comparable across meshes.
    """
    mat = np.asarray(mat)
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0.0):
        return 0.0
    return float(sla.svdvals(mat / norms[:, None])[-1])


@dataclass(frozen=True)
class LNOperator:
    """Regularized fourth-order operator in the extended-column layout.

    Stored as base + N * n_mult; applying the two blocks separately keeps
    the N-proportional part from being rounded against the much larger
    fourth-order entries.
    """

    domain: DiscreteDomain
    base: object             # sparse (ni + 2 nb) x (n + nb)
    n_mult: object           # sparse, same shape
    n_param: float
    a: np.ndarray
    b: np.ndarray

    @property
    def matrix(self):
        return (self.base + self.n_param * self.n_mult).toarray()

    @property
    def size(self):
        return self.base.shape[0]

    def apply_to_field(self, w: ScalarField):
        """Rows applied to a plain field (ghost = one-sided radial derivative)."""
        ops = operators(self.domain)
        ext = ops.prolong(w.values)
        out = self.base @ ext + self.n_param * (self.n_mult @ ext)
        ni, nb = self.domain.n_interior, self.domain.n_boundary
        return out[:ni], out[ni : ni + nb], out[ni + nb :]

    def smallest_singular_value(self):
        return float(sla.svdvals(self.matrix)[-1])

    def norm2(self):
        return float(sla.svdvals(self.matrix)[0])


def _check_coefficients(dom, a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (dom.n_nodes, 2, 2):
        raise AssemblyError(f"principal coefficients must be (n, 2, 2), got {a.shape}")
    if b.shape != (dom.n_boundary, 2):
        raise AssemblyError(f"boundary coefficients must be (nb, 2), got {b.shape}")
    lam = np.min(
        0.5 * (a[:, 0, 0] + a[:, 1, 1])
        - np.sqrt((0.5 * (a[:, 0, 0] - a[:, 1, 1])) ** 2 + a[:, 0, 1] ** 2)
    )
    chi = np.min(np.sum(b * dom.gamma, axis=1))
    if lam <= 0.0:
        raise AssemblyError(f"principal coefficients not positive definite (margin {lam:.3e})")
    if chi <= 0.0:
        raise AssemblyError(f"boundary field not oblique (margin {chi:.3e})")
    return a, b


def _ln_blocks(dom, a, b):
    """(base, n_mult) with LN = base + N * n_mult, in the extended layout."""
    ops = operators(dom)
    ni, nb, n = dom.n_interior, dom.n_boundary, dom.n_nodes

    def dia(v):
        return sp.diags(v)

    hs_ext = {"xx": ops.hxx_ext, "xy": ops.hxy_ext, "yy": ops.hyy_ext}
    coeff = {"xx": a[:, 0, 0], "xy": 2.0 * a[:, 0, 1], "yy": a[:, 1, 1]}

    a_d2_ext = sum((dia(coeff[k]) @ hs_ext[k] for k in hs_ext), sp.csr_matrix((n, n + nb)))

    # interior rows: a : D2 of (Lap-composite of w), minus N a : D2 w
    lap_of = {k: (ops.lap @ hs_ext[k]).tocsr() for k in hs_ext}
    fourth = sum(
        (dia(coeff[k][:ni]) @ lap_of[k][:ni, :] for k in hs_ext),
        sp.csr_matrix((ni, n + nb)),
    )

    # second boundary block: gamma . D applied to the second-order form
    grad_rows = ops.gamma_dot_grad  # (nb x n), one-sided radial at the chain
    third = sum(
        (dia(coeff[k][ni:]) @ (grad_rows @ hs_ext[k]) for k in hs_ext),
        sp.csr_matrix((nb, n + nb)),
    )

    # third boundary block: b . Lap_T(D w) - N (b . D w + w)
    dx_b = ops.dx_ext[ni:, :]
    dy_b = ops.dy_ext[ni:, :]
    chain = ops.chain_lap
    b_lapt = (dia(b[:, 0]) @ (chain @ dx_b) + dia(b[:, 1]) @ (chain @ dy_b)).tocsr()
    b_grad = (dia(b[:, 0]) @ dx_b + dia(b[:, 1]) @ dy_b).tocsr()
    w_pick = sp.hstack(
        [sp.csr_matrix((nb, ni)), sp.identity(nb, format="csr"), sp.csr_matrix((nb, nb))]
    ).tocsr()

    base = sp.vstack([fourth, third, b_lapt]).tocsr()
    n_mult = sp.vstack(
        [(-a_d2_ext[:ni, :]).tocsr(), sp.csr_matrix((nb, n + nb)), (-(b_grad + w_pick)).tocsr()]
    ).tocsr()
    return base, n_mult


def assemble_LN(dom: DiscreteDomain, a, b, N: float) -> LNOperator:
    """Assemble the regularized operator for strength N."""
    a, b = _check_coefficients(dom, a, b)
    base, n_mult = _ln_blocks(dom, a, b)
    return LNOperator(domain=dom, base=base, n_mult=n_mult, n_param=float(N), a=a, b=b)


def find_N0(dom: DiscreteDomain, a, b, N_max: float = 256.0):
    """Smallest N on the geometric grid {1, 2, 4, ...} certified invertible.

    Certification: equilibrated smallest singular value above SVD_TOL for
    that N and every larger scanned N.  Returns (N0, profile) where
    profile lists (N, equilibrated smin).  Raises ThresholdNotFoundError
    with the profile when no scanned N qualifies.
    """
    a, b = _check_coefficients(dom, a, b)
    base, n_mult = _ln_blocks(dom, a, b)
    grid = []
    N = 1.0
    while N <= N_max * (1 + 1e-12):
        grid.append(N)
        N *= 2.0
    if not grid:
        raise RangeError(f"N_max = {N_max:g} leaves no scan points")
    profile = []
    for N in grid:
        mat = (base + N * n_mult).toarray()
        profile.append((N, equilibrated_min_svd(mat)))
    n0 = None
    for i, (N, ratio) in enumerate(profile):
        if all(r > SVD_TOL for _, r in profile[i:]):
            n0 = N
            break
    if n0 is None:
        raise ThresholdNotFoundError(
            f"no N <= {N_max:g} certified invertibility (best equilibrated "
            f"smin {max(r for _, r in profile):.3e})",
            profile=profile,
        )
    return n0, profile


def semifiniteness_mu(pair: LinearPair, method="auto"):
    """Largest real part of the constrained spectrum of the pair.

    Above this threshold the shifted problem (interior operator - mu,
    homogeneous boundary operator) has only the trivial solution; the
    returned diagnostics include a factorization check at mu* + 1.
    """
    from .problem import assemble_pair, pair_margins

    lam, chi = pair_margins(pair)
    if lam <= 0.0 or chi <= 0.0:
        raise AssemblyError(
            f"pair must be elliptic/oblique (margins {lam:.3e}, {chi:.3e})"
        )
    A = assemble_pair(pair).toarray()
    ni = pair.domain.n_interior
    eigvals, diag = pencil_eigenvalues(A, ni, method=method)
    if len(eigvals) == 0:
        raise NumericalError("constrained spectrum is empty", diag)
    mu_star = float(np.max(eigvals.real))
    # certification: the shifted system at mu* + 1 must factor cleanly
    shifted = A.copy()
    shifted[np.arange(ni), np.arange(ni)] -= mu_star + 1.0
    try:
        cond = np.linalg.cond(shifted)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"condition estimate failed: {exc}", diag) from exc
    diag["shifted_condition"] = float(cond)
    diag["mu_star"] = mu_star
    if not np.isfinite(cond):
        raise NumericalError("shifted system at mu* + 1 is singular", diag)
    return mu_star, diag


def resolvent_symbol_bound(N: float, K_max: int) -> float:
    """sup over integer frequencies k <= K_max of (1 + k^2) / (k^2 + N).

    This is the circle Fourier symbol of the inverse shifted Laplacian
    measured between Sobolev spaces two orders apart; the interpolation
    weights cancel, so the bound is independent of the interpolation
    exponent and never exceeds 1 for N >= 1.
    """
    if N < 1.0:
        raise RangeError(f"resolvent bound requires N >= 1, got {N:g}")
    k = np.arange(0, int(K_max) + 1, dtype=float)
    return float(np.max((1.0 + k**2) / (k**2 + N)))


def rellich_ratio(dom: DiscreteDomain, a, b, g: BoundaryField) -> float:
    """Boundary-trace ratio of the oblique problem a:D2 w = 0, b.Dw + w = g.

    Returns (||w||_L2(bnd) + ||Dw||_L2(bnd)) / ||g||_L2(bnd) with
    quadrature-weighted norms; bounded uniformly in the data.
    """
    a, b = _check_coefficients(dom, a, b)
    gnorm = boundary_l2(dom, g.values)
    if gnorm == 0.0:
        raise RangeError("boundary data must not be identically zero")
    ops = operators(dom)
    ni = dom.n_nodes - dom.n_boundary

    def dia(v):
        return sp.diags(v)

    interior_op = (
        dia(a[:, 0, 0]) @ ops.hxx + dia(2 * a[:, 0, 1]) @ ops.hxy + dia(a[:, 1, 1]) @ ops.hyy
    ).tocsr()
    bnd_op = (
        dia(b[:, 0]) @ ops.dx[ni:, :]
        + dia(b[:, 1]) @ ops.dy[ni:, :]
        + sp.hstack([sp.csr_matrix((dom.n_boundary, ni)), sp.identity(dom.n_boundary)])
    ).tocsr()
    mat = sp.vstack([interior_op[:ni, :], bnd_op]).tocsc()
    rhs = np.concatenate([np.zeros(ni), g.values])
    try:
        w = spla.splu(mat).solve(rhs)
    except RuntimeError as exc:
        raise SolverError(f"oblique trace system is singular: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise SolverError("oblique trace system produced non-finite solution")
    grad = ops.gradient_values(w)[ni:]
    w_b = w[ni:]
    return (boundary_l2(dom, w_b) + boundary_l2(dom, np.linalg.norm(grad, axis=1))) / gnorm


def kernel_estimate_ratio(dom: DiscreteDomain, a, b, N: float, phi: ScalarField):
    """Discrete interior-control ratio ||w||_H2,h / ||phi||_L2,h.

    w solves a:D2 w = phi at every node (ghost-extended at the boundary)
    with the third-block boundary rows set to zero; the ratio staying
    bounded under refinement is the discrete face of interior control of
    the solution by the second-order form alone.
    """
    a, b = _check_coefficients(dom, a, b)
    ops = operators(dom)
    n, nb, ni = dom.n_nodes, dom.n_boundary, dom.n_interior

    def dia(v):
        return sp.diags(v)

    a_d2_ext = (
        dia(a[:, 0, 0]) @ ops.hxx_ext
        + dia(2 * a[:, 0, 1]) @ ops.hxy_ext
        + dia(a[:, 1, 1]) @ ops.hyy_ext
    ).tocsr()
    dx_b = ops.dx_ext[ni:, :]
    dy_b = ops.dy_ext[ni:, :]
    chain = ops.chain_lap
    l3 = (
        dia(b[:, 0]) @ (chain @ dx_b)
        + dia(b[:, 1]) @ (chain @ dy_b)
        - N * (dia(b[:, 0]) @ dx_b + dia(b[:, 1]) @ dy_b)
        - N
        * sp.hstack(
            [sp.csr_matrix((nb, ni)), sp.identity(nb, format="csr"), sp.csr_matrix((nb, nb))]
        )
    ).tocsr()
    mat = sp.vstack([a_d2_ext, l3]).tocsc()
    rhs = np.concatenate([phi.values, np.zeros(nb)])
    try:
        sol = spla.splu(mat).solve(rhs)
    except RuntimeError as exc:
        raise SolverError(f"kernel-estimate system is singular: {exc}") from exc
    w = sol[:n]
    wts = dom.interior_weights
    grad = ops.gradient_values(w)
    hess = ops.hessian_values(w)
    h2_sq = (
        np.dot(wts, w**2)
        + np.dot(wts, np.sum(grad**2, axis=1))
        + np.dot(wts, np.sum(hess**2, axis=(1, 2)))
    )
    l2_phi = np.sqrt(np.dot(wts, phi.values**2))
    return float(np.sqrt(h2_sq) / l2_phi)


def surjectivity_family_ratio(dom: DiscreteDomain, N: float, t: float):
    """smin/norm of the homotopy between chain-composed boundary rows.

    Interior and second blocks are the identity-coefficient fourth-order
    rows; the third block interpolates between Lap_T applied to the full
    oblique trace (t = 0) and the principal-only form (t = 1), minus N
    times the trace.  Nonsingularity across t in [0, 1] is what carries
    invertibility from the model operator to the assembled one.
    """
    if not 0.0 <= t <= 1.0:
        raise RangeError(f"family parameter t = {t:g} outside [0, 1]")
    ops = operators(dom)
    n, nb, ni = dom.n_nodes, dom.n_boundary, dom.n_interior
    a = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
    b = dom.gamma.copy()
    base, n_mult = _ln_blocks(dom, a, b)

    def dia(v):
        return sp.diags(v)

    dx_b = ops.dx_ext[ni:, :]
    dy_b = ops.dy_ext[ni:, :]
    chain = ops.chain_lap
    w_pick = sp.hstack(
        [sp.csr_matrix((nb, ni)), sp.identity(nb, format="csr"), sp.csr_matrix((nb, nb))]
    ).tocsr()
    trace = (dia(b[:, 0]) @ dx_b + dia(b[:, 1]) @ dy_b + w_pick).tocsr()
    principal = (dia(b[:, 0]) @ (chain @ dx_b) + dia(b[:, 1]) @ (chain @ dy_b)).tocsr()
    l3_t = ((1.0 - t) * (chain @ trace) + t * principal - N * trace).tocsr()

    full = (base + N * n_mult).toarray()
    full[ni + nb :, :] = l3_t.toarray()
    return equilibrated_min_svd(full)


# ---------------------------------------------------------------------------
# Frozen-coefficient split of the composite nonlinear operator


@dataclass(frozen=True)
class FrozenSplit:
    """Split of the chain-composed problem into LN at u plus a remainder.

    The leading part is the assembled LN operator with coefficients frozen
    at u; the remainder holds the N-proportional first-order terms plus
    the frozen lower-order fields, defined so that applying both to u
    reproduces the chain-composed residual exactly.
    """

    problem: ObliqueProblem
    u: ScalarField
    ln: LNOperator
    c_star: np.ndarray   # interior remainder field
    e_star: np.ndarray   # second-block remainder field
    h_star: np.ndarray   # third-block remainder field
    pair: LinearPair

    def l_apply(self, w: ScalarField):
        return self.ln.apply_to_field(w)

    def r_apply(self, w: ScalarField):
        dom = self.problem.domain
        ops = operators(dom)
        nb = dom.n_boundary
        N = self.ln.n_param
        a = self.pair.a
        hess = ops.hessian_values(w.values)
        a_d2 = np.einsum("nst,nst->n", a, hess)[: dom.n_interior]
        grad_b = ops.gradient_values(w.values)[-nb:]
        b_dw = np.sum(self.pair.b * grad_b, axis=1)
        return (
            N * a_d2 + self.c_star,
            self.e_star.copy(),
            N * b_dw + N * w.boundary_values + self.h_star,
        )

    def composite_target(self):
        """(S applied to the interior residual, T applied to the boundary one)."""
        fi, gb = residual(self.problem, self.u)
        si, sb = apply_S(fi)
        tg = apply_T(gb)
        ni = self.problem.domain.n_interior
        return si.values[:ni], sb.values, tg.values


def frozen_split(prob: ObliqueProblem, u: ScalarField, N: float) -> FrozenSplit:
    """Freeze coefficients at u and split the chain-composed operator."""
    pair = linearize(prob, u)
    ln = assemble_LN(prob.domain, pair.a, pair.b, N)
    l1, l2, l3 = ln.apply_to_field(u)
    fi, gb = residual(prob, u)
    si, sb = apply_S(fi)
    tg = apply_T(gb)
    dom = prob.domain
    ops = operators(dom)
    ni, nb = dom.n_interior, dom.n_boundary
    hess = ops.hessian_values(u.values)
    a_d2 = np.einsum("nst,nst->n", pair.a, hess)[:ni]
    grad_b = ops.gradient_values(u.values)[-nb:]
    b_dw = np.sum(pair.b * grad_b, axis=1)
    c_star = si.values[:ni] - l1 - N * a_d2
    e_star = sb.values - l2
    h_star = tg.values - l3 - N * b_dw - N * u.boundary_values
    return FrozenSplit(
        problem=prob, u=u, ln=ln, c_star=c_star, e_star=e_star, h_star=h_star, pair=pair
    )
