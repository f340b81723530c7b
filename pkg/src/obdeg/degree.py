"""Integer-valued degree of oblique linear pairs by eigenvalue counting.

For an elliptic/oblique linear pair the degree is (-1)^k where k counts
the eigenvalues with negative real part of the constrained problem

    -(interior operator) u = lambda u   in the interior,
     (boundary operator) u = 0          on the boundary,

realized as the matrix pencil -A x = lambda M x with M the identity on
interior rows and zero on boundary rows.  Boundary rows generate
infinite pencil eigenvalues, which are discarded.  Degrees of nonlinear
problems at nondegenerate zeros are the degrees of their linearizations;
sums over zero sets and homotopy bookkeeping reduce to these.

Two eigenvalue backends are provided: a QZ factorization of the pencil,
and the default elimination of the boundary rows (exact block reduction
to an ordinary eigenproblem, roughly 15x faster at the largest meshes).
They agree to roundoff and the tests cross-check them.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .calculus import ScalarField, sup_norm
from .errors import (
    DegeneracyError,
    IncompleteTrackingError,
    InputError,
    NotAZeroError,
    NumericalError,
)
from .problem import (
    LinearPair,
    ObliqueProblem,
    apply_pair,
    assemble_pair,
    ellipticity_margin,
    linearize,
    obliqueness_margin,
    pair_margins,
    residual,
)

IM_TOL = 1e-8          # relative imaginary tolerance for "real" classification
DEGENERACY_TOL = 1e-8  # times the matrix scale
INF_BETA_TOL = 1e-12   # normalized mass coefficient below which an eigenvalue is infinite


@dataclass(frozen=True)
class DegreeReport:
    """Result of one degree computation."""

    dim_E_minus: int
    negative_real_eigenvalues: tuple
    degree: int
    diagnostics: dict = field(default_factory=dict)


def pencil_eigenvalues(A, n_interior, method="auto"):
    """Finite eigenvalues of A x = lambda M x, M = diag(1 on interior rows, 0).

    method "reduce" eliminates the boundary rows through the boundary
    block (exact for the finite spectrum when that block is invertible),
    "qz" factors the full pencil, "auto" tries the reduction first.
    Returns (eigenvalues, diagnostics dict).
    """
    A = np.asarray(A)
    n = A.shape[0]
    ni = n_interior
    diag = {"matrix_scale": max(1.0, float(np.max(np.abs(A))))}
    if method not in ("auto", "reduce", "qz"):
        raise InputError(f"unknown eigensolver method {method!r}")

    if method in ("auto", "reduce"):
        Abb = A[ni:, ni:]
        try:
            lu = sla.lu_factor(Abb)
            rcond_ok = np.min(np.abs(np.diag(lu[0]))) > 1e-12 * max(
                1.0, np.max(np.abs(Abb))
            )
        except sla.LinAlgError:
            rcond_ok = False
        if rcond_ok:
            S = A[:ni, :ni] - A[:ni, ni:] @ sla.lu_solve(lu, A[ni:, :ni])
            try:
                w = sla.eigvals(S)
            except sla.LinAlgError as exc:
                raise NumericalError(f"eigensolver failed: {exc}", diag) from exc
            diag["backend"] = "reduce"
            return w, diag
        if method == "reduce":
            raise NumericalError("boundary block is singular; reduction unavailable", diag)

    M = np.zeros_like(A)
    M[np.arange(ni), np.arange(ni)] = 1.0
    try:
        alpha, beta = sla.eig(A, M, right=False, homogeneous_eigvals=True)
    except sla.LinAlgError as exc:
        raise NumericalError(f"QZ factorization failed: {exc}", diag) from exc
    nrm = np.hypot(np.abs(alpha), np.abs(beta))
    nrm[nrm == 0.0] = 1.0
    finite = np.abs(beta) / nrm > INF_BETA_TOL
    diag["backend"] = "qz"
    diag["n_infinite"] = int(np.sum(~finite))
    return alpha[finite] / beta[finite], diag


def _classify(eigvals, diag):
    """Split the finite spectrum into real and complex parts; count signs."""
    im_rel = np.abs(eigvals.imag) <= IM_TOL * np.maximum(np.abs(eigvals), 1e-300)
    real_vals = eigvals[im_rel].real
    complex_vals = eigvals[~im_rel]
    neg_real = np.sort(real_vals[real_vals < 0.0])
    n_complex_neg = int(np.sum(complex_vals.real < 0.0))
    if n_complex_neg % 2 != 0:
        raise NumericalError(
            "complex eigenvalues with negative real part do not pair up; "
            "the real pencil must have a conjugate-symmetric spectrum",
            diag,
        )
    diag["nearest_to_zero"] = float(np.min(np.abs(eigvals))) if len(eigvals) else np.inf
    diag["n_complex_negative"] = n_complex_neg
    return neg_real, complex_vals


def _flag_defective(A, ni, neg_real, diag):
    """Flag clustered negative eigenvalues whose eigenvectors are deficient."""
    if len(neg_real) < 2:
        return
    gaps = np.diff(neg_real)
    scale = max(1.0, float(np.max(np.abs(neg_real))))
    if not np.any(gaps < 1e-6 * scale):
        return
    Abb = A[ni:, ni:]
    S = A[:ni, :ni] - A[:ni, ni:] @ np.linalg.solve(Abb, A[ni:, :ni])
    w, v = sla.eig(S)
    defective = []
    used = np.zeros(len(w), dtype=bool)
    i = 0
    while i < len(neg_real):
        j = i
        while j + 1 < len(neg_real) and neg_real[j + 1] - neg_real[j] < 1e-6 * scale:
            j += 1
        if j > i:
            cluster = [
                k
                for k in range(len(w))
                if not used[k]
                and abs(w[k].imag) <= IM_TOL * max(abs(w[k]), 1e-300)
                and neg_real[i] - 1e-6 * scale <= w[k].real <= neg_real[j] + 1e-6 * scale
            ]
            for k in cluster:
                used[k] = True
            if cluster:
                block = v[:, cluster]
                sv = sla.svdvals(block)
                if sv[-1] < 1e-8 * sv[0]:
                    defective.append((float(neg_real[i]), len(cluster)))
        i = j + 1
    if defective:
        diag["defective_negative_eigenvalues"] = defective


def _eigen_residuals(A, ni, neg_real):
    """Pencil residuals ||(-A - lambda M) x|| / (||x|| scale) per negative
    eigenvalue, with x recovered by one inverse-iteration solve."""
    if len(neg_real) == 0:
        return []
    B = -A
    scale = max(1.0, float(np.max(np.abs(A))))
    out = []
    rng = np.random.default_rng(0)
    for lam in neg_real:
        # slightly detuned shift keeps the factorization nonsingular
        shifted = B.copy()
        shifted[np.arange(ni), np.arange(ni)] -= lam * (1.0 + 1e-10)
        try:
            x = sla.lu_solve(sla.lu_factor(shifted), rng.standard_normal(len(B)))
        except sla.LinAlgError:
            out.append(np.nan)
            continue
        x /= np.linalg.norm(x)
        res = B @ x
        res[:ni] -= lam * x[:ni]
        out.append(float(np.linalg.norm(res) / scale))
    return out


def negative_eigencount(pair: LinearPair, method="auto") -> DegreeReport:
    """Count eigenvalues with negative real part of the linearized pair."""
    lam, chi = pair_margins(pair)
    if lam <= 0.0 or chi <= 0.0:
        raise DegeneracyError(
            f"pair is not elliptic/oblique (margins {lam:.3e}, {chi:.3e}); "
            "eigenvalue counting requires both strictly positive"
        )
    A = assemble_pair(pair).toarray()
    ni = pair.domain.n_interior
    eigvals, diag = pencil_eigenvalues(-A, ni, method=method)
    neg_real, _ = _classify(eigvals, diag)
    scale = diag["matrix_scale"]
    if diag["nearest_to_zero"] < DEGENERACY_TOL * scale:
        raise DegeneracyError(
            f"eigenvalue at distance {diag['nearest_to_zero']:.3e} from zero "
            f"(tolerance {DEGENERACY_TOL * scale:.3e}); the pair is numerically degenerate"
        )
    _flag_defective(-A, ni, neg_real, diag)
    diag["margins"] = (lam, chi)
    diag["eigen_residuals"] = _eigen_residuals(A, ni, neg_real)
    count = len(neg_real)
    return DegreeReport(
        dim_E_minus=count,
        negative_real_eigenvalues=tuple(float(v) for v in neg_real),
        degree=(-1) ** count,
        diagnostics=diag,
    )


def degree_linear(pair: LinearPair, method="auto") -> DegreeReport:
    """Degree of an invertible linear pair: (-1)^(dim E^-)."""
    return negative_eigencount(pair, method=method)


def degree_at_zero(prob: ObliqueProblem, u: ScalarField, method="auto") -> DegreeReport:
    """Degree of a nonlinear problem at a certified nondegenerate zero."""
    fi, gb = residual(prob, u)
    ni = prob.domain.n_interior
    res = max(sup_norm(fi.values[:ni]), sup_norm(gb.values))
    scale = max(1.0, sup_norm(u.values))
    if res > 1e-6 * scale:
        raise NotAZeroError(
            f"residual sup norm {res:.3e} exceeds certification tolerance "
            f"{1e-6 * scale:.3e}; the field is not a zero"
        )
    report = degree_linear(linearize(prob, u), method=method)
    report.diagnostics["residual_sup"] = res
    report.diagnostics["ellipticity_margin"] = ellipticity_margin(prob, u)
    report.diagnostics["obliqueness_margin"] = obliqueness_margin(prob, u)
    return report


def degree_sum(prob: ObliqueProblem, zeros, method="auto") -> DegreeReport:
    """Additive degree over a list of pairwise-distinct nondegenerate zeros."""
    zeros = list(zeros)
    scale = max([1.0] + [sup_norm(z.values) for z in zeros])
    for i in range(len(zeros)):
        for j in range(i + 1, len(zeros)):
            dist = sup_norm(zeros[i].values - zeros[j].values)
            if dist <= 1e-4 * scale:
                raise InputError(
                    f"zeros {i} and {j} coincide within 1e-4 * scale (distance {dist:.3e})"
                )
    reports = [degree_at_zero(prob, z, method=method) for z in zeros]
    total = sum(r.degree for r in reports)
    return DegreeReport(
        dim_E_minus=sum(r.dim_E_minus for r in reports),
        negative_real_eigenvalues=tuple(
            v for r in reports for v in r.negative_real_eigenvalues
        ),
        degree=total,
        diagnostics={
            "kind": "sum",
            "n_zeros": len(zeros),
            "individual_degrees": [r.degree for r in reports],
        },
    )


# ---------------------------------------------------------------------------
# Homotopy bookkeeping


@dataclass(frozen=True)
class HomotopyReport:
    """Outcome of a homotopy-invariance sweep."""

    t_samples: tuple
    zero_counts: tuple
    degree_sums: tuple
    constant: bool
    change_interval: tuple = None
    margins: tuple = ()
    notes: tuple = ()


def multistart_tracker(seeds, opts=None, merge_radius=0.75):
    """Zero tracker: Newton from warm starts plus fresh seeds, deduplicated.

    A warm-start branch that fails to converge is acceptable only when it
    can be explained as one of a merging pair (its start lies within
    ``merge_radius`` of another failing branch); anything else counts as
    a lost branch.
    """
    from .continuation import NewtonOptions, newton_solve
    from .errors import ObdegError

    opts = opts or NewtonOptions()

    def track(prob, warm_starts):
        zeros, lost, merged = [], [], []
        failures = []
        for start in warm_starts:
            if start.domain is not prob.domain:
                start = ScalarField(prob.domain, start.values)
            try:
                z, _ = newton_solve(prob, start, opts)
                _add_zero(zeros, z)
            except ObdegError:
                failures.append(start)
        for seed in seeds:
            start = seed(prob.domain) if callable(seed) else seed
            if start.domain is not prob.domain:
                start = ScalarField(prob.domain, start.values)
            try:
                z, _ = newton_solve(prob, start, opts)
                _add_zero(zeros, z)
            except ObdegError:
                pass
        for i, f in enumerate(failures):
            partner = any(
                sup_norm(f.values - g.values) <= merge_radius
                for j, g in enumerate(failures)
                if j != i
            )
            if partner:
                merged.append(f)
            else:
                lost.append(f)
        return zeros, lost, merged

    return track


def _add_zero(zeros, z, tol=1e-4):
    scale = max(1.0, sup_norm(z.values))
    for existing in zeros:
        if sup_norm(existing.values - z.values) <= tol * scale:
            return
    zeros.append(z)


def homotopy_invariance_check(family, t_samples, zero_tracker, method="auto"):
    """Track zeros along the family and verify the summed degree is constant.

    ``family(t)`` must return the problem at parameter t; the tracker is
    called with warm starts carried over from the previous sample.  Lost
    branches raise IncompleteTrackingError; a genuine change of the
    summed degree is reported with the interval where it happened.
    """
    t_samples = tuple(float(t) for t in t_samples)
    counts, sums, margins, notes = [], [], [], []
    warm = []
    for t in t_samples:
        prob = family(t)
        zeros, lost, merged = zero_tracker(prob, warm)
        if lost:
            raise IncompleteTrackingError(
                f"tracker lost {len(lost)} branch(es) at t = {t:g} without a "
                "merging partner; degree bookkeeping cannot be certified",
                report={"t": t, "n_lost": len(lost)},
            )
        if merged:
            notes.append(f"t={t:g}: {len(merged)} branch(es) ended in a fold merge")
        report = degree_sum(prob, zeros, method=method)
        counts.append(len(zeros))
        sums.append(report.degree)
        margins.append(
            tuple(
                (ellipticity_margin(prob, z), obliqueness_margin(prob, z)) for z in zeros
            )
        )
        warm = zeros
    constant = len(set(sums)) <= 1
    interval = None
    if not constant:
        for k in range(len(sums) - 1):
            if sums[k] != sums[k + 1]:
                interval = (t_samples[k], t_samples[k + 1])
                break
    return HomotopyReport(
        t_samples=t_samples,
        zero_counts=tuple(counts),
        degree_sums=tuple(sums),
        constant=constant,
        change_interval=interval,
        margins=tuple(margins),
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# Product formula


def combine_linear_plus(pair: LinearPair, prob2: ObliqueProblem, name="combined"):
    """Problem whose interior/boundary operators are pair + (f2, g2).

    The second summand must have no Hessian dependence in the interior
    and no gradient dependence on the boundary (the compact-perturbation
    structure the product formula requires).
    """
    dom = pair.domain
    a, d, c = pair.a, pair.d, pair.c
    b, ell = pair.b, pair.ell

    def f(x, z, p, r):
        lin = np.einsum("nst,nst->n", a[: len(z)], r) + np.sum(
            d[: len(z)] * p, axis=1
        ) + c[: len(z)] * z
        return lin + prob2.f(x, z, p, r)

    def g(x, z, p):
        lin = np.sum(b * p, axis=1) + ell * z
        return lin + prob2.g(x, z, p)

    return ObliqueProblem(
        domain=dom,
        f=f,
        g=g,
        df_dr=lambda x, z, p, r: a[: len(z)] + prob2.df_dr(x, z, p, r),
        df_dp=lambda x, z, p, r: d[: len(z)] + prob2.df_dp(x, z, p, r),
        df_dz=lambda x, z, p, r: c[: len(z)] + prob2.df_dz(x, z, p, r),
        dg_dp=lambda x, z, p: b + prob2.dg_dp(x, z, p),
        dg_dz=lambda x, z, p: ell + prob2.dg_dz(x, z, p),
        name=name,
    )


def product_formula_check(pair: LinearPair, prob2: ObliqueProblem, zeros, method="auto"):
    """Compare the eigencount degree of pair + prob2 with the product form.

    Left side: summed degree of the combined problem over its zeros.
    Right side: (-1)^(dim E^-(pair)) times the sum of sign det(I + K(z))
    with K(z) the discrete inverse of the pair composed with the
    Jacobian of prob2 at the zero z.
    """
    combined = combine_linear_plus(pair, prob2)
    lhs = degree_sum(combined, zeros, method=method)

    base = negative_eigencount(pair, method=method)
    A1 = assemble_pair(pair).toarray()
    rhs_sum = 0
    for z in zeros:
        p2 = linearize(prob2, z)
        A2 = assemble_pair(p2).toarray()
        K = np.linalg.solve(A1, A2)
        sign, _ = np.linalg.slogdet(np.eye(len(K)) + K)
        rhs_sum += int(sign)
    rhs = (-1) ** base.dim_E_minus * rhs_sum
    return {
        "lhs_degree": lhs.degree,
        "rhs_degree": rhs,
        "equal": lhs.degree == rhs,
        "dim_E_minus_linear": base.dim_E_minus,
        "n_zeros": len(list(zeros)),
    }
