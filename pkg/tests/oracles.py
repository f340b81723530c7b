"""Independent oracles used by the test suite.

These deliberately avoid the package's discretization machinery: Robin
eigenvalues of the unit disk come from Bessel-function root finding, and
radial profiles come from ODE shooting.
"""

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq
from scipy.special import jv, jvp


def robin_disk_eigenvalues(count=8, k_max=25.0):
    """Eigenvalues mu (with multiplicity) of -Lap phi = mu phi on the unit
    disk under d(phi)/dr + phi = 0, from roots of k Jm'(k) + Jm(k)."""
    eigs = []
    m = 0
    while True:
        def fn(k, m=m):
            return k * jvp(m, k) + jv(m, k)

        roots = []
        ks = np.linspace(1e-6, k_max, 4000)
        vals = fn(ks)
        for a, b in zip(ks[:-1], ks[1:]):
            if fn(a) * fn(b) < 0:
                roots.append(brentq(fn, a, b, xtol=1e-14))
        if not roots:
            break
        mult = 1 if m == 0 else 2
        for r in roots:
            eigs.extend([r * r] * mult)
        if min(roots) ** 2 > max(e for e in eigs) and m > 0:
            break
        m += 1
        if m > 40:
            break
    return np.sort(np.array(eigs))[:count]


def count_robin_eigs_below(c, count=30):
    mus = robin_disk_eigenvalues(count=count)
    return int(np.sum(mus < c))


def yamabe_radial_shoot(n, c, h_g=1.0, r_max=1.0, beta_lo=0.05, beta_hi=20.0):
    """Radially symmetric solution of the conformal interior equation

        u'' + (n-1)/r u' + kappa(n) u^((n+2)/(n-2)) = 0,  u'(0) = 0,

    shot on the center value so the boundary operator
    u^(-n/(n-2)) [u'(1) + (n-2)/2 h_g u(1)] - c vanishes at r = 1.
    Returns (r_grid, u_values, beta).
    """
    kappa = 0.5 * (n - 2)
    q = (n + 2.0) / (n - 2.0)

    def rhs(r, y):
        u, v = y
        if r < 1e-12:
            # u'' ~ -kappa u^q / n near the center (v ~ 0, v/r ~ u''/1)
            return [v, -kappa * np.sign(u) * np.abs(u) ** q / n * 1.0]
        return [v, -(n - 1.0) / r * v - kappa * np.sign(u) * np.abs(u) ** q]

    def boundary_defect(beta):
        sol = solve_ivp(
            rhs,
            (1e-10, r_max),
            [beta, 0.0],
            rtol=1e-11,
            atol=1e-13,
            dense_output=True,
            method="RK45",
        )
        u1, v1 = sol.y[0, -1], sol.y[1, -1]
        if u1 <= 0:
            return -np.inf
        return u1 ** (-n / (n - 2.0)) * (v1 + 0.5 * (n - 2.0) * h_g * u1) - c

    lo, hi = beta_lo, beta_hi
    flo = boundary_defect(lo)
    fhi = boundary_defect(hi)
    grid = np.linspace(lo, hi, 200)
    vals = [boundary_defect(b) for b in grid]
    bracket = None
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if np.isfinite(fa) and np.isfinite(fb) and fa * fb < 0:
            bracket = (a, b)
            break
    if bracket is None:
        raise RuntimeError(f"shooting found no bracket for n={n}, c={c}")
    beta = brentq(lambda b: boundary_defect(b), *bracket, xtol=1e-13)
    sol = solve_ivp(
        rhs,
        (1e-10, r_max),
        [beta, 0.0],
        rtol=1e-11,
        atol=1e-13,
        dense_output=True,
    )

    def profile(r):
        r = np.maximum(np.asarray(r, dtype=float), 1e-10)
        return sol.sol(r)[0]

    return profile, beta
