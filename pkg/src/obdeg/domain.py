"""Polar-structured meshes on 2D star-shaped domains.

A domain is described by a strictly positive boundary radius function
R(theta), stored as a truncated Fourier series.  The mesh places nodes at
(s_i * R(theta_j)) * (cos theta_j, sin theta_j) with offset radial levels
s_i = (i - 1/2) / (n_r - 1/2), i = 1..n_r, so no node sits at the origin
and the outermost ring lies exactly on the boundary.  Angles are uniform,
theta_j = 2*pi*j / n_theta, and n_theta must be even so every radial line
continues through the center to its antipode (stencils cross the center).

Outward normals and boundary geometry are computed from the analytic
radius function, not from mesh differencing.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, RangeError


@dataclass(frozen=True)
class RadiusFunction:
    """Truncated Fourier series r(theta) = a0 + sum a_k cos(k t) + b_k sin(k t)."""

    a0: float
    a_cos: tuple = ()
    b_sin: tuple = ()

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.full_like(theta, self.a0, dtype=float)
        for k, a in enumerate(self.a_cos, start=1):
            out = out + a * np.cos(k * theta)
        for k, b in enumerate(self.b_sin, start=1):
            out = out + b * np.sin(k * theta)
        return out

    def derivative(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.zeros_like(theta, dtype=float)
        for k, a in enumerate(self.a_cos, start=1):
            out = out - k * a * np.sin(k * theta)
        for k, b in enumerate(self.b_sin, start=1):
            out = out + k * b * np.cos(k * theta)
        return out

    @property
    def fourier_degree(self):
        return max(len(self.a_cos), len(self.b_sin))

    def min_radius(self, samples=720):
        t = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
        return float(np.min(self(t)))


@dataclass(frozen=True, eq=False)
class DiscreteDomain:
    """Meshed star-shaped domain with boundary chain and quadrature.

    Nodes are ordered ring-major, innermost ring first; the boundary ring
    occupies the last ``n_theta`` slots.  ``interior_weights`` quadrate
    integrals over the domain (the boundary ring carries its thin half
    cell); ``boundary_weights`` quadrate integrals along the boundary
    chain (chord-length cells).
    """

    n_r: int
    n_theta: int
    radius: RadiusFunction
    nodes: np.ndarray            # (n, 2) coordinates
    s_levels: np.ndarray         # (n_r,) radial mesh coordinates in (0, 1]
    thetas: np.ndarray           # (n_theta,)
    gamma: np.ndarray            # (n_theta, 2) unit outward normals
    interior_weights: np.ndarray  # (n,) area weights
    boundary_weights: np.ndarray  # (n_theta,) arclength weights
    h: float                     # mesh parameter
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_interior(self):
        return (self.n_r - 1) * self.n_theta

    @property
    def n_boundary(self):
        return self.n_theta

    @property
    def boundary_nodes(self):
        return self.nodes[self.n_interior:]

    @property
    def interior_nodes(self):
        return self.nodes[: self.n_interior]

    def node_index(self, ring, j):
        """Global index of the node on ring ``ring`` (1-based) at angle slot j."""
        return (ring - 1) * self.n_theta + (j % self.n_theta)

    def same_topology(self, other):
        return self.n_r == other.n_r and self.n_theta == other.n_theta


def _validate_resolution(n_r, n_theta):
    if n_r < 4:
        raise ConfigurationError(f"n_r = {n_r} is below the minimum of 4")
    if n_theta < 8:
        raise ConfigurationError(f"n_theta = {n_theta} is below the minimum of 8")
    if n_theta % 2 != 0:
        raise ConfigurationError(
            f"n_theta = {n_theta} must be even (radial stencils pair antipodal angles)"
        )


def build_star(radius: RadiusFunction, n_r: int, n_theta: int) -> DiscreteDomain:
    """Mesh the star-shaped domain with boundary radius ``radius``."""
    _validate_resolution(n_r, n_theta)
    rmin = radius.min_radius()
    if rmin <= 0.0:
        raise ConfigurationError(f"radius function is not strictly positive (min {rmin:g})")
    if n_theta < 4 * (radius.fourier_degree + 1):
        raise ConfigurationError(
            f"n_theta = {n_theta} under-resolves a radius function of Fourier degree "
            f"{radius.fourier_degree}; need at least {4 * (radius.fourier_degree + 1)}"
        )

    thetas = 2.0 * np.pi * np.arange(n_theta) / n_theta
    ds = 1.0 / (n_r - 0.5)
    s_levels = (np.arange(1, n_r + 1) - 0.5) * ds

    rim = radius(thetas)
    rim_d = radius.derivative(thetas)

    ss, tt = np.meshgrid(s_levels, thetas, indexing="ij")
    rr = ss * rim[None, :]
    nodes = np.column_stack([(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel()])

    # Outward normal of r = R(theta): proportional to R e_r - R' e_theta.
    e_r = np.column_stack([np.cos(thetas), np.sin(thetas)])
    e_t = np.column_stack([-np.sin(thetas), np.cos(thetas)])
    gnorm = np.sqrt(rim**2 + rim_d**2)
    gamma = (rim[:, None] * e_r - rim_d[:, None] * e_t) / gnorm[:, None]

    # Area weights: |det J| = s R(theta)^2; the midpoint rule in s is exact
    # for the linear factor s, the boundary half cell is integrated exactly.
    dtheta = 2.0 * np.pi / n_theta
    s_cell = np.full(n_r, ds)
    s_int = s_levels * ds
    s_int[-1] = 0.5 * ds * (1.0 - 0.25 * ds)  # integral of s over [1 - ds/2, 1]
    del s_cell
    interior_weights = (s_int[:, None] * (rim**2)[None, :] * dtheta).ravel()

    # Boundary chain cells from chord lengths.
    bnodes = nodes[(n_r - 1) * n_theta:]
    chords = np.linalg.norm(np.roll(bnodes, -1, axis=0) - bnodes, axis=1)
    boundary_weights = 0.5 * (chords + np.roll(chords, 1))

    h = max(float(np.max(rim)) * ds, float(np.max(chords)))
    return DiscreteDomain(
        n_r=n_r,
        n_theta=n_theta,
        radius=radius,
        nodes=nodes,
        s_levels=s_levels,
        thetas=thetas,
        gamma=gamma,
        interior_weights=interior_weights,
        boundary_weights=boundary_weights,
        h=h,
    )


def build_disk(n_r: int, n_theta: int, radius: float) -> DiscreteDomain:
    """Mesh the disk of the given radius centered at the origin."""
    if radius <= 0.0:
        raise ConfigurationError(f"disk radius must be positive, got {radius:g}")
    return build_star(RadiusFunction(a0=float(radius)), n_r, n_theta)


@dataclass(frozen=True)
class DomainFoliation:
    """Monotone family of star-shaped domains r_t = (1-t) r0 + t r1.

    Both radius functions must be strictly positive and r0 <= r1 pointwise,
    so the slices are nested and every slice is a valid domain.
    """

    r0: RadiusFunction
    r1: RadiusFunction
    n_r: int
    n_theta: int

    def __post_init__(self):
        _validate_resolution(self.n_r, self.n_theta)
        t = np.linspace(0.0, 2.0 * np.pi, 720, endpoint=False)
        v0, v1 = self.r0(t), self.r1(t)
        if np.any(v1 - v0 < -1e-12):
            raise ConfigurationError("foliation requires r0(theta) <= r1(theta) everywhere")
        if np.min(v0) <= 0.0 or np.min(v1) <= 0.0:
            raise ConfigurationError("foliation radius functions must stay strictly positive")

    def radius_at(self, t):
        a0 = (1.0 - t) * self.r0.a0 + t * self.r1.a0
        deg = max(len(self.r0.a_cos), len(self.r1.a_cos))
        a_cos = tuple(
            (1.0 - t) * (self.r0.a_cos[k] if k < len(self.r0.a_cos) else 0.0)
            + t * (self.r1.a_cos[k] if k < len(self.r1.a_cos) else 0.0)
            for k in range(deg)
        )
        deg = max(len(self.r0.b_sin), len(self.r1.b_sin))
        b_sin = tuple(
            (1.0 - t) * (self.r0.b_sin[k] if k < len(self.r0.b_sin) else 0.0)
            + t * (self.r1.b_sin[k] if k < len(self.r1.b_sin) else 0.0)
            for k in range(deg)
        )
        return RadiusFunction(a0=a0, a_cos=a_cos, b_sin=b_sin)


def foliation_domain(fol: DomainFoliation, t: float) -> DiscreteDomain:
    """Mesh the foliation slice at parameter ``t`` (same topology for all t)."""
    if not 0.0 <= t <= 1.0:
        raise RangeError(f"foliation parameter t = {t:g} outside [0, 1]")
    return build_star(fol.radius_at(t), fol.n_r, fol.n_theta)
