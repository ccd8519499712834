"""Gravitational potentials of radial densities and the admissible class.

A potential is admissible when it is nonpositive, continuous, tends to zero,
has finite field energy, and its decay margin m(phi) = inf (1+r)|phi| is
strictly positive. All potentials here are stored radially; translations are
handled at evaluation time through |x - z|.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special
from scipy.interpolate import PchipInterpolator

from .numerics import Grid1D, InvalidArgumentError

FOUR_PI = 4.0 * np.pi


class DegenerateInputError(ValueError):
    pass


def _center_value(r, v):
    """Quadratic zero-slope extrapolation of a radial profile to r = 0."""
    a = np.vstack([np.ones(3), r[:3] ** 2]).T
    coef, *_ = np.linalg.lstsq(a, v[:3], rcond=None)
    return float(coef[0])


def _weighted_antiderivative(ppoly, power):
    """Antiderivative of ppoly(s) * s^power as a PPoly (exact per piece)."""
    from scipy.interpolate import PPoly

    c = ppoly.c  # shape (k, m), highest degree first, in t = s - x_i
    x = ppoly.x
    k, m = c.shape
    # multiply by s^power = (x_i + t)^power expanded in t
    out = np.zeros((k + power, m))
    xi = x[:-1]
    for j in range(power + 1):
        coeff = special.comb(power, j) * xi ** (power - j)
        # t^j shifts the polynomial down by j degrees
        out[power - j : power - j + k, :] += c * coeff[None, :]
    return PPoly(out, x).antiderivative()


@dataclass(frozen=True)
class PotentialX:
    """Radial potential with its exterior monopole continuation.

    phi_fn / dphi_fn evaluate phi and phi' for any r >= 0 (the exterior is
    exactly -M/(4 pi r)); enclosed_fn gives the mass inside radius r.
    """

    grid: Grid1D
    values: np.ndarray
    M: float
    min_phi: float
    m_phi: float
    phi_fn: object
    dphi_fn: object
    enclosed_fn: object

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def r_max(self):
        return self.grid.x_max

    def enclosed_mass(self, r):
        return self.enclosed_fn(np.asarray(r, dtype=float))

    @staticmethod
    def _decay_margin(phi_fn, r_max, M):
        r = np.concatenate([np.linspace(0.0, r_max, 4096)[1:], [r_max]])
        interior = np.min((1.0 + r) * np.abs(phi_fn(r)))
        tail = M / FOUR_PI  # (1+r)|M/(4 pi r)| decreases to M/(4 pi)
        return float(min(interior, tail))

    @staticmethod
    def from_model(model):
        phi_fn, dphi_fn = model.phi_fn, model.dphi_fn

        def enclosed(r):
            return FOUR_PI * np.asarray(r, dtype=float) ** 2 * dphi_fn(r)

        phi0 = float(phi_fn(np.array([0.0]))[0])
        return PotentialX(
            grid=model.grid,
            values=np.array(model.phi),
            M=model.M,
            min_phi=phi0,
            m_phi=PotentialX._decay_margin(phi_fn, model.grid.x_max, model.M),
            phi_fn=phi_fn,
            dphi_fn=dphi_fn,
            enclosed_fn=enclosed,
        )

    @staticmethod
    def from_callable(grid, phi_fn, dphi_fn, M):
        """Wrap analytic callables (e.g. a perturbed potential)."""

        def enclosed(r):
            return FOUR_PI * np.asarray(r, dtype=float) ** 2 * dphi_fn(r)

        phi0 = float(phi_fn(np.array([0.0]))[0])
        return PotentialX(
            grid=grid,
            values=phi_fn(grid.nodes),
            M=M,
            min_phi=phi0,
            m_phi=PotentialX._decay_margin(phi_fn, grid.x_max, M),
            phi_fn=phi_fn,
            dphi_fn=dphi_fn,
            enclosed_fn=enclosed,
        )


def solve_poisson_radial(grid, rho, method="spline"):
    """Potential of a nonnegative compactly supported radial density.

    Green representation phi(r) = -m(r)/(4 pi r) - int_r^rmax rho s ds with the
    exact monopole continuation outside the grid. method="spline" integrates a
    monotone cubic interpolant of the density (4th order); method="cells"
    treats the density as constant per cell (exact for piecewise-constant
    input).
    """
    rho = np.asarray(rho, dtype=float)
    if rho.shape != grid.nodes.shape:
        raise InvalidArgumentError("density shape does not match grid")
    if np.any(rho < -1e-12 * max(rho.max(initial=0.0), 1.0)):
        raise InvalidArgumentError("density must be nonnegative")
    rho = np.clip(rho, 0.0, None)

    if method == "spline":
        # interpolate rho itself, then integrate the interpolant against the
        # exact polynomial weights s^2 and s per piece (no weighting error)
        rho0 = _center_value(grid.nodes, rho)
        r0 = np.concatenate([[0.0], grid.nodes])
        dens = PchipInterpolator(r0, np.concatenate([[rho0], rho]))
        p2 = _weighted_antiderivative(dens, 2)
        p1 = _weighted_antiderivative(dens, 1)

        def cum_sq(r):
            return p2(np.clip(r, 0.0, grid.x_max))

        tot1 = float(p1(grid.x_max))

        def tail_lin(r):
            return tot1 - p1(np.clip(r, 0.0, grid.x_max))

    elif method == "cells":
        edge_cum_sq = np.concatenate([[0.0], np.cumsum(rho * grid.sq_moments)])
        lin_moments = rho * 0.5 * (grid.edges[1:] ** 2 - grid.edges[:-1] ** 2)
        edge_cum_lin = np.concatenate([[0.0], np.cumsum(lin_moments)])
        tot1 = float(edge_cum_lin[-1])

        def cum_sq(r):
            r = np.clip(r, 0.0, grid.x_max)
            i = np.clip(np.searchsorted(grid.edges, r) - 1, 0, grid.n - 1)
            a = grid.edges[i]
            return edge_cum_sq[i] + rho[i] * (r**3 - a**3) / 3.0

        def tail_lin(r):
            r = np.clip(r, 0.0, grid.x_max)
            i = np.clip(np.searchsorted(grid.edges, r) - 1, 0, grid.n - 1)
            a = grid.edges[i]
            return tot1 - (edge_cum_lin[i] + rho[i] * 0.5 * (r**2 - a**2))

    else:
        raise InvalidArgumentError(f"unknown method {method!r}")

    M = FOUR_PI * float(np.asarray(cum_sq(np.array([grid.x_max])))[0])
    if M <= 0:
        raise DegenerateInputError("zero total mass: potential not in the admissible class")

    def phi_fn(r):
        r = np.asarray(r, dtype=float)
        inside = r < grid.x_max
        rs = np.clip(r, 1e-300, None)
        inner = -cum_sq(r) / rs - tail_lin(r)
        outer = -M / (FOUR_PI * rs)
        return np.where(inside, inner, outer)

    def dphi_fn(r):
        r = np.asarray(r, dtype=float)
        tiny = 1e-12 * grid.x_max
        rs = np.clip(r, tiny, None)
        out = np.where(r < grid.x_max, cum_sq(rs) / rs**2, M / (FOUR_PI * rs**2))
        return np.where(r < tiny, 0.0, out)

    def enclosed(r):
        return FOUR_PI * np.minimum(cum_sq(np.asarray(r, dtype=float)), M / FOUR_PI)

    phi0 = -tot1
    return PotentialX(
        grid=grid,
        values=phi_fn(grid.nodes),
        M=M,
        min_phi=float(phi0),
        m_phi=PotentialX._decay_margin(phi_fn, grid.x_max, M),
        phi_fn=phi_fn,
        dphi_fn=dphi_fn,
        enclosed_fn=enclosed,
    )


def field_energy(pot):
    """Half the squared gradient norm, 2 pi int phi'^2 r^2 dr plus the exact
    exterior tail M^2 / (8 pi r_max)."""
    dphi = pot.dphi_fn(pot.grid.nodes)
    inner = 0.5 * FOUR_PI * float(np.dot(dphi**2, pot.grid.sq_moments))
    return inner + pot.M**2 / (8.0 * np.pi * pot.r_max)


def grad_distance2(pot1, pot2, n=None):
    """Squared gradient distance between two aligned radial potentials,
    including the exterior monopole-difference tail."""
    from .numerics import make_1d_grid

    r_max = max(pot1.r_max, pot2.r_max)
    grid = make_1d_grid(r_max, n or max(pot1.grid.n, pot2.grid.n, 512))
    d = pot1.dphi_fn(grid.nodes) - pot2.dphi_fn(grid.nodes)
    inner = FOUR_PI * float(np.dot(d**2, grid.sq_moments))
    tail = (pot1.M - pot2.M) ** 2 / (FOUR_PI * r_max)
    return inner + tail


def check_X_membership(pot, rel_tol=1e-6):
    """Admissibility flag and decay margin m(phi) = inf (1+r)|phi|."""
    r = np.linspace(0.0, pot.r_max, 2048)
    vals = pot.phi_fn(r)
    nonpositive = bool(np.all(vals <= 1e-12 * max(abs(pot.min_phi), 1.0)))
    m_phi = PotentialX._decay_margin(pot.phi_fn, pot.r_max, pot.M) if pot.M > 0 else 0.0
    decay_ok = bool(
        pot.phi_fn(np.array([pot.r_max]))[0] >= -pot.M / (FOUR_PI * pot.r_max) * (1.0 + rel_tol) - 1e-15
    )
    return (nonpositive and m_phi > 0 and decay_ok), float(m_phi)


@dataclass(frozen=True)
class RadialField3D:
    """A radial potential carried to 3D, optionally recentred."""

    pot: PotentialX
    center: np.ndarray

    @staticmethod
    def of(pot, center=(0.0, 0.0, 0.0)):
        return RadialField3D(pot=pot, center=np.asarray(center, dtype=float))

    @property
    def mass(self):
        return self.pot.M

    @property
    def extent(self):
        return self.pot.r_max + float(np.linalg.norm(self.center))

    def barycenter(self):
        return self.center

    def phi_at(self, pts):
        r = np.linalg.norm(pts - self.center, axis=-1)
        return self.pot.phi_fn(r)

    def grad_at(self, pts):
        d = pts - self.center
        r = np.clip(np.linalg.norm(d, axis=-1), 1e-300, None)
        return (self.pot.dphi_fn(r) / r)[..., None] * d


@dataclass(frozen=True)
class SumField3D:
    """Superposition of recentred radial fields."""

    parts: tuple

    @property
    def mass(self):
        return sum(p.mass for p in self.parts)

    @property
    def extent(self):
        return max(p.extent for p in self.parts)

    def barycenter(self):
        m = np.array([p.mass for p in self.parts])
        if m.sum() == 0:
            return np.zeros(3)
        c = np.stack([p.barycenter() for p in self.parts])
        return (m[:, None] * c).sum(axis=0) / m.sum()

    def phi_at(self, pts):
        return sum(p.phi_at(pts) for p in self.parts)

    def grad_at(self, pts):
        return sum(p.grad_at(pts) for p in self.parts)


@lru_cache(maxsize=8)
def _cube_rule(n):
    x, w = np.polynomial.legendre.leggauss(n)
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    W = w[:, None, None] * w[None, :, None] * w[None, None, :]
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=-1)
    return pts, W.ravel()


def grad_distance2_shifted(field1, field2, n_gauss=48):
    """Squared L2 distance of the gradients of two 3D fields by tensor Gauss
    quadrature over the ball containing both, plus the monopole tail."""
    R = 1.05 * max(field1.extent, field2.extent)
    pts, w = _cube_rule(n_gauss)
    x = pts * R
    ww = w * R**3
    mask = np.linalg.norm(x, axis=-1) <= R
    diff = field1.grad_at(x[mask]) - field2.grad_at(x[mask])
    inner = float(np.dot(ww[mask], np.sum(diff**2, axis=-1)))
    tail = (field1.mass - field2.mass) ** 2 / (FOUR_PI * R)
    return inner + tail


def _cross_gradient(pot1, pot2, d, n_dense=8192):
    """<grad phi1, grad phi2(. - z)> for radial potentials at separation d,
    reduced to 1D: -int rho2(s) [spherical average of phi1 at (s, d)] ds with
    the average taken from the exact antiderivative of t phi1(t)."""
    R1 = pot1.r_max
    t = np.linspace(0.0, R1, n_dense)
    g = t * pot1.phi_fn(t)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(t))])

    def int_t_phi(x):
        # integral of t phi1(t) from 0 to x, monopole tail past the grid
        x = np.asarray(x, dtype=float)
        inner = np.interp(np.clip(x, 0.0, R1), t, cum)
        tail = -pot1.M / FOUR_PI * np.clip(x - R1, 0.0, None)
        return inner + tail

    # shells of pot2 on its own grid
    edges = pot2.grid.edges
    shells = np.diff(pot2.enclosed_mass(edges))
    s = pot2.grid.nodes
    avg = (int_t_phi(s + d) - int_t_phi(np.abs(s - d))) / (2.0 * s * d)
    return -float(np.dot(shells, avg))


def potential_distance(pot1, pot2, z=(0.0, 0.0, 0.0)):
    """Sup distance and gradient L2 distance between pot1 and pot2(. - z).

    z = 0 reduces to aligned radial quadrature; otherwise the gradient term
    uses the bipolar reduction <grad phi1, grad phi2(.-z)> = -int rho2 avg(phi1)
    (exact up to 1D quadrature) and the sup norm a dense (radius, angle) scan.
    """
    z = np.asarray(z, dtype=float)
    d = float(np.linalg.norm(z))
    if d == 0.0:
        r = np.linspace(0.0, max(pot1.r_max, pot2.r_max), 8192)
        dist_inf = float(np.max(np.abs(pot1.phi_fn(r) - pot2.phi_fn(r))))
        return dist_inf, float(np.sqrt(grad_distance2(pot1, pot2)))

    cross = _cross_gradient(pot1, pot2, d)
    e1 = 2.0 * field_energy(pot1)
    e2 = 2.0 * field_energy(pot2)
    dist_grad = float(np.sqrt(max(e1 + e2 - 2.0 * cross, 0.0)))
    # sup norm on a (radius, angle-to-z) fan about the origin
    R = max(pot1.r_max, pot2.r_max) + d
    r = np.linspace(0.0, R, 2048)[:, None]
    c = np.linspace(-1.0, 1.0, 257)[None, :]
    s = np.sqrt(np.clip(r**2 + d**2 - 2.0 * r * d * c, 0.0, None))
    vals = np.abs(pot1.phi_fn(r * np.ones_like(s)) - pot2.phi_fn(s))
    dist_inf = float(vals.max())
    return dist_inf, dist_grad
