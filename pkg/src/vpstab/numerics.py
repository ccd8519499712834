"""Shared numerical kernels.

1D quadrature grids whose node/weight pairs integrate r^2 dr exactly per cell,
tensor phase-space grids, Gauss rules for endpoint-singular integrands,
monotone-function inversion, symmetric tridiagonal eigensolves, and Hermite
evaluation of ODE output.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg, special
from scipy.optimize import brentq


class InvalidArgumentError(ValueError):
    pass


class OutOfRangeError(ValueError):
    pass


def _exact_sq_moments(edges):
    """Exact per-cell integrals of x^2, keeping tensor phase-space cell
    measures exact regardless of the node placement."""
    a, b = edges[:-1], edges[1:]
    return (b**3 - a**3) / 3.0


@dataclass(frozen=True)
class Grid1D:
    """Quadrature grid on [0, x_max] (or [x_min, x_max] for log spacing).

    nodes are cell midpoints, weights are the cell widths, and sq_moments[i]
    holds the exact cell integral of x^2 (so measure-type integrals are exact
    for piecewise-constant integrands).
    """

    nodes: np.ndarray
    weights: np.ndarray
    edges: np.ndarray
    sq_cells: np.ndarray = None

    def __post_init__(self):
        if self.sq_cells is None:
            object.__setattr__(self, "sq_cells", _exact_sq_moments(self.edges))
        for arr in (self.nodes, self.weights, self.edges, self.sq_cells):
            arr.setflags(write=False)
        if np.any(self.nodes <= 0) or np.any(self.weights <= 0):
            raise InvalidArgumentError("grid nodes and weights must be positive")
        if np.any(np.diff(self.nodes) <= 0):
            raise InvalidArgumentError("grid nodes must be strictly increasing")

    @property
    def x_max(self):
        return float(self.edges[-1])

    @property
    def n(self):
        return self.nodes.size

    @property
    def sq_moments(self):
        return self.sq_cells

    def integrate(self, values):
        """Plain rule: sum of values * weights."""
        return float(np.dot(np.asarray(values), self.weights))

    def integrate_sq(self, values):
        """Weighted rule for integrals against x^2 dx (exact for constants)."""
        return float(np.dot(np.asarray(values), self.sq_moments))


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Tensor (radius x speed) grid carrying the isotropic phase-space measure
    16 pi^2 r^2 u^2 dr du."""

    radial: Grid1D
    speeds: Grid1D

    @property
    def cell_measure(self):
        """2D array of exact cell measures."""
        return 16.0 * np.pi**2 * np.outer(self.radial.sq_moments, self.speeds.sq_moments)

    def weight(self, i, j):
        return float(self.cell_measure[i, j])

    def total_measure(self):
        return float(self.cell_measure.sum())

    def box_measure(self, r_hi, u_hi):
        """Measure of {r <= r_hi, u <= u_hi} with cut cells counted by node."""
        mr = np.where(self.radial.nodes <= r_hi, self.radial.sq_moments, 0.0)
        mu = np.where(self.speeds.nodes <= u_hi, self.speeds.sq_moments, 0.0)
        return 16.0 * np.pi**2 * mr.sum() * mu.sum()


def _uniform_edges(x_max, n):
    return np.linspace(0.0, x_max, n + 1)


def _log_edges(x_min, x_max, n):
    if x_min <= 0:
        raise InvalidArgumentError("log spacing needs x_min > 0")
    return np.geomspace(x_min, x_max, n + 1)


def _graded_edges(x_max, n, edge):
    """Cluster cells near 0 and near an interior edge location; uniform tail."""
    if edge is None or edge >= x_max:
        t = np.linspace(0.0, 1.0, n + 1)
        return x_max * 0.5 * (1.0 - np.cos(np.pi * t))
    n_in = max(8, int(round(0.65 * n)))
    n_out = n - n_in
    t = np.linspace(0.0, 1.0, n_in + 1)
    inner = edge * 0.5 * (1.0 - np.cos(np.pi * t))
    outer = np.linspace(edge, x_max, n_out + 1)[1:]
    return np.concatenate([inner, outer])


def make_1d_grid(x_max, n, spacing="uniform", x_min=None, edge=None):
    if n < 16:
        raise InvalidArgumentError("need at least 16 cells")
    if x_max <= 0:
        raise InvalidArgumentError("extent must be positive")
    if spacing == "uniform":
        edges = _uniform_edges(x_max, n)
    elif spacing == "log":
        edges = _log_edges(x_min if x_min is not None else 1e-3 * x_max, x_max, n)
    elif spacing == "graded":
        edges = _graded_edges(x_max, n, edge)
    else:
        raise InvalidArgumentError(f"unknown spacing {spacing!r}")
    return Grid1D(nodes=0.5 * (edges[:-1] + edges[1:]), weights=np.diff(edges), edges=edges)


def make_grids(r_max, n_r, u_max, n_u, spacing="uniform", r_min=None, edge=None):
    """Tensor phase-space grid; see make_1d_grid for the spacing options."""
    return PhaseSpaceGrid(
        radial=make_1d_grid(r_max, n_r, spacing=spacing, x_min=r_min, edge=edge),
        speeds=make_1d_grid(u_max, n_u, spacing="uniform"),
    )


def invert_monotone(fn, target, lo, hi, rtol=1e-12):
    """Solve fn(x) = target for nondecreasing fn on [lo, hi].

    Bracketing bisection/secant via Brent; the result satisfies
    |fn(x) - target| <= rtol * max(1, |target|).
    """
    flo, fhi = fn(lo), fn(hi)
    tol = rtol * max(1.0, abs(target))
    if target < flo - tol or target > fhi + tol:
        raise OutOfRangeError(f"target {target} outside [{flo}, {fhi}]")
    if abs(flo - target) <= tol:
        return lo
    if abs(fhi - target) <= tol:
        return hi
    x = brentq(lambda t: fn(t) - target, lo, hi, xtol=1e-15, rtol=8.9e-16, maxiter=200)
    if abs(fn(x) - target) > tol:
        # plateaus can stall Brent's secant steps; polish by bisection
        a, b = lo, hi
        for _ in range(200):
            m = 0.5 * (a + b)
            if fn(m) < target:
                a = m
            else:
                b = m
            if abs(fn(m) - target) <= tol:
                return m
        raise OutOfRangeError("monotone inversion did not reach tolerance")
    return x


def eig_tridiag(diag, offdiag, k):
    """k smallest eigenpairs of the symmetric tridiagonal matrix."""
    diag = np.asarray(diag, dtype=float)
    offdiag = np.asarray(offdiag, dtype=float)
    if offdiag.size != diag.size - 1:
        raise InvalidArgumentError("offdiag must have length len(diag) - 1")
    if not 1 <= k <= diag.size:
        raise InvalidArgumentError("k out of range")
    vals, vecs = linalg.eigh_tridiagonal(diag, offdiag, select="i", select_range=(0, k - 1))
    return vals, vecs


@lru_cache(maxsize=128)
def _gl_rule(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def gl_points(a, b, n):
    """Gauss-Legendre nodes/weights on [a, b]."""
    x, w = _gl_rule(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


@lru_cache(maxsize=64)
def _jacobi_rule(n, alpha, beta):
    # weight (1-x)^alpha (1+x)^beta on [-1, 1]
    x, w = special.roots_jacobi(n, alpha, beta)
    return x, w


def jacobi_integral(g, lo, hi, alpha, beta, n=80):
    """Integral over [lo, hi] of (hi - e)^alpha (e - lo)^beta g(e) de.

    Endpoint powers are absorbed into the rule, so g only needs to be smooth.
    """
    if hi <= lo:
        return 0.0
    x, w = _jacobi_rule(n, alpha, beta)
    half = 0.5 * (hi - lo)
    e = lo + half * (x + 1.0)
    return float(half ** (alpha + beta + 1.0) * np.dot(w, g(e)))


def turning_point_integral(phi, e, r_turn, p, n_main=48, n_edge=32, r_lo=0.0):
    """Integral over [r_lo, r_turn] of (e - phi(r))_+^p r^2 dr where
    e - phi vanishes at r_turn.

    The last quarter is integrated in s = sqrt(r_turn - r), which removes the
    p-power endpoint behaviour.
    """
    if r_turn <= r_lo:
        return 0.0
    r_split = r_lo + 0.75 * (r_turn - r_lo)
    r1, w1 = gl_points(r_lo, r_split, n_main)
    v1 = np.clip(e - phi(r1), 0.0, None) ** p * r1**2
    s_hi = np.sqrt(r_turn - r_split)
    s, ws = gl_points(0.0, s_hi, n_edge)
    r2 = r_turn - s**2
    v2 = 2.0 * s * np.clip(e - phi(r2), 0.0, None) ** p * r2**2
    return float(np.dot(w1, v1) + np.dot(ws, v2))


def exterior_power_tail(mass, e, r_start, p):
    """Integral over [r_start, r_e] of (e + mass/(4 pi r))^p r^2 dr for e < 0,
    with r_e = mass / (4 pi |e|) the exterior turning radius.

    Substituting r = r_e t turns the integrand into an incomplete Beta kernel.
    """
    if e >= 0:
        raise InvalidArgumentError("tail defined for e < 0")
    beta_m = mass / (4.0 * np.pi)
    r_e = beta_m / (-e)
    if r_e <= r_start:
        return 0.0
    t0 = r_start / r_e
    a, b = 3.0 - p, p + 1.0  # integrand t^(2-p) (1-t)^p after factoring |e|^p
    full = special.beta(a, b)
    rem = full * (1.0 - special.betainc(a, b, t0))
    return float(r_e**3 * (-e) ** p * rem)


def hermite_eval(x_nodes, y, yp, x, ypp=None):
    """Piecewise Hermite evaluation of dense ODE output.

    Cubic when only (y, y') are known at the nodes, quintic when y'' is also
    available. Returns (value, derivative) arrays.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    idx = np.clip(np.searchsorted(x_nodes, x) - 1, 0, len(x_nodes) - 2)
    x0, x1 = x_nodes[idx], x_nodes[idx + 1]
    h = x1 - x0
    t = (x - x0) / h
    y0, y1 = y[idx], y[idx + 1]
    d0, d1 = yp[idx] * h, yp[idx + 1] * h
    if ypp is None:
        h00 = (1 + 2 * t) * (1 - t) ** 2
        h10 = t * (1 - t) ** 2
        h01 = t**2 * (3 - 2 * t)
        h11 = t**2 * (t - 1)
        val = h00 * y0 + h10 * d0 + h01 * y1 + h11 * d1
        dh00 = 6 * t * (t - 1)
        dh10 = (1 - t) * (1 - 3 * t)
        dh01 = -dh00
        dh11 = t * (3 * t - 2)
        der = (dh00 * y0 + dh10 * d0 + dh01 * y1 + dh11 * d1) / h
        return val, der
    a0, a1 = ypp[idx] * h * h, ypp[idx + 1] * h * h
    t2, t3, t4, t5 = t**2, t**3, t**4, t**5
    # two-point quintic Hermite basis
    b0 = 1 - 10 * t3 + 15 * t4 - 6 * t5
    b1 = t - 6 * t3 + 8 * t4 - 3 * t5
    b2 = 0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5
    c0 = 10 * t3 - 15 * t4 + 6 * t5
    c1 = -4 * t3 + 7 * t4 - 3 * t5
    c2 = 0.5 * t3 - t4 + 0.5 * t5
    val = b0 * y0 + b1 * d0 + b2 * a0 + c0 * y1 + c1 * d1 + c2 * a1
    db0 = -30 * t2 + 60 * t3 - 30 * t4
    db1 = 1 - 18 * t2 + 32 * t3 - 15 * t4
    db2 = t - 4.5 * t2 + 6 * t3 - 2.5 * t4
    dc0 = -db0
    dc1 = -12 * t2 + 28 * t3 - 15 * t4
    dc2 = 1.5 * t2 - 4 * t3 + 2.5 * t4
    der = (db0 * y0 + db1 * d0 + db2 * a0 + dc0 * y1 + dc1 * d1 + dc2 * a1) / h
    return val, der


@dataclass(frozen=True)
class RadialOdeSolution:
    """Dense output of the self-gravitating profile ODE y'' + (2/r) y' = -S(y),
    integrated until y first crosses zero."""

    r: np.ndarray
    y: np.ndarray
    yp: np.ndarray
    ypp: np.ndarray
    r_zero: float
    yp_zero: float

    def __call__(self, x):
        val, _ = hermite_eval(self.r, self.y, self.yp, x, self.ypp)
        return val

    def derivative(self, x):
        _, der = hermite_eval(self.r, self.y, self.yp, x, self.ypp)
        return der


def solve_profile_ode(source, y0, h, max_steps=2_000_000):
    """Fixed-step classical RK4 for y'' + (2/r) y' + S(y) = 0, y(0)=y0, y'(0)=0.

    Starts from a series expansion at r = 2h (removes the coordinate
    singularity), marches until y crosses zero, and refines the crossing on the
    final interval with Hermite/Newton steps. source(y) must accept arrays and
    vanish for y <= 0.
    """
    s0 = float(source(np.array([y0]))[0])
    ds = float(
        (source(np.array([y0 * (1 + 1e-7)]))[0] - source(np.array([y0 * (1 - 1e-7)]))[0])
        / (2e-7 * y0)
    )
    if s0 <= 0:
        raise InvalidArgumentError("source must be positive at the centre")

    def series(r):
        return (
            y0 - s0 * r**2 / 6.0 + s0 * ds * r**4 / 120.0,
            -s0 * r / 3.0 + s0 * ds * r**3 / 30.0,
        )

    def rhs(r, y, v):
        return v, -2.0 * v / r - float(source(np.array([max(y, 0.0)]))[0])

    r0 = 2.0 * h
    y, v = series(r0)
    y_h, v_h = series(h)
    rs = [0.0, h, r0]
    ys = [y0, y_h, y]
    vs = [0.0, v_h, v]
    r = r0
    for _ in range(max_steps):
        k1y, k1v = rhs(r, y, v)
        k2y, k2v = rhs(r + h / 2, y + h / 2 * k1y, v + h / 2 * k1v)
        k3y, k3v = rhs(r + h / 2, y + h / 2 * k2y, v + h / 2 * k2v)
        k4y, k4v = rhs(r + h, y + h * k3y, v + h * k3v)
        y_new = y + h / 6 * (k1y + 2 * k2y + 2 * k3y + k4y)
        v_new = v + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        r += h
        rs.append(r)
        ys.append(y_new)
        vs.append(v_new)
        if y_new <= 0.0:
            break
        y, v = y_new, v_new
    else:
        raise InvalidArgumentError("profile did not reach its surface; extent too large")

    rs = np.array(rs)
    ys = np.array(ys)
    vs = np.array(vs)
    # Newton refinement of the zero crossing on the last Hermite interval
    ra, rb = rs[-2], rs[-1]
    ya, yb, va, vb = ys[-2], ys[-1], vs[-2], vs[-1]

    def val_der(x):
        vv, dd = hermite_eval(np.array([ra, rb]), np.array([ya, yb]), np.array([va, vb]), x)
        return float(vv[0]), float(dd[0])

    x = ra + (rb - ra) * ya / (ya - yb)
    for _ in range(60):
        f, fp = val_der(x)
        step = f / fp
        x_new = min(max(x - step, ra), rb)
        if abs(x_new - x) < 1e-15 * rb:
            x = x_new
            break
        x = x_new
    r_zero = x
    _, yp_zero = val_der(x)

    ypp = np.empty_like(rs)
    ypp[1:] = -2.0 * vs[1:] / rs[1:] - source(np.clip(ys[1:], 0.0, None))
    ypp[0] = -s0 / 3.0  # series limit of y'' at the centre
    return RadialOdeSolution(r=rs, y=ys, yp=vs, ypp=ypp, r_zero=float(r_zero), yp_zero=float(yp_zero))
