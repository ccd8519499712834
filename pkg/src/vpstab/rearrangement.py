"""Distribution functions, Schwarz symmetrization, the phase-volume Jacobian,
and the rearrangement with respect to the microscopic energy.

The distribution function mu_f and the decreasing rearrangement f* are computed
exactly on the discrete cell measure (one stable sort, prefix sums), so
equimeasurability between f and f* holds at machine precision and the only
discretization error left in derived identities is the continuum one.

The Jacobian a(e) is the phase-space volume of {|v|^2/2 + phi(x) < e}; for a
potential with exterior law -M/(4 pi r) the integrals split into an interior
turning-point rule and an exact incomplete-Beta tail.
"""

import csv
from dataclasses import dataclass
import numpy as np
from scipy import special

from .numerics import (
    InvalidArgumentError,
    OutOfRangeError,
    gl_points,
)
from .steady_state import PhaseSpaceDensity, DomainError

EIGHT_PI_SQRT2_3 = 8.0 * np.pi * np.sqrt(2.0) / 3.0
FOUR_PI_SQRT2 = 4.0 * np.pi * np.sqrt(2.0)
FOUR_PI = 4.0 * np.pi


@dataclass(frozen=True)
class DistributionFunction:
    """mu(s) = measure of {f > s}, nonincreasing and right-continuous.

    values_asc / cum_above hold the cell values sorted ascending and the
    measure strictly above each value; ties are broken by cell index so
    repeated runs are bit-identical.
    """

    values_asc: np.ndarray
    measures_asc: np.ndarray

    def __post_init__(self):
        self.values_asc.setflags(write=False)
        self.measures_asc.setflags(write=False)

    @property
    def total_measure(self):
        return float(np.sum(self.measures_asc))

    @property
    def sup(self):
        return float(self.values_asc[-1]) if self.values_asc.size else 0.0

    def evaluate(self, s):
        """Vectorized mu(s)."""
        s = np.asarray(s, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self.measures_asc)])
        k = np.searchsorted(self.values_asc, s, side="right")
        return cum[-1] - cum[k]

    def support_measure(self):
        """mu(0+): measure of the strictly positive set."""
        return float(self.evaluate(np.array([0.0]))[0])

    @property
    def levels(self):
        return self.values_asc[::-1]

    @property
    def measures(self):
        return self.evaluate(self.levels)


def distribution_function(f: PhaseSpaceDensity) -> DistributionFunction:
    vals = f.values.ravel()
    meas = f.measure.ravel()
    order = np.argsort(vals, kind="stable")
    return DistributionFunction(values_asc=vals[order], measures_asc=meas[order])


@dataclass(frozen=True)
class MonotoneRearrangement:
    """Nonincreasing step representation of f* on [0, infinity).

    breaks[k] is the cumulative measure after the k-th (descending) value;
    f*(t) = values[k] on [breaks[k-1], breaks[k]) and 0 past the end.
    """

    breaks: np.ndarray
    step_values: np.ndarray

    def __post_init__(self):
        self.breaks.setflags(write=False)
        self.step_values.setflags(write=False)

    @property
    def sup(self):
        return float(self.step_values[0]) if self.step_values.size else 0.0

    @property
    def total(self):
        """L1 norm (mass)."""
        widths = np.diff(np.concatenate([[0.0], self.breaks]))
        return float(np.dot(widths, self.step_values))

    def support_measure(self):
        pos = self.step_values > 0
        if not np.any(pos):
            return 0.0
        return float(self.breaks[np.nonzero(pos)[0][-1]])

    def value(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breaks, t, side="right")
        padded = np.concatenate([self.step_values, [0.0]])
        return padded[idx]

    def level_measure(self, s):
        """Measure of {f* > s}; pseudo-inverse of the step function."""
        s = np.asarray(s, dtype=float)
        rev = self.step_values[::-1]  # ascending
        k = self.step_values.size - np.searchsorted(rev, s, side="right")
        return np.concatenate([[0.0], self.breaks])[k]

    def casimir(self, beta):
        widths = np.diff(np.concatenate([[0.0], self.breaks]))
        return float(np.dot(widths, beta(self.step_values)))

    def l1_distance(self, other):
        t = np.sort(np.unique(np.concatenate([[0.0], self.breaks, other.breaks])))
        mids = 0.5 * (t[:-1] + t[1:])
        return float(np.dot(np.diff(t), np.abs(self.value(mids) - other.value(mids))))

    def primitive(self, s):
        """G(s) = int_0^s f*(t) dt, piecewise linear and concave."""
        s = np.asarray(s, dtype=float)
        widths = np.diff(np.concatenate([[0.0], self.breaks]))
        gk = np.concatenate([[0.0], np.cumsum(widths * self.step_values)])
        tk = np.concatenate([[0.0], self.breaks])
        return np.interp(s, tk, gk)


def schwarz_rearrangement(mu: DistributionFunction) -> MonotoneRearrangement:
    """Pseudo-inverse of the distribution function (the bathtub profile)."""
    vals = mu.values_asc[::-1]
    meas = mu.measures_asc[::-1]
    return MonotoneRearrangement(breaks=np.cumsum(meas), step_values=vals.copy())


class ModelRearrangement:
    """Smooth rearrangement profile of a steady state, Q*(t) = F(a^{-1}(t)).

    Backed by the model's Jacobian instead of cell sorting; used where the
    step-function granularity would pollute derivative-based diagnostics.
    """

    def __init__(self, model, jac=None, n_table=2048):
        self.model = model
        self.jac = jac if jac is not None else jacobian_a(model.potential())
        self.L0 = model.L0
        t = model.L0 * 0.5 * (1.0 - np.cos(np.pi * np.linspace(0.0, 1.0, n_table)))
        e = self.jac.a_inv(np.clip(t, 1e-300, None))
        vals = model.profile.evaluate(e)
        vals[0] = model.profile.evaluate(np.array([model.phi_center]))[0]
        self._t = t
        self._v = np.clip(vals, 0.0, None)
        from scipy.interpolate import PchipInterpolator

        self._interp = PchipInterpolator(t, self._v)
        self._G = self._interp.antiderivative()
        self._Gtot = float(self._G(model.L0))

    @property
    def sup(self):
        return float(self._v[0])

    @property
    def total(self):
        return self._Gtot

    def support_measure(self):
        return self.L0

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t < self.L0, np.clip(self._interp(np.clip(t, 0.0, self.L0)), 0.0, None), 0.0)

    def primitive(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(s < self.L0, self._G(np.clip(s, 0.0, self.L0)), self._Gtot)

    def l1_distance(self, other):
        t = np.sort(np.unique(np.concatenate([[0.0], np.atleast_1d(getattr(other, "breaks", [])), self._t])))
        if t[-1] < self.L0:
            t = np.concatenate([t, [self.L0]])
        # refine: step-vs-smooth comparison on interval midpoints
        mids = 0.5 * (t[:-1] + t[1:])
        return float(np.dot(np.diff(t), np.abs(self.value(mids) - other.value(mids))))


def _dense_potential_table(pot, n=8192):
    r = np.linspace(0.0, pot.r_max, n)
    return r, pot.phi_fn(r)


class JacobianMap:
    """Tabulated phase-volume map e -> a(e) with derivative and inverse.

    a(e) = (8 pi sqrt(2) / 3) int (e - phi)_+^{3/2} dx vanishes for e <= min
    phi, increases strictly on [min phi, 0) and diverges as e -> 0^-, so its
    inverse covers all of [0, infinity).
    """

    def __init__(self, pot, n_table=512, n_main=48, n_edge=32):
        from .poisson import check_X_membership

        ok, m_phi = check_X_membership(pot)
        if not ok:
            raise InvalidArgumentError("potential is not in the admissible decay class")
        self.pot = pot
        self.min_phi = pot.min_phi
        self.n_main = n_main
        self.n_edge = n_edge
        self._r_dense, self._phi_dense = _dense_potential_table(pot)
        lo = self.min_phi
        hi = -1e-5 * abs(self.min_phi)
        t = np.linspace(0.0, 1.0, n_table)
        mesh = lo + (hi - lo) * 0.5 * (1.0 - np.cos(np.pi * t))
        a_vals = self.a_direct(mesh)
        ap_vals = self.a_prime_direct(mesh)
        keep = np.concatenate([[True], np.diff(a_vals) > 0])
        self._e_tab = mesh[keep]
        self._a_tab = a_vals[keep]
        self._ap_tab = ap_vals[keep]
        from scipy.interpolate import PchipInterpolator

        self._a_interp = PchipInterpolator(self._e_tab, self._a_tab)
        self._ap_interp = PchipInterpolator(self._e_tab, self._ap_tab)

    # --- direct quadrature -------------------------------------------------
    def _turning_radius(self, e):
        """Radius where phi = e, vectorized (exterior handled analytically)."""
        e = np.asarray(e, dtype=float)
        beta_m = self.pot.M / FOUR_PI
        r_int = np.interp(e, self._phi_dense, self._r_dense)
        # one Newton polish against the true potential
        for _ in range(2):
            f = self.pot.phi_fn(r_int) - e
            df = np.clip(self.pot.dphi_fn(r_int), 1e-300, None)
            r_int = np.clip(r_int - f / df, 0.0, self.pot.r_max)
        r_ext = beta_m / np.clip(-e, 1e-300, None)
        return np.where(e < self._phi_dense[-1], r_int, r_ext)

    def _sublevel_integral(self, e, p):
        """int_0^{r_e} (e - phi)_+^p r^2 dr for an array of e < 0."""
        e = np.atleast_1d(np.asarray(e, dtype=float))
        out = np.zeros_like(e)
        active = e > self.min_phi
        if not np.any(active):
            return out
        ea = e[active]
        r_e = self._turning_radius(ea)
        r_cap = np.minimum(r_e, self.pot.r_max)
        # main piece: GL on [0, 0.75 r_cap]
        x, w = gl_points(0.0, 1.0, self.n_main)
        r1 = 0.75 * r_cap[:, None] * x[None, :]
        v1 = np.clip(ea[:, None] - self.pot.phi_fn(r1), 0.0, None) ** p * r1**2
        main = 0.75 * r_cap * (v1 @ w)
        # edge piece in s = sqrt(r_cap - r): smooth through the turning point
        s_hi = np.sqrt(0.25 * r_cap)
        s = s_hi[:, None] * x[None, :]
        r2 = r_cap[:, None] - s**2
        v2 = 2.0 * s * np.clip(ea[:, None] - self.pot.phi_fn(r2), 0.0, None) ** p * r2**2
        edge = s_hi * (v2 @ w)
        total = main + edge
        # exterior tail where the turning radius leaves the grid
        ext = r_e > self.pot.r_max
        if np.any(ext):
            t0 = self.pot.r_max / r_e[ext]
            aa, bb = 3.0 - p, p + 1.0
            rem = special.beta(aa, bb) * (1.0 - special.betainc(aa, bb, t0))
            total[ext] += r_e[ext] ** 3 * (-ea[ext]) ** p * rem
        out[active] = total
        return out

    def a_direct(self, e):
        return EIGHT_PI_SQRT2_3 * FOUR_PI * self._sublevel_integral(e, 1.5)

    def a_prime_direct(self, e):
        return FOUR_PI_SQRT2 * FOUR_PI * self._sublevel_integral(e, 0.5)

    # --- tabulated evaluation ----------------------------------------------
    def a(self, e):
        e = np.asarray(e, dtype=float)
        inside = (e > self._e_tab[0]) & (e <= self._e_tab[-1])
        out = np.zeros(e.shape)
        out[inside] = self._a_interp(e[inside])
        beyond = e > self._e_tab[-1]
        if np.any(beyond):
            out[beyond] = self.a_direct(np.clip(e[beyond], None, -1e-300))
        return out

    def a_prime(self, e):
        e = np.asarray(e, dtype=float)
        inside = (e > self._e_tab[0]) & (e <= self._e_tab[-1])
        out = np.zeros(e.shape)
        out[inside] = self._ap_interp(e[inside])
        beyond = e > self._e_tab[-1]
        if np.any(beyond):
            out[beyond] = self.a_prime_direct(np.clip(e[beyond], None, -1e-300))
        return out

    def a_inv(self, s):
        """Inverse of the tabulated map, exact against the interpolant.

        Newton in e with bisection safeguards per query; values past the
        tabulated range fall back to the exterior asymptotics bracket.
        """
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.full(s.shape, self._e_tab[0])
        pos = s > 0
        if not np.any(pos):
            return out if s.shape else float(out)
        sp = np.clip(s[pos], None, self._a_tab[-1])
        k = np.clip(np.searchsorted(self._a_tab, sp) - 1, 0, self._e_tab.size - 2)
        lo = self._e_tab[k]
        hi = self._e_tab[k + 1]
        e = 0.5 * (lo + hi)
        for _ in range(60):
            f = self._a_interp(e) - sp
            d = np.clip(self._ap_interp(e), 1e-300, None)
            lo = np.where(f < 0, e, lo)
            hi = np.where(f > 0, e, hi)
            e_new = np.clip(e - f / d, lo, hi)
            stuck = (e_new == e) & (np.abs(f) > 1e-13 * np.maximum(sp, 1.0))
            e_new = np.where(stuck, 0.5 * (lo + hi), e_new)
            if np.all(np.abs(e_new - e) <= 1e-16 * np.abs(e_new) + 1e-300):
                e = e_new
                break
            e = e_new
        res = np.full(s.shape, self._e_tab[0])
        res[pos] = e
        res[s >= self._a_tab[-1]] = self._e_tab[-1]
        return res

    def export_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["e", "a", "a_prime"])
            for e, a, ap in zip(self._e_tab, self._a_tab, self._ap_tab):
                writer.writerow([repr(e), repr(a), repr(ap)])


def jacobian_a(pot, **kw) -> JacobianMap:
    return JacobianMap(pot, **kw)


def generalized_rearrangement(fstar, pot, grid, jac=None, mode="average") -> PhaseSpaceDensity:
    """Rearrangement with respect to the microscopic energy of the potential:
    f(r, u) = f*(a(u^2/2 + phi(r))) where the energy is negative, else 0.

    mode="average" returns per-cell averages (G(a_hi) - G(a_lo)) / (a_hi -
    a_lo) over the cell's energy window, the finite-volume view of the same
    composition; it averages out the cut-cell noise of the discrete measure
    and converges at second order. mode="point" evaluates at cell nodes.
    """
    if jac is None:
        jac = jacobian_a(pot)
    if mode == "point":
        phi = pot.phi_fn(grid.radial.nodes)
        e = 0.5 * grid.speeds.nodes[None, :] ** 2 + phi[:, None]
        values = np.zeros_like(e)
        neg = e < 0
        values[neg] = fstar.value(jac.a(e[neg]))
        return PhaseSpaceDensity(grid=grid, values=values)
    if mode != "average":
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    phi_edges = pot.phi_fn(grid.radial.edges)
    u_edges = grid.speeds.edges
    e_lo = 0.5 * u_edges[:-1][None, :] ** 2 + phi_edges[:-1][:, None]
    e_hi = 0.5 * u_edges[1:][None, :] ** 2 + phi_edges[1:][:, None]
    support_top = fstar.support_measure()
    a_lo = np.zeros_like(e_lo)
    a_hi = np.full_like(e_hi, 2.0 * support_top + 1.0)
    lo_neg = e_lo < 0
    a_lo[lo_neg] = jac.a(e_lo[lo_neg])
    hi_neg = e_hi < 0
    a_hi[hi_neg] = jac.a(e_hi[hi_neg])
    da = a_hi - a_lo
    avg = (fstar.primitive(a_hi) - fstar.primitive(a_lo)) / np.where(da > 0, da, 1.0)
    values = np.where(da > 0, avg, fstar.value(a_lo))
    values = np.where(lo_neg, values, 0.0)
    return PhaseSpaceDensity(grid=grid, values=values)


def pseudo_inverse_level(fstar, jac: JacobianMap, s):
    """Largest energy e with f*(a(e)) > s; equals a^{-1}(mu(s)) by duality."""
    sup = fstar.sup
    if not 0.0 < s < sup:
        raise OutOfRangeError(f"level {s} outside (0, {sup})")
    if hasattr(fstar, "level_measure"):
        m = float(np.asarray(fstar.level_measure(np.array([s])))[0])
    else:
        # smooth profile: invert by bisection on the value function
        lo, hi = 0.0, fstar.support_measure()
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if float(np.asarray(fstar.value(np.array([mid])))[0]) > s:
                lo = mid
            else:
                hi = mid
        m = lo
    return float(np.asarray(jac.a_inv(np.array([m])))[0])


def path_derivative_a(pot, pot_tilde, lam, e, n_main=64):
    """Derivative of a_{phi + lam h}(e) along the segment h = phi_tilde - phi:
    -4 pi sqrt(2) int (e - phi - lam h)_+^{1/2} h dx."""
    if e >= 0:
        raise DomainError("energy must be negative")
    lam = float(lam)
    M_lam = (1.0 - lam) * pot.M + lam * pot_tilde.M
    r_max = max(pot.r_max, pot_tilde.r_max)

    def phi_lam(r):
        return (1.0 - lam) * pot.phi_fn(r) + lam * pot_tilde.phi_fn(r)

    def h_fn(r):
        return pot_tilde.phi_fn(r) - pot.phi_fn(r)

    # locate the turning radius of the blended potential
    r_dense = np.linspace(0.0, r_max, 8192)
    phi_d = phi_lam(r_dense)
    if e <= phi_d[0]:
        return 0.0
    if e < phi_d[-1]:
        r_e = float(np.interp(e, phi_d, r_dense))
        interior_cap = r_e
        exterior = False
    else:
        interior_cap = r_max
        exterior = True

    x, w = gl_points(0.0, 1.0, n_main)
    r1 = 0.75 * interior_cap * x
    v1 = np.clip(e - phi_lam(r1), 0.0, None) ** 0.5 * h_fn(r1) * r1**2
    s_hi = np.sqrt(0.25 * interior_cap)
    s = s_hi * x
    r2 = interior_cap - s**2
    v2 = 2.0 * s * np.clip(e - phi_lam(r2), 0.0, None) ** 0.5 * h_fn(r2) * r2**2
    integral = 0.75 * interior_cap * np.dot(w, v1) + s_hi * np.dot(w, v2)
    if exterior:
        # both exterior laws are monopoles: h = -dM/(4 pi r) out there
        beta_lam = M_lam / FOUR_PI
        dbeta = (pot_tilde.M - pot.M) / FOUR_PI
        r_e = beta_lam / (-e)
        if r_e > r_max and abs(dbeta) > 0:
            # integrand (e + beta/r)^{1/2} r dr -> r_e^2 |e|^{1/2} t^{3/2-1}(1-t)^{3/2-1}... 
            # r = r_e t gives t^(1/2)(1-t)^(1/2) after factoring, i.e. Beta(3/2, 3/2)
            t0 = r_max / r_e
            rem = special.beta(1.5, 1.5) * (1.0 - special.betainc(1.5, 1.5, t0))
            integral += -dbeta * r_e**2 * (-e) ** 0.5 * rem
    return -FOUR_PI_SQRT2 * FOUR_PI * float(integral)


def export_tables(prefix, mu=None, fstar=None, jac=None, n_rows=512):
    """CSV dumps of (s, mu), (t, f*), (e, a) for plotting."""
    paths = {}
    if mu is not None:
        s = np.linspace(0.0, mu.sup, n_rows)
        path = f"{prefix}_mu.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["s", "mu"])
            for si, mi in zip(s, mu.evaluate(s)):
                writer.writerow([repr(float(si)), repr(float(mi))])
        paths["mu"] = path
    if fstar is not None:
        t = np.linspace(0.0, fstar.support_measure() * 1.05 + 1e-300, n_rows)
        path = f"{prefix}_fstar.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "fstar"])
            for ti, vi in zip(t, fstar.value(t)):
                writer.writerow([repr(float(ti)), repr(float(vi))])
        paths["fstar"] = path
    if jac is not None:
        path = f"{prefix}_jacobian.csv"
        jac.export_csv(path)
        paths["jacobian"] = path
    return paths
