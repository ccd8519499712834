"""Nonincreasing spherical steady states Q = F(|v|^2/2 + phi_Q).

Two families are built: generalized polytropes F(e) = A (e0 - e)_+^q with
0 < q < 7/2, and the King profile F(e) = A (exp(e0 - e) - 1)_+. Both reduce
the self-consistent Poisson problem to a single radial ODE for the depth
variable psi = e0 - phi, integrated with fixed-step RK4 plus a series start.

Units: the Poisson equation is Laplacian(phi) = rho (the 1/(4 pi) Green
kernel), so exterior potentials are -M/(4 pi r).
"""

import json
import warnings
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy import special
from scipy.interpolate import PchipInterpolator

from .numerics import (
    Grid1D,
    InvalidArgumentError,
    PhaseSpaceGrid,
    RadialOdeSolution,
    jacobi_integral,
    make_1d_grid,
    make_grids,
    solve_profile_ode,
    turning_point_integral,
)

FOUR_PI_SQRT2 = 4.0 * np.pi * np.sqrt(2.0)


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class PolytropeProfile:
    """F(e) = amplitude * (e0 - e)_+^q, with F' singular at the cutoff for q < 1."""

    q: float
    e0: float
    amplitude: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.q < 3.5:
            raise InvalidArgumentError("polytrope exponent must lie in (0, 7/2)")

    kind = "polytrope"

    def evaluate(self, e):
        return self.amplitude * np.clip(self.e0 - np.asarray(e, dtype=float), 0.0, None) ** self.q

    def derivative(self, e):
        w = self.e0 - np.asarray(e, dtype=float)
        wsafe = np.where(w > 0, w, 1.0)
        return np.where(w > 0, -self.q * self.amplitude * wsafe ** (self.q - 1.0), 0.0)

    # cutoff factorizations F = (e0-e)^a * smooth, |F'| = (e0-e)^b * smooth,
    # consumed by Gauss-Jacobi rules so integrable cusps cost no accuracy
    @property
    def f_cusp(self):
        return self.q

    def f_smooth(self, e):
        return np.full_like(np.asarray(e, dtype=float), self.amplitude)

    @property
    def fp_cusp(self):
        return self.q - 1.0

    def fp_smooth(self, e):
        return np.full_like(np.asarray(e, dtype=float), self.q * self.amplitude)

    # closed-form kernels in psi = e0 - phi >= 0
    def rho_kernel(self, psi):
        c = FOUR_PI_SQRT2 * special.beta(self.q + 1.0, 1.5) * self.amplitude
        return c * np.clip(psi, 0.0, None) ** (self.q + 1.5)

    def vq_kernel(self, psi):
        c = FOUR_PI_SQRT2 * self.q * special.beta(self.q, 1.5) * self.amplitude
        return c * np.clip(psi, 0.0, None) ** (self.q + 0.5)

    def kin_kernel(self, psi):
        c = FOUR_PI_SQRT2 * special.beta(self.q + 1.0, 2.5) * self.amplitude
        return c * np.clip(psi, 0.0, None) ** (self.q + 2.5)

    def params(self):
        return {"q": self.q, "e0": self.e0, "amplitude": self.amplitude}


@dataclass(frozen=True)
class KingProfile:
    """F(e) = amplitude * (exp(e0 - e) - 1)_+."""

    e0: float
    amplitude: float = 1.0

    kind = "king"

    def evaluate(self, e):
        w = self.e0 - np.asarray(e, dtype=float)
        return self.amplitude * np.where(w > 0, np.expm1(np.clip(w, None, 700.0)), 0.0)

    def derivative(self, e):
        w = self.e0 - np.asarray(e, dtype=float)
        return np.where(w > 0, -self.amplitude * np.exp(np.clip(w, None, 700.0)), 0.0)

    @property
    def f_cusp(self):
        return 1.0

    def f_smooth(self, e):
        w = np.atleast_1d(self.e0 - np.asarray(e, dtype=float))
        wsafe = np.where(w == 0, 1.0, w)
        out = np.where(w == 0, 1.0, np.expm1(wsafe) / wsafe)
        return self.amplitude * out

    @property
    def fp_cusp(self):
        return 0.0

    def fp_smooth(self, e):
        return self.amplitude * np.exp(self.e0 - np.asarray(e, dtype=float))

    def rho_kernel(self, psi):
        # int_0^W (e^s - 1)(W - s)^(1/2) ds = (4/15) W^(5/2) M(1, 7/2, W)
        w = np.clip(np.asarray(psi, dtype=float), 0.0, None)
        return FOUR_PI_SQRT2 * self.amplitude * (4.0 / 15.0) * w**2.5 * special.hyp1f1(1.0, 3.5, w)

    def vq_kernel(self, psi):
        # int_0^W e^s (W - s)^(1/2) ds = (2/3) W^(3/2) M(1, 5/2, W)
        w = np.clip(np.asarray(psi, dtype=float), 0.0, None)
        return FOUR_PI_SQRT2 * self.amplitude * (2.0 / 3.0) * w**1.5 * special.hyp1f1(1.0, 2.5, w)

    def kin_kernel(self, psi):
        # int_0^W (e^s - 1)(W - s)^(3/2) ds = (4/35) W^(7/2) M(1, 9/2, W)
        w = np.clip(np.asarray(psi, dtype=float), 0.0, None)
        return FOUR_PI_SQRT2 * self.amplitude * (4.0 / 35.0) * w**3.5 * special.hyp1f1(1.0, 4.5, w)

    def params(self):
        return {"e0": self.e0, "amplitude": self.amplitude}


def density_from_potential(profile, phi):
    """Spatial density at local potential phi, by energy quadrature.

    Evaluates both the F-weighted half-power form and the |F'|-weighted
    3/2-power form; they must agree to 1e-8 relative, and the F-form value is
    returned.
    """
    if phi >= 0:
        raise DomainError("potential must be negative")
    if phi >= profile.e0:
        return 0.0
    e0 = profile.e0
    f_form = FOUR_PI_SQRT2 * jacobi_integral(profile.f_smooth, phi, e0, profile.f_cusp, 0.5)
    fp_form = (
        (2.0 / 3.0)
        * FOUR_PI_SQRT2
        * jacobi_integral(profile.fp_smooth, phi, e0, profile.fp_cusp, 1.5)
    )
    if abs(f_form - fp_form) > 1e-8 * max(abs(f_form), 1e-300):
        raise RuntimeError(
            f"density quadrature forms disagree: {f_form} vs {fp_form}"
        )
    return f_form


@dataclass(frozen=True)
class InteriorSolution:
    """Dimensionalized interior depth profile psi(r) = y_scale * y(r / r_scale)."""

    ode: RadialOdeSolution
    r_scale: float = 1.0
    y_scale: float = 1.0

    def psi(self, r):
        return self.y_scale * self.ode(np.asarray(r, dtype=float) / self.r_scale)

    def dpsi(self, r):
        return self.y_scale / self.r_scale * self.ode.derivative(np.asarray(r, dtype=float) / self.r_scale)


@dataclass(frozen=True)
class SteadyStateModel:
    """Self-consistent steady state with its radial grid data.

    phi/rho hold node values on `grid`; interior gives dense (sub-grid)
    evaluation backed by the ODE solution, so derived quadratures are not
    limited by the grid resolution. Immutable after construction.
    """

    profile: object
    grid: Grid1D
    phi: np.ndarray
    rho: np.ndarray
    e0: float
    R_Q: float
    M: float
    L0: float
    kinetic: float
    hamiltonian: float
    interior: InteriorSolution | None = None
    meta: dict | None = None

    def __post_init__(self):
        self.phi.setflags(write=False)
        self.rho.setflags(write=False)

    @property
    def phi_center(self):
        return self.e0 - float(self.psi_fn(np.array([0.0]))[0])

    def psi_fn(self, r):
        """Depth e0 - phi(r), zero outside the support."""
        r = np.asarray(r, dtype=float)
        if self.interior is not None:
            inside = r < self.R_Q
            out = np.zeros_like(r)
            if np.any(inside):
                out[inside] = np.clip(self.interior.psi(r[inside]), 0.0, None)
            # exterior psi = e0 + M/(4 pi r) < 0 is clipped to zero: F vanishes there
            return out
        interp = self._phi_interp
        out = np.clip(self.e0 - interp(np.clip(r, 0.0, self.grid.x_max)), 0.0, None)
        return np.where(r < self.R_Q, out, 0.0)

    def phi_fn(self, r):
        r = np.asarray(r, dtype=float)
        inside = r < self.R_Q
        outside_val = -self.M / (4.0 * np.pi * np.clip(r, 1e-300, None))
        if self.interior is not None:
            inner_val = self.e0 - self.interior.psi(np.clip(r, 0.0, self.R_Q))
        else:
            inner_val = self._phi_interp(np.clip(r, 0.0, self.grid.x_max))
        return np.where(inside, inner_val, outside_val)

    def dphi_fn(self, r):
        r = np.asarray(r, dtype=float)
        inside = r < self.R_Q
        outside_val = self.M / (4.0 * np.pi * np.clip(r, 1e-150, None) ** 2)
        if self.interior is not None:
            inner_val = -self.interior.dpsi(np.clip(r, 0.0, self.R_Q))
        else:
            inner_val = self._dphi_interp(np.clip(r, 0.0, self.grid.x_max))
        return np.where(inside, inner_val, outside_val)

    def rho_fn(self, r):
        return self.profile.rho_kernel(self.psi_fn(r))

    def vq_fn(self, r):
        return self.profile.vq_kernel(self.psi_fn(r))

    @cached_property
    def _phi_interp(self):
        r = np.concatenate([[0.0], self.grid.nodes])
        p = np.concatenate([[self.phi_center_stored], self.phi])
        return PchipInterpolator(r, p)

    @cached_property
    def _dphi_interp(self):
        return self._phi_interp.derivative()

    @property
    def phi_center_stored(self):
        if self.meta and "phi0" in self.meta:
            return self.meta["phi0"]
        return self.e0 - (self.interior.psi(np.array([0.0]))[0] if self.interior else 0.0)

    def u_escape(self, r):
        return np.sqrt(2.0 * self.psi_fn(r))

    @property
    def dynamical_time(self):
        """Period of small radial oscillations about the centre."""
        rho0 = float(self.rho_fn(np.array([0.0]))[0])
        return 2.0 * np.pi * np.sqrt(3.0 / rho0)

    def potential(self):
        from .poisson import PotentialX

        return PotentialX.from_model(self)

    def to_json(self):
        doc = {
            "format": "vpstab-model",
            "version": 1,
            "kind": self.profile.kind,
            "params": self.profile.params(),
            "e0": self.e0,
            "M": self.M,
            "R_Q": self.R_Q,
            "L0": self.L0,
            "kinetic": self.kinetic,
            "hamiltonian": self.hamiltonian,
            "phi0": float(self.phi_center),
            "r": self.grid.nodes.tolist(),
            "edges": self.grid.edges.tolist(),
            "phi": self.phi.tolist(),
            "rho": self.rho.tolist(),
        }
        if self.meta:
            doc["meta"] = {k: v for k, v in self.meta.items() if k != "phi0"}
        return doc

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @staticmethod
    def from_json(doc):
        if doc.get("format") != "vpstab-model":
            raise InvalidArgumentError("not a model document")
        params = doc["params"]
        if doc["kind"] == "polytrope":
            profile = PolytropeProfile(q=params["q"], e0=params["e0"], amplitude=params["amplitude"])
        elif doc["kind"] == "king":
            profile = KingProfile(e0=params["e0"], amplitude=params["amplitude"])
        else:
            raise InvalidArgumentError(f"unknown model kind {doc['kind']!r}")
        edges = np.asarray(doc["edges"], dtype=float)
        grid = Grid1D(
            nodes=np.asarray(doc["r"], dtype=float),
            weights=np.diff(edges),
            edges=edges,
        )
        return SteadyStateModel(
            profile=profile,
            grid=grid,
            phi=np.asarray(doc["phi"], dtype=float),
            rho=np.asarray(doc["rho"], dtype=float),
            e0=doc["e0"],
            R_Q=doc["R_Q"],
            M=doc["M"],
            L0=doc["L0"],
            kinetic=doc["kinetic"],
            hamiltonian=doc["hamiltonian"],
            interior=None,
            meta={"phi0": doc["phi0"], **doc.get("meta", {})},
        )

    @staticmethod
    def load(path):
        with open(path) as fh:
            return SteadyStateModel.from_json(json.load(fh))


def _finish_model(profile, interior, grid, R_Q, M, meta):
    from .poisson import field_energy

    e0 = profile.e0
    phi = np.where(
        grid.nodes < R_Q,
        e0 - np.clip(interior.psi(np.clip(grid.nodes, 0.0, R_Q)), 0.0, None),
        -M / (4.0 * np.pi * grid.nodes),
    )
    psi = np.clip(e0 - phi, 0.0, None)
    rho = profile.rho_kernel(np.where(grid.nodes < R_Q, psi, 0.0))

    def phi_eval(r):
        r = np.asarray(r, dtype=float)
        return np.where(
            r < R_Q,
            e0 - np.clip(interior.psi(np.clip(r, 0.0, R_Q)), 0.0, None),
            -M / (4.0 * np.pi * np.clip(r, 1e-300, None)),
        )

    L0 = (
        (8.0 * np.pi * np.sqrt(2.0) / 3.0)
        * 4.0
        * np.pi
        * turning_point_integral(phi_eval, e0, R_Q, 1.5, n_main=96, n_edge=48)
    )
    kin_density = profile.kin_kernel(np.where(grid.nodes < R_Q, psi, 0.0))
    kinetic = 4.0 * np.pi * grid.integrate_sq(kin_density)

    model = SteadyStateModel(
        profile=profile,
        grid=grid,
        phi=phi,
        rho=rho,
        e0=e0,
        R_Q=R_Q,
        M=M,
        L0=L0,
        kinetic=kinetic,
        hamiltonian=0.0,
        interior=interior,
        meta=meta,
    )
    ham = kinetic - field_energy(model.potential())
    return replace(model, hamiltonian=ham)


def _ode_step(extent_guess, n_steps):
    return extent_guess / n_steps


def build_polytrope(q, central_potential_depth, grid, n_steps=6000):
    """Polytrope steady state with given cutoff depth psi(0) = e0 - phi(0).

    Solved as a Lane-Emden problem in scaled variables (index n = q + 3/2,
    finite radius for q < 7/2), then dimensionalized; the cutoff energy follows
    from matching to the exterior -M/(4 pi r) law.
    """
    if not 0.0 < q < 3.5:
        raise InvalidArgumentError(f"polytrope exponent q={q} outside (0, 7/2): infinite extent")
    if central_potential_depth <= 0:
        raise InvalidArgumentError("depth must be positive")
    n_index = q + 1.5
    source = lambda y: np.clip(y, 0.0, None) ** n_index
    coarse = solve_profile_ode(source, 1.0, 0.02)
    ode = solve_profile_ode(source, 1.0, _ode_step(coarse.r_zero, n_steps))
    xi1, dtheta1 = ode.r_zero, ode.yp_zero

    psi0 = central_potential_depth
    c_q = FOUR_PI_SQRT2 * special.beta(q + 1.0, 1.5)
    alpha = 1.0 / np.sqrt(c_q * psi0 ** (n_index - 1.0))
    R_Q = alpha * xi1
    M = 4.0 * np.pi * psi0 * alpha * xi1**2 * abs(dtheta1)
    e0 = -psi0 * xi1 * abs(dtheta1)

    profile = PolytropeProfile(q=q, e0=e0, amplitude=1.0)
    interior = InteriorSolution(ode=ode, r_scale=alpha, y_scale=psi0)
    if grid.x_max < R_Q:
        raise InvalidArgumentError(f"grid extent {grid.x_max} smaller than support radius {R_Q}")
    meta = {"q": q, "depth": central_potential_depth, "xi1": xi1}
    return _finish_model(profile, interior, grid, R_Q, M, meta)


def build_king(W0, grid, n_steps=6000):
    """King steady state parametrized by the scaled depth W0 = e0 - phi(0).

    W(r) is integrated outward until it vanishes at the support radius, and the
    cutoff energy is recovered from the continuous and differentiable match to
    the exterior law, e0 = R_Q W'(R_Q).
    """
    if W0 <= 0:
        raise InvalidArgumentError("King depth W0 must be positive")
    stub = KingProfile(e0=-1.0, amplitude=1.0)
    source = lambda y: stub.rho_kernel(y)
    coarse = solve_profile_ode(source, W0, 0.02)
    ode = solve_profile_ode(source, W0, _ode_step(coarse.r_zero, n_steps))
    R_Q, dW1 = ode.r_zero, ode.yp_zero
    e0 = R_Q * dW1
    M = -4.0 * np.pi * R_Q**2 * dW1
    profile = KingProfile(e0=e0, amplitude=1.0)
    interior = InteriorSolution(ode=ode)
    if grid.x_max < R_Q:
        raise InvalidArgumentError(f"grid extent {grid.x_max} smaller than support radius {R_Q}")
    meta = {"W0": W0}
    return _finish_model(profile, interior, grid, R_Q, M, meta)


def _support_radius_polytrope(q, depth, n_steps=2000):
    if not 0.0 < q < 3.5:
        raise InvalidArgumentError(f"polytrope exponent q={q} outside (0, 7/2): infinite extent")
    n_index = q + 1.5
    source = lambda y: np.clip(y, 0.0, None) ** n_index
    coarse = solve_profile_ode(source, 1.0, 0.02)
    c_q = FOUR_PI_SQRT2 * special.beta(q + 1.0, 1.5)
    alpha = 1.0 / np.sqrt(c_q * depth ** (n_index - 1.0))
    return alpha * coarse.r_zero


def polytrope_model(q, depth=1.0, n_r=400, extent_factor=3.0, spacing="uniform"):
    """Build a polytrope on a grid reaching extent_factor times the support radius."""
    R_guess = _support_radius_polytrope(q, depth)
    grid = make_1d_grid(extent_factor * R_guess * 1.0001, n_r, spacing=spacing)
    return build_polytrope(q, depth, grid)


def king_model(W0=3.0, n_r=400, extent_factor=3.0, spacing="uniform"):
    """Build a King model on a grid reaching extent_factor times the support radius."""
    stub = KingProfile(e0=-1.0, amplitude=1.0)
    coarse = solve_profile_ode(lambda y: stub.rho_kernel(y), W0, 0.02)
    grid = make_1d_grid(extent_factor * coarse.r_zero * 1.0001, n_r, spacing=spacing)
    return build_king(W0, grid)


def radial_laplacian(r, phi):
    """Discrete (1/r^2)(r^2 phi')' by flux differences between inter-node
    midpoints, divided by the exact shell volume so quadratics are exact
    (the centre node gets zero inner flux)."""
    rm = 0.5 * (r[1:] + r[:-1])
    flux = rm**2 * np.diff(phi) / np.diff(r)
    faces = np.concatenate([[0.0], rm])
    lap = np.empty_like(r)
    lap[:-1] = 3.0 * np.diff(np.concatenate([[0.0], flux])) / np.diff(faces**3)
    lap[-1] = lap[-2]
    return lap


def check_steady_state(model):
    """Max-norm Poisson residual |Laplacian(phi) - rho| / max(rho) on the grid."""
    lap = radial_laplacian(model.grid.nodes, model.phi)
    res = np.abs(lap - model.rho)
    return float(res[:-1].max() / model.rho.max())


@dataclass(frozen=True)
class PhaseSpaceDensity:
    """Isotropic density f(r, u) sampled on a tensor phase-space grid."""

    grid: PhaseSpaceGrid
    values: np.ndarray
    truncated: bool = False

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def measure(self):
        return self.grid.cell_measure

    def mass(self):
        return float(np.sum(self.measure * self.values))

    def kinetic(self):
        return float(np.sum(self.measure * self.values * 0.5 * self.grid.speeds.nodes**2))

    def weighted_l1(self):
        """Norm of (1 + |v|^2) f."""
        return float(np.sum(self.measure * self.values * (1.0 + self.grid.speeds.nodes**2)))

    def rho(self):
        """Radial density profile: 4 pi int f u^2 du per radial node."""
        return 4.0 * np.pi * self.values @ self.grid.speeds.sq_moments

    def sup(self):
        return float(self.values.max(initial=0.0))

    def with_values(self, values):
        return PhaseSpaceDensity(grid=self.grid, values=np.asarray(values, dtype=float))

    def l1_distance(self, other):
        return float(np.sum(self.measure * np.abs(self.values - other.values)))


def default_phase_grid(model, n_r=400, n_u=200):
    """Grid exactly covering the phase-space support of the model."""
    u_max = float(model.u_escape(np.array([0.0]))[0])
    return make_grids(model.R_Q, n_r, u_max, n_u)


def phase_space_density(model, grid=None, n_r=400, n_u=200):
    """Sample Q = F(u^2/2 + phi_Q(r)) on the phase grid."""
    if grid is None:
        grid = default_phase_grid(model, n_r=n_r, n_u=n_u)
    truncated = False
    u_needed = float(model.u_escape(np.array([0.0]))[0])
    if grid.radial.x_max < model.R_Q * (1 - 1e-12) or grid.speeds.x_max < u_needed * (1 - 1e-12):
        warnings.warn("phase grid does not cover the model support; density truncated")
        truncated = True
    phi = model.phi_fn(grid.radial.nodes)
    e = 0.5 * grid.speeds.nodes[None, :] ** 2 + phi[:, None]
    values = model.profile.evaluate(e)
    return PhaseSpaceDensity(grid=grid, values=values, truncated=truncated)
