"""Hamiltonian, reduced potential functional, transport pairing, and the
monotonicity / lower-bound diagnostics.

The central chain is H(f) >= J_{f*}(phi_f) >= H(f-hat), where f-hat is the
rearrangement of f with respect to its own field and
J_{f*}(phi) = H(f^{*phi}) + 1/2 || grad phi - grad phi_{f^{*phi}} ||^2.
All inequality tests use a tolerance tied to the measured self-consistency
error of the run (see monotonicity_gaps), not an a-priori constant.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import InvalidArgumentError, gl_points
from .poisson import (
    DegenerateInputError,
    field_energy,
    grad_distance2,
    solve_poisson_radial,
)
from .rearrangement import (
    distribution_function,
    generalized_rearrangement,
    jacobian_a,
    schwarz_rearrangement,
)
from .steady_state import PhaseSpaceDensity


@dataclass(frozen=True)
class EnergyReport:
    kinetic: float
    potential: float
    hamiltonian: float
    mass: float
    sup: float
    pot: object = None  # the Poisson field, for reuse


@dataclass(frozen=True)
class ReducedReport:
    J_value: float
    J0_value: float
    coupling: float
    J0_check: float
    G_table: tuple
    rearranged: PhaseSpaceDensity


def hamiltonian(f: PhaseSpaceDensity, pot=None) -> EnergyReport:
    """Kinetic term by phase-space quadrature, potential term from the radial
    Green solve of the induced density."""
    if float(f.values.min(initial=0.0)) < -1e-12 * max(f.sup(), 1.0):
        raise InvalidArgumentError("density has negative values")
    mass = f.mass()
    kinetic = f.kinetic()
    if mass == 0.0:
        return EnergyReport(0.0, 0.0, 0.0, 0.0, 0.0, None)
    if pot is None:
        pot = solve_poisson_radial(f.grid.radial, f.rho())
    potential = -field_energy(pot)
    return EnergyReport(
        kinetic=kinetic,
        potential=potential,
        hamiltonian=kinetic + potential,
        mass=mass,
        sup=f.sup(),
        pot=pot,
    )


def transport_pairing(f: PhaseSpaceDensity, g: PhaseSpaceDensity, pot) -> float:
    """Integral of (u^2/2 + phi(r)) (f - g) over phase space."""
    if f.grid is not g.grid and (
        f.grid.radial.n != g.grid.radial.n
        or not np.allclose(f.grid.radial.nodes, g.grid.radial.nodes)
        or not np.allclose(f.grid.speeds.nodes, g.grid.speeds.nodes)
    ):
        raise InvalidArgumentError("densities live on different grids")
    phi = pot.phi_fn(f.grid.radial.nodes)
    e = 0.5 * f.grid.speeds.nodes[None, :] ** 2 + phi[:, None]
    return float(np.sum(f.measure * e * (f.values - g.values)))


def _j0_energy_route(fstar, pot, jac, n_panels=96, n_gl=8):
    """J0(phi) = -int_{-inf}^0 G(a(e)) de with G the primitive of f*.

    The primitive saturates at the total mass once a(e) exceeds the support
    measure of f*, so the integral splits at e* = a^{-1}(L0) with an exact
    linear remainder.
    """
    L0 = fstar.support_measure()
    g_tot = float(np.asarray(fstar.primitive(np.array([L0 * (1 + 1e-12)])))[0])
    e_star = float(np.asarray(jac.a_inv(np.array([L0])))[0])
    lo = pot.min_phi
    # panel boundaries clustered at both ends of [lo, e_star]
    t = np.linspace(0.0, 1.0, n_panels + 1)
    bounds = lo + (e_star - lo) * 0.5 * (1.0 - np.cos(np.pi * t))
    total = 0.0
    for a, b in zip(bounds[:-1], bounds[1:]):
        e, w = gl_points(a, b, n_gl)
        total += float(np.dot(w, fstar.primitive(jac.a(e))))
    return -(total + g_tot * (0.0 - e_star))


def reduced_functional(fstar, pot, grid, jac=None, n_g_table=256) -> ReducedReport:
    """J_{f*}(phi) evaluated both directly (build the rearrangement, measure
    its Hamiltonian and the coupling) and through the primitive-of-f* route;
    the two must agree within the grid's quadrature error."""
    if jac is None:
        jac = jacobian_a(pot)
    fhat = generalized_rearrangement(fstar, pot, grid, jac=jac)
    rep = hamiltonian(fhat)
    if rep.pot is None:
        coupling = field_energy(pot)
    else:
        coupling = 0.5 * grad_distance2(pot, rep.pot)
    j_direct = rep.hamiltonian + coupling
    j0_check = _j0_energy_route(fstar, pot, jac)
    j0_direct = j_direct - field_energy(pot)
    s = np.linspace(0.0, fstar.support_measure() * 1.05 + 1e-300, n_g_table)
    return ReducedReport(
        J_value=j_direct,
        J0_value=j0_direct,
        coupling=coupling,
        J0_check=j0_check,
        G_table=(s, fstar.primitive(s)),
        rearranged=fhat,
    )


@dataclass(frozen=True)
class MonotonicityReport:
    gap1: float
    gap2: float
    pairing: float
    identity_residual: float
    hamiltonian_f: float
    hamiltonian_fhat: float
    J_fstar: float
    self_error: float


class _GreenForm:
    """Symmetric discrete Green bilinear form on a radial grid.

    I(rho1, rho2) = 1/2 int phi_1 rho_2 dx realized with the kernel
    1/(4 pi max(r, s)), which is symmetric and positive definite; potential
    energies booked through it satisfy the integration-by-parts identities at
    machine precision, and coupling terms are nonnegative by construction.
    """

    def __init__(self, grid):
        self.grid = grid
        self.kernel = 1.0 / (4.0 * np.pi * np.maximum.outer(grid.nodes, grid.nodes))
        self.cell_vol = 4.0 * np.pi * grid.sq_moments

    def masses(self, rho):
        return self.cell_vol * rho

    def pair(self, rho1, rho2):
        m1, m2 = self.masses(rho1), self.masses(rho2)
        return -0.5 * float(m1 @ self.kernel @ m2)

    def phi(self, rho):
        return -(self.kernel @ self.masses(rho))


def monotonicity_gaps(f: PhaseSpaceDensity) -> MonotonicityReport:
    """gap1 = H(f) - J_{f*}(phi_f) and gap2 = J_{f*}(phi_f) - H(f-hat).

    Potential energies are booked through the symmetric discrete Green form,
    so the decomposition H(f) = J_direct + pairing holds at machine precision
    and the coupling (gap2) is nonnegative by construction. gap1 uses the
    primitive-of-f* route for J, which carries no cell composition noise.
    The spread between the two J routes is the run's quadrature self-error;
    sign assertions should use a tolerance proportional to it.
    """
    if f.mass() <= 0:
        raise DegenerateInputError("zero density")
    grid = f.grid.radial
    green = _GreenForm(grid)
    rho_f = f.rho()
    pot_f = solve_poisson_radial(grid, rho_f)
    h_f = f.kinetic() + green.pair(rho_f, rho_f)
    mu = distribution_function(f)
    fstar = schwarz_rearrangement(mu)
    jac = jacobian_a(pot_f)
    fhat = generalized_rearrangement(fstar, pot_f, f.grid, jac=jac)
    rho_hat = fhat.rho()
    h_hat = fhat.kinetic() + green.pair(rho_hat, rho_hat)
    delta = rho_f - rho_hat
    coupling = -green.pair(delta, delta)
    j_direct = h_hat + coupling
    j_refined = -green.pair(rho_f, rho_f) + _j0_energy_route(fstar, pot_f, jac)
    gap1 = h_f - j_refined
    gap2 = coupling
    # pairing with the same discrete field keeps the identity exact
    e_kin = float(np.sum(f.measure * 0.5 * f.grid.speeds.nodes[None, :] ** 2 * (f.values - fhat.values)))
    pairing = e_kin + float(np.dot(green.phi(rho_f), green.cell_vol * delta))
    identity_residual = abs((h_f - j_direct) - pairing)
    scale = max(abs(h_f), abs(h_hat), 1e-300)
    self_error = (abs(j_direct - j_refined) + identity_residual) / scale
    return MonotonicityReport(
        gap1=gap1,
        gap2=gap2,
        pairing=pairing,
        identity_residual=identity_residual,
        hamiltonian_f=h_f,
        hamiltonian_fhat=h_hat,
        J_fstar=j_refined,
        self_error=self_error,
    )


@dataclass(frozen=True)
class LowerBoundReport:
    lhs: float
    rhs: float
    slack: float
    shift: np.ndarray
    reliable: bool


def stability_lower_bound(f: PhaseSpaceDensity, model, c0, shift=None, delta0=None) -> LowerBoundReport:
    """Quantitative bound H(f) - H(Q) + ||phi_f||_inf ||f* - Q*||_L1
    >= c0 || grad phi_f - grad phi_Q(.-z) ||^2 with z the modulation shift.

    Outside the trust neighbourhood the numbers are still returned but flagged
    unreliable.
    """
    from .rearrangement import ModelRearrangement
    from .spectral import modulation_shift

    rep_f = hamiltonian(f)
    pot_f = rep_f.pot
    mu = distribution_function(f)
    fstar = schwarz_rearrangement(mu)
    qstar = ModelRearrangement(model)
    l1_star = qstar.l1_distance(fstar)
    sup_phi = abs(pot_f.min_phi)
    # reference Hamiltonian through the same grid quadrature, so the bound is
    # not polluted by the builder-vs-grid discretization offset
    from .steady_state import phase_space_density

    h_ref = hamiltonian(phase_space_density(model, grid=f.grid)).hamiltonian
    lhs = rep_f.hamiltonian - h_ref + sup_phi * l1_star

    if shift is None:
        shift, _res = modulation_shift(pot_f, model)
    shift = np.asarray(shift, dtype=float)
    if np.linalg.norm(shift) < 1e-9 * model.R_Q:
        dist2 = grad_distance2(pot_f, model.potential())
        d_inf = None
    else:
        from .poisson import potential_distance

        d_inf, d_grad = potential_distance(pot_f, model.potential(), shift)
        dist2 = d_grad**2
    rhs = c0 * dist2

    if delta0 is None:
        delta0 = 0.5 * abs(model.phi_center)
    from .poisson import potential_distance as _pd

    di, dg = _pd(pot_f, model.potential(), shift)
    reliable = bool(di + dg < delta0)
    return LowerBoundReport(lhs=lhs, rhs=rhs, slack=lhs - rhs, shift=shift, reliable=reliable)
