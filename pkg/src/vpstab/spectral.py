"""Hessian of the reduced potential functional at a steady state.

The second variation in a direction h is
    int |grad h|^2 - int |F'(e)| (h - P h)^2 dx dv,
where P averages spatial functions onto functions of the microscopic energy
with weight (e - phi)_+^{1/2}. Decomposed into spherical harmonics the
negative part is local except in the radial sector, where the projector adds
a positive low-rank correction on an energy mesh:

    k = 0:  int (h'^2 - V h^2) r^2 dr * 4pi  + sum_m omega_m (P h)(e_m)^2
    k >= 1: -d^2/dr^2 - (2/r) d/dr + k(k+1)/r^2 - V(r)

with V(r) = int |F'(e)| dv. The translation modes phi_Q'(r) span the kernel
(they sit in k = 1); everything else is strictly positive, and the coercivity
constant is the smallest Dirichlet-normalized eigenvalue away from them.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .numerics import (
    InvalidArgumentError,
    eig_tridiag,
    gl_points,
)
from .poisson import (
    PotentialX,
    RadialField3D,
    _cube_rule,
    grad_distance2_shifted,
)
from .rearrangement import ModelRearrangement, jacobian_a

FOUR_PI = 4.0 * np.pi
SQRT2 = np.sqrt(2.0)


class ModulationError(RuntimeError):
    pass


class CoercivityError(RuntimeError):
    pass


def effective_potential_VQ(model, r=None):
    """V(r) = int |F'(e)| dv = 4 pi sqrt(2) int |F'(e)| (e - phi(r))_+^{1/2} de,
    continuous and supported on [0, R_Q]."""
    if r is None:
        r = model.grid.nodes
    return model.vq_fn(np.asarray(r, dtype=float))


@dataclass(frozen=True)
class EnergyMesh:
    """Gauss-Jacobi mesh in energy over (phi(0), e0) with the |F'| cusp power
    absorbed; carries per-energy radial quadrature for the projector."""

    e: np.ndarray
    w_fprime: np.ndarray  # integrates int |F'(e)| g(e) de as sum(w_fprime * g(e))
    r_nodes: np.ndarray  # (n_e, n_q) radial nodes on [0, r(e)]
    r_weights: np.ndarray  # (n_e, n_q) weights with (e - phi)^{1/2} r^2 included
    denom: np.ndarray  # per-energy normalization int (e-phi)^{1/2} r^2 dr
    r_turn: np.ndarray

    @property
    def a_prime(self):
        # a'(e) = 4 pi sqrt(2) int (e - phi)^{1/2} dx
        return 16.0 * np.pi**2 * SQRT2 * self.denom


def energy_mesh(model, n_e=256, n_q=96):
    from scipy.special import roots_jacobi

    profile = model.profile
    lo = model.phi_center
    hi = model.e0
    x, w = roots_jacobi(n_e, profile.fp_cusp, 0.0)
    half = 0.5 * (hi - lo)
    e = lo + half * (x + 1.0)
    w_fp = half ** (profile.fp_cusp + 1.0) * w * profile.fp_smooth(e)

    # turning radius per energy node
    r_turn = np.interp(e, model.phi_fn(np.linspace(0, model.R_Q, 4096)), np.linspace(0, model.R_Q, 4096))
    # radial rule per energy: plain GL on [0, 0.75 r_e] plus sqrt substitution
    xg, wg = gl_points(0.0, 1.0, n_q // 2)
    r_main = 0.75 * r_turn[:, None] * xg[None, :]
    w_main = 0.75 * r_turn[:, None] * wg[None, :]
    s_hi = np.sqrt(0.25 * r_turn)
    s = s_hi[:, None] * xg[None, :]
    r_edge = r_turn[:, None] - s**2
    w_edge = 2.0 * s * s_hi[:, None] * wg[None, :]
    r_nodes = np.concatenate([r_main, r_edge], axis=1)
    w_geom = np.concatenate([w_main, w_edge], axis=1)
    phi_at = model.phi_fn(r_nodes.ravel()).reshape(r_nodes.shape)
    half_pow = np.sqrt(np.clip(e[:, None] - phi_at, 0.0, None))
    r_weights = w_geom * half_pow * r_nodes**2
    denom = r_weights.sum(axis=1)
    return EnergyMesh(
        e=e, w_fprime=w_fp, r_nodes=r_nodes, r_weights=r_weights, denom=denom, r_turn=r_turn
    )


def project_energy(h_fn, model, mesh=None):
    """Projection of a bounded radial function onto functions of the energy:
    (P h)(e) = int (e - phi)^{1/2} h r^2 dr / int (e - phi)^{1/2} r^2 dr.

    Returns (mesh, values); constants are reproduced exactly.
    """
    if mesh is None:
        mesh = energy_mesh(model)
    hv = h_fn(mesh.r_nodes.ravel()).reshape(mesh.r_nodes.shape)
    vals = (mesh.r_weights * hv).sum(axis=1) / mesh.denom
    return mesh, vals


@dataclass(frozen=True)
class Direction:
    """Radial trial direction with analytic derivative and compact support."""

    h: object
    dh: object
    extent: float

    def scaled(self, c):
        return Direction(h=lambda r: c * self.h(r), dh=lambda r: c * self.dh(r), extent=self.extent)


def smooth_bump_direction(model, center_frac=0.5, width_frac=0.25, amplitude=None, extent_frac=2.0):
    """C^inf compactly supported radial bump, normalized to a fraction of the
    central potential depth unless an amplitude is given."""
    R = extent_frac * model.R_Q
    r0 = center_frac * model.R_Q
    s = width_frac * model.R_Q
    amp = amplitude if amplitude is not None else -0.1 * abs(model.phi_center)

    def window(r):
        x = np.asarray(r, dtype=float) / R
        out = np.zeros_like(x)
        inside = x < 1.0
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - x[inside] ** 2))
        return out

    def dwindow(r):
        x = np.asarray(r, dtype=float) / R
        out = np.zeros_like(x)
        inside = x < 1.0
        xi = x[inside]
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - xi**2)) * (-2.0 * xi / (1.0 - xi**2) ** 2) / R
        return out

    def gauss(r):
        return np.exp(-((np.asarray(r, dtype=float) - r0) ** 2) / (2 * s**2))

    def dgauss(r):
        r = np.asarray(r, dtype=float)
        return gauss(r) * (-(r - r0) / s**2)

    return Direction(
        h=lambda r: amp * gauss(r) * window(r),
        dh=lambda r: amp * (dgauss(r) * window(r) + gauss(r) * dwindow(r)),
        extent=R,
    )


def _radial_quad(fn, r_hi, n_panels=64, n_gl=8):
    total = 0.0
    bounds = np.linspace(0.0, r_hi, n_panels + 1)
    for a, b in zip(bounds[:-1], bounds[1:]):
        r, w = gl_points(a, b, n_gl)
        total += float(np.dot(w, fn(r)))
    return total


def hessian_form(direction: Direction, model, mesh=None):
    """Second variation of the reduced functional at phi_Q for a radial
    direction: 4 pi int (h'^2 - V h^2) r^2 dr + int |F'| (P h)^2 a'(e) de."""
    if mesh is None:
        mesh = energy_mesh(model)
    grad = FOUR_PI * _radial_quad(lambda r: direction.dh(r) ** 2 * r**2, direction.extent)
    vterm = FOUR_PI * _radial_quad(lambda r: model.vq_fn(r) * direction.h(r) ** 2 * r**2, model.R_Q)
    _, ph = project_energy(direction.h, model, mesh)
    pterm = float(np.dot(mesh.w_fprime, ph**2 * mesh.a_prime))
    return grad - vterm + pterm


@dataclass(frozen=True)
class SpectralReport:
    k: int
    lambda_k: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, in w = r h variables on `radii`
    radii: np.ndarray
    kernel_residual: float
    dirichlet_eigenvalues: np.ndarray  # Dirichlet-normalized (generalized) spectrum


class _SectorMatrices:
    """Discretized quadratic forms on a uniform Dirichlet grid in w = r h."""

    def __init__(self, model, n=800, r_max_factor=6.0, mesh=None):
        self.model = model
        self.n = n
        self.r_max = r_max_factor * model.R_Q
        self.dr = self.r_max / (n + 1)
        self.r = self.dr * np.arange(1, n + 1)
        self.V = model.vq_fn(self.r)
        self.mesh = mesh if mesh is not None else energy_mesh(model)

    def laplacian_tridiag(self):
        d = np.full(self.n, 2.0) / self.dr**2
        e = np.full(self.n - 1, -1.0) / self.dr**2
        return d, e

    def sector_tridiag(self, k):
        lam = k * (k + 1)
        d, e = self.laplacian_tridiag()
        return d + lam / self.r**2 - self.V, e

    def dirichlet_matrix(self, k):
        lam = k * (k + 1)
        d, e = self.laplacian_tridiag()
        N = np.diag(d + lam / self.r**2)
        N += np.diag(e, 1) + np.diag(e, -1)
        return N

    def projector_correction(self):
        """Dense positive-semidefinite matrix of the energy-average term in w
        variables, normalized like the L2(dr) operator matrices."""
        mesh = self.mesh
        # interpolate grid h-values onto the mesh's radial quadrature points
        b = np.zeros((mesh.e.size, self.n))
        for m in range(mesh.e.size):
            rq = mesh.r_nodes[m]
            wq = mesh.r_weights[m] / mesh.denom[m]
            idx = np.clip(np.searchsorted(self.r, rq) - 1, 0, self.n - 2)
            r0, r1 = self.r[idx], self.r[idx + 1]
            t = np.clip((rq - r0) / (r1 - r0), 0.0, 1.0)
            row = np.zeros(self.n)
            np.add.at(row, idx, wq * (1 - t))
            np.add.at(row, idx + 1, wq * t)
            b[m] = row
        omega = mesh.w_fprime * mesh.a_prime
        c = (b * omega[:, None]).T @ b
        dinv = 1.0 / self.r
        return (c * dinv[None, :]) * dinv[:, None] / (FOUR_PI * self.dr)

    def radial_dense(self):
        d, e = self.laplacian_tridiag()
        A = np.diag(d - self.V) + np.diag(e, 1) + np.diag(e, -1)
        return A + self.projector_correction()


def harmonic_operator_spectrum(model, k, n_eigs=6, n=800, r_max_factor=6.0, mesh=None, sector=None):
    """Lowest eigenpairs of the harmonic-k sector of the Hessian operator.

    k >= 1 reduces to a symmetric tridiagonal problem via w = r h; the radial
    sector (k = 0) carries the dense projector correction. Also reports the
    Dirichlet-normalized generalized spectrum used for the coercivity
    constant, and for k = 1 the alignment of the ground state with r phi'.
    """
    sm = sector if sector is not None else _SectorMatrices(model, n=n, r_max_factor=r_max_factor, mesh=mesh)
    if k == 0:
        A = sm.radial_dense()
        vals, vecs = linalg.eigh(A, subset_by_index=(0, n_eigs - 1))
        Nmat = sm.dirichlet_matrix(0)
        gvals = linalg.eigh(A, Nmat, eigvals_only=True, subset_by_index=(0, n_eigs - 1))
    else:
        d, e = sm.sector_tridiag(k)
        vals, vecs = eig_tridiag(d, e, n_eigs)
        A = np.diag(d) + np.diag(e, 1) + np.diag(e, -1)
        Nmat = sm.dirichlet_matrix(k)
        gvals = linalg.eigh(A, Nmat, eigvals_only=True, subset_by_index=(0, n_eigs - 1))
    kernel_residual = np.nan
    if k == 1:
        # alignment with the translation mode r phi' inside the working window
        # [0, 3 R_Q]; outside it the Dirichlet box clips the marginal 1/r tail
        sel = sm.r <= 3.0 * model.R_Q
        wref = sm.r[sel] * model.dphi_fn(sm.r[sel])
        v0 = vecs[sel, 0]
        cos = abs(np.dot(wref, v0)) / np.sqrt(np.dot(wref, wref) * np.dot(v0, v0))
        kernel_residual = float(1.0 - cos)
    return SpectralReport(
        k=k,
        lambda_k=float(k * (k + 1)),
        eigenvalues=np.asarray(vals, dtype=float),
        eigenvectors=np.asarray(vecs, dtype=float),
        radii=sm.r,
        kernel_residual=kernel_residual,
        dirichlet_eigenvalues=np.asarray(gvals, dtype=float),
    )


def coercivity_constant(model, n=800, r_max_factor=6.0, mesh=None):
    """Smallest Dirichlet-normalized eigenvalue of the Hessian away from the
    translation kernel: min over the radial sector, the second k=1 mode, and
    the k=2 sector (higher k only gain centrifugal energy)."""
    sm = _SectorMatrices(model, n=n, r_max_factor=r_max_factor, mesh=mesh)
    rep0 = harmonic_operator_spectrum(model, 0, n_eigs=2, sector=sm)
    rep1 = harmonic_operator_spectrum(model, 1, n_eigs=3, sector=sm)
    rep2 = harmonic_operator_spectrum(model, 2, n_eigs=2, sector=sm)
    c0 = float(min(rep0.dirichlet_eigenvalues[0], rep1.dirichlet_eigenvalues[1], rep2.dirichlet_eigenvalues[0]))
    if c0 <= 0:
        raise CoercivityError(
            f"nonpositive Dirichlet-normalized gap {c0}: discretization too coarse"
        )
    return c0


def compactness_ratio(model, n=400, r_max_factor=6.0, n_modes=20):
    """Decay of the nonlocal (negative) part of the Hessian: ratio of the
    n_modes-th to the largest Dirichlet-normalized singular value in the
    radial sector."""
    sm = _SectorMatrices(model, n=n, r_max_factor=r_max_factor)
    K = np.diag(sm.V) - sm.projector_correction()
    Nmat = sm.dirichlet_matrix(0)
    vals = linalg.eigh(K, Nmat, eigvals_only=True)
    sv = np.sort(np.abs(vals))[::-1]
    return float(sv[n_modes - 1] / sv[0])


def hormander_identity_check(model, sample, step_frac=1e-4):
    """Finite-difference verification that the radial transport operator
    T f = (r^2 sqrt(2(e - phi)))^{-1} d/dr f (at fixed energy) satisfies
    -T^2 g / g = 3 (rho + phi'/r) / (r u)^4 for g = (r u)^3, u = sqrt(2(e-phi)).

    Returns the max relative residual over the sample; points too close to the
    centre or the support boundary are excluded with a warning.
    """
    delta = step_frac * model.R_Q
    residuals = []
    kept = 0
    for r0, u0 in sample:
        e = 0.5 * u0**2 + float(model.phi_fn(np.array([r0]))[0])
        if r0 < 4 * delta or r0 > model.R_Q - 4 * delta:
            warnings.warn("sample point too close to the centre or boundary; skipped")
            continue
        umin2 = 2.0 * (e - float(model.phi_fn(np.array([r0 + 4 * delta]))[0]))
        if umin2 <= 0.05 * u0**2:
            warnings.warn("sample point too close to the turning surface; skipped")
            continue

        def g(r):
            r = np.asarray(r, dtype=float)
            return r**3 * np.clip(2.0 * (e - model.phi_fn(r)), 0.0, None) ** 1.5

        def Tg(r):
            r = np.asarray(r, dtype=float)
            u = np.sqrt(np.clip(2.0 * (e - model.phi_fn(r)), 1e-300, None))
            return (g(r + delta) - g(r - delta)) / (2 * delta) / (r**2 * u)

        r0a = np.array([r0])
        u = np.sqrt(2.0 * (e - model.phi_fn(r0a)))
        t2 = (Tg(r0a + delta) - Tg(r0a - delta)) / (2 * delta) / (r0a**2 * u)
        lhs = float((-t2 / g(r0a))[0])
        rho = float(model.rho_fn(r0a)[0])
        dphi = float(model.dphi_fn(r0a)[0])
        rhs = float((3.0 * (rho + dphi / r0a) / (r0a * u) ** 4)[0])
        residuals.append(abs(lhs - rhs) / abs(rhs))
        kept += 1
    if kept == 0:
        raise InvalidArgumentError("no usable sample points")
    return max(residuals)


def _unit_panel_rule(n_panels, n_gl):
    """Nodes/weights on [0, 1] with panels clustered toward 1 (turning point)."""
    t = 0.5 * (1.0 - np.cos(np.pi * np.linspace(0.0, 1.0, n_panels + 1)))
    nodes, weights = [], []
    for a, b in zip(t[:-1], t[1:]):
        x, w = gl_points(a, b, n_gl)
        nodes.append(x)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def _delta_phase_volume(pot_base, direction, eps, e_nodes, n_panels=40, n_gl=10):
    """a_{phi + eps h}(e) - a_phi(e) for each energy node, by panel quadrature
    of the difference integrand on a common radial mesh scaled per energy
    (correlated errors cancel, leaving a floor proportional to eps)."""
    e_nodes = np.asarray(e_nodes, dtype=float)
    r_dense = np.linspace(0.0, pot_base.r_max, 4096)
    base_d = pot_base.phi_fn(r_dense)
    pert_d = base_d + eps * direction.h(r_dense)
    hi1 = np.where(e_nodes < pert_d[-1], np.interp(e_nodes, pert_d, r_dense), pot_base.r_max)
    hi2 = np.where(e_nodes < base_d[-1], np.interp(e_nodes, base_d, r_dense), pot_base.r_max)
    r_out = np.maximum(hi1, hi2)
    units, uw = _unit_panel_rule(n_panels, n_gl)
    r = r_out[:, None] * units[None, :]
    w = r_out[:, None] * uw[None, :]
    phi_r = pot_base.phi_fn(r.ravel()).reshape(r.shape)
    h_r = direction.h(r.ravel()).reshape(r.shape)
    diff = np.clip(e_nodes[:, None] - phi_r - eps * h_r, 0.0, None) ** 1.5 - np.clip(
        e_nodes[:, None] - phi_r, 0.0, None
    ) ** 1.5
    out = (8.0 * np.pi * SQRT2 / 3.0) * FOUR_PI * np.sum(w * diff * r**2, axis=1)
    return np.where(r_out > 0, out, 0.0)


@dataclass(frozen=True)
class TaylorReport:
    epsilons: np.ndarray
    delta_J: np.ndarray
    first_slope: np.ndarray  # delta_J / eps
    remainder_over_eps2: np.ndarray  # (delta_J - eps^2/2 D2J) / eps^2
    hessian_analytic: float
    hessian_fd: np.ndarray  # symmetric second differences per epsilon
    hessian_extrapolated: float


def taylor_remainder(model, direction: Direction, epsilons, qstar=None, jac=None):
    """Expansion of the reduced functional at the steady-state potential.

    delta_J(eps) = eps <grad phi, grad h> + eps^2/2 ||grad h||^2 + delta_J0
    with the phase-volume part integrated through the primitive of Q* on a
    common energy mesh for every eps, so the quadrature bias cancels in the
    differences. Validates that phi + eps h stays admissible.
    """
    from .poisson import check_X_membership

    pot = model.potential()
    eps_arr = np.asarray(list(epsilons), dtype=float)
    for eps in (eps_arr.max(), -eps_arr.max()):
        bad = PotentialX.from_callable(
            model.grid,
            lambda r: pot.phi_fn(r) + eps * direction.h(r),
            lambda r: pot.dphi_fn(r) + eps * direction.dh(r),
            pot.M,
        )
        ok, _ = check_X_membership(bad)
        if not ok:
            raise InvalidArgumentError(f"perturbed potential leaves the admissible class at eps={eps}")

    if jac is None:
        jac = jacobian_a(pot)
    if qstar is None:
        qstar = ModelRearrangement(model, jac=jac)
    cross = FOUR_PI * _radial_quad(
        lambda r: pot.dphi_fn(r) * direction.dh(r) * r**2, direction.extent, n_panels=96
    )
    grad2 = FOUR_PI * _radial_quad(lambda r: direction.dh(r) ** 2 * r**2, direction.extent, n_panels=96)
    d2j = hessian_form(direction, model)

    # common energy mesh for the J0 differences
    n_pan, n_gl = 96, 8
    lo = model.phi_center - abs(eps_arr).max() * 1.5 * np.max(np.abs(direction.h(np.linspace(0, direction.extent, 512))))
    t = np.linspace(0.0, 1.0, n_pan + 1)
    bounds = lo + (0.0 - lo) * 0.5 * (1.0 - np.cos(np.pi * t))
    e_nodes = []
    e_weights = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        x, w = gl_points(a, b, n_gl)
        e_nodes.append(x)
        e_weights.append(w)
    e_nodes = np.concatenate(e_nodes)
    e_weights = np.concatenate(e_weights)
    a_base = jac.a(np.clip(e_nodes, None, -1e-300))

    def delta_j(eps):
        if eps == 0.0:
            return 0.0
        da = _delta_phase_volume(pot, direction, eps, e_nodes)
        dg = qstar.primitive(a_base + da) - qstar.primitive(a_base)
        return eps * cross + 0.5 * eps**2 * grad2 - float(np.dot(e_weights, dg))

    dj = np.array([delta_j(e) for e in eps_arr])
    dj_neg = np.array([delta_j(-e) for e in eps_arr])
    slope = dj / eps_arr
    rem = (dj - 0.5 * eps_arr**2 * d2j) / eps_arr**2
    hess_fd = (dj + dj_neg) / eps_arr**2
    # Richardson step from the two largest eps, where truncation dominates the
    # quadrature floor
    order = np.argsort(eps_arr)[::-1]
    e1, e2 = eps_arr[order[0]], eps_arr[order[1]]
    h1, h2 = hess_fd[order[0]], hess_fd[order[1]]
    hess_extrap = (e1**2 * h2 - e2**2 * h1) / (e1**2 - e2**2)
    return TaylorReport(
        epsilons=eps_arr,
        delta_J=dj,
        first_slope=slope,
        remainder_over_eps2=rem,
        hessian_analytic=d2j,
        hessian_fd=hess_fd,
        hessian_extrapolated=hess_extrap,
    )


def hardy_check(model, direction: Direction, margin=0.02, mesh=None):
    """Aggregated Hardy-type control behind the radial-sector positivity:
    with f(r, e) the cumulative weighted deviation of h from its energy
    average, int chi |F'| (Tf)^2 >= 3 int chi (rho + phi'/r) f^2 /
    (r sqrt(2(e-phi)))^4 |F'|, away from a margin near the support boundary.

    Returns (lhs, rhs).
    """
    if mesh is None:
        mesh = energy_mesh(model)
    lo, hi = model.phi_center, model.e0
    band = hi - lo
    chi = (mesh.e > lo + margin * band) & (mesh.e < hi - margin * band)
    _, ph = project_energy(direction.h, model, mesh)
    # lhs: 16 pi^2 sqrt(2) int chi |F'| de int (h - Ph)^2 (e-phi)^{1/2} r^2 dr
    hv = direction.h(mesh.r_nodes.ravel()).reshape(mesh.r_nodes.shape)
    dev = hv - ph[:, None]
    inner_lhs = (mesh.r_weights * dev**2).sum(axis=1)
    lhs = 16.0 * np.pi**2 * SQRT2 * float(np.dot(mesh.w_fprime[chi], inner_lhs[chi]))
    # rhs: cumulative f(r, e) on a dense radial grid per energy
    n_dense = 1024
    rhs_inner = np.zeros(mesh.e.size)
    for m in np.nonzero(chi)[0]:
        e = mesh.e[m]
        r_t = mesh.r_turn[m]
        r = np.linspace(0.0, r_t, n_dense + 1)[1:]
        phi_r = model.phi_fn(r)
        two_e = np.clip(2.0 * (e - phi_r), 0.0, None)
        integ = (direction.h(r) - ph[m]) * np.sqrt(two_e) * r**2
        f_cum = np.concatenate([[0.0], np.cumsum(0.5 * (integ[1:] + integ[:-1]) * np.diff(r))])
        w_meas = np.sqrt(np.clip(e - phi_r, 0.0, None)) * r**2  # (e - phi)^{1/2} r^2 dr
        dens = model.rho_fn(r) + np.where(r > 0, model.dphi_fn(r) / np.clip(r, 1e-300, None), 0.0)
        val = np.zeros_like(r)
        pos = two_e > 1e-12
        val[pos] = dens[pos] * f_cum[pos] ** 2 / (r[pos] ** 4 * two_e[pos] ** 2) * w_meas[pos]
        rhs_inner[m] = np.trapezoid(val, r)
    rhs = 3.0 * 16.0 * np.pi**2 * SQRT2 * float(np.dot(mesh.w_fprime[chi], rhs_inner[chi]))
    return lhs, rhs


def modulation_shift(pot_or_field, model, seed=None, n_gauss=40):
    """Translation aligning a potential with the steady-state field: minimizes
    || grad phi - grad phi_Q(. - z) ||_L2 by derivative-free descent seeded at
    the density barycenter, and reports the three orthogonality residuals
    int eps_z d/dx_i (Laplacian phi_Q) dx at the solution."""
    field = pot_or_field if hasattr(pot_or_field, "grad_at") else RadialField3D.of(pot_or_field)
    ref = model.potential()

    def objective(z):
        return grad_distance2_shifted(field, RadialField3D.of(ref, z), n_gauss=n_gauss)

    z0 = np.asarray(seed, dtype=float) if seed is not None else field.barycenter()
    res = optimize.minimize(
        objective,
        z0,
        method="Nelder-Mead",
        options={"xatol": 1e-7 * max(model.R_Q, 1.0), "fatol": 1e-14, "maxiter": 600},
    )
    if not res.success and res.fun > 1e-6:
        raise ModulationError(f"no aligned translate found: {res.message}")
    z = res.x

    # orthogonality residuals: -int rho_Q(x) [grad phi](x + z) dx, normalized
    pts, w = _cube_rule(n_gauss)
    x = pts * model.R_Q
    ww = w * model.R_Q**3
    mask = np.linalg.norm(x, axis=-1) <= model.R_Q
    rho = model.rho_fn(np.linalg.norm(x[mask], axis=-1))
    grad = field.grad_at(x[mask] + z)
    resid = -np.einsum("q,q,qi->i", ww[mask], rho, grad)
    norm = model.M * max(abs(model.phi_center) / model.R_Q, 1e-300)
    return z, resid / norm
