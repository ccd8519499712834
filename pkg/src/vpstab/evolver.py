"""Spherically symmetric particle evolution of the kinetic equation.

Characteristics (r, v_r) with the squared angular momentum l = |x ^ v|^2 as a
per-particle invariant are pushed with a time-reversible splitting: gravity
kicks -phi'(r) dt/2 around an exact free-flight drift (a straight 3D line in
radial variables), so the centrifugal l/r^3 term carries no step-size
restriction. In self-consistent mode the field is rebuilt every step from the
cloud-in-cell binned radial density, optionally averaged over a trailing
window as particle-mesh noise control; in frozen mode the steady-state field
(or a supplied external force) is used.

The carried density value f0 is constant along characteristics, which makes
every Casimir integral sum(mu_p G(f0_p)) exactly conserved by construction;
the honest conservation diagnostics are mass bookkeeping, the Hamiltonian,
and the orbital distance.
"""

import csv
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .numerics import InvalidArgumentError, make_1d_grid
from .poisson import DegenerateInputError, field_energy, solve_poisson_radial

CHECKPOINT_MAGIC = b"VPSTABE1"


@dataclass
class ParticleEnsemble:
    """Radius, radial velocity, squared angular momentum, statistical (mass)
    weight, carried density value, and the phase-volume element per particle."""

    r: np.ndarray
    v_r: np.ndarray
    ell: np.ndarray
    weight: np.ndarray
    f0: np.ndarray
    volume: np.ndarray

    @property
    def n(self):
        return self.r.size

    def mass(self):
        return float(self.weight.sum())

    def speed(self):
        r_floor = np.clip(self.r, 1e-12, None)
        return np.sqrt(self.v_r**2 + self.ell / r_floor**2)

    def kinetic(self):
        r_floor = np.clip(self.r, 1e-12, None)
        return float(0.5 * np.dot(self.weight, self.v_r**2 + self.ell / r_floor**2))

    def casimir(self, G):
        return float(np.dot(self.volume, G(self.f0)))

    def copy(self):
        return ParticleEnsemble(
            r=self.r.copy(),
            v_r=self.v_r.copy(),
            ell=self.ell.copy(),
            weight=self.weight.copy(),
            f0=self.f0.copy(),
            volume=self.volume.copy(),
        )

    def save(self, path, time=0.0):
        header = struct.pack("<8sdq", CHECKPOINT_MAGIC, time, self.n)
        body = np.stack([self.r, self.v_r, self.ell, self.weight, self.f0], axis=1)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(body.astype("<f8").tobytes())

    @staticmethod
    def load(path):
        with open(path, "rb") as fh:
            magic, time, n = struct.unpack("<8sdq", fh.read(24))
            if magic != CHECKPOINT_MAGIC:
                raise InvalidArgumentError("not an ensemble checkpoint")
            body = np.frombuffer(fh.read(n * 5 * 8), dtype="<f8").reshape(n, 5)
        r, v_r, ell, weight, f0 = body.T
        volume = np.where(f0 > 0, weight / np.where(f0 > 0, f0, 1.0), 0.0)
        ens = ParticleEnsemble(
            r=r.copy(), v_r=v_r.copy(), ell=ell.copy(), weight=weight.copy(),
            f0=f0.copy(), volume=volume,
        )
        return ens, time


def sample_particles(f, n_particles, seed, value_fn=None):
    """Stratified sampler: cell counts proportional to cell mass, positions
    drawn from the r^2 u^2 measure within each cell, isotropic pitch angles.

    value_fn(r, u), when given, supplies the carried density exactly (e.g. the
    steady-state profile); otherwise cell values are used. Deterministic for a
    fixed seed.
    """
    if n_particles < 1:
        raise InvalidArgumentError("need at least one particle")
    rng = np.random.default_rng(seed)
    grid = f.grid
    mass_c = (f.measure * f.values).ravel()
    total = mass_c.sum()
    if total <= 0:
        raise DegenerateInputError("cannot sample an empty density")
    # systematic resampling of expected counts keeps the total exact
    expect = n_particles * mass_c / total
    base = np.floor(expect).astype(int)
    frac = expect - base
    short = n_particles - base.sum()
    if short > 0:
        pos = (rng.uniform() + np.arange(short)) / short
        cdf = np.cumsum(frac) / frac.sum()
        extra = np.searchsorted(cdf, pos)
        np.add.at(base, extra, 1)
    counts = base
    idx = np.repeat(np.arange(mass_c.size), counts)
    i_r, j_u = np.unravel_index(idx, f.values.shape)

    re3 = grid.radial.edges**3
    ue3 = grid.speeds.edges**3
    xi = rng.uniform(size=idx.size)
    r = np.cbrt(re3[i_r] + xi * (re3[i_r + 1] - re3[i_r]))
    xi = rng.uniform(size=idx.size)
    u = np.cbrt(ue3[j_u] + xi * (ue3[j_u + 1] - ue3[j_u]))
    cos_a = rng.uniform(-1.0, 1.0, size=idx.size)
    v_r = u * cos_a
    ell = r**2 * u**2 * (1.0 - cos_a**2)

    # importance weight mu_c / E[n_c], not mu_c / n_c: cells that happen to
    # draw no particle are compensated in expectation, keeping the total
    # mass estimator unbiased under refinement
    volume = (f.measure.ravel()[idx]) / expect[idx]
    if value_fn is not None:
        f0 = value_fn(r, u)
    else:
        f0 = f.values.ravel()[idx]
    weight = volume * f0
    keep = weight > 0
    return ParticleEnsemble(
        r=r[keep], v_r=v_r[keep], ell=ell[keep], weight=weight[keep],
        f0=np.asarray(f0)[keep], volume=volume[keep],
    )


class _Binner:
    """Cloud-in-cell deposit of particle mass onto a radial grid, normalized
    by the exact shell volumes."""

    def __init__(self, grid):
        self.grid = grid
        self.volumes = 4.0 * np.pi * grid.sq_moments

    def density(self, ens):
        nodes = self.grid.nodes
        idx = np.clip(np.searchsorted(nodes, ens.r) - 1, 0, nodes.size - 2)
        r0 = nodes[idx]
        r1 = nodes[idx + 1]
        t = np.clip((ens.r - r0) / (r1 - r0), 0.0, 1.0)
        rho = np.zeros(nodes.size)
        np.add.at(rho, idx, ens.weight * (1.0 - t))
        np.add.at(rho, idx + 1, ens.weight * t)
        return rho / self.volumes


@dataclass
class TrajectoryDiagnostics:
    times: list = field(default_factory=list)
    hamiltonian: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    casimir_sq: list = field(default_factory=list)
    casimir_min: list = field(default_factory=list)
    orbital: list = field(default_factory=list)
    potential_dist: list = field(default_factory=list)
    shift: list = field(default_factory=list)
    reflections: int = 0
    aborted: bool = False

    def rows(self):
        for k in range(len(self.times)):
            yield {
                "t": self.times[k],
                "hamiltonian": self.hamiltonian[k],
                "mass": self.mass[k],
                "casimir_sq": self.casimir_sq[k],
                "casimir_min": self.casimir_min[k],
                "orbital_distance": self.orbital[k],
                "potential_distance": self.potential_dist[k],
                "z_x": self.shift[k][0],
                "z_y": self.shift[k][1],
                "z_z": self.shift[k][2],
            }

    def write_csv(self, path, header_lines=()):
        cols = [
            "t", "hamiltonian", "mass", "casimir_sq", "casimir_min",
            "orbital_distance", "potential_distance", "z_x", "z_y", "z_z",
        ]
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            for row in self.rows():
                writer.writerow({k: repr(float(v)) for k, v in row.items()})


def orbital_distance(ens, model, shift=None):
    """Weighted L1 distance of the transported density to the steady state,
    estimated along characteristics: each particle compares its carried value
    with the steady-state value at its current phase-space point, plus the
    correction for steady-state mass missed by the moving support."""
    u = ens.speed()
    e = 0.5 * u**2 + model.phi_fn(ens.r)
    q_here = model.profile.evaluate(e)
    w = 1.0 + u**2
    main = float(np.dot(ens.volume, w * np.abs(ens.f0 - q_here)))
    covered = float(np.dot(ens.volume, w * q_here))
    q_total = model.M + 2.0 * model.kinetic
    return main + max(0.0, q_total - covered)


def evolve(
    ens,
    model,
    dt,
    t_end,
    self_consistent=True,
    cadence=None,
    field_n=256,
    field_factor=3.0,
    field_average=1,
    external_dphi=None,
    abort_energy_jump=0.2,
):
    """Kick-drift-kick integration up to t_end with diagnostics each cadence.

    self_consistent rebuilds the field every step from the binned density,
    averaged over the last field_average steps (a standard particle-mesh
    noise control; 1 disables it). Otherwise the steady-state field (or
    external_dphi) is frozen. Particles reflect at the grid edge (logged) and
    pass through the centre exactly (free flight). A sudden relative
    Hamiltonian jump beyond abort_energy_jump aborts the run.
    """
    from collections import deque

    if dt > 0.1 * model.dynamical_time:
        warnings.warn("time step exceeds a tenth of the central dynamical time")
    cadence = cadence if cadence is not None else max(1, int(round(0.5 * model.dynamical_time / dt)))
    grid = make_1d_grid(field_factor * model.R_Q, field_n)
    binner = _Binner(grid)
    ref_pot = model.potential()
    diag = TrajectoryDiagnostics()
    rho_buf = deque()
    rho_sum = np.zeros(field_n)

    def field_state():
        nonlocal rho_sum
        if self_consistent:
            rho = binner.density(ens)
            rho_buf.append(rho)
            rho_sum = rho_sum + rho
            if len(rho_buf) > field_average:
                rho_sum = rho_sum - rho_buf.popleft()
            pot = solve_poisson_radial(grid, rho_sum / len(rho_buf), method="cells")
            return pot, pot.dphi_fn
        if external_dphi is not None:
            return None, external_dphi
        return ref_pot, model.dphi_fn

    def accel(dphi_fn):
        # gravity only: the centrifugal term is integrated exactly in the drift
        return -dphi_fn(ens.r)

    def free_drift(tau):
        # exact straight-line flight in 3D expressed radially: never reaches
        # r = 0 for l > 0, flips v_r smoothly for l = 0
        r0 = np.clip(ens.r, 1e-14 * model.R_Q, None)
        b = r0 * ens.v_r
        speed2 = ens.v_r**2 + ens.ell / r0**2
        r1 = np.sqrt(np.clip(r0**2 + 2.0 * b * tau + speed2 * tau**2, 1e-28 * model.R_Q**2, None))
        ens.v_r = (b + speed2 * tau) / r1
        ens.r = r1

    def record(t, pot):
        if pot is None:
            ham = ens.kinetic()  # external force only: no potential available
            pdist = 0.0
        elif not self_consistent:
            # frozen field: the flow conserves the summed one-particle energies
            ham = ens.kinetic() + float(np.dot(ens.weight, model.phi_fn(ens.r)))
            pdist = 0.0
        else:
            ham = ens.kinetic() - field_energy(pot)
            from .poisson import grad_distance2

            pdist = float(np.sqrt(grad_distance2(pot, ref_pot, n=field_n)))
        diag.times.append(t)
        diag.hamiltonian.append(ham)
        diag.mass.append(ens.mass())
        diag.casimir_sq.append(ens.casimir(lambda s: s**2))
        cmin = 0.5 * float(np.median(ens.f0))
        diag.casimir_min.append(ens.casimir(lambda s: np.minimum(s, cmin)))
        diag.orbital.append(orbital_distance(ens, model))
        diag.potential_dist.append(pdist)
        diag.shift.append((0.0, 0.0, 0.0))

    pot, dphi_fn = field_state()
    record(0.0, pot)
    h0 = diag.hamiltonian[0]
    n_steps = int(round(t_end / dt))
    a = accel(dphi_fn)
    for step in range(1, n_steps + 1):
        ens.v_r += 0.5 * dt * a
        free_drift(dt)
        above = ens.r > grid.x_max
        if np.any(above):
            diag.reflections += int(above.sum())
            ens.r[above] = 2.0 * grid.x_max - ens.r[above]
            ens.v_r[above] *= -1.0
        pot, dphi_fn = field_state()
        a = accel(dphi_fn)
        ens.v_r += 0.5 * dt * a
        if step % cadence == 0 or step == n_steps:
            record(step * dt, pot)
            # external-force runs report kinetic energy only; no abort there
            meaningful = self_consistent or external_dphi is None
            if meaningful and abs(diag.hamiltonian[-1] - h0) > abort_energy_jump * max(abs(h0), 1e-300):
                diag.aborted = True
                warnings.warn("energy jump detected; aborting evolution")
                break
    return diag


def stability_sweep(
    model,
    etas=(0.0, 0.0025, 0.005, 0.01, 0.02),
    n_particles=100_000,
    seed=12345,
    dt_frac=0.01,
    n_dynamical_times=50,
    field_average=128,
    n_r=400,
    n_u=200,
    bump_seed=11,
):
    """Self-consistent runs over a family of perturbation sizes with common
    random numbers; returns per-size diagnostics, the max orbital distance,
    and the fitted log-log growth exponent over the nonzero sizes.

    eta is the relative L1 size of the initial perturbation; all runs share
    the bump shape and the sampling seed so the finite-N noise realization is
    common across the sweep.
    """
    from .perturbations import bump_field
    from .steady_state import phase_space_density

    f0 = phase_space_density(model, n_r=n_r, n_u=n_u)
    u_esc = float(model.u_escape(np.array([0.0]))[0])
    chi = bump_field(model.R_Q, u_esc, bump_seed)

    def q_fn(r, u):
        return model.profile.evaluate(0.5 * u**2 + model.phi_fn(r))

    # calibrate the bump amplitude so eps * |chi Q|_L1 / |Q|_L1 = eta
    vals = chi(f0.grid.radial.nodes[:, None], f0.grid.speeds.nodes[None, :])
    unit_size = float(np.sum(f0.measure * np.abs(vals) * f0.values) / f0.mass())

    dt = dt_frac * model.dynamical_time
    t_end = n_dynamical_times * model.dynamical_time
    results = {}
    for eta in etas:
        eps = eta / unit_size
        pert_vals = np.clip(f0.values * (1.0 + eps * vals), 0.0, None)
        f_eta = f0.with_values(pert_vals)

        def value_fn(r, u, _eps=eps):
            return np.clip(q_fn(r, u) * (1.0 + _eps * chi(r, u)), 0.0, None)

        ens = sample_particles(f_eta, n_particles, seed=seed, value_fn=value_fn)
        diag = evolve(
            ens, model, dt=dt, t_end=t_end, self_consistent=True, field_average=field_average
        )
        results[eta] = diag
    nonzero = sorted(e for e in results if e > 0)
    dmax = np.array([max(results[e].orbital) for e in nonzero])
    exponent = float(np.polyfit(np.log(nonzero), np.log(dmax), 1)[0]) if len(nonzero) >= 2 else np.nan
    return {"diagnostics": results, "max_distance": dict(zip(nonzero, dmax)), "exponent": exponent}


@dataclass(frozen=True)
class ConservationReport:
    mass_drift: float
    hamiltonian_drift: float
    casimir_sq_drift: float
    casimir_min_drift: float
    max_orbital: float
    passed: bool
    tolerances: dict


def conservation_report(diag, mass_tol=1e-6, ham_tol=1e-3):
    """Max relative drifts over the trajectory against declared tolerances."""

    def drift(series):
        arr = np.asarray(series, dtype=float)
        ref = arr[0]
        if ref == 0.0:
            return float(np.max(np.abs(arr)))
        return float(np.max(np.abs(arr - ref) / abs(ref)))

    md = drift(diag.mass)
    hd = drift(diag.hamiltonian)
    c2 = drift(diag.casimir_sq)
    cm = drift(diag.casimir_min)
    passed = (md <= mass_tol) and (hd <= ham_tol) and not diag.aborted
    return ConservationReport(
        mass_drift=md,
        hamiltonian_drift=hd,
        casimir_sq_drift=c2,
        casimir_min_drift=cm,
        max_orbital=float(np.max(diag.orbital)),
        passed=passed,
        tolerances={"mass": mass_tol, "hamiltonian": ham_tol},
    )
