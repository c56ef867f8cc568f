"""Grid-exact quantum dynamics by FFT split-operator propagation.

The propagator is dimension-agnostic: any product grid with one mass per
axis and a precomputed potential works, which covers the cavity system on
its (R, r, q) grid, the cavity-free (R, r) reduction, and the 1-D check
cases.  The photon coordinate is a genuine grid dimension here -- the
potential is polynomial in q, so the kinetic/potential splitting stays in
closed form and no Fock truncation enters the reference dynamics.

Polaritonic populations are extracted by projecting each R slice of the
wavefunction onto the cavity-dressed eigenfunctions expanded on the same
(r, q) grid.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import fft as sp_fft

from efmqc.models.adiabatic import phase_align
from efmqc.models.cavity import CavityParams, _solve_node
from efmqc.models.shin_metiu import GridSpec, ShinMetiuParams, potential_3d


class GridResolutionError(RuntimeError):
    """A basis function or wavepacket is not resolved on the grid."""


def _check_power_of_two(grids):
    for i, g in enumerate(grids):
        if g.n < 8 or g.n & (g.n - 1):
            raise ValueError(f"axis {i}: grid size {g.n} is not a power of two >= 8")


def wavenumbers(grid: GridSpec):
    """FFT angular wavenumbers conjugate to a real-space grid axis."""
    return 2.0 * np.pi * np.fft.fftfreq(grid.n, grid.spacing)


@dataclass
class GridWavefunction:
    """Complex amplitudes on a product grid with per-axis masses."""

    psi: np.ndarray
    grids: tuple
    masses: tuple

    def __post_init__(self):
        if self.psi.shape != tuple(g.n for g in self.grids):
            raise ValueError("amplitude shape does not match the grids")

    @property
    def dvol(self):
        return float(np.prod([g.spacing for g in self.grids]))

    def norm_squared(self):
        return float(np.sum(np.abs(self.psi) ** 2)) * self.dvol

    def normalize(self):
        self.psi /= np.sqrt(self.norm_squared())
        return self

    def density_along(self, axis):
        """Marginal |psi|^2 integrated over every other axis."""
        other = tuple(i for i in range(self.psi.ndim) if i != axis)
        dv = self.dvol / self.grids[axis].spacing
        return np.sum(np.abs(self.psi) ** 2, axis=other) * dv

    def mean_position(self, axis):
        x = self.grids[axis].points()
        rho = self.density_along(axis)
        dx = self.grids[axis].spacing
        return float(np.sum(x * rho) * dx / (np.sum(rho) * dx))

    def position_variance(self, axis):
        x = self.grids[axis].points()
        rho = self.density_along(axis)
        w = rho / np.sum(rho)
        mu = float(np.sum(x * w))
        return float(np.sum((x - mu) ** 2 * w))


class SplitOperatorPropagator:
    """Strang-split time stepper exp(-iVdt/2) exp(-iTdt) exp(-iVdt/2).

    ``potential`` is the full potential on the product grid; ``masses`` holds
    one kinetic mass per axis (the photon axis uses 1).  The kinetic phase is
    checked once against the aliasing bound |T_max| dt <= pi.
    """

    def __init__(self, potential, grids, masses, dt):
        grids = tuple(grids)
        _check_power_of_two(grids)
        potential = np.asarray(potential, dtype=float)
        if potential.shape != tuple(g.n for g in grids):
            raise ValueError("potential shape does not match the grids")
        self.grids = grids
        self.masses = tuple(float(m) for m in masses)
        self.dt = float(dt)
        self.potential = potential
        shape = [1] * len(grids)
        t = np.zeros(potential.shape)
        for i, (g, m) in enumerate(zip(grids, self.masses)):
            s = list(shape)
            s[i] = g.n
            t = t + (wavenumbers(g) ** 2 / (2.0 * m)).reshape(s)
        self._t_grid = t
        max_phase = float(np.max(t)) * abs(self.dt)
        if max_phase > np.pi:
            warnings.warn(
                f"kinetic phase per step reaches {max_phase:.2f} > pi: the "
                "time step aliases the momentum grid; reduce dt or coarsen "
                "the grid", stacklevel=2)
        self._expv_half = np.exp(-0.5j * self.dt * potential)
        self._expt = np.exp(-1j * self.dt * t)

    def step(self, wf: GridWavefunction, n_steps=1):
        """Advance the wavefunction ``n_steps`` steps in place."""
        psi = wf.psi
        for _ in range(n_steps):
            psi *= self._expv_half
            psi = sp_fft.ifftn(self._expt * sp_fft.fftn(psi))
            psi *= self._expv_half
        wf.psi = psi
        return wf

    def total_energy(self, wf: GridWavefunction):
        """<H> = <T> + <V> (hartree), norm-weighted."""
        n2 = np.sum(np.abs(wf.psi) ** 2)
        ev = float(np.sum(self.potential * np.abs(wf.psi) ** 2) / n2)
        psik = sp_fft.fftn(wf.psi)
        et = float(np.sum(self._t_grid * np.abs(psik) ** 2) / np.sum(np.abs(psik) ** 2))
        return et + ev


# ---------------------------------------------------------------------------
# cavity Shin-Metiu system on the (R, r, q) grid


def oscillator_eigenfunctions(n_max, omega, q):
    """First ``n_max`` photon-mode eigenfunctions on the ``q`` grid.

    Unit mass, frequency ``omega``; stable Hermite recurrence in the scaled
    coordinate sqrt(omega) q.  Shape ``(n_max, nq)``.
    """
    xi = np.sqrt(omega) * np.asarray(q, dtype=float)
    out = np.empty((n_max, xi.size))
    out[0] = (omega / np.pi) ** 0.25 * np.exp(-0.5 * xi**2)
    if n_max > 1:
        out[1] = np.sqrt(2.0) * xi * out[0]
    for n in range(2, n_max):
        out[n] = np.sqrt(2.0 / n) * xi * out[n - 1] - np.sqrt((n - 1) / n) * out[n - 2]
    return out


def cavity_grid_potential(sm: ShinMetiuParams, cav: CavityParams, R, r, q):
    """Full potential V(R, r, q) on the product grid (broadcasts)."""
    Rg = R[:, None, None]
    rg = r[None, :, None]
    qg = q[None, None, :]
    mu = Rg - rg
    v = potential_3d(sm, Rg, rg) + np.zeros_like(qg)
    v = v + 0.5 * cav.omega**2 * qg**2 + cav.omega * cav.lam * qg * mu
    if cav.include_self_polarization:
        v = v + 0.5 * cav.lam**2 * mu**2
    return v


def default_photon_grid(omega, n=64, span_sigmas=12.0):
    """Photon axis spanning +-span_sigmas / sqrt(omega)."""
    half = span_sigmas / np.sqrt(omega)
    return GridSpec(-half, half, n)


class PolaritonicGridBasis:
    """Cavity-dressed eigenfunctions expanded on the solver's (r, q) grid.

    Solves the BO + polaritonic eigenproblem at every R node of the solver
    grid with node-to-node phase locking, then expands each tracked state as
    sum_{i,n} c_in chi_i(r; R) phi_n(q); used both to prepare the initial
    wavepacket and to project populations.
    """

    def __init__(self, sm: ShinMetiuParams, cav: CavityParams, q_grid: GridSpec,
                 n_bo=6, n_states=5):
        self.sm = sm
        self.cav = cav
        self.q_grid = q_grid
        self.n_bo = n_bo
        self.n_states = n_states
        r = sm.r_grid.points()
        dr = sm.r_grid.spacing
        Rn = sm.R_grid.points()
        n_pol = n_bo * cav.n_fock
        self.R_points = Rn
        self.bo_wfs = np.empty((Rn.size, n_bo, r.size))
        self.pol_vecs = np.empty((Rn.size, n_pol, n_pol))
        self.pol_energies = np.empty((Rn.size, n_pol))
        ref_wfs = ref_vecs = None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            for j, R in enumerate(Rn):
                _, wfs, _, _, pol_e, vecs = _solve_node(
                    sm, cav, n_bo, R, ref_wfs, ref_vecs, r, dr)
                self.bo_wfs[j] = wfs
                self.pol_vecs[j] = vecs
                self.pol_energies[j] = pol_e
                ref_wfs, ref_vecs = wfs, vecs
        self.fock_wfs = oscillator_eigenfunctions(cav.n_fock, cav.omega,
                                                  q_grid.points())
        fock_norm = np.sum(self.fock_wfs**2, axis=1) * q_grid.spacing
        if np.max(np.abs(fock_norm - 1.0)) > 1e-6:
            raise GridResolutionError(
                f"photon-mode eigenfunctions lose norm on the q grid "
                f"(worst deficit {np.max(np.abs(fock_norm - 1.0)):.2e}); "
                "widen or refine the photon axis")

    def state_slice(self, m, j):
        """Polaritonic eigenfunction m on the (r, q) grid at R node j."""
        c = self.pol_vecs[j, :, m].reshape(self.n_bo, self.cav.n_fock)
        return np.einsum("in,ir,nq->rq", c, self.bo_wfs[j], self.fock_wfs)

    def project(self, wf: GridWavefunction):
        """Populations of the tracked polaritonic states.

        P_m = sum_R dR |<Phi_m(.,.; R) | psi(R,.,.)>_{r,q}|^2.  A warning is
        emitted when the tracked set misses more than 0.1% of the norm.
        """
        dr = self.sm.r_grid.spacing
        dq = self.q_grid.spacing
        dR = self.sm.R_grid.spacing
        # psi (R, r, q) -> BO x Fock amplitudes per R slice
        b = np.einsum("Rir,Rrq->Riq", self.bo_wfs, wf.psi) * dr
        c = np.einsum("nq,Riq->Rin", self.fock_wfs, b) * dq
        cp = c.reshape(c.shape[0], -1)
        amps = np.einsum("Rpm,Rp->Rm", self.pol_vecs[:, :, :self.n_states], cp)
        pops = np.sum(np.abs(amps) ** 2, axis=0) * dR
        total = float(np.sum(pops))
        if total < 0.999 * wf.norm_squared():
            warnings.warn(
                f"tracked polaritonic states capture only {total:.4f} of the "
                "norm; enlarge n_states or the BO/Fock basis", stacklevel=2)
        return pops


def initialize_wavepacket(basis: PolaritonicGridBasis, R0, sigma_R, m):
    """Gaussian nuclear packet on one polaritonic surface.

    psi(R, r, q) = G_{R0, sigma_R}(R) Phi_m(r, q; R), normalized; sigma_R is
    the position standard deviation of |G|^2.
    """
    if not 0 <= m < basis.n_states:
        raise ValueError(f"initial state {m} outside the tracked states")
    sm = basis.sm
    Rn = basis.R_points
    g = np.exp(-((Rn - R0) ** 2) / (4.0 * sigma_R**2))
    psi = np.empty((Rn.size, sm.r_grid.n, basis.q_grid.n), dtype=complex)
    dr = sm.r_grid.spacing
    dq = basis.q_grid.spacing
    worst = 0.0
    for j in range(Rn.size):
        phi = basis.state_slice(m, j)
        worst = max(worst, abs(np.sum(phi**2) * dr * dq - 1.0))
        psi[j] = g[j] * phi
    if worst > 1e-6:
        raise GridResolutionError(
            f"polaritonic eigenfunction loses {worst:.2e} of its norm on the "
            "(r, q) grid; refine the electronic or photon axis")
    wf = GridWavefunction(psi, (sm.R_grid, sm.r_grid, basis.q_grid),
                          (sm.M, 1.0, 1.0))
    return wf.normalize()


def cavity_propagator(basis: PolaritonicGridBasis, dt):
    """Split-operator stepper for the cavity system on the basis' grids."""
    sm, cav = basis.sm, basis.cav
    v = cavity_grid_potential(sm, cav, sm.R_grid.points(), sm.r_grid.points(),
                              basis.q_grid.points())
    return SplitOperatorPropagator(v, (sm.R_grid, sm.r_grid, basis.q_grid),
                                   (sm.M, 1.0, 1.0), dt)
