"""Cavity-dressed Shin-Metiu electronic structure.

A single photon mode of frequency omega couples to the molecular dipole
through the bilinear interaction omega*lambda*q*(R - r), optionally with the
self-polarization term (lambda*(R - r))^2 / 2.  The photonic+electronic
Hamiltonian (everything except the nuclear kinetic energy) is represented in
the product basis of BO states and Fock states; its eigenvalues are the
polaritonic surfaces on which the trajectory methods run.

The model is precomputed on the nuclear grid: BO states, dipole blocks,
polaritonic eigenpairs with phases aligned from node to node, and NAC values
from finite-difference overlaps.  Evaluation at arbitrary R interpolates the
cache (cubic in the energies, linear in the NACs -- NAC peaks are sharp and
cubic interpolation overshoots them).
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from efmqc.models import shin_metiu as sm_mod
from efmqc.models.adiabatic import ModelDomainError, cap_nac, phase_align
from efmqc.models.shin_metiu import ShinMetiuParams, shin_metiu_bo_solve

# finite-difference step for the NAC overlaps (bohr)
NAC_FD_STEP = 1e-3


@dataclass(frozen=True)
class CavityParams:
    omega: float            # photon frequency (hartree)
    lam: float              # light-matter coupling strength (a.u.)
    n_fock: int = 4
    include_self_polarization: bool = True

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if self.n_fock < 2:
            raise ValueError("need at least 2 Fock states")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


def fock_q_matrix(omega, n_fock):
    """Matrix of the displacement operator q in the Fock basis (tridiagonal)."""
    n = np.arange(1, n_fock)
    q = np.zeros((n_fock, n_fock))
    q[n - 1, n] = q[n, n - 1] = np.sqrt(n / (2.0 * omega))
    return q


def _dipole_blocks(wfs, r, R, dr):
    """Matrix elements of (R - r) and (R - r)^2 between BO states (quadrature)."""
    x = R - r
    d1 = (wfs * x) @ wfs.T * dr
    d2 = (wfs * x**2) @ wfs.T * dr
    return d1, d2


def _pol_hamiltonian(bo_e, d1, d2, cav):
    n_bo = bo_e.size
    nf = cav.n_fock
    dim = n_bo * nf
    qmat = fock_q_matrix(cav.omega, nf)
    h = np.zeros((dim, dim))
    eye_f = np.eye(nf)
    diag = bo_e[:, None] + cav.omega * (np.arange(nf) + 0.5)[None, :]
    h[np.arange(dim), np.arange(dim)] = diag.ravel()
    h += cav.omega * cav.lam * np.kron(d1, qmat)
    if cav.include_self_polarization:
        h += 0.5 * cav.lam**2 * np.kron(d2, eye_f)
    return h


def _solve_node(sm, cav, n_bo, R, ref_wfs, ref_vecs, r, dr):
    """BO + polaritonic eigenproblem at one R, phase-locked to references."""
    bo_e, wfs = shin_metiu_bo_solve(sm, R, n_bo)
    if ref_wfs is not None:
        s = np.sign(np.sum(ref_wfs * wfs, axis=1))
        s[s == 0] = 1.0
        wfs *= s[:, None]
    d1, d2 = _dipole_blocks(wfs, r, R, dr)
    h = _pol_hamiltonian(bo_e, d1, d2, cav)
    pol_e, vecs = np.linalg.eigh(h)
    if ref_vecs is not None:
        vecs, _ = phase_align(ref_vecs, vecs, allow_permutation=False)
    return bo_e, wfs, d1, d2, pol_e, vecs


class PolaritonicModel:
    """Precomputed cavity-dressed surfaces on the nuclear grid.

    Immutable after construction; safe to share across trajectory workers.
    Use :func:`build_polaritonic_model` to create one.
    """

    def __init__(self, sm, cav, n_bo, n_states, nodes):
        self.sm = sm
        self.cav = cav
        self.n_bo = n_bo
        self.n_states = n_states
        self.n_pol = n_bo * cav.n_fock
        self.ndof = 1
        self.masses = np.array([sm.M])
        (self.R_nodes, self.bo_energies, self.bo_wfs, self.dip1, self.dip2,
         self.pol_energies, self.pol_vecs, self.nac_nodes) = nodes
        self.n_capped_nac = cap_nac(self.nac_nodes)
        self._splines = [
            CubicSpline(self.R_nodes, self.pol_energies[:, m])
            for m in range(n_states)
        ]
        self._dsplines = [s.derivative() for s in self._splines]

    @property
    def r_points(self):
        return self.sm.r_grid.points()

    def domain(self):
        return self.sm.R_grid.min, self.sm.R_grid.max

    def adiabatic_batch(self, R):
        """Interpolated energies, gradients and NACs at positions ``R (n, 1)``."""
        x = np.asarray(R, dtype=float).reshape(-1)
        lo, hi = self.domain()
        if np.any(x < lo) or np.any(x > hi):
            raise ModelDomainError("position outside the cached nuclear grid")
        ns = self.n_states
        n = x.size
        e = np.empty((n, ns))
        g = np.empty((n, ns, 1))
        d = np.zeros((n, ns, ns, 1))
        for m in range(ns):
            e[:, m] = self._splines[m](x)
            g[:, m, 0] = self._dsplines[m](x)
        for l in range(ns):
            for k in range(l + 1, ns):
                val = np.interp(x, self.R_nodes, self.nac_nodes[:, l, k])
                d[:, l, k, 0] = val
                d[:, k, l, 0] = -val
        return e, g, d


def build_polaritonic_model(sm: ShinMetiuParams, cav: CavityParams, n_bo=6,
                            n_states=None):
    """Diagonalize the cavity-dressed Hamiltonian on every nuclear grid node.

    ``n_states`` is the number of polaritonic states exposed downstream
    (default: all ``n_bo * n_fock``, which is rarely what you want for
    dynamics -- the §-typical runs track 5 or 6).
    """
    n_pol = n_bo * cav.n_fock
    if n_states is None:
        n_states = n_pol
    if n_pol < n_states + 2:
        raise ValueError("n_bo * n_fock must exceed the tracked state count by >= 2")
    r = sm.r_grid.points()
    dr = sm.r_grid.spacing
    Rn = sm.R_grid.points()
    nR = Rn.size

    bo_energies = np.empty((nR, n_bo))
    bo_wfs = np.empty((nR, n_bo, r.size))
    dip1 = np.empty((nR, n_bo, n_bo))
    dip2 = np.empty((nR, n_bo, n_bo))
    pol_energies = np.empty((nR, n_pol))
    pol_vecs = np.empty((nR, n_pol, n_pol))
    nac_nodes = np.zeros((nR, n_states, n_states))

    ref_wfs = ref_vecs = None
    for j, R in enumerate(Rn):
        bo_e, wfs, d1, d2, pol_e, vecs = _solve_node(
            sm, cav, n_bo, R, ref_wfs, ref_vecs, r, dr)
        bo_energies[j], bo_wfs[j] = bo_e, wfs
        dip1[j], dip2[j] = d1, d2
        pol_energies[j], pol_vecs[j] = pol_e, vecs
        ref_wfs, ref_vecs = wfs, vecs

        # NAC from the antisymmetrized overlap of polaritonic eigenstates at
        # R -+ delta; the BO basis itself moves with R, so the product-basis
        # overlap carries the BO overlap matrix.
        Rm = max(R - NAC_FD_STEP, sm.R_grid.min)
        Rp = min(R + NAC_FD_STEP, sm.R_grid.max)
        half = 0.5 * (Rp - Rm)
        _, wm, *_, vm = _solve_node(sm, cav, n_bo, Rm, wfs, vecs, r, dr)
        _, wp, *_, vp = _solve_node(sm, cav, n_bo, Rp, wfs, vecs, r, dr)
        s_bo = wm @ wp.T * dr
        o_full = np.kron(s_bo, np.eye(cav.n_fock))
        o_pol = vm[:, :n_states].T @ o_full @ vp[:, :n_states]
        # <Phi(R-d)|Phi(R+d)>_lk = delta_lk + 2d <Phi_l|Phi_k'> + O(d^2), so
        # the antisymmetrized overlap carries 4d times the coupling
        nac_nodes[j] = (o_pol - o_pol.T) / (4.0 * half)

    model = PolaritonicModel(
        sm, cav, n_bo, n_states,
        (Rn, bo_energies, bo_wfs, dip1, dip2, pol_energies, pol_vecs, nac_nodes),
    )
    _check_fock_truncation(model)
    return model


def _check_fock_truncation(model):
    nf = model.cav.n_fock
    # population of the top Fock level in the highest tracked state
    c = model.pol_vecs[:, :, model.n_states - 1].reshape(-1, model.n_bo, nf)
    top = np.sum(c[:, :, nf - 1] ** 2, axis=1).max()
    if top > 1e-3:
        warnings.warn(
            f"Fock-space truncation suspect: top level carries {top:.2e} "
            f"of tracked state {model.n_states - 1}; increase n_fock",
            stacklevel=2,
        )


def bare_potential(sm, R, r):
    """Matter potential V(R, r) used by the grid-exact solver."""
    return sm_mod.potential_3d(sm, R, r)
