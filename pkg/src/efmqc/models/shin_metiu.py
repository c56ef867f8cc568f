"""Shin-Metiu model: one moving ion and one electron between two fixed ions.

The electron and the moving ion live on 1-D grids; all Coulomb interactions
are softened with error functions. The Born-Oppenheimer problem at clamped
ion position R is a 1-D single-electron Hamiltonian, discretized with a
second-order central-difference kinetic term, which makes it tridiagonal.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import erf

from efmqc.constants import PROTON_MASS
from efmqc.models.adiabatic import ModelDomainError


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid (endpoints inclusive)."""

    min: float
    max: float
    n: int

    def __post_init__(self):
        if not self.max > self.min:
            raise ValueError("grid must be strictly increasing")
        if self.n < 64:
            raise ValueError("grid needs at least 64 points")

    @property
    def spacing(self):
        return (self.max - self.min) / (self.n - 1)

    def points(self):
        return np.linspace(self.min, self.max, self.n)


@dataclass(frozen=True)
class ShinMetiuParams:
    L: float
    a_plus: float
    a_minus: float
    a_f: float
    M: float = PROTON_MASS
    r_grid: GridSpec = field(default_factory=lambda: GridSpec(-25.0, 25.0, 512))
    R_grid: GridSpec = field(default_factory=lambda: GridSpec(-8.0, 8.0, 256))

    def __post_init__(self):
        for name in ("L", "a_plus", "a_minus", "a_f"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.M <= 0:
            raise ValueError("M must be positive")


def softened_coulomb(x, a):
    """erf(|x|/a)/|x| with its x->0 limit 2/(a*sqrt(pi))."""
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    small = ax < 1e-12
    safe = np.where(small, 1.0, ax)
    out = erf(safe / a) / safe
    return np.where(small, 2.0 / (a * np.sqrt(np.pi)), out)


def ion_repulsion(params, R):
    """Moving-ion / fixed-ion repulsion (bare Coulomb, R-dependent only)."""
    return 1.0 / np.abs(R + params.L / 2.0) + 1.0 / np.abs(R - params.L / 2.0)


def electron_potential(params, r, R):
    """Electronic potential at clamped ion position R (no ion-ion term).

    Attraction to the two fixed ions (softening a_plus / a_minus for the ions
    at -L/2 / +L/2) and to the moving ion (softening a_f).
    """
    v = -softened_coulomb(r + params.L / 2.0, params.a_plus)
    v = v - softened_coulomb(r - params.L / 2.0, params.a_minus)
    v = v - softened_coulomb(R - r, params.a_f)
    return v


def potential_3d(params, R, r):
    """Full matter potential V(R, r) including ion-ion repulsion (broadcasts)."""
    return ion_repulsion(params, R) + electron_potential(params, r, R)


def shin_metiu_bo_solve(params, R, n_states):
    """Lowest BO eigenpairs at clamped ion position ``R``.

    Returns ``(energies (n_states,), wavefunctions (n_states, nr))`` with the
    wavefunctions L2-normalized on the grid: sum |phi|^2 dr = 1.
    """
    if not params.R_grid.min <= R <= params.R_grid.max:
        raise ModelDomainError(
            f"R={R} outside nuclear grid [{params.R_grid.min}, {params.R_grid.max}]"
        )
    r = params.r_grid.points()
    dr = params.r_grid.spacing
    diag = 1.0 / dr**2 + electron_potential(params, r, R) + ion_repulsion(params, R)
    offdiag = np.full(r.size - 1, -0.5 / dr**2)
    try:
        energies, vecs = eigh_tridiagonal(
            diag, offdiag, select="i", select_range=(0, n_states - 1)
        )
    except np.linalg.LinAlgError as exc:  # pragma: no cover - solver failure
        raise RuntimeError(f"BO eigensolver failed to converge at R={R}") from exc
    # columns -> rows, normalized on the grid measure
    wfs = (vecs / np.sqrt(dr)).T.copy()
    return energies, wfs
