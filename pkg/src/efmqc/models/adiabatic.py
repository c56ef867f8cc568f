"""Adiabatic electronic-structure data and eigenvector bookkeeping.

Every model exposes the same batch interface::

    energies, gradients, nac = model.adiabatic_batch(R)   # R: (n, ndof)

with ``energies (n, ns)`` sorted ascending, ``gradients (n, ns, ndof)`` and
the nonadiabatic coupling ``nac (n, ns, ns, ndof)`` antisymmetric in the
state pair.  ``evaluate_adiabatic`` wraps a single configuration into an
:class:`AdiabaticData` record.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

# states closer than this gap are treated as degenerate: the coupling between
# them is unreliable and gets magnitude-capped instead of diverging
DEGENERACY_GAP = 1e-8
NAC_CAP = 1e4


class ModelDomainError(ValueError):
    """Nuclear configuration outside the model's defined domain."""


@dataclass
class AdiabaticData:
    """Energies, gradients and NAC vectors of all tracked states at one point."""

    energies: np.ndarray   # (ns,) hartree
    gradients: np.ndarray  # (ns, ndof) hartree/bohr
    nac: np.ndarray        # (ns, ns, ndof) 1/bohr, nac[l,k] = -nac[k,l]

    @property
    def n_states(self):
        return self.energies.shape[0]

    def __post_init__(self):
        if np.any(np.diff(self.energies) < -1e-12):
            raise ValueError("adiabatic energies must be sorted ascending")


def evaluate_adiabatic(model, R):
    """Adiabatic data of ``model`` at one nuclear configuration ``R``."""
    R = np.atleast_1d(np.asarray(R, dtype=float))
    e, g, d = model.adiabatic_batch(R[None, :])
    return AdiabaticData(energies=e[0], gradients=g[0], nac=d[0])


def phase_align(prev_vecs, cur_vecs, allow_permutation=True):
    """Fix signs (and optionally state ordering) of ``cur_vecs`` against ``prev_vecs``.

    Both arguments hold real eigenvectors in columns. Each current vector is
    multiplied by +-1 so that its overlap with the matching previous vector is
    non-negative; when ``allow_permutation`` the matching itself follows the
    maximum-overlap assignment so labels track state character through a
    crossing. Returns ``(aligned, perm)`` where ``aligned[:, l]`` corresponds
    to previous state ``l`` and ``perm[l]`` is the original column index.
    """
    prev = np.asarray(prev_vecs, dtype=float)
    cur = np.asarray(cur_vecs, dtype=float)
    if prev.shape != cur.shape:
        raise ValueError("eigenvector sets must share dimension and state count")
    overlap = prev.T @ cur
    if allow_permutation:
        _, perm = linear_sum_assignment(-np.abs(overlap))
    else:
        perm = np.arange(cur.shape[1])
    aligned = cur[:, perm].copy()
    diag = overlap[np.arange(len(perm)), perm]
    if np.min(np.abs(diag)) < 0.5:
        warnings.warn(
            "ambiguous state tracking: maximum eigenvector overlap below 0.5",
            stacklevel=2,
        )
    aligned[:, diag < 0.0] *= -1.0
    return aligned, perm


def cap_nac(nac, n_capped=None):
    """Clip NAC magnitudes at ``NAC_CAP`` component-wise; returns the count."""
    over = np.abs(nac) > NAC_CAP
    count = int(np.count_nonzero(over))
    if count:
        np.clip(nac, -NAC_CAP, NAC_CAP, out=nac)
    return count


class ZeroNACModel:
    """Wrapper that zeroes every NAC vector of the wrapped model.

    Test hook for the zero-net-transfer probes: with vanishing couplings any
    ensemble population change must come from the quantum-momentum terms.
    """

    def __init__(self, model):
        self._model = model

    def __getattr__(self, name):
        return getattr(self._model, name)

    def adiabatic_batch(self, R, **kwargs):
        e, g, d = self._model.adiabatic_batch(R, **kwargs)
        return e, g, np.zeros_like(d)
