"""Analytic two-state model on one nuclear coordinate.

Diabatic matrix [[h11, h12], [h12, h22]] built from user-supplied callables
(values and derivatives).  Eigenvalues and the derivative coupling have
closed forms, which makes this the standard sandbox for propagator tests:

    E+- = hbar_mean +- sqrt(delta^2 + c^2)
    d12 = (c' delta - c delta') / (2 (delta^2 + c^2)),  delta = (h11-h22)/2
"""

import numpy as np


class TwoStateModel:
    n_states = 2
    ndof = 1

    def __init__(self, h11, h22, h12, dh11, dh22, dh12, mass=2000.0):
        self._h = (h11, h22, h12)
        self._dh = (dh11, dh22, dh12)
        self.masses = np.array([float(mass)])
        self.n_capped_nac = 0

    @classmethod
    def single_avoided_crossing(cls, a=0.01, b=1.6, c=0.005, d=1.0, mass=2000.0):
        """Symmetric avoided crossing: tanh diagonal, Gaussian coupling."""
        return cls(
            h11=lambda x: a * np.tanh(b * x),
            h22=lambda x: -a * np.tanh(b * x),
            h12=lambda x: c * np.exp(-d * x**2),
            dh11=lambda x: a * b / np.cosh(b * x) ** 2,
            dh22=lambda x: -a * b / np.cosh(b * x) ** 2,
            dh12=lambda x: -2.0 * d * x * c * np.exp(-d * x**2),
            mass=mass,
        )

    def adiabatic_batch(self, R):
        x = np.asarray(R, dtype=float).reshape(-1)
        h11, h22, h12 = (f(x) for f in self._h)
        dh11, dh22, dh12 = (f(x) for f in self._dh)
        mean, dmean = 0.5 * (h11 + h22), 0.5 * (dh11 + dh22)
        delta, ddelta = 0.5 * (h11 - h22), 0.5 * (dh11 - dh22)
        root = np.sqrt(delta**2 + h12**2)
        e = np.stack([mean - root, mean + root], axis=1)
        droot = np.where(root > 0, (delta * ddelta + h12 * dh12) / np.maximum(root, 1e-300), 0.0)
        g = np.stack([dmean - droot, dmean + droot], axis=1)[:, :, None]
        d12 = (dh12 * delta - h12 * ddelta) / (2.0 * np.maximum(delta**2 + h12**2, 1e-300))
        nac = np.zeros((x.size, 2, 2, 1))
        nac[:, 0, 1, 0] = d12
        nac[:, 1, 0, 0] = -d12
        return e, g, nac
