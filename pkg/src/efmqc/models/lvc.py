"""Linear vibronic coupling model in dimensionless normal-mode coordinates.

Diabatic matrix

    W_nn(Q) = E0_n + sum_i omega_i Q_i^2 / 2 + sum_i kappa_{n,i} Q_i
    W_nm(Q) = sum_i lam_{n,m,i} Q_i          (n != m)

Adiabatic quantities come from direct diagonalization; gradients and NAC
vectors from Hellmann-Feynman matrix elements of dW/dQ_i, which are cheap
and exact here.  With dimensionless coordinates the kinetic energy is
sum_i omega_i P_i^2 / 2, i.e. the effective mass of mode i is 1/omega_i.
"""

from dataclasses import dataclass

import numpy as np

from efmqc.models.adiabatic import DEGENERACY_GAP, NAC_CAP, phase_align


@dataclass(frozen=True)
class LVCParams:
    omegas: np.ndarray  # (n_modes,)
    E0: np.ndarray      # (n_states,)
    kappa: np.ndarray   # (n_states, n_modes)
    lam: np.ndarray     # (n_states, n_states, n_modes), symmetric in (n, m)

    def __post_init__(self):
        omegas = np.asarray(self.omegas, dtype=float)
        if np.any(omegas <= 0):
            raise ValueError("mode frequencies must be positive")
        ns, nm = self.n_states, self.n_modes
        if np.shape(self.kappa) != (ns, nm) or np.shape(self.lam) != (ns, ns, nm):
            raise ValueError("kappa/lambda shapes inconsistent with state/mode counts")
        if not np.allclose(self.lam, np.swapaxes(self.lam, 0, 1)):
            raise ValueError("interstate couplings must be symmetric in the state pair")

    @property
    def n_modes(self):
        return len(self.omegas)

    @property
    def n_states(self):
        return len(self.E0)


def parse_lvc_file(path):
    """Read LVC parameters from the plain-text section format.

    Sections ``[frequencies]`` (``i value``), ``[energies]`` (``n value``),
    ``[kappa]`` (``n i value``) and ``[lambda]`` (``n m i value``), indices
    0-based, one entry per line, ``#`` comments allowed.
    """
    entries = {"frequencies": [], "energies": [], "kappa": [], "lambda": []}
    section = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("["):
                section = line.strip("[]").strip().lower()
                if section not in entries:
                    raise ValueError(f"{path}:{lineno}: unknown section [{section}]")
                continue
            if section is None:
                raise ValueError(f"{path}:{lineno}: entry before any section header")
            parts = line.split()
            try:
                idx = [int(p) for p in parts[:-1]]
                val = float(parts[-1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed entry {line!r}") from exc
            entries[section].append((idx, val))

    n_modes = 1 + max(i[0] for i, _ in entries["frequencies"])
    n_states = 1 + max(i[0] for i, _ in entries["energies"])
    omegas = np.zeros(n_modes)
    e0 = np.zeros(n_states)
    kappa = np.zeros((n_states, n_modes))
    lam = np.zeros((n_states, n_states, n_modes))
    for (i,), v in entries["frequencies"]:
        omegas[i] = v
    for (n,), v in entries["energies"]:
        e0[n] = v
    for (n, i), v in entries["kappa"]:
        kappa[n, i] = v
    for (n, m, i), v in entries["lambda"]:
        lam[n, m, i] = lam[m, n, i] = v
    return LVCParams(omegas=omegas, E0=e0, kappa=kappa, lam=lam)


class LVCModel:
    def __init__(self, params: LVCParams):
        self.params = params
        self.n_states = params.n_states
        self.ndof = params.n_modes
        self.masses = 1.0 / np.asarray(params.omegas, dtype=float)
        self.n_capped_nac = 0

    def diabatic(self, Q):
        """Diabatic matrix W(Q) for a batch ``Q (n, n_modes)``."""
        p = self.params
        Q = np.asarray(Q, dtype=float)
        ns = p.n_states
        w = np.einsum("nmi,ci->cnm", np.asarray(p.lam, dtype=float), Q)
        harm = 0.5 * np.sum(np.asarray(p.omegas) * Q**2, axis=1)
        diag = (np.asarray(p.E0)[None, :] + harm[:, None]
                + Q @ np.asarray(p.kappa, dtype=float).T)
        w[:, np.arange(ns), np.arange(ns)] = diag
        return w

    def diabatic_gradient(self, Q):
        """dW/dQ_i for a batch; shape (n, ns, ns, n_modes)."""
        p = self.params
        Q = np.asarray(Q, dtype=float)
        ns, nm = p.n_states, p.n_modes
        dw = np.broadcast_to(
            np.asarray(p.lam, dtype=float)[None], (Q.shape[0], ns, ns, nm)
        ).copy()
        diag = np.asarray(p.omegas)[None, None, :] * Q[:, None, :] \
            + np.asarray(p.kappa, dtype=float)[None, :, :]
        dw[:, np.arange(ns), np.arange(ns), :] = diag
        return dw

    def adiabatic_batch(self, Q, ref_vecs=None):
        e, g, d, _ = self.adiabatic_batch_vecs(Q, ref_vecs)
        return e, g, d

    def adiabatic_batch_vecs(self, Q, ref_vecs=None):
        """Adiabatic data plus eigenvectors (for phase continuity along trajectories)."""
        Q = np.asarray(Q, dtype=float)
        w = self.diabatic(Q)
        dw = self.diabatic_gradient(Q)
        e, vecs = np.linalg.eigh(w)
        if ref_vecs is not None:
            ov = np.einsum("cil,cik->clk", ref_vecs, vecs)
            diag = ov[:, np.arange(self.n_states), np.arange(self.n_states)]
            vecs = vecs * np.where(diag < 0.0, -1.0, 1.0)[:, None, :]
        # <l| dW |k> via Hellmann-Feynman
        m = np.einsum("cil,cijv,cjk->clkv", vecs, dw, vecs)
        ns = self.n_states
        g = m[:, np.arange(ns), np.arange(ns), :]
        gap = e[:, None, :] - e[:, :, None]       # gap[c, l, k] = E_k - E_l
        degenerate = np.abs(gap) < DEGENERACY_GAP
        # near-degenerate pairs give unreliable couplings: floor the gap, then
        # cap the magnitude so conical intersections never emit infinities
        safe = np.where(degenerate, np.where(gap < 0, -DEGENERACY_GAP, DEGENERACY_GAP), gap)
        d = m / safe[..., None]
        d[:, np.arange(ns), np.arange(ns), :] = 0.0
        over = np.abs(d) > NAC_CAP
        if np.any(over):
            self.n_capped_nac += int(np.count_nonzero(over))
            np.clip(d, -NAC_CAP, NAC_CAP, out=d)
        return e, g, d, vecs
