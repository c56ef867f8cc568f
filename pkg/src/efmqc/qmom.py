"""Nuclear quantum momentum in its three flavors, plus supporting state.

* coupled / original: the ensemble's nuclear density is reconstructed as a
  sum of Gaussians on the trajectory positions, and the quantum momentum is
  the log-derivative of that density -- equivalently the displacement from
  the Gaussian-weighted neighbor mean.
* coupled / modified: the slope is kept but the origin of each state pair is
  moved to the unique point that makes the net ensemble population transfer
  of that pair vanish identically (the exact condition the original variant
  can violate).
* auxiliary: an independent trajectory carries one virtual companion per
  populated non-active state; the quantum momentum is the displacement from
  the population-weighted mean of their positions.

The auxiliary-trajectory lifecycle (launch energy, per-step isotropic
velocity rescaling, and the fix/collapse handling of classically forbidden
steps) lives here too, as does the time-integrated adiabatic force whose
pairwise differences enter every correction term.
"""

from dataclasses import dataclass, field

import numpy as np

from efmqc import kernels

Q_MAX = 1e3            # cap on |Q| components (1/bohr); events are counted
QM_DENOM_EPS = 1e-12   # pair weight below which the modified variant zeroes out
SPAWN_THRESHOLD = 0.01
DESTROY_THRESHOLD = 1e-5


@dataclass
class QMomResult:
    """Quantum momentum per trajectory.

    ``q`` has shape ``(n_traj, ndof)`` when one value serves every state pair
    (original and auxiliary variants) or ``(n_traj, ns, ns, ndof)`` when it is
    pair-resolved (modified variant).  ``pair_centers`` holds the shifted
    origins of the modified variant.
    """

    q: np.ndarray
    pair_centers: np.ndarray | None = None
    saturated_count: int = 0
    underflow_count: int = 0

    @property
    def pair_resolved(self):
        return self.q.ndim == 4


def _cap(q, q_max):
    over = np.abs(q) > q_max
    n = int(np.count_nonzero(over))
    if n:
        np.clip(q, -q_max, q_max, out=q)
    return n


def qmom_coupled_original(positions, sigma, q_max=Q_MAX):
    """Log-derivative of the Gaussian-reconstructed ensemble density.

    ``positions (n, ndof)``, ``sigma (ndof,)``.  Evaluated at every
    trajectory position: Q = (R - Rbar) / (2 sigma^2) with Rbar the
    Gaussian-weighted neighbor mean.
    """
    positions = np.asarray(positions, dtype=float)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), positions.shape[1:]).copy()
    centers, n_under = kernels.qmom0_centers(positions, sigma)
    q = (positions - centers) / (2.0 * sigma**2)
    return QMomResult(q=q, saturated_count=_cap(q, q_max), underflow_count=n_under)


def qmom_coupled_modified(positions, sigma, pops, dfacc, q_max=Q_MAX):
    """Pair-resolved quantum momentum enforcing zero net population transfer.

    The origin of pair (l, k) along component nu is the weighted mean of the
    trajectory positions with weights rho_ll rho_kk dfacc_lk; by construction
    sum_alpha Q_lk dfacc_lk rho_ll rho_kk = 0 for every pair and component.
    Pairs whose weight sum is below ``QM_DENOM_EPS`` (fully decohered or
    inactive) contribute zero.

    ``pops (n, ns)``, ``dfacc (n, ns, ns, ndof)`` = pairwise accumulated-force
    differences.
    """
    positions = np.asarray(positions, dtype=float)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), positions.shape[1:])
    w = pops[:, :, None, None] * pops[:, None, :, None] * dfacc
    denom = np.sum(w, axis=0)                            # (ns, ns, ndof)
    num = np.sum(w * positions[:, None, None, :], axis=0)
    ok = np.abs(denom) >= QM_DENOM_EPS
    centers = np.where(ok, num / np.where(ok, denom, 1.0), 0.0)
    q = (positions[:, None, None, :] - centers[None]) / (2.0 * sigma**2)
    q[:, ~ok] = 0.0
    return QMomResult(q=q, pair_centers=centers,
                      saturated_count=_cap(q, q_max))


def qmom_auxiliary(positions, aux_positions, pops, sigma, q_max=Q_MAX):
    """Auxiliary-trajectory quantum momentum (batch form).

    ``aux_positions (n, ns, ndof)`` holds the position associated with each
    state: the real trajectory's for the active state (and for any state with
    no live auxiliary), the auxiliary's otherwise.  Requires the populations
    to sum to one over those states.
    """
    positions = np.asarray(positions, dtype=float)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), positions.shape[1:])
    center = np.einsum("nk,nkv->nv", pops, aux_positions)
    # displacement form, same slope and sign convention as the coupled
    # variant: the correction decoheres toward the active state's component
    q = (positions - center) / (2.0 * sigma**2)
    return QMomResult(q=q, saturated_count=_cap(q, q_max))


def xf_rate_matrix(qmom: QMomResult, dfacc, masses):
    """Scalar pair rates sum_nu Q_lk,nu dfacc_lk,nu / M_nu, shape (n, ns, ns)."""
    inv_m = 1.0 / np.asarray(masses, dtype=float)
    if qmom.pair_resolved:
        return np.einsum("nlkv,nlkv,v->nlk", qmom.q, dfacc, inv_m)
    return np.einsum("nv,nlkv,v->nlk", qmom.q, dfacc, inv_m)


def pairwise_difference(f):
    """dfacc[..., l, k, nu] = f[..., l, nu] - f[..., k, nu]."""
    return f[..., :, None, :] - f[..., None, :, :]


# ---------------------------------------------------------------------------
# auxiliary trajectories


@dataclass
class AuxTrajectory:
    """Virtual companion riding a populated non-active surface."""

    state_index: int
    position: np.ndarray
    velocity: np.ndarray
    total_energy: float
    status: str = "alive"   # alive | frozen


def spawn_auxiliary(traj, k, launch_mode, energies, turning_policy="fix"):
    """Launch an auxiliary on surface ``k`` at the real trajectory's position.

    ``launch_mode``:

    * ``same_total_energy`` -- isotropic rescale eta = sqrt(1 - dE/Ekin) so the
      auxiliary carries the real trajectory's total energy.  If the kinetic
      energy cannot cover the gap the launch is classically forbidden and the
      turning policy applies: ``fix`` spawns frozen at zero velocity,
      ``collapse`` returns None (caller zeroes the state's coefficient).
    * ``same_kinetic_energy`` -- velocity copied verbatim; total energies then
      differ between auxiliaries.
    """
    masses = np.asarray(traj.masses, dtype=float)
    ekin = 0.5 * np.sum(masses * np.asarray(traj.velocity) ** 2)
    de = energies[k] - energies[traj.active_state]
    if launch_mode == "same_kinetic_energy":
        vel = np.array(traj.velocity, dtype=float)
        return AuxTrajectory(k, np.array(traj.position, dtype=float), vel,
                             total_energy=ekin + energies[k])
    if launch_mode != "same_total_energy":
        raise ValueError(f"unknown launch mode {launch_mode!r}")
    total = ekin + energies[traj.active_state]
    if ekin < de or ekin == 0.0:
        if turning_policy == "collapse":
            return None
        return AuxTrajectory(k, np.array(traj.position, dtype=float),
                             np.zeros_like(masses), total_energy=total,
                             status="frozen")
    eta = np.sqrt(1.0 - de / ekin)
    return AuxTrajectory(k, np.array(traj.position, dtype=float),
                         eta * np.asarray(traj.velocity, dtype=float),
                         total_energy=total)


def step_auxiliary(aux: AuxTrajectory, energy_new, masses, dt,
                   turning_policy="fix"):
    """Uniform-velocity drift plus isotropic rescale onto the energy shell.

    Returns ``"alive"``, ``"frozen"`` or ``"collapse"``; the caller owns the
    coefficient bookkeeping of the collapse branch.
    """
    if aux.status == "frozen":
        return "frozen"
    masses = np.asarray(masses, dtype=float)
    aux.position = aux.position + aux.velocity * dt
    ekin_target = aux.total_energy - energy_new
    ekin_now = 0.5 * np.sum(masses * aux.velocity**2)
    if ekin_target <= 0.0:
        if turning_policy == "collapse":
            return "collapse"
        aux.velocity = np.zeros_like(aux.velocity)
        aux.status = "frozen"
        return "frozen"
    if ekin_now > 0.0:
        aux.velocity = aux.velocity * np.sqrt(ekin_target / ekin_now)
    return "alive"


# ---------------------------------------------------------------------------
# accumulated adiabatic force


@dataclass
class AccumulatedForce:
    """Time-integrated adiabatic force per state (momentum units)."""

    f: np.ndarray                                   # (ns, ndof)
    mode: str = "integrated"                        # or momentum_difference
    prev_gradients: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def zeros(cls, n_states, ndof, mode="integrated"):
        return cls(f=np.zeros((n_states, ndof)), mode=mode)

    def reset_state(self, l):
        self.f[l] = 0.0


def trapezoid_accumulate(f, grad_prev, grad_new, dt):
    """One trapezoidal step of f_l += -integral(grad E_l) dt, in place."""
    f -= 0.5 * (grad_prev + grad_new) * dt
    return f


def accumulate_force(acc: AccumulatedForce, gradients, dt):
    """Advance the integrated accumulated force by one step.

    ``gradients (ns, ndof)`` at the new time; the previous step's gradients
    are kept on the record (first call integrates from the same value, i.e.
    contributes a plain Euler step).
    """
    if acc.mode != "integrated":
        raise ValueError("accumulate_force only applies to the integrated mode")
    prev = acc.prev_gradients if acc.prev_gradients is not None else gradients
    trapezoid_accumulate(acc.f, prev, gradients, dt)
    acc.prev_gradients = np.array(gradients, dtype=float)
    return acc
