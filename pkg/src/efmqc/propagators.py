"""Electronic and nuclear propagators and the method-composition matrix.

The electronic coefficients follow

    dC_l/dt = -i E_l C_l - sum_k (Rdot . d_lk) C_k
              + sum_k [sum_nu Q_nu Df_nu,lk / M_nu] rho_kk C_l

where the last term is the exact-factorization correction, active only when a
quantum-momentum variant is switched on.  Nuclear motion is velocity Verlet
on either the active adiabatic surface (surface hopping), the Ehrenfest
mean-field force, or the Ehrenfest force plus the quantum-momentum force.

All array operations are batched with a leading trajectory axis; the
``MethodStepper`` returned by :func:`compose_method` advances a whole
ensemble one nuclear step, including the auxiliary-trajectory lifecycle and
the stochastic-hop bookkeeping.
"""

from dataclasses import dataclass, field

import numpy as np

from efmqc import kernels, qmom
from efmqc.qmom import (
    DESTROY_THRESHOLD,
    SPAWN_THRESHOLD,
    pairwise_difference,
    qmom_auxiliary,
    qmom_coupled_modified,
    qmom_coupled_original,
    trapezoid_accumulate,
    xf_rate_matrix,
)

NORM_DRIFT_TOL = 1e-6     # per-step electronic norm drift triggering an error
RHO_FLOOR = 1e-12         # active population below which hop rates are zeroed
EDC_C_PARAM = 0.1         # hartree, kinetic-energy offset of the decoherence time
EDC_GAP_FLOOR = 1e-10     # degenerate pairs are not damped
DEFAULT_SUBSTEPS = 20

NUCLEAR_MODES = ("ehrenfest", "ehrenfest_plus_xf", "surface_hopping")
XF_MODES = ("off", "aux_Q0", "coupled_Q0", "coupled_Qm")


class PropagationError(RuntimeError):
    """Non-finite forces or state during nuclear propagation."""


class IntegrationAccuracyError(RuntimeError):
    """Electronic norm drifted beyond tolerance within a single step."""


class ConfigurationError(ValueError):
    """Method specification fields conflict."""


# ---------------------------------------------------------------------------
# method matrix


@dataclass(frozen=True)
class MethodSpec:
    """One cell of the method matrix.

    ``nuclear`` picks the force driving the classical trajectories,
    ``electronic_xf`` the quantum-momentum variant feeding the electronic
    correction term (and the nuclear one for ``ehrenfest_plus_xf``),
    ``edc`` the energy-based decoherence damping, and ``frustrated_policy``
    what happens to the velocity on a rejected hop.
    """

    nuclear: str
    electronic_xf: str = "off"
    edc: str = "off"
    frustrated_policy: str = "keep"

    def __post_init__(self):
        if self.nuclear not in NUCLEAR_MODES:
            raise ConfigurationError(f"nuclear must be one of {NUCLEAR_MODES}, got {self.nuclear!r}")
        if self.electronic_xf not in XF_MODES:
            raise ConfigurationError(f"electronic_xf must be one of {XF_MODES}, got {self.electronic_xf!r}")
        if self.edc not in ("off", "on"):
            raise ConfigurationError(f"edc must be 'off' or 'on', got {self.edc!r}")
        if self.frustrated_policy not in ("keep", "reverse"):
            raise ConfigurationError(f"frustrated_policy must be 'keep' or 'reverse', got {self.frustrated_policy!r}")
        if self.edc == "on" and (self.nuclear != "surface_hopping" or self.electronic_xf != "off"):
            raise ConfigurationError(
                "edc=on conflicts with nuclear/electronic_xf: it requires "
                "nuclear=surface_hopping and electronic_xf=off")
        if self.nuclear == "ehrenfest_plus_xf" and self.electronic_xf == "off":
            raise ConfigurationError(
                "nuclear=ehrenfest_plus_xf conflicts with electronic_xf=off: "
                "the quantum-momentum force needs a quantum-momentum variant")

    @property
    def uses_hopping(self):
        return self.nuclear == "surface_hopping"

    @property
    def uses_xf(self):
        return self.electronic_xf != "off"

    @property
    def aux_based(self):
        return self.electronic_xf == "aux_Q0"

    @property
    def coupled(self):
        return self.electronic_xf in ("coupled_Q0", "coupled_Qm")


METHOD_TABLE = {
    "Eh": MethodSpec("ehrenfest"),
    "SH": MethodSpec("surface_hopping"),
    "SHEDC": MethodSpec("surface_hopping", edc="on"),
    "EhXF": MethodSpec("ehrenfest", "aux_Q0"),
    "SHXF": MethodSpec("surface_hopping", "aux_Q0"),
    "MQCXF": MethodSpec("ehrenfest_plus_xf", "aux_Q0"),
    "CTEh": MethodSpec("ehrenfest", "coupled_Q0"),
    "CTSH": MethodSpec("surface_hopping", "coupled_Q0"),
    "CTMQC": MethodSpec("ehrenfest_plus_xf", "coupled_Qm"),
}


def named_method(name, qmom_variant=None):
    """Look up a named method; coupled methods accept a Q-variant override."""
    if name not in METHOD_TABLE:
        raise ConfigurationError(f"unknown method {name!r}; choose from {sorted(METHOD_TABLE)}")
    spec = METHOD_TABLE[name]
    if qmom_variant is not None:
        if not spec.coupled:
            raise ConfigurationError(f"method {name} does not take a quantum-momentum variant")
        if qmom_variant not in ("coupled_Q0", "coupled_Qm"):
            raise ConfigurationError(f"qmom variant must be coupled_Q0 or coupled_Qm, got {qmom_variant!r}")
        spec = MethodSpec(spec.nuclear, qmom_variant, spec.edc, spec.frustrated_policy)
    return spec


# ---------------------------------------------------------------------------
# trajectory record (single-trajectory view of the batched state)


@dataclass
class TrajectoryState:
    """One classical trajectory with its electronic coefficients."""

    position: np.ndarray
    velocity: np.ndarray
    masses: np.ndarray
    coeffs: np.ndarray
    active_state: int = -1

    def __post_init__(self):
        if np.any(self.masses <= 0):
            raise ValueError("masses must be positive")
        norm = float(np.sum(np.abs(self.coeffs) ** 2))
        if abs(norm - 1.0) > 1e-8:
            raise ValueError(f"electronic norm {norm} deviates from 1 beyond 1e-8")
        if self.active_state >= self.coeffs.shape[0]:
            raise ValueError("active_state outside the tracked states")

    @property
    def populations(self):
        return np.abs(self.coeffs) ** 2


# ---------------------------------------------------------------------------
# electronic propagation


def density_matrix(coeffs):
    """rho_lk = C_l C_k* with a leading trajectory axis."""
    return coeffs[..., :, None] * coeffs[..., None, :].conj()


def electronic_derivative(coeffs, energies, vdot, xf_rate=None):
    """Right-hand side of the electronic equation of motion (batched).

    ``vdot (n, ns, ns)`` is Rdot . d_lk; ``xf_rate (n, ns, ns)`` is the
    scalar pair rate sum_nu Q_nu Df_nu,lk / M_nu (omit for the plain
    Ehrenfest equation).
    """
    pops = np.abs(coeffs) ** 2
    dc = -1j * energies * coeffs
    dc -= np.einsum("nlk,nk->nl", vdot, coeffs)
    if xf_rate is not None:
        dc += np.einsum("nlk,nk->nl", xf_rate, pops) * coeffs
    return dc


def integrate_electronic(coeffs, e0, e1, vd0, vd1, xf0, xf1, dt,
                         n_substeps=DEFAULT_SUBSTEPS):
    """RK4 the coefficients across one nuclear step (inputs interpolated).

    Norm drift is monitored, never silently corrected: a per-trajectory
    drift beyond ``NORM_DRIFT_TOL`` raises :class:`IntegrationAccuracyError`.
    """
    if n_substeps < 1:
        raise ValueError("n_substeps must be >= 1")
    norm0 = np.sum(np.abs(coeffs) ** 2, axis=1)
    out = kernels.rk4_electronic(coeffs, e0, e1, vd0, vd1, xf0, xf1,
                                 float(dt), int(n_substeps))
    drift = np.abs(np.sum(np.abs(out) ** 2, axis=1) - norm0)
    if np.max(drift) > NORM_DRIFT_TOL:
        bad = int(np.argmax(drift))
        raise IntegrationAccuracyError(
            f"electronic norm drifted by {drift[bad]:.2e} in one step "
            f"(trajectory {bad}); reduce the nuclear time step or raise "
            "n_substeps")
    return out


# ---------------------------------------------------------------------------
# forces


def ehrenfest_force(coeffs, energies, gradients, nac):
    """Mean-field force: population-weighted gradients plus the coherence term.

    F_nu = -sum_l rho_ll grad_nu E_l + sum_lk Re(rho_lk) (E_l - E_k) d_nu,lk
    """
    pops = np.abs(coeffs) ** 2
    rho_re = np.real(density_matrix(coeffs))
    de = energies[:, :, None] - energies[:, None, :]
    f = -np.einsum("nl,nlv->nv", pops, gradients)
    f += np.einsum("nlk,nlk,nlkv->nv", rho_re, de, nac)
    return f


def ctmqc_force(eh_force, qmom_result, facc, pops, masses):
    """Ehrenfest force plus the quantum-momentum force.

    F_nu += sum_lk [2 sum_mu Q_mu,lk f_mu,l / M_mu] rho_ll rho_kk Df_nu,lk
    with ``facc (n, ns, ndof)`` the per-state accumulated force.
    """
    inv_m = 1.0 / np.asarray(masses, dtype=float)
    dfacc = pairwise_difference(facc)
    if qmom_result.pair_resolved:
        s = 2.0 * np.einsum("nlkv,nlv,v->nlk", qmom_result.q, facc, inv_m)
    else:
        s = 2.0 * np.einsum("nv,nlv,v->nl", qmom_result.q, facc, inv_m)[:, :, None]
    return eh_force + np.einsum("nlk,nl,nk,nlkv->nv", s, pops, pops, dfacc)


def velocity_verlet_step(positions, velocities, masses, forces, force_fn, dt):
    """One velocity-Verlet step; the force is re-evaluated at the new position.

    Returns ``(positions, velocities, forces)`` at t + dt.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    v_half = velocities + (0.5 * dt / masses) * forces
    new_pos = positions + dt * v_half
    new_forces = np.asarray(force_fn(new_pos), dtype=float)
    if not np.all(np.isfinite(new_forces)):
        bad = int(np.argwhere(~np.all(np.isfinite(new_forces), axis=1))[0, 0])
        raise PropagationError(f"non-finite force on trajectory {bad}")
    new_vel = v_half + (0.5 * dt / masses) * new_forces
    return new_pos, new_vel, new_forces


def kinetic_energy(velocities, masses):
    return 0.5 * np.sum(masses * velocities**2, axis=-1)


# ---------------------------------------------------------------------------
# fewest-switches hopping


@dataclass
class HopResult:
    kind: str                      # no_hop | hop | frustrated
    target: int | None = None
    velocity: np.ndarray | None = None


def fssh_probabilities(coeffs, active, vdot, dt):
    """Fewest-switches rates g_{l->k} = max(0, 2 dt Re(rho_kl vdot_lk) / rho_ll).

    Batched; trajectories whose active population fell under ``RHO_FLOOR``
    get all-zero rates rather than a divide-by-zero.
    """
    n = coeffs.shape[0]
    idx = np.arange(n)
    c_act = coeffs[idx, active]
    pop_act = np.abs(c_act) ** 2
    rho_kl = coeffs * c_act.conj()[:, None]          # rho_kl = C_k C_l*
    g = 2.0 * dt * np.real(rho_kl * vdot[idx, active, :])
    safe = pop_act > RHO_FLOOR
    g = np.where(safe[:, None], g / np.where(safe, pop_act, 1.0)[:, None], 0.0)
    np.maximum(g, 0.0, out=g)
    g[idx, active] = 0.0
    return g


def rescale_along_nac(velocity, masses, direction, delta_e, frustrated_policy="keep"):
    """Solve the energy-conserving momentum rescale along the coupling vector.

    Returns ``(new_velocity, accepted)``; a frustrated attempt keeps or
    reverses the velocity component along ``direction`` per policy.
    """
    a = 0.5 * np.sum(direction**2 / masses)
    b = np.sum(velocity * direction)
    if a <= 0.0:
        disc = -1.0
    else:
        disc = b * b - 4.0 * a * delta_e
    if disc < 0.0:
        if frustrated_policy == "reverse" and a > 0.0:
            return velocity - (b / a) * direction / masses, False
        return velocity.copy(), False
    root = np.sqrt(disc)
    gamma = (b - root) / (2.0 * a) if b >= 0.0 else (b + root) / (2.0 * a)
    return velocity - gamma * direction / masses, True


def fssh_attempt_hop(coeffs, active, vdot, energies, nac, velocity, masses,
                     dt, draw, frustrated_policy="keep"):
    """One stochastic hop decision for a single trajectory.

    ``nac (ns, ns, ndof)``; the drawn uniform number is compared against the
    cumulative fewest-switches rates in state order.
    """
    g = fssh_probabilities(coeffs[None], np.array([active]), vdot[None], dt)[0]
    cum = np.cumsum(g)
    hits = np.nonzero(draw < cum)[0]
    if hits.size == 0:
        return HopResult("no_hop")
    k = int(hits[0])
    new_v, ok = rescale_along_nac(velocity, masses, nac[active, k],
                                  energies[k] - energies[active],
                                  frustrated_policy)
    if not ok:
        return HopResult("frustrated", target=k, velocity=new_v)
    return HopResult("hop", target=k, velocity=new_v)


# ---------------------------------------------------------------------------
# energy-based decoherence damping


def edc_damp(coeffs, energies, active, ekin, dt, c_param=EDC_C_PARAM):
    """Exponentially damp non-active coefficients, restore norm on the active.

    tau_k = (1 + c_param / E_kin) / |E_k - E_active|; degenerate pairs are
    left untouched.  Batched.
    """
    n, ns = coeffs.shape
    idx = np.arange(n)
    gap = np.abs(energies - energies[idx, active][:, None])
    ekin = np.maximum(np.asarray(ekin, dtype=float), 1e-30)
    with np.errstate(divide="ignore"):
        rate = np.where(gap < EDC_GAP_FLOOR, 0.0,
                        gap / (1.0 + c_param / ekin[:, None]))
    factor = np.exp(-dt * rate)
    factor[idx, active] = 1.0
    out = coeffs * factor
    pop_act = np.abs(out[idx, active]) ** 2
    others = np.sum(np.abs(out) ** 2, axis=1) - pop_act
    scale = np.where(pop_act > RHO_FLOOR,
                     np.sqrt(np.maximum(1.0 - others, 0.0) / np.where(pop_act > RHO_FLOOR, pop_act, 1.0)),
                     1.0)
    out[idx, active] *= scale
    return out


# ---------------------------------------------------------------------------
# batched ensemble state and the composed stepper


AUX_NONE, AUX_ALIVE, AUX_FROZEN = 0, 1, 2


@dataclass
class EnsembleState:
    """Structure-of-arrays ensemble advanced in lock step.

    ``active`` is -1 for mean-field nuclear modes.  The auxiliary arrays are
    allocated for every method and simply stay empty when unused.
    """

    positions: np.ndarray          # (n, ndof)
    velocities: np.ndarray         # (n, ndof)
    masses: np.ndarray             # (ndof,)
    coeffs: np.ndarray             # (n, ns) complex
    active: np.ndarray             # (n,) int
    rngs: list                     # per-trajectory Generators
    acc_f: np.ndarray = None       # (n, ns, ndof) accumulated force
    aux_pos: np.ndarray = None     # (n, ns, ndof)
    aux_vel: np.ndarray = None
    aux_etot: np.ndarray = None    # (n, ns)
    aux_status: np.ndarray = None  # (n, ns) uint8
    energies: np.ndarray = None    # adiabatic data at the current time
    gradients: np.ndarray = None
    nac: np.ndarray = None
    forces: np.ndarray = None
    vdot: np.ndarray = None        # (n, ns, ns)
    xf_rate: np.ndarray = None
    time: float = 0.0
    counters: dict = field(default_factory=lambda: {
        "hops": 0, "frustrated_hops": 0, "collapses": 0,
        "q_saturated": 0, "q_underflow": 0, "frozen_aux": 0,
    })

    @property
    def n_traj(self):
        return self.positions.shape[0]

    @property
    def n_states(self):
        return self.coeffs.shape[1]

    @property
    def populations(self):
        return np.abs(self.coeffs) ** 2

    def allocate_extras(self):
        n, ns = self.coeffs.shape
        ndof = self.positions.shape[1]
        self.acc_f = np.zeros((n, ns, ndof))
        self.aux_pos = np.zeros((n, ns, ndof))
        self.aux_vel = np.zeros((n, ns, ndof))
        self.aux_etot = np.zeros((n, ns))
        self.aux_status = np.zeros((n, ns), dtype=np.uint8)
        return self


class MethodStepper:
    """Advances an :class:`EnsembleState` one nuclear step for a given method.

    ``evaluate(positions) -> (energies, gradients, nac)`` is the adiabatic
    model adapter (it owns eigenvector-continuity bookkeeping).  ``sigma``
    is the Gaussian width per nuclear component used by every
    quantum-momentum variant.
    """

    def __init__(self, spec: MethodSpec, evaluate, dt, sigma=None,
                 n_substeps=DEFAULT_SUBSTEPS, launch_mode="same_total_energy",
                 turning_policy="fix", edc_c=EDC_C_PARAM):
        if spec.uses_xf and sigma is None:
            raise ConfigurationError(
                "electronic_xf is enabled but no sigma width was given")
        if launch_mode not in ("same_total_energy", "same_kinetic_energy"):
            raise ConfigurationError(f"unknown launch mode {launch_mode!r}")
        if turning_policy not in ("fix", "collapse"):
            raise ConfigurationError(f"unknown turning policy {turning_policy!r}")
        self.spec = spec
        self.evaluate = evaluate
        self.dt = float(dt)
        self.sigma = None if sigma is None else np.asarray(sigma, dtype=float)
        self.n_substeps = int(n_substeps)
        self.launch_mode = launch_mode
        self.turning_policy = turning_policy
        self.edc_c = edc_c

    # -- setup ------------------------------------------------------------

    def initialize(self, state: EnsembleState):
        state.allocate_extras()
        e, g, d = self.evaluate(state.positions)
        state.energies, state.gradients, state.nac = e, g, d
        state.vdot = np.einsum("nv,nlkv->nlk", state.velocities, d)
        if self.spec.aux_based:
            self._refresh_auxiliaries(state)
        state.xf_rate = self._xf_rate(state)
        state.forces = self._nuclear_force(state)
        return state

    # -- per-method pieces ------------------------------------------------

    def _quantum_momentum(self, state):
        if not self.spec.uses_xf:
            return None
        if self.spec.electronic_xf == "aux_Q0":
            apos = np.where(state.aux_status[:, :, None] == AUX_NONE,
                            state.positions[:, None, :], state.aux_pos)
            res = qmom_auxiliary(state.positions, apos, state.populations,
                                 self.sigma)
        elif self.spec.electronic_xf == "coupled_Q0":
            res = qmom_coupled_original(state.positions, self.sigma)
        else:
            dfacc = pairwise_difference(state.acc_f)
            res = qmom_coupled_modified(state.positions, self.sigma,
                                        state.populations, dfacc)
        state.counters["q_saturated"] += res.saturated_count
        state.counters["q_underflow"] += res.underflow_count
        return res

    def _xf_rate(self, state):
        res = self._quantum_momentum(state)
        if res is None:
            return np.zeros_like(state.vdot)
        self._last_qmom = res
        return xf_rate_matrix(res, pairwise_difference(state.acc_f), state.masses)

    def _nuclear_force(self, state, coeffs=None):
        coeffs = state.coeffs if coeffs is None else coeffs
        if self.spec.nuclear == "surface_hopping":
            return -state.gradients[np.arange(state.n_traj), state.active]
        eh = ehrenfest_force(coeffs, state.energies, state.gradients, state.nac)
        if self.spec.nuclear == "ehrenfest":
            return eh
        res = getattr(self, "_last_qmom", None)
        if res is None:
            res = self._quantum_momentum(state)
        return ctmqc_force(eh, res, state.acc_f, np.abs(coeffs) ** 2, state.masses)

    # -- accumulated force and auxiliaries --------------------------------

    def _accumulate(self, state, grads_old, grads_new):
        pops = state.populations
        if self.spec.aux_based:
            track = state.aux_status != AUX_NONE
            if self.spec.uses_hopping:
                track[np.arange(state.n_traj), state.active] = True
            else:
                track |= pops > SPAWN_THRESHOLD
        else:
            track = pops > DESTROY_THRESHOLD
        upd = trapezoid_accumulate(state.acc_f.copy(), grads_old, grads_new, self.dt)
        state.acc_f = np.where(track[:, :, None], upd, 0.0)

    def _reference_energy(self, state):
        """Energy of the surface the real trajectory rides."""
        if self.spec.uses_hopping:
            return state.energies[np.arange(state.n_traj), state.active]
        return np.sum(state.populations * state.energies, axis=1)

    def _refresh_auxiliaries(self, state):
        """Spawn/destroy auxiliaries from the current populations."""
        pops = state.populations
        dead = (pops < DESTROY_THRESHOLD) & (state.aux_status != AUX_NONE)
        if np.any(dead):
            state.aux_status[dead] = AUX_NONE
            state.acc_f[dead] = 0.0
        want = (pops > SPAWN_THRESHOLD) & (state.aux_status == AUX_NONE)
        if self.spec.uses_hopping:
            want[np.arange(state.n_traj), state.active] = False
        if not np.any(want):
            return
        ekin = kinetic_energy(state.velocities, state.masses)
        e_ref = self._reference_energy(state)
        for a, k in np.argwhere(want):
            de = state.energies[a, k] - e_ref[a]
            if self.launch_mode == "same_kinetic_energy":
                eta, etot, status = 1.0, ekin[a] + state.energies[a, k], AUX_ALIVE
            elif ekin[a] > de and ekin[a] > 0.0:
                eta = np.sqrt(1.0 - de / ekin[a])
                etot, status = ekin[a] + e_ref[a], AUX_ALIVE
            elif self.turning_policy == "collapse":
                self._collapse_state(state, a, k)
                continue
            else:
                eta, etot, status = 0.0, ekin[a] + e_ref[a], AUX_FROZEN
                state.counters["frozen_aux"] += 1
            state.aux_pos[a, k] = state.positions[a]
            state.aux_vel[a, k] = eta * state.velocities[a]
            state.aux_etot[a, k] = etot
            state.aux_status[a, k] = status
            state.acc_f[a, k] = 0.0

    def _advance_auxiliaries(self, state):
        """Drift live auxiliaries and rescale them onto their energy shells."""
        alive = state.aux_status == AUX_ALIVE
        if not np.any(alive):
            return
        state.aux_pos[alive] += state.aux_vel[alive] * self.dt
        ekin_target = state.aux_etot - state.energies
        ekin_now = 0.5 * np.einsum("nkv,v->nk", state.aux_vel**2, state.masses)
        turned = alive & (ekin_target <= 0.0)
        ok = alive & ~turned
        scale = np.sqrt(np.where(ok & (ekin_now > 0.0),
                                 ekin_target / np.where(ekin_now > 0.0, ekin_now, 1.0),
                                 1.0))
        state.aux_vel *= scale[:, :, None]
        if np.any(turned):
            if self.turning_policy == "collapse":
                for a, k in np.argwhere(turned):
                    self._collapse_state(state, a, k)
            else:
                state.aux_vel[turned] = 0.0
                state.aux_status[turned] = AUX_FROZEN
                state.counters["frozen_aux"] += int(np.count_nonzero(turned))

    def _collapse_state(self, state, a, k):
        """Zero one coefficient, renormalize the rest, drop its auxiliary."""
        pop = np.abs(state.coeffs[a, k]) ** 2
        if pop >= 1.0 - RHO_FLOOR:
            return
        state.coeffs[a, k] = 0.0
        state.coeffs[a] /= np.linalg.norm(state.coeffs[a])
        state.aux_status[a, k] = AUX_NONE
        state.acc_f[a, k] = 0.0
        state.counters["collapses"] += 1

    # -- hop handling -----------------------------------------------------

    def _attempt_hops(self, state):
        g = fssh_probabilities(state.coeffs, state.active, state.vdot, self.dt)
        cum = np.cumsum(g, axis=1)
        draws = np.array([rng.uniform() for rng in state.rngs])
        hit = draws[:, None] < cum
        for a in np.nonzero(np.any(hit, axis=1))[0]:
            k = int(np.argmax(hit[a]))
            new_v, ok = rescale_along_nac(
                state.velocities[a], state.masses, state.nac[a, state.active[a], k],
                state.energies[a, k] - state.energies[a, state.active[a]],
                self.spec.frustrated_policy)
            state.velocities[a] = new_v
            if ok:
                state.active[a] = k
                state.counters["hops"] += 1
                if self.spec.aux_based:
                    # the decoherence machinery restarts around the new surface
                    state.aux_status[a] = AUX_NONE
                    state.acc_f[a] = 0.0
            else:
                state.counters["frustrated_hops"] += 1

    # -- the step ---------------------------------------------------------

    def __call__(self, state: EnsembleState):
        dt = self.dt
        masses = state.masses
        e0, vd0, xf0 = state.energies, state.vdot, state.xf_rate
        grads_old = state.gradients

        v_half = state.velocities + (0.5 * dt / masses) * state.forces
        state.positions = state.positions + dt * v_half
        e1, g1, d1 = self.evaluate(state.positions)
        if not (np.all(np.isfinite(e1)) and np.all(np.isfinite(g1))):
            bad = int(np.argwhere(~np.all(np.isfinite(e1), axis=1))[0, 0]) \
                if not np.all(np.isfinite(e1)) else -1
            raise PropagationError(f"non-finite adiabatic data on trajectory {bad}")
        state.energies, state.gradients, state.nac = e1, g1, d1

        self._accumulate(state, grads_old, g1)
        if self.spec.aux_based:
            self._advance_auxiliaries(state)
            self._refresh_auxiliaries(state)
        xf1 = self._xf_rate(state)

        # predictor velocity for the end-of-step coupling term
        f_pred = self._nuclear_force(state)
        v_pred = v_half + (0.5 * dt / masses) * f_pred
        vd1 = np.einsum("nv,nlkv->nlk", v_pred, d1)

        state.coeffs = integrate_electronic(state.coeffs, e0, e1, vd0, vd1,
                                            xf0, xf1, dt, self.n_substeps)

        # corrector: mean-field forces feel the updated coefficients
        if self.spec.nuclear == "surface_hopping":
            new_f = f_pred
        else:
            new_f = self._nuclear_force(state)
        state.velocities = v_half + (0.5 * dt / masses) * new_f
        state.vdot = np.einsum("nv,nlkv->nlk", state.velocities, d1)

        if self.spec.uses_hopping:
            self._attempt_hops(state)
            # a hop changes the occupied surface: refresh the force
            new_f = self._nuclear_force(state)
            state.vdot = np.einsum("nv,nlkv->nlk", state.velocities, d1)
        if self.spec.edc == "on":
            ekin = kinetic_energy(state.velocities, masses)
            state.coeffs = edc_damp(state.coeffs, e1, state.active, ekin, dt,
                                    self.edc_c)
        if self.spec.aux_based:
            self._refresh_auxiliaries(state)

        state.forces = new_f
        state.xf_rate = self._xf_rate(state) if self.spec.uses_xf else xf1
        state.time += dt
        return state


def compose_method(spec: MethodSpec, evaluate=None, **kwargs):
    """Build the step function for a method-matrix cell.

    With ``evaluate`` given, returns a ready :class:`MethodStepper`;
    without it, validates the spec and returns a factory expecting the
    model adapter (used by the ensemble runner).
    """
    if not isinstance(spec, MethodSpec):
        raise ConfigurationError("compose_method expects a MethodSpec")
    if evaluate is None:
        return lambda ev, **kw: MethodStepper(spec, ev, **{**kwargs, **kw})
    return MethodStepper(spec, evaluate, **kwargs)
