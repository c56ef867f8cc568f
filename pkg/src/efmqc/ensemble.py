"""End-to-end run orchestration: config, sampling, stepping, observables.

A run is described by a flat ``key = value`` config file.  Trajectories are
advanced by the method stepper from :mod:`efmqc.propagators`; the grid-exact
reference shares the same entry point (``method = exact``) and emits the
same CSV schema so outputs overlay directly.

Determinism contract: every trajectory owns an RNG stream spawned from the
run seed by its global index, and ensemble observables are reduced in fixed
chunks of :data:`CHUNK` trajectories, so the outputs are bitwise identical
for any worker count.  Coupled-trajectory methods always run single-process
(all trajectories interact through the quantum momentum every step).

Observable conventions: ``pop_el`` is the trajectory-averaged coefficient
population; ``pop_frac`` is the fraction of trajectories per active state
for surface-hopping methods and a copy of ``pop_el`` for mean-field methods
and the exact solver (so the column always exists and sums to one).
"""

import json
import subprocess
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import efmqc
from efmqc.constants import AU_PER_FS
from efmqc.models import (
    CavityParams,
    GridSpec,
    LVCModel,
    ShinMetiuParams,
    TwoStateModel,
    build_polaritonic_model,
    parse_lvc_file,
)
from efmqc.propagators import (
    ConfigurationError,
    EnsembleState,
    MethodSpec,
    compose_method,
    electronic_derivative,
    kinetic_energy,
    named_method,
)

CHUNK = 250                 # fixed observable-reduction chunk (determinism)
QUARANTINE_FAIL_FRACTION = 0.01
SCHEMA = "observables-v1"

SIGMA_PCET = 1.0 / (2.0 * np.sqrt(2.85))

METHOD_NAMES = ("Eh", "SH", "SHEDC", "EhXF", "SHXF", "MQCXF",
                "CTEh", "CTSH", "CTMQC", "exact")

# every legal config key with (parser, default); comma lists parse to arrays
def _floats(s):
    return np.array([float(x) for x in str(s).split(",")])


def _bool(s):
    if str(s).lower() in ("true", "1", "yes"):
        return True
    if str(s).lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


CONFIG_SCHEMA = {
    "model": (str, "cavity"),
    "method": (str, "Eh"),
    "n_traj": (int, 100),
    "dt": (float, 0.1),
    "n_steps": (int, 1000),
    "seed": (int, 0),
    "out": (str, "run.csv"),
    "workers": (int, 1),
    "output_stride": (int, 10),
    "n_substeps": (int, 20),
    "sigma": (_floats, None),
    "qmom_variant": (str, None),
    "aux_launch": (str, "same_total_energy"),
    "aux_turning": (str, "fix"),
    "frustrated_policy": (str, "keep"),
    "edc_c": (float, 0.1),
    "init_electronic": (str, "pure_real"),
    "initial_state": (int, None),
    "initial_populations": (_floats, None),
    "phase_offsets": (_floats, None),
    "R0": (_floats, np.array([-4.0])),
    "sigma_R": (_floats, np.array([SIGMA_PCET])),
    "velocity_init": (str, "wigner"),
    "zero_nac": (_bool, False),
    # cavity Shin-Metiu parameters
    "L": (float, 19.0),
    "a_plus": (float, 3.1),
    "a_minus": (float, 4.0),
    "a_f": (float, 5.0),
    "mass": (float, 1836.0),
    "omega": (float, 0.1),
    "lambda": (float, 0.005),
    "n_fock": (int, 4),
    "n_bo": (int, 6),
    "n_states": (int, 5),
    "r_min": (float, -20.0),
    "r_max": (float, 20.0),
    "r_n": (int, 256),
    "R_min": (float, -7.0),
    "R_max": (float, 7.0),
    "R_n": (int, 128),
    "q_n": (int, 64),
    "q_span": (float, 12.0),
    # linear vibronic coupling model
    "lvc_file": (str, None),
    # two-state diagnostics model
    "ts_a": (float, 0.01),
    "ts_b": (float, 1.6),
    "ts_c": (float, 0.005),
    "ts_d": (float, 1.0),
}


@dataclass
class RunConfig:
    """Validated run parameters (one attribute per config key)."""

    values: dict = field(default_factory=dict)

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    @classmethod
    def from_mapping(cls, mapping):
        values = {k: default for k, (_, default) in CONFIG_SCHEMA.items()}
        for key, raw in mapping.items():
            if key not in CONFIG_SCHEMA:
                raise ConfigurationError(f"unknown config key {key!r}")
            parse = CONFIG_SCHEMA[key][0]
            try:
                values[key] = parse(raw) if isinstance(raw, str) else raw
            except ValueError as exc:
                raise ConfigurationError(f"config key {key!r}: {exc}") from exc
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path):
        mapping = {}
        for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{ln}: expected 'key = value'")
            key, _, val = line.partition("=")
            mapping[key.strip()] = val.strip()
        return cls.from_mapping(mapping)

    def validate(self):
        v = self.values
        if v["method"] not in METHOD_NAMES:
            raise ConfigurationError(
                f"unknown method {v['method']!r}; choose from {METHOD_NAMES}")
        if v["n_traj"] < 1:
            raise ConfigurationError("n_traj must be >= 1")
        if v["dt"] <= 0:
            raise ConfigurationError("dt must be positive")
        if v["model"] not in ("cavity", "lvc", "two_state"):
            raise ConfigurationError(f"unknown model {v['model']!r}")
        if v["initial_populations"] is not None:
            s = float(np.sum(v["initial_populations"]))
            if abs(s - 1.0) > 1e-12:
                raise ConfigurationError(
                    f"initial populations sum to {s}, expected 1")
        if v["initial_populations"] is None and v["initial_state"] is None:
            v["initial_state"] = 1 if v["model"] == "cavity" else 0
        for key, allowed in (("aux_launch", ("same_total_energy", "same_kinetic_energy")),
                             ("aux_turning", ("fix", "collapse")),
                             ("frustrated_policy", ("keep", "reverse")),
                             ("init_electronic", ("pure_real", "mixed_statistical")),
                             ("velocity_init", ("wigner", "zero"))):
            if v[key] not in allowed:
                raise ConfigurationError(f"{key} must be one of {allowed}")

    def populations(self, n_states):
        p = self.values["initial_populations"]
        if p is None:
            p = np.zeros(n_states)
            p[self.values["initial_state"]] = 1.0
        if p.size != n_states:
            raise ConfigurationError(
                f"initial populations list has {p.size} entries for "
                f"{n_states} states")
        return p

    def to_jsonable(self):
        out = {}
        for k, val in self.values.items():
            if isinstance(val, np.ndarray):
                out[k] = [float(x) for x in val]
            elif isinstance(val, (np.integer, np.floating)):
                out[k] = val.item()
            else:
                out[k] = val
        return out


# ---------------------------------------------------------------------------
# model construction


def build_model(config: RunConfig):
    """Instantiate the configured adiabatic model."""
    if config.model == "cavity":
        sm = ShinMetiuParams(
            L=config.L, a_plus=config.a_plus, a_minus=config.a_minus,
            a_f=config.a_f, M=config.mass,
            r_grid=GridSpec(config.r_min, config.r_max, config.r_n),
            R_grid=GridSpec(config.R_min, config.R_max, config.R_n))
        cav = CavityParams(omega=config.omega, lam=config.values["lambda"],
                           n_fock=config.n_fock)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            return build_polaritonic_model(sm, cav, n_bo=config.n_bo,
                                           n_states=config.n_states)
    if config.model == "lvc":
        if config.lvc_file is None:
            raise ConfigurationError("model=lvc requires lvc_file")
        return LVCModel(parse_lvc_file(config.lvc_file))
    return TwoStateModel.single_avoided_crossing(
        a=config.ts_a, b=config.ts_b, c=config.ts_c, d=config.ts_d,
        mass=config.mass)


class ModelAdapter:
    """Callable adiabatic evaluator with continuity + quarantine bookkeeping.

    Rows whose position is non-finite or outside a bounded model domain are
    evaluated at a safe substitute position so the batched step completes
    with finite numbers; the offending rows are reported through
    ``quarantine_rows`` and removed by the run loop after the step.
    """

    def __init__(self, model, zero_nac=False):
        self.model = model
        self.zero_nac = zero_nac
        self.ref_vecs = None
        self.quarantine_rows = np.zeros(0, dtype=bool)
        self._domain = model.domain() if hasattr(model, "domain") else None
        self._safe = (0.5 * (self._domain[0] + self._domain[1])
                      if self._domain is not None else 0.0)

    def __call__(self, positions):
        pos = np.asarray(positions, dtype=float)
        bad = ~np.isfinite(pos).all(axis=1)
        if np.any(bad):
            pos = np.where(bad[:, None], self._safe, pos)
        if self._domain is not None:
            lo, hi = self._domain
            bad |= (pos[:, 0] < lo) | (pos[:, 0] > hi)
            pos = np.clip(pos, lo, hi)
        if isinstance(self.model, LVCModel):
            e, g, d, vecs = self.model.adiabatic_batch_vecs(pos, self.ref_vecs)
            self.ref_vecs = vecs
        else:
            e, g, d = self.model.adiabatic_batch(pos)
        bad_out = (~np.isfinite(e).all(axis=1)
                   | ~np.isfinite(g).all(axis=(1, 2))
                   | ~np.isfinite(d).all(axis=(1, 2, 3)))
        if np.any(bad_out):
            bad |= bad_out
            e = np.where(bad_out[:, None], 0.0, e)
            g = np.where(bad_out[:, None, None], 0.0, g)
            d = np.where(bad_out[:, None, None, None], 0.0, d)
        self.quarantine_rows = bad
        if self.zero_nac:
            d = np.zeros_like(d)
        return e, g, d

    def drop(self, keep_mask):
        if self.ref_vecs is not None:
            self.ref_vecs = self.ref_vecs[keep_mask]


# ---------------------------------------------------------------------------
# sampling and initialization


def wigner_sample(R0, sigma_R, masses, n_traj, seed):
    """Minimum-uncertainty Wigner sample of a Gaussian nuclear packet.

    Positions ~ N(R0, sigma_R^2) and momenta ~ N(0, (1/(2 sigma_R))^2) per
    DOF, drawn from per-trajectory streams spawned from ``seed`` (so any
    contiguous subset of trajectories reproduces bitwise).
    """
    streams = trajectory_streams(seed, n_traj)
    pos, vel = _sample_with_streams(R0, sigma_R, masses, streams)
    return pos, vel


def trajectory_streams(seed, n_traj, lo=0):
    children = np.random.SeedSequence(seed).spawn(n_traj)[lo:]
    return [np.random.default_rng(c) for c in children]


def _sample_with_streams(R0, sigma_R, masses, streams):
    R0 = np.atleast_1d(np.asarray(R0, dtype=float))
    sigma_R = np.atleast_1d(np.asarray(sigma_R, dtype=float))
    if np.any(sigma_R <= 0):
        raise ConfigurationError("sigma_R must be positive")
    ndof = R0.size
    pos = np.empty((len(streams), ndof))
    mom = np.empty((len(streams), ndof))
    for i, rng in enumerate(streams):
        pos[i] = R0 + sigma_R * rng.standard_normal(ndof)
        mom[i] = (0.5 / sigma_R) * rng.standard_normal(ndof)
    return pos, mom / np.asarray(masses, dtype=float)


def apportion(populations, n_traj):
    """Largest-remainder split of ``n_traj`` trajectories over the states."""
    quota = np.asarray(populations, dtype=float) * n_traj
    counts = np.floor(quota).astype(int)
    rest = n_traj - int(counts.sum())
    if rest:
        order = np.argsort(-(quota - counts), kind="stable")
        counts[order[:rest]] += 1
    return counts


def init_electronic(config: RunConfig, n_states, streams, traj_offset=0):
    """Initial coefficients and active states for a block of trajectories.

    ``pure_real``: every trajectory gets C_l = sqrt(p_l) (optionally phase
    shifted) and, for hopping methods, an active state drawn from p.
    ``mixed_statistical``: deterministic largest-remainder apportionment by
    global trajectory index; coefficients are basis vectors.
    """
    pops = config.populations(n_states)
    n = len(streams)
    coeffs = np.zeros((n, n_states), dtype=complex)
    active = np.zeros(n, dtype=int)
    if config.init_electronic == "mixed_statistical":
        counts = apportion(pops, config.n_traj)
        assignment = np.repeat(np.arange(n_states), counts)
        block = assignment[traj_offset:traj_offset + n]
        coeffs[np.arange(n), block] = 1.0
        active[:] = block
        for rng in streams:        # keep the stream cursor method-independent
            rng.uniform()
    else:
        amp = np.sqrt(pops)
        if config.phase_offsets is not None:
            amp = amp * np.exp(1j * np.asarray(config.phase_offsets))
        coeffs[:] = amp
        cdf = np.cumsum(pops)
        for i, rng in enumerate(streams):
            active[i] = int(np.searchsorted(cdf, rng.uniform()))
    return coeffs, active


# ---------------------------------------------------------------------------
# observables


def rho_dot_decomposition(state: EnsembleState):
    """Per-trajectory d|C_l|^2/dt and its coupling-term-only part."""
    dc_full = electronic_derivative(state.coeffs, state.energies, state.vdot,
                                    state.xf_rate)
    dc_eh = electronic_derivative(state.coeffs, state.energies, state.vdot)
    total = 2.0 * np.real(np.conj(state.coeffs) * dc_full)
    eh = 2.0 * np.real(np.conj(state.coeffs) * dc_eh)
    return total, eh


COUNTER_KEYS = ("hops", "frustrated_hops", "collapses", "q_saturated",
                "q_underflow", "frozen_aux")


def _block_observables(state, chunk_ids, n_chunks, uses_hopping):
    ns = state.n_states
    pops = state.populations
    out = {
        "pop": np.zeros((n_chunks, ns)),
        "frac": np.zeros((n_chunks, ns)),
        "energy": np.zeros(n_chunks),
        "rho_dot_total": np.zeros((n_chunks, ns)),
        "rho_dot_eh": np.zeros((n_chunks, ns)),
        "norm_err": np.zeros(n_chunks),
        "alive": np.zeros(n_chunks),
    }
    np.add.at(out["pop"], chunk_ids, pops)
    if uses_hopping:
        frac = np.zeros_like(pops)
        frac[np.arange(state.n_traj), state.active] = 1.0
    else:
        frac = pops
    np.add.at(out["frac"], chunk_ids, frac)
    if uses_hopping:
        potential = state.energies[np.arange(state.n_traj), state.active]
    else:
        potential = np.sum(pops * state.energies, axis=1)
    energy = kinetic_energy(state.velocities, state.masses) + potential
    np.add.at(out["energy"], chunk_ids, energy)
    tot, eh = rho_dot_decomposition(state)
    np.add.at(out["rho_dot_total"], chunk_ids, tot)
    np.add.at(out["rho_dot_eh"], chunk_ids, eh)
    np.maximum.at(out["norm_err"], chunk_ids,
                  np.abs(np.sum(pops, axis=1) - 1.0))
    np.add.at(out["alive"], chunk_ids, np.ones(state.n_traj))
    out["counters"] = np.array([state.counters[k] for k in COUNTER_KEYS],
                               dtype=float)
    return out


def _make_stepper(config, adapter, spec):
    sigma = config.sigma
    if sigma is None and spec.uses_xf:
        sigma = config.values["sigma_R"]
    return compose_method(
        spec, adapter, dt=config.dt, sigma=sigma,
        n_substeps=config.n_substeps, launch_mode=config.aux_launch,
        turning_policy=config.aux_turning, edc_c=config.edc_c)


def method_spec(config: RunConfig):
    spec = named_method(config.method, config.qmom_variant or None)
    if config.frustrated_policy != spec.frustrated_policy:
        spec = MethodSpec(spec.nuclear, spec.electronic_xf, spec.edc,
                          config.frustrated_policy)
    return spec


def _run_block(config: RunConfig, lo, hi, model=None):
    """Advance trajectories [lo, hi) and reduce observables per chunk.

    Returns per-stride chunk sums plus quarantine records; the chunk grid is
    global (CHUNK trajectories wide) so merging is independent of how blocks
    are assigned to workers.
    """
    spec = method_spec(config)
    if model is None:
        model = build_model(config)
    adapter = ModelAdapter(model, zero_nac=config.zero_nac)
    streams = trajectory_streams(config.seed, config.n_traj)[lo:hi]
    pos, vel = _sample_with_streams(config.R0, config.sigma_R, model.masses,
                                    streams)
    if config.velocity_init == "zero":
        vel[:] = 0.0
    coeffs, active = init_electronic(config, model.n_states, streams, lo)
    state = EnsembleState(positions=pos, velocities=vel,
                          masses=np.asarray(model.masses, dtype=float),
                          coeffs=coeffs, active=active, rngs=streams)
    stepper = _make_stepper(config, adapter, spec)
    stepper.initialize(state)

    global_ids = np.arange(lo, hi)
    chunk_lo = lo // CHUNK
    n_chunks = (hi - 1) // CHUNK - chunk_lo + 1
    chunk_ids = global_ids // CHUNK - chunk_lo

    rows = [_block_observables(state, chunk_ids, n_chunks, spec.uses_hopping)]
    quarantined = []
    for step_i in range(1, config.n_steps + 1):
        stepper(state)
        bad = adapter.quarantine_rows.copy()
        bad |= ~np.isfinite(state.positions).all(axis=1)
        bad |= ~np.isfinite(state.velocities).all(axis=1)
        bad |= ~np.isfinite(state.coeffs).all(axis=1)
        if np.any(bad):
            keep = ~bad
            quarantined.extend((int(g), step_i) for g in global_ids[bad])
            for name in ("positions", "velocities", "coeffs", "active",
                         "acc_f", "aux_pos", "aux_vel", "aux_etot",
                         "aux_status", "energies", "gradients", "nac",
                         "forces", "vdot", "xf_rate"):
                setattr(state, name, getattr(state, name)[keep])
            state.rngs = [r for r, k in zip(state.rngs, keep) if k]
            global_ids = global_ids[keep]
            chunk_ids = chunk_ids[keep]
            adapter.drop(keep)
            if state.n_traj == 0:
                # pad remaining strides with empty rows (counters stay at
                # their cumulative values, everything else contributes zero)
                empty = {k: np.zeros_like(v) for k, v in rows[-1].items()}
                empty["counters"] = rows[-1]["counters"].copy()
                while len(rows) <= config.n_steps // config.output_stride:
                    rows.append(empty)
                break
        if step_i % config.output_stride == 0:
            rows.append(_block_observables(state, chunk_ids, n_chunks,
                                           spec.uses_hopping))
    return {"chunk_lo": chunk_lo, "n_chunks": n_chunks, "rows": rows,
            "quarantined": quarantined}


def _worker_entry(args):
    cfg_values, lo, hi = args
    return _run_block(RunConfig(cfg_values), lo, hi)


# ---------------------------------------------------------------------------
# output


def _version_string():
    v = f"efmqc {efmqc.__version__}"
    try:
        h = subprocess.run(["git", "rev-parse", "--short", "HEAD"],
                           capture_output=True, text=True, timeout=5,
                           cwd=Path(__file__).parent)
        if h.returncode == 0:
            v += f"+g{h.stdout.strip()}"
    except OSError:
        pass
    return v


def _csv_header(method, n_states):
    cols = ["time_fs"]
    cols += [f"pop_el_{l}" for l in range(n_states)]
    cols += [f"pop_frac_{l}" for l in range(n_states)]
    cols += ["energy", "norm_error"]
    cols += [f"rho_dot_total_{l}" for l in range(n_states)]
    cols += [f"rho_dot_eh_{l}" for l in range(n_states)]
    cols += ["n_hops", "n_frustrated", "n_collapses", "n_capped_q",
             "n_underflow_q", "n_frozen_aux", "n_quarantined"]
    head = (f"# schema = {SCHEMA}\n"
            f"# au_per_fs = {AU_PER_FS!r}\n"
            f"# method = {method}\n"
            f"# n_states = {n_states}\n")
    return head + ",".join(cols)


def _out_paths(config):
    out = Path(config.out)
    if out.suffix != ".csv":
        out = out.with_suffix(".csv")
    return out, out.with_suffix(".manifest.json")


def _write_outputs(config, n_states, times_fs, table, counters, quarantined,
                   extra_invariants=None):
    csv_path, manifest_path = _out_paths(config)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    n_q = np.array([sum(1 for _, s in quarantined
                        if s <= i * config.output_stride)
                    for i in range(len(times_fs))], dtype=float)
    body = np.column_stack([times_fs, table, counters, n_q])
    header = _csv_header(config.method, n_states)
    with open(csv_path, "w") as fh:
        fh.write(header + "\n")
        np.savetxt(fh, body, delimiter=",", fmt="%.12g")

    energies = table[:, 2 * n_states]
    drift = float(abs(energies[-1] - energies[0]) /
                  max(abs(energies[0]), 1e-300))
    failed = len(quarantined) > QUARANTINE_FAIL_FRACTION * config.n_traj
    invariants = {
        "max_norm_error": float(np.max(table[:, 2 * n_states + 1])),
        "ensemble_energy_drift_rel": drift,
        "n_quarantined": len(quarantined),
        "quarantined": [[i, s] for i, s in quarantined[:100]],
        "failed": bool(failed),
    }
    if extra_invariants:
        invariants.update(extra_invariants)
    manifest = {
        "schema": SCHEMA,
        "version": _version_string(),
        "config": config.to_jsonable(),
        "invariants": invariants,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return csv_path, manifest_path, invariants


def _merge_and_write(config, n_states, results):
    n_rows = len(results[0]["rows"])
    total_chunks = (config.n_traj - 1) // CHUNK + 1
    keys = ("pop", "frac", "energy", "rho_dot_total", "rho_dot_eh",
            "norm_err", "alive")
    merged = {k: None for k in keys}
    shapes = {"pop": n_states, "frac": n_states, "rho_dot_total": n_states,
              "rho_dot_eh": n_states, "energy": 0, "norm_err": 0, "alive": 0}
    chunked = {k: np.zeros((n_rows, total_chunks, shapes[k]) if shapes[k]
                           else (n_rows, total_chunks)) for k in keys}
    counters = np.zeros((n_rows, len(COUNTER_KEYS)))
    quarantined = []
    for res in results:
        sl = slice(res["chunk_lo"], res["chunk_lo"] + res["n_chunks"])
        for i, row in enumerate(res["rows"]):
            for k in keys:
                chunked[k][i, sl] += row[k]
            counters[i] += row["counters"]
        quarantined.extend(res["quarantined"])
    quarantined.sort()

    alive = np.sum(chunked["alive"], axis=1)
    alive = np.maximum(alive, 1.0)
    cols = []
    for k in ("pop", "frac"):
        cols.append(np.sum(chunked[k], axis=1) / alive[:, None])
    cols.append((np.sum(chunked["energy"], axis=1) / alive)[:, None])
    cols.append(np.max(chunked["norm_err"], axis=1)[:, None])
    for k in ("rho_dot_total", "rho_dot_eh"):
        cols.append(np.sum(chunked[k], axis=1) / alive[:, None])
    table = np.hstack(cols)
    times_fs = (np.arange(n_rows) * config.output_stride * config.dt
                / AU_PER_FS)
    return _write_outputs(config, n_states, times_fs, table, counters,
                          quarantined)


# ---------------------------------------------------------------------------
# entry points


def run(config: RunConfig):
    """Execute a configured run; returns (csv_path, manifest_path, invariants)."""
    if config.method == "exact":
        return run_exact(config)
    spec = method_spec(config)
    workers = max(1, int(config.workers))
    if spec.coupled:
        workers = 1                       # every trajectory couples to all
    n = config.n_traj
    total_chunks = (n - 1) // CHUNK + 1
    workers = min(workers, total_chunks)
    if workers == 1:
        results = [_run_block(config, 0, n)]
    else:
        bounds = [int(round(b)) * CHUNK for b in
                  np.linspace(0, total_chunks, workers + 1)]
        bounds[-1] = n
        jobs = [(config.values, lo, hi)
                for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_worker_entry, jobs))
    model_states = results[0]["rows"][0]["pop"].shape[1]
    return _merge_and_write(config, model_states, results)


def run_exact(config: RunConfig):
    """Grid-exact reference run sharing the trajectory CSV schema."""
    from efmqc import exact

    if config.model != "cavity":
        raise ConfigurationError("method=exact requires model=cavity")
    sm = ShinMetiuParams(
        L=config.L, a_plus=config.a_plus, a_minus=config.a_minus,
        a_f=config.a_f, M=config.mass,
        r_grid=GridSpec(config.r_min, config.r_max, config.r_n),
        R_grid=GridSpec(config.R_min, config.R_max, config.R_n))
    cav = CavityParams(omega=config.omega, lam=config.values["lambda"],
                       n_fock=config.n_fock)
    qg = exact.default_photon_grid(cav.omega, n=config.q_n,
                                   span_sigmas=config.q_span)
    basis = exact.PolaritonicGridBasis(sm, cav, qg, n_bo=config.n_bo,
                                       n_states=config.n_states)
    m0 = config.initial_state
    if m0 is None:
        m0 = int(np.argmax(config.populations(config.n_states)))
    wf = exact.initialize_wavepacket(basis, float(config.R0[0]),
                                     float(config.sigma_R[0]), m0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        prop = exact.cavity_propagator(basis, config.dt)

    ns = config.n_states
    n_rows = config.n_steps // config.output_stride + 1
    table = np.zeros((n_rows, 4 * ns + 2))
    counters = np.zeros((n_rows, len(COUNTER_KEYS)))
    boundary_warned = False
    pops_rows = np.zeros((n_rows, ns))
    for i in range(n_rows):
        if i:
            prop.step(wf, config.output_stride)
        pops = basis.project(wf)
        pops_rows[i] = pops
        table[i, :ns] = pops
        table[i, ns:2 * ns] = pops
        table[i, 2 * ns] = prop.total_energy(wf)
        table[i, 2 * ns + 1] = abs(wf.norm_squared() - 1.0)
        edge = max(np.max(np.abs(wf.psi[[0, -1]])),
                   np.max(np.abs(wf.psi[:, [0, -1]])),
                   np.max(np.abs(wf.psi[:, :, [0, -1]])))
        if not boundary_warned and edge > 1e-6 * np.max(np.abs(wf.psi)):
            warnings.warn("wavepacket amplitude reached the grid boundary; "
                          "enlarge the grid", stacklevel=2)
            boundary_warned = True
    # rate columns from finite differences of the projected populations
    dt_row = config.output_stride * config.dt
    rate = np.gradient(pops_rows, dt_row, axis=0)
    table[:, 2 * ns + 2:3 * ns + 2] = rate
    table[:, 3 * ns + 2:4 * ns + 2] = rate
    times_fs = (np.arange(n_rows) * config.output_stride * config.dt
                / AU_PER_FS)
    return _write_outputs(config, ns, times_fs, table, counters, [],
                          {"boundary_amplitude_warning": boundary_warned})


def inspect_model(config: RunConfig, n_points=400):
    """Surfaces and couplings on a 1-D grid, as CSV text."""
    model = build_model(config)
    if getattr(model, "ndof", 1) != 1:
        raise ConfigurationError("inspect-model supports 1-D models only")
    if hasattr(model, "domain"):
        lo, hi = model.domain()
    else:
        lo, hi = -10.0, 10.0
    x = np.linspace(lo, hi, n_points)
    e, g, d = model.adiabatic_batch(x[:, None])
    ns = e.shape[1]
    cols = [f"energy_{l}" for l in range(ns)]
    pairs = [(l, k) for l in range(ns) for k in range(l + 1, ns)]
    cols += [f"nac_{l}_{k}" for l, k in pairs]
    lines = [f"# au_per_fs = {AU_PER_FS!r}",
             f"# model = {config.model}",
             "R," + ",".join(cols)]
    nacs = np.stack([d[:, l, k, 0] for l, k in pairs], axis=1) if pairs \
        else np.zeros((x.size, 0))
    body = np.column_stack([x, e, nacs])
    lines += [",".join(f"{v:.12g}" for v in row) for row in body]
    return "\n".join(lines) + "\n"
