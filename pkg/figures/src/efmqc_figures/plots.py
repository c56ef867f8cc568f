"""Rendering for the four figure kinds.

Line conventions: solid lines carry the "where the trajectories are"
measures (fraction of trajectories, exact populations), dashed lines the
electronic (coefficient) populations, dotted lines derived quantities such
as couplings; one color per state, shared across all inputs.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from efmqc_figures.spec import (
    FigureSpec,
    ValidationError,
    check_same_schema,
    load_table,
)

STATE_COLORS = plt.rcParams["axes.prop_cycle"].by_key()["color"]


def _color(l):
    return STATE_COLORS[l % len(STATE_COLORS)]


def _states(spec, table):
    available = list(range(table.n_states))
    if spec.states is None:
        return available
    bad = [s for s in spec.states if s not in available]
    if bad:
        raise ValidationError(
            f"{table.path}: states {bad} not present "
            f"(columns cover states {available})")
    return spec.states


def _load_inputs(spec):
    tables = [load_table(p, label) for p, label in spec.inputs]
    check_same_schema(tables)
    for t in tables:
        t.au_per_fs            # header contract: conversion present, not recomputed
    return tables


def plot_populations(spec: FigureSpec):
    tables = _load_inputs(spec)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for t in tables:
        time = t.col("time_fs")
        mask = spec.window(time)
        for l in _states(spec, t):
            el = t.col(f"pop_el_{l}")
            frac = t.col(f"pop_frac_{l}")
            if t.method == "exact":
                ax.plot(time[mask], el[mask], "-", color=_color(l),
                        label=f"{t.label} state {l}")
                continue
            ax.plot(time[mask], el[mask], "--", color=_color(l),
                    label=f"{t.label} state {l} (electronic)")
            if np.any(frac != el):
                ax.plot(time[mask], frac[mask], "-", color=_color(l),
                        label=f"{t.label} state {l} (fraction)")
    ax.set_xlabel("time (fs)")
    ax.set_ylabel("population")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=7)
    return fig


def plot_consistency(spec: FigureSpec):
    (t,) = _load_inputs(spec)
    time = t.col("time_fs")
    mask = spec.window(time)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for l in _states(spec, t):
        ax.plot(time[mask], t.col(f"pop_el_{l}")[mask], "--", color=_color(l),
                label=f"state {l} electronic")
        ax.plot(time[mask], t.col(f"pop_frac_{l}")[mask], "-", color=_color(l),
                label=f"state {l} fraction")
    ax.set_xlabel("time (fs)")
    ax.set_ylabel("population")
    ax.set_title(f"{t.label}: electronic vs fraction-of-trajectories")
    ax.legend(fontsize=7)
    return fig


def plot_rho_dot(spec: FigureSpec):
    tables = _load_inputs(spec)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for t in tables:
        time = t.col("time_fs")
        mask = spec.window(time)
        for l in _states(spec, t):
            ax.plot(time[mask], t.col(f"rho_dot_total_{l}")[mask], "-",
                    color=_color(l), label=f"{t.label} state {l} total")
            ax.plot(time[mask], t.col(f"rho_dot_eh_{l}")[mask], "--",
                    color=_color(l), label=f"{t.label} state {l} coupling term")
    ax.set_xlabel("time (fs)")
    ax.set_ylabel(r"d$\rho_{ll}$/dt (1/a.u.)")
    ax.legend(fontsize=7)
    return fig


def plot_surfaces(spec: FigureSpec):
    tables = [load_table(p, label) for p, label in spec.inputs]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax2 = None
    for t in tables:
        if "R" not in t.columns:
            raise ValidationError(
                f"{t.path}: surfaces figures need a model-inspection CSV "
                "(columns R, energy_*, nac_*)")
        R = t.col("R")
        energy_cols = [c for c in t.columns if c.startswith("energy_")]
        keep = spec.states or [int(c.split("_")[1]) for c in energy_cols]
        for c in energy_cols:
            l = int(c.split("_")[1])
            if l in keep:
                ax.plot(R, t.col(c), "-", color=_color(l),
                        label=f"{t.label} E{l}")
        nac_cols = [c for c in t.columns if c.startswith("nac_")]
        for c in nac_cols:
            _, l, k = c.split("_")
            if int(l) in keep and int(k) in keep:
                if ax2 is None:
                    ax2 = ax.twinx()
                    ax2.set_ylabel("|NAC| (1/bohr)")
                ax2.plot(R, np.abs(t.col(c)), ":", linewidth=0.9,
                         label=f"|d{l}{k}|")
    ax.set_xlabel("R (bohr)")
    ax.set_ylabel("energy (hartree)")
    ax.legend(fontsize=7, loc="upper left")
    if ax2 is not None:
        ax2.legend(fontsize=7, loc="upper right")
    return fig


_RENDERERS = {
    "populations": plot_populations,
    "surfaces": plot_surfaces,
    "rho_dot": plot_rho_dot,
    "consistency": plot_consistency,
}


def render(spec: FigureSpec):
    """Render one figure spec to its output path; returns the path.

    Validation happens before anything is written: on error no file is
    produced.
    """
    fig = _RENDERERS[spec.kind](spec)
    try:
        spec.out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(spec.out, dpi=150, bbox_inches="tight")
    finally:
        plt.close(fig)
    return spec.out
