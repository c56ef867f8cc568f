import warnings

import numpy as np
import pytest

from efmqc.models import CavityParams, build_polaritonic_model
from efmqc.models.cavity import fock_q_matrix
from tests.test_shin_metiu import pcet_params, symmetric_params


@pytest.fixture(scope="module")
def pcet_model():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_polaritonic_model(
            pcet_params(nr=384, nR=128), CavityParams(omega=0.1, lam=0.005),
            n_bo=6, n_states=5)


@pytest.fixture(scope="module")
def symmetric_model():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_polaritonic_model(
            symmetric_params(nr=384, nR=128), CavityParams(omega=0.17, lam=0.01),
            n_bo=6, n_states=6)


def test_fock_q_matrix():
    omega = 0.25
    q = fock_q_matrix(omega, 3)
    ref = np.sqrt(1.0 / (2 * omega)) * np.array(
        [[0, 1, 0], [1, 0, np.sqrt(2)], [0, np.sqrt(2), 0]])
    np.testing.assert_allclose(q, ref, atol=1e-15)


def test_lambda_zero_decoupled_spectrum():
    sm = pcet_params(nr=256, nR=64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = build_polaritonic_model(sm, CavityParams(omega=0.1, lam=0.0),
                                    n_bo=4, n_states=5)
    expected = np.sort(
        (m.bo_energies[:, :, None]
         + 0.1 * (np.arange(4) + 0.5)[None, None, :]).reshape(len(m.R_nodes), -1),
        axis=1)
    assert np.max(np.abs(m.pol_energies - expected)) < 1e-10


def test_pcet_avoided_crossings(pcet_model):
    m = pcet_model
    R = m.R_nodes
    # strong 3rd-state coupling at the launch region near R = -4
    d12 = np.abs(m.nac_nodes[:, 1, 2])
    assert abs(R[np.argmax(d12)] + 3.9) < 0.3
    # states 3/4 (0-based 2/3) avoided crossing near R = -2 with a large NAC
    d23 = np.abs(m.nac_nodes[:, 2, 3])
    j = np.argmax(d23)
    assert abs(R[j] + 2.0) < 0.5
    assert d23[j] > 2.5
    # lowest-pair crossing with large NAC near |R| = 2
    d01 = np.abs(m.nac_nodes[:, 0, 1])
    j = np.argmax(d01)
    assert abs(abs(R[j]) - 2.0) < 0.5
    assert d01[j] > 1.5


def test_symmetric_three_way_crossing(symmetric_model):
    m = symmetric_model
    R = m.R_nodes
    window = np.abs(R) < 2.0
    for l, k in [(2, 3), (3, 4), (2, 4)]:
        gap = (m.pol_energies[:, k] - m.pol_energies[:, l])[window]
        loc = R[window][np.argmin(gap)]
        assert abs(loc) < 0.5, f"pair ({l},{k}) gap minimum at R={loc}"


def test_nac_antisymmetry_zero_diagonal(pcet_model):
    x = np.linspace(-7.5, 7.5, 40)[:, None]
    _, _, nac = pcet_model.adiabatic_batch(x)
    assert np.max(np.abs(nac + np.swapaxes(nac, 1, 2))) < 1e-10
    ns = pcet_model.n_states
    assert np.max(np.abs(nac[:, np.arange(ns), np.arange(ns)])) == 0.0


def test_nac_matches_hellmann_feynman(pcet_model):
    """Overlap-derived couplings against <l|dV/dR|k> / (E_k - E_l).

    The oracle works in the full (r, q) grid representation, independent of
    the finite-difference overlap scheme used by the model builder.
    """
    from efmqc.exact import (PolaritonicGridBasis, cavity_grid_potential,
                             default_photon_grid)

    m = pcet_model
    qg = default_photon_grid(m.cav.omega, 64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        basis = PolaritonicGridBasis(m.sm, m.cav, qg, n_bo=m.n_bo,
                                     n_states=m.n_states)
    r = m.sm.r_grid.points()
    q = qg.points()
    dr = m.sm.r_grid.spacing
    dq = qg.spacing
    h = 1e-5
    for R_target in (-4.2, -3.9, -1.84, 1.9):
        j = int(np.argmin(np.abs(basis.R_points - R_target)))
        Rj = basis.R_points[j]
        dv = (cavity_grid_potential(m.sm, m.cav, np.array([Rj + h]), r, q)[0]
              - cavity_grid_potential(m.sm, m.cav, np.array([Rj - h]), r, q)[0]
              ) / (2 * h)
        _, _, nac = m.adiabatic_batch(np.array([[Rj]]))
        for l, k in ((0, 1), (1, 2), (2, 3)):
            fl = basis.state_slice(l, j)
            fk = basis.state_slice(k, j)
            de = basis.pol_energies[j, k] - basis.pol_energies[j, l]
            hf = float(np.sum(fl * dv * fk)) * dr * dq / de
            assert abs(nac[0, l, k, 0] - hf) < 0.02 * max(1.0, abs(hf)), \
                f"R={Rj}, pair ({l},{k}): model {nac[0, l, k, 0]} vs oracle {hf}"


def test_gradients_match_finite_differences(pcet_model):
    rng = np.random.default_rng(7)
    x = rng.uniform(-7.0, 7.0, size=(100, 1))
    e, g, _ = pcet_model.adiabatic_batch(x)
    h = 1e-5
    ep, _, _ = pcet_model.adiabatic_batch(x + h)
    em, _, _ = pcet_model.adiabatic_batch(x - h)
    fd = (ep - em) / (2 * h)
    scale = np.maximum(np.abs(fd), 1e-10)
    assert np.max(np.abs(g[:, :, 0] - fd) / scale) < 1e-5


def test_eigenvector_continuity(symmetric_model):
    v = symmetric_model.pol_vecs
    overlaps = np.einsum("jim,jim->jm", v[:-1], v[1:])
    assert np.min(overlaps) > 0.0


def test_energies_sorted(pcet_model):
    e, _, _ = pcet_model.adiabatic_batch(np.linspace(-7, 7, 50)[:, None])
    assert np.all(np.diff(e, axis=1) > -1e-12)


def test_truncation_warning_small_fock_space():
    sm = symmetric_params(nr=256, nR=64)
    with pytest.warns(UserWarning, match="truncation"):
        build_polaritonic_model(sm, CavityParams(omega=0.17, lam=0.01, n_fock=2),
                                n_bo=6, n_states=6)


def test_tracked_state_budget_enforced():
    with pytest.raises(ValueError):
        build_polaritonic_model(pcet_params(),
                                CavityParams(omega=0.1, lam=0.005, n_fock=2),
                                n_bo=2, n_states=3)
