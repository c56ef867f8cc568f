import numpy as np
import pytest

from efmqc.exact import (
    GridResolutionError,
    GridWavefunction,
    PolaritonicGridBasis,
    SplitOperatorPropagator,
    cavity_grid_potential,
    cavity_propagator,
    default_photon_grid,
    initialize_wavepacket,
    oscillator_eigenfunctions,
)
from efmqc.models.cavity import CavityParams, fock_q_matrix
from efmqc.models.shin_metiu import GridSpec, ShinMetiuParams, shin_metiu_bo_solve


def _wave_1d(grid, fn, mass=1.0):
    x = grid.points()
    wf = GridWavefunction(fn(x).astype(complex), (grid,), (mass,))
    return wf.normalize()


class TestSplitOperator1D:
    def test_free_packet_spreading(self):
        grid = GridSpec(-40.0, 40.0, 256)
        sigma0, mass, t_final = 2.0, 1.0, 10.0
        wf = _wave_1d(grid, lambda x: np.exp(-x**2 / (4 * sigma0**2)))
        prop = SplitOperatorPropagator(np.zeros(grid.n), (grid,), (mass,), 0.01)
        prop.step(wf, 1000)
        expected = sigma0 * np.sqrt(1.0 + (t_final / (2 * mass * sigma0**2)) ** 2)
        assert abs(np.sqrt(wf.position_variance(0)) - expected) / expected < 1e-6

    def test_harmonic_ground_state_stationary(self):
        grid = GridSpec(-12.0, 12.0, 256)
        x = grid.points()
        wf = _wave_1d(grid, lambda x: np.exp(-x**2 / 2))
        psi0 = wf.psi.copy()
        prop = SplitOperatorPropagator(0.5 * x**2, (grid,), (1.0,), 0.01)
        prop.step(wf, 628)          # one period 2 pi
        overlap = abs(np.sum(np.conj(psi0) * wf.psi) * grid.spacing) ** 2
        assert overlap > 1.0 - 1e-8

    def test_unitarity_long_run(self):
        grid = GridSpec(-10.0, 10.0, 64)
        x = grid.points()
        wf = _wave_1d(grid, lambda x: np.exp(-(x - 1.0) ** 2))
        prop = SplitOperatorPropagator(0.5 * x**2, (grid,), (1.0,), 0.02)
        prop.step(wf, 10_000)
        assert abs(wf.norm_squared() - 1.0) < 1e-9

    @pytest.mark.filterwarnings("ignore:kinetic phase")
    def test_strang_second_order_in_dt(self):
        grid = GridSpec(-12.0, 12.0, 128)
        x = grid.points()
        v = 0.5 * x**2

        def run(dt):
            wf = _wave_1d(grid, lambda x: np.exp(-(x - 1.0) ** 2 / 2))
            SplitOperatorPropagator(v, (grid,), (1.0,), dt).step(wf, int(round(4.0 / dt)))
            return wf.psi

        ref = run(0.0025)
        err = [np.max(np.abs(run(dt) - ref)) for dt in (0.08, 0.04)]
        assert 3.0 < err[0] / err[1] < 5.5

    def test_energy_conserved(self):
        grid = GridSpec(-12.0, 12.0, 128)
        x = grid.points()
        wf = _wave_1d(grid, lambda x: np.exp(-(x - 1.5) ** 2 / 2))
        prop = SplitOperatorPropagator(0.5 * x**2, (grid,), (1.0,), 0.001)
        e0 = prop.total_energy(wf)
        prop.step(wf, 40_000)
        assert abs(prop.total_energy(wf) - e0) / e0 < 1e-7

    def test_aliasing_warning(self):
        grid = GridSpec(-10.0, 10.0, 256)
        with pytest.warns(UserWarning, match="aliases"):
            SplitOperatorPropagator(np.zeros(grid.n), (grid,), (1.0,), 1.0)

    def test_power_of_two_enforced(self):
        grid = GridSpec(-10.0, 10.0, 96)
        with pytest.raises(ValueError, match="power of two"):
            SplitOperatorPropagator(np.zeros(96), (grid,), (1.0,), 0.01)

    def test_wavefunction_moments(self):
        grid = GridSpec(-20.0, 20.0, 512)
        wf = _wave_1d(grid, lambda x: np.exp(-((x - 1.5) ** 2) / (4 * 0.8**2)))
        assert wf.mean_position(0) == pytest.approx(1.5, abs=1e-8)
        assert wf.position_variance(0) == pytest.approx(0.64, rel=1e-6)


class TestOscillatorBasis:
    def test_orthonormal_on_grid(self):
        grid = default_photon_grid(0.1, n=64)
        phi = oscillator_eigenfunctions(5, 0.1, grid.points())
        gram = phi @ phi.T * grid.spacing
        np.testing.assert_allclose(gram, np.eye(5), atol=1e-8)

    def test_q_matrix_elements_match_ladder_formula(self):
        omega = 0.17
        grid = default_photon_grid(omega, n=128)
        q = grid.points()
        phi = oscillator_eigenfunctions(4, omega, q)
        qmat = (phi * q) @ phi.T * grid.spacing
        np.testing.assert_allclose(qmat, fock_q_matrix(omega, 4), atol=1e-8)


def _small_system(lam=0.005, omega=0.1):
    sm = ShinMetiuParams(L=19.0, a_plus=3.1, a_minus=4.0, a_f=5.0,
                         r_grid=GridSpec(-20.0, 20.0, 128),
                         R_grid=GridSpec(-7.0, 7.0, 64))
    cav = CavityParams(omega=omega, lam=lam, n_fock=4)
    return sm, cav


@pytest.fixture(scope="module")
def pcet_basis():
    sm, cav = _small_system()
    return PolaritonicGridBasis(sm, cav, default_photon_grid(0.1, n=64),
                                n_bo=4, n_states=5)


class TestCavityGrid:
    def test_initial_state_projection(self, pcet_basis):
        wf = initialize_wavepacket(pcet_basis, -4.0, 1.0 / (2 * np.sqrt(2.85)), 1)
        pops = pcet_basis.project(wf)
        assert pops[1] == pytest.approx(1.0, abs=1e-6)
        assert np.sum(pops) == pytest.approx(1.0, abs=1e-6)

    def test_initial_moments(self, pcet_basis):
        sigma = 1.0 / (2 * np.sqrt(2.85))
        wf = initialize_wavepacket(pcet_basis, -4.0, sigma, 1)
        assert wf.mean_position(0) == pytest.approx(-4.0, abs=1e-6)
        assert wf.position_variance(0) == pytest.approx(sigma**2, rel=1e-6)

    def test_invalid_state_rejected(self, pcet_basis):
        with pytest.raises(ValueError, match="tracked"):
            initialize_wavepacket(pcet_basis, -4.0, 0.3, 7)

    def test_decoupled_limit_photon_occupancy(self):
        # off-resonant, lambda = 0: polaritonic states factorize exactly
        sm, cav = _small_system(lam=0.0, omega=0.05)
        basis = PolaritonicGridBasis(sm, cav, default_photon_grid(0.05, n=64),
                                     n_bo=4, n_states=4)
        wf = initialize_wavepacket(basis, -4.0, 0.5, 1)   # (BO 0, Fock 1)
        dr = sm.r_grid.spacing
        dq = basis.q_grid.spacing
        dR = sm.R_grid.spacing
        b = np.einsum("nq,Rrq->Rrn", basis.fock_wfs, wf.psi) * dq
        occ_w = np.sum(np.abs(b) ** 2, axis=(0, 1)) * dr * dR
        occupancy = np.sum(np.arange(cav.n_fock) * occ_w) / np.sum(occ_w)
        assert occupancy == pytest.approx(1.0, abs=1e-8)

    @pytest.mark.filterwarnings("ignore:kinetic phase")
    def test_short_propagation_unitary_and_conservative(self, pcet_basis):
        wf = initialize_wavepacket(pcet_basis, -4.0, 1.0 / (2 * np.sqrt(2.85)), 1)
        prop = cavity_propagator(pcet_basis, 0.1)
        e0 = prop.total_energy(wf)
        prop.step(wf, 200)
        assert abs(wf.norm_squared() - 1.0) < 1e-9
        assert abs(prop.total_energy(wf) - e0) / abs(e0) < 5e-7
        pops = pcet_basis.project(wf)
        assert np.sum(pops) == pytest.approx(1.0, abs=1e-3)

    @pytest.mark.filterwarnings("ignore:kinetic phase")
    def test_cavity_free_reduction_matches_2d(self):
        # lambda = 0, photon in its ground state: BO populations from the 3-D
        # run must match a plain 2-D (R, r) propagation
        sm, cav = _small_system(lam=0.0, omega=0.05)
        qg = default_photon_grid(0.05, n=64)
        basis = PolaritonicGridBasis(sm, cav, qg, n_bo=4, n_states=4)
        wf3 = initialize_wavepacket(basis, -4.0, 0.5, 0)   # (BO 0, Fock 0)
        prop3 = cavity_propagator(basis, 0.2)

        R = sm.R_grid.points()
        r = sm.r_grid.points()
        dr = sm.r_grid.spacing
        dR = sm.R_grid.spacing
        g = np.exp(-((R - -4.0) ** 2) / (4 * 0.5**2))
        chi = np.stack([shin_metiu_bo_solve(sm, Rj, 4)[1] for Rj in R])
        # lock BO signs node to node the same way the basis does
        for j in range(1, R.size):
            s = np.sign(np.sum(chi[j - 1] * chi[j], axis=1))
            chi[j] *= s[:, None]
        psi2 = (g[:, None] * chi[:, 0, :]).astype(complex)
        wf2 = GridWavefunction(psi2, (sm.R_grid, sm.r_grid), (sm.M, 1.0))
        wf2.normalize()
        from efmqc.models.shin_metiu import potential_3d
        v2 = potential_3d(sm, R[:, None], r[None, :])
        prop2 = SplitOperatorPropagator(v2, (sm.R_grid, sm.r_grid), (sm.M, 1.0), 0.2)

        def bo_pops_3d(w):
            b = np.einsum("Rir,Rrq->Riq", basis.bo_wfs, w.psi) * dr
            amp = np.sum(np.abs(b) ** 2, axis=2) * qg.spacing
            return np.sum(amp, axis=0) * dR

        def bo_pops_2d(w):
            a = np.einsum("Rir,Rr->Ri", chi, w.psi) * dr
            return np.sum(np.abs(a) ** 2, axis=0) * dR

        for _ in range(10):
            prop3.step(wf3, 10)
            prop2.step(wf2, 10)
            np.testing.assert_allclose(bo_pops_3d(wf3), bo_pops_2d(wf2), atol=1e-6)

    def test_unresolved_photon_grid_raises(self):
        sm, cav = _small_system()
        with pytest.raises(GridResolutionError, match="photon"):
            PolaritonicGridBasis(sm, cav, GridSpec(-1.0, 1.0, 64), n_bo=4,
                                 n_states=5)
