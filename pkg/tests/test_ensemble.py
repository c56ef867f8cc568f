import json

import numpy as np
import pytest

from efmqc.constants import AU_PER_FS
from efmqc.ensemble import (
    CHUNK,
    ModelAdapter,
    RunConfig,
    apportion,
    init_electronic,
    inspect_model,
    rho_dot_decomposition,
    run,
    trajectory_streams,
    wigner_sample,
)
from efmqc.propagators import ConfigurationError, EnsembleState
from efmqc import cli


def _two_state_config(tmp_path, **overrides):
    mapping = {
        "model": "two_state", "method": "Eh", "n_traj": "50", "dt": "2.0",
        "n_steps": "100", "seed": "11", "out": str(tmp_path / "run.csv"),
        "R0": "-6", "sigma_R": "0.35", "initial_state": "0", "mass": "2000",
    }
    mapping.update({k: str(v) for k, v in overrides.items()})
    return RunConfig.from_mapping(mapping)


def _read_csv(path):
    header = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                cols = line.strip().split(",")
                break
            key, _, val = line[1:].partition("=")
            header[key.strip()] = val.strip()
    data = np.loadtxt(path, delimiter=",", skiprows=len(header) + 1)
    return header, cols, np.atleast_2d(data)


class TestConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown config key"):
            RunConfig.from_mapping({"model": "two_state", "bogus": "1"})

    def test_unknown_method_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown method"):
            RunConfig.from_mapping({"method": "FSSH"})

    def test_bad_populations_rejected(self):
        with pytest.raises(ConfigurationError, match="sum"):
            RunConfig.from_mapping({"model": "two_state",
                                    "initial_populations": "0.5,0.6"})

    def test_bad_enum_rejected(self):
        with pytest.raises(ConfigurationError, match="aux_launch"):
            RunConfig.from_mapping({"model": "two_state",
                                    "aux_launch": "random"})

    def test_file_roundtrip(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("model = two_state\n# comment\nn_traj = 7\n\n"
                        "dt = 0.5   # trailing comment\n")
        cfg = RunConfig.from_file(path)
        assert cfg.model == "two_state"
        assert cfg.n_traj == 7
        assert cfg.dt == 0.5

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("model two_state\n")
        with pytest.raises(ConfigurationError, match="key = value"):
            RunConfig.from_file(path)


class TestWignerSampling:
    def test_statistics(self):
        n = 100_000
        sigma = 0.4
        pos, vel = wigner_sample([-2.0], [sigma], [1.0], n, seed=5)
        assert abs(np.mean(pos) + 2.0) < 4 * sigma / np.sqrt(n)
        assert abs(np.var(pos) / sigma**2 - 1.0) < 0.05
        # minimum uncertainty: sigma_P = 1 / (2 sigma_R), mass 1 => velocity
        assert abs(np.std(vel) * 2 * sigma - 1.0) < 0.05

    def test_deterministic(self):
        a = wigner_sample([0.0], [0.5], [1836.0], 64, seed=9)
        b = wigner_sample([0.0], [0.5], [1836.0], 64, seed=9)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_subset_matches_full(self):
        full_pos, full_vel = wigner_sample([1.0], [0.3], [2.0], 300, seed=1)
        streams = trajectory_streams(1, 300)[100:200]
        from efmqc.ensemble import _sample_with_streams
        pos, vel = _sample_with_streams([1.0], [0.3], [2.0], streams)
        assert np.array_equal(pos, full_pos[100:200])
        assert np.array_equal(vel, full_vel[100:200])

    def test_bad_sigma_rejected(self):
        with pytest.raises(ConfigurationError, match="sigma_R"):
            wigner_sample([0.0], [0.0], [1.0], 4, seed=0)


class TestInitElectronic:
    def test_largest_remainder_exact(self):
        counts = apportion([0.94, 0.05, 0.01], 1000)
        assert counts.tolist() == [940, 50, 10]

    def test_pure_real_coefficients(self, tmp_path):
        cfg = _two_state_config(tmp_path, initial_populations="0.75,0.25")
        streams = trajectory_streams(0, 20)
        coeffs, active = init_electronic(cfg, 2, streams)
        np.testing.assert_allclose(coeffs.real,
                                   np.tile(np.sqrt([0.75, 0.25]), (20, 1)))
        assert np.all(coeffs.imag == 0.0)
        # active states sampled proportionally: both appear for 20 draws
        assert set(np.unique(active)) <= {0, 1}

    def test_mixed_statistical_assignment(self, tmp_path):
        cfg = _two_state_config(tmp_path, init_electronic="mixed_statistical",
                                n_traj=8, initial_populations="0.5,0.5")
        streams = trajectory_streams(0, 8)
        coeffs, active = init_electronic(cfg, 2, streams)
        assert np.bincount(active, minlength=2).tolist() == [4, 4]
        rows = np.arange(8)
        np.testing.assert_array_equal(np.abs(coeffs[rows, active]), 1.0)
        assert np.count_nonzero(coeffs) == 8

    def test_single_state_modes_coincide(self, tmp_path):
        cfg_p = _two_state_config(tmp_path, initial_state=1)
        cfg_m = _two_state_config(tmp_path, initial_state=1,
                                  init_electronic="mixed_statistical")
        cp, ap = init_electronic(cfg_p, 2, trajectory_streams(0, 10))
        cm, am = init_electronic(cfg_m, 2, trajectory_streams(0, 10))
        np.testing.assert_array_equal(cp, cm)
        np.testing.assert_array_equal(ap, am)

    def test_phase_offsets_applied(self, tmp_path):
        cfg = _two_state_config(tmp_path, initial_populations="0.5,0.5",
                                phase_offsets="0,1.5707963267948966")
        coeffs, _ = init_electronic(cfg, 2, trajectory_streams(0, 3))
        np.testing.assert_allclose(coeffs[0, 1],
                                   1j * np.sqrt(0.5), atol=1e-12)


class TestRhoDotDecomposition:
    def _state(self, xf):
        rng = np.random.default_rng(4)
        c = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
        c /= np.linalg.norm(c, axis=1, keepdims=True)
        vd = rng.standard_normal((6, 3, 3))
        vd = vd - np.swapaxes(vd, 1, 2)
        state = EnsembleState(
            positions=np.zeros((6, 1)), velocities=np.zeros((6, 1)),
            masses=np.ones(1), coeffs=c, active=np.zeros(6, dtype=int),
            rngs=[])
        state.energies = rng.standard_normal((6, 3))
        state.vdot = vd
        if xf:
            r = rng.standard_normal((6, 3, 3))
            state.xf_rate = r - np.swapaxes(r, 1, 2)
        else:
            state.xf_rate = np.zeros((6, 3, 3))
        return state

    def test_xf_off_total_equals_eh(self):
        total, eh = rho_dot_decomposition(self._state(xf=False))
        np.testing.assert_allclose(total, eh, atol=1e-12)

    def test_total_sums_to_zero(self):
        total, _ = rho_dot_decomposition(self._state(xf=True))
        np.testing.assert_allclose(np.sum(total, axis=1), 0.0, atol=1e-10)

    def test_xf_on_differs_from_eh(self):
        total, eh = rho_dot_decomposition(self._state(xf=True))
        assert np.max(np.abs(total - eh)) > 1e-6


class TestRun:
    def test_zero_nac_populations_constant(self, tmp_path):
        cfg = _two_state_config(tmp_path, zero_nac="true",
                                initial_populations="0.6,0.4")
        csv_path, _, _ = run(cfg)
        _, cols, data = _read_csv(csv_path)
        p0 = data[0, cols.index("pop_el_0")]
        p1 = data[0, cols.index("pop_el_1")]
        assert abs(p0 - 0.6) < 1e-12 and abs(p1 - 0.4) < 1e-12
        assert np.max(np.abs(data[:, cols.index("pop_el_0")] - p0)) < 1e-10
        assert np.max(np.abs(data[:, cols.index("pop_el_1")] - p1)) < 1e-10

    def test_workers_bitwise_identical(self, tmp_path):
        n = 3 * CHUNK + 17        # forces several chunks and uneven split
        c1 = _two_state_config(tmp_path, method="SH", n_traj=n, n_steps=60,
                               out=tmp_path / "w1.csv")
        c4 = _two_state_config(tmp_path, method="SH", n_traj=n, n_steps=60,
                               out=tmp_path / "w4.csv", workers=4)
        p1, _, _ = run(c1)
        p4, _, _ = run(c4)
        assert p1.read_text().splitlines()[4:] == \
            p4.read_text().splitlines()[4:]

    def test_population_bookkeeping(self, tmp_path):
        cfg = _two_state_config(tmp_path, method="SH", n_steps=80)
        csv_path, _, inv = run(cfg)
        _, cols, data = _read_csv(csv_path)
        el = data[:, [cols.index("pop_el_0"), cols.index("pop_el_1")]]
        frac = data[:, [cols.index("pop_frac_0"), cols.index("pop_frac_1")]]
        np.testing.assert_allclose(np.sum(el, axis=1), 1.0, atol=1e-6)
        np.testing.assert_allclose(np.sum(frac, axis=1), 1.0, atol=1e-12)
        assert np.all(frac >= 0.0) and np.all(frac <= 1.0)
        assert inv["max_norm_error"] < 1e-6

    def test_csv_header_and_manifest(self, tmp_path):
        cfg = _two_state_config(tmp_path, n_steps=20)
        csv_path, manifest_path, _ = run(cfg)
        header, cols, data = _read_csv(csv_path)
        assert float(header["au_per_fs"]) == AU_PER_FS
        assert header["method"] == "Eh"
        assert cols[0] == "time_fs"
        assert "n_quarantined" in cols
        assert data.shape[0] == 3      # rows at steps 0, 10, 20
        assert data[1, 0] == pytest.approx(10 * 2.0 / AU_PER_FS)
        manifest = json.loads(manifest_path.read_text())
        assert manifest["config"]["model"] == "two_state"
        assert manifest["config"]["seed"] == 11
        assert "efmqc" in manifest["version"]
        assert manifest["invariants"]["failed"] is False

    def test_mean_field_pop_frac_copies_pop_el(self, tmp_path):
        cfg = _two_state_config(tmp_path, n_steps=40)
        csv_path, _, _ = run(cfg)
        _, cols, data = _read_csv(csv_path)
        for l in range(2):
            np.testing.assert_array_equal(
                data[:, cols.index(f"pop_el_{l}")],
                data[:, cols.index(f"pop_frac_{l}")])

    def test_quarantine_and_failure_marking(self, tmp_path, monkeypatch):
        cfg = _two_state_config(tmp_path, n_traj=30, n_steps=30)

        orig = ModelAdapter.__call__

        def poisoned(self, positions):
            e, g, d = orig(self, positions)
            # poison one row once the run is underway
            if positions.shape[0] == 30 and np.any(positions[3] < -5.9):
                e = e.copy()
                e[3] = np.nan
                self.quarantine_rows = self.quarantine_rows.copy()
                self.quarantine_rows[3] = True
            return np.where(np.isfinite(e), e, 0.0), g, d

        monkeypatch.setattr(ModelAdapter, "__call__", poisoned)
        csv_path, manifest_path, inv = run(cfg)
        assert inv["n_quarantined"] == 1
        assert inv["failed"] is True          # 1/30 > 1%
        assert inv["quarantined"][0][0] == 3
        _, cols, data = _read_csv(csv_path)
        assert data[-1, cols.index("n_quarantined")] == 1
        np.testing.assert_allclose(
            data[-1, [cols.index("pop_el_0"), cols.index("pop_el_1")]].sum(),
            1.0, atol=1e-6)

    def test_sh_ensemble_energy_conserved(self, tmp_path):
        cfg = _two_state_config(tmp_path, method="SH", dt=1.0, n_steps=200)
        _, _, inv = run(cfg)
        assert inv["ensemble_energy_drift_rel"] < 1e-6


class TestInspectModel:
    def test_two_state_surfaces(self, tmp_path):
        cfg = _two_state_config(tmp_path)
        text = inspect_model(cfg, n_points=201)
        lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
        assert lines[0] == "R,energy_0,energy_1,nac_0_1"
        body = np.loadtxt(lines[1:], delimiter=",")
        assert body.shape == (201, 4)
        # avoided crossing: NAC peaks at R = 0, gap is smallest there
        mid = np.argmin(np.abs(body[:, 0]))
        assert np.argmax(np.abs(body[:, 3])) == mid
        gap = body[:, 2] - body[:, 1]
        assert np.argmin(gap) == mid


class TestCLI:
    def _write_config(self, tmp_path, **overrides):
        cfg = {"model": "two_state", "method": "Eh", "n_traj": 10,
               "dt": 2.0, "n_steps": 20, "seed": 1,
               "out": str(tmp_path / "cli.csv"), "R0": -6, "sigma_R": 0.35,
               "initial_state": 0}
        cfg.update(overrides)
        path = tmp_path / "config.txt"
        path.write_text("".join(f"{k} = {v}\n" for k, v in cfg.items()))
        return path

    def test_run_subcommand(self, tmp_path, capsys):
        path = self._write_config(tmp_path)
        assert cli.main(["run", str(path)]) == 0
        assert (tmp_path / "cli.csv").exists()
        assert (tmp_path / "cli.manifest.json").exists()
        assert "wrote" in capsys.readouterr().out

    def test_run_overrides(self, tmp_path):
        path = self._write_config(tmp_path)
        out = tmp_path / "other.csv"
        assert cli.main(["run", str(path), "--seed", "99",
                         "--out", str(out), "--workers", "2"]) == 0
        manifest = json.loads((tmp_path / "other.manifest.json").read_text())
        assert manifest["config"]["seed"] == 99
        assert manifest["config"]["workers"] == 2

    def test_seed_override_changes_output(self, tmp_path):
        path = self._write_config(tmp_path, method="SH", n_traj=40)
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        cli.main(["run", str(path), "--seed", "1", "--out", str(a)])
        cli.main(["run", str(path), "--seed", "2", "--out", str(b)])
        assert a.read_text() != b.read_text()

    def test_inspect_model_subcommand(self, tmp_path, capsys):
        path = self._write_config(tmp_path)
        assert cli.main(["inspect-model", str(path)]) == 0
        out = capsys.readouterr().out
        assert out.startswith("# au_per_fs")
        assert "R,energy_0,energy_1" in out

    def test_bad_config_exit_code(self, tmp_path, capsys):
        path = tmp_path / "bad.txt"
        path.write_text("model = two_state\nnonsense_key = 3\n")
        assert cli.main(["run", str(path)]) == 2
        assert "unknown config key" in capsys.readouterr().err

    def test_missing_file_exit_code(self, tmp_path, capsys):
        assert cli.main(["run", str(tmp_path / "absent.txt")]) == 2
        assert "error" in capsys.readouterr().err
