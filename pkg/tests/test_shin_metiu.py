import numpy as np
import pytest

from efmqc.models import GridSpec, ShinMetiuParams, shin_metiu_bo_solve
from efmqc.models.adiabatic import ModelDomainError
from efmqc.models.shin_metiu import softened_coulomb


def pcet_params(nr=256, nR=64):
    return ShinMetiuParams(L=19.0, a_plus=3.1, a_minus=4.0, a_f=5.0,
                           r_grid=GridSpec(-25, 25, nr), R_grid=GridSpec(-8, 8, nR))


def symmetric_params(nr=256, nR=64):
    return ShinMetiuParams(L=10.0, a_plus=1.5, a_minus=1.5, a_f=2.5,
                           r_grid=GridSpec(-16, 16, nr), R_grid=GridSpec(-4.2, 4.2, nR))


def test_pcet_energies_finite_ordered():
    e, _ = shin_metiu_bo_solve(pcet_params(), -4.0, 4)
    assert np.all(np.isfinite(e))
    assert np.all(np.diff(e) > 0)


def test_symmetric_model_parity_at_origin():
    params = symmetric_params(nr=512)
    e, wfs = shin_metiu_bo_solve(params, 0.0, 4)
    r = params.r_grid.points()
    dr = params.r_grid.spacing
    for i in range(4):
        mean_r = np.sum(wfs[i] ** 2 * r) * dr
        assert abs(mean_r) < 1e-8
        # each eigenfunction is even or odd about r = 0
        sym = np.sum(wfs[i] * wfs[i][::-1]) * dr
        assert abs(abs(sym) - 1.0) < 1e-8


@pytest.mark.parametrize("R", [-4.0, 0.0, 3.3])
def test_orthonormality(R):
    params = pcet_params(nr=512)
    _, wfs = shin_metiu_bo_solve(params, R, 5)
    dr = params.r_grid.spacing
    s = wfs @ wfs.T * dr
    assert np.max(np.abs(s - np.eye(5))) < 1e-10


def test_out_of_range_R_rejected():
    with pytest.raises(ModelDomainError):
        shin_metiu_bo_solve(pcet_params(), 12.0, 2)


def test_softened_coulomb_small_x_limit():
    a = 2.5
    assert softened_coulomb(0.0, a) == pytest.approx(2.0 / (a * np.sqrt(np.pi)))
    # continuous through zero
    assert softened_coulomb(1e-9, a) == pytest.approx(softened_coulomb(0.0, a), rel=1e-6)


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(1.0, -1.0, 128)
    with pytest.raises(ValueError):
        GridSpec(-1.0, 1.0, 32)
    with pytest.raises(ValueError):
        ShinMetiuParams(L=-1.0, a_plus=1.0, a_minus=1.0, a_f=1.0)
