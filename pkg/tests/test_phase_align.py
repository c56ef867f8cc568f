import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from efmqc.models import phase_align
from efmqc.models.two_state import TwoStateModel


def test_sign_flip_recovered():
    v = np.linalg.qr(np.random.default_rng(0).normal(size=(4, 4)))[0]
    aligned, perm = phase_align(v, -v)
    np.testing.assert_allclose(aligned, v, atol=1e-14)
    np.testing.assert_array_equal(perm, np.arange(4))


def test_permutation_detected():
    v = np.linalg.qr(np.random.default_rng(1).normal(size=(5, 5)))[0]
    swapped = v.copy()
    swapped[:, [2, 3]] = swapped[:, [3, 2]]
    aligned, perm = phase_align(v, swapped)
    np.testing.assert_allclose(aligned, v, atol=1e-14)
    assert perm[2] == 3 and perm[3] == 2


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        phase_align(np.eye(3), np.eye(4))


def test_ambiguous_overlap_warns():
    th = np.deg2rad(80.0)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    with pytest.warns(UserWarning, match="ambiguous"):
        phase_align(np.eye(2), rot, allow_permutation=False)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_near_identity_rotations_align_positive(seed):
    # random orthogonal pairs with diagonal overlaps > 0.9 in magnitude
    rng = np.random.default_rng(seed)
    base = np.linalg.qr(rng.normal(size=(5, 5)))[0]
    gen = rng.normal(scale=0.02, size=(5, 5))
    gen = gen - gen.T
    rot = base @ _expm_skew(gen)
    rot *= rng.choice([-1.0, 1.0], size=5)[None, :]
    aligned, _ = phase_align(base, rot)
    diag = np.einsum("il,il->l", base, aligned)
    assert np.all(diag >= 0.0)
    assert np.all(diag > 0.9)


def _expm_skew(a):
    w, v = np.linalg.eigh(1j * a)
    return np.real(v @ np.diag(np.exp(-1j * w)) @ v.conj().T)


def test_two_state_model_gradients_and_nac():
    m = TwoStateModel.single_avoided_crossing()
    x = np.linspace(-3, 3, 41)[:, None]
    e, g, nac = m.adiabatic_batch(x)
    h = 1e-6
    ep, _, _ = m.adiabatic_batch(x + h)
    em, _, _ = m.adiabatic_batch(x - h)
    np.testing.assert_allclose(g[:, :, 0], (ep - em) / (2 * h), atol=1e-7)
    assert np.max(np.abs(nac + np.swapaxes(nac, 1, 2))) == 0.0
    # coupling peaks at the crossing point x = 0
    assert abs(x[np.argmax(np.abs(nac[:, 0, 1, 0])), 0]) < 0.2
