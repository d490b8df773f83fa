"""numba kernels vs their numpy fallbacks, and the env-flag dispatch."""

import numpy as np
import pytest

from thermem import _kernels as K


@pytest.fixture
def system():
    rng = np.random.default_rng(0)
    n, n_y, n_P, N = 12, 3, 2, 200
    A = rng.normal(size=(n, n))
    A *= 0.9 / np.max(np.abs(np.linalg.eigvals(A)))
    B = rng.normal(size=(n, n_P))
    C = np.eye(n)[:n_y]
    Kgain = rng.normal(size=(n, n_y)) * 0.1
    J = rng.normal(size=(n, n)) * 0.05
    x1 = rng.normal(size=n)
    P = rng.uniform(0, 1, (N - 1, n_P))
    Y = rng.normal(size=(N, n_y))
    W = rng.normal(size=(N - 1, n)) * 1e-3
    return A, B, C, Kgain, J, x1, P, Y, W


@pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba unavailable")
def test_rollout_paths_agree(system):
    A, B, C, Kg, J, x1, P, Y, W = system
    BP = K._input_drive(B, P)
    BPW = K._input_drive(B, P, W)
    np.testing.assert_allclose(K._rollout_nb(A, BP, x1), K._rollout_np(A, BP, x1), atol=1e-12)
    np.testing.assert_allclose(K._rollout_nb(A, BPW, x1), K._rollout_np(A, BPW, x1), atol=1e-12)


@pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba unavailable")
def test_filter_paths_agree(system):
    A, B, C, Kg, J, x1, P, Y, W = system
    BP = K._input_drive(B, P)
    xf_nb, in_nb = K._filter_steady_nb(A, BP, C, Kg, x1, Y)
    xf_np, in_np = K._filter_steady_np(A, BP, C, Kg, x1, Y)
    np.testing.assert_allclose(xf_nb, xf_np, atol=1e-12)
    np.testing.assert_allclose(in_nb, in_np, atol=1e-12)


@pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba unavailable")
def test_smoother_paths_agree(system):
    A, B, C, Kg, J, x1, P, Y, W = system
    BP = K._input_drive(B, P)
    xf, _ = K._filter_steady_np(A, BP, C, Kg, x1, Y)
    np.testing.assert_allclose(
        K._smooth_steady_nb(A, BP, J, xf), K._smooth_steady_np(A, BP, J, xf), atol=1e-12
    )


def test_env_flag_selects_fallback(monkeypatch, system):
    A, B, C, Kg, J, x1, P, Y, W = system
    monkeypatch.setenv(K.NUMBA_ENV_FLAG, "1")
    assert not K.numba_enabled()
    out_off = K.rollout(A, B, x1, P)
    monkeypatch.delenv(K.NUMBA_ENV_FLAG)
    out_on = K.rollout(A, B, x1, P)
    np.testing.assert_allclose(out_off, out_on, atol=1e-12)


def test_wrappers_accept_noncontiguous_inputs(system):
    A, B, C, Kg, J, x1, P, Y, W = system
    A_f = np.asfortranarray(A)
    out = K.rollout(A_f, B, x1, P)
    ref = K.rollout(A, B, x1, P)
    np.testing.assert_array_equal(out, ref)
