import os
import subprocess
import sys

import numpy as np
import pytest

from hdiv import _kernels


def _problem(seed, d=40):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((2 * d, d))
    Q = np.ascontiguousarray(A.T @ A / (2 * d))
    c = rng.standard_normal(d)
    lam_w = np.full(d, 0.05)
    free = np.ascontiguousarray(np.diagonal(Q) > 0)
    return Q, c, lam_w, free


def _run(kernel, Q, c, lam_w, free, beta0=None):
    beta = np.zeros(Q.shape[0]) if beta0 is None else beta0.copy()
    g = Q @ beta - c if np.any(beta != 0) else -c.copy()
    sweeps, kkt, converged = kernel(Q, c, lam_w, beta, g, free, 1e-10, 5000)
    return beta, g, sweeps, kkt, converged


def test_backends_agree_bitwise_from_zero_start():
    numba = pytest.importorskip("numba")
    jitted = numba.njit(cache=True, nogil=True)(_kernels._cd_plain)
    for seed in range(3):
        Q, c, lam_w, free = _problem(seed)
        b_np, g_np, s_np, k_np, conv_np = _run(_kernels._cd_numpy, Q, c, lam_w, free)
        b_nb, g_nb, s_nb, k_nb, conv_nb = _run(jitted, Q, c, lam_w, free)
        assert conv_np and conv_nb
        assert s_np == s_nb
        np.testing.assert_array_equal(b_np, b_nb)
        np.testing.assert_array_equal(g_np, g_nb)
        assert k_np == k_nb


def test_backends_agree_with_warm_start():
    numba = pytest.importorskip("numba")
    jitted = numba.njit(cache=True, nogil=True)(_kernels._cd_plain)
    rng = np.random.default_rng(99)
    Q, c, lam_w, free = _problem(4)
    beta0 = rng.standard_normal(Q.shape[0])
    b_np, _, _, _, _ = _run(_kernels._cd_numpy, Q, c, lam_w, free, beta0)
    b_nb, _, _, _, _ = _run(jitted, Q, c, lam_w, free, beta0)
    np.testing.assert_allclose(b_np, b_nb, rtol=0, atol=1e-12)


@pytest.mark.parametrize("flag,expected", [("numpy", "numpy"), ("numba", "numba")])
def test_env_flag_selects_backend(flag, expected):
    env = dict(os.environ, HDIV_BACKEND=flag)
    out = subprocess.run(
        [sys.executable, "-c", "from hdiv import _kernels; print(_kernels.active_backend())"],
        capture_output=True,
        text=True,
        env=env,
        check=True,
    )
    assert out.stdout.strip() == expected


def test_bad_env_flag_rejected():
    env = dict(os.environ, HDIV_BACKEND="fortran")
    out = subprocess.run(
        [sys.executable, "-c", "import hdiv._kernels"],
        capture_output=True,
        text=True,
        env=env,
    )
    assert out.returncode != 0
    assert "HDIV_BACKEND" in out.stderr


def test_active_backend_defaults_to_numba_when_available():
    pytest.importorskip("numba")
    if os.environ.get("HDIV_BACKEND", "auto") in ("auto", "", "numba"):
        assert _kernels.active_backend() == "numba"
